import numpy as np
import pytest

from seqnas.autograd import reset_tape, set_default_dtype


@pytest.fixture(autouse=True)
def clean_engine_state():
    set_default_dtype(np.float32)
    reset_tape()
    yield
    set_default_dtype(np.float32)
    reset_tape()
