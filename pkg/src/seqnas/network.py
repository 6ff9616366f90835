"""Searchable supernet and discrete networks instantiated from genotypes.

The supernet stacks cells per the configured layout (default: Normal and
Reduction alternating three times) behind a small convolutional stem and in
front of a global-average-pool + linear head.  Each cell owns its own
architecture matrix when independent_alpha is on; otherwise all Normal
cells share one matrix and all Reduction cells another (the classic
weight-shared baseline).  Cell-input gates, when enabled, scale the two
inputs of every cell by gate_scale * softmax(beta).
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import functional as F
from .autograd import Tensor, default_dtype, parameter
from .cell import DiscreteCell, SearchCell, derive_genotype
from .module import Module
from .ops import ChannelNorm, OP_VOCAB

NODE_MULTIPLIER = 4  # cell output concatenates 4 intermediate nodes

DEFAULT_LAYOUT = ("normal", "reduction", "normal", "reduction", "normal", "reduction")


class NetworkError(ValueError):
    """Structural problems: bad layout, temporal underflow, vocab mismatch."""


@dataclass
class SupernetConfig:
    num_cells: int = 6
    layout: tuple = DEFAULT_LAYOUT
    init_channels: int = 8
    num_classes: int = 10
    input_channels: int = 2
    independent_alpha: bool = True
    use_gates: bool = True
    gate_scale: float = 2.0
    gate_threshold: float = 0.2

    def __post_init__(self):
        self.layout = tuple(self.layout)
        if len(self.layout) != self.num_cells:
            raise NetworkError(
                f"layout has {len(self.layout)} entries for {self.num_cells} cells"
            )
        if self.init_channels <= 0:
            raise NetworkError("init_channels must be positive")
        for kind in self.layout:
            if kind not in ("normal", "reduction"):
                raise NetworkError(f"bad cell kind {kind!r} in layout")

    def to_dict(self):
        d = asdict(self)
        d["layout"] = list(self.layout)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def gate_coefficients(beta, gate_scale=2.0):
    """(g0, g1) = gate_scale * softmax(beta); they sum to gate_scale."""
    b = np.asarray(beta.data if hasattr(beta, "data") else beta, dtype=np.float64)
    z = b - b.max()
    e = np.exp(z)
    sm = e / e.sum()
    return float(gate_scale * sm[0]), float(gate_scale * sm[1])


def _check_temporal(layout, t_in):
    """Walk the layout; return per-cell input lengths, or name the cell that underflows."""
    t = t_in
    lengths = []
    for i, kind in enumerate(layout):
        lengths.append(t)
        if kind == "reduction":
            if t < 2:
                raise NetworkError(
                    f"temporal length {t} underflows at reduction cell {i}; "
                    f"input is too short for this layout"
                )
            t = -(-t // 2)
    return lengths, t


class _Backbone(Module):
    """Shared stem/cell/head scaffolding for search and discrete networks."""

    def __init__(self, config, rng, dtype, track_running):
        super().__init__()
        self.config = config
        self.dtype = dtype
        c = config.init_channels
        self.stem_w = self.register(parameter(
            (rng.standard_normal((c, config.input_channels, 3))
             * math.sqrt(2.0 / (config.input_channels * 3))).astype(dtype),
            "stem.w"))
        self.stem_norm = self.add_child(ChannelNorm(c, dtype, track_running, "stem.norm"))

    def _stem(self, x):
        return self.stem_norm.forward(F.conv1d(x, self.stem_w, stride=1))

    def _make_head(self, c_final, rng, dtype):
        k = self.config.num_classes
        self.head_w = self.register(parameter(
            (rng.standard_normal((k, c_final)) / math.sqrt(c_final)).astype(dtype),
            "head.w"))
        self.head_b = self.register(parameter(np.zeros(k, dtype=dtype), "head.b"))

    def _head(self, pooled):
        return F.linear(pooled, self.head_w, self.head_b)

    def state_arrays(self):
        """All learnable tensors plus normalization buffers, by unique name."""
        out = {}
        for p in self.parameters():
            if p.name is None or p.name in out:
                raise NetworkError(f"parameter name missing or duplicated: {p.name!r}")
            out[p.name] = p.data
        for m in self.walk():
            if isinstance(m, ChannelNorm):
                out[f"{m.tag}.running_mean"] = m.running_mean
                out[f"{m.tag}.running_var"] = m.running_var
        return out

    def load_state_arrays(self, arrays):
        state = self.state_arrays()
        missing = set(state) - set(arrays)
        extra = set(arrays) - set(state)
        if missing or extra:
            raise NetworkError(
                f"checkpoint/network mismatch: missing={sorted(missing)[:4]} "
                f"extra={sorted(extra)[:4]}"
            )
        for name, dst in state.items():
            src = np.asarray(arrays[name])
            if src.shape != dst.shape:
                raise NetworkError(
                    f"checkpoint tensor {name}: shape {src.shape} vs {dst.shape}"
                )
            dst[...] = src.astype(dst.dtype)


class Supernet(_Backbone):
    def __init__(self, config: SupernetConfig, seed=0):
        rng = np.random.default_rng(seed)
        dtype = default_dtype()
        super().__init__(config, rng, dtype, track_running=False)

        c_pp = c_p = config.init_channels
        c_curr = config.init_channels
        reduction_prev = False
        self.cells = []
        for i, kind in enumerate(config.layout):
            reduction = kind == "reduction"
            if reduction:
                c_curr *= 2
            cell = SearchCell(c_pp, c_p, c_curr, reduction, reduction_prev,
                              rng, dtype, tag=f"cell{i}")
            self.cells.append(self.add_child(cell))
            c_pp, c_p = c_p, NODE_MULTIPLIER * c_curr
            reduction_prev = reduction
        self.feature_dim = c_p
        self._make_head(c_p, rng, dtype)

        # architecture parameters live outside the module tree: the weight
        # optimizer must never see them
        n_ops = len(OP_VOCAB)
        from .cell import NUM_EDGES

        def fresh_alpha(name):
            return parameter(
                (rng.standard_normal((NUM_EDGES, n_ops)) * 1e-3).astype(dtype), name)

        if config.independent_alpha:
            self._alphas = [fresh_alpha(f"alpha.cell{i}") for i in range(config.num_cells)]
            self.cell_alpha = list(self._alphas)
        else:
            shared = {}
            self.cell_alpha = []
            for kind in config.layout:
                if kind not in shared:
                    shared[kind] = fresh_alpha(f"alpha.{kind}")
                self.cell_alpha.append(shared[kind])
            self._alphas = [shared[k] for k in sorted(shared)]

        if config.use_gates:
            self._betas = [parameter(np.zeros(2, dtype=dtype), f"beta.cell{i}")
                           for i in range(config.num_cells)]
        else:
            self._betas = []
        self.last_gates = []

    def arch_parameters(self):
        return list(self._alphas)

    def gate_parameters(self):
        return list(self._betas)

    def weight_parameters(self):
        return self.parameters()

    def forward(self, x, mode="search", genotype=None):
        logits, _ = self.forward_with_embedding(x, mode=mode, genotype=genotype)
        return logits

    def forward_with_embedding(self, x, mode="search", genotype=None):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[1] != self.config.input_channels:
            raise NetworkError(
                f"input must be (B, {self.config.input_channels}, T), got {x.shape}"
            )
        _check_temporal(self.config.layout, x.shape[2])
        s0 = s1 = self._stem(x)
        self.last_gates = []
        for i, cell in enumerate(self.cells):
            g0t = g1t = None
            if self.config.use_gates:
                gvec = F.scale(F.softmax(self._betas[i], axis=-1), self.config.gate_scale)
                g0t, g1t = F.take(gvec, 0), F.take(gvec, 1)
                self.last_gates.append((float(g0t.data), float(g1t.data)))
                cin0, cin1 = F.mul(s0, g0t), F.mul(s1, g1t)
            else:
                cin0, cin1 = s0, s1
            entry = genotype.cells[i] if genotype is not None else None
            out = cell.forward(cin0, cin1, self.cell_alpha[i], mode=mode,
                               genotype_cell=entry)
            s0, s1 = s1, out
        pooled = F.global_avg_pool(s1)
        return self._head(pooled), pooled

    def derive(self, threshold=None, meta=None):
        """Discrete genotype from the current per-cell alpha and beta."""
        gates = self._betas if self.config.use_gates else None
        return derive_genotype(
            self.cell_alpha,
            gates,
            self.config.gate_threshold if threshold is None else threshold,
            list(self.config.layout),
            gate_scale=self.config.gate_scale,
            meta=meta,
        )

    def state_arrays(self):
        out = super().state_arrays()
        for t in self._alphas + self._betas:
            out[t.name] = t.data
        return out


class DiscreteNetwork(_Backbone):
    """Network with only the retained ops of a genotype; fresh weights."""

    def __init__(self, genotype, config: SupernetConfig, seed=0):
        genotype.validate()
        if tuple(genotype.vocab) != OP_VOCAB:
            raise NetworkError(
                "genotype/vocabulary mismatch: file carries a different op order"
            )
        if len(genotype.cells) != config.num_cells:
            raise NetworkError(
                f"genotype has {len(genotype.cells)} cells, config expects {config.num_cells}"
            )
        kinds = tuple(c.kind for c in genotype.cells)
        if kinds != tuple(config.layout):
            raise NetworkError("genotype cell kinds disagree with configured layout")
        rng = np.random.default_rng(seed)
        dtype = default_dtype()
        super().__init__(config, rng, dtype, track_running=True)
        self.genotype = genotype

        c_pp = c_p = config.init_channels
        c_curr = config.init_channels
        reduction_prev = False
        self.cells = []
        for i, entry in enumerate(genotype.cells):
            if entry.kind == "reduction":
                c_curr *= 2
            cell = DiscreteCell(entry, c_pp, c_p, c_curr, reduction_prev,
                                rng, dtype, track_running=True, tag=f"cell{i}")
            self.cells.append(self.add_child(cell))
            c_pp, c_p = c_p, NODE_MULTIPLIER * c_curr
            reduction_prev = entry.kind == "reduction"
        self.feature_dim = c_p
        self._make_head(c_p, rng, dtype)

    def forward(self, x, edge_regularizer=None):
        logits, _ = self.forward_with_embedding(x, edge_regularizer)
        return logits

    def forward_with_embedding(self, x, edge_regularizer=None):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[1] != self.config.input_channels:
            raise NetworkError(
                f"input must be (B, {self.config.input_channels}, T), got {x.shape}"
            )
        _check_temporal(self.config.layout, x.shape[2])
        s0 = s1 = self._stem(x)
        for cell, entry in zip(self.cells, self.genotype.cells):
            cin0 = F.zeros(s0.shape, dtype=s0.dtype) if entry.pruned[0] else s0
            cin1 = F.zeros(s1.shape, dtype=s1.dtype) if entry.pruned[1] else s1
            out = cell.forward(cin0, cin1, edge_regularizer=edge_regularizer)
            s0, s1 = s1, out
        pooled = F.global_avg_pool(s1)
        return self._head(pooled), pooled


def instantiate_discrete(genotype, config, seed=0):
    """Build a trainable network from a derived genotype (fresh init)."""
    return DiscreteNetwork(genotype, config, seed=seed)
