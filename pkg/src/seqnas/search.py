"""The end-to-end search loop: epochs of alternating updates, derivation.

Every epoch pairs one validation batch with one training batch per step,
cycling the shorter loader.  Batch order is derived from (seed, epoch), so
resuming from an epoch checkpoint reproduces the uninterrupted run
exactly.  A checkpoint is written per epoch (last + best by mean epoch
validation loss); the genotype is derived from the final alpha and beta.
"""

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as D
from .network import Supernet, SupernetConfig, DEFAULT_LAYOUT
from .optim import (NumericsError, OptimizerConfig, cosine_lr,
                    make_triple_state, triple_step)
from .serialize import CheckpointError, load_checkpoint, save_checkpoint

TIERS = ("darts", "alpha", "relax")


@dataclass
class SearchRunConfig:
    epochs: int = 50
    train_batch: int = 32
    val_batch: int = 32
    seed: int = 0
    tier: str = "relax"
    split_ratio: float = 0.5
    num_cells: int = 6
    layout: tuple = DEFAULT_LAYOUT
    init_channels: int = 8
    gate_scale: float = 2.0
    gate_threshold: float = 0.2
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        self.layout = tuple(self.layout)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.tier not in TIERS:
            raise ValueError(f"tier must be one of {TIERS}, got {self.tier!r}")
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)

    def supernet_config(self, num_classes, input_channels):
        return SupernetConfig(
            num_cells=self.num_cells,
            layout=self.layout,
            init_channels=self.init_channels,
            num_classes=num_classes,
            input_channels=input_channels,
            independent_alpha=self.tier in ("alpha", "relax"),
            use_gates=self.tier == "relax",
            gate_scale=self.gate_scale,
            gate_threshold=self.gate_threshold,
        )

    def to_dict(self):
        d = asdict(self)
        d["layout"] = list(self.layout)
        d["optimizer"] = self.optimizer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("optimizer"), dict):
            d["optimizer"] = OptimizerConfig(**d["optimizer"])
        d["layout"] = tuple(d.get("layout", DEFAULT_LAYOUT))
        return cls(**d)

    def config_hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _epoch_order(seed, epoch, n, stream):
    rng = np.random.default_rng([int(seed), int(epoch), int(stream)])
    return rng.permutation(n)


class RunLog:
    """Appendable per-step CSV log with a monotone step counter."""

    COLUMNS = ("step", "epoch", "train_loss", "val_loss", "lr")

    def __init__(self, path=None):
        self.path = path
        self.rows = []
        if path and not os.path.exists(path):
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.COLUMNS)

    def append(self, step, epoch, train_loss, val_loss, lr):
        row = (step, epoch, train_loss, val_loss, lr)
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow(row)


def _write_checkpoint(path, config, net, state, best_val, split_hash):
    arrays = {f"net:{k}": v for k, v in net.state_arrays().items()}
    arrays.update({f"opt:{k}": v for k, v in state.state_arrays().items()})
    save_checkpoint(
        path, "search", config.to_dict(), state.counters(), arrays,
        extra={"best_val": best_val, "split_hash": split_hash},
    )


def _derive(net, config):
    return net.derive(meta={
        "seed": config.seed,
        "tier": config.tier,
        "config_hash": config.config_hash(),
    })


def run_search(config: SearchRunConfig, dataset, out_dir=None, resume_from=None,
               step_callback=None):
    """Run (or resume) a search; returns the derived genotype.

    dataset: a WindowedDataset; only its session-1 windows participate.
    out_dir: when given, receives config.json, log.csv, genotype.json and
    checkpoints/{last,best}.json.
    """
    session1 = dataset.session_view(1)
    if len(session1) == 0:
        raise D.DataError("dataset has no session-1 windows to search on")
    train_split, val_split = D.split_for_search(session1, config.split_ratio, config.seed)
    split_hash = hashlib.sha256(
        (train_split.content_hash() + val_split.content_hash()).encode()
    ).hexdigest()[:16]

    sup_cfg = config.supernet_config(dataset.num_classes, dataset.windows.shape[1])
    net = Supernet(sup_cfg, seed=config.seed)
    state = make_triple_state(net, config.optimizer)
    best_val = float("inf")

    if resume_from is not None:
        doc = load_checkpoint(resume_from, expect_kind="search")
        saved = SearchRunConfig.from_dict(doc["config"])
        if saved.config_hash() != config.config_hash():
            raise CheckpointError("checkpoint was produced by a different search config")
        net.load_state_arrays(
            {k[4:]: v for k, v in doc["arrays"].items() if k.startswith("net:")})
        state.load_state_arrays(
            {k[4:]: v for k, v in doc["arrays"].items() if k.startswith("opt:")})
        state.load_counters(doc["counters"])
        best_val = float(doc["extra"].get("best_val", float("inf")))

    ckpt_dir = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
    log = RunLog(os.path.join(out_dir, "log.csv") if out_dir else None)

    net.train(True)
    n_train, n_val = len(train_split), len(val_split)
    steps_per_epoch = max(D.num_batches(n_train, config.train_batch),
                          D.num_batches(n_val, config.val_batch))

    for epoch in range(state.epoch, config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.optimizer.w_lr0)
        train_order = _epoch_order(config.seed, epoch, n_train, stream=1)
        val_order = _epoch_order(config.seed, epoch, n_val, stream=2)
        train_batches = list(D.batches(train_split, config.train_batch, train_order))
        val_batches = list(D.batches(val_split, config.val_batch, val_order))

        val_losses = []
        for s in range(steps_per_epoch):
            tb = train_batches[s % len(train_batches)]
            vb = val_batches[s % len(val_batches)]
            step_id = state.step
            try:
                train_loss, val_loss = triple_step(net, tb, vb, state, lr)
            except NumericsError:
                if out_dir:
                    with open(os.path.join(out_dir, "abort.json"), "w") as fh:
                        json.dump({"epoch": epoch, "step": step_id,
                                   "reason": "non-finite loss or gradient"}, fh)
                raise
            val_losses.append(val_loss)
            log.append(step_id, epoch, train_loss, val_loss, lr)
            if step_callback is not None:
                step_callback(net, state, train_loss, val_loss)

        state.epoch = epoch + 1
        epoch_val = float(np.mean(val_losses))
        if ckpt_dir:
            _write_checkpoint(os.path.join(ckpt_dir, "last.json"),
                              config, net, state, best_val, split_hash)
        if epoch_val < best_val:
            best_val = epoch_val
            if ckpt_dir:
                _write_checkpoint(os.path.join(ckpt_dir, "best.json"),
                                  config, net, state, best_val, split_hash)

    genotype = _derive(net, config)
    if out_dir:
        with open(os.path.join(out_dir, "genotype.json"), "w") as fh:
            fh.write(genotype.to_json())
    return genotype


def resume(checkpoint_path, dataset, out_dir=None, step_callback=None):
    """Continue a search from a checkpoint; same genotype as the full run."""
    doc = load_checkpoint(checkpoint_path, expect_kind="search")
    config = SearchRunConfig.from_dict(doc["config"])
    return run_search(config, dataset, out_dir=out_dir,
                      resume_from=checkpoint_path, step_callback=step_callback)
