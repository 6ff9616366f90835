"""From-scratch training of a derived network with drop-path regularization."""

import csv
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as D
from . import functional as F
from .autograd import Tensor, backward, reset_tape
from .optim import NumericsError, OptimizerConfig, clip_grad_norm, cosine_lr, SGD
from .serialize import save_checkpoint


@dataclass
class TrainConfig:
    epochs: int = 300
    batch: int = 32
    drop_path_p: float = 0.3
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if not 0 <= self.drop_path_p < 1:
            raise ValueError("drop_path_p must be in [0, 1)")
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)

    def to_dict(self):
        d = asdict(self)
        d["optimizer"] = self.optimizer.to_dict()
        return d


def drop_path(x, p, training, rng):
    """Zero whole per-sample edge outputs with probability p, rescaled.

    Identity outside training or at p=0.  Masks are independent across
    calls (edges) and across samples within the batch.
    """
    if not training or p <= 0:
        return x
    batch = x.shape[0]
    keep = (rng.random(batch) >= p).astype(x.dtype.type if hasattr(x, "dtype") else np.float64)
    mask = np.broadcast_to((keep / (1.0 - p))[:, None, None], x.shape)
    return F.mul(x, Tensor(np.ascontiguousarray(mask).astype(x.data.dtype)))


def accuracy(logits, labels):
    pred = np.argmax(logits.data if isinstance(logits, Tensor) else logits, axis=1)
    return float(np.mean(pred == labels))


def train_final(net, dataset, config: TrainConfig, out_dir=None, epoch_callback=None):
    """Identification training on session-1 windows; keeps the best epoch.

    Returns a list of per-epoch dicts (epoch, loss, accuracy, lr).  The
    network is left holding the weights of its best-accuracy epoch.
    """
    session1 = dataset.session_view(1)
    if len(session1) == 0:
        raise D.DataError("no session-1 windows to train on")
    if dataset.num_classes != net.config.num_classes:
        raise D.DataError(
            f"network head has {net.config.num_classes} classes, "
            f"dataset has {dataset.num_classes}"
        )

    opt = SGD(net.parameters(), config.optimizer.momentum, config.optimizer.weight_decay)
    history = []
    best = {"accuracy": -1.0, "arrays": None, "epoch": -1}
    net.train(True)
    n = len(session1)

    log_path = os.path.join(out_dir, "log.csv") if out_dir else None
    if log_path:
        os.makedirs(out_dir, exist_ok=True)
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(("epoch", "loss", "accuracy", "lr"))

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.optimizer.w_lr0)
        order = np.random.default_rng([config.seed, epoch, 3]).permutation(n)
        dp_rng = np.random.default_rng([config.seed, epoch, 4])
        losses, hits, total = [], 0, 0
        for xb, yb in D.batches(session1, config.batch, order):
            reset_tape()
            net.zero_grad()
            reg = (lambda t: drop_path(t, config.drop_path_p, True, dp_rng)) \
                if config.drop_path_p > 0 else None
            logits = net.forward(xb, edge_regularizer=reg)
            loss = F.cross_entropy(logits, yb)
            if not math.isfinite(float(loss.data)):
                raise NumericsError(f"non-finite training loss at epoch {epoch}")
            backward(loss)
            clip_grad_norm(net.parameters(), config.optimizer.grad_clip)
            opt.step(lr)
            losses.append(float(loss.data))
            hits += int(np.sum(np.argmax(logits.data, axis=1) == yb))
            total += len(yb)
        row = {"epoch": epoch, "loss": float(np.mean(losses)),
               "accuracy": hits / total, "lr": lr}
        history.append(row)
        if log_path:
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh).writerow((row["epoch"], row["loss"],
                                         row["accuracy"], row["lr"]))
        if row["accuracy"] > best["accuracy"]:
            best = {"accuracy": row["accuracy"], "epoch": epoch,
                    "arrays": {k: v.copy() for k, v in net.state_arrays().items()}}
        if epoch_callback is not None:
            epoch_callback(net, row)

    if best["arrays"] is not None:
        net.load_state_arrays(best["arrays"])
    net.eval()
    return history


def save_trained(path, net, genotype, train_config, history):
    """Weights checkpoint consumable by the verification evaluator."""
    arrays = {f"net:{k}": v for k, v in net.state_arrays().items()}
    save_checkpoint(
        path, "train",
        {
            "train": train_config.to_dict(),
            "supernet": net.config.to_dict(),
            "genotype": genotype.to_json_dict(),
        },
        {"epochs": len(history)},
        arrays,
        extra={"best_epoch": max(range(len(history)),
                                 key=lambda i: history[i]["accuracy"]) if history else -1,
               "final_accuracy": history[-1]["accuracy"] if history else None},
    )


def load_trained(path):
    """Rebuild the discrete network held by a training checkpoint."""
    from .cell import Genotype
    from .network import DiscreteNetwork, SupernetConfig
    from .serialize import load_checkpoint

    doc = load_checkpoint(path, expect_kind="train")
    genotype = Genotype.from_json_dict(doc["config"]["genotype"])
    sup_cfg = SupernetConfig.from_dict(doc["config"]["supernet"])
    net = DiscreteNetwork(genotype, sup_cfg, seed=0)
    net.load_state_arrays(
        {k[4:]: v for k, v in doc["arrays"].items() if k.startswith("net:")})
    net.eval()
    return net, genotype, doc
