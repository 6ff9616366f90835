"""Optimizers and the alternating triple update.

One search step updates, in order: every cell's architecture matrix from
the validation gradient, every cell's input gate from the validation
gradient, then the network weights from the training gradient.  With
xi > 0 the architecture gradients are taken at the virtually advanced
weights w - xi * grad_w L_train, with the second-order term recovered by a
central finite difference over the weights.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .autograd import backward, reset_tape


class NumericsError(RuntimeError):
    """Raised on non-finite gradients or losses."""


@dataclass
class OptimizerConfig:
    w_lr0: float = 0.025  # cosine-annealed to 0 over the run
    momentum: float = 0.9
    weight_decay: float = 5e-4
    arch_lr: float = 3e-4
    arch_beta1: float = 0.5
    arch_beta2: float = 0.999
    arch_eps: float = 1e-8
    arch_weight_decay: float = 1e-3
    xi: float = 0.0  # unrolling step size; 0 selects the first-order scheme
    hessian_eps: float = 1e-4  # probe scale for the finite-difference product
    grad_clip: float = 5.0

    def __post_init__(self):
        for name in ("w_lr0", "weight_decay", "arch_lr", "arch_weight_decay", "xi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")

    def to_dict(self):
        return dict(self.__dict__)


def cosine_lr(t, total, lr0):
    """Cosine annealing from lr0 at t=0 to exactly 0 at t=total."""
    if total <= 0:
        raise ValueError("total steps must be positive")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total))


def _grad_or_zero(p):
    return p.grad if p.grad is not None else np.zeros_like(p.data)


def _check_finite_grad(p):
    if p.grad is not None and not np.all(np.isfinite(p.grad)):
        raise NumericsError(f"non-finite gradient for parameter {p.name!r}")


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = math.sqrt(total)
    if norm > max_norm:
        coef = max_norm / (norm + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad *= coef
    return norm


class SGD:
    """Momentum SGD: v <- m*v + (g + wd*p); p <- p - lr*v."""

    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        for p, v in zip(self.params, self.buffers):
            if p.grad is None:
                continue
            _check_finite_grad(p)
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= lr * v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self, prefix):
        return {f"{prefix}:{p.name}": v for p, v in zip(self.params, self.buffers)}

    def load_state_arrays(self, arrays, prefix):
        for p, v in zip(self.params, self.buffers):
            v[...] = np.asarray(arrays[f"{prefix}:{p.name}"]).astype(v.dtype)


class Adam:
    """Adaptive-moment optimizer with L2 decay folded into the gradient."""

    def __init__(self, params, lr=3e-4, beta1=0.5, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            _check_finite_grad(p)
            g = p.grad + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self, prefix):
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"{prefix}:m:{p.name}"] = m
            out[f"{prefix}:v:{p.name}"] = v
        return out

    def load_state_arrays(self, arrays, prefix):
        for p, m, v in zip(self.params, self.m, self.v):
            m[...] = np.asarray(arrays[f"{prefix}:m:{p.name}"]).astype(m.dtype)
            v[...] = np.asarray(arrays[f"{prefix}:v:{p.name}"]).astype(v.dtype)


@dataclass
class TripleState:
    """Optimizer triple plus run counters for one search."""

    config: OptimizerConfig
    w_opt: SGD
    alpha_opt: Adam
    beta_opt: Adam | None
    epoch: int = 0
    step: int = 0

    def state_arrays(self):
        out = dict(self.w_opt.state_arrays("w"))
        out.update(self.alpha_opt.state_arrays("alpha"))
        if self.beta_opt is not None:
            out.update(self.beta_opt.state_arrays("beta"))
        return out

    def load_state_arrays(self, arrays):
        self.w_opt.load_state_arrays(arrays, "w")
        self.alpha_opt.load_state_arrays(arrays, "alpha")
        if self.beta_opt is not None:
            self.beta_opt.load_state_arrays(arrays, "beta")

    def counters(self):
        return {
            "epoch": self.epoch,
            "step": self.step,
            "alpha_t": self.alpha_opt.t,
            "beta_t": self.beta_opt.t if self.beta_opt is not None else 0,
        }

    def load_counters(self, d):
        self.epoch = int(d["epoch"])
        self.step = int(d["step"])
        self.alpha_opt.t = int(d["alpha_t"])
        if self.beta_opt is not None:
            self.beta_opt.t = int(d["beta_t"])


def make_triple_state(net, config: OptimizerConfig):
    w_opt = SGD(net.weight_parameters(), config.momentum, config.weight_decay)
    alpha_opt = Adam(net.arch_parameters(), config.arch_lr, config.arch_beta1,
                     config.arch_beta2, config.arch_eps, config.arch_weight_decay)
    betas = net.gate_parameters()
    beta_opt = Adam(betas, config.arch_lr, config.arch_beta1, config.arch_beta2,
                    config.arch_eps, config.arch_weight_decay) if betas else None
    return TripleState(config=config, w_opt=w_opt, alpha_opt=alpha_opt,
                       beta_opt=beta_opt)


def _batch_loss(net, batch):
    x, y = batch
    return F.cross_entropy(net.forward(x), y)


def _zero_all(net):
    for p in net.weight_parameters():
        p.zero_grad()
    for p in net.arch_parameters():
        p.zero_grad()
    for p in net.gate_parameters():
        p.zero_grad()


def _arch_grads_unrolled(net, train_batch, val_batch, xi, hessian_eps=1e-4):
    """Architecture gradients of the validation loss at w - xi*grad_w L_train.

    The mixed second-derivative term is approximated by a central finite
    difference of the training gradient around the original weights, with
    the probe direction given by the validation weight gradient and the
    probe length hessian_eps / ||grad||.
    """
    ws = net.weight_parameters()
    arch = net.arch_parameters() + net.gate_parameters()

    reset_tape()
    _zero_all(net)
    backward(_batch_loss(net, train_batch))
    g_train = [_grad_or_zero(p).copy() for p in ws]

    w_orig = [p.data.copy() for p in ws]
    for p, g in zip(ws, g_train):
        p.data -= xi * g

    reset_tape()
    _zero_all(net)
    val_loss = _batch_loss(net, val_batch)
    backward(val_loss)
    d_arch = [_grad_or_zero(p).copy() for p in arch]
    g_val_w = [_grad_or_zero(p).copy() for p in ws]

    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64)))
                         for g in g_val_w))
    for p, w0 in zip(ws, w_orig):
        p.data = w0.copy()
    if norm > 0:
        eps = hessian_eps / norm

        def train_arch_grads():
            reset_tape()
            _zero_all(net)
            backward(_batch_loss(net, train_batch))
            return [_grad_or_zero(p).copy() for p in arch]

        for p, w0, gv in zip(ws, w_orig, g_val_w):
            p.data = w0 + eps * gv
        plus = train_arch_grads()
        for p, w0, gv in zip(ws, w_orig, g_val_w):
            p.data = w0 - eps * gv
        minus = train_arch_grads()
        for p, w0 in zip(ws, w_orig):
            p.data = w0
        for d, gp, gm in zip(d_arch, plus, minus):
            d -= xi * (gp - gm) / (2.0 * eps)

    return d_arch, float(val_loss.data)


def triple_step(net, train_batch, val_batch, state: TripleState, lr_w):
    """One alternating update: arch and gates on val loss, then weights on train.

    Returns (train_loss, val_loss) as floats measured at the point each
    gradient was taken.
    """
    cfg = state.config
    arch = net.arch_parameters() + net.gate_parameters()

    if cfg.xi > 0:
        d_arch, val_loss = _arch_grads_unrolled(net, train_batch, val_batch,
                                                cfg.xi, cfg.hessian_eps)
        for p, d in zip(arch, d_arch):
            p.grad = d
    else:
        reset_tape()
        _zero_all(net)
        loss = _batch_loss(net, val_batch)
        backward(loss)
        val_loss = float(loss.data)

    state.alpha_opt.step()
    if state.beta_opt is not None:
        state.beta_opt.step()

    reset_tape()
    _zero_all(net)
    loss = _batch_loss(net, train_batch)
    backward(loss)
    train_loss = float(loss.data)
    if not math.isfinite(train_loss) or not math.isfinite(val_loss):
        raise NumericsError(
            f"non-finite loss at step {state.step}: train={train_loss} val={val_loss}"
        )
    clip_grad_norm(net.weight_parameters(), cfg.grad_clip)
    state.w_opt.step(lr_w)

    state.step += 1
    return train_loss, val_loss
