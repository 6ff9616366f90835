"""Differentiable primitives over (batch, channel, time) arrays.

Every primitive validates shapes up front (raising ShapeError with the
primitive name and the offending dims), computes with numpy, and records a
pullback closure on the active tape.  Convolutions and pools use
"same-length" semantics: symmetric zero padding of (k-1)/2 * dilation per
side, so stride-1 ops preserve temporal length and stride-2 ops emit
ceil(T/stride) samples.
"""

import numpy as np

from .autograd import ShapeError, Tensor, record


def _shape_check(cond, op, msg):
    if not cond:
        raise ShapeError(f"{op}: {msg}")


def _tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def add(a, b):
    a, b = _tensor(a), _tensor(b)
    _shape_check(a.shape == b.shape, "add", f"shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return record("add", (a, b), out, backward_fn)


def mul(a, b):
    """Elementwise product; one operand may be a single-element scalar."""
    a, b = _tensor(a), _tensor(b)
    _shape_check(
        a.shape == b.shape or a.size == 1 or b.size == 1,
        "multiply",
        f"shape mismatch {a.shape} vs {b.shape}",
    )
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        if a.requires_grad:
            ga = g * b.data
            if a.size == 1:
                ga = np.sum(ga).reshape(a.shape)
            a.accumulate_grad(ga)
        if b.requires_grad:
            gb = g * a.data
            if b.size == 1:
                gb = np.sum(gb).reshape(b.shape)
            b.accumulate_grad(gb)

    return record("multiply", (a, b), out, backward_fn)


def scale(x, s):
    """Multiply by a python constant (no gradient for the constant)."""
    x = _tensor(x)
    s = float(s)
    out = Tensor(x.data * s)

    def backward_fn(g):
        if x.requires_grad:
            x.accumulate_grad(g * s)

    return record("scalar-scale", (x,), out, backward_fn)


def sum_all(x):
    x = _tensor(x)
    out = Tensor(np.sum(x.data).reshape(()))

    def backward_fn(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g.reshape(())))

    return record("sum", (x,), out, backward_fn)


def relu(x):
    x = _tensor(x)
    out = Tensor(np.maximum(x.data, 0))

    def backward_fn(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    return record("relu", (x,), out, backward_fn)


def take(x, i):
    """Scalar-shaped view of entry i of a 1-D tensor."""
    x = _tensor(x)
    _shape_check(x.ndim == 1, "take", f"expects 1-D input, got {x.shape}")
    _shape_check(0 <= i < x.size, "take", f"index {i} out of range {x.size}")
    out = Tensor(np.array(x.data[i]))

    def backward_fn(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[i] = g.reshape(())
            x.accumulate_grad(gx)

    return record("take", (x,), out, backward_fn)


def take_row(x, i):
    """Row i of a 2-D tensor."""
    x = _tensor(x)
    _shape_check(x.ndim == 2, "take_row", f"expects 2-D input, got {x.shape}")
    _shape_check(0 <= i < x.shape[0], "take_row", f"row {i} out of range {x.shape[0]}")
    out = Tensor(x.data[i].copy())

    def backward_fn(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[i] = g
            x.accumulate_grad(gx)

    return record("take_row", (x,), out, backward_fn)


def weighted_sum(xs, w):
    """sum_i w[i] * xs[i] over same-shape tensors, differentiable in both."""
    xs = [_tensor(x) for x in xs]
    w = _tensor(w)
    _shape_check(w.ndim == 1, "weighted_sum", f"weights must be 1-D, got {w.shape}")
    _shape_check(
        len(xs) == w.size,
        "weighted_sum",
        f"{len(xs)} inputs vs {w.size} weights",
    )
    base = xs[0].shape
    for t in xs[1:]:
        _shape_check(t.shape == base, "weighted_sum", f"{t.shape} vs {base}")
    acc = w.data[0] * xs[0].data
    for i in range(1, len(xs)):
        acc = acc + w.data[i] * xs[i].data
    out = Tensor(acc)

    def backward_fn(g):
        for i, t in enumerate(xs):
            if t.requires_grad:
                t.accumulate_grad(g * w.data[i])
        if w.requires_grad:
            gr = g.ravel()
            gw = np.array([np.dot(gr, t.data.ravel()) for t in xs],
                          dtype=w.data.dtype)
            w.accumulate_grad(gw)

    return record("weighted_sum", (*xs, w), out, backward_fn)


def concat(xs, axis=1):
    """Concatenate along the channel axis."""
    xs = [_tensor(x) for x in xs]
    _shape_check(len(xs) > 0, "concat", "needs at least one input")
    ref = list(xs[0].shape)
    for t in xs[1:]:
        other = list(t.shape)
        ref_rest = ref[:axis] + ref[axis + 1 :]
        oth_rest = other[:axis] + other[axis + 1 :]
        _shape_check(
            ref_rest == oth_rest,
            "concat",
            f"non-{axis} dims differ: {tuple(ref)} vs {t.shape}",
        )
    out = Tensor(np.concatenate([t.data for t in xs], axis=axis))
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(xs, pieces):
            if t.requires_grad:
                t.accumulate_grad(piece)

    return record("concat", tuple(xs), out, backward_fn)


# ---------------------------------------------------------------------------
# convolution and pooling


def _conv_geometry(op, T, k, stride, dilation):
    _shape_check(k % 2 == 1, op, f"kernel length must be odd, got {k}")
    _shape_check(stride in (1, 2), op, f"stride must be 1 or 2, got {stride}")
    _shape_check(dilation in (1, 2), op, f"dilation must be 1 or 2, got {dilation}")
    pad = (k - 1) // 2 * dilation
    t_out = -(-T // stride)  # ceil division
    return pad, t_out


def _taps(xp, k, stride, dilation, t_out):
    """k strided views of the padded array, one per kernel tap."""
    hi = (t_out - 1) * stride + 1
    return [xp[:, :, j * dilation : j * dilation + hi : stride] for j in range(k)]


def _pad_time(x, pad, fill=0.0):
    """Zero/constant padding on the time axis (faster than np.pad)."""
    if pad == 0:
        return x
    b, c, t = x.shape
    if fill == 0.0:
        xp = np.zeros((b, c, t + 2 * pad), dtype=x.dtype)
    else:
        xp = np.full((b, c, t + 2 * pad), fill, dtype=x.dtype)
    xp[:, :, pad : pad + t] = x
    return xp


def conv1d(x, w, stride=1, dilation=1):
    """Dense 1-D convolution; x (B,C,T), w (C_out,C_in,k), no bias."""
    x, w = _tensor(x), _tensor(w)
    _shape_check(x.ndim == 3, "conv1d", f"input must be (B,C,T), got {x.shape}")
    _shape_check(w.ndim == 3, "conv1d", f"weight must be (C_out,C_in,k), got {w.shape}")
    B, C, T = x.shape
    c_out, c_in, k = w.shape
    _shape_check(c_in == C, "conv1d", f"weight expects {c_in} channels, input has {C}")
    pad, t_out = _conv_geometry("conv1d", T, k, stride, dilation)

    if k == 1:  # pointwise: plain channel mixing, no padding or unfolding
        xs = x.data[:, :, ::stride]
        w2 = w.data[:, :, 0]
        out = Tensor(np.matmul(w2, xs))

        def backward_fn(g):
            if w.requires_grad:
                gw = np.matmul(g, xs.transpose(0, 2, 1)).sum(axis=0)
                w.accumulate_grad(gw[:, :, None])
            if x.requires_grad:
                if stride == 1:
                    x.accumulate_grad(np.matmul(w2.T, g))
                else:
                    dx = np.zeros_like(x.data)
                    dx[:, :, ::stride] = np.matmul(w2.T, g)
                    x.accumulate_grad(dx)

        return record("conv1d", (x, w), out, backward_fn)

    xp = _pad_time(x.data, pad)
    cols = np.empty((B, C, k, t_out), dtype=x.data.dtype)
    for j, tap in enumerate(_taps(xp, k, stride, dilation, t_out)):
        cols[:, :, j, :] = tap
    cols = cols.reshape(B, C * k, t_out)
    w2 = w.data.reshape(c_out, C * k)
    out = Tensor(np.matmul(w2, cols))

    def backward_fn(g):
        if w.requires_grad:
            gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            w.accumulate_grad(gw.reshape(c_out, C, k))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g).reshape(B, C, k, t_out)
            dxp = np.zeros_like(xp)
            hi = (t_out - 1) * stride + 1
            for j in range(k):
                dxp[:, :, j * dilation : j * dilation + hi : stride] += dcols[:, :, j, :]
            x.accumulate_grad(dxp[:, :, pad : pad + T] if pad else dxp)

    return record("conv1d", (x, w), out, backward_fn)


def depthwise_conv1d(x, w, stride=1, dilation=1):
    """Per-channel 1-D convolution; x (B,C,T), w (C,k)."""
    x, w = _tensor(x), _tensor(w)
    _shape_check(x.ndim == 3, "depthwise_conv1d", f"input must be (B,C,T), got {x.shape}")
    _shape_check(w.ndim == 2, "depthwise_conv1d", f"weight must be (C,k), got {w.shape}")
    B, C, T = x.shape
    cw, k = w.shape
    _shape_check(cw == C, "depthwise_conv1d", f"weight has {cw} channels, input {C}")
    pad, t_out = _conv_geometry("depthwise_conv1d", T, k, stride, dilation)

    xp = _pad_time(x.data, pad)
    taps = _taps(xp, k, stride, dilation, t_out)
    acc = w.data[None, :, 0, None] * taps[0]
    for j in range(1, k):
        acc = acc + w.data[None, :, j, None] * taps[j]
    out = Tensor(acc)

    def backward_fn(g):
        if w.requires_grad:
            gw = np.stack([np.einsum("bct,bct->c", g, tap) for tap in taps], axis=1)
            w.accumulate_grad(gw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            hi = (t_out - 1) * stride + 1
            for j in range(k):
                dxp[:, :, j * dilation : j * dilation + hi : stride] += (
                    w.data[None, :, j, None] * g
                )
            x.accumulate_grad(dxp[:, :, pad : pad + T] if pad else dxp)

    return record("depthwise_conv1d", (x, w), out, backward_fn)


def separable_conv1d(x, w_dw, w_pw, stride=1, dilation=1):
    """Depthwise-separable conv: per-channel conv then 1x1 projection."""
    return conv1d(depthwise_conv1d(x, w_dw, stride, dilation), w_pw)


def max_pool1d(x, kernel=3, stride=1):
    x = _tensor(x)
    _shape_check(x.ndim == 3, "max_pool1d", f"input must be (B,C,T), got {x.shape}")
    B, C, T = x.shape
    pad, t_out = _conv_geometry("max_pool1d", T, kernel, stride, 1)
    xp = _pad_time(x.data, pad, fill=-np.inf)
    taps = _taps(xp, kernel, stride, 1, t_out)
    m = taps[0]
    for tap in taps[1:]:
        m = np.maximum(m, tap)
    out = Tensor(m)

    def backward_fn(g):
        if not x.requires_grad:
            return
        dxp = np.zeros((B, C, T + 2 * pad), dtype=x.data.dtype)
        hi = (t_out - 1) * stride + 1
        claimed = np.zeros_like(m, dtype=bool)
        for j in range(kernel):
            hit = (taps[j] == m) & ~claimed  # ties route to the earliest tap
            dxp[:, :, j : j + hi : stride] += g * hit
            claimed |= hit
        x.accumulate_grad(dxp[:, :, pad : pad + T] if pad else dxp)

    return record("max_pool1d", (x,), out, backward_fn)


def avg_pool1d(x, kernel=3, stride=1):
    """Average pooling that divides by the count of in-bounds taps only."""
    x = _tensor(x)
    _shape_check(x.ndim == 3, "avg_pool1d", f"input must be (B,C,T), got {x.shape}")
    B, C, T = x.shape
    pad, t_out = _conv_geometry("avg_pool1d", T, kernel, stride, 1)
    xp = _pad_time(x.data, pad)
    valid = np.zeros(T + 2 * pad, dtype=x.data.dtype)
    valid[pad : pad + T] = 1
    hi = (t_out - 1) * stride + 1
    counts = sum(valid[j : j + hi : stride] for j in range(kernel))
    taps = _taps(xp, kernel, stride, 1, t_out)
    out = Tensor(sum(taps) / counts)

    def backward_fn(g):
        if not x.requires_grad:
            return
        dxp = np.zeros_like(xp)
        gc = g / counts
        for j in range(kernel):
            dxp[:, :, j : j + hi : stride] += gc
        x.accumulate_grad(dxp[:, :, pad : pad + T] if pad else dxp)

    return record("avg_pool1d", (x,), out, backward_fn)


def shift_time(x):
    """Drop the first time step and zero-pad the end (length preserved)."""
    x = _tensor(x)
    _shape_check(x.ndim == 3, "shift_time", f"input must be (B,C,T), got {x.shape}")
    data = np.zeros_like(x.data)
    data[:, :, :-1] = x.data[:, :, 1:]
    out = Tensor(data)

    def backward_fn(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, :, 1:] = g[:, :, :-1]
            x.accumulate_grad(gx)

    return record("shift_time", (x,), out, backward_fn)


# ---------------------------------------------------------------------------
# normalization, pooling to vector, classification head


def channel_norm(x, gamma, beta, eps=1e-5, use_batch_stats=True,
                 running_mean=None, running_var=None, momentum=0.1,
                 update_running=False):
    """Per-channel affine normalization over the current batch.

    In batch-stats mode, mean/variance are taken over (batch, time) per
    channel and the backward pass differentiates through them.  With
    use_batch_stats off, the provided running arrays are treated as
    constants (final-network evaluation mode).
    """
    x, gamma, beta = _tensor(x), _tensor(gamma), _tensor(beta)
    _shape_check(x.ndim == 3, "channel_norm", f"input must be (B,C,T), got {x.shape}")
    B, C, T = x.shape
    _shape_check(gamma.shape == (C,), "channel_norm", f"gamma {gamma.shape} vs C={C}")
    _shape_check(beta.shape == (C,), "channel_norm", f"beta {beta.shape} vs C={C}")

    n_stat = B * T
    if use_batch_stats:
        mean = x.data.mean(axis=(0, 2))
        xc = x.data - mean[None, :, None]
        var = np.einsum("bct,bct->c", xc, xc) / n_stat
        if update_running and running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
    else:
        if running_mean is None or running_var is None:
            raise ShapeError("channel_norm: running stats required when batch stats off")
        mean = running_mean
        var = running_var
        xc = x.data - mean[None, :, None]

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = xc * inv_std[None, :, None]
    out = Tensor(gamma.data[None, :, None] * xhat + beta.data[None, :, None])

    def backward_fn(g):
        if gamma.requires_grad:
            gamma.accumulate_grad(np.einsum("bct,bct->c", g, xhat))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gs = g * gamma.data[None, :, None]
            if use_batch_stats:
                mean_gs = gs.mean(axis=(0, 2))
                mean_gs_xhat = np.einsum("bct,bct->c", gs, xhat) / n_stat
                dx = inv_std[None, :, None] * (
                    gs - mean_gs[None, :, None] - xhat * mean_gs_xhat[None, :, None]
                )
            else:
                dx = gs * inv_std[None, :, None]
            x.accumulate_grad(dx)

    return record("channel_norm", (x, gamma, beta), out, backward_fn)


def global_avg_pool(x):
    """Mean over the time axis: (B,C,T) -> (B,C)."""
    x = _tensor(x)
    _shape_check(x.ndim == 3, "global_avg_pool", f"input must be (B,C,T), got {x.shape}")
    T = x.shape[2]
    out = Tensor(x.data.mean(axis=2))

    def backward_fn(g):
        if x.requires_grad:
            x.accumulate_grad(np.repeat(g[:, :, None], T, axis=2) / T)

    return record("global_avg_pool", (x,), out, backward_fn)


def linear(x, w, b):
    """Affine map per batch row: (B,D) @ (K,D)^T + (K,)."""
    x, w, b = _tensor(x), _tensor(w), _tensor(b)
    _shape_check(x.ndim == 2, "linear", f"input must be (B,D), got {x.shape}")
    _shape_check(w.ndim == 2, "linear", f"weight must be (K,D), got {w.shape}")
    _shape_check(
        w.shape[1] == x.shape[1],
        "linear",
        f"weight expects D={w.shape[1]}, input has D={x.shape[1]}",
    )
    _shape_check(b.shape == (w.shape[0],), "linear", f"bias {b.shape} vs K={w.shape[0]}")
    out = Tensor(x.data @ w.data.T + b.data)

    def backward_fn(g):
        if x.requires_grad:
            x.accumulate_grad(g @ w.data)
        if w.requires_grad:
            w.accumulate_grad(g.T @ x.data)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))

    return record("linear", (x, w, b), out, backward_fn)


def softmax(x, axis=-1):
    x = _tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward_fn(g):
        if x.requires_grad:
            dot = np.sum(g * y, axis=axis, keepdims=True)
            x.accumulate_grad(y * (g - dot))

    return record("softmax", (x,), out, backward_fn)


def log_softmax(x, axis=-1):
    x = _tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    ls = z - lse
    out = Tensor(ls)

    def backward_fn(g):
        if x.requires_grad:
            sm = np.exp(ls)
            x.accumulate_grad(g - sm * g.sum(axis=axis, keepdims=True))

    return record("log_softmax", (x,), out, backward_fn)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under the logits."""
    logits = _tensor(logits)
    labels = np.asarray(labels)
    _shape_check(logits.ndim == 2, "cross_entropy", f"logits must be (B,K), got {logits.shape}")
    B, K = logits.shape
    _shape_check(labels.shape == (B,), "cross_entropy", f"labels {labels.shape} vs B={B}")
    _shape_check(
        labels.min(initial=0) >= 0 and labels.max(initial=0) < K,
        "cross_entropy",
        f"labels out of range for {K} classes",
    )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    ls = z - lse
    out = Tensor(np.array(-ls[np.arange(B), labels].mean()).reshape(()))

    def backward_fn(g):
        if logits.requires_grad:
            sm = np.exp(ls)
            sm[np.arange(B), labels] -= 1.0
            logits.accumulate_grad(sm * (g.reshape(()) / B))

    return record("cross_entropy", (logits,), out, backward_fn)


def zeros(shape, dtype=None):
    """Constant all-zero tensor (never requires grad)."""
    from .autograd import default_dtype

    return Tensor(np.zeros(shape, dtype=dtype or default_dtype()))
