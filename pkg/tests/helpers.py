"""Shared oracles and gradient-check machinery for the test suite."""

import numpy as np

from seqnas.autograd import backward, no_grad, parameter, reset_tape, using_dtype


def finite_difference_check(make_loss, params, rel_tol=1e-4, floor=1e-7, eps=1e-5):
    """Compare analytic gradients with central finite differences (64-bit).

    make_loss receives {name: Tensor} and must rebuild the loss from
    scratch on every call.  Passes when, per scalar, the gradient error is
    within rel_tol of the larger magnitude or under the absolute floor.
    """
    with using_dtype(np.float64):
        tensors = {k: parameter(np.asarray(v, dtype=np.float64).copy(), k)
                   for k, v in params.items()}
        reset_tape()
        loss = make_loss(tensors)
        backward(loss)
        analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                    for k, t in tensors.items()}

        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            numeric = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                with no_grad():
                    flat[i] = orig + eps
                    lp = float(make_loss(tensors).data)
                    flat[i] = orig - eps
                    lm = float(make_loss(tensors).data)
                flat[i] = orig
                numeric[i] = (lp - lm) / (2.0 * eps)
            a = analytic[name].reshape(-1)
            err = np.abs(a - numeric)
            tol = np.maximum(rel_tol * np.maximum(np.abs(a), np.abs(numeric)), floor)
            worst = np.argmax(err - tol)
            assert np.all(err <= tol), (
                f"{name}[{worst}]: analytic={a[worst]:.8g} "
                f"numeric={numeric[worst]:.8g} err={err[worst]:.3g}"
            )
    return analytic


def conv1d_oracle(x, w, stride=1, dilation=1):
    """Direct sliding-window convolution, O(n*k) per output sample."""
    b, c_in, t = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2 * dilation
    xp = np.zeros((b, c_in, t + 2 * pad))
    xp[:, :, pad : pad + t] = x
    t_out = -(-t // stride)
    out = np.zeros((b, c_out, t_out))
    for bi in range(b):
        for o in range(c_out):
            for ti in range(t_out):
                acc = 0.0
                for c in range(c_in):
                    for j in range(k):
                        acc += w[o, c, j] * xp[bi, c, ti * stride + j * dilation]
                out[bi, o, ti] = acc
    return out


def max_pool_oracle(x, kernel=3, stride=1):
    b, c, t = x.shape
    pad = (kernel - 1) // 2
    xp = np.full((b, c, t + 2 * pad), -np.inf)
    xp[:, :, pad : pad + t] = x
    t_out = -(-t // stride)
    out = np.zeros((b, c, t_out))
    for bi in range(b):
        for ci in range(c):
            for ti in range(t_out):
                out[bi, ci, ti] = max(
                    xp[bi, ci, ti * stride + j] for j in range(kernel))
    return out


def avg_pool_oracle(x, kernel=3, stride=1):
    """count_include_pad=False semantics: divide by in-bounds taps only."""
    b, c, t = x.shape
    pad = (kernel - 1) // 2
    t_out = -(-t // stride)
    out = np.zeros((b, c, t_out))
    for bi in range(b):
        for ci in range(c):
            for ti in range(t_out):
                acc, cnt = 0.0, 0
                for j in range(kernel):
                    p = ti * stride + j - pad
                    if 0 <= p < t:
                        acc += x[bi, ci, p]
                        cnt += 1
                out[bi, ci, ti] = acc / cnt
    return out


def sweep_det_oracle(genuine, impostor):
    """Brute-force DET: per-threshold counting loops (O(n^2) overall)."""
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    uniq = np.unique(np.concatenate([genuine, impostor]))
    thresholds = np.concatenate(([-np.inf], uniq, [np.inf]))
    far, frr = [], []
    for thr in thresholds:
        if np.isneginf(thr):
            far.append(1.0)
            frr.append(0.0)
        elif np.isposinf(thr):
            far.append(0.0)
            frr.append(1.0)
        else:
            far.append(int(np.sum(impostor >= thr)) / impostor.size)
            frr.append(int(np.sum(genuine < thr)) / genuine.size)
    return thresholds, np.array(far), np.array(frr)


def eer_oracle(genuine, impostor):
    _, far, frr = sweep_det_oracle(genuine, impostor)
    d = far - frr
    for i in range(len(d)):
        if d[i] <= 0:
            if d[i] == 0:
                return float(far[i])
            s = d[i - 1] / (d[i - 1] - d[i])
            return float(far[i - 1] + s * (far[i] - far[i - 1]))
    raise AssertionError("no crossing")


def frr_at_far_oracle(genuine, impostor, target):
    _, far, frr = sweep_det_oracle(genuine, impostor)
    for i in range(len(far)):
        if far[i] <= target:
            if far[i] == target or i == 0:
                return float(frr[i])
            u = (far[i - 1] - target) / (far[i - 1] - far[i])
            return float(frr[i - 1] + u * (frr[i] - frr[i - 1]))
    raise AssertionError("target not reached")
