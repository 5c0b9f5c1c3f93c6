"""Independent oracles used by the tests: finite differences, a direct
cubic resampler, a straight-line attention, and the textbook SSIM formula.
These deliberately avoid the library's own code paths."""

import numpy as np

from vidfill import autodiff as ad
from vidfill.autodiff import Tensor


def finite_difference(fn, arrays, h=1e-3):
    """Central differences of fn(list-of-arrays) -> float w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(arrays)
            flat[i] = orig - h
            fm = fn(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)


def gradcheck(build, arrays, h=1e-3):
    """Max rel. err between backward grads and central differences.

    build(list-of-Tensors) -> scalar Tensor. The check runs the whole
    graph in float64 (double-precision accumulation).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(tensors)
    ad.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def f(arrs):
        return build([Tensor(a.copy()) for a in arrs]).item()

    numeric = finite_difference(f, arrays, h)
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))


def straight_line_attention(q, k, v):
    """Naive softmax(QK^T/sqrt(d))V with explicit loops."""
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    d = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        scores = np.array([q[i] @ k[j] / np.sqrt(d) for j in range(k.shape[0])])
        scores -= scores.max()
        w = np.exp(scores)
        w /= w.sum()
        for j in range(k.shape[0]):
            out[i] += w[j] * v[j]
    return out


def catmull_weight(d):
    d = abs(d)
    if d <= 1.0:
        return 1.5 * d**3 - 2.5 * d**2 + 1.0
    if d < 2.0:
        return -0.5 * d**3 + 2.5 * d**2 - 4.0 * d + 2.0
    return 0.0


def direct_cubic_downsample(frame, th, tw):
    """Direct 16-tap 2-D Catmull-Rom resampling (no separability)."""
    h, w = frame.shape
    out = np.zeros((th, tw))
    for oy in range(th):
        for ox in range(tw):
            sy = (oy + 0.5) * h / th - 0.5
            sx = (ox + 0.5) * w / tw - 0.5
            by, bx = int(np.floor(sy)), int(np.floor(sx))
            acc = 0.0
            for ty in range(-1, 3):
                for tx in range(-1, 3):
                    yy = min(max(by + ty, 0), h - 1)
                    xx = min(max(bx + tx, 0), w - 1)
                    acc += (catmull_weight(ty - (sy - by)) * catmull_weight(tx - (sx - bx))
                            * frame[yy, xx])
            out[oy, ox] = acc
    return np.clip(out, 0.0, 1.0)


def direct_ssim_window(x, y, kernel, c1=0.01**2, c2=0.03**2):
    """Textbook SSIM of one window with Gaussian weights."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    mx = (kernel * x).sum()
    my = (kernel * y).sum()
    vx = (kernel * x * x).sum() - mx**2
    vy = (kernel * y * y).sum() - my**2
    cxy = (kernel * x * y).sum() - mx * my
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))


def greedy_plan(total, clip_len, overlap):
    """Brute-force window enumeration matching the stated rules."""
    stride = clip_len - overlap
    windows = []
    start = 0
    while True:
        end = min(start + clip_len, total)
        windows.append((start, end))
        if end == total:
            return windows
        start += stride
