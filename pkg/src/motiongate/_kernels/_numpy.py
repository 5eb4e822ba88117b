"""Vectorised numpy twins of the numba kernels.

Same float64 accumulation discipline; BLAS may reorder sums, so agreement
with the compiled path is to rounding, not bitwise.
"""
import numpy as np


def matmul(a, b):
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def softmax_rows(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def attend(q, k, v, bias, scale):
    logits = np.matmul(q.astype(np.float64), k.astype(np.float64).transpose(0, 2, 1))
    logits = logits * scale + bias.astype(np.float64)[None]
    maps = softmax_rows(logits)
    out = np.matmul(maps.astype(np.float64), v.astype(np.float64))
    return out.astype(np.float32), maps


def self_bias(gq, gk, beta, floor):
    val = beta * np.log(1.0 - np.outer(1.0 - gq, gk))
    return np.maximum(val, floor).astype(np.float32)


def jacobi_eigh(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    total = float(np.sum(a * a))
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if np.sum(a[off_mask] ** 2) <= tol * tol * total:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sgn = 1.0 if theta >= 0.0 else -1.0
                t = sgn / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def pair_auc(pos, neg):
    gt = np.count_nonzero(pos[:, None] > neg[None, :])
    eq = np.count_nonzero(pos[:, None] == neg[None, :])
    return (gt + 0.5 * eq) / (pos.shape[0] * neg.shape[0])
