"""Loop kernels compiled with numba.

Every reduction runs sequentially in its natural index order with a float64
accumulator, so results do not depend on thread count.
"""
import numba as nb
import numpy as np

_jit = nb.njit(cache=True, nogil=True)


@_jit
def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=np.float32)
    acc = np.empty(n, dtype=np.float64)
    for i in range(m):
        acc[:] = 0.0
        for p in range(k):
            aip = np.float64(a[i, p])
            for j in range(n):
                acc[j] += aip * np.float64(b[p, j])
        for j in range(n):
            out[i, j] = np.float32(acc[j])
    return out


@_jit
def softmax_rows(x):
    n, m = x.shape
    out = np.empty((n, m), dtype=np.float32)
    row = np.empty(m, dtype=np.float64)
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, m):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(m):
            row[j] = np.exp(x[i, j] - mx)
            s += row[j]
        for j in range(m):
            out[i, j] = np.float32(row[j] / s)
    return out


@_jit
def attend(q, k, v, bias, scale):
    h, nq, ch = q.shape
    nk = k.shape[1]
    maps = np.empty((h, nq, nk), dtype=np.float32)
    out = np.empty((h, nq, ch), dtype=np.float32)
    row = np.empty(nk, dtype=np.float64)
    acc_v = np.empty(ch, dtype=np.float64)
    for hh in range(h):
        for i in range(nq):
            mx = -np.inf
            for j in range(nk):
                acc = 0.0
                for p in range(ch):
                    acc += np.float64(q[hh, i, p]) * np.float64(k[hh, j, p])
                val = acc * scale + np.float64(bias[i, j])
                row[j] = val
                if val > mx:
                    mx = val
            s = 0.0
            for j in range(nk):
                row[j] = np.exp(row[j] - mx)
                s += row[j]
            for j in range(nk):
                maps[hh, i, j] = np.float32(row[j] / s)
            acc_v[:] = 0.0
            for j in range(nk):
                wij = np.float64(maps[hh, i, j])
                for p in range(ch):
                    acc_v[p] += wij * np.float64(v[hh, j, p])
            for p in range(ch):
                out[hh, i, p] = np.float32(acc_v[p])
    return out, maps


@_jit
def self_bias(gq, gk, beta, floor):
    nq = gq.shape[0]
    nk = gk.shape[0]
    out = np.empty((nq, nk), dtype=np.float32)
    for i in range(nq):
        a = 1.0 - gq[i]
        for j in range(nk):
            val = beta * np.log(1.0 - a * gk[j])
            out[i, j] = np.float32(val if val > floor else floor)
    return out


@_jit
def jacobi_eigh(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += a[i, j] * a[i, j]
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if off <= tol * tol * total:
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
                for r in range(n):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(n):
                    apr = a[p, r]
                    aqr = a[q, r]
                    a[p, r] = c * apr - s * aqr
                    a[q, r] = s * apr + c * aqr
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v


@_jit
def pair_auc(pos, neg):
    acc = 0.0
    for i in range(pos.shape[0]):
        for j in range(neg.shape[0]):
            if pos[i] > neg[j]:
                acc += 1.0
            elif pos[i] == neg[j]:
                acc += 0.5
    return acc / (pos.shape[0] * neg.shape[0])
