"""Reference computations the tests compare against.

Everything here is written with plain numpy or the math module and never
calls into seqada, so a bug in the library cannot hide in its own oracle.
"""

import math

import numpy as np


def central_diff(fn, arrays, eps=1e-5):
    """Central finite-difference gradient of the scalar ``fn()`` with respect
    to each array in ``arrays`` (perturbed in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            up = fn()
            a[i] = old - eps
            down = fn()
            a[i] = old
            g[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def matmul_loops(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return np.array(out)


def cross_entropy_scalar(logits, labels):
    """Mean and per-sample CE with one explicit log-sum-exp per row."""
    per = []
    for row, y in zip(logits, labels):
        top = max(row)
        lse = top + math.log(sum(math.exp(v - top) for v in row))
        per.append(lse - row[y])
    return sum(per) / len(per), per


def ranking_scalar(pred, true, pairs, margin):
    total = 0.0
    for n, m in pairs:
        sign = 1.0 if true[n] > true[m] else -1.0
        total += max(0.0, -sign * (pred[n] - pred[m]) + margin)
    return total / len(pairs)


def entropy_scalar(p):
    return -sum(v * math.log(v) for v in p if v > 0)


def info_max_scalar(probs, labels, mean_probs, xi):
    term1 = -sum(math.log(max(probs[i][y], 1e-12)) for i, y in enumerate(labels)) / len(labels)
    k = len(mean_probs)
    kl = sum(v * math.log(max(v, 1e-12) * k) for v in mean_probs)
    return term1 + xi * (kl - math.log(k))


def discriminator_scalar(d_src, d_tgt):
    src = sum(math.log(max(v, 1e-12)) for v in d_src) / len(d_src)
    tgt = sum(math.log(max(1.0 - v, 1e-12)) for v in d_tgt) / len(d_tgt)
    return -(src + tgt)


def top_k_sorted(values, ids, k):
    """Ids of the k largest values, ties to the lower id, via a full sort."""
    return [i for _, i in sorted(zip(values, ids), key=lambda t: (-t[0], t[1]))[:k]]


def pairwise_mean_distance(points):
    pts = [list(p) for p in points]
    n = len(pts)
    if n < 2:
        return 0.0
    total, count = 0.0, 0
    for i in range(n):
        for j in range(i + 1, n):
            total += math.sqrt(sum((a - b) ** 2 for a, b in zip(pts[i], pts[j])))
            count += 1
    return total / count
