"""Independent reference implementations used as test oracles.

These are deliberately written from the definitions (bisection, explicit
loops, O(n^2) scans) and share no code with the package, so a test never
checks an implementation against itself.
"""

import numpy as np


def entmax_bisect(z, alpha=1.5, tol=1e-12, iters=400):
    """Bisection on tau until sum [(alpha-1) z - tau]_+^(1/(alpha-1)) = 1.

    Returns (p, tau).  Bracket: the normalization sum is >= 1 at
    max(s) - 1 and 0 at max(s), so the root lies between them.
    """
    z = np.asarray(z, dtype=np.float64)
    s = (alpha - 1.0) * z
    power = 1.0 / (alpha - 1.0)
    lo, hi = s.max() - 1.0, s.max()

    def total(tau):
        return np.sum(np.maximum(s - tau, 0.0) ** power)

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if abs(total(mid) - 1.0) <= tol:
            lo = hi = mid
            break
        if total(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    tau = 0.5 * (lo + hi)
    return np.maximum(s - tau, 0.0) ** power, tau


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def scores_triple_loop(Q, K):
    """Naive scaled dot-product scores."""
    n, d = Q.shape
    m = K.shape[0]
    Z = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for a in range(d):
                acc += Q[i, a] * K[j, a]
            Z[i, j] = acc / np.sqrt(d)
    return Z


def pareto_brute_force(points):
    """O(n^2) dominance scan; points have .sparsity and .recall."""
    out = []
    for p in points:
        dominated = False
        for q in points:
            if (
                q.sparsity >= p.sparsity
                and q.recall >= p.recall
                and (q.sparsity > p.sparsity or q.recall > p.recall)
            ):
                dominated = True
                break
        if not dominated:
            out.append(p)
    return out


def bucket_intersection_edges(q_buckets, k_buckets, causal=False):
    """Double loop over pairs: edge iff the bucket sets intersect."""
    edges = set()
    for i, qb in enumerate(q_buckets):
        for j, kb in enumerate(k_buckets):
            if causal and j > i:
                continue
            if set(qb) & set(kb):
                edges.add((i, j))
    return edges


def central_difference_grad(loss_fn, W, h=1e-5):
    """Central finite differences of a scalar function of a matrix."""
    g = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp = W.copy()
        Wm = W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        g[idx] = (loss_fn(Wp) - loss_fn(Wm)) / (2.0 * h)
    return g
