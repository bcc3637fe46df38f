"""Lloyd's k-means with k-means++ seeding, restarts, and deterministic ties.

Fitted centroids double as bucket centers for the clustering predictor:
queries and keys are assigned to their k closest centroids (never left
unassigned), with distance ties broken toward the lower centroid index.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class KMeansConfig:
    n_init: int = 10
    max_iter: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.n_init < 1 or self.max_iter < 1:
            raise ValueError("n_init and max_iter must be >= 1")


@dataclass(frozen=True)
class Centroids:
    C: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] < 1:
            raise ValueError("centroids must form a (B, r) matrix with B >= 1")
        if not np.all(np.isfinite(C)):
            raise ValueError("centroids must be finite")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def B(self) -> int:
        return self.C.shape[0]

    @property
    def r(self) -> int:
        return self.C.shape[1]


def _kmeanspp_seed(X, B, rng):
    N = X.shape[0]
    centers = np.empty((B, X.shape[1]))
    centers[0] = X[rng.integers(N)]
    closest = _kernels.pairwise_sqdist(X, centers[:1]).ravel()
    for b in range(1, B):
        total = closest.sum()
        if total <= 0.0:
            # all points coincide with chosen centers; any choice is optimal
            centers[b] = X[rng.integers(N)]
            continue
        probs = closest / total
        centers[b] = X[rng.choice(N, p=probs)]
        d_new = _kernels.pairwise_sqdist(X, centers[b : b + 1]).ravel()
        closest = np.minimum(closest, d_new)
    return centers


def _lloyd(X, centers, max_iter):
    N = X.shape[0]
    B = centers.shape[0]
    labels = np.full(N, -1, dtype=np.int64)
    for _ in range(max_iter):
        new_labels, _ = _kernels.kmeans_assign(X, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=B)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        centers = centers.copy()
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            # re-seed each empty cluster at the point farthest from its center
            dists = _kernels.pairwise_sqdist(X, centers)
            own = dists[np.arange(N), labels].copy()
            for b in np.flatnonzero(~nonempty):
                far = int(np.argmax(own))
                centers[b] = X[far]
                own[far] = -1.0
    labels, inertia = _kernels.kmeans_assign(X, centers)
    return centers, labels, float(inertia)


def kmeans_fit(X, B: int, cfg: KMeansConfig = KMeansConfig()) -> Centroids:
    """Fit B centroids: k-means++ init, up to cfg.n_init restarts keeping the
    lowest inertia, at most cfg.max_iter Lloyd iterations per restart,
    stopping when assignments stabilize.  Deterministic per cfg.seed.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be an (N, r) matrix")
    if B < 1:
        raise ValueError("B must be >= 1")
    if X.shape[0] < B:
        raise ValueError(f"need at least B={B} points, got {X.shape[0]}")
    best = None
    best_inertia = np.inf
    for init in range(cfg.n_init):
        rng = np.random.default_rng((cfg.seed, init))
        centers = _kmeanspp_seed(X, B, rng)
        centers, _, inertia = _lloyd(X, centers, cfg.max_iter)
        if inertia < best_inertia:
            best_inertia = inertia
            best = centers
    return Centroids(best)


def cluster_assign_topk(x, centroids: Centroids, k: int):
    """The k closest centroids to x, as a sorted tuple of 1-based bucket ids.

    Ties in distance go to the lower centroid index.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (centroids.r,):
        raise ValueError(f"expected an r={centroids.r} vector, got shape {x.shape}")
    if not 1 <= k <= centroids.B:
        raise ValueError(f"k must be in [1, {centroids.B}], got {k}")
    d = _kernels.pairwise_sqdist(x[None, :], centroids.C).ravel()
    order = np.argsort(d, kind="stable")  # stable sort -> lower index wins ties
    return tuple(sorted(int(b) + 1 for b in order[:k]))


def assign_topk_membership(X, centroids: Centroids, k: int) -> np.ndarray:
    """Boolean (N, B) membership matrix of each row's k closest centroids."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if not 1 <= k <= centroids.B:
        raise ValueError(f"k must be in [1, {centroids.B}], got {k}")
    D = _kernels.pairwise_sqdist(X, centroids.C)
    order = np.argsort(D, axis=1, kind="stable")
    member = np.zeros((X.shape[0], centroids.B), dtype=bool)
    rows = np.repeat(np.arange(X.shape[0]), k)
    member[rows, order[:, :k].ravel()] = True
    return member


def save_centroids(c: Centroids, path):
    """Centroid checkpoint: header ``B r`` then B rows of r floats."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{c.B} {c.r}\n")
        for row in c.C:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_centroids(path) -> Centroids:
    from .errors import DataError

    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}:1: empty centroid file")
    parts = lines[0].split()
    if len(parts) != 2:
        raise DataError(f"{path}:1: expected header 'B r'")
    try:
        B, r = int(parts[0]), int(parts[1])
    except ValueError:
        raise DataError(f"{path}:1: non-integer header field") from None
    if len(lines) - 1 != B:
        raise DataError(f"{path}: header promises {B} rows, found {len(lines) - 1}")
    C = np.empty((B, r))
    for lineno, line in enumerate(lines[1:], start=2):
        vals = line.split()
        if len(vals) != r:
            raise DataError(f"{path}:{lineno}: expected {r} floats")
        try:
            C[lineno - 2] = [float(v) for v in vals]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
    return Centroids(C)
