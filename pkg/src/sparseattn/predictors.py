"""Predictors of the entmax attention graph from projected queries/keys.

Three learned strategies (distance threshold, balanced quantization,
top-k clustering) plus the fixed/learned baselines they are compared
against (window+global patterns, random blocks, sign-hyperplane LSH,
per-centroid top-k routing).  Bucket-based predictors share one rule: an
edge is predicted iff query and key meet in at least one bucket.

Bucket ids are 1-based everywhere in the public surface; membership
matrices use 0-based columns internally.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .graph import AttentionGraph, admissible_mask, graph_union
from .kmeans import Centroids, assign_topk_membership


@dataclass(frozen=True)
class BucketAssignment:
    """Per-token bucket membership for one side (query or key).

    Every predictor assigns each token at least one bucket, except the
    routing baseline where unselected tokens legitimately end up with an
    empty set.
    """

    membership: np.ndarray
    side: str = "pooled"

    def __post_init__(self):
        member = np.array(self.membership, dtype=bool)
        if member.ndim != 2:
            raise ValueError("membership must be a (tokens, B) boolean matrix")
        if self.side not in ("query", "key", "pooled"):
            raise ValueError(f"side must be query/key/pooled, got {self.side!r}")
        member.setflags(write=False)
        object.__setattr__(self, "membership", member)

    @property
    def n_tokens(self) -> int:
        return self.membership.shape[0]

    @property
    def n_buckets(self) -> int:
        return self.membership.shape[1]

    def token_buckets(self):
        """List of sorted tuples of 1-based bucket ids, one per token."""
        return [tuple(int(b) + 1 for b in np.flatnonzero(row)) for row in self.membership]

    def with_side(self, side: str) -> "BucketAssignment":
        return BucketAssignment(self.membership, side)

    def restrict(self, rows, side: str) -> "BucketAssignment":
        return BucketAssignment(self.membership[rows], side)


@dataclass(frozen=True)
class PatternConfig:
    """Fixed window + global-token pattern added to learned graphs."""

    window: int = 0
    global_tokens: tuple = field(default_factory=tuple)
    causal: bool = False

    def __post_init__(self):
        if self.window < 0 or (self.window > 0 and self.window % 2 == 0):
            raise ValueError("window must be 0 or an odd positive integer")
        g = tuple(sorted(int(t) for t in set(self.global_tokens)))
        if g and g[0] < 0:
            raise ValueError("global token indices must be nonnegative")
        object.__setattr__(self, "global_tokens", g)


def distance_pairing(Qp, Kp, t: float, causal: bool = False) -> AttentionGraph:
    """Edge (i, j) iff ||q'_i - k'_j||_2 <= t (ties included)."""
    if t < 0:
        raise ValueError("distance threshold must be >= 0")
    Qp = np.ascontiguousarray(Qp, dtype=np.float64)
    Kp = np.ascontiguousarray(Kp, dtype=np.float64)
    dense = _kernels.pairwise_sqdist(Qp, Kp) <= t * t
    dense &= admissible_mask(Qp.shape[0], Kp.shape[0], causal)
    return AttentionGraph.from_dense(dense, causal=causal)


def bin_boundaries(X, beta: int) -> np.ndarray:
    """Balanced-bin cut values per dimension, shape (r, beta - 1).

    Cut g is the value closing bin g: sorted values are split into
    contiguous groups of ceil(N / beta) and the last element of each group
    becomes a cut.  Ascending (non-strictly, if the data has duplicates).
    """
    X = np.asarray(X, dtype=np.float64)
    N, r = X.shape
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if beta > N:
        raise ValueError(f"beta={beta} exceeds the {N} available values")
    size = -(-N // beta)  # ceil
    idx = np.minimum(np.arange(1, beta) * size - 1, N - 1)
    srt = np.sort(X, axis=0)
    return srt[idx].T.copy()


def assign_with_boundaries(X, cuts) -> BucketAssignment:
    """Bucket membership from precomputed per-dimension cut values.

    Dimension rho (0-based) with beta bins contributes bucket ids
    rho * beta + bin + 1; values equal to a cut stay in the lower bin, so
    identical values always share a bucket.
    """
    X = np.asarray(X, dtype=np.float64)
    cuts = np.asarray(cuts, dtype=np.float64)
    N, r = X.shape
    if cuts.ndim != 2 or cuts.shape[0] != r:
        raise ValueError(f"cuts must be (r={r}, beta-1), got shape {cuts.shape}")
    beta = cuts.shape[1] + 1
    member = np.zeros((N, r * beta), dtype=bool)
    for rho in range(r):
        bins = np.searchsorted(cuts[rho], X[:, rho], side="left")
        member[np.arange(N), rho * beta + bins] = True
    return BucketAssignment(member)


def quantize_assign(X, beta: int, side: str = "pooled") -> BucketAssignment:
    """Balanced fixed-size binning of each projected dimension into beta bins.

    Every token lands in exactly r buckets (one per dimension) out of the
    B = r * beta total.  Pass the pooled query+key matrix so both sides
    share boundaries; ``quantize_qk`` does the pooling and splitting.
    """
    return assign_with_boundaries(X, bin_boundaries(X, beta)).with_side(side)


def quantize_qk(Qp, Kp, beta: int):
    """Quantize queries and keys jointly (shared balanced bins per dimension)."""
    Qp = np.asarray(Qp, dtype=np.float64)
    Kp = np.asarray(Kp, dtype=np.float64)
    pooled = quantize_assign(np.vstack([Qp, Kp]), beta)
    n = Qp.shape[0]
    return pooled.restrict(slice(None, n), "query"), pooled.restrict(slice(n, None), "key")


def cluster_qk(Qp, Kp, centroids: Centroids, k: int):
    """Assign queries and keys to their k closest shared centroids."""
    qa = BucketAssignment(assign_topk_membership(Qp, centroids, k), "query")
    ka = BucketAssignment(assign_topk_membership(Kp, centroids, k), "key")
    return qa, ka


def buckets_to_graph(qa: BucketAssignment, ka: BucketAssignment, causal: bool = False) -> AttentionGraph:
    """Edge (i, j) iff query i and key j share at least one bucket."""
    if qa.n_buckets != ka.n_buckets:
        raise ValueError(
            f"bucket universes differ: {qa.n_buckets} vs {ka.n_buckets}"
        )
    hits = qa.membership.astype(np.int64) @ ka.membership.astype(np.int64).T
    dense = hits > 0
    dense &= admissible_mask(qa.n_tokens, ka.n_tokens, causal)
    return AttentionGraph.from_dense(dense, causal=causal)


def window_global_graph(n: int, m: int, pc: PatternConfig) -> AttentionGraph:
    """Diagonal band of width +-floor(w/2) plus rows/columns of global tokens."""
    for g in pc.global_tokens:
        if g >= n:
            raise ValueError(f"global token {g} out of range for n={n}")
    dense = np.zeros((n, m), dtype=bool)
    if pc.window > 0:
        half = pc.window // 2
        i = np.arange(n)[:, None]
        j = np.arange(m)[None, :]
        dense |= np.abs(i - j) <= half
    for g in pc.global_tokens:
        dense[g, :] = True  # global token attends everywhere
        if g < m:
            dense[:, g] = True  # and is attended by everyone
    dense &= admissible_mask(n, m, pc.causal)
    return AttentionGraph.from_dense(dense, causal=pc.causal)


def bigbird_random_blocks(
    n: int,
    m: int,
    num_blocks: int,
    block_size: int = 1,
    seed: int = 0,
    causal: bool = False,
) -> AttentionGraph:
    """Uniformly sampled distinct off-diagonal blocks, expanded to edges.

    Diagonal blocks are excluded (the window pattern supplies those);
    sampling is without replacement and deterministic per seed.
    """
    if num_blocks < 0:
        raise ValueError("num_blocks must be >= 0")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    nb = -(-n // block_size)
    mb = -(-m // block_size)
    bi, bj = np.meshgrid(np.arange(nb), np.arange(mb), indexing="ij")
    keep = bi != bj
    if causal:
        keep &= bj < bi
    cells = np.stack([bi[keep], bj[keep]], axis=1)
    rng = np.random.default_rng(seed)
    take = min(num_blocks, len(cells))
    chosen = cells[rng.choice(len(cells), size=take, replace=False)] if take else cells[:0]
    dense = np.zeros((n, m), dtype=bool)
    for cbi, cbj in chosen:
        dense[cbi * block_size : (cbi + 1) * block_size,
              cbj * block_size : (cbj + 1) * block_size] = True
    dense &= admissible_mask(n, m, causal)
    return AttentionGraph.from_dense(dense, causal=causal)


def lsh_assign(X, rounds: int, num_buckets: int, seed: int = 0) -> BucketAssignment:
    """Signed random-hyperplane hashing; each round contributes one bucket.

    ceil(log2(num_buckets)) hyperplanes per round produce a sign code taken
    mod num_buckets, for a bucket universe of rounds * num_buckets.  Queries
    and keys hashed with the same seed share the hyperplanes, mirroring
    shared-QK hashing.
    """
    if rounds < 1 or num_buckets < 1:
        raise ValueError("rounds and num_buckets must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    N, dim = X.shape
    n_planes = int(np.ceil(np.log2(num_buckets))) if num_buckets > 1 else 0
    rng = np.random.default_rng(seed)
    planes = rng.normal(size=(rounds, n_planes, dim))
    member = np.zeros((N, rounds * num_buckets), dtype=bool)
    weights = 1 << np.arange(n_planes)
    for rd in range(rounds):
        if n_planes:
            bits = (X @ planes[rd].T) > 0
            codes = (bits @ weights) % num_buckets
        else:
            codes = np.zeros(N, dtype=np.int64)
        member[np.arange(N), rd * num_buckets + codes] = True
    return BucketAssignment(member)


def routing_assign(X, centroids: Centroids, topk_points: int) -> BucketAssignment:
    """Each centroid claims its topk_points closest tokens.

    A token's bucket set is the set of centroids that claimed it, which may
    be empty; that per-centroid (rather than per-token) top-k is exactly
    what distinguishes this baseline.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    N = X.shape[0]
    if not 0 <= topk_points <= N:
        raise ValueError(f"topk_points must be in [0, {N}], got {topk_points}")
    D = _kernels.pairwise_sqdist(X, centroids.C)
    member = np.zeros((N, centroids.B), dtype=bool)
    order = np.argsort(D, axis=0, kind="stable")  # ties -> lower token index
    for b in range(centroids.B):
        member[order[:topk_points, b], b] = True
    return BucketAssignment(member)


def combine_with_patterns(learned: AttentionGraph, pc: PatternConfig) -> AttentionGraph:
    """Union of a learned graph with the window/global pattern."""
    if pc.causal != learned.causal:
        raise ValueError("pattern causal flag does not match the graph")
    return graph_union(learned, window_global_graph(learned.n, learned.m, pc))


def save_bins(cuts, path):
    """Bin-boundary file: header ``r beta`` then r rows of beta-1 cut values."""
    cuts = np.asarray(cuts, dtype=np.float64)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{cuts.shape[0]} {cuts.shape[1] + 1}\n")
        for row in cuts:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_bins(path) -> np.ndarray:
    from .errors import DataError

    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}:1: empty bin file")
    parts = lines[0].split()
    if len(parts) != 2:
        raise DataError(f"{path}:1: expected header 'r beta'")
    try:
        r, beta = int(parts[0]), int(parts[1])
    except ValueError:
        raise DataError(f"{path}:1: non-integer header field") from None
    if len(lines) - 1 != r:
        raise DataError(f"{path}: header promises {r} rows, found {len(lines) - 1}")
    cuts = np.empty((r, beta - 1))
    for lineno, line in enumerate(lines[1:], start=2):
        vals = line.split()
        if len(vals) != beta - 1:
            raise DataError(f"{path}:{lineno}: expected {beta - 1} cut values")
        try:
            cuts[lineno - 2] = [float(v) for v in vals]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
        if np.any(np.diff(cuts[lineno - 2]) < 0):
            raise DataError(f"{path}:{lineno}: cut values must be ascending")
    return cuts
