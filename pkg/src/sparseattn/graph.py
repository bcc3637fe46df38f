"""Attention graphs: ground-truth extraction from entmax attention, and the
recall / sparsity metrics used to score predicted graphs.

A graph is the bipartite edge set between n queries and m keys; the
ground-truth graph of a head contains exactly the query-key pairs that get
nonzero entmax probability.  Causal graphs (decoder self-attention) only
admit edges with j <= i and use n(n+1)/2 as the sparsity denominator.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .entmax import DEFAULT_PARAMS, SUPPORT_TOL, EntmaxParams, masked_entmax
from .errors import DataError


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-head query/key matrices; the raw material for attention graphs.

    layer / head / instance are bookkeeping labels used by manifests and
    sweep records; they do not affect any computation.
    """

    Q: np.ndarray
    K: np.ndarray
    causal: bool = False
    layer: int = 0
    head: int = 0
    instance: int = 0

    def __post_init__(self):
        Q = _frozen(self.Q)
        K = _frozen(self.K)
        if Q.ndim != 2 or K.ndim != 2:
            raise ValueError("Q and K must be 2-D matrices")
        if Q.shape[1] != K.shape[1]:
            raise ValueError(f"Q has d={Q.shape[1]} but K has d={K.shape[1]}")
        if self.causal and Q.shape[0] != K.shape[0]:
            raise ValueError("causal attention requires n == m")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(K))):
            raise ValueError("Q and K must be finite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.K.shape[0]

    @property
    def d(self) -> int:
        return self.Q.shape[1]


class AttentionGraph:
    """Immutable edge set between n queries and m keys.

    Edges are stored as a lexicographically sorted coordinate list so that
    iteration order, metrics, and file output are reproducible.
    """

    __slots__ = ("n", "m", "causal", "_lin")

    def __init__(self, n, m, edges=(), causal=False):
        n = int(n)
        m = int(m)
        if n < 1 or m < 1:
            raise ValueError("graph needs n >= 1 and m >= 1")
        if causal and n != m:
            raise ValueError("causal graph requires n == m")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                       dtype=np.int64).reshape(-1, 2)
        if e.size:
            if e[:, 0].min() < 0 or e[:, 0].max() >= n:
                raise ValueError("edge query index out of range")
            if e[:, 1].min() < 0 or e[:, 1].max() >= m:
                raise ValueError("edge key index out of range")
            if causal and np.any(e[:, 1] > e[:, 0]):
                raise ValueError("causal graph admits only edges with j <= i")
        self.n = n
        self.m = m
        self.causal = bool(causal)
        lin = np.unique(e[:, 0] * m + e[:, 1])
        lin.setflags(write=False)
        self._lin = lin

    @classmethod
    def from_dense(cls, dense, causal=False):
        dense = np.asarray(dense, dtype=bool)
        return cls(dense.shape[0], dense.shape[1], np.argwhere(dense), causal=causal)

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) int64 array of (i, j) pairs, sorted lexicographically."""
        return np.stack([self._lin // self.m, self._lin % self.m], axis=1)

    @property
    def edge_count(self) -> int:
        return int(self._lin.size)

    def edge_set(self):
        return {(int(i), int(j)) for i, j in self.edges}

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.n * self.m, dtype=bool)
        dense[self._lin] = True
        return dense.reshape(self.n, self.m)

    def __eq__(self, other):
        return (
            isinstance(other, AttentionGraph)
            and self.n == other.n
            and self.m == other.m
            and self.causal == other.causal
            and np.array_equal(self._lin, other._lin)
        )

    __hash__ = None

    def __repr__(self):
        kind = "causal" if self.causal else "full"
        return f"AttentionGraph({self.n}x{self.m}, {kind}, {self.edge_count} edges)"


def admissible_mask(n: int, m: int, causal: bool) -> np.ndarray:
    """Boolean (n, m) mask of admissible positions (lower triangle if causal)."""
    if causal:
        return np.tril(np.ones((n, n), dtype=bool))
    return np.ones((n, m), dtype=bool)


def admissible_count(n: int, m: int, causal: bool) -> int:
    return n * (n + 1) // 2 if causal else n * m


def attention_scores(sm: ScoreMatrix) -> np.ndarray:
    """Scaled dot-product scores Z = Q K^T / sqrt(d)."""
    return (sm.Q @ sm.K.T) / np.sqrt(sm.d)


def _probs_on_mask(Z, valid, params: EntmaxParams) -> np.ndarray:
    if params.alpha == 1.5:
        return _kernels.entmax15_masked_rows(Z, valid)
    P = np.zeros_like(Z)
    for i in range(Z.shape[0]):
        if valid[i].any():
            P[i] = masked_entmax(Z[i], valid[i], params)
    return P


def attention_probs(sm: ScoreMatrix, params: EntmaxParams = DEFAULT_PARAMS) -> np.ndarray:
    """Row-wise entmax attention probabilities (causal mask applied)."""
    Z = attention_scores(sm)
    return _probs_on_mask(Z, admissible_mask(sm.n, sm.m, sm.causal), params)


def attention_probs_masked(
    sm: ScoreMatrix, graph: AttentionGraph, params: EntmaxParams = DEFAULT_PARAMS
) -> np.ndarray:
    """Attention probabilities recomputed with scores masked to ``graph``.

    Rows with no predicted edge are left as all-zero.  When the graph
    contains the true support of every row, the result equals the dense
    probabilities exactly (sparse-consistency).
    """
    if (graph.n, graph.m, graph.causal) != (sm.n, sm.m, sm.causal):
        raise ValueError("graph shape/causal flag does not match score matrix")
    Z = attention_scores(sm)
    valid = graph.to_dense() & admissible_mask(sm.n, sm.m, sm.causal)
    return _probs_on_mask(Z, valid, params)


def extract_graph(sm: ScoreMatrix, params: EntmaxParams = DEFAULT_PARAMS) -> AttentionGraph:
    """Ground-truth attention graph: edges where entmax probability > 0."""
    P = attention_probs(sm, params)
    return AttentionGraph.from_dense(P > SUPPORT_TOL, causal=sm.causal)


def _check_same_shape(a: AttentionGraph, b: AttentionGraph):
    if (a.n, a.m, a.causal) != (b.n, b.m, b.causal):
        raise ValueError(
            f"graph shape mismatch: {a.n}x{a.m} causal={a.causal} "
            f"vs {b.n}x{b.m} causal={b.causal}"
        )


def recall(pred: AttentionGraph, gold: AttentionGraph) -> float:
    """|pred intersect gold| / |gold|."""
    _check_same_shape(pred, gold)
    if gold.edge_count == 0:
        raise ValueError("recall is undefined for an empty gold graph")
    hits = np.intersect1d(pred._lin, gold._lin, assume_unique=True).size
    return hits / gold.edge_count


def sparsity(g: AttentionGraph) -> float:
    """1 - |edges| / admissible pairs (causal admits n(n+1)/2 pairs)."""
    return 1.0 - g.edge_count / admissible_count(g.n, g.m, g.causal)


def graph_union(a: AttentionGraph, b: AttentionGraph) -> AttentionGraph:
    _check_same_shape(a, b)
    out = AttentionGraph(a.n, a.m, causal=a.causal)
    lin = np.union1d(a._lin, b._lin)
    lin.setflags(write=False)
    out._lin = lin
    return out


def write_graph(g: AttentionGraph, path):
    """Graph file: header ``n m causal edge_count`` then one ``i j`` per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{g.n} {g.m} {int(g.causal)} {g.edge_count}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


def read_graph(path) -> AttentionGraph:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}:1: empty graph file")
    head = lines[0].split()
    if len(head) != 4:
        raise DataError(f"{path}:1: expected header 'n m causal edge_count'")
    try:
        n, m, causal, count = (int(x) for x in head)
    except ValueError:
        raise DataError(f"{path}:1: non-integer header field") from None
    if causal not in (0, 1):
        raise DataError(f"{path}:1: causal flag must be 0 or 1")
    if len(lines) - 1 != count:
        raise DataError(f"{path}: header promises {count} edges, found {len(lines) - 1}")
    edges = np.empty((count, 2), dtype=np.int64)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'i j'")
        try:
            edges[lineno - 2] = (int(parts[0]), int(parts[1]))
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer edge index") from None
    try:
        return AttentionGraph(n, m, edges, causal=bool(causal))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
