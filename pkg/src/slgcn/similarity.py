"""Node similarity from interaction distributions.

A node's interaction profile is its normalized distribution of positive
interaction weights over each (relation, target-type) slice. Similarity
between two same-type nodes is the negative distance between their
profiles (KL divergence or an L1/L2 norm), optionally combined across
slices with importance weights. Classical proximity scores (two-hop path
probability, common-neighbor counts, random-walk visit frequency) are
provided for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .graph import InteractionGraph, NodeRef, TranslatedGraph, csr_row
from .seeds import STAGE_WALK, sub_rng

DA_KL = "da-kl"
DA_L1 = "da-l1"
DA_L2 = "da-l2"
FIRST_ORDER = "first-order"
SECOND_ORDER = "second-order"
RANDOM_WALK = "random-walk"

DA_METRICS = (DA_KL, DA_L1, DA_L2)
DEFAULT_EPSILON = 1e-3

SliceKey = tuple[str, str]  # (relation, target_type)
ProfileSlice = tuple[np.ndarray, np.ndarray]  # sorted indices, probabilities


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    metric: str

    def __post_init__(self):
        if self.metric in DA_METRICS and self.value > 1e-12:
            raise DataError(f"{self.metric} similarity must be <= 0, got {self.value}")


@dataclass
class RelationWeights:
    """Importance weight per (relation, target_type) slice."""

    weights: dict[SliceKey, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.weights:
            if any(w < 0 for w in self.weights.values()):
                raise ConfigError("relation weights must be non-negative")
            if not any(w > 0 for w in self.weights.values()):
                raise ConfigError("at least one relation weight must be positive")

    def get(self, key: SliceKey, default: float = 0.0) -> float:
        return self.weights.get(key, default)


@dataclass
class InteractionProfile:
    owner: NodeRef
    slices: dict[SliceKey, ProfileSlice]


class ProfileStore:
    """Normalized interaction distributions for every node of a graph.

    Pass a positive-only graph view; below-threshold interactions must not
    contribute to preference distributions.
    """

    def __init__(self, graph: InteractionGraph):
        self.graph = graph
        self._matrices: dict[tuple[str, SliceKey], sp.csr_matrix] = {}
        self._sq_norms: dict[tuple[str, SliceKey], np.ndarray] = {}

    def slice_keys(self, node_type: str) -> list[SliceKey]:
        return self.graph.slice_keys(node_type)

    def _matrix(self, node_type: str, key: SliceKey) -> sp.csr_matrix:
        mkey = (node_type, key)
        if mkey not in self._matrices:
            adj = self.graph.adjacency(node_type, key[0], key[1]).astype(np.float64)
            sums = np.asarray(adj.sum(axis=1)).ravel()
            scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
            mat = (sp.diags(scale) @ adj).tocsr()
            mat.sort_indices()
            self._matrices[mkey] = mat
        return self._matrices[mkey]

    def _slice_sq_norms(self, node_type: str, key: SliceKey) -> np.ndarray:
        mkey = (node_type, key)
        if mkey not in self._sq_norms:
            mat = self._matrix(node_type, key)
            sq = mat.copy()
            sq.data = sq.data * sq.data
            self._sq_norms[mkey] = np.asarray(sq.sum(axis=1)).ravel()
        return self._sq_norms[mkey]

    def slice(self, node: NodeRef, key: SliceKey) -> ProfileSlice:
        mat = self._matrix(node.node_type, key)
        idx, p = csr_row(mat, node.index)
        return idx.astype(np.int64), p.astype(np.float64)

    def has_support(self, node: NodeRef, key: SliceKey) -> bool:
        mat = self._matrix(node.node_type, key)
        return mat.indptr[node.index] < mat.indptr[node.index + 1]

    def profile(self, node: NodeRef) -> InteractionProfile:
        slices = {}
        for key in self.slice_keys(node.node_type):
            idx, p = self.slice(node, key)
            if len(idx):
                slices[key] = (idx, p)
        return InteractionProfile(node, slices)


def interaction_profile(
    graph: InteractionGraph, node: NodeRef, relation: str, target_type: str
) -> ProfileSlice:
    """Normalized interaction distribution of node under one slice."""
    graph.check_ref(node)
    idx, w = graph.neighbor_slice(node, relation, target_type)
    if len(idx) == 0:
        raise DataError(
            f"no interactions for {node} under ({relation}, {target_type})"
        )
    return idx, w / w.sum()


# -- pairwise distances on sparse slices ---------------------------------


def _kl_sparse(x: ProfileSlice, y: ProfileSlice, eps: float) -> float:
    """KL divergence of x from y, epsilon-smoothed over the union support."""
    ix, px = x
    iy, py = y
    common, cx, cy = np.intersect1d(ix, iy, assume_unique=True, return_indices=True)
    if eps == 0.0:
        if len(common) < len(ix):
            raise DataError(
                "divergent KL: x has support outside y's; use smoothing"
            )
        return float(np.sum(px[cx] * (np.log(px[cx]) - np.log(py[cy]))))
    union = len(ix) + len(iy) - len(common)
    zx = px.sum() + eps * union
    zy = py.sum() + eps * union
    log_eps = math.log(eps)

    sx = px + eps
    lx = np.log(sx)
    sy = py + eps
    ly = np.log(sy)
    # common entries
    total = np.sum(sx[cx] * (lx[cx] - ly[cy]))
    # x-only entries: y reads as bare eps there
    total += (np.sum(sx * lx) - np.sum(sx[cx] * lx[cx])) - log_eps * (
        np.sum(sx) - np.sum(sx[cx])
    )
    # y-only entries: x reads as bare eps there
    n_y_only = len(iy) - len(common)
    total += eps * (n_y_only * log_eps - (np.sum(ly) - np.sum(ly[cy])))
    # normalization of both distributions shifts every term uniformly
    return float(total / zx + math.log(zy) - math.log(zx))


def _l1_sparse(x: ProfileSlice, y: ProfileSlice) -> float:
    ix, px = x
    iy, py = y
    _, cx, cy = np.intersect1d(ix, iy, assume_unique=True, return_indices=True)
    overlap = np.sum(np.abs(px[cx] - py[cy]) - px[cx] - py[cy])
    return float(px.sum() + py.sum() + overlap)


def _l2_sparse(x: ProfileSlice, y: ProfileSlice) -> float:
    ix, px = x
    iy, py = y
    _, cx, cy = np.intersect1d(ix, iy, assume_unique=True, return_indices=True)
    d = px[cx] - py[cy]
    overlap = np.sum(d * d - px[cx] * px[cx] - py[cy] * py[cy])
    sq = np.dot(px, px) + np.dot(py, py) + overlap
    return float(math.sqrt(max(sq, 0.0)))


def _slice_distance(x: ProfileSlice, y: ProfileSlice, metric: str, eps: float) -> float:
    if len(x[0]) == 0 or len(y[0]) == 0:
        raise DataError("distance undefined on an empty support")
    if metric == DA_KL:
        return _kl_sparse(x, y, eps)
    if metric == DA_L1:
        return _l1_sparse(x, y)
    if metric == DA_L2:
        return _l2_sparse(x, y)
    raise ConfigError(f"unknown DA metric {metric!r}")


def da_similarity_kl(
    x: ProfileSlice, y: ProfileSlice, eps: float = DEFAULT_EPSILON
) -> SimilarityScore:
    """Negative KL divergence between two profile slices.

    With eps > 0 both distributions are additively smoothed over the
    union support and re-normalized; eps = 0 requires x's support to be
    contained in y's.
    """
    if eps < 0:
        raise ConfigError("smoothing epsilon must be >= 0")
    # KL is non-negative; tiny negative values are floating-point noise
    d = max(_slice_distance(x, y, DA_KL, eps), 0.0)
    return SimilarityScore(-d, DA_KL)


def da_similarity_norm(
    x: ProfileSlice, y: ProfileSlice, norm: str = "l1"
) -> SimilarityScore:
    """Negative L1 or L2 distance between two profile slices (symmetric)."""
    metric = {"l1": DA_L1, "l2": DA_L2, DA_L1: DA_L1, DA_L2: DA_L2}.get(norm)
    if metric is None:
        raise ConfigError(f"unknown norm {norm!r}")
    return SimilarityScore(-_slice_distance(x, y, metric, 0.0), metric)


def _active_slice_weights(
    profiles: ProfileStore,
    x: NodeRef,
    y: NodeRef,
    weights: RelationWeights | None,
) -> list[tuple[SliceKey, float]]:
    keys = [
        k
        for k in profiles.slice_keys(x.node_type)
        if profiles.has_support(x, k) and profiles.has_support(y, k)
    ]
    if not keys:
        raise DataError(f"no common interaction slice for {x} and {y}")
    if weights is None:
        lam = [(k, 1.0) for k in keys]
    else:
        lam = [(k, weights.get(k)) for k in keys]
    total = sum(w for _, w in lam)
    if total <= 0:
        raise DataError("all active slice weights are zero")
    return [(k, w / total) for k, w in lam]


def da_similarity_hetero(
    x: NodeRef,
    y: NodeRef,
    profiles: ProfileStore,
    weights: RelationWeights | None = None,
    metric: str = DA_L1,
    eps: float = DEFAULT_EPSILON,
) -> SimilarityScore:
    """Weighted DA similarity across every shared interaction slice.

    Slices where either node has no interactions are skipped and the
    remaining weights re-normalized to sum to one.
    """
    if x.node_type != y.node_type:
        raise DataError("DA similarity is defined between same-type nodes")
    total = 0.0
    for key, lam in _active_slice_weights(profiles, x, y, weights):
        if lam == 0.0:
            continue
        total += lam * _slice_distance(
            profiles.slice(x, key), profiles.slice(y, key), metric, eps
        )
    return SimilarityScore(-total, metric)


# -- batch scoring over candidate arrays ----------------------------------


def _batch_norm_distance(
    mat: sp.csr_matrix,
    sq_norms: np.ndarray,
    node_index: int,
    cands: np.ndarray,
    metric: str,
) -> np.ndarray:
    """L1/L2 distances between one row and many rows of a profile matrix."""
    ix, px = csr_row(mat, node_index)
    starts = mat.indptr[cands]
    counts = mat.indptr[cands + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.full(len(cands), np.nan)
    seg_off = np.cumsum(counts) - counts
    flat = np.repeat(starts - seg_off, counts) + np.arange(total)
    cat_idx = mat.indices[flat]
    cat_p = mat.data[flat]

    pos = np.searchsorted(ix, cat_idx)
    pos_c = np.minimum(pos, len(ix) - 1) if len(ix) else np.zeros_like(pos)
    matched = (pos < len(ix)) & (ix[pos_c] == cat_idx) if len(ix) else np.zeros(total, bool)
    px_at = np.where(matched, px[pos_c] if len(ix) else 0.0, 0.0)

    if metric == DA_L1:
        terms = np.where(matched, np.abs(px_at - cat_p) - px_at - cat_p, 0.0)
        base = px.sum() + _segment_sums(cat_p, seg_off, counts)
        return base + _segment_sums(terms, seg_off, counts)
    d = np.where(matched, (px_at - cat_p) ** 2 - px_at * px_at - cat_p * cat_p, 0.0)
    sq = np.dot(px, px) + sq_norms[cands] + _segment_sums(d, seg_off, counts)
    return np.sqrt(np.maximum(sq, 0.0))


def _segment_sums(values: np.ndarray, seg_off: np.ndarray, counts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(counts))
    nonempty = counts > 0
    if values.size:
        sums = np.add.reduceat(values, seg_off[nonempty]) if nonempty.any() else []
        out[nonempty] = sums
    return out


def da_scores(
    profiles: ProfileStore,
    node: NodeRef,
    candidates: np.ndarray,
    metric: str = DA_L1,
    eps: float = DEFAULT_EPSILON,
    weights: RelationWeights | None = None,
) -> np.ndarray:
    """DA similarity values between node and each same-type candidate.

    Vectorized over candidates; slices missing on either side are skipped
    per pair with weight re-normalization, matching da_similarity_hetero.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        return np.zeros(0)
    keys = profiles.slice_keys(node.node_type)
    num = np.zeros(len(candidates))
    den = np.zeros(len(candidates))
    for key in keys:
        lam = weights.get(key) if weights is not None else 1.0
        mat = profiles._matrix(node.node_type, key)
        if not profiles.has_support(node, key):
            continue
        cand_nonempty = (mat.indptr[candidates + 1] - mat.indptr[candidates]) > 0
        if not cand_nonempty.any():
            continue
        active = candidates[cand_nonempty]
        if metric in (DA_L1, DA_L2):
            dist = _batch_norm_distance(
                mat, profiles._slice_sq_norms(node.node_type, key), node.index, active, metric
            )
        else:
            x = profiles.slice(node, key)
            dist = np.array(
                [
                    _kl_sparse(x, profiles.slice(NodeRef(node.node_type, int(c)), key), eps)
                    for c in active
                ]
            )
        num[cand_nonempty] += lam * dist
        den[cand_nonempty] += lam
    if np.any(den == 0):
        bad = candidates[den == 0]
        raise DataError(
            f"no common interaction slice between {node} and candidates {bad[:5]}"
        )
    return -(num / den)


def pair_similarity(
    profiles: ProfileStore,
    x: NodeRef,
    y: NodeRef,
    metric: str = DA_L1,
    eps: float = DEFAULT_EPSILON,
    weights: RelationWeights | None = None,
) -> float:
    return da_similarity_hetero(x, y, profiles, weights, metric, eps).value


# -- classical proximity scores -------------------------------------------


def first_order_scores(tg: TranslatedGraph, node: NodeRef) -> dict[int, float]:
    """Two-hop traversal probability from node to each same-type candidate."""
    idx, scores = tg.path_score_row(node)
    return {int(i): float(s) for i, s in zip(idx, scores)}


def second_order_scores(tg: TranslatedGraph, node: NodeRef) -> dict[int, int]:
    """Number of shared auxiliary neighbors with each candidate."""
    idx, counts = tg.shared_count_row(node)
    return {int(i): int(c) for i, c in zip(idx, counts)}


class WalkIndex:
    """Flattened undirected adjacency over all nodes for random walks.

    Nodes are laid out in canonical type order. Each row stores its
    neighbors' cumulative transition probabilities; a step from a node
    with draw r moves to indices[searchsorted(cumprob_row, r, 'right')].
    """

    def __init__(self, graph: InteractionGraph):
        self.graph = graph
        order = graph.node_types()
        self.offsets = {}
        total = 0
        for t in order:
            self.offsets[t] = total
            total += graph.node_counts[t]
        self.total = total

        rows, cols, vals = [], [], []
        for e in graph.edges:
            s = self.offsets[e.source.node_type] + e.source.index
            d = self.offsets[e.target.node_type] + e.target.index
            rows += [s, d]
            cols += [d, s]
            vals += [e.weight, e.weight]
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(total, total)).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        self.indptr = mat.indptr
        self.indices = mat.indices
        cum = np.empty_like(mat.data)
        for r in range(total):
            lo, hi = mat.indptr[r], mat.indptr[r + 1]
            if hi > lo:
                c = np.cumsum(mat.data[lo:hi])
                cum[lo:hi] = c / c[-1]
        self.cumprob = cum

    def global_id(self, node: NodeRef) -> int:
        return self.offsets[node.node_type] + node.index

    def type_range(self, node_type: str) -> tuple[int, int]:
        lo = self.offsets[node_type]
        return lo, lo + self.graph.node_counts[node_type]


def walk_index_for(graph: InteractionGraph) -> WalkIndex:
    cached = getattr(graph, "_walk_index", None)
    if cached is None:
        cached = WalkIndex(graph)
        graph._walk_index = cached
    return cached


def random_walk_scores(
    graph: InteractionGraph,
    node: NodeRef,
    walks: int = 1000,
    length: int = 4,
    seed: int = 0,
) -> dict[int, float]:
    """L1-normalized visit counts of same-type nodes over seeded walks.

    Draws one uniform number per (walk, step), walk-major; the node's
    private stream derives from (seed, walk stage, node type, index).
    """
    if walks < 1:
        raise ConfigError(f"walks must be >= 1, got {walks}")
    if length < 2:
        raise ConfigError(f"walk length must be >= 2, got {length}")
    widx = walk_index_for(graph)
    start = widx.global_id(node)
    if widx.indptr[start] == widx.indptr[start + 1]:
        return {}

    rng = sub_rng(seed, STAGE_WALK, graph.type_code(node.node_type), node.index)
    draws = rng.random((walks, length))
    lo_t, hi_t = widx.type_range(node.node_type)
    visits = np.zeros(hi_t - lo_t, dtype=np.int64)

    pos = np.full(walks, start, dtype=np.int64)
    for step in range(length):
        r = draws[:, step]
        nxt = np.empty_like(pos)
        for cur in np.unique(pos):
            mask = pos == cur
            lo, hi = widx.indptr[cur], widx.indptr[cur + 1]
            picks = np.searchsorted(widx.cumprob[lo:hi], r[mask], side="right")
            nxt[mask] = widx.indices[lo + picks]
        pos = nxt
        same = (pos >= lo_t) & (pos < hi_t) & (pos != start)
        if same.any():
            visits += np.bincount(pos[same] - lo_t, minlength=hi_t - lo_t)

    total = visits.sum()
    if total == 0:
        return {}
    nz = np.nonzero(visits)[0]
    return {int(i): float(visits[i] / total) for i in nz}


# -- aggregation bound oracle ---------------------------------------------


def dense_distance(p: np.ndarray, q: np.ndarray, metric: str) -> float:
    """Distance between two dense distributions on a shared support."""
    if metric in ("kl", DA_KL):
        mask = p > 0
        with np.errstate(divide="ignore"):
            ratio = np.log(p[mask]) - np.log(q[mask])
        return float(np.sum(p[mask] * ratio))
    if metric in ("l1", DA_L1):
        return float(np.sum(np.abs(p - q)))
    if metric in ("l2", DA_L2):
        return float(np.sqrt(np.sum((p - q) ** 2)))
    raise ConfigError(f"unknown metric {metric!r}")


def aggregation_bound_check(
    p: np.ndarray, qs: list[np.ndarray] | np.ndarray, metric: str
) -> tuple[float, float]:
    """Distance to the mean of qs vs the mean of distances to each q.

    The first value is provably bounded by the second (convexity for KL,
    triangle inequality for norms); callers assert lhs <= rhs + 1e-12.
    """
    qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
    if qs.shape[0] == 0:
        raise DataError("empty distribution list")
    p = np.asarray(p, dtype=np.float64)
    if qs.shape[1] != p.shape[0]:
        raise DataError("distributions must share a common support")
    for arr in (p, *qs):
        if abs(arr.sum() - 1.0) > 1e-9:
            raise DataError("distributions must each sum to 1")
    mean_q = qs.mean(axis=0)
    lhs = dense_distance(p, mean_q, metric)
    rhs = float(np.mean([dense_distance(p, q, metric) for q in qs]))
    return lhs, rhs
