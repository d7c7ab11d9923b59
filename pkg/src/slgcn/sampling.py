"""Neighbor selection and sampled-subgraph quality scoring.

Every user and item node keeps at most K same-type neighbors chosen by a
pluggable strategy (uniform random, random-walk visits, two-hop path
probability, shared-neighbor counts, or distribution-aware similarity),
either greedily (top-K) or by importance sampling. Subgraph quality is
scored per node as the mean similarity to its sampled neighbors and
aggregated over node sets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, DataError
from .graph import ITEM, USER, InteractionGraph, NodeRef, TranslatedGraph
from .seeds import STAGE_SAMPLING, sub_rng
from .similarity import (
    DA_L1,
    DEFAULT_EPSILON,
    ProfileStore,
    RelationWeights,
    SliceKey,
    da_scores,
    pair_similarity,
    random_walk_scores,
)

STRATEGIES = ("random", "walk", "1ord", "2ord", "da")
MODES = ("topk", "importance")

HOMOGENEOUS_TYPES = (USER, ITEM)


@dataclass
class SubgraphSlice:
    """Per-node neighbor lists for one sampled relation slice."""

    key: SliceKey | None  # None: combined over all slices
    neighbors: dict[str, list[np.ndarray]]
    scores: dict[str, list[np.ndarray]]


@dataclass
class SampledSubgraph:
    strategy: str
    k: int
    mode: str
    seed: int
    metric: str | None
    node_counts: dict[str, int]
    slices: list[SubgraphSlice] = field(default_factory=list)

    def neighbor_list(self, node: NodeRef, slice_idx: int = 0) -> np.ndarray:
        return self.slices[slice_idx].neighbors[node.node_type][node.index]

    def score_list(self, node: NodeRef, slice_idx: int = 0) -> np.ndarray:
        return self.slices[slice_idx].scores[node.node_type][node.index]

    def node_types(self) -> list[str]:
        return sorted(self.slices[0].neighbors.keys(), key=_type_order)

    def validate(self) -> None:
        for sl in self.slices:
            for node_type, lists in sl.neighbors.items():
                n = self.node_counts[node_type]
                for idx, neigh in enumerate(lists):
                    if len(neigh) > self.k:
                        raise DataError(f"{node_type} {idx}: more than K neighbors")
                    if len(np.unique(neigh)) != len(neigh):
                        raise DataError(f"{node_type} {idx}: duplicate neighbors")
                    if np.any(neigh == idx):
                        raise DataError(f"{node_type} {idx}: node listed as own neighbor")
                    if len(neigh) and (neigh.min() < 0 or neigh.max() >= n):
                        raise DataError(f"{node_type} {idx}: neighbor index out of range")


def _type_order(t: str) -> tuple[int, str]:
    return (0, t) if t == USER else (1, t) if t == ITEM else (2, t)


# -- selection primitives -------------------------------------------------


def select_topk(scores: Mapping[int, float], k: int) -> list[int]:
    """K candidates with the largest scores; ties broken by ascending index."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    idx = np.fromiter(scores.keys(), dtype=np.int64, count=len(scores))
    vals = np.fromiter(scores.values(), dtype=np.float64, count=len(scores))
    return [int(i) for i in topk_from_arrays(idx, vals, k)]


def topk_from_arrays(idx: np.ndarray, vals: np.ndarray, k: int) -> np.ndarray:
    order = np.lexsort((idx, -vals))
    return idx[order[:k]]


def sample_importance(scores: Mapping[int, float], k: int, seed: int | np.random.Generator) -> list[int]:
    """K draws without replacement, probability proportional to score.

    Scores with negative entries are shifted by their minimum first. When
    every shifted score is zero the draw degenerates to uniform sampling.
    """
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = np.fromiter(scores.keys(), dtype=np.int64, count=len(scores))
    vals = np.fromiter(scores.values(), dtype=np.float64, count=len(scores))
    return [int(i) for i in importance_from_arrays(idx, vals, k, rng)]


def importance_from_arrays(
    idx: np.ndarray, vals: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    n = len(idx)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if n <= k:
        return np.sort(idx)
    w = vals.astype(np.float64)
    if w.min() < 0:
        w = w - w.min()
    if not np.all(np.isfinite(w)):
        raise DataError("non-finite sampling weights")
    if w.sum() == 0:
        warnings.warn("all shifted scores are zero; falling back to uniform sampling")
    chosen = np.empty(k, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for j in range(k):
        remaining = np.nonzero(alive)[0]
        wr = w[remaining]
        total = wr.sum()
        if total <= 0:
            pick = remaining[int(rng.integers(len(remaining)))]
        else:
            cum = np.cumsum(wr)
            pick = remaining[int(np.searchsorted(cum, rng.random() * total, side="right"))]
        chosen[j] = idx[pick]
        alive[pick] = False
    return chosen


# -- subgraph construction -------------------------------------------------


def build_subgraph(
    graph: InteractionGraph,
    tg: TranslatedGraph,
    strategy: str,
    k: int,
    mode: str = "topk",
    seed: int = 0,
    *,
    profiles: ProfileStore | None = None,
    metric: str = DA_L1,
    eps: float = DEFAULT_EPSILON,
    weights: RelationWeights | None = None,
    walks: int = 1000,
    walk_length: int = 4,
    slice_keys: list[SliceKey] | None = None,
    da_cache: "ScoreCache | None" = None,
) -> SampledSubgraph:
    """Sample up to K same-type neighbors for every user and item node.

    Nodes with no candidates keep an empty list; sampling never removes a
    node from the graph. The "da" strategy requires a ProfileStore built
    on the positive interaction view (or a precomputed score cache). With
    slice_keys given, a separate neighbor list is sampled per
    (relation, target_type) slice using that slice's similarity alone.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown sampling strategy {strategy!r}")
    if mode not in MODES:
        raise ConfigError(f"unknown sampling mode {mode!r}")
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    if strategy == "da" and profiles is None and da_cache is None:
        raise ConfigError("DA sampling requires interaction profiles")

    keys: list[SliceKey | None] = list(slice_keys) if slice_keys else [None]
    sub = SampledSubgraph(
        strategy=strategy,
        k=k,
        mode=mode,
        seed=seed,
        metric=metric if strategy == "da" else None,
        node_counts=dict(graph.node_counts),
    )
    for key in keys:
        neighbors: dict[str, list[np.ndarray]] = {}
        scores: dict[str, list[np.ndarray]] = {}
        for node_type in HOMOGENEOUS_TYPES:
            n = graph.node_counts.get(node_type, 0)
            if node_type not in tg.per_type:
                continue
            type_code = graph.type_code(node_type)
            n_lists: list[np.ndarray] = []
            s_lists: list[np.ndarray] = []
            for i in range(n):
                node = NodeRef(node_type, i)
                cand, vals = _strategy_scores(
                    graph, tg, profiles, strategy, node, key,
                    metric=metric, eps=eps, weights=weights,
                    walks=walks, walk_length=walk_length, seed=seed,
                    da_cache=da_cache,
                )
                if len(cand) == 0:
                    n_lists.append(np.zeros(0, dtype=np.int64))
                    s_lists.append(np.zeros(0))
                    continue
                if strategy == "random":
                    rng = sub_rng(seed, STAGE_SAMPLING, type_code, i)
                    take = rng.choice(cand, size=min(k, len(cand)), replace=False)
                elif mode == "topk":
                    take = topk_from_arrays(cand, vals, k)
                else:
                    rng = sub_rng(seed, STAGE_SAMPLING, type_code, i)
                    take = importance_from_arrays(cand, vals, k, rng)
                take = np.asarray(take, dtype=np.int64)
                pos = {int(c): j for j, c in enumerate(cand)}
                n_lists.append(take)
                s_lists.append(np.array([vals[pos[int(t)]] for t in take]))
            neighbors[node_type] = n_lists
            scores[node_type] = s_lists
        sub.slices.append(SubgraphSlice(key, neighbors, scores))
    sub.validate()
    return sub


class ScoreCache:
    """Precomputed per-node (candidates, DA values) arrays, one per type."""

    def __init__(self, metric: str, rows: dict[str, list[tuple[np.ndarray, np.ndarray]]]):
        self.metric = metric
        self.rows = rows

    def row(self, node: NodeRef) -> tuple[np.ndarray, np.ndarray]:
        return self.rows[node.node_type][node.index]

    def lookup(self, node: NodeRef, neighbors: np.ndarray) -> np.ndarray | None:
        """Values for a subset of a node's cached candidates, if all present."""
        cand, vals = self.row(node)
        pos = np.searchsorted(cand, neighbors)
        pos_c = np.minimum(pos, len(cand) - 1) if len(cand) else pos
        if len(cand) == 0 or not np.all((pos < len(cand)) & (cand[pos_c] == neighbors)):
            return None
        return vals[pos_c]


def _strategy_scores(
    graph, tg, profiles, strategy, node, key, *,
    metric, eps, weights, walks, walk_length, seed, da_cache=None,
) -> tuple[np.ndarray, np.ndarray]:
    if strategy == "walk":
        wmap = random_walk_scores(graph, node, walks=walks, length=walk_length, seed=seed)
        cand = np.fromiter(wmap.keys(), dtype=np.int64, count=len(wmap))
        vals = np.fromiter(wmap.values(), dtype=np.float64, count=len(wmap))
        order = np.argsort(cand)
        return cand[order], vals[order]
    if strategy == "1ord":
        return tg.path_score_row(node)
    if strategy == "2ord":
        idx, counts = tg.shared_count_row(node)
        return idx, counts.astype(np.float64)
    # random and da both draw from the translated candidate set
    if strategy == "da" and key is None and da_cache is not None:
        return da_cache.row(node)
    cand = tg.candidates(node)
    if strategy == "random" or len(cand) == 0:
        return cand, np.zeros(len(cand))
    slice_weights = weights
    if key is not None:
        slice_weights = RelationWeights({key: 1.0})
    vals = da_scores(profiles, node, cand, metric=metric, eps=eps, weights=slice_weights)
    return cand, vals


# -- neighborhood quality ---------------------------------------------------


@dataclass
class NeighborhoodQuality:
    """Per-node and aggregate neighborhood similarity of a subgraph."""

    metric: str
    ans: dict[str, np.ndarray]  # NaN where a node has no neighbors

    def _mans_over(self, node_types: list[str]) -> float:
        vals = [v[~np.isnan(v)] for t, v in self.ans.items() if t in node_types]
        pool = np.concatenate(vals) if vals else np.zeros(0)
        if len(pool) == 0:
            raise DataError("no node with sampled neighbors in the requested set")
        return float(pool.mean())

    @property
    def mans_users(self) -> float:
        return self._mans_over([USER])

    @property
    def mans_items(self) -> float:
        return self._mans_over([ITEM])

    @property
    def mans_all(self) -> float:
        return self._mans_over(list(self.ans.keys()))


def ans(subgraph: SampledSubgraph, node: NodeRef, sim: Callable[[NodeRef, NodeRef], float]) -> float:
    """Mean similarity between a node and its sampled neighbors."""
    neigh = subgraph.neighbor_list(node)
    if len(neigh) == 0:
        raise DataError(f"{node} has no sampled neighbors; its quality is undefined")
    return float(
        np.mean([sim(node, NodeRef(node.node_type, int(v))) for v in neigh])
    )


def mans(
    subgraph: SampledSubgraph,
    sim: Callable[[NodeRef, NodeRef], float],
    node_set: str = "all",
) -> float:
    """Mean of per-node neighborhood similarity over a node set.

    Nodes with empty neighbor lists are left out of the average.
    """
    types = {"users": [USER], "items": [ITEM], "all": list(subgraph.slices[0].neighbors)}.get(node_set)
    if types is None:
        raise ConfigError(f"unknown node set {node_set!r}")
    vals = []
    for t in types:
        if t not in subgraph.slices[0].neighbors:
            continue
        for i, neigh in enumerate(subgraph.slices[0].neighbors[t]):
            if len(neigh):
                vals.append(ans(subgraph, NodeRef(t, i), sim))
    if not vals:
        raise DataError("no node with sampled neighbors in the requested set")
    return float(np.mean(vals))


def subgraph_quality(
    subgraph: SampledSubgraph,
    profiles: ProfileStore,
    metric: str = DA_L1,
    eps: float = DEFAULT_EPSILON,
    weights: RelationWeights | None = None,
    da_cache: ScoreCache | None = None,
) -> NeighborhoodQuality:
    """Vectorized per-node neighborhood similarity for a whole subgraph."""
    out: dict[str, np.ndarray] = {}
    sl = subgraph.slices[0]
    use_cache = da_cache is not None and da_cache.metric == metric
    for node_type, lists in sl.neighbors.items():
        vals = np.full(len(lists), np.nan)
        for i, neigh in enumerate(lists):
            if len(neigh) == 0:
                continue
            node = NodeRef(node_type, i)
            got = da_cache.lookup(node, neigh) if use_cache else None
            if got is None:
                got = da_scores(profiles, node, neigh, metric=metric, eps=eps, weights=weights)
            vals[i] = float(np.mean(got))
        out[node_type] = vals
    return NeighborhoodQuality(metric=metric, ans=out)


def quality_sim(
    profiles: ProfileStore,
    metric: str = DA_L1,
    eps: float = DEFAULT_EPSILON,
    weights: RelationWeights | None = None,
) -> Callable[[NodeRef, NodeRef], float]:
    """Similarity callable for ans()/mans() built on a profile store."""

    def sim(a: NodeRef, b: NodeRef) -> float:
        return pair_similarity(profiles, a, b, metric=metric, eps=eps, weights=weights)

    return sim


# -- persistence -------------------------------------------------------------


def write_subgraph(subgraph: SampledSubgraph, path: str, header: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header or []:
            fh.write(f"# {line}\n")
        fh.write(
            f"# strategy={subgraph.strategy} k={subgraph.k} mode={subgraph.mode} "
            f"seed={subgraph.seed} metric={subgraph.metric or '-'}\n"
        )
        for si, sl in enumerate(subgraph.slices):
            tag = "-" if sl.key is None else f"{sl.key[0]}:{sl.key[1]}"
            fh.write(f"# slice {si} {tag}\n")
            for node_type in sorted(sl.neighbors):
                for i, (neigh, vals) in enumerate(zip(sl.neighbors[node_type], sl.scores[node_type])):
                    cells = " ; ".join(f"{int(v)},{float(s)!r}" for v, s in zip(neigh, vals))
                    fh.write(f"{node_type} {i} : {cells}\n")


def read_subgraph(path: str, node_counts: dict[str, int]) -> SampledSubgraph:
    meta = {}
    slices: list[SubgraphSlice] = []
    current: SubgraphSlice | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("strategy="):
                    meta = dict(part.split("=", 1) for part in body.split())
                elif body.startswith("slice "):
                    _, _, tag = body.split(" ", 2)
                    key = None if tag == "-" else tuple(tag.split(":", 1))
                    current = SubgraphSlice(key, {}, {})
                    slices.append(current)
                continue
            if current is None:
                raise DataError(f"{path}:{lineno}: record before any slice header")
            try:
                head, _, rest = line.partition(":")
                node_type, idx_s = head.split()
                idx = int(idx_s)
                pairs = [c.strip() for c in rest.split(";") if c.strip()]
                neigh = np.array([int(p.split(",")[0]) for p in pairs], dtype=np.int64)
                vals = np.array([float(p.split(",")[1]) for p in pairs])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: bad subgraph record: {exc}") from exc
            current.neighbors.setdefault(node_type, [])
            current.scores.setdefault(node_type, [])
            if idx != len(current.neighbors[node_type]):
                raise DataError(f"{path}:{lineno}: node records out of order")
            current.neighbors[node_type].append(neigh)
            current.scores[node_type].append(vals)
    if not meta or not slices:
        raise DataError(f"{path}: missing subgraph header")
    sub = SampledSubgraph(
        strategy=meta["strategy"],
        k=int(meta["k"]),
        mode=meta["mode"],
        seed=int(meta["seed"]),
        metric=None if meta.get("metric") in (None, "-") else meta["metric"],
        node_counts=dict(node_counts),
        slices=slices,
    )
    sub.validate()
    return sub
