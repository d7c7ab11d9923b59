"""Ranking metrics and the held-out evaluation protocol."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .graph import DatasetSplit
from .seeds import STAGE_EVAL, sub_rng


@dataclass
class RankingTask:
    """One positive ranked against sampled unseen negatives for a user."""

    user: int
    positive: int
    negatives: np.ndarray
    scores: np.ndarray | None = None  # positive's score first, negatives after


@dataclass
class ProtocolConfig:
    negatives_per_positive: int = 50
    ndcg_k: int = 10
    auc_pool: str = "pooled"  # "pooled" or "lists"

    def __post_init__(self):
        if self.negatives_per_positive < 1:
            raise ConfigError("negatives_per_positive must be >= 1")
        if self.ndcg_k < 1:
            raise ConfigError("ndcg_k must be >= 1")
        if self.auc_pool not in ("pooled", "lists"):
            raise ConfigError(f"unknown auc_pool {self.auc_pool!r}")


@dataclass
class MetricsReport:
    auc: float
    ndcg_at_10: float
    mans_users: float | None = None
    mans_items: float | None = None
    timings: dict[str, float] = field(default_factory=dict)
    extra: dict[str, float] = field(default_factory=dict)

    def metric_items(self) -> list[tuple[str, float]]:
        """Deterministic metric key/value pairs (timings excluded)."""
        rows = [("auc", self.auc), ("ndcg10", self.ndcg_at_10)]
        if self.mans_users is not None:
            rows.append(("mans_users", self.mans_users))
        if self.mans_items is not None:
            rows.append(("mans_items", self.mans_items))
        rows.extend(sorted(self.extra.items()))
        return rows


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count half. Computed by rank summation in O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError("scores and labels must have equal length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks over tied score groups
    sorted_scores = scores[order]
    group_start = np.concatenate(([True], sorted_scores[1:] != sorted_scores[:-1]))
    group_id = np.cumsum(group_start) - 1
    group_sum = np.bincount(group_id, weights=np.arange(1, len(scores) + 1))
    group_count = np.bincount(group_id)
    avg = group_sum / group_count
    ranks[order] = avg[group_id]
    rank_sum = float(np.sum(ranks[labels == 1]))
    u_stat = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)


def ndcg_from_scores(pos_score: float, neg_scores: np.ndarray, k: int) -> float:
    """Single-positive discounted gain at cutoff k, pessimistic on ties."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    rank = 1 + int(np.sum(np.asarray(neg_scores) >= pos_score))
    if rank > k:
        return 0.0
    return 1.0 / np.log2(1.0 + rank)


def ndcg_at_k(task: RankingTask, k: int) -> float:
    if task.scores is None:
        raise DataError("ranking task has no scores")
    return ndcg_from_scores(float(task.scores[0]), task.scores[1:], k)


def _interacted_sets(split: DatasetSplit, n_users: int) -> list[set[int]]:
    sets: list[set[int]] = [set() for _ in range(n_users)]
    for rec in split.all_interactions():
        sets[rec.user.index].add(rec.item.index)
    return sets


def _draw_unseen(
    user: int, count: int, interacted: list[set[int]], n_items: int, rng: np.random.Generator
) -> np.ndarray:
    seen = interacted[user]
    if n_items - len(seen) < count:
        raise DataError(
            f"user {user} has too few non-interacted items for {count} negatives"
        )
    out: list[int] = []
    taken = set()
    while len(out) < count:
        draw = rng.integers(0, n_items, size=max(4, 2 * (count - len(out))))
        for item in draw:
            item = int(item)
            if item in seen or item in taken:
                continue
            out.append(item)
            taken.add(item)
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64)


def build_ranking_tasks(
    split: DatasetSplit,
    n_users: int,
    n_items: int,
    protocol: ProtocolConfig,
    seed: int,
) -> list[RankingTask]:
    """One task per held-out positive, with seeded unseen negatives."""
    interacted = _interacted_sets(split, n_users)
    tasks = []
    for rec in split.test:
        if rec.label != 1:
            continue
        rng = sub_rng(seed, STAGE_EVAL, 1, rec.user.index, rec.item.index)
        negs = _draw_unseen(
            rec.user.index, protocol.negatives_per_positive, interacted, n_items, rng
        )
        tasks.append(RankingTask(rec.user.index, rec.item.index, negs))
    return tasks


def evaluate_model(
    scorer,
    split: DatasetSplit,
    n_users: int,
    n_items: int,
    protocol: ProtocolConfig | None = None,
    seed: int = 0,
    mans_users: float | None = None,
    mans_items: float | None = None,
) -> MetricsReport:
    """Test-set AUC and NDCG@k under the seeded negative protocol.

    AUC pools held-out positives against held-out observed negatives,
    topped up 1:1 with seeded non-interacted pairs when too few; with
    auc_pool="lists" it instead pools the ranking-list scores. NDCG is
    averaged per user, then across users.
    """
    protocol = protocol or ProtocolConfig()
    timings: dict[str, float] = {}
    if not split.test:
        raise DataError("test split is empty")

    t0 = time.perf_counter()
    tasks = build_ranking_tasks(split, n_users, n_items, protocol, seed)
    per_user: dict[int, list[float]] = {}
    for task in tasks:
        u = np.full(1 + len(task.negatives), task.user, dtype=np.int64)
        items = np.concatenate(([task.positive], task.negatives))
        task.scores = scorer(u, items)
        per_user.setdefault(task.user, []).append(
            ndcg_from_scores(float(task.scores[0]), task.scores[1:], protocol.ndcg_k)
        )
    if not per_user:
        raise DataError("no test positives to rank")
    ndcg = float(np.mean([np.mean(v) for v in per_user.values()]))
    timings["ndcg"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if protocol.auc_pool == "lists":
        scores = np.concatenate([t.scores for t in tasks])
        labels = np.concatenate(
            [[1] + [0] * len(t.negatives) for t in tasks]
        )
    else:
        pos = [(r.user.index, r.item.index) for r in split.test if r.label == 1]
        neg = [(r.user.index, r.item.index) for r in split.test if r.label == 0]
        interacted = _interacted_sets(split, n_users)
        need = len(pos) - len(neg)
        if need > 0:
            extra = []
            for u, _ in pos[:need]:
                rng = sub_rng(seed, STAGE_EVAL, 2, u, len(extra))
                extra.append((u, int(_draw_unseen(u, 1, interacted, n_items, rng)[0])))
            neg = neg + extra
        pairs = pos + neg
        labels = np.array([1] * len(pos) + [0] * len(neg))
        scores = scorer(
            np.array([p[0] for p in pairs], dtype=np.int64),
            np.array([p[1] for p in pairs], dtype=np.int64),
        )
    auc_value = auc(scores, labels)
    timings["auc"] = time.perf_counter() - t0

    return MetricsReport(
        auc=auc_value,
        ndcg_at_10=ndcg,
        mans_users=mans_users,
        mans_items=mans_items,
        timings=timings,
    )


def write_metrics(report: MetricsReport, path: str, header: list[str] | None = None) -> None:
    """Key=value metrics file; excludes timings so reruns match byte-for-byte."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in header or []:
            fh.write(f"# {line}\n")
        for key, value in report.metric_items():
            fh.write(f"{key}={value!r}\n")


def read_metrics(path: str) -> dict[str, float]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key] = float(value)
    return out
