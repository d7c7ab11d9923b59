"""Heterogeneous interaction graph: loading, labeling, splitting, translation.

The graph is a sparse store of typed, weighted interaction edges between
a "user" node set, an "item" node set, and optional auxiliary node types
(brands, tags, ...). All downstream modules consume the structures built
here and treat them as immutable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

USER = "user"
ITEM = "item"
DEFAULT_RELATION = "interacts"

SPLIT_TAGS = ("train", "val", "test")


def csr_row(mat: sp.csr_matrix, i: int) -> tuple[np.ndarray, np.ndarray]:
    """(indices, data) views of row i; far cheaper than getrow()."""
    lo, hi = mat.indptr[i], mat.indptr[i + 1]
    return mat.indices[lo:hi], mat.data[lo:hi]


def drop_diagonal(mat: sp.csr_matrix) -> sp.csr_matrix:
    coo = mat.tocoo()
    keep = coo.row != coo.col
    out = sp.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=mat.shape
    )
    out.sort_indices()
    return out


class NodeRef(NamedTuple):
    node_type: str
    index: int


@dataclass(frozen=True)
class Edge:
    source: NodeRef
    target: NodeRef
    relation: str
    weight: float
    rating: float | None = None


@dataclass(frozen=True)
class LabeledInteraction:
    user: NodeRef
    item: NodeRef
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")


@dataclass
class DatasetSplit:
    train: list[LabeledInteraction]
    validation: list[LabeledInteraction]
    test: list[LabeledInteraction]
    seed: int

    def all_interactions(self) -> list[LabeledInteraction]:
        return [*self.train, *self.validation, *self.test]


@dataclass
class Schema:
    """Column layout of an interaction file.

    columns names the meaning of each column in order; "user" and "item"
    are required, "rating", "weight" and "relation" are optional. Extra
    relations may retarget the item column onto an auxiliary node type
    via relation_targets.
    """

    columns: tuple[str, ...] = ("user", "item")
    delimiter: str | None = None  # None: sniff tab, then comma, then whitespace
    has_header: bool = False
    relations: tuple[str, ...] | None = None  # registered tags; None accepts default only
    default_relation: str = DEFAULT_RELATION
    relation_targets: dict[str, tuple[str, str]] = field(default_factory=dict)

    _ALLOWED = ("user", "item", "rating", "weight", "relation")

    def __post_init__(self):
        for c in self.columns:
            if c not in self._ALLOWED:
                raise ConfigError(f"unknown schema column {c!r}")
        if "user" not in self.columns or "item" not in self.columns:
            raise ConfigError("schema requires 'user' and 'item' columns")

    def endpoint_types(self, relation: str) -> tuple[str, str]:
        return self.relation_targets.get(relation, (USER, ITEM))


class InteractionGraph:
    """Immutable sparse interaction store with lazy adjacency indexes."""

    def __init__(
        self,
        node_counts: dict[str, int],
        edges: list[Edge],
        id_maps: dict[str, list[str]] | None = None,
        relations: tuple[str, ...] = (DEFAULT_RELATION,),
    ):
        self.node_counts = dict(node_counts)
        self.edges = edges
        self.id_maps = id_maps or {}
        self.relations = relations
        self._validate()
        self._adj_cache: dict = {}
        self._slice_keys_cache: dict = {}

    # -- basic accessors ------------------------------------------------

    @property
    def n_users(self) -> int:
        return self.node_counts.get(USER, 0)

    @property
    def n_items(self) -> int:
        return self.node_counts.get(ITEM, 0)

    def node_types(self) -> tuple[str, ...]:
        """Node types in canonical order: user, item, then sorted extras."""
        extra = sorted(t for t in self.node_counts if t not in (USER, ITEM))
        ordered = [t for t in (USER, ITEM) if t in self.node_counts]
        return tuple(ordered + extra)

    def type_code(self, node_type: str) -> int:
        """Stable small integer for seed derivation."""
        try:
            return self.node_types().index(node_type)
        except ValueError:
            raise DataError(f"unregistered node type {node_type!r}") from None

    def check_ref(self, ref: NodeRef) -> None:
        if ref.node_type not in self.node_counts:
            raise DataError(f"unregistered node type {ref.node_type!r}")
        if not 0 <= ref.index < self.node_counts[ref.node_type]:
            raise DataError(f"node index out of range: {ref}")

    def _validate(self) -> None:
        for e in self.edges:
            if e.weight <= 0:
                raise DataError(f"non-positive edge weight on {e.source}->{e.target}")
            if e.relation not in self.relations:
                raise DataError(f"unregistered relation {e.relation!r}")
            if e.source == e.target:
                raise DataError(f"self-loop on {e.source}")
            self.check_ref(e.source)
            self.check_ref(e.target)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionGraph):
            return NotImplemented
        return (
            self.node_counts == other.node_counts
            and self.relations == other.relations
            and sorted(map(_edge_key, self.edges)) == sorted(map(_edge_key, other.edges))
            and self.id_maps == other.id_maps
        )

    # -- adjacency ------------------------------------------------------

    def slice_keys(self, node_type: str) -> list[tuple[str, str]]:
        """(relation, target_type) pairs under which node_type interacts."""
        if node_type not in self._slice_keys_cache:
            keys = set()
            for e in self.edges:
                if e.source.node_type == node_type:
                    keys.add((e.relation, e.target.node_type))
                if e.target.node_type == node_type:
                    keys.add((e.relation, e.source.node_type))
            self._slice_keys_cache[node_type] = sorted(keys)
        return self._slice_keys_cache[node_type]

    def adjacency(self, node_type: str, relation: str, target_type: str) -> sp.csr_matrix:
        """Weight matrix (n_node_type x n_target_type) of interactions.

        Interactions are treated as undirected: an edge contributes to the
        adjacency of both endpoints.
        """
        key = (node_type, relation, target_type)
        if key not in self._adj_cache:
            rows, cols, vals = [], [], []
            for e in self.edges:
                if e.relation != relation:
                    continue
                if e.source.node_type == node_type and e.target.node_type == target_type:
                    rows.append(e.source.index)
                    cols.append(e.target.index)
                    vals.append(e.weight)
                elif e.target.node_type == node_type and e.source.node_type == target_type:
                    rows.append(e.target.index)
                    cols.append(e.source.index)
                    vals.append(e.weight)
            shape = (self.node_counts[node_type], self.node_counts[target_type])
            mat = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
            mat.sum_duplicates()
            mat.sort_indices()
            self._adj_cache[key] = mat
        return self._adj_cache[key]

    def neighbor_slice(self, node: NodeRef, relation: str, target_type: str):
        """(indices, weights) of node's interactions under one slice."""
        mat = self.adjacency(node.node_type, relation, target_type)
        idx, w = csr_row(mat, node.index)
        return idx.astype(np.int64), w.astype(np.float64)


def _edge_key(e: Edge):
    return (e.source, e.target, e.relation, e.weight, e.rating)


# -- loading ------------------------------------------------------------


def _sniff_delimiter(line: str) -> str:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None  # whitespace split


def load_interactions(path: str, schema: Schema | None = None) -> InteractionGraph:
    """Parse an interaction file into a graph.

    One record per line; duplicate (source, target, relation) records
    accumulate weight. Ratings on duplicates keep the last value, with a
    warning when they contradict an earlier one.
    """
    schema = schema or Schema()
    col_of = {name: i for i, name in enumerate(schema.columns)}
    ncols = len(schema.columns)

    ids: dict[str, dict[str, int]] = {}
    # (src_type, src_idx, dst_type, dst_idx, relation) -> [weight, rating]
    acc: dict[tuple, list] = {}
    relations_seen: list[str] = []
    delimiter = schema.delimiter

    def intern(node_type: str, raw_id: str) -> int:
        table = ids.setdefault(node_type, {})
        if raw_id not in table:
            table[raw_id] = len(table)
        return table[raw_id]

    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open interaction file {path}: {exc}") from exc

    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if delimiter is None:
                delimiter = _sniff_delimiter(line)
            parts = line.split(delimiter) if delimiter else line.split()
            parts = [p.strip() for p in parts]
            if schema.has_header and lineno == 1:
                continue
            if len(parts) != ncols:
                raise DataError(
                    f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}"
                )
            relation = (
                parts[col_of["relation"]] if "relation" in col_of else schema.default_relation
            )
            if schema.relations is not None:
                if relation not in schema.relations:
                    raise DataError(f"{path}:{lineno}: unknown relation type {relation!r}")
            elif relation != schema.default_relation:
                raise DataError(f"{path}:{lineno}: unknown relation type {relation!r}")
            if relation not in relations_seen:
                relations_seen.append(relation)

            src_type, dst_type = schema.endpoint_types(relation)
            try:
                weight = float(parts[col_of["weight"]]) if "weight" in col_of else 1.0
                rating = float(parts[col_of["rating"]]) if "rating" in col_of else None
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed numeric field: {exc}") from exc
            if weight <= 0:
                raise DataError(f"{path}:{lineno}: non-positive weight {weight}")

            src = intern(src_type, parts[col_of["user"]])
            dst = intern(dst_type, parts[col_of["item"]])
            key = (src_type, src, dst_type, dst, relation)
            if key in acc:
                acc[key][0] += weight
                prev = acc[key][1]
                if rating is not None:
                    if prev is not None and prev != rating:
                        log.warning(
                            "%s:%d: contradictory rating for %s (%s -> %s), keeping last",
                            path, lineno, key[:4], prev, rating,
                        )
                    acc[key][1] = rating
            else:
                acc[key] = [weight, rating]

    node_counts = {t: len(table) for t, table in ids.items()}
    node_counts.setdefault(USER, 0)
    node_counts.setdefault(ITEM, 0)
    edges = [
        Edge(NodeRef(st, si), NodeRef(dt, di), rel, w, r)
        for (st, si, dt, di, rel), (w, r) in acc.items()
    ]
    id_maps = {
        t: [raw for raw, _ in sorted(table.items(), key=lambda kv: kv[1])]
        for t, table in ids.items()
    }
    relations = tuple(relations_seen) if relations_seen else (schema.default_relation,)
    return InteractionGraph(node_counts, edges, id_maps, relations)


def write_id_maps(graph: InteractionGraph, directory: str) -> list[str]:
    """Persist the id<->index mapping, one two-column file per node type."""
    import os

    paths = []
    for node_type in graph.node_types():
        raw_ids = graph.id_maps.get(node_type)
        if raw_ids is None:
            continue
        path = os.path.join(directory, f"ids_{node_type}.map")
        with open(path, "w", encoding="utf-8") as fh:
            for idx, raw in enumerate(raw_ids):
                fh.write(f"{raw}\t{idx}\n")
        paths.append(path)
    return paths


# -- labeling -----------------------------------------------------------


def binarize_ratings(graph: InteractionGraph, threshold: float) -> list[LabeledInteraction]:
    """Label user-item edges by rating threshold: rating >= threshold -> 1."""
    labeled: dict[tuple[int, int], int] = {}
    for e in _user_item_edges(graph):
        if e.rating is None:
            raise DataError(
                f"edge {e.source}->{e.target} has no rating; cannot binarize"
            )
        pair = _pair_of(e)
        label = 1 if e.rating >= threshold else 0
        labeled[pair] = max(labeled.get(pair, 0), label)
    return [
        LabeledInteraction(NodeRef(USER, u), NodeRef(ITEM, i), y)
        for (u, i), y in labeled.items()
    ]


def label_all_positive(graph: InteractionGraph) -> list[LabeledInteraction]:
    """Implicit-feedback labeling: every observed user-item pair is a 1."""
    seen: dict[tuple[int, int], None] = {}
    for e in _user_item_edges(graph):
        seen.setdefault(_pair_of(e), None)
    return [
        LabeledInteraction(NodeRef(USER, u), NodeRef(ITEM, i), 1) for (u, i) in seen
    ]


def _user_item_edges(graph: InteractionGraph) -> Iterable[Edge]:
    for e in graph.edges:
        types = (e.source.node_type, e.target.node_type)
        if types == (USER, ITEM) or types == (ITEM, USER):
            yield e


def _pair_of(e: Edge) -> tuple[int, int]:
    if e.source.node_type == USER:
        return (e.source.index, e.target.index)
    return (e.target.index, e.source.index)


def positive_view(graph: InteractionGraph, rating_threshold: float | None) -> InteractionGraph:
    """Graph restricted to positive interactions.

    Rated user-item edges below the threshold are dropped; unrated edges
    (clicks, auxiliary relations) always count as positive. Node counts
    and id maps are preserved so indexes stay aligned.
    """
    if rating_threshold is None:
        return graph
    kept = []
    for e in graph.edges:
        types = {e.source.node_type, e.target.node_type}
        if types == {USER, ITEM} and e.rating is not None and e.rating < rating_threshold:
            continue
        kept.append(e)
    return InteractionGraph(graph.node_counts, kept, graph.id_maps, graph.relations)


# -- splitting ----------------------------------------------------------


def split_dataset(
    labeled: Sequence[LabeledInteraction],
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Uniform random split of labeled pairs into train/validation/test."""
    if any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    n = len(labeled)
    if n < 3:
        raise DataError(f"need at least 3 labeled records to split, got {n}")

    from .seeds import STAGE_SPLIT, sub_rng

    rng = sub_rng(seed, STAGE_SPLIT)
    order = rng.permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    take = lambda sl: [labeled[j] for j in order[sl]]
    return DatasetSplit(
        train=take(slice(0, n_train)),
        validation=take(slice(n_train, n_train + n_val)),
        test=take(slice(n_train + n_val, n)),
        seed=seed,
    )


def write_split_manifest(split: DatasetSplit, path: str, header: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header or []:
            fh.write(f"# {line}\n")
        for tag, rows in zip(SPLIT_TAGS, (split.train, split.validation, split.test)):
            for r in rows:
                fh.write(f"{r.user.index} {r.item.index} {r.label} {tag}\n")


def read_split_manifest(path: str, seed: int = 0) -> DatasetSplit:
    parts: dict[str, list[LabeledInteraction]] = {t: [] for t in SPLIT_TAGS}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                u, i, y, tag = line.split()
                parts[tag].append(
                    LabeledInteraction(NodeRef(USER, int(u)), NodeRef(ITEM, int(i)), int(y))
                )
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: bad split record: {exc}") from exc
    return DatasetSplit(parts["train"], parts["val"], parts["test"], seed=seed)


# -- translation --------------------------------------------------------


@dataclass
class TypeTranslation:
    """Same-type candidate structure for one homogeneous node type."""

    shared_counts: sp.csr_matrix  # [n, n] number of shared auxiliary nodes
    path_scores: sp.csr_matrix  # [n, n] two-hop traversal probabilities
    blocks: list[tuple[str, str]]  # (relation, aux_type) blocks used


class TranslatedGraph:
    """User-user and item-item candidate relations via shared neighbors.

    Two same-type nodes are candidates iff they interacted with at least
    one common auxiliary node. Shared-neighbor lists are recovered on
    demand from the underlying adjacency rather than stored per pair.
    """

    def __init__(self, graph: InteractionGraph, per_type: dict[str, TypeTranslation]):
        self.graph = graph
        self.per_type = per_type

    def candidates(self, node: NodeRef) -> np.ndarray:
        """Sorted candidate indices for node (never contains node itself)."""
        tt = self._type_translation(node)
        idx, _ = csr_row(tt.shared_counts, node.index)
        return idx.astype(np.int64)

    def shared_count_row(self, node: NodeRef) -> tuple[np.ndarray, np.ndarray]:
        tt = self._type_translation(node)
        idx, counts = csr_row(tt.shared_counts, node.index)
        return idx.astype(np.int64), counts.astype(np.int64)

    def path_score_row(self, node: NodeRef) -> tuple[np.ndarray, np.ndarray]:
        tt = self._type_translation(node)
        idx, scores = csr_row(tt.path_scores, node.index)
        return idx.astype(np.int64), scores.astype(np.float64)

    def shared_neighbors(self, a: NodeRef, b: NodeRef) -> list[NodeRef]:
        """Auxiliary nodes both a and b interacted with, with their paths."""
        if a.node_type != b.node_type:
            raise DataError("shared_neighbors expects two same-type nodes")
        tt = self._type_translation(a)
        out = []
        for relation, aux_type in tt.blocks:
            ia, _ = self.graph.neighbor_slice(a, relation, aux_type)
            ib, _ = self.graph.neighbor_slice(b, relation, aux_type)
            for idx in np.intersect1d(ia, ib, assume_unique=False):
                out.append(NodeRef(aux_type, int(idx)))
        return out

    def _type_translation(self, node: NodeRef) -> TypeTranslation:
        try:
            return self.per_type[node.node_type]
        except KeyError:
            raise DataError(f"no translation for node type {node.node_type!r}") from None


def translate_graph(
    graph: InteractionGraph,
    positive_only: bool = True,
    rating_threshold: float | None = None,
) -> TranslatedGraph:
    """Build user-user and item-item candidate relations.

    path_scores[u, v] = sum over shared aux a of p_u(a) * q_a(v), where
    p_u is u's interaction distribution over all of its auxiliary
    neighbors and q_a is a's distribution over its same-type-as-u
    interactors. shared_counts[u, v] counts the shared auxiliary nodes.
    """
    base = positive_view(graph, rating_threshold) if positive_only else graph
    per_type: dict[str, TypeTranslation] = {}
    for node_type in (USER, ITEM):
        if graph.node_counts.get(node_type, 0) == 0:
            continue
        blocks = [
            (rel, tgt) for rel, tgt in base.slice_keys(node_type) if tgt != node_type
        ]
        n = graph.node_counts[node_type]
        if not blocks:
            empty = sp.csr_matrix((n, n))
            per_type[node_type] = TypeTranslation(empty.astype(np.int64), empty, [])
            continue
        weighted = sp.hstack(
            [base.adjacency(node_type, rel, tgt) for rel, tgt in blocks], format="csr"
        )
        pattern = weighted.copy()
        pattern.data = np.ones_like(pattern.data, dtype=np.int64)
        counts = drop_diagonal((pattern @ pattern.T).tocsr()).astype(np.int64)

        p = _normalize_rows(weighted)
        q = _normalize_rows(weighted.T.tocsr())
        scores = drop_diagonal((p @ q).tocsr())
        per_type[node_type] = TypeTranslation(counts, scores, blocks)
    return TranslatedGraph(graph, per_type)


def _normalize_rows(mat: sp.csr_matrix) -> sp.csr_matrix:
    mat = mat.tocsr().astype(np.float64)
    sums = np.asarray(mat.sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    return sp.diags(scale) @ mat
