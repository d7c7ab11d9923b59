"""Raw node feature vectors: seeded random features or external files."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .graph import InteractionGraph, NodeRef
from .seeds import STAGE_FEATURES, sub_rng


@dataclass
class FeatureMatrix:
    dim: int
    per_type: dict[str, np.ndarray]  # [count, dim] float64

    def vector(self, node: NodeRef) -> np.ndarray:
        return self.per_type[node.node_type][node.index]

    def validate(self) -> None:
        for node_type, mat in self.per_type.items():
            if mat.ndim != 2 or mat.shape[1] != self.dim:
                raise DataError(f"feature matrix for {node_type} has wrong shape {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise DataError(f"non-finite feature values for {node_type}")


def seeded_features(graph: InteractionGraph, dim: int, seed: int) -> FeatureMatrix:
    """Deterministic per-node features, uniform on [-a, a] with a = sqrt(3/dim).

    The bound gives unit expected squared norm. Each node's vector comes
    from its own generator keyed by (seed, node type, node index), so a
    node's features never depend on how many other nodes exist.
    """
    if dim < 1:
        raise ConfigError(f"feature dimension must be >= 1, got {dim}")
    bound = math.sqrt(3.0 / dim)
    per_type = {}
    for node_type in graph.node_types():
        count = graph.node_counts[node_type]
        code = graph.type_code(node_type)
        mat = np.empty((count, dim))
        for i in range(count):
            rng = sub_rng(seed, STAGE_FEATURES, code, i)
            mat[i] = rng.uniform(-bound, bound, size=dim)
        per_type[node_type] = mat
    fm = FeatureMatrix(dim, per_type)
    fm.validate()
    return fm


def save_features(fm: FeatureMatrix, path: str, header: list[str] | None = None) -> None:
    """Text format: "count dim" line, then "node_type index v1 ... vdim" rows."""
    total = sum(mat.shape[0] for mat in fm.per_type.values())
    with open(path, "w", encoding="utf-8") as fh:
        for line in header or []:
            fh.write(f"# {line}\n")
        fh.write(f"{total} {fm.dim}\n")
        for node_type in sorted(fm.per_type):
            mat = fm.per_type[node_type]
            for i in range(mat.shape[0]):
                row = " ".join(repr(float(v)) for v in mat[i])
                fh.write(f"{node_type} {i} {row}\n")


def load_features(path: str, expected_counts: dict[str, int]) -> FeatureMatrix:
    """Load a feature file, requiring a vector for every registered node."""
    dim = None
    per_type: dict[str, np.ndarray] = {}
    seen: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if dim is None:
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'count dim' header")
                dim = int(parts[1])
                continue
            node_type, idx_s, *vals = parts
            if len(vals) != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} values, got {len(vals)}"
                )
            if node_type not in per_type:
                count = expected_counts.get(node_type)
                if count is None:
                    raise DataError(f"{path}:{lineno}: unknown node type {node_type!r}")
                per_type[node_type] = np.zeros((count, dim))
                seen[node_type] = np.zeros(count, dtype=bool)
            idx = int(idx_s)
            if not 0 <= idx < per_type[node_type].shape[0]:
                raise DataError(f"{path}:{lineno}: index {idx} out of range")
            per_type[node_type][idx] = [float(v) for v in vals]
            seen[node_type][idx] = True
    if dim is None:
        raise DataError(f"{path}: empty feature file")
    for node_type, count in expected_counts.items():
        if count == 0:
            continue
        if node_type not in seen:
            raise DataError(f"{path}: no features for node type {node_type!r}")
        missing = np.nonzero(~seen[node_type])[0]
        if len(missing):
            raise DataError(
                f"{path}: missing feature vector for {node_type} {int(missing[0])}"
            )
    fm = FeatureMatrix(dim, per_type)
    fm.validate()
    return fm
