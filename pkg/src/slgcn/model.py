"""Single-layer representation model: aggregation, heads, loss, training.

Neighborhood aggregation is parameter-free mean pooling and runs exactly
once, as preprocessing; training then only ever touches the concatenated
self+neighborhood vectors. The representation layer is one linear map
plus ReLU per side. Four prediction heads are supported:

  std   MLP over the two transformed representations
  lin   the same MLP over the raw concatenated inputs (no per-side map)
  vcos  cosine of the raw inputs, affinely mapped through a sigmoid
  cos   tanh of the cosine before the affine map

All gradients are computed analytically in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, NumericError
from .features import FeatureMatrix
from .graph import ITEM, USER, DatasetSplit, NodeRef
from .sampling import SampledSubgraph
from .seeds import STAGE_EVAL, STAGE_TRAIN, sub_rng

HEADS = ("std", "lin", "vcos", "cos")


@dataclass
class OpCounters:
    """Instrumented aggregation / mapping execution counts."""

    aggregations: int = 0
    mappings: int = 0

    def reset(self) -> None:
        self.aggregations = 0
        self.mappings = 0


COUNTERS = OpCounters()


# -- parameter-free preprocessing -----------------------------------------


def aggregate_neighborhood(
    features: FeatureMatrix, subgraph: SampledSubgraph
) -> dict[str, list[np.ndarray]]:
    """Mean-pool neighbor features once for every node and slice.

    Returns, per node type, one [count, dim] matrix per subgraph slice.
    Nodes with no sampled neighbors get a zero vector. Neighbor rows are
    summed in ascending index order, so the result does not depend on the
    stored neighbor order.
    """
    out: dict[str, list[np.ndarray]] = {}
    for sl in subgraph.slices:
        for node_type, lists in sl.neighbors.items():
            mat = features.per_type[node_type]
            agg = np.zeros_like(mat)
            for i, neigh in enumerate(lists):
                COUNTERS.aggregations += 1
                if len(neigh):
                    agg[i] = mat[np.sort(neigh)].mean(axis=0)
            out.setdefault(node_type, []).append(agg)
    return out


def concat_features(x_self: np.ndarray, slices: list[tuple[float, np.ndarray]]) -> np.ndarray:
    """[self | lam_1 * slice_1 | ...] concatenation for a single node."""
    parts = [np.asarray(x_self, dtype=np.float64)]
    for lam, vec in slices:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != parts[0].shape:
            raise DataError(
                f"slice length {vec.shape} does not match self feature {parts[0].shape}"
            )
        parts.append(lam * vec)
    return np.concatenate(parts)


@dataclass
class AggregatedFeatures:
    feature_dim: int
    n_slices: int
    lambdas: np.ndarray
    per_type: dict[str, np.ndarray]  # [count, feature_dim * (1 + n_slices)]

    @property
    def input_dim(self) -> int:
        return self.feature_dim * (1 + self.n_slices)


def build_aggregated(
    features: FeatureMatrix,
    subgraph: SampledSubgraph,
    lambdas: list[float] | None = None,
) -> AggregatedFeatures:
    """Precompute the concatenated self+neighborhood matrix per node type."""
    n_slices = len(subgraph.slices)
    lam = np.ones(n_slices) if lambdas is None else np.asarray(lambdas, dtype=np.float64)
    if lam.shape != (n_slices,):
        raise ConfigError(f"need {n_slices} slice weights, got {lam.shape}")
    neigh = aggregate_neighborhood(features, subgraph)
    per_type = {}
    for node_type, mats in neigh.items():
        blocks = [features.per_type[node_type]]
        blocks += [lam[s] * mats[s] for s in range(n_slices)]
        per_type[node_type] = np.concatenate(blocks, axis=1)
    return AggregatedFeatures(features.dim, n_slices, lam, per_type)


# -- model inputs -----------------------------------------------------------


@dataclass
class ModelInputs:
    """What the forward pass reads: frozen matrices or trainable features.

    In trainable mode the aggregation structure (who averages whom) stays
    fixed while feature values are model parameters; the concatenated
    inputs are rebuilt from the current features every step.
    """

    input_dim: int
    feature_dim: int
    lambdas: np.ndarray
    trainable: bool
    xbar: dict[str, np.ndarray] | None = None  # frozen mode
    agg_mats: dict[str, list[sp.csr_matrix]] | None = None  # trainable mode
    init_features: dict[str, np.ndarray] | None = None


def frozen_inputs(aggregated: AggregatedFeatures) -> ModelInputs:
    return ModelInputs(
        input_dim=aggregated.input_dim,
        feature_dim=aggregated.feature_dim,
        lambdas=aggregated.lambdas,
        trainable=False,
        xbar=aggregated.per_type,
    )


def trainable_inputs(
    features: FeatureMatrix,
    subgraph: SampledSubgraph,
    lambdas: list[float] | None = None,
) -> ModelInputs:
    """Inputs for the trainable-embedding ablation switch."""
    n_slices = len(subgraph.slices)
    lam = np.ones(n_slices) if lambdas is None else np.asarray(lambdas, dtype=np.float64)
    agg_mats: dict[str, list[sp.csr_matrix]] = {}
    for sl in subgraph.slices:
        for node_type, lists in sl.neighbors.items():
            n = len(lists)
            rows, cols, vals = [], [], []
            for i, neigh in enumerate(lists):
                if len(neigh) == 0:
                    continue
                share = 1.0 / len(neigh)
                order = np.sort(neigh)
                rows.extend([i] * len(order))
                cols.extend(int(v) for v in order)
                vals.extend([share] * len(order))
            mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
            agg_mats.setdefault(node_type, []).append(mat)
    return ModelInputs(
        input_dim=features.dim * (1 + n_slices),
        feature_dim=features.dim,
        lambdas=lam,
        trainable=True,
        agg_mats=agg_mats,
        init_features={t: m.copy() for t, m in features.per_type.items()},
    )


# -- configuration -----------------------------------------------------------


@dataclass
class ModelConfig:
    head: str = "std"
    repr_dim: int = 256
    head_width: int = 512
    head_layers: int = 3
    dtype: str = "float32"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"unknown prediction head {self.head!r}")
        if self.repr_dim < 1 or self.head_width < 1 or self.head_layers < 1:
            raise ConfigError("model dimensions must be >= 1")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class TrainConfig:
    epochs: int = 200
    warmup_batch_size: int = 100
    batch_size: int = 10240
    warmup_batches: int = 100
    neg_ratio: int = 4
    lr: float = 0.01
    l2: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop: bool = True
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.warmup_batch_size < 1 or self.batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.warmup_batches < 0:
            raise ConfigError("warm-up switch step must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.neg_ratio < 0:
            raise ConfigError("negative sampling ratio must be >= 0")


# -- optimizer ----------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float = 0.01,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    l2: float = 0.0,
) -> OptimizerState:
    """Bias-corrected Adam update, in place; L2 enters through the gradient."""
    state.t += 1
    t = state.t
    for key, p in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {key!r}")
        if l2:
            g = g + l2 * p
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    return state


# -- loss ---------------------------------------------------------------------


def loss(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy of probabilities against 0/1 labels."""
    yhat = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if yhat.shape != y.shape:
        raise DataError("predictions and labels must have equal length")
    if np.any(yhat <= 0.0) or np.any(yhat >= 1.0):
        raise NumericError("predictions must lie strictly inside (0, 1)")
    return float(-np.mean(y * np.log(yhat) + (1 - y) * np.log1p(-yhat)))


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # y*softplus(-z) + (1-y)*softplus(z), stable at large |z|
    per = y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z)
    return float(np.mean(per))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# -- the model ----------------------------------------------------------------


class PredictionModel:
    """Representation transform plus prediction head with analytic gradients."""

    def __init__(self, cfg: ModelConfig, inputs: ModelInputs, seed: int = 0):
        self.cfg = cfg
        self.inputs = inputs
        self.params: dict[str, np.ndarray] = {}
        self._init_params(seed)
        if inputs.trainable:
            self._agg = {
                t: [m.astype(cfg.np_dtype) for m in mats]
                for t, mats in inputs.agg_mats.items()
            }
        else:
            self._xbar = {t: m.astype(cfg.np_dtype) for t, m in inputs.xbar.items()}

    # parameter construction

    def _init_params(self, seed: int) -> None:
        cfg = self.cfg
        dt = cfg.np_dtype
        rng = sub_rng(seed, STAGE_TRAIN, 0)
        d_in = self.inputs.input_dim

        def he(shape, fan_in):
            return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dt)

        if cfg.head == "std":
            self.params["w_user"] = he((cfg.repr_dim, d_in), d_in)
            self.params["w_item"] = he((cfg.repr_dim, d_in), d_in)
            head_in = 2 * cfg.repr_dim
        elif cfg.head == "lin":
            head_in = 2 * d_in
        else:
            head_in = None

        if cfg.head in ("std", "lin"):
            width = cfg.head_width
            fan = head_in
            for layer in range(1, cfg.head_layers + 1):
                self.params[f"head.a{layer}"] = he((width, fan), fan)
                self.params[f"head.b{layer}"] = np.zeros(width, dtype=dt)
                fan = width
            self.params["head.out_w"] = (
                rng.standard_normal(width) * math.sqrt(1.0 / width)
            ).astype(dt)
            self.params["head.out_b"] = np.zeros((), dtype=dt)
        else:
            self.params["cos.scale"] = np.ones((), dtype=dt)
            self.params["cos.bias"] = np.zeros((), dtype=dt)

        if self.inputs.trainable:
            for node_type in (USER, ITEM):
                self.params[f"emb.{node_type}"] = self.inputs.init_features[node_type].astype(dt)

    # input assembly

    def _gather_inputs(self, u_idx: np.ndarray, i_idx: np.ndarray, params):
        dt = self.cfg.np_dtype
        if not self.inputs.trainable:
            return self._xbar[USER][u_idx], self._xbar[ITEM][i_idx], None
        lam = self.inputs.lambdas

        def assemble(node_type, idx):
            emb = params[f"emb.{node_type}"]
            uniq, inv = np.unique(idx, return_inverse=True)
            blocks = [emb[idx]]
            for s in range(len(lam)):
                rows = self._agg[node_type][s][uniq] @ emb
                blocks.append((lam[s] * rows[inv]).astype(dt, copy=False))
            return np.concatenate(blocks, axis=1)

        return assemble(USER, u_idx), assemble(ITEM, i_idx), None

    def _scatter_input_grads(self, grads, u_idx, i_idx, dxu, dxi):
        """Backpropagate concatenated-input gradients into the embeddings."""
        m = self.inputs.feature_dim
        lam = self.inputs.lambdas
        for node_type, idx, dx in ((USER, u_idx, dxu), (ITEM, i_idx, dxi)):
            emb = self.params[f"emb.{node_type}"]
            g = np.zeros_like(emb)
            np.add.at(g, idx, dx[:, :m])
            uniq = np.unique(idx)
            for s in range(len(lam)):
                block = dx[:, (1 + s) * m : (2 + s) * m]
                dn = np.zeros((len(uniq), m), dtype=block.dtype)
                pos = np.searchsorted(uniq, idx)
                np.add.at(dn, pos, block)
                sub = self._agg[node_type][s][uniq]
                g += lam[s] * (sub.T @ dn)
            grads[f"emb.{node_type}"] = g

    # forward / backward

    def _forward(self, xu, xi, params):
        cfg = self.cfg
        cache = {"xu": xu, "xi": xi}
        if cfg.head == "std":
            zu = xu @ params["w_user"].T
            zi = xi @ params["w_item"].T
            hu = np.maximum(zu, 0)
            hi = np.maximum(zi, 0)
            COUNTERS.mappings += 2 * len(xu)
            cache.update(zu=zu, zi=zi)
            h = np.concatenate([hu, hi], axis=1)
            logits = self._mlp_forward(h, params, cache)
        elif cfg.head == "lin":
            h = np.concatenate([xu, xi], axis=1)
            logits = self._mlp_forward(h, params, cache)
        else:
            nu = np.sqrt(np.maximum(np.einsum("ij,ij->i", xu, xu), 1e-24))
            ni = np.sqrt(np.maximum(np.einsum("ij,ij->i", xi, xi), 1e-24))
            dot = np.einsum("ij,ij->i", xu, xi)
            c = dot / (nu * ni)
            cache.update(nu=nu, ni=ni, c=c)
            if cfg.head == "cos":
                tval = np.tanh(c)
                cache["t"] = tval
                logits = params["cos.scale"] * tval + params["cos.bias"]
            else:
                logits = params["cos.scale"] * c + params["cos.bias"]
        return logits, cache

    def _mlp_forward(self, h, params, cache):
        cache["h0"] = h
        for layer in range(1, self.cfg.head_layers + 1):
            a = h @ params[f"head.a{layer}"].T + params[f"head.b{layer}"]
            h = np.maximum(a, 0)
            cache[f"a{layer}"] = a
            cache[f"h{layer}"] = h
        return h @ params["head.out_w"] + params["head.out_b"]

    def _backward(self, dlogits, cache, params):
        cfg = self.cfg
        grads: dict[str, np.ndarray] = {}
        xu, xi = cache["xu"], cache["xi"]
        if cfg.head in ("std", "lin"):
            dh = self._mlp_backward(dlogits, cache, params, grads)
            if cfg.head == "std":
                r = cfg.repr_dim
                dhu, dhi = dh[:, :r], dh[:, r:]
                dzu = dhu * (cache["zu"] > 0)
                dzi = dhi * (cache["zi"] > 0)
                grads["w_user"] = dzu.T @ xu
                grads["w_item"] = dzi.T @ xi
                dxu = dzu @ params["w_user"]
                dxi = dzi @ params["w_item"]
            else:
                d = xu.shape[1]
                dxu, dxi = dh[:, :d], dh[:, d:]
        else:
            c = cache["c"]
            if cfg.head == "cos":
                tval = cache["t"]
                grads["cos.scale"] = np.asarray(np.sum(dlogits * tval), dtype=dlogits.dtype)
                grads["cos.bias"] = np.asarray(np.sum(dlogits), dtype=dlogits.dtype)
                dc = dlogits * params["cos.scale"] * (1 - tval * tval)
            else:
                grads["cos.scale"] = np.asarray(np.sum(dlogits * c), dtype=dlogits.dtype)
                grads["cos.bias"] = np.asarray(np.sum(dlogits), dtype=dlogits.dtype)
                dc = dlogits * params["cos.scale"]
            nu, ni = cache["nu"], cache["ni"]
            inv = 1.0 / (nu * ni)
            dxu = (dc * inv)[:, None] * xi - ((dc * c) / (nu * nu))[:, None] * xu
            dxi = (dc * inv)[:, None] * xu - ((dc * c) / (ni * ni))[:, None] * xi
        return grads, dxu, dxi

    def _mlp_backward(self, dlogits, cache, params, grads):
        top = f"h{self.cfg.head_layers}"
        grads["head.out_w"] = dlogits @ cache[top]
        grads["head.out_b"] = np.asarray(np.sum(dlogits), dtype=dlogits.dtype)
        dh = np.outer(dlogits, params["head.out_w"])
        for layer in range(self.cfg.head_layers, 0, -1):
            da = dh * (cache[f"a{layer}"] > 0)
            below = cache[f"h{layer - 1}"] if layer > 1 else cache["h0"]
            grads[f"head.a{layer}"] = da.T @ below
            grads[f"head.b{layer}"] = da.sum(axis=0)
            dh = da @ params[f"head.a{layer}"]
        return dh

    # public API

    def predict(self, u_idx: np.ndarray, i_idx: np.ndarray, params=None) -> np.ndarray:
        """Interaction probabilities, strictly inside (0, 1)."""
        params = params or self.params
        xu, xi, _ = self._gather_inputs(np.asarray(u_idx), np.asarray(i_idx), params)
        logits, _ = self._forward(xu, xi, params)
        tiny = 1e-7 if self.cfg.dtype == "float32" else 1e-15
        return np.clip(_sigmoid(logits.astype(np.float64)), tiny, 1 - tiny)

    def scorer(self):
        def score(u_idx, i_idx):
            out = np.empty(len(u_idx))
            for lo in range(0, len(u_idx), 65536):
                hi = lo + 65536
                out[lo:hi] = self.predict(u_idx[lo:hi], i_idx[lo:hi])
            return out

        return score

    def batch_loss(self, u_idx, i_idx, y, params=None) -> float:
        params = params or self.params
        xu, xi, _ = self._gather_inputs(np.asarray(u_idx), np.asarray(i_idx), params)
        logits, _ = self._forward(xu, xi, params)
        return _bce_from_logits(logits.astype(np.float64), np.asarray(y, dtype=np.float64))

    def loss_and_grads(self, u_idx, i_idx, y, params=None):
        params = params or self.params
        u_idx = np.asarray(u_idx)
        i_idx = np.asarray(i_idx)
        y = np.asarray(y, dtype=self.cfg.np_dtype)
        xu, xi, _ = self._gather_inputs(u_idx, i_idx, params)
        logits, cache = self._forward(xu, xi, params)
        j = _bce_from_logits(logits.astype(np.float64), y.astype(np.float64))
        dlogits = ((_sigmoid(logits.astype(np.float64)) - y) / len(y)).astype(self.cfg.np_dtype)
        grads, dxu, dxi = self._backward(dlogits, cache, params)
        if self.inputs.trainable:
            self._scatter_input_grads(grads, u_idx, i_idx, dxu, dxi)
        return j, grads

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k] = v.copy()


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    model: PredictionModel
    state: OptimizerState
    log_rows: list[tuple]
    val_history: list[float]
    best_epoch: int
    best_val_auc: float
    steps: int
    samples_processed: int


def _interacted_sets(split: DatasetSplit, n_users: int) -> list[set[int]]:
    sets: list[set[int]] = [set() for _ in range(n_users)]
    for rec in split.all_interactions():
        sets[rec.user.index].add(rec.item.index)
    return sets


def sample_negatives(
    users: np.ndarray,
    interacted: list[set[int]],
    n_items: int,
    per_user: int,
    rng: np.random.Generator,
    max_rounds: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform non-interacted items, per_user draws for each input user."""
    u = np.repeat(users, per_user)
    items = rng.integers(0, n_items, size=len(u))
    for _ in range(max_rounds):
        bad = np.fromiter(
            (items[j] in interacted[u[j]] for j in range(len(u))), dtype=bool, count=len(u)
        )
        if not bad.any():
            break
        items[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    return u, items


def make_validation_pool(
    split: DatasetSplit, interacted: list[set[int]], n_items: int, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validation AUC pool: observed pairs plus 1:1 sampled negatives."""
    pos = [(r.user.index, r.item.index) for r in split.validation if r.label == 1]
    neg = [(r.user.index, r.item.index) for r in split.validation if r.label == 0]
    rng = sub_rng(seed, STAGE_EVAL, 0)
    need = len(pos) - len(neg)
    if need > 0 and pos:
        users = np.array([u for u, _ in pos[:need]], dtype=np.int64)
        nu, ni = sample_negatives(users, interacted, n_items, 1, rng)
        neg += list(zip(nu.tolist(), ni.tolist()))
    pairs = pos + neg
    labels = np.array([1] * len(pos) + [0] * len(neg), dtype=np.int64)
    u = np.array([p[0] for p in pairs], dtype=np.int64)
    i = np.array([p[1] for p in pairs], dtype=np.int64)
    return u, i, labels


def train(
    split: DatasetSplit,
    inputs: ModelInputs,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    n_users: int,
    n_items: int,
) -> TrainResult:
    """Mini-batch training with warm-up batch schedule and Adam.

    Aggregation must already be folded into `inputs`; the loop never
    recomputes neighborhoods in frozen mode. Negatives are re-sampled
    each epoch at train_cfg.neg_ratio per positive; observed label-0
    pairs always stay in the pool.
    """
    from .evaluation import auc  # local import to avoid a module cycle

    if not split.train:
        raise DataError("training split is empty")
    if train_cfg.early_stop and not split.validation:
        raise DataError("early stopping requires a non-empty validation split")

    model = PredictionModel(model_cfg, inputs, seed=train_cfg.seed)
    state = OptimizerState.for_params(model.params)
    interacted = _interacted_sets(split, n_users)

    pos_u = np.array([r.user.index for r in split.train if r.label == 1], dtype=np.int64)
    pos_i = np.array([r.item.index for r in split.train if r.label == 1], dtype=np.int64)
    obs_neg_u = np.array([r.user.index for r in split.train if r.label == 0], dtype=np.int64)
    obs_neg_i = np.array([r.item.index for r in split.train if r.label == 0], dtype=np.int64)

    val_pool = make_validation_pool(split, interacted, n_items, train_cfg.seed)

    log_rows: list[tuple] = []
    val_history: list[float] = []
    best_val = -np.inf
    best_epoch = -1
    best_snap = model.snapshot()
    global_batch = 0
    step = 0
    samples = 0

    for epoch in range(train_cfg.epochs):
        rng = sub_rng(train_cfg.seed, STAGE_TRAIN, 1, epoch)
        if train_cfg.neg_ratio > 0 and len(pos_u):
            nu, ni = sample_negatives(pos_u, interacted, n_items, train_cfg.neg_ratio, rng)
        else:
            nu = np.zeros(0, dtype=np.int64)
            ni = np.zeros(0, dtype=np.int64)
        u_all = np.concatenate([pos_u, obs_neg_u, nu])
        i_all = np.concatenate([pos_i, obs_neg_i, ni])
        y_all = np.concatenate(
            [np.ones(len(pos_u)), np.zeros(len(obs_neg_u)), np.zeros(len(nu))]
        )
        perm = rng.permutation(len(u_all))
        u_all, i_all, y_all = u_all[perm], i_all[perm], y_all[perm]

        epoch_rows = []
        cursor = 0
        while cursor < len(u_all):
            bs = (
                train_cfg.warmup_batch_size
                if global_batch < train_cfg.warmup_batches
                else train_cfg.batch_size
            )
            u_b = u_all[cursor : cursor + bs]
            i_b = i_all[cursor : cursor + bs]
            y_b = y_all[cursor : cursor + bs]
            cursor += len(u_b)
            j, grads = model.loss_and_grads(u_b, i_b, y_b)
            adam_step(
                model.params, grads, state,
                lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                eps=train_cfg.adam_eps, l2=train_cfg.l2,
            )
            step += 1
            global_batch += 1
            samples += len(u_b)
            epoch_rows.append([step, epoch, len(u_b), j, ""])

        vu, vi, vy = val_pool
        if len(vy) and len(np.unique(vy)) == 2:
            val_auc = auc(model.scorer()(vu, vi), vy)
        else:
            val_auc = float("nan")
        val_history.append(val_auc)
        if epoch_rows:
            epoch_rows[-1][4] = repr(val_auc)
        log_rows.extend(tuple(r) for r in epoch_rows)

        if val_auc > best_val:
            best_val = val_auc
            best_epoch = epoch
            best_snap = model.snapshot()
        elif train_cfg.early_stop and epoch - best_epoch >= train_cfg.patience:
            break

    if train_cfg.early_stop and best_epoch >= 0:
        model.restore(best_snap)
    return TrainResult(
        model=model,
        state=state,
        log_rows=log_rows,
        val_history=val_history,
        best_epoch=best_epoch,
        best_val_auc=float(best_val),
        steps=step,
        samples_processed=samples,
    )


def write_train_log(rows: list[tuple], path: str, header: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header or []:
            fh.write(f"# {line}\n")
        fh.write("step,epoch,batch_size,loss,val_auc\n")
        for step, epoch, bs, j, val in rows:
            fh.write(f"{step},{epoch},{bs},{j!r},{val}\n")
