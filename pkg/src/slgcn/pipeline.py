"""End-to-end experiment orchestration with cached, lineage-checked stages.

Stage order: dataset -> graph/labels -> split -> translation/profiles ->
similarity -> subgraph(+quality) -> features -> aggregation -> training
-> evaluation. Every intermediate is persisted with an input hash; a
stage recomputes when its inputs changed and otherwise reuses the file,
so reruns with the same config and seed reproduce the metrics file
byte for byte.
"""

from __future__ import annotations

import logging
import os
import time

import numpy as np

from . import artifacts, config as config_mod
from .config import ExperimentConfig
from .errors import ConfigError, DataError, SlgcnError
from .evaluation import MetricsReport, ProtocolConfig, evaluate_model, write_metrics
from .features import FeatureMatrix, load_features, save_features, seeded_features
from .graph import (
    ITEM,
    USER,
    DatasetSplit,
    InteractionGraph,
    NodeRef,
    Schema,
    TranslatedGraph,
    binarize_ratings,
    label_all_positive,
    load_interactions,
    positive_view,
    read_split_manifest,
    split_dataset,
    translate_graph,
    write_id_maps,
    write_split_manifest,
)
from .model import (
    COUNTERS,
    AggregatedFeatures,
    ModelConfig,
    ModelInputs,
    OptimizerState,
    PredictionModel,
    TrainConfig,
    TrainResult,
    build_aggregated,
    frozen_inputs,
    train,
    trainable_inputs,
    write_train_log,
)
from .sampling import (
    SampledSubgraph,
    ScoreCache,
    build_subgraph,
    read_subgraph,
    subgraph_quality,
    write_subgraph,
)
from .similarity import ProfileStore, RelationWeights, da_scores
from .synth import generate_dataset

log = logging.getLogger(__name__)


def _stage(name):
    def wrap(fn):
        def inner(self, *args, **kwargs):
            try:
                return fn(self, *args, **kwargs)
            except SlgcnError as exc:
                if str(exc).startswith("stage "):
                    raise
                raise type(exc)(f"stage {name}: {exc}") from exc

        inner.__name__ = fn.__name__
        return inner

    return wrap


class Pipeline:
    """Runs and caches the stages of one experiment configuration."""

    def __init__(self, cfg: ExperimentConfig):
        config_mod.validate(cfg)
        self.cfg = cfg
        self.out = cfg["run.output_dir"]
        self.seed = int(cfg["run.seed"])
        os.makedirs(self.out, exist_ok=True)
        self._memo: dict = {}
        self.timings: dict[str, float] = {}

    # -- helpers ----------------------------------------------------------

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def _slice_hash(self, keys: list[str], extra: str = "") -> str:
        parts = [f"{k}={self.cfg.values[k]!r}" for k in keys]
        for (rel, tgt), w in sorted(self.cfg.slice_weights.items()):
            parts.append(f"weight.{rel}.{tgt}={w!r}")
        return artifacts.hash_text(*parts, extra)

    def _timed(self, key: str, fn):
        t0 = time.perf_counter()
        result = fn()
        self.timings[key] = self.timings.get(key, 0.0) + time.perf_counter() - t0
        return result

    def _has_ratings(self) -> bool:
        cols = [c.strip() for c in str(self.cfg["dataset.columns"]).split(",")]
        if self.cfg["dataset.synthetic"] != "none":
            return bool(self.cfg["dataset.synth_ratings"])
        return "rating" in cols

    def _schema(self) -> Schema:
        if self.cfg["dataset.synthetic"] != "none":
            cols = ("user", "item", "rating", "weight") if self._has_ratings() else (
                "user", "item", "weight")
            return Schema(columns=cols)
        cols = tuple(c.strip() for c in str(self.cfg["dataset.columns"]).split(","))
        delim = {"auto": None, "tab": "\t", "comma": ","}[self.cfg["dataset.delimiter"]]
        return Schema(columns=cols, delimiter=delim, has_header=bool(self.cfg["dataset.has_header"]))

    def _weights(self) -> RelationWeights | None:
        if not self.cfg.slice_weights:
            return None
        return RelationWeights(dict(self.cfg.slice_weights))

    # -- stages -----------------------------------------------------------

    @_stage("dataset")
    def dataset_path(self) -> str:
        if "dataset" in self._memo:
            return self._memo["dataset"]
        kind = self.cfg["dataset.synthetic"]
        if kind == "none":
            path = self.cfg["dataset.path"]
        else:
            path = self.path("dataset.txt")
            meta = self.path("dataset.meta")
            want = self._slice_hash(
                [k for k in config_mod.KEYS if k.startswith("dataset.synth")]
                + ["dataset.synthetic", "run.seed"]
            )
            if not artifacts.artifact_fresh(meta, "dataset", want):
                log.info("generating synthetic dataset (%s) at %s", kind, path)
                overrides = {
                    "n_users": self.cfg["dataset.synth_users"],
                    "n_items": self.cfg["dataset.synth_items"],
                    "n_interactions": self.cfg["dataset.synth_interactions"],
                    "n_clusters": self.cfg["dataset.synth_clusters"],
                    "affinity": self.cfg["dataset.synth_affinity"],
                    "explicit_ratings": self.cfg["dataset.synth_ratings"],
                    "seed": self.seed,
                }
                if kind == "lastfm":
                    overrides = {"explicit_ratings": False, "seed": self.seed}
                self._timed("dataset", lambda: generate_dataset(kind, path, overrides))
                with open(meta, "w", encoding="utf-8") as fh:
                    for line in artifacts.header_lines("dataset", want):
                        fh.write(f"# {line}\n")
        self._memo["dataset"] = path
        return path

    def dataset_hash(self) -> str:
        if "dataset_hash" not in self._memo:
            self._memo["dataset_hash"] = artifacts.hash_file(self.dataset_path())
        return self._memo["dataset_hash"]

    @_stage("ingest")
    def graph(self) -> InteractionGraph:
        if "graph" not in self._memo:
            g = self._timed(
                "ingest", lambda: load_interactions(self.dataset_path(), self._schema())
            )
            write_id_maps(g, self.out)
            self._memo["graph"] = g
        return self._memo["graph"]

    @_stage("labels")
    def labels(self):
        if "labels" not in self._memo:
            g = self.graph()
            if self._has_ratings():
                self._memo["labels"] = binarize_ratings(
                    g, float(self.cfg["dataset.rating_threshold"])
                )
            else:
                self._memo["labels"] = label_all_positive(g)
        return self._memo["labels"]

    @_stage("split")
    def split(self) -> DatasetSplit:
        if "split" in self._memo:
            return self._memo["split"]
        path = self.path("split.txt")
        want = artifacts.hash_text(
            self.dataset_hash(),
            self._slice_hash(["split.ratios", "dataset.rating_threshold", "run.seed"]),
        )
        if artifacts.artifact_fresh(path, "split", want):
            split = read_split_manifest(path, seed=self.seed)
        else:
            split = self._timed(
                "split",
                lambda: split_dataset(
                    self.labels(), self.cfg["split.ratios"], self.seed
                ),
            )
            write_split_manifest(split, path, artifacts.header_lines("split", want))
        self._memo["split"] = split
        self._memo["split_hash"] = want
        return split

    @_stage("translate")
    def positive(self) -> InteractionGraph:
        if "positive" not in self._memo:
            threshold = (
                float(self.cfg["dataset.rating_threshold"]) if self._has_ratings() else None
            )
            self._memo["positive"] = positive_view(self.graph(), threshold)
        return self._memo["positive"]

    @_stage("translate")
    def translation(self) -> TranslatedGraph:
        if "tg" not in self._memo:
            self._memo["tg"] = self._timed(
                "translate", lambda: translate_graph(self.positive(), positive_only=False)
            )
        return self._memo["tg"]

    @_stage("translate")
    def profiles(self) -> ProfileStore:
        if "profiles" not in self._memo:
            self._memo["profiles"] = ProfileStore(self.positive())
        return self._memo["profiles"]

    @_stage("similarity")
    def similarity(self) -> ScoreCache:
        if "simcache" in self._memo:
            return self._memo["simcache"]
        metric = self.cfg["similarity.metric"]
        path = self.path("similarity.npz")
        want = artifacts.hash_text(
            self.dataset_hash(),
            self._slice_hash(
                ["similarity.metric", "similarity.epsilon", "dataset.rating_threshold"]
            ),
        )
        if artifacts.arrays_fresh(path, "similarity", want):
            data = artifacts.load_arrays(path, "similarity", want)
            rows: dict[str, list] = {}
            for node_type in (USER, ITEM):
                if f"{node_type}.indptr" not in data:
                    continue
                indptr = data[f"{node_type}.indptr"]
                cand = data[f"{node_type}.cand"]
                vals = data[f"{node_type}.vals"]
                rows[node_type] = [
                    (cand[indptr[i] : indptr[i + 1]], vals[indptr[i] : indptr[i + 1]])
                    for i in range(len(indptr) - 1)
                ]
            cache = ScoreCache(metric, rows)
        else:
            cache = self._timed("similarity", self._compute_similarity)
            payload = {}
            for node_type, lists in cache.rows.items():
                indptr = np.zeros(len(lists) + 1, dtype=np.int64)
                for i, (cand, _) in enumerate(lists):
                    indptr[i + 1] = indptr[i] + len(cand)
                payload[f"{node_type}.indptr"] = indptr
                payload[f"{node_type}.cand"] = (
                    np.concatenate([c for c, _ in lists]) if lists else np.zeros(0, np.int64)
                )
                payload[f"{node_type}.vals"] = (
                    np.concatenate([v for _, v in lists]) if lists else np.zeros(0)
                )
            artifacts.save_arrays(path, "similarity", want, payload)
        self._memo["simcache"] = cache
        return cache

    def _compute_similarity(self) -> ScoreCache:
        g = self.graph()
        tg = self.translation()
        profiles = self.profiles()
        metric = self.cfg["similarity.metric"]
        eps = float(self.cfg["similarity.epsilon"])
        weights = self._weights()
        rows: dict[str, list] = {}
        for node_type in (USER, ITEM):
            if node_type not in tg.per_type:
                continue
            lists = []
            for i in range(g.node_counts.get(node_type, 0)):
                node = NodeRef(node_type, i)
                cand = tg.candidates(node)
                vals = (
                    da_scores(profiles, node, cand, metric=metric, eps=eps, weights=weights)
                    if len(cand)
                    else np.zeros(0)
                )
                lists.append((cand, vals))
            rows[node_type] = lists
        return ScoreCache(metric, rows)

    def export_similarity_text(self) -> list[str]:
        """Interoperable "u v metric value" dump, one file per node type."""
        cache = self.similarity()
        paths = []
        for node_type, lists in cache.rows.items():
            path = self.path(f"similarity_{node_type}.txt")
            with open(path, "w", encoding="utf-8") as fh:
                for u, (cand, vals) in enumerate(lists):
                    for v, s in zip(cand, vals):
                        fh.write(f"{u} {int(v)} {cache.metric} {float(s)!r}\n")
            paths.append(path)
        return paths

    def _strategy(self, strategy: str | None) -> str:
        return strategy or self.cfg["sampler.strategy"]

    def _suffix(self, value: str | None, default: str) -> str:
        return "" if value in (None, default) else f"-{value}"

    def _subgraph_hash(self, strategy: str) -> str:
        return artifacts.hash_text(
            self.dataset_hash(),
            f"strategy={strategy}",
            self._slice_hash(
                [
                    "sampler.k",
                    "sampler.mode",
                    "sampler.walks",
                    "sampler.walk_length",
                    "similarity.metric",
                    "similarity.epsilon",
                    "dataset.rating_threshold",
                    "run.seed",
                ]
            ),
        )

    @_stage("sample")
    def subgraph(self, strategy: str | None = None) -> SampledSubgraph:
        strategy = self._strategy(strategy)
        key = f"subgraph:{strategy}"
        if key in self._memo:
            return self._memo[key]
        suffix = self._suffix(strategy, self.cfg["sampler.strategy"])
        path = self.path(f"subgraph{suffix}.txt")
        want = self._subgraph_hash(strategy)
        g = self.graph()
        if artifacts.artifact_fresh(path, "subgraph", want):
            sub = read_subgraph(path, g.node_counts)
        else:
            sub = self._timed(
                f"sample[{strategy}]",
                lambda: build_subgraph(
                    self.positive(),
                    self.translation(),
                    strategy,
                    int(self.cfg["sampler.k"]),
                    mode=self.cfg["sampler.mode"],
                    seed=self.seed,
                    profiles=self.profiles(),
                    metric=self.cfg["similarity.metric"],
                    eps=float(self.cfg["similarity.epsilon"]),
                    weights=self._weights(),
                    walks=int(self.cfg["sampler.walks"]),
                    walk_length=int(self.cfg["sampler.walk_length"]),
                    da_cache=self.similarity() if strategy == "da" else None,
                ),
            )
            write_subgraph(sub, path, artifacts.header_lines("subgraph", want))
        self._memo[key] = sub
        return sub

    @_stage("quality")
    def quality(self, strategy: str | None = None):
        strategy = self._strategy(strategy)
        key = f"quality:{strategy}"
        if key in self._memo:
            return self._memo[key]
        sub = self.subgraph(strategy)
        q = self._timed(
            f"quality[{strategy}]",
            lambda: subgraph_quality(
                sub,
                self.profiles(),
                metric=self.cfg["similarity.metric"],
                eps=float(self.cfg["similarity.epsilon"]),
                weights=self._weights(),
                da_cache=self.similarity() if strategy == "da" else None,
            ),
        )
        suffix = self._suffix(strategy, self.cfg["sampler.strategy"])
        with open(self.path(f"quality{suffix}.txt"), "w", encoding="utf-8") as fh:
            for line in artifacts.header_lines("quality", self._subgraph_hash(strategy)):
                fh.write(f"# {line}\n")
            fh.write(f"mans_users={q.mans_users!r}\n")
            fh.write(f"mans_items={q.mans_items!r}\n")
            fh.write(f"mans_all={q.mans_all!r}\n")
        self._memo[key] = q
        return q

    @_stage("features")
    def features(self) -> FeatureMatrix:
        if "features" in self._memo:
            return self._memo["features"]
        g = self.graph()
        if self.cfg["features.source"] == "file":
            fm = load_features(self.cfg["features.path"], g.node_counts)
        else:
            path = self.path("features.txt")
            want = artifacts.hash_text(
                self.dataset_hash(), self._slice_hash(["features.dim", "run.seed"])
            )
            if artifacts.artifact_fresh(path, "features", want):
                fm = load_features(path, g.node_counts)
            else:
                fm = self._timed(
                    "features",
                    lambda: seeded_features(g, int(self.cfg["features.dim"]), self.seed),
                )
                save_features(fm, path, artifacts.header_lines("features", want))
        self._memo["features"] = fm
        return fm

    @_stage("aggregate")
    def model_inputs(self, strategy: str | None = None) -> ModelInputs:
        strategy = self._strategy(strategy)
        key = f"inputs:{strategy}"
        if key in self._memo:
            return self._memo[key]
        fm = self.features()
        sub = self.subgraph(strategy)
        if bool(self.cfg["model.trainable_features"]):
            inputs = trainable_inputs(fm, sub)
        else:
            suffix = self._suffix(strategy, self.cfg["sampler.strategy"])
            path = self.path(f"aggregated{suffix}.npz")
            want = artifacts.hash_text(
                self._subgraph_hash(strategy),
                self._slice_hash(["features.dim", "features.source", "run.seed"]),
            )
            if artifacts.arrays_fresh(path, "aggregated", want):
                data = artifacts.load_arrays(path, "aggregated", want)
                agg = AggregatedFeatures(
                    fm.dim, len(sub.slices), np.ones(len(sub.slices)), dict(data)
                )
                inputs = frozen_inputs(agg)
            else:
                agg = self._timed("aggregate", lambda: build_aggregated(fm, sub))
                artifacts.save_arrays(path, "aggregated", want, agg.per_type)
                inputs = frozen_inputs(agg)
        self._memo[key] = inputs
        return inputs

    def _model_cfg(self, head: str | None = None) -> ModelConfig:
        return ModelConfig(
            head=head or self.cfg["model.head"],
            repr_dim=int(self.cfg["model.repr_dim"]),
            head_width=int(self.cfg["model.head_width"]),
            head_layers=int(self.cfg["model.head_layers"]),
            dtype=self.cfg["model.dtype"],
        )

    def _train_cfg(self, epochs: int | None = None, early_stop: bool | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=epochs or int(self.cfg["train.epochs"]),
            warmup_batch_size=int(self.cfg["train.warmup_batch_size"]),
            batch_size=int(self.cfg["train.batch_size"]),
            warmup_batches=int(self.cfg["train.warmup_batches"]),
            neg_ratio=int(self.cfg["train.neg_ratio"]),
            lr=float(self.cfg["train.lr"]),
            l2=float(self.cfg["train.l2"]),
            beta1=float(self.cfg["train.beta1"]),
            beta2=float(self.cfg["train.beta2"]),
            adam_eps=float(self.cfg["train.adam_eps"]),
            early_stop=bool(self.cfg["train.early_stop"]) if early_stop is None else early_stop,
            patience=int(self.cfg["train.patience"]),
            seed=self.seed,
        )

    def _train_hash(self, strategy: str, head: str | None) -> str:
        return artifacts.hash_text(
            self._subgraph_hash(strategy),
            f"head={head or self.cfg['model.head']}",
            self._slice_hash(
                [k for k in config_mod.KEYS if k.startswith(("model.", "train.", "features."))]
            ),
        )

    @_stage("train")
    def trained(self, strategy: str | None = None, head: str | None = None) -> PredictionModel:
        strategy = self._strategy(strategy)
        key = f"model:{strategy}:{head or self.cfg['model.head']}"
        if key in self._memo:
            return self._memo[key]
        suffix = self._suffix(strategy, self.cfg["sampler.strategy"]) + self._suffix(
            head, self.cfg["model.head"]
        )
        ckpt_path = self.path(f"checkpoint{suffix}.bin")
        want = self._train_hash(strategy, head)
        inputs = self.model_inputs(strategy)
        mcfg = self._model_cfg(head)
        if os.path.exists(ckpt_path):
            try:
                snap = artifacts.load_checkpoint(ckpt_path)
            except DataError:
                snap = None
            if snap and snap["inputs"] == want:
                model = PredictionModel(mcfg, inputs, seed=self.seed)
                for k, arr in snap["params"].items():
                    model.params[k] = arr.astype(mcfg.np_dtype)
                self._memo[key] = model
                return model
        result = self._timed(
            f"train[{strategy}:{mcfg.head}]",
            lambda: train(
                self.split(),
                inputs,
                mcfg,
                self._train_cfg(),
                self.graph().n_users,
                self.graph().n_items,
            ),
        )
        model = result.model
        artifacts.save_checkpoint(
            ckpt_path,
            want,
            config_mod.serialize(self.cfg),
            model.params,
            result.state.m,
            result.state.v,
            result.steps,
        )
        write_train_log(
            result.log_rows,
            self.path(f"train_log{suffix}.csv"),
            artifacts.header_lines("train-log", want),
        )
        self._memo[key] = model
        return model

    @_stage("evaluate")
    def evaluate(self, strategy: str | None = None, head: str | None = None) -> MetricsReport:
        strategy = self._strategy(strategy)
        model = self.trained(strategy, head)
        q = self.quality(strategy)
        protocol = ProtocolConfig(
            negatives_per_positive=int(self.cfg["protocol.negatives"]),
            ndcg_k=int(self.cfg["protocol.ndcg_k"]),
            auc_pool=self.cfg["protocol.auc_pool"],
        )
        g = self.graph()
        report = self._timed(
            f"evaluate[{strategy}:{head or self.cfg['model.head']}]",
            lambda: evaluate_model(
                model.scorer(),
                self.split(),
                g.n_users,
                g.n_items,
                protocol,
                seed=self.seed,
                mans_users=q.mans_users,
                mans_items=q.mans_items,
            ),
        )
        suffix = self._suffix(strategy, self.cfg["sampler.strategy"]) + self._suffix(
            head, self.cfg["model.head"]
        )
        want = artifacts.hash_text(
            self._train_hash(strategy, head),
            self._slice_hash([k for k in config_mod.KEYS if k.startswith("protocol.")]),
        )
        write_metrics(report, self.path(f"metrics{suffix}.txt"), artifacts.header_lines("metrics", want))
        with open(self.path(f"timings{suffix}.txt"), "w", encoding="utf-8") as fh:
            for stage, seconds in sorted({**self.timings, **report.timings}.items()):
                fh.write(f"{stage}={seconds:.3f}\n")
        return report


def run_pipeline(cfg: ExperimentConfig) -> tuple[MetricsReport, Pipeline]:
    """Execute every stage for one experiment; returns the final report."""
    pl = Pipeline(cfg)
    report = pl.evaluate()
    return report, pl


def compare_sampling(cfg: ExperimentConfig, strategies: list[str]) -> list[dict]:
    """One full pipeline per strategy with shared split/features/seeds."""
    if len(strategies) < 2:
        raise ConfigError("compare-sampling needs at least 2 strategies")
    pl = Pipeline(cfg)
    rows = []
    for strategy in strategies:
        q = pl.quality(strategy)
        report = pl.evaluate(strategy)
        rows.append(
            {
                "strategy": strategy,
                "mans_users": q.mans_users,
                "mans_items": q.mans_items,
                "auc": report.auc,
                "ndcg10": report.ndcg_at_10,
            }
        )
    path = pl.path("compare_sampling.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("strategy,mans_users,mans_items,auc,ndcg10\n")
        for r in rows:
            fh.write(
                f"{r['strategy']},{r['mans_users']!r},{r['mans_items']!r},"
                f"{r['auc']!r},{r['ndcg10']!r}\n"
            )
    return rows


def write_run_summary(pl: Pipeline) -> str:
    """Combine metrics/quality files in the output dir into one report."""
    import glob

    path = pl.path("run_summary.txt")
    lines = []
    for metrics_file in sorted(glob.glob(pl.path("metrics*.txt"))):
        lines.append(f"[{os.path.basename(metrics_file)}]")
        with open(metrics_file, "r", encoding="utf-8") as fh:
            lines += [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
        lines.append("")
    csv_path = pl.path("metrics_combined.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("source,key,value\n")
        for metrics_file in sorted(glob.glob(pl.path("metrics*.txt"))):
            if metrics_file.endswith("metrics_combined.csv"):
                continue
            name = os.path.basename(metrics_file)
            with open(metrics_file, "r", encoding="utf-8") as mf:
                for ln in mf:
                    ln = ln.strip()
                    if not ln or ln.startswith("#"):
                        continue
                    k, _, v = ln.partition("=")
                    fh.write(f"{name},{k},{v}\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
