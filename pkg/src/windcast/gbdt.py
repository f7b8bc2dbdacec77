"""Gradient-boosted regression trees (squared error) and horizon-bucket ensembles.

Trees grow best-first: the leaf whose best split removes the most squared
error is expanded next, until ``max_leaves`` is reached or no split helps.
Split search is exact over the sorted unique values of every feature; the
hot loop lives in :mod:`windcast._kernels`.
"""

from __future__ import annotations

import heapq
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from ._io import SCHEMA_VERSION, ArtifactError, check_version
from .preprocess import FeatureFrame

log = logging.getLogger(__name__)

DEFAULT_BUCKETS = (1, 3, 9, 18, 36, 72, 288)
MAX_HORIZON = 288


@dataclass(frozen=True)
class GbdtParams:
    learning_rate: float = 0.05
    max_leaves: int = 63
    min_samples_leaf: int = 20
    bagging_fraction: float = 0.8
    num_boost_round: int = 1000
    early_stopping_rounds: int | None = 20
    seed: int = 0
    max_bins: int | None = None
    min_split_gain: float = 1e-12


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat node arrays; node 0 is the root and ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        return _kernels.predict_forest(
            np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
            self.left, self.right, self.value, np.zeros(1, dtype=np.int64),
        )

    def splits(self) -> list:
        """``(node, feature, threshold)`` for internal nodes in creation order."""
        return [(i, int(f), float(t)) for i, (f, t) in enumerate(zip(self.feature, self.threshold)) if f >= 0]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "gain")}

    @classmethod
    def from_dict(cls, d) -> "RegressionTree":
        ints = {k: np.array(d[k], dtype=np.int64) for k in ("feature", "left", "right")}
        floats = {k: np.array(d[k], dtype=np.float64) for k in ("threshold", "value", "gain")}
        return cls(**ints, **floats)


def presort(X: np.ndarray) -> np.ndarray:
    """Row indices ordered by each feature column, shape ``(n_features, n_rows)``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def fit_tree(X, residuals, params: GbdtParams = GbdtParams(), seed: int | None = None,
             sorted_all: np.ndarray | None = None) -> RegressionTree:
    """Fit one regression tree to ``residuals``.

    ``sorted_all`` may carry a :func:`presort` of ``X`` reused across rounds.
    Rows are bagged without replacement when ``bagging_fraction < 1``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(residuals, dtype=np.float64)
    n, n_features = X.shape
    if n < 1:
        raise ValueError("fit_tree needs at least one row")
    if not np.isfinite(y).all():
        raise ValueError("residuals must be finite")
    if sorted_all is None:
        sorted_all = presort(X)

    if params.bagging_fraction < 1.0:
        rng = np.random.default_rng(params.seed if seed is None else seed)
        m = max(1, int(round(params.bagging_fraction * n)))
        inbag = np.zeros(n, dtype=np.uint8)
        inbag[rng.choice(n, size=m, replace=False)] = 1
        sorted_idx, _ = _kernels.partition_sorted(sorted_all, inbag)
    else:
        sorted_idx = sorted_all

    min_leaf = max(1, int(params.min_samples_leaf))
    feature, threshold, left, right, value, gain = [], [], [], [], [], []
    node_rows = []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[idx[0]])) if idx.shape[1] else 0.0)
        gain.append(0.0)
        node_rows.append(idx)
        return len(feature) - 1

    heap = []

    def push(node):
        idx = node_rows[node]
        f, thr, g, _ = _kernels.best_split(X, y, idx, min_leaf)
        if f >= 0 and g > params.min_split_gain:
            heapq.heappush(heap, (-g, node, f, thr))

    push(new_node(sorted_idx))
    n_leaves = 1
    go_left = np.zeros(n, dtype=np.uint8)
    while heap and n_leaves < params.max_leaves:
        neg_g, node, f, thr = heapq.heappop(heap)
        idx = node_rows[node]
        rows = idx[0]
        go_left[rows] = X[rows, f] <= thr
        li, ri = _kernels.partition_sorted(idx, go_left)
        go_left[rows] = 0
        feature[node], threshold[node], gain[node] = f, thr, -neg_g
        node_rows[node] = None
        left[node] = new_node(li)
        right[node] = new_node(ri)
        push(left[node])
        push(right[node])
        n_leaves += 1

    for i, f in enumerate(feature):
        if f >= 0:
            value[i] = 0.0
    return RegressionTree(
        np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64), np.array(gain, dtype=np.float64),
    )


def _bin_edges(X: np.ndarray, max_bins: int) -> list:
    qs = np.linspace(0, 1, max_bins + 1)[1:-1]
    return [np.unique(np.quantile(X[:, j], qs)) for j in range(X.shape[1])]


def _binned(X: np.ndarray, edges: list) -> np.ndarray:
    out = np.empty_like(X)
    for j, e in enumerate(edges):
        out[:, j] = np.searchsorted(e, X[:, j], side="left")
    return out


def _unbin_tree(tree: RegressionTree, edges: list) -> RegressionTree:
    thr = tree.threshold.copy()
    for i, f in enumerate(tree.feature):
        if f >= 0:
            # bin(x) <= i  <=>  x <= edges[i]
            thr[i] = edges[f][int(np.floor(thr[i]))]
    return RegressionTree(tree.feature, thr, tree.left, tree.right, tree.value, tree.gain)


@dataclass(eq=False)
class GbdtModel:
    base_score: float
    learning_rate: float
    feature_names: tuple
    trees: list = field(default_factory=list)
    best_iteration: int = 0
    params: GbdtParams = field(default_factory=GbdtParams)
    history: dict = field(default_factory=dict)

    def _forest(self):
        trees = self.trees[: self.best_iteration]
        if not trees:
            return None
        sizes = [t.feature.size for t in trees]
        offs = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)

        def shift(a, o):
            return np.where(a >= 0, a + o, -1)

        return (
            np.concatenate([t.feature for t in trees]),
            np.concatenate([t.threshold for t in trees]),
            np.concatenate([shift(t.left, o) for t, o in zip(trees, offs)]),
            np.concatenate([shift(t.right, o) for t, o in zip(trees, offs)]),
            np.concatenate([t.value for t in trees]),
            offs,
        )

    def predict(self, X, feature_names=None) -> np.ndarray:
        """``base_score + learning_rate * sum(tree(x))`` over the first ``best_iteration`` trees."""
        if feature_names is not None and tuple(feature_names) != tuple(self.feature_names):
            raise ValueError("feature columns do not match the model's feature_names")
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(f"expected {len(self.feature_names)} feature columns, got shape {X.shape}")
        forest = self._forest()
        if forest is None:
            return np.full(X.shape[0], self.base_score)
        return self.base_score + self.learning_rate * _kernels.predict_forest(X, *forest)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "gbdt_model",
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": list(self.feature_names),
            "best_iteration": self.best_iteration,
            "params": asdict(self.params),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "GbdtModel":
        check_version(d, "gbdt model")
        return cls(
            base_score=float(d["base_score"]), learning_rate=float(d["learning_rate"]),
            feature_names=tuple(d["feature_names"]),
            trees=[RegressionTree.from_dict(t) for t in d["trees"]],
            best_iteration=int(d["best_iteration"]), params=GbdtParams(**d["params"]),
        )


def _mse(a, b) -> float:
    d = a - b
    return float(np.mean(d * d)) if d.size else float("nan")


def fit_boosting(X, y, params: GbdtParams = GbdtParams(), X_valid=None, y_valid=None,
                 feature_names=None) -> GbdtModel:
    """Boost squared-error trees, stopping early on validation MSE."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(X.shape[1]))
    use_es = bool(params.early_stopping_rounds)
    if use_es and (X_valid is None or len(X_valid) == 0):
        raise ValueError("early stopping needs a non-empty validation set")

    edges = _bin_edges(X, params.max_bins) if params.max_bins else None
    Xfit = _binned(X, edges) if edges else X
    sorted_all = presort(Xfit)
    base = float(np.mean(y))
    model = GbdtModel(base, params.learning_rate, names, [], 0, params,
                      {"train_mse": [], "valid_mse": []})
    pred = np.full(y.shape, base)
    if use_es:
        X_valid = np.ascontiguousarray(X_valid, dtype=np.float64)
        y_valid = np.asarray(y_valid, dtype=np.float64)
        pv = np.full(y_valid.shape, base)
        best_mse, best_it = _mse(pv, y_valid), 0
        model.history["valid_mse"].append(best_mse)
    model.history["train_mse"].append(_mse(pred, y))

    for t in range(params.num_boost_round):
        tree = fit_tree(Xfit, y - pred, params, seed=params.seed * 1_000_003 + t, sorted_all=sorted_all)
        if edges:
            tree = _unbin_tree(tree, edges)
        model.trees.append(tree)
        pred = pred + params.learning_rate * tree.predict(X)
        model.history["train_mse"].append(_mse(pred, y))
        if use_es:
            pv = pv + params.learning_rate * tree.predict(X_valid)
            v = _mse(pv, y_valid)
            model.history["valid_mse"].append(v)
            if v < best_mse:
                best_mse, best_it = v, t + 1
            elif t + 1 - best_it >= params.early_stopping_rounds:
                break
        if tree.n_leaves == 1 and not edges and np.allclose(tree.value, 0.0):
            break
    model.best_iteration = best_it if use_es else len(model.trees)
    model.trees = model.trees[: model.best_iteration]
    return model


def train_gbdt(train: FeatureFrame, valid: FeatureFrame | None, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Train on rows with full history and valid targets."""
    tr = train.training_rows()
    if len(tr) == 0:
        raise ValueError("training frame has no usable rows")
    if valid is not None:
        va = valid.training_rows()
        Xv, yv = va.X, va.target
    else:
        Xv = yv = None
    return fit_boosting(tr.X, tr.target, params, Xv, yv, train.names)


def feature_importance(model: GbdtModel, top_k: int | None = None) -> list:
    """Total split gain per feature over the used trees, descending (ties by name)."""
    totals: dict = {}
    for tree in model.trees[: model.best_iteration]:
        for f, g in zip(tree.feature, tree.gain):
            if f >= 0:
                name = model.feature_names[f]
                totals[name] = totals.get(name, 0.0) + float(g)
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_k] if top_k is not None else ranked


# --------------------------------------------------------------------------
# Horizon buckets


def validate_buckets(buckets) -> tuple:
    b = tuple(int(x) for x in buckets)
    if len(b) < 2 or b[0] != 1 or b[-1] != MAX_HORIZON or any(x >= y for x, y in zip(b, b[1:])):
        raise ValueError(f"bucket boundaries must increase strictly from 1 to {MAX_HORIZON}: {b}")
    return b


def bucket_ranges(buckets) -> list:
    """Inclusive horizon ranges: ``[1, b1]``, then ``[b_k + 1, b_{k+1}]``."""
    b = validate_buckets(buckets)
    return [(1 if k == 0 else b[k] + 1, b[k + 1]) for k in range(len(b) - 1)]


def bucket_of(h: int, buckets) -> int:
    for k, (lo, hi) in enumerate(bucket_ranges(buckets)):
        if lo <= h <= hi:
            return k
    raise ValueError(f"horizon {h} outside 1..{MAX_HORIZON}")


def sample_horizons(lo: int, hi: int, max_count: int | None) -> np.ndarray:
    """Evenly spaced horizons in ``[lo, hi]`` (all of them when ``max_count`` is None)."""
    span = hi - lo + 1
    if max_count is None or span <= max_count:
        return np.arange(lo, hi + 1)
    return np.unique(np.round(np.linspace(lo, hi, max_count)).astype(np.int64))


@dataclass(eq=False)
class GbdtEnsemble:
    buckets: tuple
    feature_names: tuple
    models: dict  # (cluster, bucket) -> GbdtModel
    meta: dict = field(default_factory=dict)

    def model_for(self, cluster: int, horizon: int) -> GbdtModel:
        return self.models[(int(cluster), bucket_of(horizon, self.buckets))]

    def predict_frame(self, frame: FeatureFrame, cluster_ids: np.ndarray) -> np.ndarray:
        """Predict every row, routing by (row cluster, row horizon bucket)."""
        out = np.empty(len(frame))
        bidx = np.array([bucket_of(int(h), self.buckets) for h in range(1, MAX_HORIZON + 1)])[frame.horizon - 1]
        for (c, b), model in self.models.items():
            sel = (cluster_ids == c) & (bidx == b)
            if sel.any():
                out[sel] = model.predict(frame.X[sel])
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "gbdt_ensemble",
            "buckets": list(self.buckets),
            "feature_names": list(self.feature_names),
            "models": [{"cluster": c, "bucket": b, "model": m.to_dict()}
                       for (c, b), m in sorted(self.models.items())],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d) -> "GbdtEnsemble":
        check_version(d, "gbdt ensemble")
        if d.get("kind") != "gbdt_ensemble":
            raise ArtifactError("not a gbdt ensemble artifact")
        models = {(int(e["cluster"]), int(e["bucket"])): GbdtModel.from_dict(e["model"]) for e in d["models"]}
        return cls(tuple(d["buckets"]), tuple(d["feature_names"]), models, dict(d.get("meta", {})))

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GbdtEnsemble":
        path = Path(path)
        if not path.exists():
            raise ArtifactError(f"artifact not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def train_ensemble(frames: dict, buckets=DEFAULT_BUCKETS, params: GbdtParams = GbdtParams(),
                   threads: int = 1) -> GbdtEnsemble:
    """Train one model per ``(cluster, bucket)`` key of ``frames``.

    ``frames`` maps ``(cluster, bucket)`` to ``(train_frame, valid_frame)``.
    """
    validate_buckets(buckets)
    keys = sorted(frames)
    if not keys:
        raise ValueError("no training frames")
    for k in keys:
        if len(frames[k][0].training_rows()) == 0:
            raise ValueError(f"empty training frame for cluster {k[0]}, bucket {k[1]}")

    def job(key):
        tr, va = frames[key]
        model = train_gbdt(tr, va, params)
        log.info("gbdt cluster=%d bucket=%d rows=%d trees=%d", key[0], key[1],
                 len(tr.training_rows()), model.best_iteration)
        return model

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        models = dict(zip(keys, pool.map(job, keys)))
    names = frames[keys[0]][0].names
    return GbdtEnsemble(tuple(validate_buckets(buckets)), tuple(names), models)
