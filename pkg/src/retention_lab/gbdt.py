"""Leaf-wise gradient-boosted decision trees for binary log loss.

Trees are grown best-first on histogram-binned features: every open leaf
keeps its best split candidate, and the leaf with the globally largest gain
is split next until the leaf budget is spent.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from retention_lab.binning import BinnedDataset
from retention_lab.errors import ConfigError, DataError, ModelIntegrityError, SchemaError
from retention_lab.records import FEATURES, FeatureVector, atomic_write_text

MODEL_FORMAT = "retention-lab/gbdt-v1"

# Values accepted for the echo-only parameters.
FIXED_PARAMS = {
    "boosting_type": "gbdt",
    "objective": "binary",
    "metric": "binary_logloss",
    "verbose": -1,
}


@dataclass(frozen=True)
class TrainConfig:
    max_bin: int = 512
    learning_rate: float = 0.05
    num_leaves: int = 10
    min_data: int = 100
    num_iterations: int = 10_000
    boost_from_average: bool = True
    lambda_l2: float = 0.0
    split_ratio: float = 0.7
    seed: int = 42
    early_stopping_rounds: int | None = None
    stratify: bool = False
    boosting_type: str = "gbdt"
    objective: str = "binary"
    metric: str = "binary_logloss"
    verbose: int = -1

    def validate(self) -> None:
        if self.max_bin < 2:
            raise ConfigError("max_bin must be >= 2")
        if self.max_bin > 65535:
            raise ConfigError("max_bin must fit 16-bit bin indices")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.num_leaves < 2:
            raise ConfigError("num_leaves must be >= 2")
        if self.min_data < 1:
            raise ConfigError("min_data must be >= 1")
        if self.num_iterations < 0:
            raise ConfigError("num_iterations must be >= 0")
        if self.lambda_l2 < 0:
            raise ConfigError("lambda_l2 must be >= 0")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise ConfigError("early_stopping_rounds must be >= 1")
        for key, expected in FIXED_PARAMS.items():
            if getattr(self, key) != expected:
                raise ConfigError(f"{key} only supports {expected!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------- data split


def split_indices(
    n: int, ratio: float, seed: int, labels: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle then prefix split. Passing ``labels`` stratifies by class."""
    if n < 2:
        raise DataError("need at least 2 rows to split")
    if not 0.0 < ratio < 1.0:
        raise ConfigError("split ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    if labels is None:
        perm = rng.permutation(n)
        n_train = min(max(int(math.floor(ratio * n + 0.5)), 1), n - 1)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    labels = np.asarray(labels)
    train, test = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        k = int(math.floor(ratio * len(idx) + 0.5))
        train.append(idx[:k])
        test.append(idx[k:])
    train_idx, test_idx = np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise DataError("stratified split left one side empty")
    return train_idx, test_idx


def split_train_test(
    cohort: Sequence[FeatureVector], ratio: float = 0.7, seed: int = 42, stratify: bool = False
) -> tuple[list[FeatureVector], list[FeatureVector]]:
    labels = np.array([v.label for v in cohort]) if stratify else None
    train_idx, test_idx = split_indices(len(cohort), ratio, seed, labels)
    return [cohort[i] for i in train_idx], [cohort[i] for i in test_idx]


# ------------------------------------------------------------------- loss pieces


def sigmoid(margin):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(margin, dtype=np.float64)))


def init_base_score(labels) -> float:
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0 or y.min() == y.max():
        raise DataError("degenerate labels: need both classes to boost from average")
    p = y.mean()
    return float(np.log(p / (1.0 - p)))


def logistic_gradients(labels, margins) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative of binary log loss with respect to the margin."""
    p = sigmoid(margins)
    return p - np.asarray(labels, dtype=np.float64), p * (1.0 - p)


def margin_logloss(labels, margins) -> float:
    """Mean binary log loss evaluated stably in margin space."""
    m = np.asarray(margins, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def split_gain(GL, HL, GR, HR, lambda_l2: float = 0.0):
    """Second-order loss reduction of splitting a node into (GL, HL) and (GR, HR).

    Works elementwise on arrays. Candidates with an empty hessian on either
    side get ``-inf``.
    """
    GL, HL, GR, HR = (np.asarray(a, dtype=np.float64) for a in (GL, HL, GR, HR))
    dl, dr, dp = HL + lambda_l2, HR + lambda_l2, HL + HR + lambda_l2
    ok = (dl > 0) & (dr > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (GL * GL / dl + GR * GR / dr - (GL + GR) ** 2 / dp)
    gain = np.where(ok, gain, -np.inf)
    return float(gain) if gain.ndim == 0 else gain


def leaf_value(G: float, H: float, lambda_l2: float = 0.0) -> float:
    denom = H + lambda_l2
    return -G / denom if denom > 0 else 0.0


# -------------------------------------------------------------------------- trees


@dataclass
class DecisionTree:
    """Array-of-nodes binary tree; node 0 is the root.

    Leaves have ``feature == -1``. Rows go left iff ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active[rows] = self.feature[node[rows]] >= 0
        return self.value[node]

    def leaf_index(self, x: Sequence[float]) -> int:
        node = 0
        while self.feature[node] >= 0:
            f = self.feature[node]
            node = self.left[node] if x[f] <= self.threshold[node] else self.right[node]
        return int(node)

    def scaled(self, factor: float) -> "DecisionTree":
        value = np.where(self.feature < 0, self.value * factor, 0.0)
        return DecisionTree(
            self.feature.copy(), self.threshold.copy(), self.left.copy(),
            self.right.copy(), value, self.cover.copy(),
        )

    def check(self) -> None:
        """Structural integrity: child links, cover sums, non-zero covers."""
        n = self.n_nodes
        if n == 0:
            raise ModelIntegrityError("tree has no nodes")
        for k in range(n):
            if self.cover[k] <= 0:
                raise ModelIntegrityError(f"node {k} has zero cover")
            if self.feature[k] >= 0:
                lo, hi = int(self.left[k]), int(self.right[k])
                if not (0 < lo < n and 0 < hi < n):
                    raise ModelIntegrityError(f"node {k} has a dangling child")
                if self.cover[lo] + self.cover[hi] != self.cover[k]:
                    raise ModelIntegrityError(f"node {k}: cover differs from children's sum")

    def to_dict(self) -> dict:
        nodes = []
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                nodes.append({
                    "feature": int(self.feature[k]),
                    "threshold": float(self.threshold[k]),
                    "left": int(self.left[k]),
                    "right": int(self.right[k]),
                    "cover": int(self.cover[k]),
                })
            else:
                nodes.append({"value": float(self.value[k]), "cover": int(self.cover[k])})
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        nodes = d["nodes"]
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n)
        cover = np.zeros(n, dtype=np.int64)
        for k, node in enumerate(nodes):
            try:
                cover[k] = node["cover"]
                if "feature" in node:
                    feature[k] = node["feature"]
                    threshold[k] = node["threshold"]
                    left[k] = node["left"]
                    right[k] = node["right"]
                else:
                    value[k] = node["value"]
            except KeyError as exc:
                raise ModelIntegrityError(f"node {k} lacks field {exc.args[0]!r}") from None
        tree = cls(feature, threshold, left, right, value, cover)
        tree.check()
        return tree

    @classmethod
    def leaf(cls, value: float, cover: int) -> "DecisionTree":
        return cls(
            np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]),
            np.array([float(value)]), np.array([int(cover)]),
        )


class _Histogrammer:
    """Per-leaf gradient/hessian/count histograms in a padded (feature, bin) layout."""

    def __init__(self, data: BinnedDataset):
        self.n_features = data.n_features
        self.n_bins = data.n_bins
        self.width = int(self.n_bins.max())
        offsets = np.arange(self.n_features, dtype=np.int64) * self.width
        self.flat = data.bin_index.astype(np.int64) + offsets
        self.size = self.n_features * self.width
        # last bin of each feature can't be a split point; nor can padding
        bins = np.arange(self.width)
        self.candidate = bins[None, :] < (self.n_bins[:, None] - 1)

    def build(self, rows: np.ndarray, g: np.ndarray, h: np.ndarray):
        idx = self.flat[rows].ravel()
        gw = np.repeat(g[rows], self.n_features)
        hw = np.repeat(h[rows], self.n_features)
        shape = (self.n_features, self.width)
        hg = np.bincount(idx, weights=gw, minlength=self.size).reshape(shape)
        hh = np.bincount(idx, weights=hw, minlength=self.size).reshape(shape)
        hc = np.bincount(idx, minlength=self.size).reshape(shape)
        return hg, hh, hc


@dataclass
class _Leaf:
    node: int
    rows: np.ndarray
    G: float
    H: float
    hist: tuple
    gain: float = -np.inf
    feature: int = -1
    bin: int = -1


def _best_split(leaf: _Leaf, hg, hh, hc, hist: _Histogrammer, cfg: TrainConfig) -> None:
    GL = np.cumsum(hg, axis=1)
    HL = np.cumsum(hh, axis=1)
    CL = np.cumsum(hc, axis=1)
    n = len(leaf.rows)
    GR, HR, CR = leaf.G - GL, leaf.H - HL, n - CL
    gain = split_gain(GL, HL, GR, HR, cfg.lambda_l2)
    legal = hist.candidate & (CL >= cfg.min_data) & (CR >= cfg.min_data)
    gain = np.where(legal, gain, -np.inf)
    # row-major argmax: ties go to the lowest feature, then the lowest bin
    k = int(np.argmax(gain))
    best = gain.flat[k]
    if best > 0.0:
        leaf.gain = float(best)
        leaf.feature, leaf.bin = divmod(k, hist.width)
    else:
        leaf.gain = -np.inf


def _grow(data: BinnedDataset, g: np.ndarray, h: np.ndarray, cfg: TrainConfig,
          hist: _Histogrammer | None = None):
    """Grow one tree. Returns it with unshrunk leaf values plus each leaf's row set."""
    hist = hist or _Histogrammer(data)
    n = data.n_rows
    feature, threshold, left, right, value, cover = [-1], [0.0], [-1], [-1], [0.0], [n]

    rows = np.arange(n)
    root = _Leaf(0, rows, float(g.sum()), float(h.sum()), hist.build(rows, g, h))
    open_leaves = [root]
    if n >= 2 * cfg.min_data:
        _best_split(root, *root.hist, hist, cfg)
    while len(open_leaves) < cfg.num_leaves:
        best = None
        for leaf in open_leaves:
            if leaf.gain > -np.inf and (best is None or leaf.gain > best.gain):
                best = leaf
        if best is None:
            break
        open_leaves.remove(best)
        f, b = best.feature, best.bin
        go_left = data.bin_index[best.rows, f] <= b
        rows_l, rows_r = best.rows[go_left], best.rows[~go_left]
        small, large = (rows_l, rows_r) if len(rows_l) <= len(rows_r) else (rows_r, rows_l)
        h_small = hist.build(small, g, h)
        h_large = tuple(p - s for p, s in zip(best.hist, h_small))
        h_l, h_r = (h_small, h_large) if small is rows_l else (h_large, h_small)

        node = best.node
        feature[node] = f
        threshold[node] = float(data.bin_upper_bounds[f][b])
        children = []
        for child_rows, child_hist in ((rows_l, h_l), (rows_r, h_r)):
            idx = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            cover.append(len(child_rows))
            G, H = float(g[child_rows].sum()), float(h[child_rows].sum())
            children.append(_Leaf(idx, child_rows, G, H, child_hist))
        left[node], right[node] = children[0].node, children[1].node
        for child in children:
            if len(child.rows) >= 2 * cfg.min_data:
                _best_split(child, *child.hist, hist, cfg)
            open_leaves.append(child)

    leaves = sorted(open_leaves, key=lambda leaf: leaf.node)
    for leaf in leaves:
        value[leaf.node] = leaf_value(leaf.G, leaf.H, cfg.lambda_l2)
        leaf.hist = None
    tree = DecisionTree(
        np.array(feature, dtype=np.int64), np.array(threshold),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(value), np.array(cover, dtype=np.int64),
    )
    return tree, [(leaf.node, leaf.rows) for leaf in leaves]


def grow_tree(data: BinnedDataset, g, h, cfg: TrainConfig = TrainConfig()) -> DecisionTree:
    """One best-first tree fit to gradients ``g`` and hessians ``h``.

    Leaf values are the Newton step ``-G / (H + lambda_l2)`` before shrinkage.
    """
    if data.n_rows == 0:
        raise DataError("cannot grow a tree on an empty dataset")
    tree, _ = _grow(data, np.asarray(g, dtype=np.float64), np.asarray(h, dtype=np.float64), cfg)
    return tree


# ----------------------------------------------------------------------- ensemble


@dataclass
class Ensemble:
    base_score: float
    trees: list[DecisionTree] = field(default_factory=list)
    schema: tuple[str, ...] = FEATURES
    config: dict = field(default_factory=dict)
    data_info: dict = field(default_factory=dict)

    def predict_margin(self, X) -> np.ndarray:
        X = self._as_matrix(X)
        margin = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            margin += tree.predict(X)
        return margin

    def predict_proba(self, X) -> np.ndarray:
        p = sigmoid(self.predict_margin(X))
        # keep probabilities strictly inside (0, 1) at extreme margins
        return np.clip(p, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)

    def _as_matrix(self, X) -> np.ndarray:
        if isinstance(X, FeatureVector):
            X = [X.values]
        elif len(X) and isinstance(X[0], FeatureVector):
            X = [v.values for v in X]
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.schema):
            raise SchemaError(
                f"model expects {len(self.schema)} features, input has {X.shape[1]}"
            )
        return X

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "schema": list(self.schema),
            "base_score": float(self.base_score),
            "config": self.config,
            "data": self.data_info,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("format") != MODEL_FORMAT:
            raise ModelIntegrityError(f"unsupported model format {d.get('format')!r}")
        schema = tuple(d["schema"])
        trees = [DecisionTree.from_dict(t) for t in d["trees"]]
        for t in trees:
            if np.any(t.feature >= len(schema)):
                raise ModelIntegrityError("tree refers to a feature outside the schema")
        return cls(float(d["base_score"]), trees, schema, d.get("config", {}), d.get("data", {}))

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelIntegrityError(f"model file is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Ensemble":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def predict_margin(m: Ensemble, x) -> float | np.ndarray:
    out = m.predict_margin(x)
    return float(out[0]) if isinstance(x, FeatureVector) else out


def predict_proba(m: Ensemble, x) -> float | np.ndarray:
    out = m.predict_proba(x)
    return float(out[0]) if isinstance(x, FeatureVector) else out


def cohort_digest(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<i8").tobytes())
    return h.hexdigest()


@dataclass
class TrainHistory:
    train_logloss: list[float] = field(default_factory=list)
    valid_logloss: list[float] = field(default_factory=list)
    best_iteration: int | None = None


def train(
    train_set: BinnedDataset,
    valid_set: BinnedDataset | None,
    cfg: TrainConfig = TrainConfig(),
    schema: Sequence[str] | None = None,
) -> tuple[Ensemble, TrainHistory]:
    """Boost ``cfg.num_iterations`` trees on ``train_set``.

    Each round fits a tree to the log-loss gradients at the current margins
    and adds it shrunk by ``learning_rate``. Stored leaf values are already
    shrunk, so the model margin is ``base_score + sum(tree(x))``. Validation
    log loss is recorded per round.
    """
    cfg.validate()
    if schema is None:
        n_feat = train_set.n_features
        schema = FEATURES if n_feat == len(FEATURES) else tuple(f"f{j}" for j in range(n_feat))
    if len(schema) != train_set.n_features:
        raise SchemaError("schema length does not match the dataset")
    y = train_set.labels
    base = init_base_score(y)
    if not cfg.boost_from_average:
        base = 0.0
    if valid_set is not None:
        if not valid_set.same_bins_as(train_set):
            raise DataError("train and validation sets must share bin boundaries")
        if valid_set.n_rows == 0:
            valid_set = None

    hist = _Histogrammer(train_set)
    margin = np.full(train_set.n_rows, base)
    valid_margin = None if valid_set is None else np.full(valid_set.n_rows, base)
    trees: list[DecisionTree] = []
    history = TrainHistory()
    best_loss, best_iter = np.inf, 0

    for it in range(cfg.num_iterations):
        g, h = logistic_gradients(y, margin)
        tree, leaf_rows = _grow(train_set, g, h, cfg, hist)
        tree = tree.scaled(cfg.learning_rate)
        for node, rows in leaf_rows:
            margin[rows] += tree.value[node]
        trees.append(tree)
        history.train_logloss.append(margin_logloss(y, margin))
        if valid_set is not None:
            valid_margin += tree.predict(valid_set.values)
            loss = margin_logloss(valid_set.labels, valid_margin)
            history.valid_logloss.append(loss)
            if cfg.early_stopping_rounds is not None:
                if loss < best_loss:
                    best_loss, best_iter = loss, it + 1
                elif it + 1 - best_iter >= cfg.early_stopping_rounds:
                    trees = trees[:best_iter]
                    history.best_iteration = best_iter
                    break

    config = asdict(cfg)
    data_info = {
        "n_train": int(train_set.n_rows),
        "n_valid": 0 if valid_set is None else int(valid_set.n_rows),
    }
    return Ensemble(base, trees, tuple(schema), config, data_info), history
