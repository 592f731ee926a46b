"""Exact path-dependent Shapley values and interaction values for tree ensembles.

For a feature subset ``S`` the value function is the cover-weighted expected
tree output when features in ``S`` follow the explained sample down the tree
and all other splits are averaged by child cover. Restricted to one leaf,
that value is a product over the distinct features on the leaf's path::

    v_leaf(S) = w * prod_k (o_k if k in S else z_k)

where ``o_k`` is 1 when the sample satisfies every split on feature ``k``
along the path and ``z_k`` is the product of the cover fractions of those
splits. Shapley values of such a product game only need the coefficients of
``prod_{k != i} (z_k + o_k t)``, which are accumulated for all samples at
once. Attributions are in margin (log-odds) units.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from retention_lab.errors import DataError, ModelIntegrityError
from retention_lab.gbdt import DecisionTree, Ensemble
from retention_lab.records import FeatureVector, atomic_write_text, format_number

BRUTE_FORCE_LIMIT = 12


@dataclass(frozen=True)
class _LeafPath:
    value: float
    features: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    zero_fraction: np.ndarray
    weight: float


def _leaf_paths(tree: DecisionTree) -> list[_LeafPath]:
    """Root-to-leaf paths with duplicate features merged into one interval."""
    paths = []
    stack = [(0, {})]
    while stack:
        node, cond = stack.pop()
        if tree.feature[node] < 0:
            feats = np.array(sorted(cond), dtype=np.int64)
            lower = np.array([cond[f][0] for f in feats], dtype=np.float64)
            upper = np.array([cond[f][1] for f in feats], dtype=np.float64)
            zero = np.array([cond[f][2] for f in feats], dtype=np.float64)
            paths.append(_LeafPath(
                float(tree.value[node]), feats, lower, upper, zero, float(np.prod(zero)),
            ))
            continue
        cover = tree.cover[node]
        if cover <= 0:
            raise ModelIntegrityError(f"node {node} has zero cover")
        f, thr = int(tree.feature[node]), float(tree.threshold[node])
        lo, hi, z = cond.get(f, (-np.inf, np.inf, 1.0))
        left, right = int(tree.left[node]), int(tree.right[node])
        stack.append((right, {**cond, f: (max(lo, thr), hi, z * tree.cover[right] / cover)}))
        stack.append((left, {**cond, f: (lo, min(hi, thr), z * tree.cover[left] / cover)}))
    return paths


def _weights(d: int, drop: int) -> np.ndarray:
    """Shapley (drop=1) or pairwise-interaction (drop=2) coalition weights by size.

    drop=1: s! (d-s-1)! / d!; drop=2: s! (d-s-2)! / (d-1)!
    """
    top = d if drop == 1 else d - 1
    return np.array(
        [math.factorial(s) * math.factorial(d - s - drop) / math.factorial(top)
         for s in range(d - drop + 1)]
    )


def _exclusion_polys(one: np.ndarray, zero: np.ndarray, excluded: np.ndarray) -> np.ndarray:
    """Coefficients of prod_{k not in excluded[r]} (zero_k + one_k t) per row set r.

    ``one`` is (n, d); ``excluded`` is (r, e) feature positions. Returns an
    (r, n, d - e + 1) array.
    """
    r, e = excluded.shape
    n, d = one.shape
    deg = d - e
    poly = np.zeros((r, n, deg + 1))
    poly[:, :, 0] = 1.0
    for k in range(d):
        keep = ~np.any(excluded == k, axis=1)
        if not keep.any():
            continue
        cur = poly[keep]
        nxt = cur * zero[k]
        nxt[:, :, 1:] += cur[:, :, :-1] * one[None, :, k, None]
        poly[keep] = nxt
    return poly


def _satisfied(X: np.ndarray, path: _LeafPath) -> np.ndarray:
    vals = X[:, path.features]
    return ((vals > path.lower) & (vals <= path.upper)).astype(np.float64)


def _model_paths(m: Ensemble) -> list[_LeafPath]:
    return [p for tree in m.trees for p in _leaf_paths(tree)]


def expected_value(m: Ensemble) -> float:
    """Cover-weighted mean margin: the base value of every explanation."""
    return m.base_score + sum(p.value * p.weight for p in _model_paths(m))


def _as_matrix(m: Ensemble, X) -> np.ndarray:
    return m._as_matrix(X)


def shap_values(m: Ensemble, X) -> tuple[np.ndarray, float]:
    """Shapley values for every row of ``X``: an (n, p) matrix and the base value."""
    X = _as_matrix(m, X)
    n, p = X.shape
    phi = np.zeros((n, p))
    base = m.base_score
    weights = {}
    for path in _model_paths(m):
        base += path.value * path.weight
        d = len(path.features)
        if d == 0:
            continue
        if d not in weights:
            weights[d] = _weights(d, 1)
        one = _satisfied(X, path)
        polys = _exclusion_polys(one, path.zero_fraction, np.arange(d)[:, None])
        totals = polys @ weights[d]
        contrib = path.value * (one - path.zero_fraction) * totals.T
        phi[:, path.features] += contrib
    return phi, float(base)


def shap_interaction_values(m: Ensemble, X) -> tuple[np.ndarray, float]:
    """Pairwise SHAP interaction values: an (n, p, p) array and the base value.

    Off-diagonal entries split each pair's interaction evenly between (i, j)
    and (j, i); the diagonal holds the remaining main effect so rows sum to
    the Shapley values.
    """
    X = _as_matrix(m, X)
    n, p = X.shape
    inter = np.zeros((n, p, p))
    phi, base = shap_values(m, X)
    weights = {}
    for path in _model_paths(m):
        d = len(path.features)
        if d < 2:
            continue
        if d not in weights:
            weights[d] = _weights(d, 2)
        one = _satisfied(X, path)
        a, b = np.triu_indices(d, k=1)
        polys = _exclusion_polys(one, path.zero_fraction, np.column_stack([a, b]))
        totals = polys @ weights[d]
        delta = one - path.zero_fraction
        vals = 0.5 * path.value * delta[:, a] * delta[:, b] * totals.T
        fa, fb = path.features[a], path.features[b]
        for col, (i, j) in enumerate(zip(fa, fb)):
            inter[:, i, j] += vals[:, col]
            inter[:, j, i] += vals[:, col]
    idx = np.arange(p)
    inter[:, idx, idx] = 0.0
    inter[:, idx, idx] = phi - inter.sum(axis=2)
    return inter, base


# ------------------------------------------------------------------ single sample


@dataclass(frozen=True)
class ShapVector:
    phi: np.ndarray
    base_value: float

    def total(self) -> float:
        return self.base_value + float(np.sum(self.phi))


@dataclass(frozen=True)
class InteractionMatrix:
    Phi: np.ndarray

    def main_effects(self) -> np.ndarray:
        return self.Phi.sum(axis=1)


def _row(x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        return np.asarray(x.values, dtype=np.float64)
    return np.asarray(x, dtype=np.float64).ravel()


def tree_shap(m: Ensemble, x) -> ShapVector:
    phi, base = shap_values(m, _row(x)[None, :])
    return ShapVector(phi[0], base)


def interaction_values(m: Ensemble, x) -> InteractionMatrix:
    inter, _ = shap_interaction_values(m, _row(x)[None, :])
    return InteractionMatrix(inter[0])


# -------------------------------------------------------------------- the oracle


def _conditional_expectation(tree: DecisionTree, x: np.ndarray, present: frozenset) -> float:
    def walk(node: int) -> float:
        f = tree.feature[node]
        if f < 0:
            return float(tree.value[node])
        left, right = int(tree.left[node]), int(tree.right[node])
        if f in present:
            return walk(left if x[f] <= tree.threshold[node] else right)
        if tree.cover[node] <= 0:
            raise ModelIntegrityError(f"node {node} has zero cover")
        return (tree.cover[left] * walk(left) + tree.cover[right] * walk(right)) / tree.cover[node]

    return walk(0)


def used_features(m: Ensemble) -> list[int]:
    return sorted({int(f) for t in m.trees for f in t.feature if f >= 0})


def _coalition_values(m: Ensemble, x: np.ndarray, max_features: int):
    feats = used_features(m)
    k = len(feats)
    if k > max_features:
        raise ValueError(
            f"brute force needs <= {max_features} used features, model uses {k}"
        )
    values = np.empty(1 << k)
    for mask in range(1 << k):
        present = frozenset(feats[b] for b in range(k) if mask >> b & 1)
        values[mask] = m.base_score + sum(
            _conditional_expectation(t, x, present) for t in m.trees
        )
    return feats, values


def brute_force_shapley(m: Ensemble, x, max_features: int = BRUTE_FORCE_LIMIT) -> ShapVector:
    """Shapley values by enumerating every coalition of the model's used features."""
    x = _row(x)
    feats, v = _coalition_values(m, x, max_features)
    k = len(feats)
    phi = np.zeros(len(m.schema))
    for pos, f in enumerate(feats):
        bit = 1 << pos
        total = 0.0
        for mask in range(1 << k):
            if mask & bit:
                continue
            s = bin(mask).count("1")
            w = math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k)
            total += w * (v[mask | bit] - v[mask])
        phi[f] = total
    return ShapVector(phi, float(v[0]))


def brute_force_interactions(
    m: Ensemble, x, max_features: int = BRUTE_FORCE_LIMIT
) -> InteractionMatrix:
    x = _row(x)
    feats, v = _coalition_values(m, x, max_features)
    k = len(feats)
    p = len(m.schema)
    Phi = np.zeros((p, p))
    for a in range(k):
        for b in range(a + 1, k):
            ba, bb = 1 << a, 1 << b
            total = 0.0
            for mask in range(1 << k):
                if mask & (ba | bb):
                    continue
                s = bin(mask).count("1")
                w = math.factorial(s) * math.factorial(k - s - 2) / (2 * math.factorial(k - 1))
                total += w * (v[mask | ba | bb] - v[mask | ba] - v[mask | bb] + v[mask])
            Phi[feats[a], feats[b]] = Phi[feats[b], feats[a]] = total
    phi = brute_force_shapley(m, x, max_features).phi
    for i in range(p):
        Phi[i, i] = phi[i] - (Phi[i].sum() - Phi[i, i])
    return InteractionMatrix(Phi)


# ------------------------------------------------------------ tables and series


@dataclass(frozen=True)
class ImportanceTable:
    rows: tuple[tuple[str, float], ...]

    def to_csv(self) -> str:
        lines = ["variable,shapley_number"]
        lines += [f"{name}_shap,{format_number(value)}" for name, value in self.rows]
        return "\n".join(lines) + "\n"

    def render(self, decimals: int = 3) -> str:
        labels = [f"{name}_shap" for name, _ in self.rows]
        width = max([len("Variable"), *map(len, labels)])
        out = [f"{'Variable':<{width}}  Shapley Number"]
        out += [f"{label:<{width}}  {value:.{decimals}f}" for label, (_, value) in zip(labels, self.rows)]
        return "\n".join(out) + "\n"


def importance_table(shap_rows, schema: Sequence[str]) -> ImportanceTable:
    """Mean absolute Shapley value per feature, largest first; ties keep schema order."""
    phi = np.array([r.phi if isinstance(r, ShapVector) else r for r in shap_rows], dtype=float)
    if phi.ndim != 2 or phi.shape[0] == 0:
        raise DataError("importance table needs at least one row of attributions")
    if phi.shape[1] != len(schema):
        raise DataError("attribution width does not match the schema")
    mean_abs = np.abs(phi).mean(axis=0)
    order = sorted(range(len(schema)), key=lambda j: (-mean_abs[j], j))
    return ImportanceTable(tuple((schema[j], float(mean_abs[j])) for j in order))


@dataclass(frozen=True)
class DependenceSeries:
    feature: str
    points: tuple[tuple[float, float], ...]

    def to_csv(self) -> str:
        lines = ["value,shap"] + [f"{format_number(a)},{format_number(b)}" for a, b in self.points]
        return "\n".join(lines) + "\n"

    def mean_phi(self, low: float = -np.inf, high: float = np.inf) -> float:
        """Mean attribution over points with ``low <= value <= high``."""
        sel = [phi for v, phi in self.points if low <= v <= high]
        return float(np.mean(sel)) if sel else float("nan")


def _feature_index(name: str, schema: Sequence[str]) -> int:
    try:
        return list(schema).index(name)
    except ValueError:
        raise DataError(f"unknown feature {name!r}") from None


def dependence_series(feature: str, X, phi, schema: Sequence[str]) -> DependenceSeries:
    """(raw value, attribution) pairs for one feature, sorted by raw value.

    Positive attributions push toward the positive class (dropout).
    """
    j = _feature_index(feature, schema)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if X.shape[0] != phi.shape[0]:
        raise DataError("dataset and attribution rows differ in length")
    order = np.argsort(X[:, j], kind="stable")
    return DependenceSeries(
        feature, tuple((float(X[i, j]), float(phi[i, j])) for i in order)
    )


def interaction_dependence(
    feature_i: str, feature_j: str, X, inter, schema: Sequence[str]
) -> list[tuple[float, float, float]]:
    """(raw_i, raw_j, Phi_ij) triples in dataset order."""
    i, j = _feature_index(feature_i, schema), _feature_index(feature_j, schema)
    if i == j:
        raise DataError("interaction dependence needs two different features")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    inter = np.asarray(inter, dtype=float)
    if inter.ndim == 2:
        inter = inter[None]
    if X.shape[0] != inter.shape[0]:
        raise DataError("dataset and interaction rows differ in length")
    return [(float(X[r, i]), float(X[r, j]), float(inter[r, i, j])) for r in range(X.shape[0])]


def shap_matrix_csv(phi: np.ndarray, base: float, schema: Sequence[str]) -> str:
    lines = [",".join([*(f"{name}_shap" for name in schema), "base_value"])]
    b = format_number(base)
    for row in phi:
        lines.append(",".join([*(format_number(v) for v in row), b]))
    return "\n".join(lines) + "\n"


def interaction_csv(triples, feature_i: str, feature_j: str) -> str:
    lines = [f"{feature_i},{feature_j},interaction_shap"]
    lines += [",".join(format_number(v) for v in t) for t in triples]
    return "\n".join(lines) + "\n"


def write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_text(path, text)
