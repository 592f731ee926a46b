"""Histogram binning of raw feature values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from retention_lab.errors import DataError


@dataclass(frozen=True)
class BinnedDataset:
    """Binned design matrix.

    ``bin_index[i, j]`` is the bin of row ``i`` on feature ``j``. A raw value
    ``v`` falls in bin ``b`` iff ``upper[b-1] < v <= upper[b]``; the last
    upper bound of every feature is ``+inf``. ``values`` keeps the raw matrix
    so trained trees can be evaluated on raw thresholds.
    """

    bin_index: np.ndarray
    bin_upper_bounds: tuple[np.ndarray, ...]
    labels: np.ndarray
    values: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.bin_index.shape[0]

    @property
    def n_features(self) -> int:
        return self.bin_index.shape[1]

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(u) for u in self.bin_upper_bounds], dtype=np.int64)

    def same_bins_as(self, other: "BinnedDataset") -> bool:
        return len(self.bin_upper_bounds) == len(other.bin_upper_bounds) and all(
            np.array_equal(a, b) for a, b in zip(self.bin_upper_bounds, other.bin_upper_bounds)
        )


def _cut_point(lo: float, hi: float) -> float:
    mid = lo + (hi - lo) / 2.0
    # with adjacent floats the midpoint can round up to ``hi``
    return mid if lo <= mid < hi else lo


def find_bin_bounds(column: np.ndarray, max_bin: int) -> np.ndarray:
    """Upper bin edges for one feature.

    With ``d <= max_bin`` distinct values every value gets its own bin.
    Otherwise exactly ``max_bin`` bins are cut at row-count quantiles over the
    sorted distinct values. Edges sit halfway between neighbouring distinct
    values.
    """
    if max_bin < 2:
        raise ValueError("max_bin must be >= 2")
    distinct, counts = np.unique(column, return_counts=True)
    d = len(distinct)
    if d <= max_bin:
        gaps = np.arange(d - 1)
    else:
        cum = np.cumsum(counts)
        n = cum[-1]
        targets = np.arange(1, max_bin) * (n / max_bin)
        gaps = np.searchsorted(cum, targets, side="left")
        # force max_bin - 1 strictly increasing gap positions in [0, d - 2]
        gaps = np.asarray(gaps, dtype=np.int64)
        k = np.arange(max_bin - 1)
        gaps = np.minimum(gaps, d - 2 - (max_bin - 2 - k))
        gaps = np.maximum.accumulate(np.maximum(gaps - k, 0)) + k
    bounds = [_cut_point(distinct[i], distinct[i + 1]) for i in gaps]
    bounds.append(np.inf)
    return np.array(bounds, dtype=np.float64)


def apply_bins(X: np.ndarray, bounds: tuple[np.ndarray, ...]) -> np.ndarray:
    out = np.empty(X.shape, dtype=np.uint16)
    for j, upper in enumerate(bounds):
        out[:, j] = np.searchsorted(upper, X[:, j], side="left")
    return out


def _check_finite(X: np.ndarray) -> None:
    bad = ~np.isfinite(X)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"non-finite value at row {row}, feature {col}")


def bin_features(X: np.ndarray, y: np.ndarray, max_bin: int = 512) -> BinnedDataset:
    """Bin a raw ``(n, p)`` matrix, learning the bin edges from it."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("need a non-empty 2-D feature matrix")
    if max_bin > np.iinfo(np.uint16).max:
        raise ValueError("max_bin too large for 16-bit bin storage")
    _check_finite(X)
    bounds = tuple(find_bin_bounds(X[:, j], max_bin) for j in range(X.shape[1]))
    return BinnedDataset(apply_bins(X, bounds), bounds, np.asarray(y, dtype=np.int64), X)


def bin_like(X: np.ndarray, y: np.ndarray, reference: BinnedDataset) -> BinnedDataset:
    """Bin ``X`` with the edges of ``reference`` (e.g. a validation split)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != reference.n_features:
        raise DataError("feature count does not match the reference dataset")
    _check_finite(X)
    bounds = reference.bin_upper_bounds
    return BinnedDataset(apply_bins(X, bounds), bounds, np.asarray(y, dtype=np.int64), X)
