"""Conditional expectations E[payload | x] from ensembles.

Two modes: equal-width 1-D histogram bins, and k-nearest-neighbor averages
around explicit query points.  Both produce a ConditionalTable whose rows
carry counts, means, and standard errors; histogram tables also carry the
empirical log-density of each bin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = ["BinSpec", "KnnSpec", "ConditionalTable", "bin_1d", "knn", "build_table"]


def _as_points(arr) -> np.ndarray:
    """Coerce to (n, M): a 1-D array is n scalar points, not one n-dim point."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    return np.atleast_2d(arr)


@dataclass
class BinSpec:
    """Equal-width bins over [interval[0], interval[1]] on one coordinate."""

    interval: tuple = (-2.0, 2.0)
    n_bins: int = 10
    min_count: int = 1
    coordinate: int = 0

    def __post_init__(self):
        a, b = float(self.interval[0]), float(self.interval[1])
        if not b > a:
            raise ConfigError(f"bin interval must satisfy b > a, got [{a}, {b}]")
        if self.n_bins < 1:
            raise ConfigError(f"n_bins must be >= 1, got {self.n_bins}")
        self.interval = (a, b)


@dataclass
class KnnSpec:
    """k-nearest-neighbor conditioning at the given query points."""

    queries: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    k: int = 32

    def __post_init__(self):
        self.queries = _as_points(self.queries)
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


@dataclass
class ConditionalTable:
    """Per-bin (or per-query) conditional statistics.

    means/ses have shape (n_bins,) for scalar payloads and (n_bins, V) for
    vector payloads.  Bins below the configured minimum count keep their
    count but report NaN statistics.  log_density is NaN in knn mode.
    """

    mode: str
    bin_left: np.ndarray
    bin_right: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    log_density: np.ndarray
    n_total: int
    n_out_of_range: int
    queries: np.ndarray | None = None

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_left + self.bin_right)

    def to_rows(self):
        """Rows (bin_left, bin_right, count, mean, se, log_density) for CSV.

        Vector payloads emit one row per component, bin-major; scalar
        payloads emit exactly one row per bin.
        """
        rows = []
        means = np.atleast_2d(self.means.T).T  # (n_bins, V)
        ses = np.atleast_2d(self.ses.T).T
        for i in range(len(self.counts)):
            for c in range(means.shape[1]):
                rows.append(
                    (
                        float(self.bin_left[i]),
                        float(self.bin_right[i]),
                        int(self.counts[i]),
                        float(means[i, c]),
                        float(ses[i, c]),
                        float(self.log_density[i]),
                    )
                )
        return rows


def _payload_stats(payload: np.ndarray, idx: np.ndarray):
    """Mean and SE (= sample std / sqrt(n)) of payload rows idx."""
    sel = payload[idx]
    n = sel.shape[0]
    mean = sel.mean(axis=0)
    if n > 1:
        se = sel.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        se = np.full_like(np.asarray(mean, dtype=float), np.nan)
    return mean, se


def bin_1d(x, payload, interval=(-2.0, 2.0), n_bins=10, min_count=1) -> ConditionalTable:
    """Histogram-condition payload on scalar positions x.

    Bins are half-open [left, right) except the last, which is closed so the
    upper endpoint belongs to the final bin.  Out-of-range samples are
    dropped from every bin but counted in n_out_of_range; the empirical
    log-density uses the full ensemble size in its normalization.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    payload = np.asarray(payload, dtype=float)
    if payload.shape[0] != x.shape[0]:
        raise ConfigError("payload and x must have the same leading length")
    spec = BinSpec(interval=interval, n_bins=int(n_bins), min_count=int(min_count))
    a, b = spec.interval
    width = (b - a) / spec.n_bins
    finite = np.isfinite(x)
    x_safe = np.where(finite, x, a - width)  # non-finite -> out of range
    idx = np.floor((x_safe - a) / width).astype(int)
    idx[x_safe == b] = spec.n_bins - 1
    in_range = (idx >= 0) & (idx < spec.n_bins) & finite

    n_total = x.shape[0]
    counts = np.bincount(idx[in_range], minlength=spec.n_bins)
    val_shape = (spec.n_bins,) + payload.shape[1:]
    means = np.full(val_shape, np.nan)
    ses = np.full(val_shape, np.nan)
    for i in np.nonzero(counts >= max(spec.min_count, 1))[0]:
        means[i], ses[i] = _payload_stats(payload, in_range & (idx == i))
    with np.errstate(divide="ignore"):
        log_density = np.log(counts / (n_total * width))
    lefts = a + width * np.arange(spec.n_bins)
    return ConditionalTable(
        mode="histogram",
        bin_left=lefts,
        bin_right=lefts + width,
        counts=counts,
        means=means,
        ses=ses,
        log_density=log_density,
        n_total=n_total,
        n_out_of_range=int(n_total - in_range.sum()),
    )


def knn(queries, points, k) -> np.ndarray:
    """Indices of the k nearest points to each query, shape (Q, k).

    Exact brute-force Euclidean search; ties broken toward the lower index,
    so results do not depend on internal ordering tricks.
    """
    points = _as_points(points)
    queries = _as_points(queries)
    if points.shape[0] == 0:
        raise ConfigError("knn needs a nonempty point set")
    if queries.shape[1] != points.shape[1]:
        raise ConfigError(
            f"query dim {queries.shape[1]} != point dim {points.shape[1]}"
        )
    k = int(k)
    if not 1 <= k <= points.shape[0]:
        raise ConfigError(f"k must be in [1, {points.shape[0]}], got {k}")
    L = points.shape[0]
    order_idx = np.arange(L)
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for q in range(queries.shape[0]):
        d2 = ((points - queries[q]) ** 2).sum(axis=1)
        out[q] = np.lexsort((order_idx, d2))[:k]
    return out


def knn_table(queries, points, payload, k) -> ConditionalTable:
    """k-nearest-neighbor conditional means at each query point."""
    queries = _as_points(queries)
    payload = np.asarray(payload, dtype=float)
    nbrs = knn(queries, points, k)
    Q = queries.shape[0]
    val_shape = (Q,) + payload.shape[1:]
    means = np.empty(val_shape)
    ses = np.empty(val_shape)
    for q in range(Q):
        sel = payload[nbrs[q]]
        means[q] = sel.mean(axis=0)
        if k > 1:
            ses[q] = sel.std(axis=0, ddof=1) / np.sqrt(k)
        else:
            ses[q] = np.nan
    q0 = queries[:, 0]
    return ConditionalTable(
        mode="knn",
        bin_left=q0,
        bin_right=q0,
        counts=np.full(Q, k),
        means=means,
        ses=ses,
        log_density=np.full(Q, np.nan),
        n_total=int(_as_points(points).shape[0]),
        n_out_of_range=0,
        queries=queries,
    )


def build_table(x, payload, spec) -> ConditionalTable:
    """Dispatch on the spec type: BinSpec -> bin_1d, KnnSpec -> knn_table."""
    if isinstance(spec, BinSpec):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, spec.coordinate]
        return bin_1d(
            x, payload, interval=spec.interval, n_bins=spec.n_bins, min_count=spec.min_count
        )
    if isinstance(spec, KnnSpec):
        return knn_table(spec.queries, x, payload, spec.k)
    raise ConfigError(f"unknown conditioning spec {type(spec).__name__}")
