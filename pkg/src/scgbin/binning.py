"""Adaptive-width and equal-width bin partitions of fixed-length events.

The adaptive partition starts from one bin spanning the whole event and
bisects any bin whose population std exceeds ``alpha * (max - min)`` of the
event. Bins are half-open index ranges ``[b_i, b_{i+1})``.

A std within ``TIE_RTOL`` (relative) of the threshold counts as a tie and
does not split. Exact ties are common (step-like events) and rounding would
otherwise decide them differently for ``x`` and ``a * x + b``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ParameterError
from .signal_core import ensemble_average

VARIABILITY_TOLERANCE = 0.05
BISECTION_ITERATIONS = 60
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class BinPartition:
    """Ordered bin boundaries ``0 = b_0 < ... < b_B = length``."""

    boundaries: tuple
    threshold: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        b = tuple(int(v) for v in self.boundaries)
        if len(b) < 2:
            raise ParameterError("a partition needs at least two boundaries")
        if b[0] != 0:
            raise ParameterError(f"first boundary must be 0, got {b[0]}")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ParameterError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def length(self) -> int:
        return self.boundaries[-1]

    @property
    def n_bins(self) -> int:
        return len(self.boundaries) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    @property
    def partition_id(self) -> str:
        digest = hashlib.sha1(json.dumps(self.boundaries).encode()).hexdigest()
        return digest[:12]

    def to_dict(self) -> dict:
        return {"length": self.length, "boundaries": list(self.boundaries),
                "alpha": self.alpha, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d) -> "BinPartition":
        b = list(d["boundaries"])
        if "length" in d and b and b[-1] != d["length"]:
            raise ParameterError(f"last boundary {b[-1]} != length {d['length']}")
        return cls(tuple(b), d.get("threshold"), d.get("alpha"))

    def to_paper_indices(self) -> list:
        """Closed-interval form ``[0, ..., L - 1]`` with interior splits."""
        return [0] + list(self.boundaries[1:-1]) + [self.length - 1]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    partition_id: str

    def __len__(self):
        return len(self.values)


@dataclass
class VariabilityReport:
    """Outcome of the per-event bin variability check.

    ``violations`` lists ``(event_index, bin_index, std, ratio)`` for every
    pair whose std exceeds the threshold by more than the tolerance.
    """

    threshold: float
    tolerance: float
    n_events: int
    n_bins: int
    worst_ratio: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> dict:
        return {"threshold": self.threshold, "tolerance": self.tolerance,
                "n_events": self.n_events, "n_bins": self.n_bins,
                "worst_ratio": self.worst_ratio,
                "n_violations": len(self.violations),
                "events_with_violations": len({v[0] for v in self.violations})}


def _as_event(event) -> np.ndarray:
    x = np.ascontiguousarray(event, dtype=np.float64).ravel()
    if x.size == 0:
        raise ParameterError("event must contain at least one sample")
    return x


def _threshold(x, alpha) -> float:
    return float(alpha) * float(x.max() - x.min())


def split_level(threshold: float) -> float:
    """Smallest std that splits a bin at ``threshold`` (ties excluded)."""
    return threshold * (1.0 + TIE_RTOL)


def adaptive_partition(event, alpha: float) -> BinPartition:
    """Adaptive-width partition of one event for a given ``alpha``."""
    x = _as_event(event)
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    t = _threshold(x, alpha)
    bounds = _kernels.adaptive_bounds(x, split_level(t))
    return BinPartition(tuple(bounds.tolist()), threshold=t, alpha=float(alpha))


def equal_partition(length: int, n_bins: int) -> BinPartition:
    """Equal-width partition, boundaries rounded half up to integers."""
    if length < 1 or n_bins < 1:
        raise ParameterError("length and n_bins must be positive")
    if n_bins > length:
        raise ParameterError(f"n_bins ({n_bins}) exceeds length ({length})")
    b = [(2 * i * length + n_bins) // (2 * n_bins) for i in range(n_bins + 1)]
    for i in range(1, len(b)):
        b[i] = max(b[i], b[i - 1] + 1)
    return BinPartition(tuple(b))


def bin_count(event, alpha: float) -> int:
    """Number of adaptive bins at ``alpha`` without building the partition."""
    x = _as_event(event)
    return _count(_kernels.split_thresholds(x), _threshold(x, alpha))


def _count(split_values, t) -> int:
    return 1 + int(np.count_nonzero(split_values > split_level(t)))


def achievable_bin_counts(event) -> list:
    """Sorted list of every bin count some alpha in [0, 1] produces."""
    x = _as_event(event)
    splits = _kernels.split_thresholds(x)
    p2p = float(x.max() - x.min())
    counts = {_count(splits, 0.0), 1}
    if p2p > 0:
        for m in np.unique(splits):
            a = min(float(m) / (p2p * (1.0 + TIE_RTOL)), 1.0)
            for cand in (a, np.nextafter(a, 2.0), np.nextafter(a, -1.0)):
                if 0.0 <= cand <= 1.0:
                    counts.add(_count(splits, _threshold(x, cand)))
    return sorted(counts)


def alpha_for_bin_count(event, target_bins: int):
    """Find the most permissive alpha giving (about) ``target_bins`` bins.

    The exact target is used when some alpha achieves it; otherwise the
    smallest achievable count above it, or the largest one below it when
    nothing above exists. Returns ``(alpha, partition)``.
    """
    x = _as_event(event)
    if not 1 <= target_bins <= x.size:
        raise ParameterError(f"target_bins must lie in [1, {x.size}], got {target_bins}")
    splits = _kernels.split_thresholds(x)
    counts = achievable_bin_counts(x)
    above = [c for c in counts if c >= target_bins]
    goal = above[0] if above else counts[-1]

    if goal == 1:
        alpha = 1.0
    else:
        # largest alpha with count >= goal; count is non-increasing in alpha
        lo, hi = 0.0, 1.0
        for _ in range(BISECTION_ITERATIONS):
            if hi - lo < 1e-12 and _count(splits, _threshold(x, lo)) == goal:
                break
            mid = 0.5 * (lo + hi)
            if _count(splits, _threshold(x, mid)) >= goal:
                lo = mid
            else:
                hi = mid
        alpha = lo
    part = adaptive_partition(x, alpha)
    return alpha, part


def extract_features(event, partition: BinPartition) -> FeatureVector:
    """Per-bin means of one event."""
    x = _as_event(event)
    if x.size != partition.length:
        raise ParameterError(
            f"event length {x.size} does not match partition length {partition.length}")
    return FeatureVector(_bin_means(x[None, :], partition)[0], partition.partition_id)


def extract_feature_matrix(events, partition: BinPartition) -> np.ndarray:
    """Per-bin means for a stack of events, one row per event."""
    X = np.asarray(events, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != partition.length:
        raise ParameterError(
            f"events of shape {X.shape} do not match partition length {partition.length}")
    return _bin_means(X, partition)


def _bin_means(X, partition):
    b = np.asarray(partition.boundaries)
    return np.add.reduceat(X, b[:-1], axis=1) / np.diff(b)


def check_bin_variability(events, partition: BinPartition,
                          tolerance: float = VARIABILITY_TOLERANCE) -> VariabilityReport:
    """Flag (event, bin) pairs whose std exceeds ``(1 + tolerance) * T``.

    Report only: the partition is never refit.
    """
    if partition.threshold is None:
        raise ParameterError("partition has no threshold (equal-width partitions cannot be checked)")
    X = np.ascontiguousarray(events, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != partition.length:
        raise ParameterError(
            f"events of length {X.shape[1]} do not match partition length {partition.length}")
    t = partition.threshold
    stds = _kernels.bin_stds(X, np.asarray(partition.boundaries, dtype=np.int64))
    if t > 0:
        ratios = stds / t
    else:
        ratios = np.where(stds > 0, np.inf, 0.0)
    bad = np.argwhere(stds > (1.0 + tolerance) * t)
    violations = [(int(e), int(i), float(stds[e, i]), float(ratios[e, i])) for e, i in bad]
    worst = float(ratios.max()) if ratios.size else 0.0
    return VariabilityReport(threshold=t, tolerance=tolerance, n_events=X.shape[0],
                             n_bins=partition.n_bins, worst_ratio=worst,
                             violations=violations)


def fit_partition_on_ensemble(events, target_bins: int):
    """Fit one adaptive partition on the ensemble average of ``events``.

    Returns ``(partition, variability_report)``; the report checks every
    individual event against the shared partition.
    """
    avg = ensemble_average(events)
    _, part = alpha_for_bin_count(avg, target_bins)
    return part, check_bin_variability(events, part)


def write_feature_csv(path, features: np.ndarray) -> None:
    n_bins = features.shape[1]
    header = ",".join(f"bin_{i}" for i in range(n_bins))
    np.savetxt(path, features, delimiter=",", header=header, comments="", fmt="%.17g")


def read_feature_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
