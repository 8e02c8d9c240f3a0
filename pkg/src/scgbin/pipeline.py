"""Recording-to-dataset wiring: filter, detect, segment, label."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import binning, events
from .errors import ParameterError
from .signal_core import SampledSignal, integrate_flow, lowpass_filter

log = logging.getLogger(__name__)

CUTOFF_HZ = 100.0


@dataclass(frozen=True)
class PipelineConfig:
    cutoff_hz: float = CUTOFF_HZ
    corr_threshold: float = events.CORR_THRESHOLD
    min_separation_s: float = events.MIN_SEPARATION_S
    window_length: int = events.WINDOW_LENGTH
    detrend_window_s: float = events.DETREND_WINDOW_S

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown pipeline config field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class PipelineResult:
    events: list
    onsets: list
    dropped: int
    stats: dict = field(default_factory=dict)


def process_recording(scg: SampledSignal, volume: SampledSignal, template,
                      config: PipelineConfig = PipelineConfig(), subject_id: str = "") -> PipelineResult:
    """Filter the SCG, detect and cut events, and label them by lung volume."""
    if volume.rate_hz != scg.rate_hz or len(volume) != len(scg):
        raise ParameterError("SCG and volume signals must share rate and length")
    filtered = lowpass_filter(scg, config.cutoff_hz)
    onsets = events.matched_filter_detect(filtered, template, config.min_separation_s,
                                          config.corr_threshold)
    windows = events.segment(filtered, onsets, config.window_length)
    labeled = events.label_by_lung_volume(windows, volume, subject_id, config.detrend_window_s)
    n_hlv = sum(e.label == events.HLV for e in labeled)
    stats = {"detected": len(onsets), "windows": len(windows), "dropped": windows.dropped,
             "hlv": n_hlv, "llv": len(labeled) - n_hlv}
    log.info("%s: %d onsets, %d windows (%d dropped), %d HLV / %d LLV", subject_id or "recording",
             len(onsets), len(windows), windows.dropped, n_hlv, len(labeled) - n_hlv)
    return PipelineResult(labeled, onsets, windows.dropped, stats)


def volume_from(flow: SampledSignal | None = None, volume: SampledSignal | None = None):
    if volume is not None:
        return volume
    if flow is None:
        raise ParameterError("either a flow or a volume signal is required")
    return integrate_flow(flow)


def event_matrix(labeled) -> tuple:
    """Stack labeled events into ``(windows, labels)``."""
    if not labeled:
        raise ParameterError("no events")
    X = np.array([e.window.samples for e in labeled], dtype=np.float64)
    return X, [e.label for e in labeled]


def make_partition(X, method: str, n_bins: int):
    """Shared partition for a stack of events; returns ``(partition, report|None)``."""
    if method == "ew":
        return binning.equal_partition(X.shape[1], n_bins), None
    if method == "aw":
        return binning.fit_partition_on_ensemble(X, n_bins)
    raise ParameterError(f"unknown binning method {method!r} (expected 'ew' or 'aw')")
