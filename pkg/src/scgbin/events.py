"""Event detection by matched filtering, windowing and HLV/LLV labeling."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.ndimage import uniform_filter1d

from .errors import ParameterError
from .signal_core import SampledSignal

WINDOW_LENGTH = 4096
CORR_THRESHOLD = 0.6
MIN_SEPARATION_S = 0.3
DETREND_WINDOW_S = 30.0

HLV = "HLV"
LLV = "LLV"


class DegenerateVolumeWarning(UserWarning):
    """The lung-volume signal is flat, so every event falls on the median."""


@dataclass(frozen=True)
class EventWindow:
    onset_index: int
    samples: np.ndarray
    source_rate_hz: float

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class LabeledEvent:
    window: EventWindow
    label: str
    volume_at_onset: float
    subject_id: str = ""

    @property
    def onset(self) -> int:
        return self.window.onset_index


class WindowList(list):
    """Windows cut from a recording; ``dropped`` counts onsets that overran the end."""

    def __init__(self, windows=(), dropped=0):
        super().__init__(windows)
        self.dropped = dropped


def normalized_xcorr(x, template) -> np.ndarray:
    """Sliding normalized cross-correlation, one value per valid lag.

    Each window and the template are mean-removed and scaled to unit norm, so
    values lie in [-1, 1]. Windows with (numerically) zero energy score 0.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(template, dtype=np.float64)
    m = t.size
    t0 = t - t.mean()
    t_norm = math.sqrt(float(t0 @ t0))
    n_lags = x.size - m + 1
    if t_norm == 0.0:
        return np.zeros(n_lags)
    num = sps.correlate(x, t0, mode="valid", method="fft")
    c1 = np.concatenate(([0.0], np.cumsum(x)))
    c2 = np.concatenate(([0.0], np.cumsum(x * x)))
    s1 = c1[m:] - c1[:-m]
    s2 = c2[m:] - c2[:-m]
    energy = s2 - s1 * s1 / m
    # cumulative-sum cancellation leaves residue in silent stretches
    floor = 1e-10 * max(float(np.max(x * x)), 1e-300) * m
    ok = energy > floor
    out = np.zeros(n_lags)
    out[ok] = num[ok] / (np.sqrt(energy[ok]) * t_norm)
    return np.clip(out, -1.0, 1.0)


def matched_filter_detect(scg: SampledSignal, template, min_separation_s: float = MIN_SEPARATION_S,
                          corr_threshold: float = CORR_THRESHOLD, return_scores: bool = False):
    """Onsets of template matches in ``scg``.

    Local maxima of the normalized cross-correlation at or above
    ``corr_threshold`` are kept greedily from the highest down; any peak
    closer than ``min_separation_s`` to a kept one is dropped.
    """
    t = np.asarray(template, dtype=np.float64).ravel()
    if t.size == 0:
        raise ParameterError("template is empty")
    if t.size > len(scg):
        raise ParameterError(f"template ({t.size} samples) is longer than the signal ({len(scg)})")
    if not min_separation_s > 0:
        raise ParameterError("min_separation_s must be positive")
    if not 0 < corr_threshold <= 1:
        raise ParameterError("corr_threshold must lie in (0, 1]")

    ncc = normalized_xcorr(scg.samples, t)
    distance = max(1, math.ceil(min_separation_s * scg.rate_hz - 1e-9))
    # pad so lags 0 and n-1 can be peaks too
    padded = np.concatenate(([-2.0], ncc, [-2.0]))
    peaks, _ = sps.find_peaks(padded, height=corr_threshold, distance=distance)
    onsets = (peaks - 1).astype(np.int64)
    onsets.sort()
    if return_scores:
        return onsets.tolist(), ncc[onsets]
    return onsets.tolist()


def cut_template(scg: SampledSignal, start: int, stop: int) -> np.ndarray:
    """Template taken from a user-chosen index range of a recording."""
    if not 0 <= start < stop <= len(scg):
        raise ParameterError(f"template range [{start}, {stop}) outside signal of {len(scg)} samples")
    return scg.samples[start:stop].copy()


def segment(scg: SampledSignal, onsets, window_length: int = WINDOW_LENGTH) -> WindowList:
    """Cut one fixed-length window per onset; overrunning onsets are dropped."""
    if window_length < 1:
        raise ParameterError("window_length must be positive")
    out = WindowList()
    n = len(scg)
    for onset in onsets:
        onset = int(onset)
        if onset < 0 or onset + window_length > n:
            out.dropped += 1
            continue
        out.append(EventWindow(onset, scg.samples[onset:onset + window_length].copy(), scg.rate_hz))
    return out


def detrend_volume(volume: SampledSignal, window_s: float = DETREND_WINDOW_S) -> np.ndarray:
    """Subtract a centered moving-mean baseline.

    The ends are extended by point reflection, which keeps a linear trend
    linear, so any linear drift is removed everywhere including the edges.
    """
    v = volume.samples
    n = v.size
    w = int(round(window_s * volume.rate_hz))
    w = min(w, n if n % 2 else n - 1)
    if w % 2 == 0:
        w -= 1
    if w < 3:
        return v - v.mean()
    h = w // 2
    head = 2 * v[0] - v[h:0:-1]
    tail = 2 * v[-1] - v[-2:-h - 2:-1]
    padded = np.concatenate((head, v, tail))
    base = uniform_filter1d(padded, size=w, mode="nearest")[h:h + n]
    return v - base


def label_by_lung_volume(windows, volume: SampledSignal, subject_id: str = "",
                         window_s: float = DETREND_WINDOW_S):
    """Label each window HLV or LLV from the detrended volume at its onset.

    HLV when the detrended volume is at or above the recording's median;
    ties go to HLV.
    """
    detr, med = labeling_reference(volume, window_s)
    out = []
    for w in windows:
        if not 0 <= w.onset_index < detr.size:
            raise ParameterError(
                f"onset {w.onset_index} outside volume signal of {detr.size} samples")
        v = float(detr[w.onset_index])
        out.append(LabeledEvent(w, HLV if v >= med else LLV, v, subject_id))
    return out


def labeling_reference(volume: SampledSignal, window_s: float = DETREND_WINDOW_S):
    """Detrended volume and its median, the reference for HLV/LLV labels."""
    detr = detrend_volume(volume, window_s)
    scale = max(float(np.max(np.abs(volume.samples))), 1e-300)
    if np.ptp(detr) <= 1e-12 * scale:
        warnings.warn("lung volume is flat; all events labeled HLV", DegenerateVolumeWarning,
                      stacklevel=3)
        detr = np.zeros_like(detr)
    return detr, float(np.median(detr))


# --- dataset files ------------------------------------------------------------

def write_dataset(path, events, samples_file=None) -> None:
    """JSON-lines index plus a float32 sidecar matrix of the raw windows."""
    path = Path(path)
    if samples_file is None:
        samples_file = path.with_suffix(".f32")
    samples_file = Path(samples_file)
    mat = np.array([e.window.samples for e in events], dtype="<f4")
    mat.tofile(samples_file)
    rate = events[0].window.source_rate_hz if events else 0.0
    width = mat.shape[1] if events else 0
    meta = {"rows": len(events), "window_length": width, "rate_hz": rate}
    samples_file.with_suffix(".json").write_text(json.dumps(meta))
    lines = []
    for k, e in enumerate(events):
        lines.append(json.dumps({"subject": e.subject_id, "onset": e.onset, "label": e.label,
                                 "volume": e.volume_at_onset, "samples_file": samples_file.name,
                                 "row": k}))
    path.write_text("".join(line + "\n" for line in lines))


def read_dataset(path):
    """Inverse of :func:`write_dataset`; returns a list of LabeledEvent."""
    path = Path(path)
    records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    if not records:
        return []
    cache = {}
    out = []
    for r in records:
        fname = r["samples_file"]
        if fname not in cache:
            f = path.parent / fname
            meta = json.loads(f.with_suffix(".json").read_text())
            raw = np.fromfile(f, dtype="<f4").astype(np.float64)
            cache[fname] = (raw.reshape(meta["rows"], meta["window_length"]), meta["rate_hz"])
        mat, rate = cache[fname]
        w = EventWindow(int(r["onset"]), mat[r["row"]], rate)
        out.append(LabeledEvent(w, r["label"], float(r["volume"]), r["subject"]))
    return out
