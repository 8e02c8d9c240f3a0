"""Uniform-rate signal container and the DSP primitives used by the pipeline."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from ._kernels import pstd
from .errors import ParameterError

FILTER_ORDER = 4


@dataclass(frozen=True)
class SampledSignal:
    """A real-valued waveform sampled at a constant rate.

    Parameters
    ----------
    samples : array_like
        Finite amplitudes. Stored as a read-only float64 array.
    rate_hz : float
        Sampling rate, strictly positive.
    unit_label : str
        Physical unit of ``samples`` (free text).
    """

    samples: np.ndarray
    rate_hz: float
    unit_label: str = ""

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).ravel()
        if x.size < 1:
            raise ParameterError("signal must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise ParameterError("signal samples must be finite")
        if not (self.rate_hz > 0 and math.isfinite(self.rate_hz)):
            raise ParameterError(f"rate_hz must be positive, got {self.rate_hz}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "rate_hz", float(self.rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate_hz

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.rate_hz

    def replace(self, samples, unit_label=None) -> "SampledSignal":
        return SampledSignal(samples, self.rate_hz,
                             self.unit_label if unit_label is None else unit_label)


def butterworth_sos(cutoff_hz, rate_hz, order=FILTER_ORDER):
    """Second-order sections of the digital Butterworth low-pass prototype."""
    return sps.butter(order, cutoff_hz, btype="low", fs=rate_hz, output="sos")


def impulse_length(sos, eps=1e-6) -> int:
    """Samples until the slowest pole's envelope decays below ``eps``."""
    _, poles, _ = sps.sos2zpk(sos)
    r = float(np.max(np.abs(poles)))
    if r <= 0.0:
        return 1
    return int(math.ceil(math.log(eps) / math.log(r)))


def lowpass_filter(sig: SampledSignal, cutoff_hz: float,
                   order: int = FILTER_ORDER) -> SampledSignal:
    """Zero-phase low-pass filter (Butterworth biquads, forward and backward).

    The single-pass prototype is -3 dB at ``cutoff_hz``; the forward-backward
    cascade squares its magnitude and cancels its phase. Ends are mirror
    padded by three impulse lengths to suppress start-up transients.
    """
    nyq = sig.rate_hz / 2
    if not 0 < cutoff_hz < nyq:
        raise ParameterError(
            f"cutoff_hz must lie in (0, {nyq}) for rate {sig.rate_hz} Hz, got {cutoff_hz}")
    if len(sig) < 4 * order:
        raise ParameterError(
            f"signal of {len(sig)} samples is shorter than 4x filter order ({4 * order})")
    sos = butterworth_sos(cutoff_hz, sig.rate_hz, order)
    padlen = min(3 * impulse_length(sos), len(sig) - 1)
    y = sps.sosfiltfilt(sos, sig.samples, padtype="even", padlen=padlen)
    return sig.replace(y)


def integrate_flow(flow: SampledSignal, unit_label: str = "L") -> SampledSignal:
    """Cumulative trapezoidal integral of a flow-rate signal (starts at 0)."""
    x = flow.samples
    out = np.zeros_like(x)
    if x.size > 1:
        out[1:] = np.cumsum((x[1:] + x[:-1]) * (0.5 / flow.rate_hz))
    return flow.replace(out, unit_label)


def ensemble_average(events) -> np.ndarray:
    """Element-wise mean of equal-length events."""
    if len(events) == 0:
        raise ParameterError("ensemble_average needs at least one event")
    lengths = {len(e) for e in events}
    if len(lengths) != 1:
        raise ParameterError(f"events have ragged lengths {sorted(lengths)}")
    return np.mean(np.asarray(events, dtype=np.float64), axis=0)


def population_std(samples) -> float:
    """Standard deviation with an N denominator.

    Constant input (including a single sample) returns exactly 0.0, so the
    bisection in the binning code always stops on flat or width-1 bins.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ParameterError("population_std of an empty sequence")
    return float(pstd(np.ascontiguousarray(x.ravel()), 0, x.size))


# --- file formats -----------------------------------------------------------

def write_csv(sig: SampledSignal, path) -> None:
    t = sig.times()
    with open(path, "w") as fh:
        fh.write("time_s,value\n")
        for ti, v in zip(t.tolist(), sig.samples.tolist()):
            fh.write(f"{ti!r},{v!r}\n")


def read_csv(path, unit_label: str = "") -> SampledSignal:
    """Read a ``time_s,value`` CSV and infer the rate from the median step."""
    with open(path) as fh:
        header = fh.readline().strip().replace(" ", "")
        if header != "time_s,value":
            raise ParameterError(f"{path}: expected header 'time_s,value', got {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] < 2:
        raise ParameterError(f"{path}: need at least two rows to infer a rate")
    dt = np.diff(data[:, 0])
    step = float(np.median(dt))
    if step <= 0:
        raise ParameterError(f"{path}: time column must increase")
    if np.max(np.abs(dt - step)) > step * 1e-4:
        raise ParameterError(f"{path}: time steps are not uniform to 1 part in 1e4")
    return SampledSignal(data[:, 1], 1.0 / step, unit_label)


def write_f32(sig: SampledSignal, path) -> None:
    """Write little-endian float32 samples plus a JSON sidecar."""
    path = Path(path)
    sig.samples.astype("<f4").tofile(path)
    sidecar = {"rate_hz": sig.rate_hz, "unit": sig.unit_label}
    path.with_suffix(".json").write_text(json.dumps(sidecar))


def read_f32(path) -> SampledSignal:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    x = np.fromfile(path, dtype="<f4").astype(np.float64)
    return SampledSignal(x, float(meta["rate_hz"]), meta.get("unit", ""))


def read_signal(path, unit_label: str = "") -> SampledSignal:
    """Dispatch on extension: ``.csv`` or ``.f32``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return read_csv(path, unit_label)
    if suffix == ".f32":
        return read_f32(path)
    raise ParameterError(f"unsupported signal file type {suffix!r}")


def write_signal(sig: SampledSignal, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        write_csv(sig, path)
    elif suffix == ".f32":
        write_f32(sig, path)
    else:
        raise ParameterError(f"unsupported signal file type {suffix!r}")
