"""Seeded synthetic SCG and respiration recordings with ground truth.

Each heartbeat is a sum of damped-sinusoid atoms placed in the early part of
the event window. Events that fall at high lung volume get a timing and
frequency offset on the class-sensitive atom, so HLV and LLV morphologies
differ in fine temporal detail.

Seeding rule: subject-level draws use ``SeedSequence([seed, subject])`` and
beat-level draws use ``SeedSequence([seed, subject, trial + 1])``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import ParameterError
from .events import HLV, LLV, labeling_reference
from .signal_core import SampledSignal, integrate_flow


@dataclass(frozen=True)
class AtomRange:
    """Uniform ranges for one atom's per-subject parameters."""

    freq_hz: tuple
    decay_ms: tuple
    delay_ms: tuple
    amplitude: tuple


def _default_atoms():
    return (
        AtomRange(freq_hz=(24.0, 30.0), decay_ms=(40.0, 50.0), delay_ms=(15.0, 25.0),
                  amplitude=(0.9, 1.1)),
        AtomRange(freq_hz=(37.5, 40.0), decay_ms=(50.0, 60.0), delay_ms=(35.0, 45.0),
                  amplitude=(0.2, 0.3)),
        AtomRange(freq_hz=(10.0, 14.0), decay_ms=(40.0, 60.0), delay_ms=(60.0, 80.0),
                  amplitude=(0.3, 0.5)),
    )


@dataclass(frozen=True)
class SynthConfig:
    rate_hz: float = 10000.0
    duration_s: float = 300.0
    n_trials: int = 2
    heart_rate_bpm: float = 57.0
    hr_jitter: float = 0.05
    resp_rate_bpm: float = 12.0
    ie_ratio: tuple = (1.0, 3.0)
    tidal_volume_l: float = 0.5
    snr_db: float = 20.0
    morphology_shift: float = 1.0
    shift_atom: int = 1
    shift_timing_ms: float = 2.0
    shift_freq_rel: float = 0.01
    amplitude_jitter: float = 0.15
    timing_jitter_ms: float = 0.3
    freq_jitter_rel: float = 0.01
    background_rel: float = 0.3
    background_band_hz: tuple = (0.5, 8.0)
    atoms: tuple = field(default_factory=_default_atoms)
    window_length: int = 4096
    seed: int = 0

    def __post_init__(self):
        for name in ("rate_hz", "duration_s", "heart_rate_bpm", "resp_rate_bpm",
                     "tidal_volume_l", "window_length", "n_trials"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        ie = tuple(float(v) for v in self.ie_ratio)
        if len(ie) != 2 or not all(v > 0 for v in ie):
            raise ParameterError(f"ie_ratio components must be positive, got {self.ie_ratio}")
        object.__setattr__(self, "ie_ratio", ie)
        atoms = tuple(a if isinstance(a, AtomRange) else AtomRange(**a) for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not 0 <= self.shift_atom < len(atoms):
            raise ParameterError(f"shift_atom {self.shift_atom} out of range")
        if self.expected_events() < 10:
            raise ParameterError("duration_s and heart_rate_bpm give fewer than 10 events per trial")

    @property
    def beat_period_s(self) -> float:
        return 60.0 / self.heart_rate_bpm

    @property
    def breath_period_s(self) -> float:
        return 60.0 / self.resp_rate_bpm

    @property
    def inspiration_s(self) -> float:
        i, e = self.ie_ratio
        return self.breath_period_s * i / (i + e)

    def expected_events(self) -> int:
        return int(math.floor(self.heart_rate_bpm * self.duration_s / 60.0))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown synth config field(s): {sorted(unknown)}")
        d = dict(d)
        if "atoms" in d:
            d["atoms"] = tuple(AtomRange(**{k: tuple(v) for k, v in a.items()})
                               if isinstance(a, dict) else a for a in d["atoms"])
        for key in ("ie_ratio", "background_band_hz"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Atom:
    freq_hz: float
    decay_s: float
    delay_s: float
    amplitude: float


@dataclass
class Recording:
    """One simulated trial: SCG, flow, volume and ground truth."""

    scg: SampledSignal
    flow: SampledSignal
    volume: SampledSignal
    onsets: list
    labels: list
    subject: int
    trial: int


def _n_samples(config) -> int:
    return int(round(config.duration_s * config.rate_hz))


def gen_respiration(config: SynthConfig):
    """Half-sine flow: positive during inspiration, negative during expiration.

    Both halves carry the tidal volume, so the volume returns to zero at
    every breath boundary. Returns ``(flow, volume)``.
    """
    t = np.arange(_n_samples(config)) / config.rate_hz
    period = config.breath_period_s
    ti = config.inspiration_s
    te = period - ti
    phase = np.mod(t, period)
    tv = config.tidal_volume_l
    insp = phase < ti
    h = 1.0 / config.rate_hz
    flow = np.where(insp,
                    _half_sine_peak(tv, ti, h) * np.sin(math.pi * phase / ti),
                    -_half_sine_peak(tv, te, h) * np.sin(math.pi * (phase - ti) / te))
    flow_sig = SampledSignal(flow, config.rate_hz, "L/s")
    return flow_sig, integrate_flow(flow_sig, "L")


def _half_sine_peak(volume, duration, h):
    """Peak of a half-sine lasting ``duration`` whose integral is ``volume``.

    On a sample-aligned half the trapezoid sum is ``h * cot(pi / 2N)``, so
    that area is used instead of the continuous ``2 * duration / pi``; the
    sampled volume then returns to zero every breath.
    """
    n = duration / h
    if abs(n - round(n)) < 1e-9 and round(n) >= 2:
        return volume * math.tan(math.pi / (2 * round(n))) / h
    return math.pi * volume / (2 * duration)


def subject_atoms(config: SynthConfig, subject: int = 0) -> list:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, subject]))
    out = []
    for r in config.atoms:
        out.append(Atom(freq_hz=rng.uniform(*r.freq_hz),
                        decay_s=rng.uniform(*r.decay_ms) / 1000.0,
                        delay_s=rng.uniform(*r.delay_ms) / 1000.0,
                        amplitude=rng.uniform(*r.amplitude)))
    return out


def render_event(atoms, length: int, rate_hz: float) -> np.ndarray:
    """Sum of damped sinusoids, each starting at zero phase at its delay."""
    t = np.arange(length) / rate_hz
    out = np.zeros(length)
    for a in atoms:
        tau = t - a.delay_s
        on = tau >= 0
        out[on] += a.amplitude * np.exp(-tau[on] / a.decay_s) * np.sin(2 * math.pi * a.freq_hz * tau[on])
    return out


def shifted_atoms(config: SynthConfig, atoms, amount: float) -> list:
    """Apply ``amount`` times the class offset to the class-sensitive atom."""
    out = list(atoms)
    k = config.shift_atom
    a = out[k]
    out[k] = dataclasses.replace(
        a, delay_s=a.delay_s + amount * config.shift_timing_ms / 1000.0,
        freq_hz=a.freq_hz * (1.0 + amount * config.shift_freq_rel))
    return out


def canonical_event(config: SynthConfig, subject: int = 0, amount: float = 0.5) -> np.ndarray:
    """Noise-free event midway between the classes; the default template."""
    atoms = shifted_atoms(config, subject_atoms(config, subject),
                          amount * config.morphology_shift)
    return render_event(atoms, config.window_length, config.rate_hz)


def noise_std(config: SynthConfig, subject: int = 0) -> float:
    """Noise level giving ``snr_db`` of event power over the event window."""
    if math.isinf(config.snr_db) and config.snr_db > 0:
        return 0.0
    return event_rms(config, subject) / 10.0 ** (config.snr_db / 20.0)


def event_rms(config: SynthConfig, subject: int = 0) -> float:
    ev = canonical_event(config, subject)
    return math.sqrt(float(np.mean(ev * ev)))


def background(config: SynthConfig, subject, rng, n) -> np.ndarray:
    """Slow band-limited motion background, RMS relative to the event RMS."""
    lo, hi = config.background_band_hz
    sos = sps.butter(2, [lo, hi], btype="band", fs=config.rate_hz, output="sos")
    # generate margins and crop them so filter start-up transients fall outside
    margin = int(round(4.0 * config.rate_hz / lo))
    b = sps.sosfiltfilt(sos, rng.normal(size=n + 2 * margin))[margin:margin + n]
    b *= config.background_rel * event_rms(config, subject) / max(float(np.std(b)), 1e-300)
    return b


def beat_onsets(config: SynthConfig, rng) -> np.ndarray:
    """One onset per beat period, each perturbed by up to +-hr_jitter periods."""
    period = config.beat_period_s
    n = config.expected_events()
    nominal = (np.arange(n) + 0.25) * period
    t = nominal + rng.uniform(-config.hr_jitter, config.hr_jitter, size=n) * period
    onsets = np.round(t * config.rate_hz).astype(np.int64)
    limit = _n_samples(config) - config.window_length
    return onsets[(onsets >= 0) & (onsets <= limit)]


def _jittered(config, atoms, rng):
    out = []
    for k, a in enumerate(atoms):
        amp = a.amplitude * (1.0 + rng.uniform(-1, 1) * config.amplitude_jitter)
        if k == 0:
            # the leading atom is the timing fiducial
            out.append(dataclasses.replace(a, amplitude=amp))
            continue
        out.append(dataclasses.replace(
            a, amplitude=amp,
            delay_s=a.delay_s + rng.uniform(-1, 1) * config.timing_jitter_ms / 1000.0,
            freq_hz=a.freq_hz * (1.0 + rng.uniform(-1, 1) * config.freq_jitter_rel)))
    return out


def gen_scg_recording(config: SynthConfig, subject: int = 0, trial: int = 0):
    """Simulated SCG trial. Returns ``(scg, truth)`` with truth = [(onset, label)]."""
    rec = gen_trial(config, subject, trial)
    return rec.scg, list(zip(rec.onsets, rec.labels))


def gen_trial(config: SynthConfig, subject: int = 0, trial: int = 0) -> Recording:
    flow, volume = gen_respiration(config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, subject, trial + 1]))
    atoms = subject_atoms(config, subject)
    hlv_atoms = shifted_atoms(config, atoms, config.morphology_shift)
    onsets = beat_onsets(config, rng)
    detr, med = labeling_reference(volume)
    labels = [HLV if detr[o] >= med else LLV for o in onsets]

    n = _n_samples(config)
    w = config.window_length
    x = np.zeros(n)
    for o, lab in zip(onsets, labels):
        base = hlv_atoms if lab == HLV else atoms
        x[o:o + w] += render_event(_jittered(config, base, rng), w, config.rate_hz)
    if config.background_rel > 0:
        x += background(config, subject, rng, n)
    sigma = noise_std(config, subject)
    if sigma > 0:
        x += rng.normal(scale=sigma, size=n)
    scg = SampledSignal(x, config.rate_hz, "g")
    return Recording(scg, flow, volume, onsets.tolist(), labels, subject, trial)


def gen_subject(config: SynthConfig, subject: int = 0) -> list:
    return [gen_trial(config, subject, k) for k in range(config.n_trials)]
