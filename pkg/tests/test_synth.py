import dataclasses
import math

import numpy as np
import pytest

from scgbin import binning, classifier
from scgbin.errors import ParameterError
from scgbin.events import HLV, labeling_reference, matched_filter_detect
from scgbin.signal_core import lowpass_filter
from scgbin.synth import (SynthConfig, canonical_event, gen_respiration, gen_scg_recording,
                          gen_trial, render_event, shifted_atoms, subject_atoms)


def test_breath_timing():
    cfg = SynthConfig()
    assert cfg.breath_period_s == 5.0
    assert cfg.inspiration_s == 1.25


def test_volume_zero_at_breath_boundaries():
    cfg = SynthConfig(rate_hz=1000.0, duration_s=60.0)
    flow, vol = gen_respiration(cfg)
    v = vol.samples
    step = int(cfg.breath_period_s * cfg.rate_hz)
    peak = np.max(np.abs(v))
    assert np.all(np.abs(v[::step]) <= 1e-6 * peak)
    insp = int(cfg.inspiration_s * cfg.rate_hz)
    assert np.all(flow.samples[1:insp] > 0) and np.all(flow.samples[insp + 1:step] < 0)


def test_peak_volume_linear_in_tidal_volume():
    a = gen_respiration(SynthConfig(rate_hz=1000.0, duration_s=20.0, tidal_volume_l=0.5))[1]
    b = gen_respiration(SynthConfig(rate_hz=1000.0, duration_s=20.0, tidal_volume_l=1.5))[1]
    np.testing.assert_allclose(b.samples, 3 * a.samples, rtol=0, atol=1e-12)
    assert np.max(a.samples) == pytest.approx(0.5, rel=1e-4)


def test_noise_free_60bpm():
    cfg = SynthConfig(heart_rate_bpm=60.0, snr_db=math.inf, background_rel=0.0)
    scg, truth = gen_scg_recording(cfg)
    assert len(truth) == 300
    onsets = [o for o, _ in truth]
    period = int(cfg.rate_hz)
    nominal = (np.arange(300) + 0.25) * period
    assert np.all(np.abs(np.asarray(onsets) - nominal) <= cfg.hr_jitter * period + 1)
    # nothing before the first event
    assert np.all(scg.samples[:onsets[0]] == 0)


def test_determinism():
    cfg = SynthConfig(duration_s=30.0, seed=5)
    a, b = gen_trial(cfg, 2, 1), gen_trial(cfg, 2, 1)
    assert a.scg.samples.tobytes() == b.scg.samples.tobytes()
    assert a.onsets == b.onsets and a.labels == b.labels
    c = gen_trial(cfg, 2, 0)
    assert c.scg.samples.tobytes() != a.scg.samples.tobytes()


@pytest.mark.parametrize("bpm,duration", [(57, 300), (72, 120), (45, 60)])
def test_onset_count(bpm, duration):
    cfg = SynthConfig(heart_rate_bpm=bpm, duration_s=duration, rate_hz=2000.0, window_length=800)
    rec = gen_trial(cfg)
    assert abs(len(rec.onsets) - math.floor(bpm * duration / 60)) <= 1


def test_default_event_count_near_570():
    cfg = SynthConfig()
    assert abs(cfg.n_trials * cfg.expected_events() - 570) <= 5


def test_labels_follow_median_rule():
    cfg = SynthConfig(duration_s=60.0, seed=1)
    rec = gen_trial(cfg)
    detr, med = labeling_reference(rec.volume)
    assert rec.labels == [HLV if detr[o] >= med else "LLV" for o in rec.onsets]
    frac = np.mean([lab == HLV for lab in rec.labels])
    assert 0.4 <= frac <= 0.6


@pytest.mark.parametrize("subject", range(7))
def test_hlv_fraction(subject):
    rec = gen_trial(SynthConfig(seed=0), subject, 0)
    assert 0.4 <= np.mean([lab == HLV for lab in rec.labels]) <= 0.6


def test_event_energy_inside_window():
    cfg = SynthConfig()
    w = cfg.window_length
    worst = 1.0
    for subject in range(20):
        base = subject_atoms(cfg, subject)
        for amount in (0.0, 1.0):
            atoms = shifted_atoms(cfg, base, amount)
            # stretch every atom to its jitter extreme
            atoms = [dataclasses.replace(a, delay_s=a.delay_s + cfg.timing_jitter_ms / 1000,
                                         freq_hz=a.freq_hz * (1 - cfg.freq_jitter_rel))
                     for a in atoms]
            long = render_event(atoms, 4 * w, cfg.rate_hz)
            worst = min(worst, np.sum(long[:w] ** 2) / np.sum(long ** 2))
    assert worst >= 0.999


def test_detection_at_default_snr():
    cfg = SynthConfig(seed=0)
    rec = gen_trial(cfg, 0, 0)
    found = np.asarray(matched_filter_detect(lowpass_filter(rec.scg, 100.0), canonical_event(cfg, 0)))
    truth = np.asarray(rec.onsets)
    err = np.abs(found[:, None] - truth[None, :]).min(axis=0)
    assert np.mean(err <= 5) >= 0.99
    assert len(found) == len(truth)


def ideal_cv_accuracy(shift, seed):
    """CV accuracy with true onsets and true labels, 64 equal bins."""
    cfg = SynthConfig(morphology_shift=shift, n_trials=1, seed=seed)
    rec = gen_trial(cfg, 0, 0)
    f = lowpass_filter(rec.scg, 100.0).samples
    X = np.array([f[o:o + cfg.window_length] for o in rec.onsets])
    F = binning.extract_feature_matrix(X, binning.equal_partition(cfg.window_length, 64))
    return classifier.cross_validate(F, rec.labels, cost=1.0, gamma=1 / 64, seed=seed).mean_accuracy


@pytest.mark.parametrize("seed", range(3))
def test_no_shift_is_chance(seed):
    assert 0.35 <= ideal_cv_accuracy(0.0, seed) <= 0.65


@pytest.mark.parametrize("seed", range(3))
def test_default_shift_separable(seed):
    assert ideal_cv_accuracy(1.0, seed) >= 0.95


@pytest.mark.parametrize("field,value", [("ie_ratio", (0, 3)), ("rate_hz", 0.0),
                                         ("heart_rate_bpm", -1.0), ("duration_s", 2.0)])
def test_validation_names_field(field, value):
    with pytest.raises(ParameterError, match=field.split("_")[0]):
        SynthConfig(**{field: value})


def test_config_dict_roundtrip():
    cfg = SynthConfig(seed=3, snr_db=15.0)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ParameterError):
        SynthConfig.from_dict({"bogus": 1})
