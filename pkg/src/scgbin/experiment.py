"""Equal- vs adaptive-width sweep over bin counts, per subject.

Every (subject, method, bins) cell runs a grid search with stratified k-fold
CV on that subject's events only. Finished cells are written to
``<out>/cells`` as they complete, so an interrupted sweep resumes where it
stopped; the result CSVs are assembled from the cell files in a fixed order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binning, classifier, events, synth
from .errors import ParameterError
from .pipeline import PipelineConfig, event_matrix, make_partition, process_recording

log = logging.getLogger(__name__)

TABLE_BINS = (16, 32, 64, 128, 256, 512, 1024)
METHODS = ("ew", "aw")
RESULT_COLUMNS = ("subject", "method", "bins", "accuracy", "f1", "accuracy_sd", "f1_sd",
                  "cost", "gamma", "achieved_bins", "seed")


@dataclass
class ExperimentConfig:
    bin_counts: tuple = TABLE_BINS
    methods: tuple = METHODS
    k: int = 10
    seed: int = 0
    n_subjects: int = 7
    synth: dict = field(default_factory=dict)
    subjects: list = field(default_factory=list)
    cost_grid: tuple = classifier.DEFAULT_COST_GRID
    gamma_grid: tuple = classifier.DEFAULT_GAMMA_GRID
    pipeline: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_counts = tuple(int(b) for b in self.bin_counts)
        self.methods = tuple(self.methods)
        self.cost_grid = tuple(float(c) for c in self.cost_grid)
        self.gamma_grid = tuple(float(g) for g in self.gamma_grid)
        if not self.bin_counts or any(b < 1 for b in self.bin_counts):
            raise ParameterError("bin_counts must be a non-empty list of positive integers")
        window = self.pipeline_config().window_length
        if any(b > window for b in self.bin_counts):
            raise ParameterError(f"bin_counts must not exceed window_length ({window})")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ParameterError(f"methods must be drawn from {METHODS}, got {list(self.methods)}")
        if self.k < 2:
            raise ParameterError(f"k must be at least 2, got {self.k}")
        if not self.subjects and self.n_subjects < 1:
            raise ParameterError("n_subjects must be positive")
        if not self.cost_grid or not self.gamma_grid:
            raise ParameterError("cost_grid and gamma_grid must be non-empty")
        self.synth_config(0)

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown experiment config field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("bin_counts", "methods", "cost_grid", "gamma_grid"):
            d[key] = list(d[key])
        return d

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig.from_dict(self.pipeline)

    def synth_config(self, overrides=None) -> synth.SynthConfig:
        d = {"seed": self.seed, **self.synth, **(overrides or {})}
        return synth.SynthConfig.from_dict(d)

    def subject_specs(self) -> list:
        if self.subjects:
            specs = []
            for i, s in enumerate(self.subjects):
                s = dict(s)
                s.setdefault("id", f"s{i:02d}")
                s.setdefault("index", i)
                specs.append(s)
            return specs
        return [{"id": f"s{i:02d}", "index": i, "synth": {}} for i in range(self.n_subjects)]

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def cell_seed(master_seed: int, subject_index: int) -> int:
    """CV seed for a subject: shared by every method and bin count of that subject."""
    return int(np.random.SeedSequence([master_seed, subject_index]).generate_state(1)[0])


def fold_digest(folds) -> str:
    """Short hash of a fold assignment, for cross-run comparison."""
    h = hashlib.sha1()
    for f in folds:
        h.update(np.asarray(f, dtype="<i8").tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --- subjects -------------------------------------------------------------------

def build_subject(spec: dict, config: ExperimentConfig):
    """Events and labels for one subject, from a dataset file or the generator."""
    sid = spec["id"]
    if "dataset" in spec:
        labeled = events.read_dataset(spec["dataset"])
        X, y = event_matrix(labeled)
        return X, y, {"source": str(spec["dataset"]), "events": len(y)}
    scfg = config.synth_config(spec.get("synth"))
    pcfg = config.pipeline_config()
    template = synth.canonical_event(scfg, spec["index"])
    labeled, stats = [], []
    for trial in range(scfg.n_trials):
        rec = synth.gen_trial(scfg, spec["index"], trial)
        res = process_recording(rec.scg, rec.volume, template, pcfg, sid)
        labeled += res.events
        stats.append(res.stats)
    X, y = event_matrix(labeled)
    return X, y, {"source": "synth", "trials": stats, "events": len(y)}


def _subject_cache(out: Path, sid: str, digest: str) -> Path:
    return out / "subjects" / f"{sid}-{digest[:10]}.npz"


def prepare_subject(spec, config, out: Path):
    path = _subject_cache(out, spec["id"], config.digest())
    if path.exists():
        return path
    X, y, meta = build_subject(spec, config)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, windows=X, labels=np.array(y), meta=json.dumps(meta))
    os.replace(tmp, path)
    log.info("subject %s: %d events", spec["id"], len(y))
    return path


def load_subject(path):
    with np.load(path) as z:
        return z["windows"], [str(v) for v in z["labels"]], json.loads(str(z["meta"]))


# --- cells ------------------------------------------------------------------------

def run_cell(X, y, method, n_bins, config: ExperimentConfig, seed: int) -> dict:
    part, report = make_partition(X, method, n_bins)
    F = binning.extract_feature_matrix(X, part)
    g = classifier.grid_search(F, y, config.k, config.cost_grid, config.gamma_grid, seed)
    cv = g.best
    return {"method": method, "bins": n_bins, "achieved_bins": part.n_bins,
            "fold_digest": fold_digest(classifier.kfold_split(len(y), config.k, seed, y)),
            "accuracy": cv.mean_accuracy, "f1": cv.pooled.f1,
            "accuracy_sd": cv.accuracy_sd, "f1_sd": cv.f1_sd,
            "cost": g.best_cost, "gamma": g.best_gamma, "seed": seed,
            "cv": cv.to_dict(), "partition": part.to_dict(),
            "variability": None if report is None else report.summary()}


def _cell_path(out: Path, sid, method, n_bins) -> Path:
    return out / "cells" / f"{sid}__{method}__{n_bins}.json"


def _cell_task(args):
    cache, sid, method, n_bins, cfg_dict, seed, out = args
    config = ExperimentConfig.from_dict(cfg_dict)
    X, y, _ = load_subject(cache)
    row = run_cell(X, y, method, n_bins, config, seed)
    row["subject"] = sid
    row["config_digest"] = config.digest()
    write_atomic(_cell_path(Path(out), sid, method, n_bins), json.dumps(row, indent=1))
    return sid, method, n_bins


def _load_cell(path: Path, digest: str):
    if not path.exists():
        return None
    row = json.loads(path.read_text())
    return row if row.get("config_digest") == digest else None


def run_experiment(config: ExperimentConfig, out, jobs: int = 1) -> dict:
    """Run (or resume) the sweep and write every output file under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "config.json", json.dumps(config.to_dict(), indent=1, sort_keys=True))
    specs = config.subject_specs()
    digest = config.digest()
    cfg_dict = config.to_dict()

    caches = {}
    for spec in specs:
        caches[spec["id"]] = prepare_subject(spec, config, out)

    tasks = []
    for spec in specs:
        seed = cell_seed(config.seed, spec["index"])
        for method in config.methods:
            for n_bins in config.bin_counts:
                if _load_cell(_cell_path(out, spec["id"], method, n_bins), digest) is None:
                    tasks.append((str(caches[spec["id"]]), spec["id"], method, n_bins,
                                  cfg_dict, seed, str(out)))
    log.info("%d cells to run (%d already done)",
             len(tasks), len(specs) * len(config.methods) * len(config.bin_counts) - len(tasks))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for sid, method, n_bins in pool.map(_cell_task, tasks):
                log.info("done %s %s %d", sid, method, n_bins)
    else:
        for t in tasks:
            _cell_task(t)
            log.info("done %s %s %d", t[1], t[2], t[3])

    rows = []
    for spec in specs:
        for method in config.methods:
            for n_bins in config.bin_counts:
                row = _load_cell(_cell_path(out, spec["id"], method, n_bins), digest)
                rows.append(row)
    write_results(out, rows, config)
    return {"rows": rows, "summary": summarize(rows, config)}


# --- outputs ----------------------------------------------------------------------

def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def summarize(rows, config: ExperimentConfig) -> list:
    """Mean and across-subject sd per (method, bins); sd uses the N denominator.

    ``accuracy_fold_sd`` is the sd of all fold accuracies pooled over subjects.
    """
    out = []
    for method in config.methods:
        for n_bins in config.bin_counts:
            sel = [r for r in rows if r["method"] == method and r["bins"] == n_bins]
            acc = np.array([r["accuracy"] for r in sel])
            f1 = np.array([r["f1"] for r in sel])
            folds = np.concatenate([r["cv"]["fold_accuracies"] for r in sel])
            out.append({"method": method, "bins": n_bins, "n_subjects": len(sel),
                        "accuracy_mean": float(acc.mean()), "accuracy_sd": float(acc.std()),
                        "f1_mean": float(f1.mean()), "f1_sd": float(f1.std()),
                        "accuracy_fold_sd": float(folds.std()),
                        "achieved_bins_mean": float(np.mean([r["achieved_bins"] for r in sel]))})
    return out


def summary_csv(summary) -> str:
    cols = ("method", "bins", "n_subjects", "accuracy_mean", "accuracy_sd", "f1_mean", "f1_sd",
            "accuracy_fold_sd", "achieved_bins_mean")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for s in summary:
        w.writerow([_fmt(s[c]) for c in cols])
    return buf.getvalue()


def summary_table(summary, config: ExperimentConfig) -> str:
    """Markdown table with one row per bin count and mean +- sd per method."""
    idx = {(s["method"], s["bins"]): s for s in summary}
    heads = ["Bins"]
    for key in ("accuracy", "f1"):
        for m in config.methods:
            heads.append(f"{'Acc.' if key == 'accuracy' else 'F1'} {m.upper()}")
    lines = ["| " + " | ".join(heads) + " |", "|" + "---|" * len(heads)]
    for b in config.bin_counts:
        cells = [str(b)]
        for key in ("accuracy", "f1"):
            for m in config.methods:
                s = idx[(m, b)]
                cells.append(f"{s[key + '_mean']:.2f} ± {s[key + '_sd']:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def trend_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("bins", "method", "accuracy", "f1"))
    for s in sorted(summary, key=lambda s: (s["bins"], s["method"])):
        w.writerow([s["bins"], s["method"], _fmt(s["accuracy_mean"]), _fmt(s["f1_mean"])])
    return buf.getvalue()


def trend_svg(summary, config: ExperimentConfig) -> str:
    """Two side-by-side line charts (accuracy, F1) against log2(bins)."""
    width, height, pad = 360, 260, 40
    colors = {"ew": "#d62728", "aw": "#1f77b4"}
    bins = sorted(config.bin_counts)
    lo, hi = np.log2(bins[0]), np.log2(bins[-1])
    span = hi - lo if hi > lo else 1.0

    def xy(b, v):
        x = pad + (np.log2(b) - lo) / span * (width - 2 * pad)
        y = height - pad - v * (height - 2 * pad)
        return f"{x:.1f},{y:.1f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">']
    for panel, key in enumerate(("accuracy", "f1")):
        parts.append(f'<g transform="translate({panel * width},0)">')
        parts.append(f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" '
                     f'height="{height - 2 * pad}" fill="none" stroke="#888"/>')
        parts.append(f'<text x="{width / 2}" y="{pad - 10}" text-anchor="middle">'
                     f'{"Accuracy" if key == "accuracy" else "F1 score"}</text>')
        for v in (0.0, 0.5, 1.0):
            x0, y0 = xy(bins[0], v).split(",")
            parts.append(f'<text x="{pad - 6}" y="{float(y0) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
        for b in bins:
            x0, _ = xy(b, 0).split(",")
            parts.append(f'<text x="{x0}" y="{height - pad + 15}" text-anchor="middle">{b}</text>')
        for m in config.methods:
            pts = [xy(s["bins"], s[key + "_mean"])
                   for s in sorted(summary, key=lambda s: s["bins"]) if s["method"] == m]
            parts.append(f'<polyline fill="none" stroke="{colors[m]}" stroke-width="2" '
                         f'points="{" ".join(pts)}"/>')
        for i, m in enumerate(config.methods):
            parts.append(f'<text x="{width - pad - 30}" y="{height - pad - 10 - 14 * i}" '
                         f'fill="{colors[m]}">{m.upper()}</text>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_results(out: Path, rows, config: ExperimentConfig) -> None:
    summary = summarize(rows, config)
    write_atomic(out / "results.csv", results_csv(rows))
    write_atomic(out / "summary.csv", summary_csv(summary))
    write_atomic(out / "summary.md", summary_table(summary, config))
    write_atomic(out / "trend.csv", trend_csv(summary))
    write_atomic(out / "trend.svg", trend_svg(summary, config))
    report = {"config": config.to_dict(), "summary": summary,
              "positive_class": events.HLV, "folds": "stratified",
              "cells": [{k: v for k, v in r.items() if k != "config_digest"} for r in rows]}
    write_atomic(out / "report.json", json.dumps(report, indent=1))
