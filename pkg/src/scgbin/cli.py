"""Command-line entry point: ``scgbin <subcommand> ...``.

Exit codes: 0 success, 2 config/validation error, 3 empty result,
4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import binning, classifier, events, synth
from .errors import ConvergenceError, ParameterError
from .experiment import ExperimentConfig, run_experiment, summary_table, write_atomic
from .pipeline import PipelineConfig, make_partition, process_recording, volume_from
from .signal_core import SampledSignal, lowpass_filter, read_signal, write_signal

log = logging.getLogger("scgbin")

EXIT_OK, EXIT_CONFIG, EXIT_EMPTY, EXIT_SOLVER = 0, 2, 3, 4


class EmptyResult(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc


def _parse_bins(text):
    if text is None:
        return None
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise ParameterError(f"--bins must be a comma-separated list of integers, got {text!r}") from exc


def _methods(arg):
    return None if arg is None else [arg]


# --- subcommands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    n_subjects = int(cfg.pop("n_subjects", 7))
    if args.seed is not None:
        cfg["seed"] = args.seed
    scfg = synth.SynthConfig.from_dict(cfg)
    out = Path(args.out)
    for s in range(n_subjects):
        sdir = out / f"subject_{s:02d}"
        sdir.mkdir(parents=True, exist_ok=True)
        template = synth.canonical_event(scfg, s)
        write_signal(SampledSignal(template, scfg.rate_hz, "g"), sdir / "template.f32")
        for trial in range(scfg.n_trials):
            rec = synth.gen_trial(scfg, s, trial)
            stem = f"trial_{trial}"
            write_signal(rec.scg, sdir / f"{stem}_scg.f32")
            write_signal(rec.flow, sdir / f"{stem}_flow.f32")
            write_signal(rec.volume, sdir / f"{stem}_volume.f32")
            truth = {"onsets": rec.onsets, "labels": rec.labels, "subject": s, "trial": trial,
                     "config": scfg.to_dict()}
            write_atomic(sdir / f"{stem}_truth.json", json.dumps(truth))
    print(f"wrote {n_subjects} subject(s) x {scfg.n_trials} trial(s) to {out}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    pcfg = PipelineConfig.from_dict(cfg.get("pipeline", {}))
    scg = read_signal(args.scg)
    volume = volume_from(flow=read_signal(args.flow) if args.flow else None,
                         volume=read_signal(args.volume) if args.volume else None)
    if args.template:
        template = read_signal(args.template).samples
    elif args.template_range:
        start, stop = (int(v) for v in args.template_range.split(":"))
        template = events.cut_template(lowpass_filter(scg, pcfg.cutoff_hz), start, stop)
    else:
        raise ParameterError("pipeline needs --template or --template-range")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", events.DegenerateVolumeWarning)
        res = process_recording(scg, volume, template, pcfg, args.subject)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if not res.events:
        raise EmptyResult("no events detected")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events.write_dataset(out / "events.jsonl", res.events)
    X = np.array([e.window.samples for e in res.events])
    print(f"detected {res.stats['detected']} events, {res.stats['windows']} windows "
          f"({res.stats['dropped']} dropped); HLV {res.stats['hlv']} / LLV {res.stats['llv']}")
    methods = _methods(args.method) or cfg.get("methods", ["ew", "aw"])
    for method in methods:
        for n_bins in _parse_bins(args.bins) or cfg.get("bin_counts", [16]):
            _write_binning(out, X, method, n_bins)
    return EXIT_OK


def _write_binning(out, X, method, n_bins):
    part, report = make_partition(X, method, n_bins)
    stem = f"{method}_{n_bins}"
    doc = part.to_dict()
    if report is not None:
        doc["variability"] = report.summary()
    write_atomic(out / f"partition_{stem}.json", json.dumps(doc, indent=1))
    binning.write_feature_csv(out / f"features_{stem}.csv", binning.extract_feature_matrix(X, part))
    msg = f"{method.upper()} target {n_bins}: achieved {part.n_bins} bins"
    if report is not None:
        msg += (f", worst variability ratio {report.worst_ratio:.3f}, "
                f"{len(report.violations)} (event, bin) pairs above {1 + report.tolerance:.2f} T")
    print(msg)
    return part


def _dataset_matrix(path):
    labeled = events.read_dataset(path)
    if not labeled:
        raise EmptyResult(f"dataset {path} has no events")
    return np.array([e.window.samples for e in labeled]), [e.label for e in labeled]


def _features_for(args, X):
    if getattr(args, "partition", None):
        part = binning.BinPartition.from_dict(json.loads(Path(args.partition).read_text()))
    else:
        bins = _parse_bins(args.bins) or [16]
        part, _ = make_partition(X, args.method or "aw", bins[0])
    return part, binning.extract_feature_matrix(X, part)


def cmd_bin(args) -> int:
    X, _ = _dataset_matrix(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for n_bins in _parse_bins(args.bins) or [16]:
        _write_binning(out, X, args.method or "aw", n_bins)
    return EXIT_OK


def _grids(cfg):
    return (cfg.get("cost_grid", classifier.DEFAULT_COST_GRID),
            cfg.get("gamma_grid", classifier.DEFAULT_GAMMA_GRID))


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    X, y = _dataset_matrix(args.dataset)
    part, F = _features_for(args, X)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if args.cost is not None and args.gamma is not None:
        cost, gamma = args.cost, args.gamma
    else:
        costs, gammas = _grids(cfg)
        cost, gamma, acc = classifier.grid_search(F, y, cfg.get("k", 10), costs, gammas, seed)
        print(f"grid search: cost={cost} gamma={gamma} cv accuracy={acc:.4f}")
    model = classifier.train_svm(F, y, cost, gamma)
    doc = {"model": model.to_dict(), "partition": part.to_dict(), "seed": seed, "config": cfg}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "model.json", json.dumps(doc))
    print(f"trained on {len(y)} events, {len(model.dual_coefficients)} support vectors")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    X, y = _dataset_matrix(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if args.model:
        doc = json.loads(Path(args.model).read_text())
        model = classifier.RbfSvmModel.from_dict(doc["model"])
        part = binning.BinPartition.from_dict(doc["partition"])
        pred = classifier.predict_many(model, binning.extract_feature_matrix(X, part))
        counts = classifier.ConfusionCounts.from_predictions(classifier.encode_labels(y), pred)
        metrics = classifier.compute_metrics(counts)
        report = {"mode": "holdout", "counts": vars(counts), "metrics": metrics.to_dict(),
                  "positive_class": events.HLV, "config": cfg}
    else:
        part, F = _features_for(args, X)
        k = cfg.get("k", 10)
        costs, gammas = _grids(cfg)
        g = classifier.grid_search(F, y, k, costs, gammas, seed)
        metrics = g.best.pooled
        report = {"mode": "cross_validation", "k": k, "seed": seed, "folds": "stratified",
                  "cost": g.best_cost, "gamma": g.best_gamma, "cv": g.best.to_dict(),
                  "achieved_bins": part.n_bins, "positive_class": events.HLV, "config": cfg}
    write_atomic(out / "report.json", json.dumps(report, indent=1))
    print(json.dumps(metrics.to_dict()))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.bins:
        cfg["bin_counts"] = _parse_bins(args.bins)
    if args.method:
        cfg["methods"] = [args.method]
    config = ExperimentConfig.from_dict(cfg)
    res = run_experiment(config, args.out, jobs=args.jobs)
    print(summary_table(res["summary"], config), end="")
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scgbin", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="out", help="output directory")
        return sp

    sp = common(sub.add_parser("synth", help="generate synthetic recordings"))
    sp.set_defaults(func=cmd_synth)

    sp = common(sub.add_parser("pipeline", help="recording -> labeled event dataset + features"))
    sp.add_argument("--scg", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--flow")
    g.add_argument("--volume")
    sp.add_argument("--template")
    sp.add_argument("--template-range", help="start:stop sample range to cut the template from")
    sp.add_argument("--subject", default="")
    sp.add_argument("--method", choices=("ew", "aw"))
    sp.add_argument("--bins")
    sp.set_defaults(func=cmd_pipeline)

    sp = common(sub.add_parser("bin", help="fit a partition and write features for a dataset"))
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--method", choices=("ew", "aw"))
    sp.add_argument("--bins")
    sp.set_defaults(func=cmd_bin)

    for name, func, help_ in (("train", cmd_train, "train an RBF SVM on a dataset"),
                              ("evaluate", cmd_evaluate, "cross-validate or score a model")):
        sp = common(sub.add_parser(name, help=help_))
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--partition")
        sp.add_argument("--method", choices=("ew", "aw"))
        sp.add_argument("--bins")
        if name == "train":
            sp.add_argument("--cost", type=float)
            sp.add_argument("--gamma", type=float)
        else:
            sp.add_argument("--model")
        sp.set_defaults(func=func)

    sp = common(sub.add_parser("experiment", help="EW vs AW sweep over bin counts"))
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--method", choices=("ew", "aw"))
    sp.add_argument("--bins")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParameterError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyResult as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
