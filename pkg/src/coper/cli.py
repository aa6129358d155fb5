"""Command-line pipeline: gen, verify, train, eval, analyze, plot, and
one-shot run-experiment recipes.

Exit codes: 0 success, 1 validation problem (bad flags, unknown profile,
failed dataset verification), 2 runtime failure.  Heavy imports happen
inside the commands so COPER_THREADS can cap BLAS threads before numpy
loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path


class ValidationFailure(Exception):
    """Maps to exit code 1."""


def _apply_thread_cap() -> None:
    cap = os.environ.get("COPER_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _write_stamp(out_dir: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    """Reproducibility stamp; the only artifact that carries a timestamp."""
    from . import __version__

    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = {
        "version": __version__,
        "command": " ".join(sys.argv[1:]) or args.command,
        "profile": getattr(args, "profile", None),
        "seed": getattr(args, "seed", None),
        "scale": getattr(args, "scale", None),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        stamp.update(extra)
    (out_dir / "stamp.json").write_text(json.dumps(stamp, sort_keys=True, indent=2) + "\n")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationFailure(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationFailure("config file must hold a JSON object")
    return cfg


def _resolve(args: argparse.Namespace):
    """Profile + scale + config file + flags -> concrete settings.

    Precedence (lowest to highest): profile defaults, config file sections
    ('policy', 'counts', 'task_params', 'answer_cap', 'model', 'train'),
    then command-line flags.
    """
    from .composers import AnswerLenPolicy
    from .dataset import Split, SplitPolicy, TaskParams
    from .model import PeKind
    from .profiles import get_profile

    try:
        profile = get_profile(args.profile)
    except KeyError as exc:
        raise ValidationFailure(str(exc)) from exc
    settings = profile.settings(args.scale)
    cfg = _load_config_file(getattr(args, "config", None))

    policy = settings.policy
    if "policy" in cfg:
        policy = SplitPolicy.from_dict(cfg["policy"])
    counts = dict(settings.counts)
    if "counts" in cfg:
        counts = {Split(k): int(v) for k, v in cfg["counts"].items()}
    task_params = settings.task_params
    if "task_params" in cfg:
        task_params = TaskParams.from_dict({**task_params.to_dict(), **cfg["task_params"]})
    answer_policy = settings.answer_policy
    if "answer_cap" in cfg:
        cap = cfg["answer_cap"]
        answer_policy = AnswerLenPolicy.full_lcm() if cap is None else AnswerLenPolicy.capped(int(cap))

    model = settings.model
    if "model" in cfg:
        fields = dict(cfg["model"])
        if "pe_kind" in fields:
            fields["pe_kind"] = PeKind(fields["pe_kind"])
        model = replace(model, **fields)
    if getattr(args, "pe", None):
        model = replace(model, pe_kind=PeKind(args.pe))
    if getattr(args, "layers", None):
        model = replace(model, n_layers=args.layers)

    train_cfg = settings.train
    if "train" in cfg:
        fields = dict(cfg["train"])
        if "loss_region" in fields:
            from .training import LossRegion

            fields["loss_region"] = LossRegion(fields["loss_region"])
        train_cfg = replace(train_cfg, **fields)
    if getattr(args, "epochs", None):
        train_cfg = replace(train_cfg, epochs=args.epochs)

    return profile, policy, counts, answer_policy, task_params, model, train_cfg


def _cmd_gen(args) -> int:
    from .dataset import build_dataset

    profile, policy, counts, answer_policy, task_params, _, _ = _resolve(args)
    out = Path(args.out)
    data_dir = out / "data" if args.nested else out
    manifest = build_dataset(profile.rule, policy, counts, args.seed, data_dir,
                             answer_policy=answer_policy, task_params=task_params)
    _write_stamp(out, args)
    total = sum(manifest.counts.values())
    print(f"wrote {total} records across {len(manifest.files)} splits to {data_dir}")
    return 0


def _cmd_verify(args) -> int:
    from .dataset import verify_dataset

    report = verify_dataset(Path(args.data))
    if report.passed:
        print(f"PASS: {report.records_checked} records verified")
        return 0
    first = report.first_failure()
    print(f"FAIL: {len(report.failures)} problem(s); first at {first.file}:{first.line_no}: {first.reason}")
    return 1


def _cmd_train(args) -> int:
    from .model import Transformer
    from .training import train

    _, _, _, _, _, model_cfg, train_cfg = _resolve(args)
    model_cfg = replace(model_cfg, init_seed=args.seed)
    train_cfg = replace(train_cfg, seed=args.seed)
    out = Path(args.out)
    model = Transformer(model_cfg)
    _, runlog = train(model, Path(args.data), train_cfg, out_dir=out, verbose=args.verbose)
    _write_stamp(out, args, {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()})
    final = runlog.final
    print(f"trained {train_cfg.epochs} epochs; final train loss {final.train_loss:.4f}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import emit_category_bar, emit_heatmap, evaluate
    from .model import load_checkpoint

    model, _, _ = load_checkpoint(Path(args.ckpt))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = evaluate(model, Path(args.data))
    emit_heatmap(result.combined_grid(), out / "heatmap.csv", out / "heatmap.svg")
    emit_category_bar([(args.name, result.report)], out / "categories.csv", out / "categories.svg")
    (out / "report.json").write_text(
        json.dumps({"report": result.report.to_dict(),
                    "split_accuracy": result.split_accuracy,
                    "split_tf_loss": result.split_tf_loss}, sort_keys=True, indent=2) + "\n")
    _write_stamp(out, args)
    rep = result.report
    print(f"id {rep.id_accuracy:.3f} hollow {rep.hollow_accuracy:.3f} "
          f"extrapolation {rep.extrapolation_accuracy:.3f} avg {rep.average:.3f}")
    return 0


def _cmd_analyze(args) -> int:
    from .composers import gen_scaled_single
    from .cycles import PeriodicCycle
    from .dataset import TaskParams, _sample_exact_period
    from .invariance import (PhaseConfig, check_relative_invariance,
                             invariance_premise_test, rule_periodicity_counterexample)

    import numpy as np

    if args.target == "rope-counterexample":
        witness = rule_periodicity_counterexample().to_dict()
    elif args.target == "rope-invariance":
        periods = {}
        for period in range(1, args.max_period + 1):
            periods[str(period)] = check_relative_invariance(PhaseConfig(period), args.trials)
        witness = {"max_deviation": max(periods.values()), "per_period": periods}
    elif args.target == "scaled-premise":
        rng = np.random.default_rng(args.seed)
        params = TaskParams()
        cases = []
        for _ in range(args.trials):
            period = int(rng.integers(1, 8))
            values = _sample_exact_period(period, 1, params.value_hi, rng)
            seq = gen_scaled_single(PeriodicCycle(values, base=params.value_hi + 1), 3)
            w = invariance_premise_test(seq, period)
            cases.append({"period": period, "values": list(values), **w.to_dict()})
        witness = {"all_violate": all(not c["holds"] for c in cases), "cases": cases}
    else:  # pragma: no cover - argparse choices guard this
        raise ValidationFailure(f"unknown analyze target {args.target!r}")
    print(json.dumps(witness, sort_keys=True, indent=2))
    return 0


def _cmd_plot(args) -> int:
    from .evaluation import emit_heatmap, emit_loss_curves, PairAccuracyGrid
    from .training import RunLog

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if args.runlog:
        log = RunLog.from_csv_text(Path(args.runlog).read_text())
        emit_loss_curves(log, out / "curves.csv", out / "curves.svg")
        made.append("curves.svg")
    if args.heatmap:
        import csv as _csv

        grid = PairAccuracyGrid()
        with open(args.heatmap) as fh:
            for row in _csv.DictReader(fh):
                grid.add((int(row["p1"]), int(row["p2"])), int(row["correct"]), int(row["total"]))
        emit_heatmap(grid, out / "heatmap.csv", out / "heatmap.svg")
        made.append("heatmap.svg")
    if not made:
        raise ValidationFailure("plot needs --runlog and/or --heatmap")
    print(f"wrote {', '.join(made)} to {out}")
    return 0


def _cmd_run_experiment(args) -> int:
    from .dataset import build_dataset, verify_dataset
    from .evaluation import emit_category_bar, emit_heatmap, emit_loss_curves, evaluate
    from .model import Transformer
    from .training import train

    profile, policy, counts, answer_policy, task_params, model_cfg, train_cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = out / "data"
    build_dataset(profile.rule, policy, counts, args.seed, data_dir,
                  answer_policy=answer_policy, task_params=task_params)
    report = verify_dataset(data_dir)
    if not report.passed:
        first = report.first_failure()
        raise ValidationFailure(
            f"generated dataset failed verification at {first.file}:{first.line_no}: {first.reason}")

    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    named_reports = []
    mean_acc: dict[str, float] = {}
    for seed in seeds:
        seed_dir = out / f"seed_{seed}"
        model = Transformer(replace(model_cfg, init_seed=seed))
        _, runlog = train(model, data_dir, replace(train_cfg, seed=seed),
                          out_dir=seed_dir, verbose=args.verbose)
        emit_loss_curves(runlog, seed_dir / "curves.csv", seed_dir / "curves.svg")
        result = evaluate(model, data_dir)
        emit_heatmap(result.combined_grid(), seed_dir / "heatmap.csv", seed_dir / "heatmap.svg")
        name = f"{profile.name}-seed{seed}"
        named_reports.append((name, result.report))
        (seed_dir / "report.json").write_text(
            json.dumps({"report": result.report.to_dict(),
                        "split_accuracy": result.split_accuracy}, sort_keys=True, indent=2) + "\n")
        for key, val in result.report.to_dict().items():
            mean_acc[key] = mean_acc.get(key, 0.0) + val / len(seeds)

    emit_category_bar(named_reports, out / "categories.csv", out / "categories.svg")
    (out / "summary.json").write_text(json.dumps(
        {"profile": profile.name, "scale": args.scale, "seeds": seeds, "mean": mean_acc},
        sort_keys=True, indent=2) + "\n")
    _write_stamp(out, args, {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()})
    print(f"profile {profile.name}: mean id {mean_acc['id_accuracy']:.3f} "
          f"hollow {mean_acc['hollow_accuracy']:.3f} "
          f"extrapolation {mean_acc['extrapolation_accuracy']:.3f}")
    return 0


def _add_profile_flags(p: argparse.ArgumentParser, default_profile: str | None = "coper-default"):
    p.add_argument("--profile", default=default_profile, help="experiment profile name")
    p.add_argument("--config", help="JSON file overriding profile fields; flags beat the file")
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--desk", dest="scale", action="store_const", const="desk",
                       help="desk-scale settings (default)")
    scale.add_argument("--paper", dest="scale", action="store_const", const="paper",
                       help="full published protocol settings")
    p.set_defaults(scale="desk")
    p.add_argument("--pe", choices=["rope", "sinpe", "none"], help="positional encoding override")
    p.add_argument("--layers", type=int, help="layer-count override")
    p.add_argument("--epochs", type=int, help="epoch-count override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coper",
        description="Composite-periodicity benchmark: generate corpora, train and "
                    "evaluate small transformers, and inspect positional-encoding algebra.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="build a dataset from a profile")
    _add_profile_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--nested", action="store_true", help="write to OUT/data instead of OUT")
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("verify", help="re-derive every record of a built dataset")
    p.add_argument("--data", required=True)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("train", help="train one model on a built dataset")
    _add_profile_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="decode a checkpoint over a dataset's test splits")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="model", help="label used in category outputs")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("analyze", help="print algebraic witnesses as JSON")
    p.add_argument("target", choices=["rope-counterexample", "rope-invariance", "scaled-premise"])
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--max-period", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("plot", help="render CSV artifacts to SVG")
    p.add_argument("--runlog", help="runlog.csv from a training run")
    p.add_argument("--heatmap", help="heatmap.csv from an evaluation")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("run-experiment", help="gen + verify + train + eval, one command")
    p.add_argument("profile_pos", metavar="profile", help="experiment profile name")
    _add_profile_flags(p, default_profile=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", help="comma-separated seed list (overrides --seed)")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=_cmd_run_experiment)

    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    if getattr(args, "profile_pos", None):
        args.profile = args.profile_pos
    try:
        return args.fn(args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
