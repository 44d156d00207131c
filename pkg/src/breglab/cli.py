"""Command-line entry point.

Four commands — ``verify`` (oracle suite), ``train`` (one distillation
run), ``sweep`` (divergence x seed grid with a ranked summary), ``eval``
(sample and score a saved generator).  Exit status contract everywhere:
0 success, 1 runtime or numeric failure, 2 usage error.  No command
writes outside its output directory.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import verify as verify_mod
from .analytic import gm_sample
from .distill import distill_run, load_generator
from .errors import CoverageError, DegenerateGeneratorError, NumericError
from .metrics import as_sample_set, mmd_rbf, mode_coverage, save_sample_set, \
    sliced_wasserstein2

USAGE_EXIT = 2
FAIL_EXIT = 1


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit, so main() owns
    the exit-status contract."""

    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="breglab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, samples_default=None):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        if samples_default is not None:
            p.add_argument("--samples", type=int, default=samples_default,
                           help="number of generator samples")

    pv = sub.add_parser("verify", help="run the oracle suite")
    pv.add_argument("--only", default=None, metavar="NAME",
                    help=f"run one check group: {', '.join(verify_mod.GROUPS)}")

    pt = sub.add_parser("train", help="run one distillation experiment")
    common(pt)

    ps = sub.add_parser("sweep", help="run the divergence x seed grid")
    common(ps)

    pe = sub.add_parser("eval", help="sample and score a saved generator")
    pe.add_argument("checkpoint", help="generator checkpoint path")
    common(pe, samples_default=2048)
    return parser


def _experiment(args) -> cfgmod.ExperimentConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    return cfgmod.load_config(args.config, overrides)


def cmd_verify(args) -> int:
    reports = verify_mod.run_all(only=args.only)
    for rep in reports:
        print(rep.line())
    failed = sum(1 for r in reports if not r.passed)
    print(f"# checks: {len(reports)}  failed: {failed}")
    return 0 if failed == 0 else FAIL_EXIT


def _run_one(cfg: cfgmod.ExperimentConfig, out_dir: Path) -> dict:
    """Execute one training run under out_dir; returns the run status."""
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = cfg.hash()
    (out_dir / "config.txt").write_text(cfgmod.config_text(cfg.raw))
    manifest = cfgmod.RunManifest(config_hash=chash).start()
    records, state, status = distill_run(
        cfg.distill_config(), cfg.teacher(), out_dir=out_dir,
        record_every=cfg.record_every, metric_samples=cfg.metric_samples,
        config_hash=chash)
    manifest.artifacts = [str(out_dir / "config.txt")] + list(status["artifacts"])
    manifest.status = "ok" if status["ok"] else "failed"
    manifest.failed_round = status["failed_round"]
    manifest.error = status["error"]
    cfgmod.write_manifest(out_dir / "manifest.json", manifest)
    status = dict(status)
    status["final_sw2"] = records[-1].sw2 if records else float("nan")
    return status


def cmd_train(args) -> int:
    cfg = _experiment(args)
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir)
    status = _run_one(cfg, out_dir)
    return 0 if status["ok"] else FAIL_EXIT


def _safe_name(label: str) -> str:
    return label.replace("(", "_").replace(")", "").replace(",", "_")


def cmd_sweep(args) -> int:
    base = _experiment(args)
    if not base.sweep_divergences:
        raise _UsageError("sweep.divergences is empty")
    out_dir = Path(args.out) if args.out else Path(base.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for label in base.sweep_divergences:
        for seed in base.sweep_seeds:
            overrides = [f"divergence.name={label}", f"train.seed={seed}"]
            run_dir = out_dir / f"{_safe_name(label)}-seed{seed}"
            try:
                cfg = cfgmod.build_config(cfgmod.apply_overrides(
                    base.raw, overrides))
                status = _run_one(cfg, run_dir)
                ok = bool(status["ok"])
                final = float(status["final_sw2"])
                err = status["error"]
            except (ValueError, NumericError, CoverageError,
                    DegenerateGeneratorError) as exc:
                ok, final, err = False, float("nan"), str(exc)
            rows.append({"divergence": label, "seed": seed, "ok": ok,
                         "final_sw2": final, "error": err})
            state = "ok" if ok else f"failed ({err})"
            print(f"sweep {label} seed {seed}: {state}  final_sw2={final:.6g}")

    means = {}
    for label in base.sweep_divergences:
        vals = [r["final_sw2"] for r in rows
                if r["divergence"] == label and r["ok"]]
        means[label] = float(np.mean(vals)) if vals else float("nan")
    order = sorted(base.sweep_divergences,
                   key=lambda lab: (np.isnan(means[lab]), means[lab]))

    lines = ["divergence,seed,status,final_sw2,config_mean_sw2"]
    for label in order:
        for row in rows:
            if row["divergence"] != label:
                continue
            lines.append(",".join([
                label, str(row["seed"]), "ok" if row["ok"] else "failed",
                repr(row["final_sw2"]), repr(means[label])]))
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n")
    print(f"sweep summary: {out_dir / 'summary.csv'}")
    return 0


def cmd_eval(args) -> int:
    if args.samples <= 0:
        raise _UsageError("--samples must be positive")
    cfg = _experiment(args)
    try:
        gen, meta = load_generator(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load checkpoint {args.checkpoint}: {exc}", file=sys.stderr)
        return FAIL_EXIT

    teacher = cfg.teacher()
    if teacher.dim != gen.dim:
        print(f"checkpoint dimension {gen.dim} does not match teacher "
              f"dimension {teacher.dim}", file=sys.stderr)
        return FAIL_EXIT
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng([cfg.seed, 104_729])
    student = gen.apply(rng.standard_normal((args.samples, gen.dim)))
    ref = gm_sample(teacher, rng, args.samples)
    save_sample_set(out_dir / "samples.csv", as_sample_set(student, "student"))

    a, b = as_sample_set(student, "student"), as_sample_set(ref, "teacher")
    report = {
        "checkpoint": str(args.checkpoint),
        "samples": int(args.samples),
        "seed": int(cfg.seed),
        "sw2": float(sliced_wasserstein2(a, b)),
        "mmd": float(mmd_rbf(a, b)),
        "mode_coverage": [float(v) for v in mode_coverage(a, teacher)],
        "checkpoint_meta": {k: meta[k] for k in sorted(meta) if k != "role"},
    }
    (out_dir / "eval_report.json").write_text(
        json.dumps(report, sort_keys=True, indent=1) + "\n")
    for key in ("sw2", "mmd", "mode_coverage"):
        print(f"{key}: {report[key]}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT

    handlers = {"verify": cmd_verify, "train": cmd_train,
                "sweep": cmd_sweep, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (NumericError, CoverageError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return FAIL_EXIT


if __name__ == "__main__":
    sys.exit(main())
