"""Experiment configuration: a flat dotted-key text format, typed
validation against a complete default table, a canonical content hash,
and the run manifest written next to every experiment's artifacts.

Format: one ``key = value`` per line; blank lines and ``#`` comments are
ignored.  Every key must appear in the default table — unknown keys are
rejected outright rather than silently ignored.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .analytic import GaussianMixture, gaussian, two_mode_teacher
from .bregman import parse_instance
from .diffusion import Schedule
from .distill import DistillConfig

VERSION = "0.1.0"

# The complete key table with default values (as canonical strings).
DEFAULTS: dict = {
    "divergence.name": "kl",
    "divergence.lambda": "0.0",
    "schedule.kind": "ve",
    "schedule.t_min": "0.01",
    "schedule.t_max": "3.0",
    "schedule.beta_min": "0.1",
    "schedule.beta_max": "20.0",
    "schedule.time_law": "log-uniform",
    "teacher.name": "two-mode",
    "teacher.weights": "1.0",
    "teacher.means": "0.0",
    "teacher.covs": "1.0",
    "generator.kind": "mlp",
    "generator.hidden": "64,64",
    "train.rounds": "2000",
    "train.batch": "256",
    "train.update_ratio": "3,2,1",
    "train.gen_lr": "0.001",
    "train.score_lr": "0.001",
    "train.clf_lr": "0.001",
    "train.time_weighting": "sigma2_alpha",
    "train.ratio_source": "classifier",
    "train.student_score": "learned",
    "train.normalize": "false",
    "train.seed": "0",
    "metrics.every": "100",
    "metrics.samples": "2048",
    "sweep.divergences": "kl,sba(-1),sba(0.5),sba(3),sba(5),sba(10)",
    "sweep.seeds": "0,1,2",
    "out.dir": "runs",
}

_INT_KEYS = {"train.rounds", "train.batch", "train.seed", "metrics.every",
             "metrics.samples"}
_FLOAT_KEYS = {"divergence.lambda", "schedule.t_min", "schedule.t_max",
               "schedule.beta_min", "schedule.beta_max", "train.gen_lr",
               "train.score_lr", "train.clf_lr"}
_BOOL_KEYS = {"train.normalize"}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a raw string mapping."""
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"config line {ln}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in DEFAULTS:
            raise ValueError(f"config line {ln}: unknown key {key!r}")
        if key in out:
            raise ValueError(f"config line {ln}: duplicate key {key!r}")
        out[key] = value
    return out


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply repeatable KEY=VALUE overrides on top of a raw mapping."""
    out = dict(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override must be KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return value
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {value!r}") from None


def _canonical(key: str, value: str) -> str:
    parsed = _coerce(key, value)
    if isinstance(parsed, bool):
        return "true" if parsed else "false"
    if isinstance(parsed, float):
        return repr(parsed)
    return str(parsed)


def config_hash(raw: dict) -> str:
    """sha256 over sorted canonical entries; invariant to key order and
    value formatting."""
    merged = dict(DEFAULTS)
    merged.update(raw)
    payload = "".join(f"{k} = {_canonical(k, merged[k])}\n" for k in sorted(merged))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def config_text(raw: dict) -> str:
    """Fully resolved canonical config document (defaults included)."""
    merged = dict(DEFAULTS)
    merged.update(raw)
    return "".join(f"{k} = {_canonical(k, merged[k])}\n" for k in sorted(merged))


def _floats(value: str, sep: str = ",") -> list:
    return [float(part) for part in value.split(sep) if part.strip() != ""]


def _ints(value: str) -> tuple:
    return tuple(int(part) for part in value.split(",") if part.strip() != "")


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed view of a fully merged raw config mapping."""

    raw: dict = field(repr=False)
    divergence: str = "kl"
    seed: int = 0
    rounds: int = 2000
    record_every: int = 100
    metric_samples: int = 2048
    out_dir: str = "runs"
    sweep_divergences: tuple = ()
    sweep_seeds: tuple = ()

    def schedule(self) -> Schedule:
        g = self.raw.__getitem__
        return Schedule(kind=g("schedule.kind"),
                        t_min=float(g("schedule.t_min")),
                        t_max=float(g("schedule.t_max")),
                        beta_min=float(g("schedule.beta_min")),
                        beta_max=float(g("schedule.beta_max")),
                        time_law=g("schedule.time_law"))

    def teacher(self) -> GaussianMixture:
        name = self.raw["teacher.name"]
        if name == "two-mode":
            return two_mode_teacher()
        if name == "gaussian":
            means = _floats(self.raw["teacher.means"])
            covs = _floats(self.raw["teacher.covs"])
            d = len(means)
            return gaussian(np.array(means), np.array(covs).reshape(d, d))
        if name == "custom":
            weights = np.array(_floats(self.raw["teacher.weights"]))
            rows = [r for r in self.raw["teacher.means"].split(";") if r.strip()]
            means = np.array([_floats(r) for r in rows])
            d = means.shape[1]
            crows = [r for r in self.raw["teacher.covs"].split(";") if r.strip()]
            covs = np.array([np.array(_floats(r)).reshape(d, d) for r in crows])
            return GaussianMixture(weights=weights, means=means, covs=covs)
        raise ValueError(f"unknown teacher {name!r}")

    def distill_config(self) -> DistillConfig:
        return DistillConfig(
            divergence=self.divergence,
            sched=self.schedule(),
            generator=self.raw["generator.kind"],
            gen_hidden=_ints(self.raw["generator.hidden"]),
            time_weighting=self.raw["train.time_weighting"],
            batch=int(self.raw["train.batch"]),
            update_ratio=_ints(self.raw["train.update_ratio"]),
            rounds=self.rounds,
            gen_lr=float(self.raw["train.gen_lr"]),
            score_lr=float(self.raw["train.score_lr"]),
            clf_lr=float(self.raw["train.clf_lr"]),
            ratio_source=self.raw["train.ratio_source"],
            student_score=self.raw["train.student_score"],
            normalize=_coerce("train.normalize", self.raw["train.normalize"]),
            seed=self.seed)

    def hash(self) -> str:
        return config_hash(self.raw)


def _divergence_label(raw: dict) -> str:
    name = raw["divergence.name"]
    if "(" in name or name != "sba":
        return name
    return f"sba({float(raw['divergence.lambda']):g})"


def build_config(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping (defaults merged in) into a typed config.

    All keys are type-checked here, and the divergence label, schedule,
    teacher, and training block are constructed once to surface errors
    before any compute starts.
    """
    merged = dict(DEFAULTS)
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = value
    for key in merged:
        _coerce(key, merged[key])

    label = _divergence_label(merged)
    parse_instance(label)
    sweep_divs = tuple(part.strip() for part in
                       merged["sweep.divergences"].split(",") if part.strip())
    cfg = ExperimentConfig(
        raw=merged,
        divergence=label,
        seed=int(merged["train.seed"]),
        rounds=int(merged["train.rounds"]),
        record_every=int(merged["metrics.every"]),
        metric_samples=int(merged["metrics.samples"]),
        out_dir=merged["out.dir"],
        sweep_divergences=sweep_divs,
        sweep_seeds=_ints(merged["sweep.seeds"]))
    cfg.schedule()
    cfg.teacher()
    cfg.distill_config()
    if cfg.record_every <= 0 or cfg.metric_samples <= 0:
        raise ValueError("metrics.every and metrics.samples must be positive")
    return cfg


def load_config(path=None, overrides=()) -> ExperimentConfig:
    raw = parse_config_text(Path(path).read_text()) if path is not None else {}
    return build_config(apply_overrides(raw, overrides))


# -- run manifest -------------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    version: str = VERSION
    started: Optional[str] = None
    finished: Optional[str] = None
    artifacts: list = field(default_factory=list)
    status: str = "running"
    failed_round: Optional[int] = None
    error: Optional[str] = None

    def start(self) -> "RunManifest":
        self.started = datetime.now(timezone.utc).isoformat()
        return self


def write_manifest(path, manifest: RunManifest, finalize: bool = True) -> None:
    """Serialize the manifest; at finalize time every artifact must exist."""
    path = Path(path)
    if finalize:
        manifest.finished = datetime.now(timezone.utc).isoformat()
        for art in manifest.artifacts:
            if not Path(art).exists():
                raise FileNotFoundError(f"manifest artifact missing: {art}")
    doc = {"config_hash": manifest.config_hash, "version": manifest.version,
           "started": manifest.started, "finished": manifest.finished,
           "artifacts": [str(a) for a in manifest.artifacts],
           "status": manifest.status, "failed_round": manifest.failed_round,
           "error": manifest.error}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
