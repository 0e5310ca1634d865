"""Experiment configuration, repetition fan-out, aggregation and artifact IO."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import platform
import subprocess
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from . import __version__, engine, objectives, oracle
from .errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "AESBO_"
SEED_STRIDE = 2**32


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment subcommand needs; serialized as flat JSON.

    Keys prefixed ``landscape_`` and ``oracle_`` only affect the matching
    subcommands.
    """

    objective: str = "synthetic4d"
    methods: tuple = ("random", "jes", "ensemble")
    reps: int = 100
    budget: int = 100
    n_initial: int = 25
    noise_variance: float = 0.0
    num_samples: int = 32
    sample_counts: tuple = (1, 8, 32)
    num_features: int = 1024
    restarts: int = 1
    raw_candidates: int = 200
    fit_restarts: int = 5
    full_refit_every: int = 1
    seed: int = 0
    workers: int = 1
    out: str = "results"
    plots: bool = True
    landscape_low: float = -5.0
    landscape_high: float = 5.0
    landscape_n_train: int = 8
    landscape_lengthscale: float = 1.0
    landscape_grid_size: int = 1000
    oracle_alphas: tuple = (0.2, 0.5, 0.8)
    oracle_solution_samples: int = 500
    oracle_function_draws: int = 20000
    oracle_grid_size: int = 200
    oracle_tol_x: float = 0.02
    oracle_tol_y: float = 0.05

    def validate(self) -> "ExperimentConfig":
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        if not self.sample_counts or min(self.sample_counts) < 1:
            raise ConfigError("sample_counts must be positive")
        for m in self.methods:
            engine.parse_method(m)
        for s in self.sample_counts:
            self.bo_config("ensemble", 0, num_samples=s).validate()
        try:
            objectives.check_objective_name(self.objective)
            self.oracle_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.landscape_low < self.landscape_high or self.landscape_n_train < 1 or self.landscape_grid_size < 3:
            raise ConfigError("landscape settings need low < high, n_train >= 1 and grid_size >= 3")
        if self.landscape_lengthscale <= 0:
            raise ConfigError("landscape_lengthscale must be positive")
        return self

    def bo_config(self, method: str, seed: int, num_samples: Optional[int] = None) -> engine.BoConfig:
        return engine.BoConfig(
            method=method, budget=self.budget, n_initial=self.n_initial,
            num_samples=self.num_samples if num_samples is None else num_samples,
            num_features=self.num_features, noise_variance=self.noise_variance,
            fit_restarts=self.fit_restarts, full_refit_every=self.full_refit_every,
            raw_candidates=self.raw_candidates, restarts=self.restarts, seed=seed,
        )

    def landscape_setup(self) -> oracle.LandscapeSetup:
        return oracle.LandscapeSetup(
            low=self.landscape_low, high=self.landscape_high, n_train=self.landscape_n_train,
            lengthscale=self.landscape_lengthscale, noise_variance=self.noise_variance,
            num_samples=self.num_samples, num_features=self.num_features,
            grid_size=self.landscape_grid_size, raw_candidates=self.raw_candidates, restarts=self.restarts,
        )

    def oracle_config(self) -> oracle.OracleConfig:
        return oracle.OracleConfig(
            num_solution_samples=self.oracle_solution_samples, num_function_draws=self.oracle_function_draws,
            grid_size=self.oracle_grid_size, tol_x=self.oracle_tol_x, tol_y=self.oracle_tol_y, seed=self.seed,
        )

    def rep_seed(self, rep: int) -> int:
        return self.seed + rep * SEED_STRIDE

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}


def _coerce(name: str, kind, value):
    """Convert a JSON or environment value to the declared field type."""
    try:
        if kind is tuple:
            if isinstance(value, str):
                value = json.loads(value) if value.strip().startswith("[") else value.split(",")
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(v.strip() if isinstance(v, str) else v for v in value)
        if kind is bool:
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError
                return low in ("1", "true", "yes")
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if not isinstance(value, str):
            raise TypeError
        return value
    except (TypeError, ValueError, json.JSONDecodeError):
        raise ConfigError(f"invalid value for {name!r}: {value!r}") from None


_FIELD_TYPES = {
    f.name: {"tuple": tuple, "int": int, "float": float, "bool": bool, "str": str}[str(f.type)]
    for f in dataclasses.fields(ExperimentConfig)
}
_NUMERIC_TUPLES = {"sample_counts": int, "oracle_alphas": float}


def resolve_config(path: Optional[str] = None, env: Optional[dict] = None, **overrides) -> ExperimentConfig:
    """Defaults, then the JSON file, then ``AESBO_<KEY>`` variables, then ``overrides``."""
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(raw) - set(_FIELD_TYPES))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        values.update(raw)
    for name in _FIELD_TYPES:
        key = ENV_PREFIX + name.upper()
        if key in env:
            values[name] = env[key]
    values.update({k: v for k, v in overrides.items() if v is not None})
    typed = {}
    for name, value in values.items():
        typed[name] = _coerce(name, _FIELD_TYPES[name], value)
        if name in _NUMERIC_TUPLES:
            typed[name] = tuple(_coerce(name, _NUMERIC_TUPLES[name], v) for v in typed[name])
    return ExperimentConfig(**typed).validate()


# ---------------------------------------------------------------------------
# running


@lru_cache(maxsize=8)
def _objective(name: str, seed: int) -> objectives.Objective:
    return objectives.get_objective(name, seed)


def objective_seed(cfg: ExperimentConfig, rep: int) -> int:
    """Synthetic objectives are redrawn for every repetition; benchmarks are fixed."""
    return cfg.rep_seed(rep)


def _run_task(task):
    name, obj_seed, bo = task
    obj = _objective(name, obj_seed)
    noise_seed = int(np.random.SeedSequence([bo.seed, 1]).generate_state(1)[0])
    return engine.run(objectives.NoisyObjective(obj, bo.noise_variance, noise_seed), bo)


@contextmanager
def _mapper(workers: int):
    if workers <= 1:
        yield map
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield pool.map


def run_experiment(cfg: ExperimentConfig, sample_counts: Optional[Iterable[int]] = None) -> list:
    """All (method, S, rep) runs in a fixed order.  Returns ``[(method, S, rep, RunRecord)]``."""
    keys, tasks = [], []
    counts = [None] if sample_counts is None else list(sample_counts)
    for method in cfg.methods:
        for S in counts:
            for rep in range(cfg.reps):
                bo = cfg.bo_config(method, cfg.rep_seed(rep), S)
                keys.append((method, bo.num_samples, rep))
                tasks.append((cfg.objective, objective_seed(cfg, rep), bo))
    with _mapper(cfg.workers) as mapper:
        records = list(mapper(_run_task, tasks))
    return [(*k, r) for k, r in zip(keys, records)]


# ---------------------------------------------------------------------------
# aggregation


AGGREGATE_FIELDS = ("method", "num_samples", "iteration", "mean_regret", "stderr", "reps")
FINAL_FIELDS = ("method", "num_samples", "rep", "final_regret", "failed")


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(results) -> list[dict]:
    """Per-iteration mean regret and standard error for each (method, S).

    Failed runs contribute the iterations they completed.
    """
    groups: dict = {}
    for method, S, _, rec in results:
        groups.setdefault((method, S), []).append(rec.regrets)
    rows = []
    for (method, S), curves in groups.items():
        T = max((len(c) for c in curves), default=0)
        for t in range(T):
            vals = [c[t] for c in curves if len(c) > t]
            m, se = mean_stderr(vals)
            rows.append({"method": method, "num_samples": S, "iteration": t,
                         "mean_regret": m, "stderr": se, "reps": len(vals)})
    return rows


def final_rows(results) -> list[dict]:
    return [
        {"method": m, "num_samples": S, "rep": rep,
         "final_regret": float(rec.regrets[-1]) if len(rec) else math.nan, "failed": rec.failed}
        for m, S, rep, rec in results
    ]


def final_summary(results) -> dict:
    """``{(method, S): (mean, stderr)}`` of the last-iteration regret."""
    groups: dict = {}
    for m, S, _, rec in results:
        if len(rec):
            groups.setdefault((m, S), []).append(rec.regrets[-1])
    return {k: mean_stderr(v) for k, v in groups.items()}


def intervals_overlap(a: tuple, b: tuple, k: float = 2.0) -> bool:
    """Whether ``mean ± k * stderr`` intervals of two ``(mean, stderr)`` pairs intersect."""
    return a[0] - k * a[1] <= b[0] + k * b[1] and b[0] - k * b[1] <= a[0] + k * a[1]


# ---------------------------------------------------------------------------
# IO


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path, fields, rows) -> None:
    """CSV with a fixed header; floats written with ``repr`` so they round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row[f]) for f in fields])


def _parse_cell(text: str):
    if text in ("true", "false"):
        return text == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_table(path, expected_fields=None) -> list[dict]:
    """Read a table written by :func:`write_table`, converting numbers and booleans."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if expected_fields is not None and tuple(header) != tuple(expected_fields):
            raise ValueError(f"unexpected header {header}")
        return [dict(zip(header, map(_parse_cell, row))) for row in r]


def git_revision(cwd=None) -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=cwd or Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, status: str, artifacts, extra=None) -> None:
    manifest = {
        "command": command,
        "status": status,
        "config": cfg.to_dict(),
        "git_revision": git_revision(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "package_version": __version__,
        "artifacts": sorted(artifacts),
    }
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_runs(out: Path, results) -> list[str]:
    with open(out / "runs.jsonl", "w") as fh:
        for m, S, rep, rec in results:
            for line in rec.to_jsonl().splitlines():
                fh.write(json.dumps({"num_samples": S, "rep": rep, **json.loads(line)}) + "\n")
    rows = []
    for m, S, rep, rec in results:
        for row in rec.csv_rows():
            rows.append({"num_samples": S, "rep": rep, **row})
    write_table(out / "runs.csv", ("num_samples", "rep") + engine.RunRecord.CSV_FIELDS, rows)
    return ["runs.jsonl", "runs.csv"]


def landscape_rows(summary: oracle.LandscapeSummary) -> list[dict]:
    rows = []
    for method, counts in summary.counts.items():
        rows += [{"method": method, "rep": r, "count": int(c)} for r, c in enumerate(counts)]
    return rows


def run_landscape(cfg: ExperimentConfig) -> oracle.LandscapeSummary:
    with _mapper(cfg.workers) as mapper:
        return oracle.landscape_experiment(cfg.landscape_setup(), cfg.reps, cfg.seed, mapper)

