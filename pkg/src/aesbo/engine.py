"""The Bayesian-optimization loop, recommendations and regret."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import acquisition as acq
from . import gp, sampling
from .alpha import ALPHA_MAX, ALPHA_MIN
from .errors import ConfigError, InvalidArgumentError
from .objectives import NoisyObjective, Objective

logger = logging.getLogger(__name__)

REGRET_FLOOR = 1e-12
METHODS = ("random", "jes", "mes", "ensemble")


def parse_method(method: str):
    """``'aes:0.3'`` -> ``('aes', 0.3)``; other names -> ``(name, None)``."""
    if method.startswith("aes:"):
        try:
            alpha = float(method[4:])
        except ValueError:
            raise ConfigError(f"bad alpha in method {method!r}") from None
        if not ALPHA_MIN <= alpha <= ALPHA_MAX:
            raise ConfigError(f"alpha out of range in {method!r}")
        return "aes", alpha
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS} or 'aes:<alpha>'")
    return method, None


@dataclass(frozen=True)
class BoConfig:
    """One optimization run.

    ``noise_variance=0`` declares the objective noiseless.  The GP noise is
    fitted unless ``fit_noise`` is false, in which case it is fixed to
    ``max(noise_variance, 1e-6)``.  ``fit_restarts`` random restarts are used
    on the first fit and every ``full_refit_every`` iterations; the other
    iterations refit from the previous optimum only.
    """

    method: str = "ensemble"
    budget: int = 100
    n_initial: int = 25
    num_samples: int = 32
    num_features: int = sampling.DEFAULT_NUM_FEATURES
    noise_variance: float = 0.0
    fit_noise: bool = True
    fit_restarts: int = 5
    full_refit_every: int = 1
    raw_candidates: int = 200
    restarts: int = 1
    alphas: tuple = acq.DEFAULT_ALPHAS
    seed: int = 0

    def validate(self) -> "BoConfig":
        parse_method(self.method)
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.n_initial < 1:
            raise ConfigError("n_initial must be >= 1")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.num_features < 1 or self.raw_candidates < 1 or self.restarts < 1:
            raise ConfigError("num_features, raw_candidates and restarts must be >= 1")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be non-negative")
        if self.fit_restarts < 0 or self.full_refit_every < 1:
            raise ConfigError("fit_restarts must be >= 0 and full_refit_every >= 1")
        return self

    @property
    def noiseless(self) -> bool:
        return self.noise_variance == 0

    @property
    def optimizer(self) -> acq.AcqOptimizerConfig:
        return acq.AcqOptimizerConfig(raw_candidates=self.raw_candidates, restarts=self.restarts)


@dataclass
class IterationRecord:
    iteration: int
    x: list
    y: float
    x_rec: list
    f_rec: float
    regret: float
    seconds: float


@dataclass
class RunRecord:
    method: str
    seed: int
    objective: str
    iterations: list = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None

    def __len__(self):
        return len(self.iterations)

    @property
    def regrets(self) -> np.ndarray:
        return np.array([it.regret for it in self.iterations])

    def to_jsonl(self) -> str:
        head = {"method": self.method, "seed": self.seed, "objective": self.objective, "failed": self.failed}
        lines = [json.dumps({**head, **asdict(it)}) for it in self.iterations]
        if self.failed:
            lines.append(json.dumps({**head, "error": self.error}))
        return "\n".join(lines) + ("\n" if lines else "")

    # Wall-clock time stays in the JSONL only so that reruns give identical CSVs.
    CSV_FIELDS = ("method", "seed", "objective", "iteration", "y", "f_rec", "regret", "x", "x_rec")

    def csv_rows(self):
        for it in self.iterations:
            yield {
                "method": self.method, "seed": self.seed, "objective": self.objective,
                "iteration": it.iteration, "y": repr(it.y), "f_rec": repr(it.f_rec),
                "regret": repr(it.regret),
                "x": " ".join(repr(v) for v in it.x), "x_rec": " ".join(repr(v) for v in it.x_rec),
            }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.csv_rows())
        return buf.getvalue()


def regret(obj: Objective, x_rec) -> float:
    """``log10`` of the optimality gap relative to ``|f_opt|``, both floored at 1e-12."""
    if obj.known_max is None:
        raise ConfigError(f"objective {obj.name!r} has no known maximum")
    f_opt = obj.known_max[1]
    gap = max(f_opt - obj(x_rec), REGRET_FLOOR)
    return math.log10(gap / max(abs(f_opt), REGRET_FLOOR))


def recommend(model: Optional[gp.GpModel], data: gp.Dataset, noiseless: bool) -> np.ndarray:
    """Best observation (noiseless) or the observed input with the best predictive mean."""
    if len(data) == 0:
        raise InvalidArgumentError("cannot recommend without data")
    if noiseless or model is None or len(data) == 1:
        return data.inputs[int(np.argmax(data.outputs))].copy()
    mean = gp.predict(model, data.inputs).mean
    return data.inputs[int(np.argmax(mean))].copy()


def _seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def select_next(model: gp.GpModel, cfg: BoConfig, seed_seq: np.random.SeedSequence) -> np.ndarray:
    """One acquisition step: sample optima, build the criterion and maximize it."""
    kind, alpha = parse_method(cfg.method)
    bounds = model.data.bounds
    sample_ss, prep_ss, opt_ss = seed_seq.spawn(3)
    if kind == "random":
        return acq.random_acquisition(bounds, _seed(opt_ss))
    samples = sampling.draw_optimum_set(model, cfg.num_samples, cfg.num_features, _seed(sample_ss))
    nv = acq.NOISELESS_VARIANCE if cfg.noiseless else None
    ctx = acq.build_context(model, samples, nv, conditioned=kind != "mes")
    if kind == "jes":
        fn = lambda X: acq.jes_values(ctx, X)  # noqa: E731
    elif kind == "mes":
        fn = lambda X: acq.mes_values(ctx, X)  # noqa: E731
    elif kind == "aes":
        fn = lambda X: acq.aes_values(ctx, X, [alpha])[:, 0]  # noqa: E731
    else:
        spec = acq.ensemble_prepare(ctx, cfg.alphas, cfg.optimizer, _seed(prep_ss))
        fn = lambda X: acq.ensemble_values(spec, ctx, X)  # noqa: E731
    x, _ = acq.optimize_acquisition(fn, bounds, cfg.optimizer, _seed(opt_ss))
    return x


def run(obj: NoisyObjective, cfg: BoConfig) -> RunRecord:
    """Run ``cfg.budget`` iterations after ``cfg.n_initial`` random evaluations.

    Errors inside the loop stop the run and return the partial record with
    ``failed`` set.
    """
    cfg.validate()
    base = obj.base
    if base.known_max is None:
        raise ConfigError(f"objective {base.name!r} has no known maximum")
    record = RunRecord(cfg.method, cfg.seed, base.name)
    init_ss, fit_ss, iter_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    fit_seeds = np.random.default_rng(fit_ss)
    kind, _ = parse_method(cfg.method)
    fixed_noise = None if cfg.fit_noise else max(cfg.noise_variance, 1e-6)

    data = gp.Dataset.empty(base.bounds)
    try:
        for _ in range(cfg.n_initial):
            x = init_rng.uniform(base.bounds[:, 0], base.bounds[:, 1])
            data = data.append(x, obj.observe(x))
        model = None
        hp = None
        for t, ss in enumerate(iter_ss.spawn(cfg.budget)):
            start = time.perf_counter()
            need_model = kind != "random" or not cfg.noiseless
            if need_model:
                full = hp is None or t % cfg.full_refit_every == 0
                model = gp.fit(data, gp.FitConfig(
                    restarts=cfg.fit_restarts if full else 0,
                    seed=int(fit_seeds.integers(2**63)),
                    noise_variance=fixed_noise,
                    warm_start=hp,
                ))
                hp = model.hyperparams
            x = select_next(model, cfg, ss) if kind != "random" else acq.random_acquisition(base.bounds, _seed(ss))
            y = obj.observe(x)
            data = data.append(x, y)
            if not cfg.noiseless:
                model = gp.build_model(data, hp) if hp is not None else None
            x_rec = recommend(model, data, cfg.noiseless)
            record.iterations.append(IterationRecord(
                t, x.tolist(), float(y), x_rec.tolist(), float(base(x_rec)), regret(base, x_rec),
                time.perf_counter() - start,
            ))
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        logger.error("run %s seed %d failed at iteration %d: %s", cfg.method, cfg.seed, len(record), exc)
        record.failed = True
        record.error = f"{type(exc).__name__}: {exc}"
    return record
