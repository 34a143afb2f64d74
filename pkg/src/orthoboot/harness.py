"""Replication engine: simulate, fit nuisances, sample the posterior, aggregate.

Replicate ``r`` of an experiment draws all of its randomness from keys
derived from ``(master_seed, r)``, so reports are identical whatever the
execution order or the number of worker processes.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dgp
from . import rng as rngmod
from .errors import ExperimentError, InvalidArgumentError, OrthobootError, ReportIOError
from .nuisance import (
    ClampSpec,
    ForestConfig,
    NuisanceFit,
    ShiftedInputPredictor,
    clamp_propensity,
    fit_forest,
    fit_kernel,
)
from .posterior import sample_posterior, summarize
from .scores import get_score

DGPS = ("plm", "kernel_model")
LEARNERS = ("forest", "kernel", "truth")

DESK_REPLICATES, DESK_BOOTSTRAP = 200, 500
FULL_REPLICATES, FULL_BOOTSTRAP = 1000, 1000


@dataclass(frozen=True)
class ExperimentConfig:
    dgp: str = "plm"
    q: int = 5
    score: str = "partialled_out"
    learner: str = "forest"
    forest: ForestConfig = field(default_factory=ForestConfig)
    bandwidth: float | str = "auto"
    n: int = 500
    replicates: int = DESK_REPLICATES
    bootstrap: int = DESK_BOOTSTRAP
    level: float = 0.95
    master_seed: int = 0
    scheme: str = "dirichlet"
    clamp_epsilon: float = 0.01
    theta0: float = 3.0
    output_path: str | None = None

    def __post_init__(self):
        if self.dgp not in DGPS:
            raise InvalidArgumentError(f"dgp must be one of {DGPS}")
        if self.learner not in LEARNERS:
            raise InvalidArgumentError(f"learner must be one of {LEARNERS}")
        get_score(self.score)
        if self.learner == "kernel" and self.dgp != "kernel_model":
            raise InvalidArgumentError("the kernel learner is univariate and only pairs with kernel_model")
        if self.score == "aipw" and self.dgp != "plm":
            raise InvalidArgumentError("the AIPW score needs the binary-treatment plm design")
        if self.dgp == "plm" and self.q < 5:
            raise InvalidArgumentError("the plm design needs q >= 5")
        if self.dgp == "kernel_model" and self.theta0 != dgp.KERNEL_THETA0:
            raise InvalidArgumentError("kernel_model fixes theta0 = 3")
        if self.n < 2:
            raise InvalidArgumentError("n must be at least 2")
        if self.replicates < 1:
            raise InvalidArgumentError("replicates must be at least 1")
        if self.bootstrap < 2:
            raise InvalidArgumentError("bootstrap must be at least 2 (posterior variance)")
        if not 0.0 < self.level < 1.0:
            raise InvalidArgumentError("level must lie in (0, 1)")
        if self.master_seed < 0:
            raise InvalidArgumentError("master_seed must be non-negative")
        ClampSpec(self.clamp_epsilon)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    theta_hat: float
    post_mean: float
    post_var: float
    sandwich: float
    cred_lo: float
    cred_hi: float
    freq_lo: float
    freq_hi: float
    covers: bool
    freq_covers: bool
    rejected: int


@dataclass(frozen=True)
class AggregateReport:
    dgp: str
    q: int
    score: str
    learner: str
    n: int
    replicates: int
    bootstrap: int
    level: float
    master_seed: int
    theta0: float
    avg_post_mean: float
    emp_freq_mean: float
    avg_post_var_times_n: float
    emp_freq_var_times_n: float
    avg_sandwich_times_n: float
    avg_cred_interval: tuple[float, float]
    freq_interval: tuple[float, float]
    coverage_pct: float
    freq_coverage_pct: float
    rejected_draw_total: int

    @property
    def bias(self) -> float:
        return self.avg_post_mean - self.theta0


# --------------------------------------------------------------------------
# one replicate


def _forest_cfg(cfg: ExperimentConfig, r: int, component: int) -> ForestConfig:
    seed = rngmod.derive_key(cfg.master_seed, r, rngmod.LANE_NUISANCE, component) >> 65
    return dataclasses.replace(cfg.forest, seed=int(seed))


def simulate(cfg: ExperimentConfig, r: int) -> dgp.Dataset:
    g = rngmod.stream(rngmod.derive_key(cfg.master_seed, r), rngmod.LANE_DATA)
    if cfg.dgp == "plm":
        return dgp.simulate_plm(dgp.PlmConfig(cfg.n, cfg.q, cfg.theta0), g)
    return dgp.simulate_kernel_model(cfg.n, g)


def fit_nuisance(cfg: ExperimentConfig, data: dgp.Dataset, r: int = 0) -> NuisanceFit:
    """Plug-in nuisance for the configured score, fitted once on ``data``."""
    if cfg.learner == "truth":
        if cfg.dgp == "plm":
            return dgp.plm_truth_nuisance(cfg.theta0)
        return dgp.kernel_truth_nuisance(cfg.theta0)

    binary = cfg.dgp == "plm"
    clamp = ClampSpec(cfg.clamp_epsilon)
    if cfg.learner == "kernel":
        k_y = fit_kernel(data.x, data.y, cfg.bandwidth)
        e = fit_kernel(data.x, data.z, cfg.bandwidth)
        return NuisanceFit({"k_y": k_y, "e": clamp_propensity(e, clamp) if binary else e})

    e = fit_forest(data.x, data.z, _forest_cfg(cfg, r, 0))
    if binary:
        e = clamp_propensity(e, clamp)
    if cfg.score == "aipw":
        # one joint forest for mu(z, x), read off at z = 1 and z = 0
        mu = fit_forest(np.column_stack([data.z, data.x]), data.y, _forest_cfg(cfg, r, 1))
        return NuisanceFit({"mu1": ShiftedInputPredictor(mu, 1.0),
                            "mu0": ShiftedInputPredictor(mu, 0.0), "e": e})
    k_y = fit_forest(data.x, data.y, _forest_cfg(cfg, r, 1))
    return NuisanceFit({"k_y": k_y, "e": e})


def run_replicate(cfg: ExperimentConfig, r: int) -> ReplicateResult:
    data = simulate(cfg, r)
    h = fit_nuisance(cfg, data, r)
    score = get_score(cfg.score)
    post_seed = rngmod.derive_key(cfg.master_seed, r, rngmod.LANE_WEIGHTS)
    sample = sample_posterior(data, score, h, cfg.bootstrap, cfg.scheme, post_seed)
    s = summarize(sample, cfg.level, cfg.theta0)
    return ReplicateResult(
        index=r,
        theta_hat=sample.theta_hat_n,
        post_mean=s.post_mean,
        post_var=s.post_var,
        sandwich=sample.sandwich,
        cred_lo=s.cred_lo,
        cred_hi=s.cred_hi,
        freq_lo=s.freq_lo,
        freq_hi=s.freq_hi,
        covers=bool(s.covers_true),
        freq_covers=bool(s.freq_lo <= cfg.theta0 <= s.freq_hi),
        rejected=sample.rejected_draws,
    )


def _guarded_replicate(cfg: ExperimentConfig, r: int) -> ReplicateResult:
    try:
        return run_replicate(cfg, r)
    except OrthobootError as exc:
        raise ExperimentError(f"replicate {r} aborted: {exc}", replicate=r) from exc


# --------------------------------------------------------------------------
# aggregation


def aggregate(cfg: ExperimentConfig, results: Sequence[ReplicateResult]) -> AggregateReport:
    """Table-row summary over replicates; insensitive to the order of ``results``."""
    res = sorted(results, key=lambda x: x.index)
    col = lambda name: np.array([getattr(x, name) for x in res], dtype=float)  # noqa: E731
    th = col("theta_hat")
    n = cfg.n
    return AggregateReport(
        dgp=cfg.dgp,
        q=cfg.q if cfg.dgp == "plm" else 1,
        score=cfg.score,
        learner=cfg.learner,
        n=n,
        replicates=len(res),
        bootstrap=cfg.bootstrap,
        level=cfg.level,
        master_seed=cfg.master_seed,
        theta0=cfg.theta0,
        avg_post_mean=float(col("post_mean").mean()),
        emp_freq_mean=float(th.mean()),
        avg_post_var_times_n=float(n * col("post_var").mean()),
        emp_freq_var_times_n=float(n * th.var(ddof=1)) if th.size > 1 else math.nan,
        avg_sandwich_times_n=float(col("sandwich").mean()),
        avg_cred_interval=(float(col("cred_lo").mean()), float(col("cred_hi").mean())),
        freq_interval=(float(col("freq_lo").mean()), float(col("freq_hi").mean())),
        coverage_pct=float(100.0 * col("covers").mean()),
        freq_coverage_pct=float(100.0 * col("freq_covers").mean()),
        rejected_draw_total=int(sum(x.rejected for x in res)),
    )


def run_replicates(cfg: ExperimentConfig, workers: int = 1,
                   order: Sequence[int] | None = None) -> list[ReplicateResult]:
    order = list(range(cfg.replicates)) if order is None else list(order)
    if sorted(order) != list(range(cfg.replicates)):
        raise InvalidArgumentError("order must be a permutation of the replicate indices")
    if workers <= 1:
        return [_guarded_replicate(cfg, r) for r in order]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_guarded_replicate, [cfg] * len(order), order,
                             chunksize=max(1, len(order) // (4 * workers))))


def run_experiment(cfg: ExperimentConfig, workers: int = 1,
                   order: Sequence[int] | None = None) -> AggregateReport:
    return aggregate(cfg, run_replicates(cfg, workers, order))


@dataclass(frozen=True)
class SweepCell:
    q: int
    n: int
    report: AggregateReport


def cell_seed(master_seed: int, q: int, n: int) -> int:
    return int(rngmod.derive_key(master_seed, q, n) >> 65)


def run_dimension_sweep(base: ExperimentConfig, q_grid: Sequence[int], n_grid: Sequence[int],
                        workers: int = 1) -> list[SweepCell]:
    """Every (q, n) cell on the plm design, each with its own derived master seed."""
    if base.dgp != "plm":
        raise InvalidArgumentError("the dimension sweep runs on the plm design")
    cells = []
    for q in q_grid:
        for n in n_grid:
            cfg = base.replace(q=int(q), n=int(n), master_seed=cell_seed(base.master_seed, q, n))
            cells.append(SweepCell(int(q), int(n), run_experiment(cfg, workers)))
    return cells


# --------------------------------------------------------------------------
# config files


def load_config(path) -> ExperimentConfig:
    """Read an INI-style file with ``[experiment]`` and optional ``[forest]`` sections.

    Keys mirror :class:`ExperimentConfig` and :class:`ForestConfig`.
    """
    parser = configparser.ConfigParser()
    path = Path(path)
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ReportIOError(f"cannot read config {path}: {exc}", path) from exc
    except configparser.Error as exc:
        raise InvalidArgumentError(f"malformed config {path}: {exc}") from exc
    return config_from_mapping(
        dict(parser["experiment"]) if parser.has_section("experiment") else {},
        dict(parser["forest"]) if parser.has_section("forest") else {},
    )


_INT_KEYS = {"q", "n", "replicates", "bootstrap", "master_seed"}
_FLOAT_KEYS = {"level", "clamp_epsilon", "theta0"}
_STR_KEYS = {"dgp", "score", "learner", "scheme", "output_path"}


def config_from_mapping(exp: dict, forest: dict | None = None) -> ExperimentConfig:
    kwargs = {}
    try:
        for k, v in exp.items():
            if k in _INT_KEYS:
                kwargs[k] = int(v)
            elif k in _FLOAT_KEYS:
                kwargs[k] = float(v)
            elif k in _STR_KEYS:
                kwargs[k] = str(v).strip()
            elif k == "bandwidth":
                kwargs[k] = "auto" if str(v).strip() == "auto" else float(v)
            else:
                raise InvalidArgumentError(f"unknown experiment key {k!r}")
        fkw = {}
        for k, v in (forest or {}).items():
            if k in ("num_trees", "min_leaf", "seed"):
                fkw[k] = int(v)
            elif k == "subsample_exponent":
                fkw[k] = float(v)
            elif k == "max_features":
                v = str(v).strip()
                fkw[k] = None if v in ("", "default") else ("all" if v == "all" else int(v))
            else:
                raise InvalidArgumentError(f"unknown forest key {k!r}")
    except ValueError as exc:
        if isinstance(exc, InvalidArgumentError):
            raise
        raise InvalidArgumentError(f"bad config value: {exc}") from exc
    if fkw:
        kwargs["forest"] = ForestConfig(**fkw)
    return ExperimentConfig(**kwargs)


def config_to_ini(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]"]
    for f in dataclasses.fields(cfg):
        if f.name == "forest":
            continue
        v = getattr(cfg, f.name)
        if v is None:
            continue
        lines.append(f"{f.name} = {v}")
    lines.append("")
    lines.append("[forest]")
    for f in dataclasses.fields(cfg.forest):
        v = getattr(cfg.forest, f.name)
        lines.append(f"{f.name} = {'default' if v is None else v}")
    return "\n".join(lines) + "\n"
