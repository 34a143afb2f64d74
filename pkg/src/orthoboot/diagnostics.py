"""Neyman-orthogonality checks along Gateaux paths.

For a score ``m`` with truth ``(theta0, h0)`` and a competing nuisance ``h``
the path is ``f(t) = E m(O; theta0, h0 + t (h - h0))``. Orthogonality means
``f'(0) = 0``. ``f`` is evaluated either in closed form in ``t`` (with the
outer expectation over X taken on a large fixed covariate sample) or by
direct Monte Carlo over freshly simulated observations.

Closed forms on a model with ``E(Y|Z,X) = theta0 Z + g0(X)``, ``E(Z|X) = e0``,
``dk = k_y - k_y0``, ``de = e - e0``:

* partialled-out: ``f(t) = t^2 E[dk de - theta0 de^2]``
* AIPW, with ``e_t = e0 + t de``::

      f(t)   = t E[dmu1 - dmu0] - t E[e0 dmu1 / e_t] + t E[(1 - e0) dmu0 / (1 - e_t)]
      f'(t)  = E[dmu1 - dmu0] - E[e0^2 dmu1 / e_t^2] + E[(1 - e0)^2 dmu0 / (1 - e_t)^2]
      f''(t) = 2 E[e0^2 dmu1 de / e_t^3] + 2 E[(1 - e0)^2 dmu0 de / (1 - e_t)^3]

* naive residual score: ``f(t) = t E[e0 (theta0 de - dk)]``, linear in ``t``.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dgp
from . import rng as rngmod
from .errors import InvalidArgumentError, PositivityError, ReportIOError
from .nuisance import FunctionPredictor, NuisanceFit
from .posterior import sample_posterior, summarize
from .scores import Score, get_score

TRUTH_SAMPLE_SIZE = 10**6
FD_STEP = 1e-4
POSITIVITY_FLOOR = 1e-6
MC_CHUNK = 100_000
QUAD_POINTS = 64
CURVE_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


# --------------------------------------------------------------------------
# covariate samples and perturbed nuisances


@lru_cache(maxsize=4)
def truth_sample(model: str = "plm", q: int = 5, size: int = TRUTH_SAMPLE_SIZE, seed: int = 0) -> np.ndarray:
    """Fixed covariate sample for the outer expectation (cached per session)."""
    g = rngmod.stream(rngmod.derive_key(seed, size), rngmod.LANE_MISC)
    if model == "plm":
        X = dgp.sample_covariates(size, q, g)
    elif model == "kernel_model":
        X = g.standard_normal((size, 1))
    else:
        raise InvalidArgumentError(f"unknown model {model!r}")
    X.setflags(write=False)
    return X


def truth_nuisance(model: str = "plm", theta0: float = 3.0) -> NuisanceFit:
    if model == "plm":
        return dgp.plm_truth_nuisance(theta0)
    if model == "kernel_model":
        return dgp.kernel_truth_nuisance(theta0)
    raise InvalidArgumentError(f"unknown model {model!r}")


def shifted(h0: NuisanceFit, **deltas: float | Callable[[np.ndarray], np.ndarray]) -> NuisanceFit:
    """``h0`` with ``component += delta``; a delta is a constant or a function of X."""
    comps = dict(h0.components)
    for name, d in deltas.items():
        if name not in comps:
            raise InvalidArgumentError(f"no nuisance component {name!r}")
        base = comps[name]
        if callable(d):
            comps[name] = FunctionPredictor(lambda X, b=base, f=d: b.predict(X) + f(X), f"{name}+d")
        else:
            comps[name] = FunctionPredictor(lambda X, b=base, c=float(d): b.predict(X) + c, f"{name}+{d}")
    return NuisanceFit(comps)


def _diffs(h0: NuisanceFit, h: NuisanceFit, X, names) -> tuple[dict, dict]:
    if X is None:
        raise InvalidArgumentError("an X sample is required")
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise InvalidArgumentError("empty X sample")
    v0 = h0.predict(X, list(names))
    v1 = h.predict(X, list(names))
    return v0, {k: v1[k] - v0[k] for k in names}


# --------------------------------------------------------------------------
# closed forms


def plm_curvature(h0: NuisanceFit, h: NuisanceFit, X, theta0: float = 3.0) -> float:
    """``K = E[dk de - theta0 de^2]`` so that ``f(t) = K t^2``."""
    _, d = _diffs(h0, h, X, ("k_y", "e"))
    return float(np.mean(d["k_y"] * d["e"] - theta0 * d["e"] ** 2))


def f_analytic_plm(h0: NuisanceFit, h: NuisanceFit, t, X, theta0: float = 3.0):
    return plm_curvature(h0, h, X, theta0) * np.square(t)


def fpp_analytic_plm(h0: NuisanceFit, h: NuisanceFit, t, X, theta0: float = 3.0):
    return np.broadcast_to(2.0 * plm_curvature(h0, h, X, theta0), np.shape(t)) + 0.0


def _aipw_terms(h0, h, X, t):
    v0, d = _diffs(h0, h, X, ("mu1", "mu0", "e"))
    e0 = v0["e"]
    t = np.atleast_1d(np.asarray(t, dtype=float))
    et = e0[None, :] + t[:, None] * d["e"][None, :]
    if np.any(et < POSITIVITY_FLOOR) or np.any(1.0 - et < POSITIVITY_FLOOR):
        raise PositivityError("perturbed propensity leaves [1e-6, 1 - 1e-6] on the X sample")
    return v0, d, e0, t, et


def _shape_like(t, vals):
    return float(vals[0]) if np.ndim(t) == 0 else vals


def f_analytic_aipw(h0: NuisanceFit, h: NuisanceFit, t, X, theta0: float = 3.0):
    v0, d, e0, tt, et = _aipw_terms(h0, h, X, t)
    base = np.mean(v0["mu1"] - v0["mu0"]) - theta0
    dm1, dm0 = d["mu1"], d["mu0"]
    vals = (base + tt * np.mean(dm1 - dm0)
            - tt * np.mean(e0 * dm1 / et, axis=1)
            + tt * np.mean((1.0 - e0) * dm0 / (1.0 - et), axis=1))
    return _shape_like(t, vals)


def fp_analytic_aipw(h0: NuisanceFit, h: NuisanceFit, t, X, theta0: float = 3.0):
    _, d, e0, _, et = _aipw_terms(h0, h, X, t)
    dm1, dm0 = d["mu1"], d["mu0"]
    vals = (np.mean(dm1 - dm0)
            - np.mean(e0 ** 2 * dm1 / et ** 2, axis=1)
            + np.mean((1.0 - e0) ** 2 * dm0 / (1.0 - et) ** 2, axis=1))
    return _shape_like(t, vals)


def fpp_aipw_terms(h0: NuisanceFit, h: NuisanceFit, t, X) -> tuple[np.ndarray, np.ndarray]:
    """The two summands of ``f''(t)`` (mu1 term, mu0 term) separately."""
    _, d, e0, _, et = _aipw_terms(h0, h, X, t)
    first = 2.0 * np.mean(e0 ** 2 * d["mu1"] * d["e"] / et ** 3, axis=1)
    second = 2.0 * np.mean((1.0 - e0) ** 2 * d["mu0"] * d["e"] / (1.0 - et) ** 3, axis=1)
    return first, second


def fpp_analytic_aipw(h0: NuisanceFit, h: NuisanceFit, t, X, theta0: float = 3.0):
    a, b = fpp_aipw_terms(h0, h, t, X)
    return _shape_like(t, a + b)


def f_analytic_naive(h0: NuisanceFit, h: NuisanceFit, t, X, theta0: float = 3.0):
    v0, d = _diffs(h0, h, X, ("k_y", "e"))
    return float(np.mean(v0["e"] * (theta0 * d["e"] - d["k_y"]))) * np.asarray(t, dtype=float)


def fpp_analytic_naive(h0, h, t, X, theta0: float = 3.0):
    return np.zeros(np.shape(t))


ANALYTIC = {
    "partialled_out": (f_analytic_plm, fpp_analytic_plm),
    "aipw": (f_analytic_aipw, fpp_analytic_aipw),
    "naive": (f_analytic_naive, fpp_analytic_naive),
}


# --------------------------------------------------------------------------
# Monte Carlo


def _simulate(model: str, n: int, q: int, theta0: float, g: np.random.Generator) -> dgp.Dataset:
    if model == "plm":
        return dgp.simulate_plm(dgp.PlmConfig(n, q, theta0), g)
    return dgp.simulate_kernel_model(n, g)


def _mc_moments(score: Score, theta0: float, h0: NuisanceFit, h: NuisanceFit,
                ts: Sequence[float], mc: int, seed: int, model: str, q: int,
                workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Sums of m and m*m for each ``t`` in ``ts`` plus the matrix of cross sums.

    Every ``t`` sees the same simulated observations (common random numbers),
    generated in fixed-size chunks whose sums are reduced in chunk order.
    Returns ``(S, C)`` with ``S[k] = sum_i m_k(O_i)``, ``C[k, l] = sum_i m_k m_l``.
    """
    key = rngmod.derive_key(seed)
    sizes = [min(MC_CHUNK, mc - s) for s in range(0, mc, MC_CHUNK)]
    paths = [h0.blend(h, t) for t in ts]

    def chunk(c):
        data = _simulate(model, sizes[c], q, theta0, rngmod.stream(key, rngmod.LANE_MISC, c))
        M = np.stack([score.evaluate(data, theta0, score.values(data, p)) for p in paths])
        return M.sum(axis=1), M @ M.T

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk, range(len(sizes))))
    else:
        parts = [chunk(c) for c in range(len(sizes))]
    S = np.zeros(len(ts))
    C = np.zeros((len(ts), len(ts)))
    for s, cc in parts:
        S += s
        C += cc
    return S, C


def _check_mc(mc: int):
    if mc < 100:
        raise InvalidArgumentError("Monte Carlo needs at least 100 observations")


def f_monte_carlo(score: Score | str, theta0: float, h0: NuisanceFit, h: NuisanceFit, t: float,
                  mc: int, seed: int = 0, model: str = "plm", q: int = 5,
                  workers: int = 1) -> tuple[float, float]:
    """Monte Carlo estimate of ``f(t)`` and its standard error."""
    _check_mc(mc)
    score = get_score(score) if isinstance(score, str) else score
    S, C = _mc_moments(score, theta0, h0, h, [t], mc, seed, model, q, workers)
    mean = S[0] / mc
    var = max(C[0, 0] / mc - mean * mean, 0.0) * mc / (mc - 1)
    return float(mean), float(np.sqrt(var / mc))


# --------------------------------------------------------------------------
# orthogonality report


@dataclass(frozen=True)
class GateauxPath:
    score: str
    h: NuisanceFit
    theta0: float = 3.0
    h0: NuisanceFit | None = None
    evaluator: str = "analytic"
    mc: int = 200_000
    model: str = "plm"
    q: int = 5
    seed: int = 0
    x_sample_size: int = TRUTH_SAMPLE_SIZE

    def __post_init__(self):
        get_score(self.score)
        if self.evaluator not in ("analytic", "monte_carlo"):
            raise InvalidArgumentError("evaluator must be 'analytic' or 'monte_carlo'")
        if self.evaluator == "monte_carlo":
            _check_mc(self.mc)
        if self.h0 is None:
            object.__setattr__(self, "h0", truth_nuisance(self.model, self.theta0))
        names = get_score(self.score).components
        self.h0.require(names)
        self.h.require(names)

    @property
    def X(self) -> np.ndarray:
        return truth_sample(self.model, self.q, self.x_sample_size, self.seed)

    def f(self, ts) -> tuple[np.ndarray, np.ndarray]:
        """``f`` on the grid ``ts``: values and standard errors (zeros if analytic)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if self.evaluator == "analytic":
            vals = np.atleast_1d(ANALYTIC[self.score][0](self.h0, self.h, ts, self.X, self.theta0))
            return vals.astype(float), np.zeros_like(ts)
        S, C = _mc_moments(get_score(self.score), self.theta0, self.h0, self.h, ts,
                           self.mc, self.seed, self.model, self.q)
        mean = S / self.mc
        var = np.maximum(np.diag(C) / self.mc - mean ** 2, 0.0) * self.mc / (self.mc - 1)
        return mean, np.sqrt(var / self.mc)

    def fprime0(self, step: float = FD_STEP) -> tuple[float, float]:
        """Central difference at 0 with its standard error (common random numbers)."""
        if self.evaluator == "analytic":
            v, _ = self.f([-step, step])
            return float((v[1] - v[0]) / (2 * step)), 0.0
        S, C = _mc_moments(get_score(self.score), self.theta0, self.h0, self.h, [-step, step],
                           self.mc, self.seed, self.model, self.q)
        n = self.mc
        mean = S / n
        # variance of the per-observation difference m(+step) - m(-step)
        dvar = (C[1, 1] - 2 * C[0, 1] + C[0, 0]) / n - (mean[1] - mean[0]) ** 2
        se = np.sqrt(max(dvar, 0.0) * n / (n - 1) / n) / (2 * step)
        return float((mean[1] - mean[0]) / (2 * step)), float(se)


@dataclass(frozen=True)
class OrthoReport:
    score: str
    evaluator: str
    f0: float
    f0_se: float
    fprime0: float
    fprime0_se: float
    quadratic_coef: float
    quadratic_fit_residual: float
    curve_t: np.ndarray = field(repr=False)
    curve_f: np.ndarray = field(repr=False)
    curve_se: np.ndarray = field(repr=False)
    orthogonal: bool = True


def orthogonality_check(path: GateauxPath, tol: float = 1e-8, noise_sds: float = 4.0,
                        grid: Sequence[float] = CURVE_GRID) -> OrthoReport:
    """``f(0)``, central-difference ``f'(0)`` and a least-squares ``c t^2`` fit on [0, 1].

    The path is flagged non-orthogonal when ``|f'(0)| > tol + noise_sds * se``.
    ``quadratic_fit_residual`` is the largest absolute deviation from ``c t^2``.
    """
    ts = np.asarray(grid, dtype=float)
    fv, se = path.f(ts)
    i0 = int(np.argmin(np.abs(ts)))
    d, d_se = path.fprime0()
    t2 = ts ** 2
    c = float(t2 @ fv / (t2 @ t2))
    resid = float(np.max(np.abs(fv - c * t2)))
    return OrthoReport(
        score=path.score,
        evaluator=path.evaluator,
        f0=float(fv[i0]) + 0.0,
        f0_se=float(se[i0]),
        fprime0=d,
        fprime0_se=d_se,
        quadratic_coef=c,
        quadratic_fit_residual=resid,
        curve_t=ts,
        curve_f=fv,
        curve_se=se,
        orthogonal=bool(abs(d) <= tol + noise_sds * d_se),
    )


def curve_to_csv(report: OrthoReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "f", "stderr"])
    for t, f, s in zip(report.curve_t, report.curve_f, report.curve_se):
        w.writerow([repr(float(t)), repr(float(f)), repr(float(s))])
    return buf.getvalue()


def write_curve(report: OrthoReport, path) -> Path:
    path = Path(path)
    try:
        path.write_text(curve_to_csv(report))
    except OSError as exc:
        raise ReportIOError(f"cannot write curve to {path}: {exc}", path) from exc
    return path


# --------------------------------------------------------------------------
# remainder rate


def rate_functional(path: GateauxPath, n_grid: Sequence[int], delta: float = 0.05,
                    ) -> list[tuple[int, float]]:
    """``(n, sqrt(n) * int_0^1 |f_n''(t)| dt)`` with the perturbation shrunk by ``n^(-1/4 - delta)``.

    The integral uses a 64-point Gauss-Legendre rule on [0, 1].
    """
    nodes, wts = np.polynomial.legendre.leggauss(QUAD_POINTS)
    t = 0.5 * (nodes + 1.0)
    wts = 0.5 * wts
    fpp = ANALYTIC[path.score][1]
    out = []
    for n in n_grid:
        if n < 1:
            raise InvalidArgumentError("sample sizes must be positive")
        s = float(n) ** (-0.25 - delta)
        hn = path.h0.blend(path.h, s)
        vals = np.atleast_1d(fpp(path.h0, hn, t, path.X, path.theta0))
        out.append((int(n), float(np.sqrt(n) * (wts @ np.abs(vals)))))
    return out


# --------------------------------------------------------------------------
# non-orthogonality probe


@dataclass(frozen=True)
class ProbeRow:
    score: str
    nuisance: str
    coverage_pct: float
    bias: float
    post_var_times_n: float
    freq_var_times_n: float


def _rate_nuisance(theta0: float, n: int, rate: float, dk: float, de: float) -> NuisanceFit:
    s = float(n) ** (-rate)
    return shifted(dgp.plm_truth_nuisance(theta0), k_y=s * dk, e=s * de)


def nonortho_probe(n: int = 1000, replicates: int = 100, bootstrap: int = 200, rate: float = 0.1,
                   master_seed: int = 0, nuisances: Sequence[str] = ("truth", "rate"),
                   scores: Sequence[str] = ("partialled_out", "naive"),
                   dk: float = 0.5, de: float = 0.05, q: int = 5, theta0: float = 3.0,
                   ) -> list[ProbeRow]:
    """Coverage and centering of each score under each kind of plug-in nuisance.

    ``truth`` plugs in h0; ``rate`` uses ``h0 + n^(-rate) * (dk, de)``, a
    nuisance error decaying at a known rate; ``forest`` fits the default
    forests. All rows of one replicate share the same simulated dataset.
    """
    from .harness import ExperimentConfig, fit_nuisance, simulate

    for nu in nuisances:
        if nu not in ("truth", "rate", "forest"):
            raise InvalidArgumentError(f"unknown nuisance kind {nu!r}")
    cfg = ExperimentConfig(n=n, q=q, replicates=replicates, bootstrap=bootstrap,
                           master_seed=master_seed, theta0=theta0)
    acc = {(s, nu): [] for s in scores for nu in nuisances}
    for r in range(replicates):
        data = simulate(cfg, r)
        for nu in nuisances:
            if nu == "truth":
                h = dgp.plm_truth_nuisance(theta0)
            elif nu == "rate":
                h = _rate_nuisance(theta0, n, rate, dk, de)
            else:
                h = fit_nuisance(cfg, data, r)
            for s in scores:
                key = rngmod.derive_key(master_seed, r, rngmod.LANE_WEIGHTS)
                sample = sample_posterior(data, get_score(s), h, bootstrap, "dirichlet", key)
                summ = summarize(sample, 0.95, theta0)
                acc[(s, nu)].append((summ.covers_true, summ.post_mean, summ.post_var, sample.theta_hat_n))
    rows = []
    for (s, nu), vals in acc.items():
        cov, pm, pv, th = (np.array(v, dtype=float) for v in zip(*vals))
        rows.append(ProbeRow(s, nu, float(100 * cov.mean()), float(pm.mean() - theta0),
                             float(n * pv.mean()),
                             float(n * th.var(ddof=1)) if th.size > 1 else float("nan")))
    return rows
