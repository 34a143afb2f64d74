"""Score functions, weighted estimating-equation solvers and sandwich variance.

A score ``m(O; theta, h)`` is evaluated for all observations of a
:class:`~orthoboot.dgp.Dataset` at once. Nuisances may be passed either as a
:class:`~orthoboot.nuisance.NuisanceFit` or as a dict of arrays already
evaluated at ``data.x`` (the posterior sampler does this once and reuses it
for every draw).

The built-in scores are affine in ``theta``: ``m = a(O, h) + b(O, h) * theta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConvergenceError, DegenerateError, InvalidArgumentError, PositivityError
from .nuisance import NuisanceFit
from .weights import WeightVector

SOLVER_TOL = 1e-10
DEGENERATE_TOL = 1e-12


def partialled_out_score(y, z, k_y, e, theta):
    """``[y - k_y(x) - theta (z - e(x))] (z - e(x))``."""
    v = np.subtract(z, e)
    return (np.subtract(y, k_y) - theta * v) * v


def aipw_pseudo_outcome(y, z, mu0, mu1, e):
    """``mu1 - mu0 + z (y - mu1) / e - (1 - z)(y - mu0) / (1 - e)``."""
    e = np.asarray(e, dtype=float)
    if np.any(~(e > 0.0)) or np.any(~(e < 1.0)):
        raise PositivityError("propensity outside (0, 1); the clamp contract was violated")
    y, z = np.asarray(y, dtype=float), np.asarray(z, dtype=float)
    return mu1 - mu0 + z * (y - mu1) / e - (1.0 - z) * (y - mu0) / (1.0 - e)


def aipw_score(y, z, mu0, mu1, e, theta):
    return aipw_pseudo_outcome(y, z, mu0, mu1, e) - theta


class Score:
    """Base class. Subclasses define ``components`` and ``affine_parts``."""

    name = "score"
    components: tuple[str, ...] = ()
    affine = True

    def values(self, data, h) -> Mapping[str, np.ndarray]:
        if isinstance(h, NuisanceFit):
            h.require(self.components)
            return h.predict(data.x, list(self.components))
        missing = [k for k in self.components if k not in h]
        if missing:
            raise InvalidArgumentError(f"nuisance values lack {missing}")
        return h

    def affine_parts(self, data, h) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def evaluate(self, data, theta, h) -> np.ndarray:
        a, b = self.affine_parts(data, h)
        return a + b * theta

    def dtheta(self, data, theta, h) -> np.ndarray:
        _, b = self.affine_parts(data, h)
        return np.broadcast_to(b, (data.n,)).astype(float)

    def __repr__(self):
        return f"{type(self).__name__}()"


class PartialledOutScore(Score):
    name = "partialled_out"
    components = ("k_y", "e")

    def affine_parts(self, data, h):
        hv = self.values(data, h)
        v = data.z - hv["e"]
        return (data.y - hv["k_y"]) * v, -v * v


class AipwScore(Score):
    name = "aipw"
    components = ("mu0", "mu1", "e")

    def affine_parts(self, data, h):
        hv = self.values(data, h)
        bo = aipw_pseudo_outcome(data.y, data.z, hv["mu0"], hv["mu1"], hv["e"])
        return bo, np.full(data.n, -1.0)


class NaiveResidualScore(Score):
    """``[y - k_y(x) - theta (z - e(x))] z``: residual regressed on the raw treatment.

    Valid at the truth (E[U Z] = 0) but not Neyman orthogonal: a first-order
    error in either nuisance moves the moment.
    """

    name = "naive"
    components = ("k_y", "e")

    def affine_parts(self, data, h):
        hv = self.values(data, h)
        return (data.y - hv["k_y"]) * data.z, -(data.z - hv["e"]) * data.z


SCORES = {
    "partialled_out": PartialledOutScore,
    "aipw": AipwScore,
    "naive": NaiveResidualScore,
}


def get_score(name: str) -> Score:
    try:
        return SCORES[name]()
    except KeyError:
        raise InvalidArgumentError(f"unknown score {name!r}; choose from {sorted(SCORES)}") from None


@dataclass(frozen=True)
class SolveResult:
    theta_hat: float
    m_bar: float
    iterations: int


def _weights_array(w, n) -> np.ndarray:
    arr = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if arr.shape != (n,):
        raise InvalidArgumentError(f"expected {n} weights, got shape {arr.shape}")
    return arr


def wsum(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise ``sum_i w_i v_i``.

    A plain elementwise product and last-axis reduction rather than BLAS:
    each row is summed the same way however many rows are passed, which
    keeps draws bit-identical across block sizes and thread counts.
    """
    return (w * v).sum(axis=-1)


def solve_affine(a: np.ndarray, b: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Roots of ``sum_i W_ji (a_i + b_i theta) = 0`` for each weight row j; returns (theta, slope)."""
    slope = wsum(W, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = -wsum(W, a) / slope
    return theta, slope


def solve_weighted(score: Score, data, w, h) -> SolveResult:
    """Exact root of the weighted estimating equation for an affine score."""
    if not score.affine:
        return solve_newton(score, data, w, h)
    w = _weights_array(w, data.n)
    a, b = score.affine_parts(data, h)
    slope = float(wsum(w, b))
    if abs(slope) < DEGENERATE_TOL:
        raise DegenerateError(f"weighted score slope {slope!r} is numerically zero")
    theta = -float(wsum(w, a)) / slope
    m_bar = float(wsum(w, a + b * theta))
    return SolveResult(theta, m_bar, 0)


def solve_newton(score: Score, data, w, h, theta_init: float = 0.0,
                 tol: float = SOLVER_TOL, max_iter: int = 100) -> SolveResult:
    """Newton-Raphson on ``theta -> sum_i w_i m(O_i; theta, h)``."""
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    w = _weights_array(w, data.n)
    if isinstance(h, NuisanceFit):
        h = score.values(data, h)
    theta = float(theta_init)
    for it in range(max_iter + 1):
        m_bar = float(wsum(w, score.evaluate(data, theta, h)))
        if not np.isfinite(m_bar):
            raise ConvergenceError(f"weighted score is not finite at theta={theta!r}")
        if abs(m_bar) <= tol:
            return SolveResult(theta, m_bar, it)
        if it == max_iter:
            break
        slope = float(wsum(w, score.dtheta(data, theta, h)))
        if abs(slope) < DEGENERATE_TOL:
            raise DegenerateError(f"zero derivative at theta={theta!r}")
        theta -= m_bar / slope
    raise ConvergenceError(f"Newton did not reach |m_bar| <= {tol} in {max_iter} iterations "
                           f"(last |m_bar| = {abs(m_bar):.3g})")


def sandwich_variance(score: Score, data, theta_hat: float, h) -> float:
    """``M^-1 (mean m^2) M^-1`` with ``M`` the mean score derivative (scalar theta)."""
    if isinstance(h, NuisanceFit):
        h = score.values(data, h)
    M = float(np.mean(score.dtheta(data, theta_hat, h)))
    if abs(M) < DEGENERATE_TOL:
        raise DegenerateError("mean score derivative is numerically zero")
    meat = float(np.mean(score.evaluate(data, theta_hat, h) ** 2))
    return meat / (M * M)
