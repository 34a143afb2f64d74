"""Bootstrap weight vectors.

Three schemes are supported: Bayesian-bootstrap Dirichlet(1, ..., 1)
weights, Efron multinomial weights ``Multinomial(n, 1/n, ..., 1/n) / n`` and
the degenerate equal weights ``1/n`` that reproduce the plain empirical
measure.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidArgumentError

SUM_TOL = 1e-12


class Scheme(str, Enum):
    DIRICHLET = "dirichlet"
    MULTINOMIAL = "multinomial"
    EQUAL = "equal"


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    scheme: Scheme

    def __post_init__(self):
        w = self.w
        if w.ndim != 1 or w.size < 1:
            raise InvalidArgumentError("weight vector must be one-dimensional with n >= 1")
        if np.any(w < 0):
            raise InvalidArgumentError("negative weight")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise InvalidArgumentError(f"weights sum to {w.sum()!r}, not 1")

    @property
    def n(self) -> int:
        return self.w.size

    def __len__(self):
        return self.w.size


def _check_n(n) -> int:
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    return int(n)


def _normalize(raw: np.ndarray) -> np.ndarray:
    w = raw / raw.sum(axis=-1, keepdims=True)
    bad = np.abs(w.sum(axis=-1) - 1.0) > SUM_TOL
    if np.any(bad):
        # one renormalisation pass; a second failure is a bug
        w[bad] = w[bad] / w[bad].sum(axis=-1, keepdims=True)
        if np.any(np.abs(w.sum(axis=-1) - 1.0) > SUM_TOL):
            raise AssertionError("weights failed to normalise")
    return w


def dirichlet_matrix(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` Dirichlet(1,...,1) rows of length ``n`` as normalised exponentials."""
    n = _check_n(n)
    e = rng.standard_exponential((size, n))
    return _normalize(e)


def multinomial_matrix(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` rows of multinomial counts over ``n`` equiprobable cells, divided by ``n``."""
    n = _check_n(n)
    # n categorical draws per row via inverse-CDF search on the uniform grid
    cdf = np.arange(1, n + 1) / n
    u = rng.random((size, n))
    cells = np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)
    counts = np.zeros((size, n))
    np.add.at(counts, (np.repeat(np.arange(size), n), cells.ravel()), 1.0)
    return counts / n


def draw_dirichlet(n: int, rng: np.random.Generator) -> WeightVector:
    return WeightVector(dirichlet_matrix(n, 1, rng)[0], Scheme.DIRICHLET)


def draw_multinomial(n: int, rng: np.random.Generator) -> WeightVector:
    return WeightVector(multinomial_matrix(n, 1, rng)[0], Scheme.MULTINOMIAL)


def equal_weights(n: int) -> WeightVector:
    n = _check_n(n)
    w = np.full(n, 1.0 / n)
    return WeightVector(_normalize(w[None, :])[0], Scheme.EQUAL)


def draw(scheme: Scheme | str, n: int, rng: np.random.Generator | None) -> WeightVector:
    scheme = Scheme(scheme)
    if scheme is Scheme.DIRICHLET:
        return draw_dirichlet(n, rng)
    if scheme is Scheme.MULTINOMIAL:
        return draw_multinomial(n, rng)
    return equal_weights(n)


def condition3_statistic(w: np.ndarray) -> np.ndarray:
    """``(1/n) * sum_i (n w_i - 1)^2`` for each row of ``w``.

    For exchangeable bootstrap weights this converges to ``c**2``; Dirichlet
    and multinomial weights both have ``c = 1``.
    """
    w = np.atleast_2d(w)
    n = w.shape[-1]
    return np.mean((n * w - 1.0) ** 2, axis=-1)
