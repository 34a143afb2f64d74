"""Simulation designs with known ground truth.

``simulate_plm``
    Partially linear model with binary treatment::

        X ~ N(0, S),  S[i, j] = 0.8**|i - j| / 4
        g0(X) = X1 + sin(X2 + X3) + cos(X3) + |X4| + Xq
        e0(X) = expit(sum_j Xj) / 2 + 1/5
        Z | X ~ Bernoulli(e0(X)),  Y = theta0 * Z + g0(X) + U,  U ~ N(0, 1)

``simulate_kernel_model``
    Scalar covariate, continuous treatment::

        X, U, V ~ N(0, 1),  Z = sin(X) + V,  Y = 3 Z + X + U
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import InvalidArgumentError, ReportIOError
from .nuisance import FunctionPredictor, NuisanceFit

KERNEL_THETA0 = 3.0


@dataclass(frozen=True)
class PlmConfig:
    n: int
    q: int = 5
    theta0: float = 3.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError("n must be at least 1")
        if self.q < 5:
            raise InvalidArgumentError("the PLM design needs q >= 5 covariates")


@dataclass
class Truth:
    theta0: float
    e0: np.ndarray
    g0: np.ndarray
    ky0: np.ndarray


@dataclass
class Dataset:
    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    truth: Truth | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        x = np.asarray(self.x, dtype=float)
        self.x = x[:, None] if x.ndim == 1 else x
        n = self.y.shape[0]
        if self.y.shape != (n,) or self.z.shape != (n,) or self.x.shape[0] != n:
            raise InvalidArgumentError("dataset columns have inconsistent lengths")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        t = self.truth
        if t is not None:
            t = Truth(t.theta0, t.e0[idx], t.g0[idx], t.ky0[idx])
        return Dataset(self.y[idx], self.z[idx], self.x[idx], t)


# --------------------------------------------------------------------------
# partially linear design


@lru_cache(maxsize=32)
def covariance(q: int) -> np.ndarray:
    i = np.arange(q)
    s = 0.8 ** np.abs(i[:, None] - i[None, :]) / 4.0
    s.setflags(write=False)
    return s


@lru_cache(maxsize=32)
def _cholesky(q: int) -> np.ndarray:
    s = covariance(q)
    assert np.array_equal(s, s.T)
    try:
        c = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cannot happen for this family
        raise AssertionError(f"covariance for q={q} is not positive definite") from exc
    c.setflags(write=False)
    return c


def g0(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    return X[:, 0] + np.sin(X[:, 1] + X[:, 2]) + np.cos(X[:, 2]) + np.abs(X[:, 3]) + X[:, -1]


def e0(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    return 0.5 * expit(X.sum(axis=1)) + 0.2


def sample_covariates(n: int, q: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, q)) @ _cholesky(q).T


def simulate_plm(cfg: PlmConfig, rng: np.random.Generator) -> Dataset:
    X = sample_covariates(cfg.n, cfg.q, rng)
    e = e0(X)
    g = g0(X)
    z = (rng.random(cfg.n) < e).astype(float)
    u = rng.standard_normal(cfg.n)
    y = cfg.theta0 * z + g + u
    return Dataset(y, z, X, Truth(cfg.theta0, e, g, cfg.theta0 * e + g))


def plm_truth_nuisance(theta0: float = 3.0) -> NuisanceFit:
    """True nuisances for both scores on the PLM design.

    ``k_y`` is E(Y|X) = theta0 e0 + g0; ``mu1``/``mu0`` are mu0(1, x) and
    mu0(0, x) of mu0(z, x) = theta0 z + g0(x).
    """
    return NuisanceFit({
        "k_y": FunctionPredictor(lambda X: theta0 * e0(X) + g0(X), "k_y0"),
        "e": FunctionPredictor(e0, "e0"),
        "mu1": FunctionPredictor(lambda X: theta0 + g0(X), "mu0(1,.)"),
        "mu0": FunctionPredictor(g0, "mu0(0,.)"),
    })


# --------------------------------------------------------------------------
# scalar-covariate design


def simulate_kernel_model(n: int, rng: np.random.Generator) -> Dataset:
    if n < 1:
        raise InvalidArgumentError("n must be at least 1")
    x = rng.standard_normal(n)
    u = rng.standard_normal(n)
    v = rng.standard_normal(n)
    return kernel_model_from_noise(x, u, v)


def kernel_model_from_noise(x, u, v, theta0: float = KERNEL_THETA0) -> Dataset:
    x, u, v = (np.asarray(a, dtype=float) for a in (x, u, v))
    z = np.sin(x) + v
    y = theta0 * z + x + u
    ez = np.sin(x)
    return Dataset(y, z, x[:, None], Truth(theta0, ez, x, theta0 * ez + x))


def kernel_truth_nuisance(theta0: float = KERNEL_THETA0) -> NuisanceFit:
    return NuisanceFit({
        "k_y": FunctionPredictor(lambda X: theta0 * np.sin(X[:, 0]) + X[:, 0], "k_y0"),
        "e": FunctionPredictor(lambda X: np.sin(X[:, 0]), "E(Z|X)"),
    })


# --------------------------------------------------------------------------
# delimited text


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["y", "z"] + [f"x{j + 1}" for j in range(data.q)])
    for i in range(data.n):
        w.writerow([repr(float(data.y[i])), repr(float(data.z[i]))]
                   + [repr(float(v)) for v in data.x[i]])
    return buf.getvalue()


def dataset_from_csv(text: str) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InvalidArgumentError("empty dataset file")
    header = rows[0]
    if header[:2] != ["y", "z"] or header[2:] != [f"x{j + 1}" for j in range(len(header) - 2)]:
        raise InvalidArgumentError(f"unexpected header {header}")
    if len(header) < 3:
        raise InvalidArgumentError("dataset needs at least one covariate column")
    body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if body.size == 0:
        raise InvalidArgumentError("dataset file has no rows")
    return Dataset(body[:, 0], body[:, 1], body[:, 2:])


def write_dataset(data: Dataset, path) -> Path:
    path = Path(path)
    try:
        path.write_text(dataset_to_csv(data))
    except OSError as exc:
        raise ReportIOError(f"cannot write dataset to {path}: {exc}", path) from exc
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        return dataset_from_csv(path.read_text())
    except OSError as exc:
        raise ReportIOError(f"cannot read dataset from {path}: {exc}", path) from exc
