"""Nonparametric regression learners for the plug-in nuisance fit.

All predictors expose ``predict(X) -> ndarray`` on a 2-D covariate matrix
(``n x q``). A 1-D input is read as ``q = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import rng as rngmod
from .errors import InvalidArgumentError


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidArgumentError("covariates must be a 1-D or 2-D array")
    return X


# --------------------------------------------------------------------------
# predictors


class ConstantPredictor:
    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, X) -> np.ndarray:
        return np.full(_as_matrix(X).shape[0], self.value)


class FunctionPredictor:
    """Wraps a known function of the covariate matrix (truth plug-ins, perturbations)."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = ""):
        self.fn = fn
        self.name = name

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        return np.broadcast_to(np.asarray(self.fn(X), dtype=float), (X.shape[0],)).copy()


class BlendPredictor:
    """Pointwise ``(1 - t) * base + t * other``, i.e. ``base + t * (other - base)``."""

    def __init__(self, base, other, t: float):
        self.base, self.other, self.t = base, other, float(t)

    def predict(self, X) -> np.ndarray:
        p0 = self.base.predict(X)
        return p0 + self.t * (self.other.predict(X) - p0)


class ShiftedInputPredictor:
    """Evaluates ``inner`` on ``[z_value, X]``; used to read mu(z, x) off a joint fit."""

    def __init__(self, inner, z_value: float):
        self.inner = inner
        self.z_value = float(z_value)

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        return self.inner.predict(np.column_stack([np.full(X.shape[0], self.z_value), X]))


@dataclass(frozen=True)
class ClampSpec:
    epsilon: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise InvalidArgumentError("clamp epsilon must lie in (0, 0.5)")


class ClampedPredictor:
    def __init__(self, inner, spec: ClampSpec):
        self.inner = inner
        self.spec = spec

    def predict(self, X) -> np.ndarray:
        eps = self.spec.epsilon
        return np.clip(self.inner.predict(X), eps, 1.0 - eps)


def clamp_propensity(p, spec: ClampSpec | None = None) -> ClampedPredictor:
    return ClampedPredictor(p, spec or ClampSpec())


# --------------------------------------------------------------------------
# regression forest


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 200
    subsample_exponent: float = 0.49
    min_leaf: int = 5
    max_features: int | str | None = None  # None -> ceil(q/3); "all" -> q
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise InvalidArgumentError("num_trees must be positive")
        if not 0.0 < self.subsample_exponent <= 1.0:
            raise InvalidArgumentError("subsample_exponent must lie in (0, 1]")
        if self.min_leaf < 1:
            raise InvalidArgumentError("min_leaf must be positive")
        mf = self.max_features
        if mf is not None and mf != "all" and (not isinstance(mf, int) or mf < 1):
            raise InvalidArgumentError("max_features must be a positive integer, 'all' or None")

    def subsample_size(self, n: int) -> int:
        # small epsilon guards exact powers (e.g. 100**0.5) against round-down
        m = int(math.floor(n ** self.subsample_exponent + 1e-9))
        return min(max(m, 1), n)

    def features_per_split(self, q: int) -> int:
        if self.max_features is None:
            return max(1, math.ceil(q / 3))
        if self.max_features == "all":
            return q
        return min(int(self.max_features), q)


def _best_split(Xn: np.ndarray, yn: np.ndarray, feats: np.ndarray, min_leaf: int):
    """Best variance-reduction split of one node over candidate features.

    Returns ``(feature, threshold, gain)`` or ``None``. Thresholds are
    midpoints between consecutive distinct sorted values.
    """
    s = yn.size
    lo, hi = min_leaf, s - min_leaf  # left size range [lo, hi]
    if hi < lo:
        return None
    total = yn.sum()
    base = total * total / s
    best = None
    best_gain = 1e-12 * max(1.0, float(np.dot(yn, yn)))
    sizes = np.arange(lo, hi + 1)
    for f in feats:
        xf = Xn[:, f]
        order = np.argsort(xf, kind="stable")
        xs = xf[order]
        cs = np.cumsum(yn[order])
        left_sum = cs[sizes - 1]
        valid = xs[sizes - 1] < xs[sizes]
        if not valid.any():
            continue
        right_sum = total - left_sum
        gain = left_sum ** 2 / sizes + right_sum ** 2 / (s - sizes) - base
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            best_gain = gain[k]
            i = sizes[k]
            best = (int(f), 0.5 * (xs[i - 1] + xs[i]), float(gain[k]))
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, min_leaf: int, mtry: int, g: np.random.Generator):
    """Grow one tree; returns node arrays (feature, threshold, left, right, value)."""
    feature, threshold, left, right, value = [], [], [], [], []
    q = X.shape[1]

    def new_node(v):
        feature.append(-1)
        threshold.append(0.0)
        left.append(len(left))
        right.append(len(right))
        value.append(v)
        return len(value) - 1

    root = new_node(float(y.mean()))
    stack = [(root, np.arange(y.size))]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        if idx.size < 2 * min_leaf or yn.max() == yn.min():
            continue
        feats = g.choice(q, size=mtry, replace=False) if mtry < q else np.arange(q)
        split = _best_split(X[idx], yn, feats, min_leaf)
        if split is None:
            continue
        f, thr, _ = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        ln = new_node(float(y[li].mean()))
        rn = new_node(float(y[ri].mean()))
        feature[node], threshold[node], left[node], right[node] = f, thr, ln, rn
        stack.append((rn, ri))
        stack.append((ln, li))
    return (
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
    )


class ForestPredictor:
    """Fitted forest stored as one flat node table; leaves point at themselves."""

    def __init__(self, feature, threshold, left, right, value, roots, depth, q):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value
        self.roots = roots
        self.depth = depth
        self.q = q

    @property
    def num_trees(self) -> int:
        return self.roots.size

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.q:
            raise InvalidArgumentError(f"expected {self.q} covariates, got {X.shape[1]}")
        n = X.shape[0]
        nodes = np.repeat(self.roots[:, None], n, axis=1)
        cols = np.arange(n)[None, :]
        feat_safe = np.maximum(self.feature, 0)
        for _ in range(self.depth):
            go_left = X[cols, feat_safe[nodes]] <= self.threshold[nodes]
            nodes = np.where(go_left, self.left[nodes], self.right[nodes])
        # average over trees in a fixed order
        return self.value[nodes].mean(axis=0)


def fit_forest(X, y, cfg: ForestConfig | None = None) -> ForestPredictor | ConstantPredictor:
    """Regression forest on without-replacement subsamples of size ``floor(n**exponent)``."""
    cfg = cfg or ForestConfig()
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n, q = X.shape
    if n < 2:
        raise InvalidArgumentError("fit_forest needs at least two observations")
    if y.shape != (n,):
        raise InvalidArgumentError("y must have one entry per row of X")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise InvalidArgumentError("inputs must be finite")
    if y.max() == y.min():
        return ConstantPredictor(y[0])

    m = cfg.subsample_size(n)
    mtry = cfg.features_per_split(q)
    key = rngmod.derive_key(cfg.seed)
    parts, roots, depth, offset = [], [], 0, 0
    for b in range(cfg.num_trees):
        g = rngmod.stream(key, rngmod.LANE_TREE, b)
        idx = g.choice(n, size=m, replace=False)
        f, t, lft, rgt, val = _grow_tree(X[idx], y[idx], cfg.min_leaf, mtry, g)
        parts.append((f, t, lft + offset, rgt + offset, val))
        roots.append(offset)
        depth = max(depth, _tree_depth(f, lft, rgt))
        offset += val.size
    feature, threshold, left, right, value = (np.concatenate(c) for c in zip(*parts))
    return ForestPredictor(feature, threshold, left, right, value,
                           np.asarray(roots, dtype=np.int64), depth, q)


def _tree_depth(feature, left, right) -> int:
    depth, frontier = 0, [0]
    while True:
        nxt = [c for v in frontier if feature[v] >= 0 for c in (left[v], right[v])]
        if not nxt:
            return depth
        depth += 1
        frontier = nxt


# --------------------------------------------------------------------------
# Nadaraya-Watson


class KernelPredictor:
    def __init__(self, x: np.ndarray, y: np.ndarray, bandwidth: float):
        self.x = x
        self.y = y
        self.bandwidth = bandwidth

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != 1:
            raise InvalidArgumentError("kernel regression is univariate")
        xq = X[:, 0]
        out = np.empty(xq.size)
        # chunked to bound the (query x train) kernel matrix
        step = max(1, 2_000_000 // max(self.x.size, 1))
        for s in range(0, xq.size, step):
            d = (xq[s:s + step, None] - self.x[None, :]) / self.bandwidth
            k = np.exp(-0.5 * d * d)
            mass = k.sum(axis=1)
            num = k @ self.y
            with np.errstate(invalid="ignore", divide="ignore"):
                est = num / mass
            empty = ~(mass > 0)
            if empty.any():
                nearest = np.abs(d[empty]).argmin(axis=1)
                est[empty] = self.y[nearest]
            out[s:s + step] = est
        return out


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** (-0.2)


def fit_kernel(x, y, bandwidth: float | str = "auto") -> KernelPredictor:
    """Gaussian-kernel Nadaraya-Watson regression of ``y`` on scalar ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise InvalidArgumentError("fit_kernel takes a univariate covariate")
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.shape != x.shape:
        raise InvalidArgumentError("fit_kernel needs n >= 2 paired observations")
    if bandwidth == "auto":
        bw = silverman_bandwidth(x)
        if not bw > 0:
            raise InvalidArgumentError("automatic bandwidth is zero (constant covariate)")
    else:
        bw = float(bandwidth)
        if not bw > 0:
            raise InvalidArgumentError("bandwidth must be positive")
    return KernelPredictor(x.copy(), y.copy(), bw)


# --------------------------------------------------------------------------
# nuisance bundles


@dataclass
class NuisanceFit:
    """Named nuisance predictors, e.g. ``{"k_y", "e"}`` or ``{"mu0", "mu1", "e"}``."""

    components: Mapping[str, object] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.components[name]

    def __contains__(self, name):
        return name in self.components

    def require(self, names) -> None:
        missing = [k for k in names if k not in self.components]
        if missing:
            raise InvalidArgumentError(f"nuisance fit lacks components {missing}")

    def predict(self, X, names=None) -> dict[str, np.ndarray]:
        names = names or list(self.components)
        return {k: self.components[k].predict(X) for k in names}

    def blend(self, other: "NuisanceFit", t: float) -> "NuisanceFit":
        """The path point ``self + t * (other - self)``, componentwise."""
        return NuisanceFit({k: BlendPredictor(v, other[k], t) for k, v in self.components.items()})
