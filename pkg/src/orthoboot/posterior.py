"""Bayesian-bootstrap posterior sampling with a fixed plug-in nuisance.

Each draw re-solves the weighted estimating equation
``sum_i w_i m(O_i; theta, h_hat) = 0`` under fresh random weights while the
nuisance fit stays fixed. Draw ``j`` takes its weights from its own
counter-based stream, so results do not depend on worker count or order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from . import rng as rngmod
from .errors import DegenerateError, InvalidArgumentError, ReportIOError
from .scores import DEGENERATE_TOL, Score, sandwich_variance, solve_affine, solve_newton, solve_weighted
from .weights import Scheme, dirichlet_matrix, equal_weights, multinomial_matrix

DEFAULT_B = 1000
_MAX_ATTEMPTS = 64
_BLOCK = 1024  # weight rows held in memory at once


@dataclass
class PosteriorSample:
    draws: np.ndarray
    theta_hat_n: float
    sandwich: float
    n: int
    rejected_draws: int = 0

    @property
    def B(self) -> int:
        return self.draws.size


@dataclass(frozen=True)
class PosteriorSummary:
    post_mean: float
    post_var: float
    cred_lo: float
    cred_hi: float
    freq_lo: float
    freq_hi: float
    covers_true: bool | None = None


def _weight_row(scheme: Scheme, n: int, key: int, j: int, attempt: int) -> np.ndarray:
    g = rngmod.stream(key, rngmod.LANE_WEIGHTS, j, attempt)
    if scheme is Scheme.DIRICHLET:
        return dirichlet_matrix(n, 1, g)[0]
    if scheme is Scheme.MULTINOMIAL:
        return multinomial_matrix(n, 1, g)[0]
    return equal_weights(n).w


def _solve_rows(score, data, hv, a, b, rows: range, scheme, key):
    """Solve draws ``rows``; returns (thetas, rejected count)."""
    rejected = 0
    if score.affine:
        out = np.empty(len(rows))
        slope = np.empty(len(rows))
        for s in range(0, len(rows), _BLOCK):
            W = np.stack([_weight_row(scheme, data.n, key, j, 0) for j in rows[s:s + _BLOCK]])
            out[s:s + _BLOCK], slope[s:s + _BLOCK] = solve_affine(a, b, W)
        for k in np.flatnonzero(~(np.abs(slope) >= DEGENERATE_TOL)):
            j = rows[k]
            for attempt in range(1, _MAX_ATTEMPTS):
                rejected += 1
                w = _weight_row(scheme, data.n, key, j, attempt)
                theta, s = solve_affine(a, b, w[None, :])
                if abs(s[0]) >= DEGENERATE_TOL:
                    out[k] = theta[0]
                    break
            else:
                raise DegenerateError(f"draw {j}: {_MAX_ATTEMPTS} consecutive degenerate weight vectors")
        return out, rejected

    out = np.empty(len(rows))
    for k, j in enumerate(rows):
        for attempt in range(_MAX_ATTEMPTS):
            try:
                out[k] = solve_newton(score, data, _weight_row(scheme, data.n, key, j, attempt), hv).theta_hat
                break
            except DegenerateError:
                rejected += 1
        else:
            raise DegenerateError(f"draw {j}: {_MAX_ATTEMPTS} consecutive degenerate weight vectors")
    return out, rejected


def sample_posterior(data, score: Score, h, B: int = DEFAULT_B,
                     scheme: Scheme | str = Scheme.DIRICHLET, seed: int = 0,
                     workers: int = 1) -> PosteriorSample:
    """Draw ``B`` posterior samples of theta with ``h`` held fixed.

    ``scheme="equal"`` forces every draw onto the equal weights, which
    reproduces the frequentist root (a test hook). Degenerate draws are
    redrawn from the next attempt of the same stream and counted; more than
    ``B / 10`` rejections abort with :class:`DegenerateError`.
    """
    if B < 1:
        raise InvalidArgumentError("B must be at least 1")
    scheme = Scheme(scheme)
    hv = score.values(data, h)
    a, b = score.affine_parts(data, hv) if score.affine else (None, None)

    freq = solve_weighted(score, data, equal_weights(data.n), hv)
    sandwich = sandwich_variance(score, data, freq.theta_hat, hv)

    key = rngmod.derive_key(seed)
    if workers <= 1:
        chunks = [range(0, B)]
    else:
        size = -(-B // workers)
        chunks = [range(s, min(s + size, B)) for s in range(0, B, size)]
    if len(chunks) == 1:
        results = [_solve_rows(score, data, hv, a, b, chunks[0], scheme, key)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _solve_rows(score, data, hv, a, b, r, scheme, key), chunks))
    draws = np.concatenate([r[0] for r in results])
    rejected = sum(r[1] for r in results)
    if rejected > B / 10:
        raise DegenerateError(f"{rejected} of {B} bootstrap draws were degenerate; "
                              "check the data and the nuisance fit")
    return PosteriorSample(draws, freq.theta_hat, sandwich, data.n, rejected)


def sample_posterior_multi(data, score: Score, fits: Sequence, B_each: int | Sequence[int],
                           scheme: Scheme | str = Scheme.DIRICHLET, seed: int = 0) -> PosteriorSample:
    """Run the sampler once per nuisance fit and collate the draws.

    ``theta_hat_n`` and ``sandwich`` of the result are draw-weighted averages
    of the per-fit values.
    """
    if not fits:
        raise InvalidArgumentError("need at least one nuisance fit")
    sizes = [B_each] * len(fits) if np.isscalar(B_each) else list(B_each)
    if len(sizes) != len(fits):
        raise InvalidArgumentError("one B per nuisance fit")
    parts = [sample_posterior(data, score, h, Bk, scheme, rngmod.derive_key(seed, k))
             for k, (h, Bk) in enumerate(zip(fits, sizes))]
    total = sum(sizes)
    return PosteriorSample(
        np.concatenate([p.draws for p in parts]),
        sum(p.theta_hat_n * Bk for p, Bk in zip(parts, sizes)) / total,
        sum(p.sandwich * Bk for p, Bk in zip(parts, sizes)) / total,
        data.n,
        sum(p.rejected_draws for p in parts),
    )


def summarize(sample: PosteriorSample, level: float = 0.95,
              theta_true: float | None = None) -> PosteriorSummary:
    """Posterior moments, equal-tailed credible interval and sandwich Wald interval.

    Quantiles use linear interpolation between order statistics (numpy's
    default rule). ``covers_true`` refers to the credible interval.
    """
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError("level must lie in (0, 1)")
    d = np.asarray(sample.draws, dtype=float)
    if d.size < 2:
        raise InvalidArgumentError("posterior variance needs at least two draws")
    alpha = 1.0 - level
    lo, hi = np.quantile(d, [alpha / 2, 1.0 - alpha / 2])
    half = norm.ppf(1.0 - alpha / 2) * np.sqrt(sample.sandwich / sample.n)
    covers = None if theta_true is None else bool(lo <= theta_true <= hi)
    return PosteriorSummary(
        post_mean=float(d.mean()),
        post_var=float(d.var(ddof=1)),
        cred_lo=float(lo),
        cred_hi=float(hi),
        freq_lo=float(sample.theta_hat_n - half),
        freq_hi=float(sample.theta_hat_n + half),
        covers_true=covers,
    )


def write_draws(sample: PosteriorSample, path) -> Path:
    """One draw per line, shortest round-tripping decimal form."""
    path = Path(path)
    try:
        path.write_text("".join(f"{float(v)!r}\n" for v in sample.draws))
    except OSError as exc:
        raise ReportIOError(f"cannot write draws to {path}: {exc}", path) from exc
    return path


def read_draws(path) -> np.ndarray:
    return np.array([float(s) for s in Path(path).read_text().split()], dtype=float)
