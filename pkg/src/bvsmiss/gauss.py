"""Dense Gaussian linear algebra and conjugate-family samplers.

Everything is Cholesky based: linear systems go through triangular
factors and matrices are never inverted explicitly. SPD inputs are
validated on entry; relative asymmetry above ``SYM_RTOL`` or a
non-positive pivot raises :class:`NotSpdError`. The one sanctioned
escape hatch is :func:`jitter_spd`, meant only for proposal repair
inside MCMC loops, and it logs every use.

Wishart-type conventions used throughout the package:

* ``sample_inverse_wishart(df, scale)`` draws ``S`` with density
  proportional to ``|S|^{-(df+d+1)/2} exp(-tr(S^{-1} scale)/2)``, so
  ``E[S] = scale / (df - d - 1)`` for ``df > d + 1``.
* ``wishart_log_normalizer(df, d)`` is
  ``log Gamma_d(df/2) + (df*d/2)*log 2``, the multivariate-gamma part of
  the Wishart integral; the graph module builds every clique and
  separator constant from it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotrs, dtrtrs
from scipy.special import multigammaln

__all__ = [
    "NotSpdError",
    "NiwParams",
    "cholesky_logdet",
    "conditional_normal",
    "sample_mvn",
    "sample_inverse_wishart",
    "sample_niw",
    "niw_posterior",
    "wishart_log_normalizer",
    "jitter_spd",
]

log = logging.getLogger(__name__)

SYM_RTOL = 1e-12


class NotSpdError(ValueError):
    """Matrix failed a symmetry or positive-definiteness check."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


def _check_symmetric(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSpdError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    skew = float(np.abs(a - a.T).max())
    if skew > SYM_RTOL * scale:
        raise NotSpdError(f"matrix is not symmetric: max |a - a.T| = {skew:.3e}")


def _first_bad_pivot(a: np.ndarray) -> int:
    # Plain outer-product elimination, only run on the failure path.
    m = np.array(a, dtype=float)
    for k in range(m.shape[0]):
        if m[k, k] <= 0.0 or not np.isfinite(m[k, k]):
            return k
        m[k + 1 :, k + 1 :] -= np.outer(m[k + 1 :, k], m[k + 1 :, k]) / m[k, k]
    return m.shape[0] - 1


def cholesky_logdet(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor and log-determinant of an SPD matrix."""
    a = np.asarray(a, dtype=float)
    _check_symmetric(a)
    try:
        lower = cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        pivot = _first_bad_pivot(a)
        raise NotSpdError(
            f"matrix is not positive definite (first bad pivot at index {pivot})",
            pivot=pivot,
        ) from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return lower, logdet


# Low-overhead internal helpers for the samplers' hot loops. They assume
# symmetric-by-construction input (np.linalg.LinAlgError signals failure)
# and stay Cholesky based like everything else.


def _chol_fast(a: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(a)


def _spd_solve(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given the lower Cholesky factor of A."""
    flat = b.ndim == 1
    x, info = dpotrs(lower, b if not flat else b[:, None], lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dpotrs failed with info = {info}")
    return x[:, 0] if flat else x


def _tri_solve(lower: np.ndarray, b: np.ndarray, trans: int = 0) -> np.ndarray:
    """Solve L x = b (trans=0) or L^T x = b (trans=1) for lower-triangular L."""
    flat = b.ndim == 1
    x, info = dtrtrs(lower, b if not flat else b[:, None], lower=1, trans=trans)
    if info != 0:
        raise np.linalg.LinAlgError(f"dtrtrs failed with info = {info}")
    return x[:, 0] if flat else x


def _logdet_from_chol(lower: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(lower))))


def _sample_iw_fast(df: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw without the validation layer; same construction
    as :func:`sample_inverse_wishart`."""
    d = scale.shape[0]
    t = np.linalg.cholesky(scale)
    bart = np.zeros((d, d))
    bart[np.diag_indices(d)] = np.sqrt(rng.chisquare(df - np.arange(d)))
    if d > 1:
        tril = np.tril_indices(d, k=-1)
        bart[tril] = rng.standard_normal(len(tril[0]))
    g = _tri_solve(bart, t.T)
    out = g.T @ g
    return 0.5 * (out + out.T)


def jitter_spd(a: np.ndarray) -> np.ndarray:
    """Add ``delta * I`` with ``delta = 1e-10 * trace/d``.

    For proposal repair inside MCMC only; every call is logged.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    delta = 1e-10 * float(np.trace(a)) / d
    if delta <= 0.0:
        delta = 1e-12
    log.warning("jitter_spd: adding %.3e * I to a %dx%d matrix", delta, d, d)
    return a + delta * np.eye(d)


def conditional_normal(
    mu: np.ndarray,
    sigma: np.ndarray,
    obs_idx: np.ndarray,
    obs_vals: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the unobserved block given the observed one.

    ``obs_idx`` must be a nonempty proper subset of ``range(d)``; the
    degenerate cases (nothing observed, everything observed) are the
    caller's business. The returned covariance is a Schur complement and
    therefore SPD; it does not depend on ``obs_vals``.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    d = mu.shape[0]
    obs_idx = np.asarray(obs_idx, dtype=int)
    if obs_idx.size == 0 or obs_idx.size >= d:
        raise ValueError("obs_idx must be a nonempty proper subset of the coordinates")
    rest = np.setdiff1d(np.arange(d), obs_idx)
    s_bb = sigma[np.ix_(obs_idx, obs_idx)]
    s_ba = sigma[np.ix_(obs_idx, rest)]
    l_bb, _ = cholesky_logdet(s_bb)
    w = solve_triangular(l_bb, s_ba, lower=True)
    u = solve_triangular(l_bb, np.asarray(obs_vals, dtype=float) - mu[obs_idx], lower=True)
    mean = mu[rest] + w.T @ u
    cov = sigma[np.ix_(rest, rest)] - w.T @ w
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def sample_mvn(mu: np.ndarray, sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw ``mu + L z`` with ``L`` the lower Cholesky factor of sigma."""
    mu = np.asarray(mu, dtype=float)
    lower, _ = cholesky_logdet(sigma)
    return mu + lower @ rng.standard_normal(mu.shape[0])


def sample_inverse_wishart(df: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw via a Bartlett factor of the Wishart on the inverse scale.

    Requires ``df > d - 1``. ``E[draw] = scale / (df - d - 1)`` when that
    mean exists.
    """
    scale = np.asarray(scale, dtype=float)
    d = scale.shape[0]
    if df <= d - 1:
        raise ValueError(f"inverse-Wishart needs df > d - 1 = {d - 1}, got df = {df}")
    t, _ = cholesky_logdet(scale)
    bart = np.zeros((d, d))
    chis = rng.chisquare(df - np.arange(d))
    bart[np.diag_indices(d)] = np.sqrt(chis)
    if d > 1:
        tril = np.tril_indices(d, k=-1)
        bart[tril] = rng.standard_normal(len(tril[0]))
    # precision = (T^{-T} A)(T^{-T} A)^T, so draw = G^T G with G = A^{-1} T^T.
    g = solve_triangular(bart, t.T, lower=True)
    out = g.T @ g
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class NiwParams:
    """Normal-inverse-Wishart parameters (m0, k0, v0, S0)."""

    m0: np.ndarray
    k0: float
    v0: float
    s0: np.ndarray

    def __post_init__(self):
        m0 = np.asarray(self.m0, dtype=float)
        s0 = np.asarray(self.s0, dtype=float)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "s0", s0)
        d = m0.shape[0]
        if self.k0 <= 0:
            raise ValueError(f"k0 must be positive, got {self.k0}")
        if self.v0 <= d - 1:
            raise ValueError(f"v0 must exceed d - 1 = {d - 1}, got {self.v0}")
        _check_symmetric(s0)

    @property
    def dim(self) -> int:
        return self.m0.shape[0]


def niw_posterior(x_complete: np.ndarray, prior: NiwParams) -> NiwParams:
    """Conjugate NIW update given fully observed rows."""
    x = np.asarray(x_complete, dtype=float)
    n, d = x.shape
    if n < 1:
        raise ValueError("need at least one row")
    if d != prior.dim:
        raise ValueError(f"data dimension {d} does not match prior dimension {prior.dim}")
    xbar = x.mean(axis=0)
    centered = x - xbar
    scatter = centered.T @ centered
    k = prior.k0 + n
    v = prior.v0 + n
    m = (prior.k0 * prior.m0 + n * xbar) / k
    dev = xbar - prior.m0
    s = prior.s0 + scatter + (prior.k0 * n / k) * np.outer(dev, dev)
    return NiwParams(m0=m, k0=k, v0=v, s0=0.5 * (s + s.T))


def sample_niw(params: NiwParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw (mu, sigma): sigma inverse-Wishart(v0, S0), mu normal(m0, sigma/k0)."""
    sigma = sample_inverse_wishart(params.v0, params.s0, rng)
    mu = sample_mvn(params.m0, sigma / params.k0, rng)
    return mu, sigma


def wishart_log_normalizer(df: float, dim: int) -> float:
    """``log Gamma_dim(df/2) + (df*dim/2) log 2``; domain ``df > dim - 1``."""
    if df <= dim - 1:
        raise ValueError(f"wishart_log_normalizer needs df > dim - 1 = {dim - 1}, got {df}")
    return float(multigammaln(df / 2.0, dim)) + 0.5 * df * dim * math.log(2.0)
