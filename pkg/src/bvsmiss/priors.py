"""Model priors and closed-form log marginal likelihoods of the response.

All three variants integrate the regression block (intercept, included
coefficients, error variance) analytically given a completed covariate
matrix. The conventions, fixed here and relied on by every consumer:

* The intercept gets a flat prior and the error variance the density
  1/sigma^2; covariate columns are centered inside each computation, so
  marginals are invariant to location shifts of X.
* ``classical``: coefficients are zero-centered normal with covariance
  ``g * sigma^2 * (Xc' Xc)^{-1}``, ``Xc`` the centered included columns.
  Up to a model-independent constant the log Bayes factor against the
  null is ``(n-1-k)/2 * log(1+g) - (n-1)/2 * log(1 + g(1-R^2))``.
* ``imputation``: same integral with prior covariance
  ``g * sigma^2 * (n * S_gg)^{-1}`` where ``S_gg`` is the population
  covariance submatrix of the included columns. The factor n makes
  ``g = n`` unit-information scaling and makes the variant collapse onto
  the classical one when ``S_gg`` equals the sample covariance
  ``Xc' Xc / n``.
* ``induced``: the fractional marginal obtained by training the
  improper prior on a fraction ``g`` of the likelihood and integrating
  the remaining ``1 - g`` fraction against the trained prior
  (coefficients normal at the least-squares fit with precision scale
  ``g * Xc' Xc``; the error precision gamma with shape ``(gn+k)/2`` and
  rate ``g * RSS / 2``). Centering both y and X stands in for the free
  mean, with no extra degrees-of-freedom adjustment; this is the exact
  convention under which the graph-factorized fractional marginal in
  :mod:`bvsmiss.graphs` reproduces these values.

Rank-deficient included columns raise :class:`SingularModelError`;
:func:`log_marginal_safe` maps that to ``-inf`` so enumeration and MCMC
can treat such models as having probability zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import betaln, gammaln

from .datamodel import ModelIndex
from .gauss import NotSpdError, _chol_fast, _spd_solve, cholesky_logdet

__all__ = [
    "Classical",
    "Imputation",
    "InducedFractional",
    "GPriorVariant",
    "Uniform",
    "BetaBinomial",
    "ModelPrior",
    "SingularModelError",
    "resolve_g",
    "log_marginal_classical",
    "log_marginal_imputation",
    "log_marginal_induced",
    "induced_fractional_prior",
    "log_marginal",
    "log_marginal_safe",
    "log_model_prior",
]

LOG_PI = math.log(math.pi)


class SingularModelError(ValueError):
    """Included columns are linearly dependent after centering."""


@dataclass(frozen=True)
class Classical:
    g: Optional[float] = None  # defaults to n at call time


@dataclass(frozen=True)
class Imputation:
    g: Optional[float] = None  # defaults to n at call time


@dataclass(frozen=True)
class InducedFractional:
    g: Optional[float] = None  # defaults to 1/n at call time


GPriorVariant = Union[Classical, Imputation, InducedFractional]


@dataclass(frozen=True)
class Uniform:
    pass


@dataclass(frozen=True)
class BetaBinomial:
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("beta-binomial parameters must be positive")


ModelPrior = Union[Uniform, BetaBinomial]


def resolve_g(variant: GPriorVariant, n: int) -> float:
    """Fill in the default g (n, or 1/n for the fractional variant)."""
    if isinstance(variant, InducedFractional):
        g = variant.g if variant.g is not None else 1.0 / n
        if not 0.0 < g < 1.0:
            raise ValueError(f"fractional g must lie in (0, 1), got {g}")
        return g
    g = variant.g if variant.g is not None else float(n)
    if g <= 0:
        raise ValueError(f"g must be positive, got {g}")
    return g


def _centered_response(y: np.ndarray) -> tuple[np.ndarray, float]:
    y = np.asarray(y, dtype=float)
    y_c = y - y.mean()
    s_y = float(y_c @ y_c)
    if s_y <= 0.0:
        raise ValueError("response is constant; marginal likelihoods are undefined")
    return y_c, s_y


def _centered_design(x_complete: np.ndarray, idx: np.ndarray) -> np.ndarray:
    sub = np.asarray(x_complete, dtype=float)[:, idx]
    return sub - sub.mean(axis=0)


def _gram(x_c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gram = x_c.T @ x_c
    try:
        lower = _chol_fast(gram)
    except np.linalg.LinAlgError:
        raise SingularModelError("centered design is rank deficient") from None
    return gram, lower


def log_marginal_classical(
    y: np.ndarray, x_complete: np.ndarray, gamma: ModelIndex, g: float
) -> float:
    """Exact log marginal under the classical g-prior, constants included."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    k = gamma.size
    if n < k + 2:
        raise ValueError(f"need n >= p_gamma + 2, got n = {n}, p_gamma = {k}")
    y_c, s_y = _centered_response(y)
    base = (
        gammaln((n - 1) / 2.0)
        - 0.5 * (n - 1) * LOG_PI
        - 0.5 * math.log(n)
        - 0.5 * (n - 1) * math.log(s_y)
    )
    if k == 0:
        return float(base)
    x_c = _centered_design(x_complete, gamma.indices())
    _, lower = _gram(x_c)
    b = x_c.T @ y_c
    beta_hat = _spd_solve(lower, b)
    r2 = float(b @ beta_hat) / s_y
    r2 = min(max(r2, 0.0), 1.0)
    return float(
        base + 0.5 * (n - 1 - k) * math.log1p(g) - 0.5 * (n - 1) * math.log1p(g * (1.0 - r2))
    )


def log_marginal_imputation(
    y: np.ndarray,
    x_complete: np.ndarray,
    gamma: ModelIndex,
    sigma: np.ndarray,
    g: float,
) -> float:
    """Log marginal with prior coefficient covariance ``g sigma^2 (n S_gg)^{-1}``.

    ``sigma`` is the current draw of the covariate covariance; only the
    included submatrix is used. Setting it to the sample covariance of
    the centered included columns recovers the classical value exactly.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    k = gamma.size
    if n < k + 2:
        raise ValueError(f"need n >= p_gamma + 2, got n = {n}, p_gamma = {k}")
    y_c, s_y = _centered_response(y)
    head = gammaln((n - 1) / 2.0) - 0.5 * (n - 1) * LOG_PI - 0.5 * math.log(n)
    if k == 0:
        return float(head - 0.5 * (n - 1) * math.log(s_y))
    idx = gamma.indices()
    x_c = _centered_design(x_complete, idx)
    gram, _ = _gram(x_c)
    sub = np.asarray(sigma, dtype=float)[np.ix_(idx, idx)]
    _, logdet_ns = cholesky_logdet(n * sub)
    prec = gram + (n / g) * sub
    lower_a, logdet_a = cholesky_logdet(0.5 * (prec + prec.T))
    b = x_c.T @ y_c
    beta_bar = _spd_solve(lower_a, b)
    quad = s_y - float(b @ beta_bar)
    if quad <= 0.0:
        raise ValueError("posterior sum of squares is non-positive; data are degenerate")
    logdet_v = k * math.log(g) - logdet_ns
    return float(head - 0.5 * (logdet_v + logdet_a) - 0.5 * (n - 1) * math.log(quad))


def induced_fractional_prior(
    y: np.ndarray, x_gamma: np.ndarray, g: float
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Parameters of the trained fractional prior for one model.

    Returns ``(beta_hat, precision_scale, shape, rate)``: coefficients
    are normal with mean ``beta_hat`` and precision
    ``precision_scale / sigma^2`` where ``precision_scale = g * Xc'Xc``,
    and the error precision is gamma with the returned shape and rate.
    Both y and the columns of ``x_gamma`` are centered first.
    """
    if not 0.0 < g < 1.0:
        raise ValueError(f"fractional g must lie in (0, 1), got {g}")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x_gamma, dtype=float)
    n, k = x.shape
    if n <= k:
        raise ValueError(f"need n > p_gamma, got n = {n}, p_gamma = {k}")
    y_c, s_y = _centered_response(y)
    x_c = x - x.mean(axis=0)
    _, lower = _gram(x_c)
    beta_hat = _spd_solve(lower, x_c.T @ y_c)
    rss = s_y - float((x_c.T @ y_c) @ beta_hat)
    if rss <= 1e-12 * s_y:
        raise ValueError("residual sum of squares is zero; the trained prior is degenerate")
    return beta_hat, g * (x_c.T @ x_c), (g * n + k) / 2.0, g * rss / 2.0


def log_marginal_induced(
    y: np.ndarray, x_complete: np.ndarray, gamma: ModelIndex, g: float
) -> float:
    """Fractional marginal: the (1-g)-power likelihood integrated against
    the trained prior.

    Closed form:
    ``-(1-g)n/2 log(pi) + (gn + 2k)/2 log(g) + lgamma((n+k)/2)
    - lgamma((gn+k)/2) - (1-g)n/2 log(RSS)``.
    """
    if not 0.0 < g < 1.0:
        raise ValueError(f"fractional g must lie in (0, 1), got {g}")
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    k = gamma.size
    if n <= k:
        raise ValueError(f"need n > p_gamma, got n = {n}, p_gamma = {k}")
    # Values with n(1-g) <= p_gamma are dominated by the trained prior and
    # carry little test information, but the formula stays finite, so the
    # g -> 1 limit (all fractional Bayes factors -> 1) remains computable.
    y_c, s_y = _centered_response(y)
    if k == 0:
        rss = s_y
    else:
        x_c = _centered_design(x_complete, gamma.indices())
        _, lower = _gram(x_c)
        b = x_c.T @ y_c
        beta_hat = _spd_solve(lower, b)
        rss = s_y - float(b @ beta_hat)
        if rss <= 0.0:
            raise ValueError("perfect fit: fractional marginal diverges")
    return float(
        -0.5 * (1.0 - g) * n * LOG_PI
        + 0.5 * (g * n + 2 * k) * math.log(g)
        + gammaln((n + k) / 2.0)
        - gammaln((g * n + k) / 2.0)
        - 0.5 * (1.0 - g) * n * math.log(rss)
    )


def log_marginal(
    y: np.ndarray,
    x_complete: np.ndarray,
    gamma: ModelIndex,
    variant: GPriorVariant,
    sigma: Optional[np.ndarray] = None,
) -> float:
    """Dispatch on the g-prior variant, resolving the default g from n."""
    g = resolve_g(variant, np.asarray(y).shape[0])
    if isinstance(variant, Classical):
        return log_marginal_classical(y, x_complete, gamma, g)
    if isinstance(variant, Imputation):
        if sigma is None:
            raise ValueError("the imputation variant needs the covariate covariance draw")
        return log_marginal_imputation(y, x_complete, gamma, sigma, g)
    return log_marginal_induced(y, x_complete, gamma, g)


def log_marginal_safe(
    y: np.ndarray,
    x_complete: np.ndarray,
    gamma: ModelIndex,
    variant: GPriorVariant,
    sigma: Optional[np.ndarray] = None,
) -> float:
    """Like :func:`log_marginal` but maps rank-deficient models to -inf."""
    try:
        return log_marginal(y, x_complete, gamma, variant, sigma=sigma)
    except SingularModelError:
        return -math.inf


def log_model_prior(gamma: ModelIndex, prior: ModelPrior, p: int) -> float:
    if isinstance(prior, Uniform):
        return -p * math.log(2.0)
    k = gamma.size
    return float(betaln(prior.a + k, prior.b + p - k) - betaln(prior.a, prior.b))
