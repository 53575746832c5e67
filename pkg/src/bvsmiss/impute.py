"""Posterior simulation of the covariate-distribution parameters given the
observed cells, and conditional imputation of the missing ones.

The parameters (mean vector, covariance matrix) of the covariate
distribution have no closed-form posterior once cells are missing, so
they are simulated by data augmentation: each sweep draws the parameters
from their conjugate posterior given the currently completed matrix and
then redraws every missing cell from its pattern-wise conditional
normal. The response never enters this chain.

Retained draws are thinned Markov-chain output, not independent draws;
downstream averages remain consistent and their Monte Carlo error is
estimated by batch means in :mod:`bvsmiss.search`.

The default parameter prior is a weakly informative normal-inverse-
Wishart anchored at the observed column moments (k0 = 0.01,
v0 = p + 2, scale = diag of observed column variances). A Jeffreys
option (propto |Sigma|^{-(p+1)/2}) is available when n >> p.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.linalg.lapack import dpotri

from .datamodel import DataError, Dataset, MissingnessPattern, ModelIndex, group_patterns
from .gauss import (
    NiwParams,
    NotSpdError,
    _chol_fast,
    _sample_iw_fast,
    _spd_solve,
    _tri_solve,
    cholesky_logdet,
    jitter_spd,
    niw_posterior,
    sample_inverse_wishart,
    sample_mvn,
)

__all__ = [
    "MvnParams",
    "ImputationDraw",
    "StreamConfig",
    "ImputationStream",
    "default_niw_prior",
    "draw_params_conjugate",
    "DaChain",
    "da_gibbs_params",
    "draw_x_miss",
    "draw_x_miss_given_y",
    "make_stream",
    "completed_x",
    "export_stream_csv",
]


@dataclass(frozen=True)
class MvnParams:
    """One draw of the covariate-distribution parameters."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        cholesky_logdet(self.sigma)


@dataclass(frozen=True)
class ImputationDraw:
    params: MvnParams
    x_miss: dict  # (row, col) -> value, keys exactly the unobserved cells


@dataclass(frozen=True)
class StreamConfig:
    j: int
    burnin: int = 50
    thin: int = 1
    mode: str = "shared"
    prior: Union[NiwParams, str, None] = None  # None -> default NIW, "jeffreys" -> Jeffreys
    seed: int = 0

    def __post_init__(self):
        if self.j < 1:
            raise ValueError("j must be at least 1")
        if self.burnin < 0 or self.thin < 1:
            raise ValueError("burnin must be >= 0 and thin >= 1")
        if self.mode not in ("shared", "fresh"):
            raise ValueError(f"mode must be 'shared' or 'fresh', got {self.mode!r}")


def default_niw_prior(dataset: Dataset) -> NiwParams:
    variances = dataset.observed_column_variances()
    if np.any(variances <= 0):
        j = int(np.flatnonzero(variances <= 0)[0])
        raise DataError(f"column '{dataset.names[j]}' has zero observed variance")
    return NiwParams(
        m0=dataset.observed_column_means(),
        k0=0.01,
        v0=dataset.p + 2,
        s0=np.diag(variances),
    )


def completed_x(dataset: Dataset, x_miss: dict) -> np.ndarray:
    """Covariate matrix with the given values substituted at masked cells."""
    x = np.array(dataset.x)
    for (i, j), v in x_miss.items():
        x[i, j] = v
    if np.isnan(x).any():
        raise ValueError("x_miss does not cover every missing cell")
    return x


class _PatternPlan:
    """Precomputed index arrays and observed blocks for one pattern."""

    __slots__ = ("obs", "miss", "rows", "x_obs")

    def __init__(self, obs, miss, rows, x_obs):
        self.obs = obs
        self.miss = miss
        self.rows = rows
        self.x_obs = x_obs


def _impute_plan(dataset: Dataset) -> list[_PatternPlan]:
    cached = getattr(dataset, "_impute_plan_cache", None)
    if cached is not None:
        return cached
    plan = []
    for pattern in group_patterns(dataset):
        obs = np.asarray(pattern.observed, dtype=int)
        rows = np.asarray(pattern.rows, dtype=int)
        miss = np.setdiff1d(np.arange(dataset.p), obs)
        if miss.size == 0:
            continue
        x_obs = dataset.x[np.ix_(rows, obs)] if obs.size else np.empty((rows.size, 0))
        plan.append(_PatternPlan(obs, miss, rows, x_obs))
    dataset._impute_plan_cache = plan
    return plan


def _precision_of(params: MvnParams) -> np.ndarray:
    """Full precision matrix from the Cholesky factor of the covariance.

    Working in precision form makes each pattern's conditional a
    missing-block operation: the conditional covariance of the missing
    coordinates given the observed ones is the inverse of the
    missing-block precision submatrix.
    """
    lower = _chol_fast(params.sigma)
    inv, info = dpotri(lower, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dpotri failed with info = {info}")
    return inv + np.tril(inv, -1).T


def _pattern_conditional(params: MvnParams, lam: np.ndarray, plan: _PatternPlan):
    """Missing-block precision factor and per-row conditional means."""
    miss, obs = plan.miss, plan.obs
    lam_mm = lam[np.ix_(miss, miss)]
    chol_m = _chol_fast(lam_mm)
    if obs.size == 0:
        means = np.broadcast_to(params.mu[miss], (plan.rows.size, miss.size)).copy()
        return chol_m, lam_mm, None, None, means
    lam_mo = lam[np.ix_(miss, obs)]
    dev = plan.x_obs - params.mu[obs]
    means = params.mu[miss] - _spd_solve(chol_m, (dev @ lam_mo.T).T).T
    return chol_m, lam_mm, lam_mo, dev, means


def _impute_into(
    x_out: np.ndarray, dataset: Dataset, params: MvnParams, rng: np.random.Generator
) -> None:
    """Overwrite the missing cells of ``x_out`` with fresh conditional draws."""
    plans = _impute_plan(dataset)
    if not plans:
        return
    lam = _precision_of(params)
    for plan in plans:
        chol_m, _, _, _, means = _pattern_conditional(params, lam, plan)
        z = rng.standard_normal((plan.rows.size, plan.miss.size))
        x_out[np.ix_(plan.rows, plan.miss)] = means + _tri_solve(chol_m, z.T, trans=1).T


def _x_miss_dict(dataset: Dataset, x_complete: np.ndarray) -> dict:
    rows, cols = np.nonzero(~dataset.mask)
    return {
        (int(i), int(j)): float(x_complete[i, j]) for i, j in zip(rows.tolist(), cols.tolist())
    }


def draw_x_miss(dataset: Dataset, params: MvnParams, rng: np.random.Generator) -> ImputationDraw:
    """Draw every missing cell from its conditional normal given the row's
    observed cells; rows are independent given the parameters."""
    x = np.array(dataset.x)
    _impute_into(x, dataset, params, rng)
    return ImputationDraw(params=params, x_miss=_x_miss_dict(dataset, x))


def _informed_update(lam_mm, lam_mo, mu_miss, dev, b, resid, sigma2):
    """Precision-weighted combination of the covariate conditional with the
    regression likelihood, restricted to the missing block.

    The covariate conditional contributes precision ``lam_mm`` and linear
    term ``lam_mm mu_miss - lam_mo dev``; the likelihood adds ``b b'/s2``
    and ``b resid/s2``, nonzero only on coordinates in the model. Returns
    the posterior means (one row per data row) and the Cholesky factor of
    the posterior precision.
    """
    lam_post = lam_mm + np.outer(b, b) / sigma2
    chol_post = _chol_fast(0.5 * (lam_post + lam_post.T))
    h = mu_miss @ lam_mm.T + np.outer(resid, b) / sigma2
    if dev is not None:
        h = h - dev @ lam_mo.T
    post_means = _spd_solve(chol_post, h.T).T
    return post_means, chol_post


def draw_x_miss_given_y(
    dataset: Dataset,
    params: MvnParams,
    gamma: ModelIndex,
    alpha: float,
    beta_gamma: np.ndarray,
    sigma2: float,
    rng: np.random.Generator,
) -> ImputationDraw:
    """Impute missing cells from the conditional that also conditions on the
    response through the regression likelihood.

    ``beta_gamma`` is aligned with ``gamma.indices()``. Patterns whose
    missing coordinates all lie outside the model fall back to the plain
    conditional draw (the likelihood carries no information about them),
    reproducing :func:`draw_x_miss` bit for bit under the same generator
    state.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    beta_full = np.zeros(dataset.p)
    beta_full[gamma.indices()] = np.asarray(beta_gamma, dtype=float)
    x = np.array(dataset.x)
    _impute_into_given_y(x, dataset, params, beta_full, alpha, sigma2, rng)
    return ImputationDraw(params=params, x_miss=_x_miss_dict(dataset, x))


def _impute_into_given_y(
    x_out: np.ndarray,
    dataset: Dataset,
    params: MvnParams,
    beta_full: np.ndarray,
    alpha: float,
    sigma2: float,
    rng: np.random.Generator,
) -> None:
    plans = _impute_plan(dataset)
    if not plans:
        return
    lam = _precision_of(params)
    for plan in plans:
        chol_m, lam_mm, lam_mo, dev, means = _pattern_conditional(params, lam, plan)
        b = beta_full[plan.miss]
        z = rng.standard_normal((plan.rows.size, plan.miss.size))
        if np.all(b == 0.0):
            draws = means + _tri_solve(chol_m, z.T, trans=1).T
        else:
            obs_contrib = plan.x_obs @ beta_full[plan.obs] if plan.obs.size else 0.0
            resid = dataset.y[plan.rows] - alpha - obs_contrib
            post_means, chol_post = _informed_update(
                lam_mm, lam_mo, params.mu[plan.miss], dev, b, resid, sigma2
            )
            draws = post_means + _tri_solve(chol_post, z.T, trans=1).T
        x_out[np.ix_(plan.rows, plan.miss)] = draws


def draw_params_conjugate(
    x_complete: np.ndarray,
    prior: Union[NiwParams, str, None],
    rng: np.random.Generator,
    _failures: list | None = None,
) -> MvnParams:
    """One conjugate posterior draw of (mu, sigma) given complete rows.

    SPD failures are repaired by jitter (logged); three consecutive
    failures across calls sharing a ``_failures`` counter abort.
    """
    x = np.asarray(x_complete, dtype=float)
    if prior == "jeffreys":
        if x.shape[0] <= x.shape[1]:
            raise DataError("the Jeffreys prior needs n > p")
        xbar = x.mean(axis=0)
        centered = x - xbar
        v, scale, m, k = x.shape[0] - 1, centered.T @ centered, xbar, x.shape[0]
    else:
        post = niw_posterior(x, prior)
        v, scale, m, k = post.v0, post.s0, post.m0, post.k0
    counter = _failures if _failures is not None else [0]
    while True:
        try:
            sigma = _sample_iw_fast(v, 0.5 * (scale + scale.T), rng)
            lower = _chol_fast(sigma)
            counter[0] = 0
            break
        except np.linalg.LinAlgError:
            counter[0] += 1
            if counter[0] >= 3:
                raise NotSpdError(
                    "three consecutive SPD failures while drawing covariate parameters"
                ) from None
            scale = jitter_spd(scale)
    mu = np.asarray(m) + (lower @ rng.standard_normal(sigma.shape[0])) / math.sqrt(k)
    return MvnParams(mu=mu, sigma=sigma)


class DaChain:
    """Data-augmentation chain over (parameters, missing cells).

    One sweep draws the parameters from the conjugate posterior given the
    completed matrix, then redraws the missing cells given the new
    parameters.
    """

    def __init__(self, dataset: Dataset, prior: Union[NiwParams, str, None], rng: np.random.Generator):
        self.dataset = dataset
        self.rng = rng
        if prior is None:
            prior = default_niw_prior(dataset)
        if prior == "jeffreys" and dataset.n <= dataset.p:
            raise DataError("the Jeffreys prior needs n > p")
        self.prior = prior
        self._failures = [0]
        col_means = dataset.observed_column_means()
        x = np.array(dataset.x)
        for j in range(dataset.p):
            x[~dataset.mask[:, j], j] = col_means[j]
        self.x_complete = x

    def sweep_fast(self) -> MvnParams:
        """One sweep updating the completed matrix in place."""
        params = draw_params_conjugate(self.x_complete, self.prior, self.rng, self._failures)
        _impute_into(self.x_complete, self.dataset, params, self.rng)
        return params

    def sweep(self) -> ImputationDraw:
        params = self.sweep_fast()
        return ImputationDraw(params=params, x_miss=_x_miss_dict(self.dataset, self.x_complete))


def _run_da(dataset: Dataset, cfg: StreamConfig, rng=None) -> list[ImputationDraw]:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    chain = DaChain(dataset, cfg.prior, rng)
    for _ in range(cfg.burnin):
        chain.sweep_fast()
    draws = []
    while len(draws) < cfg.j:
        draws.append(chain.sweep())
        for _ in range(cfg.thin - 1):
            chain.sweep_fast()
    return draws


def da_gibbs_params(dataset: Dataset, cfg: StreamConfig) -> list[MvnParams]:
    """Retained parameter draws from the data-augmentation chain."""
    return [d.params for d in _run_da(dataset, cfg)]


class ImputationStream:
    """Managed imputation draws.

    Shared mode materializes one list of draws and serves it to every
    model; fresh mode reruns the chain per model with a seed derived
    deterministically from (seed, model bits).
    """

    def __init__(self, dataset: Dataset, cfg: StreamConfig):
        self.dataset = dataset
        self.cfg = cfg
        self._shared: Optional[list[ImputationDraw]] = None
        self._shared_completed: Optional[list[np.ndarray]] = None

    def _ensure_shared(self):
        if self._shared is None:
            self._shared = _run_da(self.dataset, self.cfg)
            self._shared_completed = [completed_x(self.dataset, d.x_miss) for d in self._shared]

    def draws_for(self, gamma: ModelIndex) -> list[ImputationDraw]:
        if self.cfg.mode == "shared":
            self._ensure_shared()
            return self._shared
        seed = np.random.SeedSequence([self.cfg.seed, gamma.as_int()])
        rng = np.random.Generator(np.random.PCG64(seed))
        return _run_da(self.dataset, self.cfg, rng=rng)

    def completed_for(self, gamma: ModelIndex) -> tuple[list[ImputationDraw], list[np.ndarray]]:
        if self.cfg.mode == "shared":
            self._ensure_shared()
            return self._shared, self._shared_completed
        draws = self.draws_for(gamma)
        return draws, [completed_x(self.dataset, d.x_miss) for d in draws]


def make_stream(dataset: Dataset, cfg: StreamConfig) -> ImputationStream:
    return ImputationStream(dataset, cfg)


def export_stream_csv(dataset: Dataset, draws: list[ImputationDraw], outdir: str) -> list[str]:
    """One CSV per draw holding the completed covariate matrix."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for k, draw in enumerate(draws):
        x = completed_x(dataset, draw.x_miss)
        path = os.path.join(outdir, f"draw_{k:04d}.csv")
        with open(path, "w") as fh:
            fh.write(",".join(dataset.names) + "\n")
            for i in range(dataset.n):
                fh.write(",".join(repr(float(v)) for v in x[i]) + "\n")
        paths.append(path)
    return paths
