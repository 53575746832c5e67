"""Model-space inference: Rao-Blackwellized marginal likelihoods, full
enumeration, three samplers for the missing-data posterior, and the
shared-versus-fresh imputation benchmark.

Targets and estimators
----------------------
The quantity attached to each model is the average of the closed-form
complete-data marginal likelihood over draws of (parameters, missing
cells) given the observed covariates; averaging the analytic conditional
marginal instead of raw simulation output is the Rao-Blackwellization.
Posterior model probabilities follow by normalizing the averaged
marginals times the model prior over the model space (enumeration) or over
the visited models (the renormalized estimator). Visit frequencies give
the alternative frequency estimator; renormalizing over a strict subset
of models underestimates the normalizing constant, so the renormalized
probabilities of visited models are biased upward, which is exactly what
the bias diagnostic measures.

Sampler notes
-------------
``mc3_complete`` is Metropolis-Hastings over models with the regression
block integrated out (collapsed), for a fixed complete covariate matrix.

``sias_embedded`` runs a joint chain over (model, missing cells,
covariate parameters). Each iteration advances an internal
data-augmentation chain one sweep and uses its state as an independence
proposal for (parameters, missing cells) alongside the model-move
proposal. Writing the target as

    f(y | X, model, params) * prior(model) * p(X_miss | X_obs, params)
                            * p(params | X_obs)

and the proposal as q(model* | model) * p(params* | X_obs)
* p(X_miss* | X_obs, params*), the last two proposal factors cancel the
matching target factors, leaving the marginal-likelihood ratio times the
model-prior and proposal-count ratio. The sweep-based proposal is an
approximation to an exact independent draw from p(params | X_obs); one
sweep per iteration keeps the proposal chain ergodic and the
approximation is flagged here rather than hidden.

``gibbs_informed`` is a partially collapsed Gibbs sampler with fixed
block order: (1) model given response and completed covariates with the
regression block collapsed, (2) regression block from its exact
conditional, (3) covariate parameters given the completed matrix,
(4) missing cells given everything, including the response. Reinstating
the regression block immediately after the collapsed model move is what
keeps the stationary law correct. Step (3) is the exact conditional
under the classical and fractional variants; under the imputation
variant the marginal likelihood also involves the covariate covariance,
so step (3) ignores that weak dependence and the chain is approximate.

``its_two_stage`` materializes J completed datasets, runs a complete-data
chain on each, and pools the per-dataset frequency estimates with equal
weights (each completed dataset is one draw from the imputation
posterior).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .datamodel import Dataset, ModelIndex
from .gauss import _chol_fast, _spd_solve, _tri_solve
from .impute import (
    DaChain,
    ImputationStream,
    StreamConfig,
    _impute_into_given_y,
    _run_da,
    completed_x,
    default_niw_prior,
    draw_params_conjugate,
)
from .priors import (
    Classical,
    GPriorVariant,
    Imputation,
    InducedFractional,
    ModelPrior,
    SingularModelError,
    Uniform,
    log_marginal_safe,
    log_model_prior,
    resolve_g,
)

__all__ = [
    "RbEstimate",
    "ModelRecord",
    "PosteriorSummary",
    "McmcConfig",
    "ChainOutput",
    "BenchmarkReport",
    "PartialResultError",
    "rb_marginal",
    "enumerate_models",
    "mc3_complete",
    "its_two_stage",
    "sias_embedded",
    "gibbs_informed",
    "estimate_probs",
    "variance_benchmark",
    "batch_means_se",
    "effective_sample_size",
]


def _sig12(x: float) -> float:
    return float(f"{x:.12g}")


def batch_means_se(x: Sequence[float]) -> float:
    """Standard error of the mean of a correlated sequence by batch means."""
    arr = np.asarray(x, dtype=float)
    n = arr.size
    if n < 4:
        return math.inf
    b = int(math.sqrt(n))
    width = n // b
    means = arr[: b * width].reshape(b, width).mean(axis=1)
    return float(np.sqrt(means.var(ddof=1) / b))


def effective_sample_size(x: Sequence[float]) -> float:
    """ESS via the initial-positive-sequence truncation of the autocorrelation."""
    arr = np.asarray(x, dtype=float)
    n = arr.size
    if n < 4:
        return float(n)
    centered = arr - arr.mean()
    if np.all(centered == 0.0):
        return float(n)
    size = 1 << int(2 * n - 1).bit_length()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    total = 0.0
    for k in range(1, n // 2):
        pair = rho[2 * k - 1] + (rho[2 * k] if 2 * k < n else 0.0)
        if pair < 0:
            break
        total += pair
    return float(n / (1.0 + 2.0 * total))


@dataclass(frozen=True)
class RbEstimate:
    """Log of the J-draw average marginal likelihood plus its batch-means
    standard error on the log scale."""

    log_mhat: float
    mc_se: float
    j_used: int
    degenerate: bool = False


def rb_marginal(
    gamma: ModelIndex,
    dataset: Dataset,
    stream: ImputationStream,
    variant: GPriorVariant,
) -> RbEstimate:
    """Average the closed-form marginal over the stream's imputation draws.

    With complete data and a variant that only reads the completed matrix
    the average is a single exact evaluation (zero Monte Carlo error);
    the imputation variant still averages over the covariance draws.
    """
    draws, completed = stream.completed_for(gamma)
    j = len(draws)
    if dataset.is_complete() and not isinstance(variant, Imputation):
        value = log_marginal_safe(dataset.y, completed[0], gamma, variant)
        return RbEstimate(value, 0.0, j, degenerate=not np.isfinite(value))
    needs_sigma = isinstance(variant, Imputation)
    values = np.array(
        [
            log_marginal_safe(
                dataset.y,
                completed[k],
                gamma,
                variant,
                sigma=draws[k].params.sigma if needs_sigma else None,
            )
            for k in range(j)
        ]
    )
    if np.all(np.isneginf(values)):
        return RbEstimate(-math.inf, math.inf, j, degenerate=True)
    log_mhat = float(logsumexp(values) - math.log(j))
    if j == 1:
        return RbEstimate(log_mhat, math.inf, 1)
    shift = values.max()
    weights = np.exp(values - shift)
    mean_w = weights.mean()
    se = batch_means_se(weights)
    mc_se = float(se / mean_w) if mean_w > 0 and np.isfinite(se) else math.inf
    return RbEstimate(log_mhat, mc_se, j)


@dataclass
class ModelRecord:
    model: ModelIndex
    log_marginal: float
    prob: float
    mc_se: float = math.nan


@dataclass
class PosteriorSummary:
    """Per-model probabilities plus per-variable inclusion probabilities."""

    records: list[ModelRecord]
    inclusion: np.ndarray
    method: str
    p: int

    def __post_init__(self):
        total = sum(r.prob for r in self.records)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"model probabilities sum to {total!r}, not 1")
        recomputed = self._inclusion_from_records()
        if np.max(np.abs(recomputed - np.asarray(self.inclusion))) > 1e-12:
            raise ValueError("inclusion probabilities inconsistent with the model table")

    def _inclusion_from_records(self) -> np.ndarray:
        incl = np.zeros(self.p)
        for r in self.records:
            incl += r.prob * np.asarray(r.model.bits, dtype=float)
        return incl

    def prob_of(self, model: ModelIndex) -> float:
        for r in self.records:
            if r.model == model:
                return r.prob
        return 0.0

    def modal_model(self) -> ModelIndex:
        best = max(r.prob for r in self.records)
        tied = [r.model for r in self.records if r.prob == best]
        return min(tied, key=lambda m: m.label())

    def prob_dict(self) -> dict[str, float]:
        return {r.model.label(): r.prob for r in self.records}

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "p": self.p,
            "modal_model": self.modal_model().label(),
            "models": [
                {
                    "gamma": r.model.label(),
                    "log_marginal": r.log_marginal,
                    "prob": _sig12(r.prob),
                    "mc_se": r.mc_se,
                }
                for r in self.records
            ],
            "inclusion": [_sig12(v) for v in self.inclusion],
        }

    def model_table_csv(self) -> str:
        lines = ["gamma_bits,log_marginal,prob,mc_se"]
        for r in self.records:
            lines.append(f"{r.model.label()},{r.log_marginal!r},{r.prob:.12g},{r.mc_se:.6g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_records(cls, records: list[ModelRecord], p: int, method: str) -> "PosteriorSummary":
        incl = np.zeros(p)
        for r in records:
            incl += r.prob * np.asarray(r.model.bits, dtype=float)
        return cls(records=records, inclusion=incl, method=method, p=p)


def enumerate_models(
    dataset: Dataset,
    stream: ImputationStream,
    variant: GPriorVariant,
    model_prior: ModelPrior = Uniform(),
    p_max_check: int = 20,
) -> PosteriorSummary:
    """Posterior over all 2^p models by normalizing the averaged marginals."""
    p = dataset.p
    if p > p_max_check:
        raise ValueError(
            f"p = {p} exceeds the enumeration cap {p_max_check}; use the mcmc samplers"
        )
    records = []
    log_posts = np.empty(2**p)
    for code in range(2**p):
        model = ModelIndex.from_int(p, code)
        est = rb_marginal(model, dataset, stream, variant)
        lp = est.log_mhat + log_model_prior(model, model_prior, p)
        log_posts[code] = lp
        records.append(ModelRecord(model=model, log_marginal=est.log_mhat, prob=0.0, mc_se=est.mc_se))
    norm = logsumexp(log_posts)
    if not np.isfinite(norm):
        raise ValueError("every model has marginal likelihood zero")
    probs = np.exp(log_posts - norm)
    for rec, pr in zip(records, probs):
        rec.prob = float(pr)
    return PosteriorSummary.from_records(records, p, "Enumerated")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int
    burnin: int = 0
    thin: int = 1
    proposal: str = "single-flip"
    proposal_weights: tuple[float, float, float] = (0.4, 0.4, 0.2)
    model_prior: ModelPrior = Uniform()
    seed: int = 0
    chains: int = 1
    init: Union[str, tuple] = "null"

    def __post_init__(self):
        if self.iterations <= self.burnin:
            raise ValueError("iterations must exceed burnin")
        if self.proposal not in ("single-flip", "add-delete-swap"):
            raise ValueError(f"unknown proposal kind {self.proposal!r}")
        if abs(sum(self.proposal_weights) - 1.0) > 1e-12:
            raise ValueError("proposal weights must sum to 1")


@dataclass
class ChainOutput:
    visited: list[ModelIndex]
    log_marginals: np.ndarray
    acceptance_rate: float
    seed: int
    p: int

    def __post_init__(self):
        self.log_marginals = np.asarray(self.log_marginals, dtype=float)
        if len(self.visited) != self.log_marginals.shape[0]:
            raise ValueError("one log marginal per recorded visit is required")

    def inclusion_trace(self) -> np.ndarray:
        return np.array([m.bits for m in self.visited], dtype=float)

    def to_json_dict(self) -> dict:
        return {
            "p": self.p,
            "seed": self.seed,
            "acceptance_rate": self.acceptance_rate,
            "visited": [m.label() for m in self.visited],
            "log_marginals": [float(v) for v in self.log_marginals],
        }


def _init_model(init, p: int) -> ModelIndex:
    if init == "null":
        return ModelIndex.null(p)
    if init == "full":
        return ModelIndex.full(p)
    return ModelIndex(bits=tuple(init))


def _propose_single_flip(gamma: ModelIndex, rng: np.random.Generator):
    j = int(rng.integers(gamma.p))
    return gamma.flip(j), 0.0


def _ads_move_weights(k: int, p: int, weights) -> dict[str, float]:
    avail = {}
    if k < p:
        avail["add"] = weights[0]
    if k > 0:
        avail["delete"] = weights[1]
    if 0 < k < p:
        avail["swap"] = weights[2]
    total = sum(avail.values())
    return {m: w / total for m, w in avail.items()}


def _propose_add_delete_swap(gamma: ModelIndex, weights, rng: np.random.Generator):
    p = gamma.p
    k = gamma.size
    moves = _ads_move_weights(k, p, weights)
    names = sorted(moves)
    cum = np.cumsum([moves[m] for m in names])
    u = rng.random()
    move = names[int(np.searchsorted(cum, u))]
    included = list(gamma.indices())
    excluded = [j for j in range(p) if gamma.bits[j] == 0]
    if move == "add":
        j = excluded[int(rng.integers(len(excluded)))]
        new = gamma.flip(j)
        log_fwd = math.log(moves["add"]) - math.log(len(excluded))
        rev = _ads_move_weights(k + 1, p, weights)
        log_rev = math.log(rev["delete"]) - math.log(k + 1)
    elif move == "delete":
        j = included[int(rng.integers(len(included)))]
        new = gamma.flip(j)
        log_fwd = math.log(moves["delete"]) - math.log(len(included))
        rev = _ads_move_weights(k - 1, p, weights)
        log_rev = math.log(rev["add"]) - math.log(p - k + 1)
    else:
        i = included[int(rng.integers(len(included)))]
        j = excluded[int(rng.integers(len(excluded)))]
        new = gamma.flip(i).flip(j)
        log_fwd = math.log(moves["swap"]) - math.log(k * (p - k))
        log_rev = log_fwd
    return new, log_rev - log_fwd


def _propose(gamma: ModelIndex, cfg: McmcConfig, rng: np.random.Generator):
    if cfg.proposal == "single-flip":
        return _propose_single_flip(gamma, rng)
    return _propose_add_delete_swap(gamma, cfg.proposal_weights, rng)


def _spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def mc3_complete(
    y: np.ndarray,
    x_complete: np.ndarray,
    cfg: McmcConfig,
    variant: GPriorVariant,
    sigma: Optional[np.ndarray] = None,
) -> ChainOutput:
    """Collapsed Metropolis-Hastings over models for complete covariates.

    Coefficients are never instantiated; the acceptance ratio is the
    marginal-likelihood ratio times the model prior and proposal ratio.
    Marginals are memoized per model, which is exact here because the
    covariate matrix never changes.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x_complete, dtype=float)
    p = x.shape[1]
    rng_model, _ = _spawn_rngs(cfg.seed, 2)
    memo: dict[int, float] = {}

    def marg(m: ModelIndex) -> float:
        code = m.as_int()
        if code not in memo:
            memo[code] = log_marginal_safe(y, x, m, variant, sigma=sigma)
        return memo[code]

    gamma = _init_model(cfg.init, p)
    log_m = marg(gamma)
    log_pi = log_model_prior(gamma, cfg.model_prior, p)
    visited: list[ModelIndex] = []
    marginals: list[float] = []
    accepts = 0
    for it in range(cfg.iterations):
        prop, log_q_diff = _propose(gamma, cfg, rng_model)
        log_m_prop = marg(prop)
        log_pi_prop = log_model_prior(prop, cfg.model_prior, p)
        log_ratio = (log_m_prop + log_pi_prop) - (log_m + log_pi) + log_q_diff
        u = rng_model.random()
        if math.log(u) < log_ratio:
            gamma, log_m, log_pi = prop, log_m_prop, log_pi_prop
            accepts += 1
        if it >= cfg.burnin and (it - cfg.burnin) % cfg.thin == 0:
            visited.append(gamma)
            marginals.append(log_m)
    return ChainOutput(
        visited=visited,
        log_marginals=np.asarray(marginals),
        acceptance_rate=accepts / cfg.iterations,
        seed=cfg.seed,
        p=p,
    )


class PartialResultError(RuntimeError):
    def __init__(self, failed: list[int], causes: list[str]):
        super().__init__(f"chains failed for imputed datasets {failed}: {causes}")
        self.failed = failed
        self.causes = causes


def _its_chain_seed(seed: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, j]).generate_state(1)[0])


def _its_worker(args) -> dict[str, float]:
    y, x, cfg, variant, sigma, model_prior = args
    chain = mc3_complete(y, x, cfg, variant, sigma=sigma)
    summary = estimate_probs(chain, "Frequency", model_prior)
    return summary.prob_dict()


def its_two_stage(
    dataset: Dataset,
    stream_cfg: StreamConfig,
    mcmc_cfg: McmcConfig,
    variant: GPriorVariant,
    workers: int = 1,
) -> PosteriorSummary:
    """Impute J completed datasets, run one complete-data chain on each,
    and pool the frequency estimates with equal weights.

    Chain j uses the seed derived from SeedSequence([mcmc seed, j]).
    """
    draws = _run_da(dataset, stream_cfg)
    needs_sigma = isinstance(variant, Imputation)
    jobs = []
    for j, draw in enumerate(draws):
        cfg_j = replace(mcmc_cfg, seed=_its_chain_seed(mcmc_cfg.seed, j))
        jobs.append(
            (
                dataset.y,
                completed_x(dataset, draw.x_miss),
                cfg_j,
                variant,
                draw.params.sigma if needs_sigma else None,
                mcmc_cfg.model_prior,
            )
        )
    results: list[Optional[dict[str, float]]] = [None] * len(jobs)
    failed, causes = [], []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for j, res in enumerate(pool.map(_its_worker, jobs)):
                results[j] = res
    else:
        for j, job in enumerate(jobs):
            try:
                results[j] = _its_worker(job)
            except Exception as exc:  # noqa: BLE001 - reported to the caller
                failed.append(j)
                causes.append(str(exc))
    if failed:
        raise PartialResultError(failed, causes)
    pooled: dict[str, float] = {}
    for res in results:
        for label, prob in res.items():
            pooled[label] = pooled.get(label, 0.0) + prob / len(results)
    records = [
        ModelRecord(model=ModelIndex(tuple(int(c) for c in label)), log_marginal=math.nan, prob=prob)
        for label, prob in sorted(pooled.items())
    ]
    return PosteriorSummary.from_records(records, dataset.p, "Frequency")


def sias_embedded(
    dataset: Dataset,
    cfg: McmcConfig,
    stream_cfg: StreamConfig,
    variant: GPriorVariant,
) -> ChainOutput:
    """Joint chain over (model, missing cells, covariate parameters); a
    fresh one-sweep imputation is proposed each iteration and accepted or
    rejected together with the model move.

    Model moves and acceptance draws come from one generator stream and
    the imputation machinery from another, so with complete data the
    trajectory is bit-identical to :func:`mc3_complete` under the same
    seed.
    """
    rng_model, rng_impute = _spawn_rngs(cfg.seed, 2)
    p = dataset.p
    complete = dataset.is_complete()
    chain = DaChain(dataset, stream_cfg.prior, rng_impute)
    for _ in range(stream_cfg.burnin):
        chain.sweep_fast()
    needs_sigma = isinstance(variant, Imputation)
    memo: dict[int, float] = {}

    def marg(m: ModelIndex, x: np.ndarray, params) -> float:
        if complete and not needs_sigma:
            code = m.as_int()
            if code not in memo:
                memo[code] = log_marginal_safe(dataset.y, x, m, variant)
            return memo[code]
        return log_marginal_safe(
            dataset.y, x, m, variant, sigma=params.sigma if needs_sigma else None
        )

    params_cur = chain.sweep_fast()
    x_cur = np.array(chain.x_complete)
    gamma = _init_model(cfg.init, p)
    log_m = marg(gamma, x_cur, params_cur)
    log_pi = log_model_prior(gamma, cfg.model_prior, p)
    visited: list[ModelIndex] = []
    marginals: list[float] = []
    accepts = 0
    for it in range(cfg.iterations):
        params_prop = chain.sweep_fast()
        x_prop = x_cur if complete else np.array(chain.x_complete)
        gamma_prop, log_q_diff = _propose(gamma, cfg, rng_model)
        log_m_prop = marg(gamma_prop, x_prop, params_prop)
        log_pi_prop = log_model_prior(gamma_prop, cfg.model_prior, p)
        log_ratio = (log_m_prop + log_pi_prop) - (log_m + log_pi) + log_q_diff
        u = rng_model.random()
        if math.log(u) < log_ratio:
            gamma, log_m, log_pi = gamma_prop, log_m_prop, log_pi_prop
            x_cur, params_cur = x_prop, params_prop
            accepts += 1
        if it >= cfg.burnin and (it - cfg.burnin) % cfg.thin == 0:
            visited.append(gamma)
            marginals.append(log_m)
    return ChainOutput(
        visited=visited,
        log_marginals=np.asarray(marginals),
        acceptance_rate=accepts / cfg.iterations,
        seed=cfg.seed,
        p=p,
    )


def _draw_coefficients(
    y: np.ndarray,
    x_complete: np.ndarray,
    gamma: ModelIndex,
    variant: GPriorVariant,
    rng: np.random.Generator,
    sigma: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray, float]:
    """Draw (intercept, included coefficients, error variance) from the
    exact conditional posterior for the given variant."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    k = gamma.size
    y_bar = y.mean()
    y_c = y - y_bar
    s_y = float(y_c @ y_c)
    g = resolve_g(variant, n)
    if k == 0:
        sigma2 = (s_y / 2.0) / rng.gamma((n - 1) / 2.0)
        alpha = y_bar + math.sqrt(sigma2 / n) * rng.standard_normal()
        return float(alpha), np.empty(0), float(sigma2)
    idx = gamma.indices()
    sub = np.asarray(x_complete, dtype=float)[:, idx]
    col_means = sub.mean(axis=0)
    x_c = sub - col_means
    gram = x_c.T @ x_c
    lower = _chol_fast(gram)
    b = x_c.T @ y_c
    if isinstance(variant, Classical):
        beta_hat = _spd_solve(lower, b)
        shrink = g / (1.0 + g)
        quad = s_y - shrink * float(b @ beta_hat)
        sigma2 = (quad / 2.0) / rng.gamma((n - 1) / 2.0)
        z = rng.standard_normal(k)
        beta = shrink * beta_hat + math.sqrt(sigma2 * shrink) * _tri_solve(lower, z, trans=1)
    elif isinstance(variant, Imputation):
        if sigma is None:
            raise ValueError("the imputation variant needs the covariate covariance draw")
        prec = gram + (n / g) * np.asarray(sigma)[np.ix_(idx, idx)]
        lower_a = _chol_fast(0.5 * (prec + prec.T))
        beta_bar = _spd_solve(lower_a, b)
        quad = s_y - float(b @ beta_bar)
        sigma2 = (quad / 2.0) / rng.gamma((n - 1) / 2.0)
        z = rng.standard_normal(k)
        beta = beta_bar + math.sqrt(sigma2) * _tri_solve(lower_a, z, trans=1)
    else:
        if n < k + 2:
            raise ValueError("need n >= p_gamma + 2 for the fractional conditional")
        beta_hat = _spd_solve(lower, b)
        rss = s_y - float(b @ beta_hat)
        sigma2 = (rss / 2.0) / rng.gamma((n - 1 - k) / 2.0)
        z = rng.standard_normal(k)
        beta = beta_hat + math.sqrt(sigma2) * _tri_solve(lower, z, trans=1)
    alpha_centered = y_bar + math.sqrt(sigma2 / n) * rng.standard_normal()
    alpha = alpha_centered - float(col_means @ beta)
    return float(alpha), beta, float(sigma2)


def gibbs_informed(
    dataset: Dataset,
    cfg: McmcConfig,
    stream_cfg: StreamConfig,
    variant: GPriorVariant,
) -> ChainOutput:
    """Partially collapsed Gibbs sweep: collapsed model move, regression
    block reinstated, covariate parameters updated, missing cells redrawn
    conditionally on the response."""
    rng_model, rng_gibbs = _spawn_rngs(cfg.seed, 2)
    p = dataset.p
    complete = dataset.is_complete()
    prior = stream_cfg.prior
    if prior is None:
        prior = default_niw_prior(dataset)
    needs_sigma = isinstance(variant, Imputation)
    col_means = dataset.observed_column_means()
    x_cur = np.array(dataset.x)
    for j in range(p):
        x_cur[~dataset.mask[:, j], j] = col_means[j]
    failures = [0]
    params = draw_params_conjugate(x_cur, prior, rng_gibbs, failures)
    gamma = _init_model(cfg.init, p)
    memo: dict[int, float] = {}

    def marg(m: ModelIndex, x: np.ndarray) -> float:
        if complete and not needs_sigma:
            code = m.as_int()
            if code not in memo:
                memo[code] = log_marginal_safe(dataset.y, x, m, variant)
            return memo[code]
        return log_marginal_safe(
            dataset.y, x, m, variant, sigma=params.sigma if needs_sigma else None
        )

    log_m = marg(gamma, x_cur)
    log_pi = log_model_prior(gamma, cfg.model_prior, p)
    visited: list[ModelIndex] = []
    marginals: list[float] = []
    accepts = 0
    for it in range(cfg.iterations):
        prop, log_q_diff = _propose(gamma, cfg, rng_model)
        log_m_prop = marg(prop, x_cur)
        log_pi_prop = log_model_prior(prop, cfg.model_prior, p)
        u = rng_model.random()
        if math.log(u) < (log_m_prop + log_pi_prop) - (log_m + log_pi) + log_q_diff:
            gamma, log_m, log_pi = prop, log_m_prop, log_pi_prop
            accepts += 1
        alpha, beta, sigma2 = _draw_coefficients(
            dataset.y, x_cur, gamma, variant, rng_gibbs,
            sigma=params.sigma if needs_sigma else None,
        )
        params = draw_params_conjugate(x_cur, prior, rng_gibbs, failures)
        if not complete:
            beta_full = np.zeros(p)
            beta_full[gamma.indices()] = beta
            _impute_into_given_y(dataset=dataset, x_out=x_cur, params=params,
                                 beta_full=beta_full, alpha=alpha, sigma2=sigma2,
                                 rng=rng_gibbs)
            log_m = marg(gamma, x_cur)
        if it >= cfg.burnin and (it - cfg.burnin) % cfg.thin == 0:
            visited.append(gamma)
            marginals.append(log_m)
    return ChainOutput(
        visited=visited,
        log_marginals=np.asarray(marginals),
        acceptance_rate=accepts / cfg.iterations,
        seed=cfg.seed,
        p=p,
    )


def estimate_probs(
    chain: ChainOutput,
    method: str,
    model_prior: ModelPrior = Uniform(),
    log_marginals: Optional[dict[int, float]] = None,
) -> PosteriorSummary:
    """Posterior model probabilities from a chain.

    ``Frequency`` uses visit relative frequencies (with a batch-means
    standard error per model). ``Renormalized`` normalizes marginal times
    prior over the distinct visited models; pass ``log_marginals``
    (model code -> value) to substitute recomputed averages for the
    per-visit values stored in the chain.
    """
    if not chain.visited:
        raise ValueError("empty chain")
    p = chain.p
    n_visits = len(chain.visited)
    codes = np.array([m.as_int() for m in chain.visited])
    distinct = sorted(set(codes.tolist()))
    if method == "Frequency":
        records = []
        for code in distinct:
            ind = (codes == code).astype(float)
            records.append(
                ModelRecord(
                    model=ModelIndex.from_int(p, code),
                    log_marginal=math.nan,
                    prob=float(ind.mean()),
                    mc_se=batch_means_se(ind),
                )
            )
        return PosteriorSummary.from_records(records, p, "Frequency")
    if method != "Renormalized":
        raise ValueError(f"unknown estimator {method!r}")
    log_posts = []
    models = []
    for code in distinct:
        model = ModelIndex.from_int(p, code)
        if log_marginals is not None:
            lm = log_marginals[code]
        else:
            vals = chain.log_marginals[codes == code]
            lm = float(logsumexp(vals) - math.log(vals.size))
        log_posts.append(lm + log_model_prior(model, model_prior, p))
        models.append((model, lm))
    log_posts = np.asarray(log_posts)
    norm = logsumexp(log_posts)
    probs = np.exp(log_posts - norm)
    records = [
        ModelRecord(model=m, log_marginal=lm, prob=float(pr))
        for (m, lm), pr in zip(models, probs)
    ]
    return PosteriorSummary.from_records(records, p, "Renormalized")


@dataclass
class BenchmarkReport:
    """Per-model variance of enumeration probabilities under shared versus
    fresh imputation streams. Reported, not asserted: the shared-stream
    variance reduction is an expectation, not a theorem."""

    rows: list[dict]
    reps: int
    j: int

    CSV_HEADER = "gamma_bits,var_shared,var_fresh,ratio_shared_over_fresh"

    def to_csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for row in self.rows:
            lines.append(
                f"{row['gamma_bits']},{row['var_shared']:.12g},"
                f"{row['var_fresh']:.12g},{row['ratio_shared_over_fresh']:.12g}"
            )
        return "\n".join(lines) + "\n"


def variance_benchmark(
    dataset: Dataset,
    reps: int,
    j: int,
    variant: Optional[GPriorVariant] = None,
    model_prior: ModelPrior = Uniform(),
    burnin: int = 30,
    thin: int = 1,
    seed: int = 0,
    prior=None,
    p_max_check: int = 12,
) -> BenchmarkReport:
    """Empirical variance of posterior model probabilities across
    independent streams, shared mode versus fresh mode."""
    if reps < 2:
        raise ValueError("need at least 2 replicates")
    variant = variant if variant is not None else Classical()
    n_models = 2**dataset.p
    probs = {"shared": np.empty((reps, n_models)), "fresh": np.empty((reps, n_models))}
    for rep in range(reps):
        for tag, mode in (("shared", "shared"), ("fresh", "fresh")):
            rep_seed = int(
                np.random.SeedSequence([seed, rep, 0 if mode == "shared" else 1]).generate_state(1)[0]
            )
            cfg = StreamConfig(j=j, burnin=burnin, thin=thin, mode=mode, prior=prior, seed=rep_seed)
            stream = ImputationStream(dataset, cfg)
            summary = enumerate_models(dataset, stream, variant, model_prior, p_max_check)
            probs[tag][rep] = [rec.prob for rec in summary.records]
    rows = []
    for code in range(n_models):
        var_shared = float(probs["shared"][:, code].var(ddof=1))
        var_fresh = float(probs["fresh"][:, code].var(ddof=1))
        ratio = var_shared / var_fresh if var_fresh > 0 else math.nan
        rows.append(
            {
                "gamma_bits": ModelIndex.from_int(dataset.p, code).label(),
                "var_shared": var_shared,
                "var_fresh": var_fresh,
                "ratio_shared_over_fresh": ratio,
            }
        )
    return BenchmarkReport(rows=rows, reps=reps, j=j)
