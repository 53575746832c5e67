"""Shared test utilities: independent Monte Carlo / quadrature oracles and
small statistical helpers.

Every oracle here deliberately avoids the library's closed-form code
paths: importance sampling evaluates raw integrands, the brute-force
averaged marginal uses its own vectorized sufficient-statistics algebra,
and quadrature integrates densities numerically.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, logsumexp

from bvsmiss.datamodel import Dataset, ModelIndex


def make_dataset(rng, n, p, beta=None, alpha=0.0, sigma2=1.0, miss_rate=0.0, rho=0.0):
    """Small synthetic dataset with optional MCAR mask (no empty rows)."""
    cov = (1 - rho) * np.eye(p) + rho * np.ones((p, p))
    x = rng.standard_normal((n, p)) @ np.linalg.cholesky(cov).T
    beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
    y = alpha + x @ beta + math.sqrt(sigma2) * rng.standard_normal(n)
    if miss_rate > 0.0:
        while True:
            mask = rng.random((n, p)) >= miss_rate
            if mask.any(axis=1).all() and (mask.sum(axis=0) >= 2).all():
                break
    else:
        mask = np.ones((n, p), dtype=bool)
    d = Dataset(
        y=y,
        x=np.where(mask, x, np.nan),
        mask=mask,
        names=tuple(f"x{j + 1}" for j in range(p)),
    )
    return d, x


def tv_distance(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def binomial_se(prob: float, n: int) -> float:
    return math.sqrt(max(prob * (1.0 - prob), 1e-12) / n)


def is_log_marginal_classical(y, x, gamma: ModelIndex, g: float, v_pre=None,
                              n_draws=200_000, seed=0):
    """Importance-sampling estimate of the classical/imputation marginal.

    Integrates f(y | a, b, s2) N(b; 0, g s2 V) s2^{-1} over (a, b, s2)
    where V defaults to (Xc'Xc)^{-1}; passing ``v_pre`` selects the
    imputation-prior covariance scale instead. Returns (log estimate,
    log-scale standard error).
    """
    rng = np.random.default_rng(seed)
    y = np.asarray(y, dtype=float)
    n = y.size
    idx = gamma.indices()
    k = idx.size
    y_bar = y.mean()
    y_c = y - y_bar
    s_y = float(y_c @ y_c)
    if k == 0:
        x_c = np.empty((n, 0))
        gram = np.empty((0, 0))
        rss = s_y
        beta_tilde = np.empty(0)
        a_post = np.empty((0, 0))
    else:
        sub = np.asarray(x, dtype=float)[:, idx]
        x_c = sub - sub.mean(axis=0)
        gram = x_c.T @ x_c
        v = np.linalg.inv(gram) if v_pre is None else v_pre
        a_post = gram + np.linalg.inv(v) / g
        beta_tilde = np.linalg.solve(a_post, x_c.T @ y_c)
        rss = s_y - float((x_c.T @ y_c) @ np.linalg.solve(gram, x_c.T @ y_c))
        prior_prec = np.linalg.inv(v)
        sign, logdet_v = np.linalg.slogdet(v)
    # proposal: s2 inverse-gamma-ish (heavier shape), then b and a normal
    shape_q = max(0.7 * (n - k - 1) / 2.0, 1.5)
    rate_q = max(rss, 1e-3 * s_y) / 2.0
    s2 = rate_q / rng.gamma(shape_q, size=n_draws)
    a_draw = y_bar + np.sqrt(2.0 * s2 / n) * rng.standard_normal(n_draws)
    log_q = (
        shape_q * math.log(rate_q)
        - gammaln(shape_q)
        - (shape_q + 1.0) * np.log(s2)
        - rate_q / s2
    )
    log_q += -0.5 * np.log(4.0 * math.pi * s2 / n) - (a_draw - y_bar) ** 2 / (4.0 * s2 / n)
    if k:
        l_a = np.linalg.cholesky(np.linalg.inv(a_post))
        z = rng.standard_normal((n_draws, k))
        b_draw = beta_tilde + np.sqrt(2.0 * s2)[:, None] * (z @ l_a.T)
        dev = b_draw - beta_tilde
        quad_q = np.einsum("si,ij,sj->s", dev, a_post, dev)
        sign_a, logdet_ainv = np.linalg.slogdet(np.linalg.inv(a_post))
        log_q += (
            -0.5 * k * np.log(4.0 * math.pi * s2)
            - 0.5 * logdet_ainv
            - quad_q / (4.0 * s2)
        )
        mean_term = a_draw[:, None] + b_draw @ x_c.T
        quad_prior = np.einsum("si,ij,sj->s", b_draw, prior_prec, b_draw)
        log_prior_b = (
            -0.5 * k * np.log(2.0 * math.pi * g * s2)
            - 0.5 * logdet_v
            - quad_prior / (2.0 * g * s2)
        )
    else:
        mean_term = a_draw[:, None]
        log_prior_b = 0.0
    resid = y[None, :] - mean_term
    log_f = -0.5 * n * np.log(2.0 * math.pi * s2) - np.sum(resid**2, axis=1) / (2.0 * s2)
    log_w = log_f + log_prior_b - np.log(s2) - log_q
    return _log_mean_and_se(log_w)


def is_log_marginal_induced(y, x, gamma: ModelIndex, g: float, n_draws=200_000, seed=0):
    """Importance-sampling estimate of the fractional marginal: the
    (1-g)-power likelihood of the centered data integrated against the
    trained prior (normal coefficients at the least-squares fit, gamma
    error precision)."""
    rng = np.random.default_rng(seed)
    y = np.asarray(y, dtype=float)
    n = y.size
    idx = gamma.indices()
    k = idx.size
    y_c = y - y.mean()
    s_y = float(y_c @ y_c)
    if k:
        sub = np.asarray(x, dtype=float)[:, idx]
        x_c = sub - sub.mean(axis=0)
        gram = x_c.T @ x_c
        beta_hat = np.linalg.solve(gram, x_c.T @ y_c)
        rss = s_y - float((x_c.T @ y_c) @ beta_hat)
    else:
        x_c = np.empty((n, 0))
        beta_hat = np.empty(0)
        rss = s_y
    shape_pr, rate_pr = (g * n + k) / 2.0, g * rss / 2.0
    shape_q, rate_q = 0.8 * (n + k) / 2.0, 0.8 * rss / 2.0
    phi = rng.gamma(shape_q, size=n_draws) / rate_q
    log_q = (
        shape_q * math.log(rate_q) - gammaln(shape_q)
        + (shape_q - 1.0) * np.log(phi) - rate_q * phi
    )
    log_prior = (
        shape_pr * math.log(rate_pr) - gammaln(shape_pr)
        + (shape_pr - 1.0) * np.log(phi) - rate_pr * phi
    )
    if k:
        l_g = np.linalg.cholesky(np.linalg.inv(gram))
        z = rng.standard_normal((n_draws, k))
        b_draw = beta_hat + np.sqrt(2.0 / phi)[:, None] * (z @ l_g.T)
        dev = b_draw - beta_hat
        quad = np.einsum("si,ij,sj->s", dev, gram, dev)
        sign, logdet_ginv = np.linalg.slogdet(np.linalg.inv(gram))
        log_q += -0.5 * k * np.log(4.0 * math.pi / phi) - 0.5 * logdet_ginv - quad * phi / 4.0
        log_prior += (
            -0.5 * k * np.log(2.0 * math.pi / (g * phi))
            - 0.5 * logdet_ginv
            - quad * g * phi / 2.0
        )
        resid = y_c[None, :] - b_draw @ x_c.T
    else:
        resid = np.broadcast_to(y_c, (n_draws, n))
    log_f = 0.5 * n * (np.log(phi) - math.log(2.0 * math.pi)) - phi * np.sum(resid**2, axis=1) / 2.0
    log_w = (1.0 - g) * log_f + log_prior - log_q
    return _log_mean_and_se(log_w)


def _log_mean_and_se(log_w: np.ndarray):
    shift = log_w.max()
    w = np.exp(log_w - shift)
    mean_w = w.mean()
    se_log = w.std(ddof=1) / (math.sqrt(w.size) * mean_w)
    return float(shift + math.log(mean_w)), float(se_log)


def brute_force_rb_p2(dataset, g: float, j: int, seed: int):
    """Independent long-run average of the classical marginal over fresh
    imputation draws, for p = 2 only.

    Re-implements the per-draw marginal from raw sufficient statistics
    (closed-form 2x2 algebra) so it shares no code with the library path.
    Returns {model code: (log average, log-scale se)}.
    """
    from bvsmiss.impute import StreamConfig, _run_da, completed_x

    cfg = StreamConfig(j=j, burnin=50, thin=1, mode="shared", seed=seed)
    draws = _run_da(dataset, cfg)
    y = dataset.y
    n = y.size
    y_c = y - y.mean()
    s_y = float(y_c @ y_c)
    xs = np.stack([completed_x(dataset, d.x_miss) for d in draws])  # (j, n, 2)
    xc = xs - xs.mean(axis=1, keepdims=True)
    s11 = np.einsum("jn,jn->j", xc[:, :, 0], xc[:, :, 0])
    s22 = np.einsum("jn,jn->j", xc[:, :, 1], xc[:, :, 1])
    s12 = np.einsum("jn,jn->j", xc[:, :, 0], xc[:, :, 1])
    b1 = xc[:, :, 0] @ y_c
    b2 = xc[:, :, 1] @ y_c
    base = (
        gammaln((n - 1) / 2.0)
        - 0.5 * (n - 1) * math.log(math.pi)
        - 0.5 * math.log(n)
        - 0.5 * (n - 1) * math.log(s_y)
    )
    fits = {
        0: np.zeros(j),
        1: b1**2 / s11,
        2: b2**2 / s22,
        3: (b1**2 * s22 - 2 * b1 * b2 * s12 + b2**2 * s11) / (s11 * s22 - s12**2),
    }
    out = {}
    for code, fit in fits.items():
        k = bin(code).count("1")
        r2 = np.clip(fit / s_y, 0.0, 1.0)
        lm = base + 0.5 * (n - 1 - k) * math.log1p(g) - 0.5 * (n - 1) * np.log1p(g * (1.0 - r2))
        log_avg = float(logsumexp(lm) - math.log(j))
        w = np.exp(lm - lm.max())
        nb = int(math.sqrt(j))
        width = j // nb
        bm = w[: nb * width].reshape(nb, width).mean(axis=1)
        se = float(math.sqrt(bm.var(ddof=1) / nb) / w.mean())
        out[code] = (log_avg, se)
    return out
