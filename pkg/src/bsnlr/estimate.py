"""Maximum likelihood for Birnbaum-Saunders nonlinear regression.

The response is the log-lifetime ``y_i = mu_i(beta) + e_i`` with sinh-normal
errors of scale 2.  ``theta = (beta, alpha)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .model import Dataset, DerivativeBundle, EvaluationError, MeanModel, check_rank
from .signorm import psi1

log = logging.getLogger(__name__)


_ROUNDING = 8 * np.finfo(float).eps


class FitError(RuntimeError):
    pass


class RankDeficientError(FitError):
    pass


@dataclass(frozen=True)
class XiTerms:
    xi1: np.ndarray
    xi2: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class FisherInfo:
    k_beta: np.ndarray
    kappa_alpha: float

    def cov_beta(self) -> np.ndarray:
        return np.linalg.inv(self.k_beta)

    @property
    def var_alpha(self) -> float:
        return 1.0 / self.kappa_alpha


@dataclass
class FitConfig:
    start: Optional[np.ndarray] = None
    alpha_start: Optional[float] = None
    max_iter: int = 200
    loglik_tol: float = 1e-10
    score_tol: float = 1e-6
    max_halvings: int = 20


@dataclass
class FitResult:
    beta_hat: np.ndarray
    alpha_hat: float
    loglik: float
    cov_beta: np.ndarray
    var_alpha: float
    iterations: int
    converged: bool
    score_norm: float
    bundle: DerivativeBundle
    method: str = "scoring"
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    @property
    def se_beta(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_beta))

    @property
    def se_alpha(self) -> float:
        return float(np.sqrt(self.var_alpha))

    @property
    def n(self) -> int:
        return self.bundle.n

    @property
    def p(self) -> int:
        return self.bundle.p


def xi_terms(y, mu, alpha: float) -> XiTerms:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    half = 0.5 * (np.asarray(y, dtype=float) - np.asarray(mu, dtype=float))
    xi1 = 2.0 / alpha * np.cosh(half)
    xi2 = 2.0 / alpha * np.sinh(half)
    return XiTerms(xi1, xi2, xi1 * xi2 - xi2 / xi1)


def _loglik_mu(y, mu, alpha: float) -> float:
    xi = xi_terms(y, mu, alpha)
    return float(np.sum(np.log(xi.xi1)) - 0.5 * np.sum(xi.xi2**2))


def _design(model: MeanModel, data: Dataset) -> np.ndarray:
    return data.design_for(model)


def loglik(theta, model: MeanModel, data: Dataset) -> float:
    """Log-likelihood with additive constants dropped."""
    beta, alpha = theta
    return _loglik_mu(data.y, model.mean(_design(model, data), beta), alpha)


def _score_from(y, b: DerivativeBundle, alpha: float):
    xi = xi_terms(y, b.mu, alpha)
    n = len(y)
    u_beta = 0.5 * b.d.T @ xi.s
    u_alpha = -n / alpha + np.sum(xi.xi2**2) / alpha
    return u_beta, float(u_alpha)


def score(theta, model: MeanModel, data: Dataset):
    beta, alpha = theta
    b = model.bundle(_design(model, data), beta)
    return _score_from(data.y, b, alpha)


def observed_hessian(theta, model: MeanModel, data: Dataset) -> np.ndarray:
    """Second derivatives of the log-likelihood in ``(beta, alpha)`` order."""
    beta, alpha = theta
    b = model.bundle(_design(model, data), beta)
    xi = xi_terms(data.y, b.mu, alpha)
    n, p = b.n, b.p
    w = 2.0 * xi.xi2**2 + 4.0 / alpha**2 - 1.0 + xi.xi2**2 / xi.xi1**2
    u_rs = 0.5 * (xi.s @ b.g).reshape(p, p) - 0.25 * (b.d * w[:, None]).T @ b.d
    u_ra = -(b.d.T @ (xi.xi1 * xi.xi2)) / alpha
    u_aa = n / alpha**2 - 3.0 / alpha**2 * np.sum(xi.xi2**2)
    h = np.empty((p + 1, p + 1))
    h[:p, :p] = 0.5 * (u_rs + u_rs.T)
    h[:p, p] = h[p, :p] = u_ra
    h[p, p] = u_aa
    return h


def fisher_info(alpha: float, bundle: DerivativeBundle) -> FisherInfo:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    rank = check_rank(bundle.d)
    if rank.deficient:
        raise RankDeficientError(f"D is rank deficient (cond(D'D) = {rank.condition:.3g})")
    return FisherInfo(psi1(alpha) * bundle.d.T @ bundle.d / 4.0, 2.0 * bundle.n / alpha**2)


def alpha_profile(y, mu) -> float:
    """Root of the alpha score at fixed ``mu``: sqrt(4/n * sum sinh^2(r/2))."""
    r = np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)
    a2 = 4.0 / len(r) * np.sum(np.sinh(0.5 * r) ** 2)
    if not a2 > 0:
        raise FitError("all residuals are zero; alpha would be 0")
    return float(np.sqrt(a2))


def ols_start(model: MeanModel, data: Dataset) -> np.ndarray:
    """Least-squares start for a model affine in every parameter."""
    if not model.is_affine:
        raise FitError("starting values are required for a model that is nonlinear in its parameters")
    b = model.bundle(_design(model, data), np.zeros(model.p))
    beta, *_ = np.linalg.lstsq(b.d, data.y - b.mu, rcond=None)
    return beta


def init_theta(model: MeanModel, data: Dataset, beta0=None):
    if beta0 is None:
        beta0 = ols_start(model, data)
    beta0 = np.asarray(beta0, dtype=float)
    if not np.all(np.isfinite(beta0)):
        raise FitError("starting values must be finite")
    mu0 = model.mean(_design(model, data), beta0)
    return beta0, alpha_profile(data.y, mu0)


def _check_size(model: MeanModel, data: Dataset):
    if data.n < model.p + 1:
        raise FitError(f"need at least p + 1 = {model.p + 1} observations, got {data.n}")


def _finish(model, data, x, beta, alpha, iterations, converged, method, message, history) -> FitResult:
    b = model.bundle(x, beta)
    info = fisher_info(alpha, b)
    u_beta, u_alpha = _score_from(data.y, b, alpha)
    return FitResult(
        beta_hat=np.asarray(beta, dtype=float),
        alpha_hat=float(alpha),
        loglik=_loglik_mu(data.y, b.mu, alpha),
        cov_beta=info.cov_beta(),
        var_alpha=info.var_alpha,
        iterations=iterations,
        converged=converged,
        score_norm=float(max(np.max(np.abs(u_beta)), abs(u_alpha))),
        bundle=b,
        method=method,
        message=message,
        history=history,
    )


def _newton_polish(model, data, x, beta, alpha, target, history, max_steps=10):
    """A few Newton steps on the observed information, kept only while the log-likelihood does not drop."""
    y = data.y
    ll = _loglik_mu(y, model.mean(x, beta), alpha)
    steps = 0
    for _ in range(max_steps):
        b = model.bundle(x, beta)
        u_beta, u_alpha = _score_from(y, b, alpha)
        snorm = max(np.max(np.abs(u_beta)), abs(u_alpha))
        if snorm <= target:
            break
        h = observed_hessian((beta, alpha), model, data)
        try:
            step = np.linalg.solve(h, -np.append(u_beta, u_alpha))
        except np.linalg.LinAlgError:
            break
        nb, na = beta + step[:-1], alpha + step[-1]
        if not na > 0:
            break
        try:
            ll_new = _loglik_mu(y, model.mean(x, nb), na)
            b_new = model.bundle(x, nb)
        except EvaluationError:
            break
        ub, ua = _score_from(y, b_new, na)
        if ll_new < ll - _ROUNDING * (abs(ll) + 1) or not max(np.max(np.abs(ub)), abs(ua)) < snorm:
            break
        beta, alpha, ll = nb, float(na), ll_new
        history.append(ll)
        steps += 1
    return beta, alpha, steps


def fit_scoring(model: MeanModel, data: Dataset, config: Optional[FitConfig] = None) -> FitResult:
    """Two-block Fisher scoring with step halving on the beta update.

    Each cycle regresses the working vector ``2 s / psi1(alpha)`` on ``D`` for
    the beta step and sets ``alpha <- alpha (1 + mean(xi2^2)) / 2``.
    """
    cfg = config or FitConfig()
    _check_size(model, data)
    x = _design(model, data)
    y = data.y
    beta, alpha = init_theta(model, data, cfg.start)
    if cfg.alpha_start is not None:
        alpha = float(cfg.alpha_start)
    b = model.bundle(x, beta)
    if check_rank(b.d).deficient:
        raise RankDeficientError("D is rank deficient at the starting values")
    ll = _loglik_mu(y, b.mu, alpha)
    history = [ll]
    message = "maximum iterations reached"
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        xi = xi_terms(y, b.mu, alpha)
        zeta = 2.0 * xi.s / psi1(alpha)
        step, *_ = np.linalg.lstsq(b.d, zeta, rcond=None)
        alpha_next = 0.5 * alpha * (1.0 + np.mean(xi.xi2**2))

        t = 1.0
        accepted = False
        for halving in range(cfg.max_halvings + 1):
            trial = beta + t * step
            try:
                mu_trial = model.mean(x, trial)
                if halving:
                    alpha_next = 0.5 * alpha * (1.0 + np.mean(xi_terms(y, mu_trial, alpha).xi2 ** 2))
                ll_trial = _loglik_mu(y, mu_trial, alpha_next)
            except (EvaluationError, FloatingPointError, ValueError):
                ll_trial = -np.inf
            # near the optimum the log-likelihood is flat to rounding; allow that much slack
            if np.isfinite(ll_trial) and ll_trial >= ll - _ROUNDING * (abs(ll) + 1.0):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            message = "step halving failed to increase the log-likelihood"
            break

        beta, alpha = trial, float(alpha_next)
        try:
            b = model.bundle(x, beta)
        except EvaluationError as exc:
            message = f"derivative evaluation failed: {exc}"
            break
        change = abs(ll_trial - ll) / (abs(ll) + 1.0)
        ll = ll_trial
        history.append(ll)
        u_beta, u_alpha = _score_from(y, b, alpha)
        snorm = max(np.max(np.abs(u_beta)), abs(u_alpha))
        if not np.isfinite(snorm):
            message = "score is not finite"
            break
        if change <= cfg.loglik_tol and snorm <= cfg.score_tol:
            converged = True
            message = "converged"
            # scoring converges linearly; finish on the observed information
            beta, alpha, _ = _newton_polish(model, data, x, beta, alpha, cfg.score_tol * 1e-4, history, max_steps=3)
            b = model.bundle(x, beta)
            break
    else:
        it = cfg.max_iter
    if check_rank(b.d).deficient:
        return _rank_failure(model, data, x, beta, alpha, it, "scoring", history)
    return _finish(model, data, x, beta, alpha, it, converged, "scoring", message, history)


def _rank_failure(model, data, x, beta, alpha, it, method, history) -> FitResult:
    b = model.bundle(x, beta)
    p = model.p
    return FitResult(
        beta_hat=np.asarray(beta, dtype=float),
        alpha_hat=float(alpha),
        loglik=_loglik_mu(data.y, b.mu, alpha),
        cov_beta=np.full((p, p), np.nan),
        var_alpha=alpha**2 / (2 * data.n),
        iterations=it,
        converged=False,
        score_norm=float("nan"),
        bundle=b,
        method=method,
        message="D is rank deficient at the final iterate",
        history=history,
    )


def fit_bfgs(model: MeanModel, data: Dataset, config: Optional[FitConfig] = None) -> FitResult:
    """BFGS on ``(beta, log alpha)`` with the analytic score, then Newton polishing.

    The polishing steps use the analytic observed information and are only
    accepted when they increase the log-likelihood.
    """
    cfg = config or FitConfig()
    _check_size(model, data)
    x = _design(model, data)
    y = data.y
    beta0, alpha0 = init_theta(model, data, cfg.start)
    if cfg.alpha_start is not None:
        alpha0 = float(cfg.alpha_start)
    p = model.p
    history: list[float] = []

    def negll(z):
        beta, alpha = z[:p], float(np.exp(z[p]))
        try:
            b = model.bundle(x, beta)
        except (EvaluationError, ValueError):
            return np.inf, np.zeros_like(z)
        u_beta, u_alpha = _score_from(y, b, alpha)
        return -_loglik_mu(y, b.mu, alpha), -np.append(u_beta, alpha * u_alpha)

    def record(z):
        history.append(-negll(z)[0])

    z0 = np.append(beta0, np.log(alpha0))
    record(z0)
    # expected information in (beta, log alpha) scales the first quasi-Newton step
    h0 = np.eye(p + 1)
    try:
        k = fisher_info(alpha0, model.bundle(x, beta0))
        cov = k.cov_beta()
        h0[:p, :p] = 0.5 * (cov + cov.T)
        h0[p, p] = 1.0 / (alpha0**2 * k.kappa_alpha)
        np.linalg.cholesky(h0)
    except (FitError, EvaluationError, np.linalg.LinAlgError):
        h0 = np.eye(p + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        res = optimize.minimize(
            negll, z0, jac=True, method="BFGS", callback=record,
            options={"gtol": cfg.score_tol * 1e-2, "maxiter": cfg.max_iter, "hess_inv0": h0},
        )
    beta, alpha = res.x[:p], float(np.exp(res.x[p]))
    message = res.message
    it = int(res.nit)

    budget = min(10, cfg.max_iter - it)
    beta, alpha, extra = _newton_polish(model, data, x, beta, alpha, cfg.score_tol * 1e-2, history, max(budget, 0))
    it += extra

    b = model.bundle(x, beta)
    u_beta, u_alpha = _score_from(y, b, alpha)
    snorm = max(np.max(np.abs(u_beta)), abs(u_alpha))
    converged = bool(np.isfinite(snorm) and snorm <= cfg.score_tol)
    if not res.success and converged:
        message = f"{message} (first-order condition met)"
    if check_rank(b.d).deficient:
        return _rank_failure(model, data, x, beta, alpha, it, "bfgs", history)
    return _finish(model, data, x, beta, alpha, it, converged, "bfgs", message, history)


def fit(model: MeanModel, data: Dataset, config: Optional[FitConfig] = None) -> FitResult:
    """Fisher scoring, falling back to BFGS when scoring does not converge."""
    try:
        result = fit_scoring(model, data, config)
    except (FitError, EvaluationError, np.linalg.LinAlgError) as exc:
        log.debug("scoring failed: %s", exc)
        result = None
    if result is not None and result.converged:
        return result
    try:
        fallback = fit_bfgs(model, data, config)
    except (FitError, EvaluationError, np.linalg.LinAlgError) as exc:
        log.debug("bfgs failed: %s", exc)
        if result is None:
            raise
        return result
    return fallback if fallback.converged or result is None else result


@dataclass(frozen=True)
class Residuals:
    mu_hat: np.ndarray
    eps_hat: np.ndarray
    r_hat: np.ndarray


def residuals(fit: FitResult, data: Dataset) -> Residuals:
    """Ordinary residuals and their normalised sinh transform."""
    mu = fit.bundle.mu
    eps = data.y - mu
    return Residuals(mu, eps, 2.0 / fit.alpha_hat * np.sinh(0.5 * eps))
