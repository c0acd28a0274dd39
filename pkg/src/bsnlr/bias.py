"""Second-order (order 1/n) bias of the maximum likelihood estimates.

Production formulas:

* ``bias_beta``: least-squares regression of
  ``d = -(2/psi1) G vec((D'D)^{-1})`` on the columns of ``D``;
* ``bias_alpha``: ``-(1/n) [p (2 + a^2) / (a psi1(a)) + a/4]``.

``cumulants`` and ``coxsnell_oracle`` evaluate the general Cox-Snell sums
index by index.  They are O(p^4), meant for cross-checking, and are not
used on any production path.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .estimate import FitResult, fisher_info
from .model import DerivativeBundle, MeanModel, vec
from .signorm import psi1


class DegenerateDesignError(ValueError):
    pass


@dataclass(frozen=True)
class BiasReport:
    b_beta: np.ndarray
    b_alpha: float
    beta_hat: np.ndarray
    alpha_hat: float
    beta_tilde: np.ndarray
    alpha_tilde: float
    b_mu: np.ndarray
    var_mu: np.ndarray
    alpha_nonpositive: bool = False


def _normal_inverse(d: np.ndarray) -> np.ndarray:
    dtd = d.T @ d
    try:
        inv = np.linalg.inv(dtd)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("normal equations D'D are singular") from exc
    return 0.5 * (inv + inv.T)


def bias_beta(alpha: float, bundle: DerivativeBundle) -> np.ndarray:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not np.any(bundle.g):
        return np.zeros(bundle.p)
    dvec = -(2.0 / psi1(alpha)) * (bundle.g @ vec(_normal_inverse(bundle.d)))
    coef, *_ = np.linalg.lstsq(bundle.d, dvec, rcond=None)
    return coef


def bias_alpha(p: int, n: int, alpha: float) -> float:
    if p < 1 or n < 1:
        raise ValueError("p and n must be positive")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return -(p * (2.0 + alpha**2) / (alpha * psi1(alpha)) + alpha / 4.0) / n


def bias_mu(fit: FitResult, b_beta=None) -> np.ndarray:
    """``d_i' B(beta) + tr(M_i Cov(beta)) / 2`` for every observation."""
    b = fit.bundle
    if b_beta is None:
        b_beta = bias_beta(fit.alpha_hat, b)
    return b.d @ b_beta + 0.5 * (b.g @ vec(fit.cov_beta))


def var_mu(fit: FitResult) -> np.ndarray:
    d = fit.bundle.d
    return np.einsum("ir,rs,is->i", d, fit.cov_beta, d)


def correct(fit: FitResult) -> BiasReport:
    """Bias-corrected estimates ``theta_hat - B(theta_hat)``."""
    b_b = bias_beta(fit.alpha_hat, fit.bundle)
    b_a = bias_alpha(fit.p, fit.n, fit.alpha_hat)
    alpha_tilde = fit.alpha_hat - b_a
    flag = not alpha_tilde > 0
    if flag:
        warnings.warn(f"bias-corrected alpha is not positive ({alpha_tilde:.4g})", RuntimeWarning, stacklevel=2)
    return BiasReport(
        b_beta=b_b,
        b_alpha=b_a,
        beta_hat=fit.beta_hat,
        alpha_hat=fit.alpha_hat,
        beta_tilde=fit.beta_hat - b_b,
        alpha_tilde=alpha_tilde,
        b_mu=bias_mu(fit, b_b),
        var_mu=var_mu(fit),
        alpha_nonpositive=flag,
    )


def bias_single_param(model: MeanModel, beta: float, alpha: float, x) -> float:
    """``-(2/psi1) k2 / k1^2`` with ``k1 = sum f'^2`` and ``k2 = sum f' f''``."""
    if model.p != 1:
        raise ValueError("bias_single_param needs a one-parameter model")
    b = model.bundle(x, [beta])
    f1, f2 = b.d[:, 0], b.g[:, 0]
    k1 = float(np.sum(f1 * f1))
    if k1 == 0:
        raise DegenerateDesignError("sum of squared derivatives is zero")
    k2 = float(np.sum(f1 * f2))
    return -(2.0 / psi1(alpha)) * k2 / k1**2


def partially_nonlinear_terms(model: MeanModel, beta, alpha: float, x):
    """The two pieces of the closed form for ``mu = Z lambda + eta g(gamma)``.

    Returns ``(cov_term, var_term)`` with
    ``cov_term = Cov(eta, gamma) / eta * tau_p`` and
    ``var_term = eta / 2 * Var(gamma) * delta_p``; the bias is
    ``-(cov_term + var_term)``.  ``eta`` and ``gamma`` must be the last two
    parameters.
    """
    beta = np.asarray(beta, dtype=float)
    p = model.p
    if p < 2:
        raise ValueError("a partially nonlinear model has at least (eta, gamma)")
    eta = beta[-2]
    if eta == 0:
        raise DegenerateDesignError("eta = 0: the nonlinear term vanishes")
    b = model.bundle(x, beta)
    hess = b.hessians()
    allowed = np.zeros((p, p), dtype=bool)
    allowed[p - 2, p - 1] = allowed[p - 1, p - 2] = allowed[p - 1, p - 1] = True
    if np.any(hess[:, ~allowed]):
        raise ValueError("model is not linear in (lambda, eta)")
    inv = _normal_inverse(b.d)
    cov = 4.0 / psi1(alpha) * inv
    d2g = hess[:, p - 1, p - 1] / eta
    delta, *_ = np.linalg.lstsq(b.d, d2g, rcond=None)
    tau = np.zeros(p)
    tau[-1] = 1.0
    return cov[p - 2, p - 1] / eta * tau, 0.5 * eta * cov[p - 1, p - 1] * delta


def bias_partially_nonlinear(model: MeanModel, beta, alpha: float, x) -> np.ndarray:
    cov_term, var_term = partially_nonlinear_terms(model, beta, alpha, x)
    return -(cov_term + var_term)


@dataclass(frozen=True)
class CumulantSet:
    kappa_rs: np.ndarray  # (p, p)
    kappa_rst: np.ndarray  # (p, p, p)
    kappa_rs_t: np.ndarray  # (p, p, p); [r, s, t] = d kappa_rs / d beta_t
    kappa_rs_alpha: np.ndarray  # (p, p)
    kappa_aa: float
    kappa_aaa: float
    kappa_aa_a: float


def cumulants(alpha: float, bundle: DerivativeBundle) -> CumulantSet:
    """Joint cumulants of log-likelihood derivatives, summed term by term."""
    c = -psi1(alpha) / 4.0
    d, h = bundle.d, bundle.hessians()
    n, p = d.shape
    k_rs = np.zeros((p, p))
    k_rst = np.zeros((p, p, p))
    k_rs_t = np.zeros((p, p, p))
    k_rsa = np.zeros((p, p))
    for r, s in itertools.product(range(p), repeat=2):
        k_rs[r, s] = c * sum(d[i, r] * d[i, s] for i in range(n))
        k_rsa[r, s] = (2.0 + alpha**2) / alpha**3 * sum(d[i, r] * d[i, s] for i in range(n))
        for t in range(p):
            k_rst[r, s, t] = c * sum(
                h[i, r, s] * d[i, t] + h[i, r, t] * d[i, s] + h[i, s, t] * d[i, r] for i in range(n)
            )
            k_rs_t[r, s, t] = c * sum(h[i, r, t] * d[i, s] + h[i, s, t] * d[i, r] for i in range(n))
    return CumulantSet(k_rs, k_rst, k_rs_t, k_rsa, -2.0 * n / alpha**2, 10.0 * n / alpha**3, 4.0 * n / alpha**3)


def coxsnell_oracle(alpha: float, bundle: DerivativeBundle):
    """Cox-Snell order-1/n biases of (beta, alpha) by explicit index sums.

    The beta-alpha cross cumulants are structurally zero and enter the sums as
    literal zeros.
    """
    k = cumulants(alpha, bundle)
    p = bundle.p
    info = -k.kappa_rs
    if np.linalg.matrix_rank(info) < p:
        raise np.linalg.LinAlgError("information matrix for beta is singular")
    kinv = np.linalg.inv(info)
    k_inv_aa = 1.0 / -k.kappa_aa
    k_sa_a = np.zeros(p)  # kappa_{s alpha}^{(alpha)}
    k_saa = np.zeros(p)  # kappa_{s alpha alpha}
    k_at_u = np.zeros((p, p))  # kappa_{alpha t}^{(u)}

    b_beta = np.zeros(p)
    for a in range(p):
        total = 0.0
        for s, t, u in itertools.product(range(p), repeat=3):
            total += kinv[a, s] * kinv[t, u] * (k.kappa_rs_t[s, t, u] - 0.5 * k.kappa_rst[s, t, u])
        for s in range(p):
            total += k_inv_aa * kinv[a, s] * (k_sa_a[s] - 0.5 * k_saa[s])
        b_beta[a] = total

    b_alpha = k_inv_aa**2 * (k.kappa_aa_a - 0.5 * k.kappa_aaa)
    for t, u in itertools.product(range(p), repeat=2):
        b_alpha += k_inv_aa * kinv[t, u] * (k_at_u[t, u] - 0.5 * k.kappa_rs_alpha[t, u])
    return b_beta, float(b_alpha)


def corrected_fisher(report: BiasReport, model: MeanModel, x):
    """Standard errors re-evaluated at the corrected estimates."""
    if report.alpha_nonpositive:
        p = len(report.beta_tilde)
        return np.full(p, np.nan), float("nan")
    b = model.bundle(x, report.beta_tilde)
    info = fisher_info(report.alpha_tilde, b)
    return np.sqrt(np.diag(info.cov_beta())), float(np.sqrt(info.var_alpha))
