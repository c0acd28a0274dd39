"""Mean functions, datasets and exact first/second derivatives.

Derivatives come from second-order forward-mode differentiation: every AST
node carries its value, its gradient and its Hessian with respect to the
parameters, vectorised over observations.  A gradient or Hessian of ``None``
means "identically zero", so models that are affine in the parameters give a
second-derivative matrix that is exactly zero rather than merely small.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import expr
from .expr import BinOp, Call, Name, Neg, Num


class EvaluationError(ValueError):
    """Domain violation while evaluating a mean function."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


@dataclass(frozen=True)
class DerivativeBundle:
    """Mean vector ``mu`` (n), Jacobian ``d`` (n x p), stacked Hessians ``g`` (n x p^2).

    Row ``i`` of ``g`` is ``vec(M_i)`` with columns stacked (column-major),
    ``M_i`` being the p x p Hessian of ``mu_i``.
    """

    mu: np.ndarray
    d: np.ndarray
    g: np.ndarray

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def p(self) -> int:
        return self.d.shape[1]

    def hessians(self) -> np.ndarray:
        """The n x p x p stack of ``M_i`` rebuilt from ``g``."""
        return self.g.reshape(self.n, self.p, self.p).transpose(0, 2, 1)


def vec(m: np.ndarray) -> np.ndarray:
    """Stack the columns of ``m``."""
    return np.asarray(m).reshape(-1, order="F")


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    x: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else np.zeros((len(y), 0))
        if x.shape[0] != len(y):
            raise ValueError(f"x has {x.shape[0]} rows but y has {len(y)} entries")
        if len(self.names) != x.shape[1]:
            raise ValueError(f"{len(self.names)} covariate names for {x.shape[1]} columns")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return len(self.y)

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.names.index(name)]

    def design_for(self, model: "MeanModel") -> np.ndarray:
        """Covariate matrix ordered as ``model.covariates``."""
        missing = [c for c in model.covariates if c not in self.names]
        if missing:
            raise ValueError(f"dataset has no column(s) {', '.join(missing)}")
        if not model.covariates:
            return np.zeros((self.n, 0))
        return np.column_stack([self.column(c) for c in model.covariates])


class _Jet:
    __slots__ = ("v", "g", "h")

    def __init__(self, v, g=None, h=None):
        self.v = v
        self.g = g
        self.h = h


def _add(a, b):
    return a + b if a is not None and b is not None else (a if b is None else b)


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


def _scale(arr, w):
    # arr is (n, p) or (n, p, p); w is (n,)
    return None if arr is None else arr * w.reshape((-1,) + (1,) * (arr.ndim - 1))


def _chain(a: _Jet, f0, f1, f2) -> _Jet:
    if a.g is None:
        return _Jet(f0)
    h = _add(_scale(a.h, f1), _scale(_outer(a.g, a.g), f2))
    return _Jet(f0, _scale(a.g, f1), h)


def _mul(a: _Jet, b: _Jet) -> _Jet:
    g = _add(_scale(a.g, b.v), _scale(b.g, a.v))
    h = _add(_scale(a.h, b.v), _scale(b.h, a.v))
    if a.g is not None and b.g is not None:
        h = _add(h, _outer(a.g, b.g) + _outer(b.g, a.g))
    return _Jet(a.v * b.v, g, h)


def _first_bad(mask) -> int:
    return int(np.flatnonzero(mask)[0])


def _unary(func: str, a: _Jet) -> _Jet:
    v = a.v
    if func == "exp":
        e = np.exp(v)
        return _chain(a, e, e, e)
    if func == "log":
        if np.any(v <= 0):
            raise EvaluationError("log of a nonpositive value", _first_bad(v <= 0))
        return _chain(a, np.log(v), 1.0 / v, -1.0 / v**2)
    if func == "sqrt":
        bad = v < 0 if a.g is None else v <= 0
        if np.any(bad):
            raise EvaluationError("sqrt outside its differentiable domain", _first_bad(bad))
        s = np.sqrt(v)
        return _chain(a, s, 0.5 / s, -0.25 / (s * v))
    if func == "sinh":
        s, c = np.sinh(v), np.cosh(v)
        return _chain(a, s, c, s)
    if func == "cosh":
        s, c = np.sinh(v), np.cosh(v)
        return _chain(a, c, s, c)
    t = np.tanh(v)
    return _chain(a, t, 1.0 - t**2, -2.0 * t * (1.0 - t**2))


def _reciprocal(b: _Jet) -> _Jet:
    if np.any(b.v == 0):
        raise EvaluationError("division by zero", _first_bad(b.v == 0))
    r = 1.0 / b.v
    return _chain(b, r, -r * r, 2.0 * r * r * r)


def _power(a: _Jet, b: _Jet, literal: Optional[float]) -> _Jet:
    if literal is not None and float(literal).is_integer():
        k = int(literal)
        if k == 0:
            return _Jet(np.ones_like(a.v))
        if k < 0 and np.any(a.v == 0):
            raise EvaluationError("zero raised to a negative power", _first_bad(a.v == 0))
        return _chain(a, a.v**k, k * a.v ** (k - 1), k * (k - 1) * a.v ** (k - 2) if k != 1 else np.zeros_like(a.v))
    if a.g is None and b.g is None:
        out = np.power(a.v, b.v)
        if np.any(np.isnan(out)):
            raise EvaluationError("negative base with non-integer exponent", _first_bad(np.isnan(out)))
        return _Jet(out)
    if np.any(a.v <= 0):
        raise EvaluationError("non-integer power requires a positive base", _first_bad(a.v <= 0))
    if b.g is None:
        e = b.v
        return _chain(a, a.v**e, e * a.v ** (e - 1), e * (e - 1) * a.v ** (e - 2))
    return _unary("exp", _mul(b, _unary("log", a)))


def _int_literal(node) -> Optional[float]:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg) and isinstance(node.operand, Num):
        return -node.operand.value
    return None


@dataclass(frozen=True)
class MeanModel:
    """A parsed mean function ``mu_i = f(x_i; beta)``."""

    ast: expr.Node
    params: tuple[str, ...]
    covariates: tuple[str, ...]
    text: str = ""
    _affine: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.params) < 1:
            raise expr.ModelError("a model needs at least one parameter")
        object.__setattr__(self, "_affine", expr.is_affine(self.ast, self.params))

    @property
    def p(self) -> int:
        return len(self.params)

    @property
    def is_affine(self) -> bool:
        return self._affine

    def pretty(self) -> str:
        return expr.to_text(self.ast)

    def _leaves(self, x, beta):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[1] != len(self.covariates):
            raise ValueError(f"expected {len(self.covariates)} covariate columns, got {x.shape[1]}")
        beta = np.asarray(beta, dtype=float).reshape(-1)
        if beta.shape != (self.p,):
            raise ValueError(f"expected {self.p} parameter values, got {beta.shape[0]}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("parameter vector is not finite")
        return x, beta

    def mean(self, x, beta) -> np.ndarray:
        """Values of the mean function only (no derivatives)."""
        x, beta = self._leaves(x, beta)
        n = x.shape[0]
        env = {name: np.full(n, beta[r]) for r, name in enumerate(self.params)}
        env.update({name: x[:, j] for j, name in enumerate(self.covariates)})
        out = np.broadcast_to(_value(self.ast, env, n), (n,)).astype(float)
        if not np.all(np.isfinite(out)):
            raise EvaluationError("mean function is not finite", _first_bad(~np.isfinite(out)))
        return out

    def bundle(self, x, beta) -> DerivativeBundle:
        x, beta = self._leaves(x, beta)
        n, p = x.shape[0], self.p
        env = {}
        for r, name in enumerate(self.params):
            g = np.zeros((n, p))
            g[:, r] = 1.0
            env[name] = _Jet(np.full(n, beta[r]), g)
        for j, name in enumerate(self.covariates):
            env[name] = _Jet(x[:, j])
        jet = _forward(self.ast, env, n)
        mu = np.broadcast_to(jet.v, (n,)).astype(float)
        d = np.zeros((n, p)) if jet.g is None else np.array(jet.g, dtype=float)
        h = np.zeros((n, p, p)) if jet.h is None else jet.h
        g = np.ascontiguousarray(h.transpose(0, 2, 1)).reshape(n, p * p)
        for arr in (mu, d, g):
            if not np.all(np.isfinite(arr)):
                bad = ~np.isfinite(arr.reshape(n, -1)).all(axis=1)
                raise EvaluationError("mean function or its derivatives are not finite", _first_bad(bad))
        return DerivativeBundle(mu, d, g)


def _forward(node, env, n) -> _Jet:
    if isinstance(node, Num):
        return _Jet(np.full(n, node.value))
    if isinstance(node, Name):
        return env[node.id]
    if isinstance(node, Neg):
        a = _forward(node.operand, env, n)
        return _Jet(-a.v, None if a.g is None else -a.g, None if a.h is None else -a.h)
    if isinstance(node, Call):
        return _unary(node.func, _forward(node.arg, env, n))
    a = _forward(node.left, env, n)
    b = _forward(node.right, env, n)
    if node.op == "+":
        return _Jet(a.v + b.v, _add(a.g, b.g), _add(a.h, b.h))
    if node.op == "-":
        nb_g = None if b.g is None else -b.g
        nb_h = None if b.h is None else -b.h
        return _Jet(a.v - b.v, _add(a.g, nb_g), _add(a.h, nb_h))
    if node.op == "*":
        return _mul(a, b)
    if node.op == "/":
        if b.g is None:
            if np.any(b.v == 0):
                raise EvaluationError("division by zero", _first_bad(b.v == 0))
            return _Jet(a.v / b.v, _scale(a.g, 1.0 / b.v), _scale(a.h, 1.0 / b.v))
        return _mul(a, _reciprocal(b))
    return _power(a, b, _int_literal(node.right))


def _value(node, env, n):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Name):
        return env[node.id]
    if isinstance(node, Neg):
        return -_value(node.operand, env, n)
    if isinstance(node, Call):
        v = _value(node.arg, env, n)
        if node.func == "log" and np.any(np.asarray(v) <= 0):
            raise EvaluationError("log of a nonpositive value", _first_bad(np.broadcast_to(v, (n,)) <= 0))
        if node.func == "sqrt" and np.any(np.asarray(v) < 0):
            raise EvaluationError("sqrt of a negative value", _first_bad(np.broadcast_to(v, (n,)) < 0))
        return getattr(np, node.func)(v)
    a = _value(node.left, env, n)
    b = _value(node.right, env, n)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(np.asarray(b) == 0):
            raise EvaluationError("division by zero", _first_bad(np.broadcast_to(b, (n,)) == 0))
        return a / b
    lit = _int_literal(node.right)
    if lit is not None and float(lit).is_integer():
        return np.asarray(a, dtype=float) ** int(lit)
    with np.errstate(invalid="ignore"):
        out = np.power(np.asarray(a, dtype=float), b)
    if np.any(np.isnan(out)):
        raise EvaluationError("negative base with non-integer exponent", _first_bad(np.broadcast_to(np.isnan(out), (n,))))
    return out


def parse_model(text: str, params: Sequence[str], covariates: Sequence[str] = ()) -> MeanModel:
    """Parse ``text`` into a :class:`MeanModel`.

    Every identifier must be one of ``params`` or ``covariates``; parameters
    keep the order given here.
    """
    if not text or not text.strip():
        raise expr.ModelSyntaxError("empty expression", 0, text or "")
    ast = expr.parse(text, params, covariates)
    return MeanModel(ast, tuple(params), tuple(covariates), text)


def eval_bundle(model: MeanModel, x, beta) -> DerivativeBundle:
    return model.bundle(x, beta)


# name -> (expression, params, covariates)
CATALOG = {
    "gallant": ("l1*z1 + l2*z2 + eta*exp(gamma*x)", ("l1", "l2", "eta", "gamma"), ("z1", "z2", "x")),
    "darby_ellis": ("l1 - eta*log(x1 + gamma*x2)", ("l1", "eta", "gamma"), ("x1", "x2")),
    "stone": ("l1 + eta*log(x1/(gamma + x2))", ("l1", "eta", "gamma"), ("x1", "x2")),
    "asymptotic_regression": ("l1 - eta*gamma^x", ("l1", "eta", "gamma"), ("x",)),
    "weibull_type": ("l1 - eta*exp(-gamma*x)", ("l1", "eta", "gamma"), ("x",)),
    "michaelis_menten": ("eta*x/(gamma + x)", ("eta", "gamma"), ("x",)),
    "exponential": ("exp(b*x)", ("b",), ("x",)),
    "loglinear": ("b1 + b2*x", ("b1", "b2"), ("x",)),
    "fatigue": ("b1 + b2*exp(b3/w)", ("b1", "b2", "b3"), ("w",)),
}

# models of the form Z lambda + eta * g(gamma)
PARTIALLY_NONLINEAR = ("gallant", "darby_ellis", "stone", "asymptotic_regression", "weibull_type")


def builtin(name: str, n_linear: Optional[int] = None) -> MeanModel:
    """Catalogue model by name.

    ``n_linear`` changes the number of ``l_k * z_k`` terms of the Gallant
    model (default 2); parameters are always ordered (lambdas..., eta, gamma).
    """
    if name not in CATALOG:
        raise KeyError(f"unknown builtin model {name!r}; choose from {', '.join(sorted(CATALOG))}")
    text, params, covs = CATALOG[name]
    if name == "gallant" and n_linear is not None:
        if n_linear < 0:
            raise ValueError("n_linear must be nonnegative")
        lin = [f"l{k}*z{k}" for k in range(1, n_linear + 1)]
        text = " + ".join(lin + ["eta*exp(gamma*x)"])
        params = tuple(f"l{k}" for k in range(1, n_linear + 1)) + ("eta", "gamma")
        covs = tuple(f"z{k}" for k in range(1, n_linear + 1)) + ("x",)
    return parse_model(text, params, covs)


@dataclass(frozen=True)
class RankReport:
    condition: float
    rank: int
    deficient: bool


def check_rank(d, threshold: float = 1e10) -> RankReport:
    """Condition number of ``D'D``; deficient when it exceeds ``threshold``."""
    d = np.asarray(d, dtype=float)
    sv = np.linalg.svd(d, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return RankReport(float("inf"), 0, True)
    cond = float((sv[0] / sv[-1]) ** 2) if sv[-1] > 0 else float("inf")
    rank = int(np.sum(sv > sv[0] * max(d.shape) * np.finfo(float).eps))
    return RankReport(cond, rank, not cond <= threshold)
