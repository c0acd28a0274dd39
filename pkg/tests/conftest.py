import mpmath as mp
import numpy as np
import pytest

from bsnlr.expr import BinOp, Call, Name, Neg, Num
from bsnlr.model import Dataset, builtin
from bsnlr.signorm import SinhNormalParams, sn_sample

# parameter and covariate ranges that keep every builtin inside its domain
INSTANCE_RANGES = {
    "gallant": ([(-5, 5), (-5, 5), (0.5, 4), (-2, 2)], (0, 1)),
    "darby_ellis": ([(-3, 3), (0.5, 3), (0.2, 2)], (0.1, 1)),
    "stone": ([(-3, 3), (0.5, 3), (0.2, 2)], (0.1, 1)),
    "asymptotic_regression": ([(-3, 3), (0.5, 3), (0.2, 0.9)], (0, 3)),
    "weibull_type": ([(-3, 3), (0.5, 3), (0.2, 3)], (0, 2)),
    "michaelis_menten": ([(1, 4), (0.2, 1)], (0, 1)),
    "exponential": ([(-1, 1)], (0, 2)),
    "loglinear": ([(-3, 3), (-3, 3)], (0, 1)),
    "fatigue": ([(5, 10), (-6, -3), (-30, -10)], (10, 100)),
}
BUILTINS = sorted(INSTANCE_RANGES)


def random_instance(name, rng, n):
    model = builtin(name)
    bounds, (lo, hi) = INSTANCE_RANGES[name]
    beta = np.array([rng.uniform(a, b) for a, b in bounds])
    x = rng.uniform(lo, hi, size=(n, len(model.covariates)))
    return model, x, beta


def simulate(model, x, beta, alpha, rng):
    y = model.mean(x, beta) + sn_sample(SinhNormalParams(alpha, 0.0, 2.0), rng, len(x))
    return Dataset(y, x, model.covariates)


def mp_eval(node, env):
    """Evaluate an expression tree in mpmath arithmetic (independent of the numpy paths)."""
    if isinstance(node, Num):
        return mp.mpf(node.value)
    if isinstance(node, Name):
        return env[node.id]
    if isinstance(node, Neg):
        return -mp_eval(node.operand, env)
    if isinstance(node, Call):
        return getattr(mp, node.func)(mp_eval(node.arg, env))
    a, b = mp_eval(node.left, env), mp_eval(node.right, env)
    return {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b, "/": lambda: a / b, "^": lambda: a**b}[node.op]()


def mp_mean(model, xrow, beta):
    env = {p: mp.mpf(float(b)) if not isinstance(b, mp.mpf) else b for p, b in zip(model.params, beta)}
    env.update({c: mp.mpf(float(v)) for c, v in zip(model.covariates, xrow)})
    return mp_eval(model.ast, env)


def mp_derivatives(model, xrow, beta, h="1e-15", dps=60):
    """Gradient and Hessian of one mean value by central differences at high precision."""
    with mp.workdps(dps):
        h = mp.mpf(h)
        b0 = [mp.mpf(float(v)) for v in beta]
        p = len(b0)

        def f(delta):
            return mp_mean(model, xrow, [b + d for b, d in zip(b0, delta)])

        grad = np.zeros(p)
        hess = np.zeros((p, p))
        for r in range(p):
            e = [h if k == r else 0 for k in range(p)]
            grad[r] = float((f(e) - f([-v for v in e])) / (2 * h))
            for s in range(p):
                def shift(sr, ss):
                    return [sr * h * (k == r) + ss * h * (k == s) for k in range(p)]

                hess[r, s] = float((f(shift(1, 1)) - f(shift(1, -1)) - f(shift(-1, 1)) + f(shift(-1, -1))) / (4 * h * h))
        return grad, hess


def mp_loglik(model, data, beta, alpha):
    total = mp.mpf(0)
    a = mp.mpf(alpha) if not isinstance(alpha, mp.mpf) else alpha
    for i in range(data.n):
        r = (mp.mpf(float(data.y[i])) - mp_mean(model, data.x[i], beta)) / 2
        total += mp.log(2 / a * mp.cosh(r)) - mp.mpf(1) / 2 * (2 / a * mp.sinh(r)) ** 2
    return total


def mp_score(model, data, beta, alpha, h="1e-20", dps=60):
    """Score of the log-likelihood by high-precision central differences."""
    with mp.workdps(dps):
        h = mp.mpf(h)
        theta = [mp.mpf(float(v)) for v in beta] + [mp.mpf(float(alpha))]
        p = len(beta)

        def ll(t):
            return mp_loglik(model, data, t[:p], t[p])

        out = np.zeros(p + 1)
        for r in range(p + 1):
            up = list(theta)
            dn = list(theta)
            up[r] += h
            dn[r] -= h
            out[r] = float((ll(up) - ll(dn)) / (2 * h))
        return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# ---- acceptance summary: one line per criterion ----

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion this test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    label, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        _CRITERIA[label] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: (int("".join(c for c in s if c.isdigit())), s)):
        status, title, detail = _CRITERIA[label]
        line = f"[{status}] {label:>3}  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
