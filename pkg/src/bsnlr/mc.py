"""Monte Carlo study of MLE and bias-corrected estimates.

For every sample size the covariates are drawn once from U(0, 1) and held
fixed; each replication draws fresh sinh-normal errors, refits the model
starting from the true parameters and applies the bias correction.  Every
replication owns the random stream ``(seed, n_index, replication)`` and the
design owns ``(seed, n_index, "design")``, so results do not depend on how
replications are spread over workers.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bias import correct
from .estimate import FitConfig, FitError, fit
from .model import Dataset, EvaluationError, MeanModel, builtin, parse_model
from .signorm import SinhNormalParams, sn_sample, stream

log = logging.getLogger(__name__)

START_NOTE = "each replication is started at the true parameter values"


@dataclass
class SimConfig:
    model: MeanModel
    true_beta: Sequence[float]
    true_alpha: float
    n_grid: Sequence[int]
    reps: int = 10_000
    seed: int = 2009
    max_iter: int = 200
    workers: int = 1
    name: str = ""

    def __post_init__(self):
        self.true_beta = np.asarray(self.true_beta, dtype=float)
        if self.true_beta.shape != (self.model.p,):
            raise ValueError(f"model has {self.model.p} parameters, got {len(self.true_beta)} true values")
        if not self.true_alpha > 0:
            raise ValueError("true alpha must be positive")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        for n in self.n_grid:
            if n < self.model.p + 1:
                raise ValueError(f"sample size {n} is below p + 1 = {self.model.p + 1}")

    @property
    def param_names(self) -> list[str]:
        return list(self.model.params) + ["alpha"]

    def header(self) -> dict:
        return {
            "name": self.name,
            "model": self.model.text,
            "params": list(self.model.params),
            "covariates": list(self.model.covariates),
            "true_beta": [float(b) for b in self.true_beta],
            "true_alpha": float(self.true_alpha),
            "n_grid": [int(n) for n in self.n_grid],
            "reps": int(self.reps),
            "seed": int(self.seed),
            "max_iter": int(self.max_iter),
            "covariates_rule": "U(0,1), drawn once per sample size",
            "start_values": START_NOTE,
        }


@dataclass
class SimCell:
    alpha: float
    n: int
    parameter: str
    estimator: str
    truth: float
    mean: float
    bias: float
    relative_bias: float
    rmse: float
    used: int
    flag: str = ""


@dataclass
class SimReport:
    cells: list[SimCell]
    failures: dict = field(default_factory=dict)  # "alpha=..,n=.." -> count
    header: list = field(default_factory=list)

    def cell(self, n: int, parameter: str, estimator: str, alpha: Optional[float] = None) -> SimCell:
        for c in self.cells:
            if c.n == n and c.parameter == parameter and c.estimator == estimator and (alpha is None or c.alpha == alpha):
                return c
        raise KeyError((n, parameter, estimator, alpha))

    def extend(self, other: "SimReport") -> "SimReport":
        return SimReport(self.cells + other.cells, {**self.failures, **other.failures}, self.header + other.header)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": "bsnlr.simreport/1",
                "config": self.header,
                "failures": self.failures,
                "cells": [asdict(c) for c in self.cells],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        doc = json.loads(text)
        if doc.get("schema") != "bsnlr.simreport/1":
            raise ValueError(f"unsupported schema {doc.get('schema')!r}")
        return cls([SimCell(**c) for c in doc["cells"]], doc["failures"], doc["config"])


@dataclass(frozen=True)
class Summary:
    relative_bias: np.ndarray
    bias: np.ndarray
    rmse: np.ndarray
    mean: np.ndarray
    undefined: np.ndarray  # truth is zero: relative bias replaced by absolute bias


def summarize(estimates, truth) -> Summary:
    """Relative bias ``(mean - truth) / truth`` and root mean squared error per column."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if est.shape[0] < 1:
        raise ValueError("no converged replications to summarise")
    if est.shape[1] != truth.size:
        raise ValueError("estimates and truth have different widths")
    mean = est.mean(axis=0)
    bias = mean - truth
    rmse = np.sqrt(np.mean((est - truth) ** 2, axis=0))
    zero = truth == 0
    rel = np.where(zero, bias, bias / np.where(zero, 1.0, truth))
    return Summary(rel, bias, rmse, mean, zero)


def design(config: SimConfig, n_index: int, n: int) -> np.ndarray:
    return stream(config.seed, n_index, "design").uniform(size=(n, len(config.model.covariates)))


def replicate(config: SimConfig, n_index: int, x: np.ndarray, rep: int):
    """One replication: (MLE row, BCE row) or ``None`` if the fit failed."""
    model = config.model
    mu = model.mean(x, config.true_beta)
    eps = sn_sample(SinhNormalParams(config.true_alpha, 0.0, 2.0), stream(config.seed, n_index, rep), len(mu))
    data = Dataset(mu + eps, x, model.covariates)
    cfg = FitConfig(start=config.true_beta.copy(), alpha_start=config.true_alpha, max_iter=config.max_iter)
    try:
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = fit(model, data, cfg)
            if not res.converged:
                return None
            rep_bias = correct(res)
    except (FitError, EvaluationError, np.linalg.LinAlgError, ValueError) as exc:
        log.debug("replication %d failed: %s", rep, exc)
        return None
    mle = np.append(res.beta_hat, res.alpha_hat)
    bce = np.append(rep_bias.beta_tilde, rep_bias.alpha_tilde)
    return mle, bce


def _block(args):
    config, n_index, x, reps = args
    return [replicate(config, n_index, x, r) for r in reps]


def run_size(config: SimConfig, n_index: int, n: int):
    """Arrays of MLE and BCE estimates (reps x (p+1)) with NaN rows for failures."""
    x = design(config, n_index, n)
    width = config.model.p + 1
    mle = np.full((config.reps, width), np.nan)
    bce = np.full((config.reps, width), np.nan)
    indices = list(range(config.reps))
    if config.workers > 1:
        chunks = [indices[k :: config.workers] for k in range(config.workers)]
        with ProcessPoolExecutor(config.workers) as pool:
            outs = list(pool.map(_block, [(config, n_index, x, c) for c in chunks]))
        results = {}
        for chunk, out in zip(chunks, outs):
            results.update(zip(chunk, out))
    else:
        results = dict(zip(indices, _block((config, n_index, x, indices))))
    for r in indices:
        if results[r] is not None:
            mle[r], bce[r] = results[r]
    return mle, bce


def run_simulation(config: SimConfig) -> SimReport:
    truth = np.append(config.true_beta, config.true_alpha)
    names = config.param_names
    cells: list[SimCell] = []
    failures = {}
    for n_index, n in enumerate(config.n_grid):
        mle, bce = run_size(config, n_index, n)
        ok = ~np.isnan(mle).any(axis=1)
        failures[f"alpha={config.true_alpha:g},n={n}"] = int(config.reps - ok.sum())
        if not ok.any():
            log.warning("no replication converged for n=%d", n)
            continue
        for label, est in (("MLE", mle[ok]), ("BCE", bce[ok])):
            s = summarize(est, truth)
            for j, name in enumerate(names):
                cells.append(
                    SimCell(
                        alpha=float(config.true_alpha),
                        n=int(n),
                        parameter=name,
                        estimator=label,
                        truth=float(truth[j]),
                        mean=float(s.mean[j]),
                        bias=float(s.bias[j]),
                        relative_bias=float(s.relative_bias[j]),
                        rmse=float(s.rmse[j]),
                        used=int(ok.sum()),
                        flag="absolute_bias" if s.undefined[j] else "",
                    )
                )
    return SimReport(cells, failures, [config.header()])


PRESETS = {
    "table1": dict(model="gallant", beta=[4.0, 5.0, 3.0, 1.5], alpha=[0.5, 1.5], n=[15, 30, 45]),
    "table3": dict(model="michaelis_menten", beta=[3.0, 0.5], alpha=[0.5], n=[20, 30, 40, 50]),
}


def configs_from_dict(study: dict, reps=None, seed=None, workers: int = 1) -> list[SimConfig]:
    """Build one :class:`SimConfig` per alpha value from a preset or TOML table."""
    if "expression" in study:
        model = parse_model(study["expression"], study["params"], study.get("covariates", []))
    elif "model" in study:
        model = builtin(study["model"])
    else:
        raise ValueError("simulation config needs 'model' (builtin name) or 'expression'")
    alphas = study["alpha"] if isinstance(study["alpha"], (list, tuple)) else [study["alpha"]]
    out = []
    for a in alphas:
        out.append(
            SimConfig(
                model=model,
                true_beta=study["beta"],
                true_alpha=float(a),
                n_grid=[int(n) for n in study["n"]],
                reps=int(reps if reps is not None else study.get("reps", 10_000)),
                seed=int(seed if seed is not None else study.get("seed", 2009)),
                max_iter=int(study.get("max_iter", 200)),
                workers=workers,
                name=study.get("name", ""),
            )
        )
    return out


def run_study(configs: Sequence[SimConfig]) -> SimReport:
    report = SimReport([], {}, [])
    for cfg in configs:
        report = report.extend(run_simulation(cfg))
    return report
