"""Command line entry point: ``bsnlr fit | residuals | simulate``.

Exit codes: 0 success, 1 usage or I/O error, 2 the fit did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bias import correct, corrected_fisher
from .estimate import FitConfig, FitError, fit, residuals
from .expr import ModelError, UnknownIdentifierError, identifiers
from .mc import PRESETS, configs_from_dict, run_study
from .model import Dataset, EvaluationError, parse_model
from .tables import FIT_SCHEMA, DataError, read_csv_columns, sim_to_csv, write_residuals

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2

log = logging.getLogger("bsnlr")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    if not names:
        raise argparse.ArgumentTypeError("expected at least one parameter name")
    return names


def load_problem(args):
    """Read the CSV and parse the model against its columns."""
    cols = read_csv_columns(args.data)
    if args.response not in cols:
        raise DataError(f"{args.data}: no response column {args.response!r}")
    y = cols.pop(args.response)
    if args.log_response:
        if np.any(y <= 0):
            raise DataError("--log-response needs strictly positive responses")
        y = np.log(y)
    try:
        full = parse_model(args.model, args.params, list(cols))
    except UnknownIdentifierError as exc:
        raise DataError(
            f"model refers to {exc.name!r}, which is neither a parameter nor a column of {args.data}"
        ) from exc
    used = [c for c in cols if c in identifiers(full.ast)]
    model = parse_model(args.model, args.params, used)
    data = Dataset(y, np.column_stack([cols[c] for c in used]) if used else np.zeros((len(y), 0)), used)
    return model, data


def _param_table(names, values, ses):
    return {name: {"estimate": float(v), "se": float(s)} for name, v, s in zip(names, values, ses)}


def fit_report(args, model, data, res) -> dict:
    doc = {
        "schema": FIT_SCHEMA,
        "version": __version__,
        "data": str(args.data),
        "n": data.n,
        "model": model.text,
        "params": list(model.params),
        "covariates": list(model.covariates),
        "response": args.response,
        "log_response": bool(args.log_response),
        "converged": bool(res.converged),
        "method": res.method,
        "iterations": int(res.iterations),
        "message": res.message,
        "score_norm": res.score_norm,
        "loglik": res.loglik,
        "mle": {
            "beta": _param_table(model.params, res.beta_hat, res.se_beta),
            "alpha": {"estimate": res.alpha_hat, "se": res.se_alpha},
        },
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = correct(res)
    se_beta, se_alpha = corrected_fisher(rep, model, data.design_for(model))
    doc["bias"] = {
        "beta": {name: float(b) for name, b in zip(model.params, rep.b_beta)},
        "alpha": rep.b_alpha,
    }
    doc["corrected"] = {
        "beta": _param_table(model.params, rep.beta_tilde, se_beta),
        "alpha": {"estimate": rep.alpha_tilde, "se": se_alpha},
        "alpha_nonpositive": rep.alpha_nonpositive,
    }
    doc["observations"] = [
        {"index": i + 1, "mu_hat": float(m), "b_mu": float(b), "var_mu": float(v)}
        for i, (m, b, v) in enumerate(zip(res.bundle.mu, rep.b_mu, rep.var_mu))
    ]
    return doc


def _run_fit(args):
    model, data = load_problem(args)
    cfg = FitConfig(start=None if args.start is None else np.asarray(args.start), max_iter=args.max_iter)
    if args.start is not None and len(args.start) != model.p:
        raise UsageError(f"--start has {len(args.start)} values for {model.p} parameters")
    if args.start is None and not model.is_affine:
        raise UsageError("--start is required for a model that is nonlinear in its parameters")
    res = fit(model, data, cfg)
    return model, data, res


def cmd_fit(args) -> int:
    model, data, res = _run_fit(args)
    doc = fit_report(args, model, data, res)
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if not res.converged:
        print(f"error: fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_residuals(args) -> int:
    model, data, res = _run_fit(args)
    r = residuals(res, data)
    text = write_residuals(Path(args.out) if args.out else None, data.y, r.mu_hat, r.eps_hat, r.r_hat)
    if not args.out:
        sys.stdout.write(text)
    if not res.converged:
        print(f"error: fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc


def cmd_simulate(args) -> int:
    if args.preset:
        study = dict(PRESETS[args.preset], name=args.preset)
    else:
        study = _load_toml(args.config)
        study = study.get("simulation", study)
    try:
        configs = configs_from_dict(study, reps=args.reps, seed=args.seed, workers=args.workers)
    except (KeyError, TypeError) as exc:
        raise DataError(f"invalid simulation config: {exc}") from exc
    report = run_study(configs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "simulation.csv").write_text(sim_to_csv(report), encoding="utf-8")
    (out / "simulation.json").write_text(report.to_json() + "\n", encoding="utf-8")
    for key, count in report.failures.items():
        if count:
            log.warning("%s: %d replications failed and were excluded", key, count)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsnlr", description="Birnbaum-Saunders nonlinear regression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def fit_flags(p):
        p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--model", required=True, help='mean function, e.g. "b1 + b2*exp(b3/w)"')
        p.add_argument("--params", required=True, type=_names, help="comma-separated parameter names")
        p.add_argument("--start", type=_floats, help="comma-separated starting values")
        p.add_argument("--response", default="y", help="response column (default: y)")
        p.add_argument("--log-response", action="store_true", help="model log(response), e.g. raw lifetimes")
        p.add_argument("--max-iter", type=int, default=200)

    p_fit = sub.add_parser("fit", help="fit a model and report bias-corrected estimates")
    fit_flags(p_fit)
    p_fit.add_argument("--out", help="write the JSON report here instead of stdout")
    p_fit.set_defaults(func=cmd_fit)

    p_res = sub.add_parser("residuals", help="write a residual table")
    fit_flags(p_res)
    p_res.add_argument("--out", help="write the CSV table here instead of stdout")
    p_res.set_defaults(func=cmd_residuals)

    p_sim = sub.add_parser("simulate", help="Monte Carlo study of MLE and corrected estimates")
    src = p_sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="TOML file describing the study")
    src.add_argument("--preset", choices=sorted(PRESETS))
    p_sim.add_argument("--reps", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--out-dir", required=True)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, UsageError, ModelError, EvaluationError, FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
