"""CSV/JSON readers and writers shared by the CLI and the tests."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .mc import SimCell, SimReport

FIT_SCHEMA = "bsnlr.fit/1"
SIM_COLUMNS = ["alpha", "n", "parameter", "estimator", "truth", "mean", "bias", "relative_bias", "rmse", "used", "flag"]
RESIDUAL_COLUMNS = ["index", "y", "mu_hat", "eps_hat", "r_hat"]


class DataError(ValueError):
    pass


def read_csv_columns(path) -> dict[str, np.ndarray]:
    """Numeric columns of a headed CSV file keyed by header name."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicated column names in header")
    cols: dict[str, list[float]] = {h: [] for h in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
        for h, cell in zip(header, row):
            try:
                cols[h].append(float(cell))
            except ValueError:
                raise DataError(f"{path}:{lineno}: column {h!r} has non-numeric value {cell!r}") from None
    return {h: np.asarray(v) for h, v in cols.items()}


def write_residuals(path: Optional[Path], y, mu, eps, r) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESIDUAL_COLUMNS)
    for i in range(len(y)):
        w.writerow([i + 1, repr(float(y[i])), repr(float(mu[i])), repr(float(eps[i])), repr(float(r[i]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_residuals(path) -> dict[str, np.ndarray]:
    cols = read_csv_columns(path)
    missing = set(RESIDUAL_COLUMNS) - set(cols)
    if missing:
        raise DataError(f"{path}: missing residual columns {sorted(missing)}")
    return cols


def sim_to_csv(report: SimReport) -> str:
    buf = io.StringIO()
    for cfg in report.header:
        buf.write("# " + json.dumps(cfg, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIM_COLUMNS)
    for c in report.cells:
        w.writerow([getattr(c, k) if isinstance(getattr(c, k), str) else repr(getattr(c, k)) for k in SIM_COLUMNS])
    return buf.getvalue()


def sim_from_csv(text: str) -> SimReport:
    header = []
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            header.append(json.loads(line[2:]))
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    cells = []
    for row in reader:
        cells.append(
            SimCell(
                alpha=float(row["alpha"]),
                n=int(row["n"]),
                parameter=row["parameter"],
                estimator=row["estimator"],
                truth=float(row["truth"]),
                mean=float(row["mean"]),
                bias=float(row["bias"]),
                relative_bias=float(row["relative_bias"]),
                rmse=float(row["rmse"]),
                used=int(row["used"]),
                flag=row["flag"],
            )
        )
    return SimReport(cells, {}, header)


def read_fit_report(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != FIT_SCHEMA:
        raise DataError(f"{path}: unsupported schema {doc.get('schema')!r}")
    return doc
