"""Reading observation files and writing reports.

Dense files are rectangular CSV; an empty cell or ``NA`` marks a missing
entry.  Triplet files hold one observed cell per line as ``i,j,y`` with
0-based indices.
"""
from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .estimator import FitResult
from .model_core import ObservationSet
from .selection import SelectionResult

__all__ = [
    "CsvFormatError",
    "read_dense_csv",
    "write_dense_csv",
    "read_triplets_csv",
    "write_triplets_csv",
    "selection_report",
    "selection_table_csv",
    "write_selection_report",
    "validate_selection_report",
    "load_schema",
    "fit_report",
    "fit_params_csv",
    "study_csv",
    "spectrum_csv",
    "dumps",
]

MISSING_TOKENS = {"", "NA"}
REPORT_FORMAT = "glfm-jic/selection-report"
REPORT_VERSION = 1


class CsvFormatError(ValueError):
    """Malformed input file; the message names the offending line."""


def _parse_float(token: str, line: int, col: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise CsvFormatError(f"line {line}, column {col + 1}: non-numeric cell {token!r}") from None
    if not math.isfinite(value):
        raise CsvFormatError(f"line {line}, column {col + 1}: non-finite cell {token!r}")
    return value


def read_dense_csv(path, header: bool = False) -> ObservationSet:
    """Read a rectangular matrix; ``header=True`` skips the first line."""
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for line_no, record in enumerate(csv.reader(fh), start=1):
            if header and line_no == 1:
                continue
            if not record:
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise CsvFormatError(
                    f"line {line_no}: expected {width} cells, found {len(record)}"
                )
            rows.append([
                math.nan if tok.strip() in MISSING_TOKENS else _parse_float(tok.strip(), line_no, c)
                for c, tok in enumerate(record)
            ])
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    return ObservationSet.from_dense(np.array(rows, dtype=float))


def write_dense_csv(obs: ObservationSet, path) -> None:
    dense = obs.to_dense()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in dense:
            writer.writerow(["NA" if math.isnan(v) else repr(float(v)) for v in row])


def read_triplets_csv(path, N: int, J: int) -> ObservationSet:
    """Read ``i,j,y`` lines (0-based).  A leading non-numeric header line is skipped."""
    rows, cols, values = [], [], []
    seen: dict[tuple[int, int], int] = {}
    with open(path, newline="") as fh:
        for line_no, record in enumerate(csv.reader(fh), start=1):
            if not record:
                continue
            if len(record) != 3:
                raise CsvFormatError(f"line {line_no}: expected 3 cells (i,j,y), found {len(record)}")
            if line_no == 1 and not record[0].strip().lstrip("-").isdigit():
                continue
            try:
                i, j = int(record[0]), int(record[1])
            except ValueError:
                raise CsvFormatError(f"line {line_no}: indices must be integers") from None
            y = _parse_float(record[2].strip(), line_no, 2)
            if not (0 <= i < N and 0 <= j < J):
                raise CsvFormatError(
                    f"line {line_no}: index ({i}, {j}) out of range for a {N} x {J} matrix"
                )
            if (i, j) in seen:
                raise CsvFormatError(
                    f"line {line_no}: duplicate observation ({i}, {j}), first seen on line {seen[(i, j)]}"
                )
            seen[(i, j)] = line_no
            rows.append(i)
            cols.append(j)
            values.append(y)
    return ObservationSet(N, J, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                          np.array(values, dtype=float))


def write_triplets_csv(obs: ObservationSet, path, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(["i", "j", "y"])
        for i, j, y in zip(obs.rows, obs.cols, obs.values):
            writer.writerow([int(i), int(j), repr(float(y))])


def dumps(obj) -> str:
    """Deterministic JSON text."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def selection_report(result: SelectionResult, config: dict | None = None,
                     timestamp: bool = False) -> dict:
    report = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "family": result.family,
        "N": result.N,
        "J": result.J,
        "n": result.n,
        "phi_used": result.phi_used,
        "chosen_K": result.chosen_K,
        "rows": [r.to_dict() for r in result.rows],
        "errors": {str(k): v for k, v in sorted(result.errors.items())},
    }
    if config is not None:
        report["config"] = config
    if timestamp:
        report["created"] = _timestamp()
    return report


def selection_table_csv(result: SelectionResult, decimals: int | None = None) -> str:
    """Deviance / penalty / JIC rows with one column per K; the chosen K is starred."""

    def fmt(x: float) -> str:
        return repr(float(x)) if decimals is None else f"{x:.{decimals}f}"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["K"] + [r.K for r in result.rows])
    writer.writerow(["deviance"] + [fmt(r.deviance) for r in result.rows])
    writer.writerow(["penalty"] + [fmt(r.penalty) for r in result.rows])
    writer.writerow(["jic"] + [fmt(r.jic) for r in result.rows])
    writer.writerow(["chosen"] + ["*" if r.K == result.chosen_K else "" for r in result.rows])
    return buf.getvalue()


def load_schema() -> dict:
    text = resources.files("glfm_jic").joinpath("schemas/selection_report.schema.json").read_text()
    return json.loads(text)


def validate_selection_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` when the report does not match the schema."""
    jsonschema.validate(report, load_schema())


def write_selection_report(result: SelectionResult, path, fmt: str = "json",
                           config: dict | None = None, timestamp: bool = False,
                           decimals: int | None = None) -> None:
    if fmt == "json":
        text = dumps(selection_report(result, config, timestamp))
    elif fmt == "csv":
        text = selection_table_csv(result, decimals)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(path).write_text(text)


def fit_report(fit: FitResult, obs: ObservationSet, family: str,
               include_params: bool = True) -> dict:
    out = {
        "family": family,
        "K": fit.K,
        "N": obs.N,
        "J": obs.J,
        "n": obs.n,
        "C": fit.params.C,
        "phi": fit.params.phi,
        "loglik": fit.loglik,
        "sweeps_used": fit.sweeps_used,
        "converged": fit.converged,
        "trace": list(fit.trace),
    }
    if include_params:
        out["params"] = {
            "F": fit.params.F.tolist(),
            "A": fit.params.A.tolist(),
            "d": fit.params.d.tolist(),
        }
    return out


def fit_params_csv(fit: FitResult) -> str:
    """Long-form parameters: ``block,row,factor,value``; intercepts use factor -1."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["block", "row", "factor", "value"])
    p = fit.params
    for i, row in enumerate(p.F):
        for k, v in enumerate(row):
            writer.writerow(["F", i, k, repr(float(v))])
    for j, row in enumerate(p.A):
        for k, v in enumerate(row):
            writer.writerow(["A", j, k, repr(float(v))])
    for j, v in enumerate(p.d):
        writer.writerow(["d", j, -1, repr(float(v))])
    return buf.getvalue()


def study_csv(summary_dict: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    keys = ["replication", "seed", "chosen_K", "n", "runtime", "error"]
    writer.writerow(keys)
    for o in summary_dict["outcomes"]:
        writer.writerow(["" if o.get(k) is None else o.get(k) for k in keys])
    return buf.getvalue()


def spectrum_csv(values) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "singular_value"])
    for k, v in enumerate(values, start=1):
        writer.writerow([k, repr(float(v))])
    return buf.getvalue()
