"""CSV datasets, metrics tables and estimate reports."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from drmean.datagen import INTERCEPT, Dataset
from drmean.estimators import METHODS, EstimateResult


class DatasetError(ValueError):
    pass


def _num(v: float) -> str:
    # repr is locale independent and round-trips exactly
    return repr(float(v))


def read_dataset_csv(path) -> Dataset:
    """Read a dataset with columns ``t``, ``y`` and numeric covariates.

    ``y`` may be empty only where ``t`` is 0 and must be empty there.
    Every other column becomes a covariate, in header order, after an
    automatically prepended intercept column ``const``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    for col in ("t", "y"):
        if col not in header:
            raise DatasetError(f"{path}: missing required column {col!r}")
    if len(set(header)) != len(header):
        raise DatasetError(f"{path}: duplicate column names")
    if INTERCEPT in header:
        raise DatasetError(f"{path}: column name {INTERCEPT!r} is reserved for the intercept")
    it, iy = header.index("t"), header.index("y")
    cov = [j for j in range(len(header)) if j not in (it, iy)]
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    n = len(rows)
    X = np.empty((n, len(cov)))
    t = np.empty(n, dtype=np.int8)
    y = np.full(n, np.nan)
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise DatasetError(f"{path}: row {i} has {len(r)} fields, expected {len(header)}")
        tv = r[it].strip()
        if tv not in ("0", "1"):
            raise DatasetError(f"{path}: row {i}, column 't': expected 0 or 1, got {tv!r}")
        t[i - 1] = int(tv)
        yv = r[iy].strip()
        if t[i - 1] == 1:
            if yv == "":
                raise DatasetError(f"{path}: row {i}: y is missing but t = 1")
            try:
                y[i - 1] = float(yv)
            except ValueError:
                raise DatasetError(f"{path}: row {i}, column 'y': not a number: {yv!r}") from None
            if not math.isfinite(y[i - 1]):
                raise DatasetError(f"{path}: row {i}, column 'y': not finite")
        elif yv != "":
            raise DatasetError(f"{path}: row {i}: y is present but t = 0 (inconsistent)")
        for k, j in enumerate(cov):
            v = r[j].strip()
            try:
                X[i - 1, k] = float(v)
            except ValueError:
                raise DatasetError(f"{path}: row {i}, column {header[j]!r}: not a number: {v!r}") from None
            if not math.isfinite(X[i - 1, k]):
                raise DatasetError(f"{path}: row {i}, column {header[j]!r}: not finite")

    X = np.column_stack([np.ones(n), X])
    names = (INTERCEPT,) + tuple(header[j] for j in cov)
    return Dataset(X=X, t=t, y=y, names=names)


def write_dataset_csv(data: Dataset, path) -> None:
    """Write the observed view of ``data`` (intercept column omitted)."""
    cols = [j for j, name in enumerate(data.names) if name != INTERCEPT]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([data.names[j] for j in cols] + ["t", "y"])
        for i in range(data.n):
            yv = _num(data.y[i]) if data.t[i] == 1 else ""
            w.writerow([_num(data.X[i, j]) for j in cols] + [int(data.t[i]), yv])


METRIC_FIELDS = ("n", "pi_model", "link", "y_model", "estimator", "bias", "pct_bias", "rmse", "mae", "sd",
                 "replicates", "failures")


def write_metrics_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r.n, r.pi_model, r.link, r.y_model, r.estimator, _num(r.bias), _num(r.pct_bias),
                        _num(r.rmse), _num(r.mae), _num(r.sd), r.replicates, r.failures])


TABLE_GROUPS = (
    ("Naive respondent mean", ("naive",)),
    ("IPW estimators", ("ipw_pop", "ipw_nr")),
    ("Propensity-stratified estimators", ("strat_pi", "strat_pi_nr")),
    ("Ordinary least-squares regression estimators", ("ols",)),
    ("Propensity and fitted-value stratified estimators", ("strat_pi_m",)),
    ("Bias-corrected regression estimators", ("bc_ols", "bc_ols_norm", "bc_ols_nr", "bc_ols_strat")),
    ("Regression estimators with inverse-propensity weighted coefficients", ("wls",)),
    ("Propensity-covariate regression estimators", ("pi_cov", "pi_cov_lspline", "pi_cov_qspline")),
    ("Inverse-propensity covariate regression estimators", ("pi_cov_inv",)),
)


def _fmt2(v: float) -> str:
    return "NA" if math.isnan(v) else f"{v:.2f}"


def _model_label(spec: str, link: str | None = None) -> str:
    if spec == "-":
        return "-"
    s = spec.capitalize()
    if link and link not in ("-", "logit"):
        s += f" [{link}]"
    return s


def format_tables(rows) -> str:
    """Aligned text tables, one per estimator family, one panel per sample size."""
    rows = list(rows)
    sizes = sorted({r.n for r in rows})
    out = []
    number = 0
    for title, methods in TABLE_GROUPS:
        grp = [r for r in rows if r.estimator in methods]
        if not grp:
            continue
        number += 1
        n_reps = max(r.replicates for r in grp)
        header = ["Sample size", "pi-model", "y-model", "Method", "Bias", "% Bias", "RMSE", "MAE", "Failures"]
        body = []
        for k, n in enumerate(s for s in sizes if any(r.n == s for r in grp)):
            panel = f"({chr(ord('a') + k)}) n = {n}"
            first = True
            prev = None
            for r in (r for r in grp if r.n == n):
                pim = _model_label(r.pi_model, r.link)
                ym = _model_label(r.y_model)
                shown = (pim, ym)
                body.append([panel if first else "",
                             pim if shown != prev else "", ym if shown != prev else "",
                             METHODS[r.estimator].label,
                             _fmt2(r.bias), _fmt2(r.pct_bias), _fmt2(r.rmse), _fmt2(r.mae), str(r.failures)])
                first = False
                prev = shown
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        lines = [f"TABLE {number}", f"{title}: performance over {n_reps} samples", ""]
        left = 4
        fmt = lambda cells: "  ".join(c.ljust(w) if j < left else c.rjust(w)
                                      for j, (c, w) in enumerate(zip(cells, widths))).rstrip()
        lines.append(fmt(header))
        lines.append("-" * len(fmt(header)))
        for cells in body:
            if cells[0] and lines[-1] != "-" * len(fmt(header)):
                lines.append("")
            lines.append(fmt(cells))
        out.append("\n".join(lines))
    return "\n\n\n".join(out) + "\n"


ESTIMATE_FIELDS = ("method", "status", "mu_hat", "mu0_hat", "max_weight", "min_resp_pi", "collapsed",
                   "imputed", "dropped", "message")


def write_estimates_csv(results, path) -> None:
    """``results`` is a list of ``(method, EstimateResult or None, error message or None)``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_FIELDS)
        for method, res, err in results:
            if res is None:
                w.writerow([method, "FAILED", "", "", "", "", "", "", "", err])
                continue
            assert isinstance(res, EstimateResult)
            w.writerow([method, "OK", _num(res.mu_hat), "" if res.mu0_hat is None else _num(res.mu0_hat),
                        _num(res.max_weight), _num(res.min_resp_pi), res.collapsed, res.imputed, res.dropped,
                        ""])


def write_residuals_csv(eta, residuals, respondents, path) -> None:
    """Pairs of (linear predictor, outcome-model residual) for respondents."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "eta_hat", "residual"])
        for i in np.flatnonzero(respondents):
            w.writerow([i + 1, _num(eta[i]), _num(residuals[i])])
