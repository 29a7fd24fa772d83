"""Estimators of a population mean from a sample with missing outcomes.

Every estimator takes a :class:`~drmean.datagen.Dataset` plus whatever
fitted quantities it needs (estimated propensities, an outcome-model fit)
and returns an :class:`EstimateResult`.  Estimated propensities are used
as given: no trimming, truncation or clamping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logit

from drmean.datagen import Dataset
from drmean.glm import LinearFit, fit_linear


class EstimationError(ValueError):
    """An estimator is undefined for the given sample."""


@dataclass(frozen=True)
class StratumAssignment:
    """Quantile-based grouping of units; labels run from 1 to ``S``."""

    S: int
    cutpoints: np.ndarray
    label: np.ndarray


@dataclass(frozen=True)
class EstimateResult:
    method: str
    mu_hat: float
    mu0_hat: float | None = None
    max_weight: float = float("nan")
    min_resp_pi: float = float("nan")
    collapsed: int = 0
    imputed: int = 0
    dropped: int = 0
    normalization: str | None = None


def make_strata(score, S: int) -> StratumAssignment:
    """Group units by the sample ``1/S, ..., (S-1)/S`` quantiles of ``score``.

    Quantiles interpolate linearly between order statistics (numpy's
    default "linear" method).  Unit ``i`` is in stratum ``s`` when
    ``q[s-1] < score[i] <= q[s]``, so a score equal to a cutpoint goes to
    the lower stratum.
    """
    score = np.asarray(score, dtype=float)
    n = len(score)
    if S < 1:
        raise ValueError("S must be at least 1")
    if n < S:
        raise ValueError("need at least S units")
    if S > 1 and np.ptp(score) == 0:
        raise EstimationError("degenerate stratification")
    cut = np.quantile(score, np.arange(1, S) / S)
    label = np.searchsorted(cut, score, side="left") + 1
    return StratumAssignment(S=S, cutpoints=cut, label=label)


def collapse_strata(label, t, S: int):
    """Merge strata that contain units but no respondents.

    The offending stratum farthest from the middle one is fused with its
    neighbour on the side of the middle stratum; the middle stratum itself
    fuses upward, or downward when it is the top one.  Repeats until every
    occupied stratum has a respondent.  Returns ``(labels, merges)`` with
    labels renumbered 1..G in the original order.
    """
    label = np.asarray(label)
    t = np.asarray(t)
    if not np.any(t == 1):
        raise EstimationError("no respondents")
    groups = [[s] for s in range(1, S + 1) if np.any(label == s)]
    resp = {s: int(np.sum(t[label == s])) for s in range(1, S + 1)}
    center = (S + 1) / 2.0
    merges = 0
    while True:
        bad = [k for k, g in enumerate(groups) if sum(resp[s] for s in g) == 0]
        if not bad:
            break
        k = max(bad, key=lambda k: (max(abs(s - center) for s in groups[k]), -k))
        g = groups[k]
        if max(g) < center:
            j = k + 1
        elif min(g) > center:
            j = k - 1
        else:
            j = k + 1 if k + 1 < len(groups) else k - 1
        lo, hi = sorted((k, j))
        groups[lo:hi + 1] = [groups[lo] + groups[hi]]
        merges += 1
    new = np.empty_like(label)
    for gi, g in enumerate(groups, start=1):
        new[np.isin(label, g)] = gi
    return new, merges


def _respondent_pi(data: Dataset, pi_hat) -> np.ndarray:
    pi_hat = np.asarray(pi_hat, dtype=float)
    if pi_hat.shape != (data.n,):
        raise ValueError("pi_hat must have one entry per unit")
    p1 = pi_hat[data.respondents]
    if np.any(~(p1 > 0)):
        raise EstimationError("infinite weight: a respondent has estimated propensity 0")
    return p1


def _ybar1(data: Dataset) -> float:
    if data.n1 == 0:
        raise EstimationError("no respondents")
    return float(np.mean(data.y[data.respondents]))


def _combine_nr(data: Dataset, mu0: float) -> float:
    r1 = data.n1 / data.n
    return r1 * _ybar1(data) + (1.0 - r1) * mu0


def _stratum_means(values, t, label, G):
    resp = t == 1
    sums = np.bincount(label[resp] - 1, weights=values[resp], minlength=G)
    counts = np.bincount(label[resp] - 1, minlength=G)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts


def _stratified(values, t, label, G, target="POP") -> float:
    """Share-weighted average of within-stratum respondent means of ``values``."""
    means = _stratum_means(values, t, label, G)
    if target == "POP":
        share = np.bincount(label - 1, minlength=G) / len(label)
    else:
        share = np.bincount(label[t == 0] - 1, minlength=G) / np.sum(t == 0)
    occupied = share > 0
    return float(np.sum(share[occupied] * means[occupied]))


def _pi_strata(data: Dataset, score, S: int):
    strata = make_strata(score, S)
    label, merges = collapse_strata(strata.label, data.t, S)
    return label, int(label.max()), merges


def naive_mean(data: Dataset) -> EstimateResult:
    """Mean of the observed outcomes."""
    return EstimateResult("naive", _ybar1(data))


def ipw_pop(data: Dataset, pi_hat) -> EstimateResult:
    """Respondent mean weighted by normalised inverse propensities."""
    p1 = _respondent_pi(data, pi_hat)
    w = 1.0 / p1
    y1 = data.y[data.respondents]
    if data.n1 == 0:
        raise EstimationError("no respondents")
    mu = float(np.sum(w * y1) / np.sum(w))
    return EstimateResult("ipw_pop", mu, max_weight=float(w.max()), min_resp_pi=float(p1.min()),
                          normalization="sum of weights")


def ipw_nr(data: Dataset, pi_hat) -> EstimateResult:
    """Reweight respondents toward the nonrespondents with odds ``(1 - pi) / pi``.

    The nonrespondent mean estimate is combined with the respondent mean
    by the sample response rate.
    """
    p1 = _respondent_pi(data, pi_hat)
    w = (1.0 - p1) / p1
    if not np.sum(w) > 0:
        raise EstimationError("nonrespondent weights sum to zero")
    y1 = data.y[data.respondents]
    mu0 = float(np.sum(w * y1) / np.sum(w))
    return EstimateResult("ipw_nr", _combine_nr(data, mu0), mu0_hat=mu0, max_weight=float(w.max()),
                          min_resp_pi=float(p1.min()), normalization="sum of weights")


def strat_pi(data: Dataset, pi_hat, S: int = 5, target: str = "POP") -> EstimateResult:
    """Propensity-stratified estimate over ``S`` quantile groups.

    ``target="POP"`` weights stratum respondent means by the share of all
    units in each stratum; ``target="NR"`` weights them by the share of
    nonrespondents and combines the result with the respondent mean.
    """
    if target not in ("POP", "NR"):
        raise ValueError("target must be 'POP' or 'NR'")
    label, G, merges = _pi_strata(data, pi_hat, S)
    yv = np.nan_to_num(data.y)
    if target == "POP":
        mu = _stratified(yv, data.t, label, G, "POP")
        return EstimateResult("strat_pi", mu, collapsed=merges)
    if data.n0 == 0:
        return EstimateResult("strat_pi_nr", _ybar1(data), collapsed=merges)
    mu0 = _stratified(yv, data.t, label, G, "NR")
    return EstimateResult("strat_pi_nr", _combine_nr(data, mu0), mu0_hat=mu0, collapsed=merges)


def ols_reg(data: Dataset, y_fit: LinearFit) -> EstimateResult:
    """Average of outcome-model predictions over every unit."""
    return EstimateResult("ols", float(np.mean(y_fit.fitted)), dropped=len(y_fit.dropped))


def _axis_labels(data: Dataset, score, S: int):
    score = np.asarray(score, dtype=float)
    if np.ptp(score) == 0:
        return np.ones(data.n, dtype=int), 1, 0
    return _pi_strata(data, score, S)


def _additive_fill(means, counts, resp_counts):
    """Impute cell means for occupied cells with no respondents.

    Row + column main-effects model fitted by least squares to the cells
    that have respondents, weighted by their respondent counts.
    """
    R, C = means.shape
    have = resp_counts > 0
    rows, cols = np.nonzero(have)
    D = np.zeros((len(rows), R + C - 1))
    D[:, 0] = 1.0
    for k, (r, c) in enumerate(zip(rows, cols)):
        if r > 0:
            D[k, r] = 1.0
        if c > 0:
            D[k, R + c - 1] = 1.0
    fit = fit_linear(D, means[have], weights=resp_counts[have].astype(float))
    if fit.dropped:
        raise EstimationError("row/column model for empty cells is not identifiable")
    a = fit.beta[0]
    row_eff = np.r_[0.0, fit.beta[1:R]]
    col_eff = np.r_[0.0, fit.beta[R:]]
    out = means.copy()
    need = (counts > 0) & ~have
    rr, cc = np.nonzero(need)
    out[rr, cc] = a + row_eff[rr] + col_eff[cc]
    return out, int(need.sum())


def strat_pi_m(data: Dataset, pi_hat, y_fit: LinearFit, S: int = 5) -> EstimateResult:
    """Cross-classify units by quantiles of estimated propensity and of predicted outcome.

    Rows (propensity groups) or columns (prediction groups) without any
    respondent are merged as in :func:`collapse_strata`.  An axis whose
    score is constant contributes a single group.  Occupied cells with no
    respondents get a mean from a main-effects model over rows and columns.
    """
    if data.n1 == 0:
        raise EstimationError("no respondents")
    rl, R, rm = _axis_labels(data, pi_hat, S)
    cl, C, cm = _axis_labels(data, y_fit.fitted, S)
    r0, c0 = rl - 1, cl - 1
    resp = data.respondents
    counts = np.zeros((R, C))
    np.add.at(counts, (r0, c0), 1)
    resp_counts = np.zeros((R, C))
    np.add.at(resp_counts, (r0[resp], c0[resp]), 1)
    sums = np.zeros((R, C))
    np.add.at(sums, (r0[resp], c0[resp]), data.y[resp])
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / resp_counts
    imputed = 0
    if np.any((counts > 0) & (resp_counts == 0)):
        means, imputed = _additive_fill(means, counts, resp_counts)
    occ = counts > 0
    mu = float(np.sum(counts[occ] / data.n * means[occ]))
    return EstimateResult("strat_pi_m", mu, collapsed=rm + cm, imputed=imputed)


BC_VARIANTS = ("POP", "POP_NORMALIZED", "NR", "STRAT")


def bc_ols(data: Dataset, pi_hat, y_fit: LinearFit, variant: str = "POP", S: int = 5) -> EstimateResult:
    """Regression estimate plus a propensity-based estimate of the mean residual.

    Variants
    --------
    POP
        ``mean(m_hat) + sum(t * e / pi) / n``.
    POP_NORMALIZED
        Same, with the correction divided by ``sum(t / pi)`` instead of n.
    NR
        Nonrespondent mean of ``m_hat`` plus the respondent residual mean
        under odds weights ``(1 - pi) / pi``; combined with the respondent
        mean by the response rate.
    STRAT
        Correction is the ``S``-group propensity-stratified mean residual.
    """
    if variant not in BC_VARIANTS:
        raise ValueError(f"variant must be one of {BC_VARIANTS}")
    resp = data.respondents
    e1 = y_fit.residuals[resp]
    mu_ols = float(np.mean(y_fit.fitted))
    name = "bc_ols" if variant == "POP" else f"bc_ols_{variant.lower()}"

    if variant == "STRAT":
        label, G, merges = _pi_strata(data, pi_hat, S)
        e = np.nan_to_num(y_fit.residuals)
        corr = _stratified(e, data.t, label, G, "POP")
        return EstimateResult(name, mu_ols + corr, collapsed=merges, dropped=len(y_fit.dropped))

    p1 = _respondent_pi(data, pi_hat)
    if variant == "NR":
        w = (1.0 - p1) / p1
        if data.n0 == 0:
            return EstimateResult(name, _ybar1(data), max_weight=float(w.max()), min_resp_pi=float(p1.min()))
        if not np.sum(w) > 0:
            raise EstimationError("nonrespondent weights sum to zero")
        mu0 = float(np.mean(y_fit.fitted[~resp]) + np.sum(w * e1) / np.sum(w))
        return EstimateResult(name, _combine_nr(data, mu0), mu0_hat=mu0, max_weight=float(w.max()),
                              min_resp_pi=float(p1.min()), normalization="sum of weights",
                              dropped=len(y_fit.dropped))
    w = 1.0 / p1
    if variant == "POP":
        corr, norm = np.sum(w * e1) / data.n, "n"
    else:
        corr, norm = np.sum(w * e1) / np.sum(w), "sum of weights"
    return EstimateResult(name, mu_ols + float(corr), max_weight=float(w.max()), min_resp_pi=float(p1.min()),
                          normalization=norm, dropped=len(y_fit.dropped))


def wls_reg(data: Dataset, pi_hat, X=None) -> EstimateResult:
    """Regression estimate with inverse-propensity weighted coefficients.

    ``X`` is the outcome-model design (defaults to ``data.X``).
    """
    X = data.X if X is None else np.asarray(X, dtype=float)
    p1 = _respondent_pi(data, pi_hat)
    w = np.ones(data.n)
    w[data.respondents] = 1.0 / p1
    fit = fit_linear(X, data.y, subset=data.respondents, weights=w)
    return EstimateResult("wls", float(np.mean(fit.fitted)), max_weight=float(w[data.respondents].max()),
                          min_resp_pi=float(p1.min()), dropped=len(fit.dropped))


PI_COV_BASES = ("QUINTILE_DUMMIES", "INVERSE_PROPENSITY", "LINEAR_SPLINE_QUARTILES", "QUADRATIC_SPLINE_MEDIAN")


def propensity_basis(data: Dataset, pi_hat, eta, basis: str, S: int = 5):
    """Basis columns built from the estimated propensity.

    Returns ``(B, collapsed)``.  Dummies are cut at the quantiles of the
    linear predictor (the same groups as quantiles of the propensity),
    after merging groups without respondents.
    """
    if basis == "QUINTILE_DUMMIES":
        label, G, merges = _pi_strata(data, eta, S)
        B = (label[:, None] == np.arange(2, G + 1)[None, :]).astype(float)
        return B, merges
    if basis == "INVERSE_PROPENSITY":
        _respondent_pi(data, pi_hat)
        with np.errstate(divide="ignore"):
            inv = 1.0 / np.asarray(pi_hat, dtype=float)
        if not np.all(np.isfinite(inv)):
            raise EstimationError("infinite weight: a unit has estimated propensity 0")
        return inv[:, None], 0
    if basis == "LINEAR_SPLINE_QUARTILES":
        knots = np.quantile(eta, [0.25, 0.5, 0.75])
        return np.column_stack([eta] + [np.maximum(eta - k, 0.0) for k in knots]), 0
    if basis == "QUADRATIC_SPLINE_MEDIAN":
        k = np.median(eta)
        return np.column_stack([eta, eta**2, np.maximum(eta - k, 0.0) ** 2]), 0
    raise ValueError(f"basis must be one of {PI_COV_BASES}")


def pi_cov_reg(data: Dataset, pi_hat, basis: str = "QUINTILE_DUMMIES", X=None, eta=None,
               S: int = 5) -> EstimateResult:
    """Regression estimate with functions of the estimated propensity as extra covariates.

    Parameters
    ----------
    data : Dataset
    pi_hat : array_like
        Estimated propensities for all units.
    basis : str
        One of ``PI_COV_BASES``.
    X : array_like, optional
        Outcome-model design; defaults to ``data.X``.
    eta : array_like, optional
        Linear predictor of the propensity model; defaults to
        ``logit(pi_hat)``, which is exact for a logit link.
    S : int
        Number of groups for the dummy basis.
    """
    X = data.X if X is None else np.asarray(X, dtype=float)
    pi_hat = np.asarray(pi_hat, dtype=float)
    if eta is None:
        with np.errstate(divide="ignore"):
            eta = logit(pi_hat)
    eta = np.asarray(eta, dtype=float)
    B, merges = propensity_basis(data, pi_hat, eta, basis, S)
    if not np.all(np.isfinite(B)):
        raise EstimationError("non-finite propensity basis")
    Xa = np.column_stack([X, B])
    fit = fit_linear(Xa, data.y, subset=data.respondents)
    name = {"QUINTILE_DUMMIES": "pi_cov", "INVERSE_PROPENSITY": "pi_cov_inv",
            "LINEAR_SPLINE_QUARTILES": "pi_cov_lspline", "QUADRATIC_SPLINE_MEDIAN": "pi_cov_qspline"}[basis]
    extra = {}
    if basis == "INVERSE_PROPENSITY":
        extra = dict(max_weight=float(B[data.respondents, 0].max()),
                     min_resp_pi=float(pi_hat[data.respondents].min()))
    return EstimateResult(name, float(np.mean(fit.fitted)), collapsed=merges, dropped=len(fit.dropped), **extra)


@dataclass(frozen=True)
class Method:
    """Registry entry: which fitted models an estimator consumes and how to call it."""

    name: str
    label: str
    uses_pi: bool
    uses_y: bool
    run: Callable


def _m(name, label, uses_pi, uses_y, run):
    return name, Method(name, label, uses_pi, uses_y, run)


# Each ``run`` receives (data, pi_hat, eta, y_fit, X_y, S).
METHODS: dict[str, Method] = dict([
    _m("naive", "naive", False, False, lambda d, p, e, f, X, S: naive_mean(d)),
    _m("ipw_pop", "IPW-POP", True, False, lambda d, p, e, f, X, S: ipw_pop(d, p)),
    _m("ipw_nr", "IPW-NR", True, False, lambda d, p, e, f, X, S: ipw_nr(d, p)),
    _m("strat_pi", "strat-pi", True, False, lambda d, p, e, f, X, S: strat_pi(d, p, S, "POP")),
    _m("strat_pi_nr", "strat-pi-NR", True, False, lambda d, p, e, f, X, S: strat_pi(d, p, S, "NR")),
    _m("ols", "OLS", False, True, lambda d, p, e, f, X, S: ols_reg(d, f)),
    _m("strat_pi_m", "strat-pim", True, True, lambda d, p, e, f, X, S: strat_pi_m(d, p, f, S)),
    _m("bc_ols", "BC-OLS", True, True, lambda d, p, e, f, X, S: bc_ols(d, p, f, "POP")),
    _m("bc_ols_norm", "BC-OLS-norm", True, True, lambda d, p, e, f, X, S: bc_ols(d, p, f, "POP_NORMALIZED")),
    _m("bc_ols_nr", "BC-OLS-NR", True, True, lambda d, p, e, f, X, S: bc_ols(d, p, f, "NR")),
    _m("bc_ols_strat", "BC-OLS-strat", True, True, lambda d, p, e, f, X, S: bc_ols(d, p, f, "STRAT", S)),
    _m("wls", "WLS", True, True, lambda d, p, e, f, X, S: wls_reg(d, p, X)),
    _m("pi_cov", "pi-cov", True, True,
       lambda d, p, e, f, X, S: pi_cov_reg(d, p, "QUINTILE_DUMMIES", X, e, S)),
    _m("pi_cov_inv", "1/pi-cov", True, True,
       lambda d, p, e, f, X, S: pi_cov_reg(d, p, "INVERSE_PROPENSITY", X, e)),
    _m("pi_cov_lspline", "pi-cov-lspline", True, True,
       lambda d, p, e, f, X, S: pi_cov_reg(d, p, "LINEAR_SPLINE_QUARTILES", X, e)),
    _m("pi_cov_qspline", "pi-cov-qspline", True, True,
       lambda d, p, e, f, X, S: pi_cov_reg(d, p, "QUADRATIC_SPLINE_MEDIAN", X, e)),
])


def evaluate(method: str, data: Dataset, pi_hat=None, eta=None, y_fit: LinearFit | None = None,
             X=None, S: int = 5) -> EstimateResult:
    """Run a registered estimator by name."""
    try:
        m = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown estimator {method!r}; choose from {sorted(METHODS)}") from None
    if m.uses_pi and pi_hat is None:
        raise ValueError(f"{method} needs estimated propensities")
    if m.uses_y and y_fit is None:
        raise ValueError(f"{method} needs an outcome-model fit")
    return m.run(data, pi_hat, eta, y_fit, X, S)
