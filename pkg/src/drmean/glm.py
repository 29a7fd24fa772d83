"""Model fitting for the response-propensity and outcome models.

Binary regression (logit or robit link) by iteratively reweighted least
squares, and ordinary/weighted least squares through a column-pivoted QR
factorisation that drops numerically dependent columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit, gammaln, stdtr
from scipy.stats import norm

RANK_TOL = 1e-10
WEIGHT_FLOOR = 1e-12


def _pivoted_rank(A: np.ndarray, tol: float = RANK_TOL):
    """Column-pivoted QR of ``A``; returns ``(Q, R, kept, dropped)``.

    ``kept`` lists original column indices in pivot order for the leading
    numerically independent block.
    """
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(diag > tol * diag[0]))
    kept = piv[:rank]
    dropped = tuple(sorted(int(j) for j in piv[rank:]))
    return Q, R, kept, dropped


@dataclass(frozen=True)
class LinearFit:
    """Least-squares fit on a subset of units, predicted for every unit.

    ``residuals`` is NaN outside the fitting subset.  ``dropped`` lists the
    column indices removed as linearly dependent; their coefficients are 0.
    """

    beta: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    r_squared: float
    subset: np.ndarray
    weights: np.ndarray | None
    dropped: tuple[int, ...]


def fit_linear(X, y, subset=None, weights=None, tol: float = RANK_TOL) -> LinearFit:
    """Weighted least squares of ``y`` on ``X`` over ``subset``.

    Minimises ``sum(w_i * (y_i - x_i @ beta)**2)`` over the units in
    ``subset`` (all units if None).  Values of ``y`` outside the subset are
    ignored and may be NaN.  Columns whose pivot in the QR factorisation
    falls below ``tol`` relative to the largest are dropped.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    mask = np.ones(n, dtype=bool) if subset is None else np.asarray(subset, dtype=bool)
    if not mask.any():
        raise ValueError("empty fitting subset")

    Xs = X[mask]
    ys = y[mask]
    if not np.all(np.isfinite(ys)):
        raise ValueError("y must be finite on the fitting subset")
    w = None
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        ws = w[mask]
        if not np.all(ws > 0) or not np.all(np.isfinite(ws)):
            raise ValueError("weights must be finite and strictly positive on the fitting subset")
        sw = np.sqrt(ws)
        Xs = Xs * sw[:, None]
        ys = ys * sw

    Q, R, kept, dropped = _pivoted_rank(Xs, tol)
    beta = np.zeros(p)
    rank = len(kept)
    if rank:
        coef = scipy.linalg.solve_triangular(R[:rank, :rank], Q[:, :rank].T @ ys)
        beta[kept] = coef

    fitted = X @ beta
    resid = np.full(n, np.nan)
    resid[mask] = y[mask] - fitted[mask]

    wr = np.ones(mask.sum()) if w is None else w[mask]
    ybar = np.sum(wr * y[mask]) / np.sum(wr)
    ss_tot = np.sum(wr * (y[mask] - ybar) ** 2)
    ss_res = np.sum(wr * resid[mask] ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    return LinearFit(beta=beta, fitted=fitted, residuals=resid, r_squared=float(r2),
                     subset=mask, weights=w, dropped=dropped)


@dataclass(frozen=True)
class Link:
    """Inverse link for binary regression: logistic, or Student-t CDF (robit)."""

    name: str = "logit"
    df: float | None = None

    def __post_init__(self):
        if self.name not in ("logit", "robit"):
            raise ValueError(f"unknown link {self.name!r}")
        if self.name == "robit" and (self.df is None or not self.df > 0):
            raise ValueError("robit link needs positive degrees of freedom")

    @classmethod
    def logit(cls) -> "Link":
        return cls("logit")

    @classmethod
    def robit(cls, df: float) -> "Link":
        return cls("robit", float(df))

    @property
    def label(self) -> str:
        return "logit" if self.name == "logit" else f"robit({self.df:g})"

    def cdf(self, eta):
        if self.name == "logit":
            return expit(eta)
        return stdtr(self.df, eta)

    def sf(self, eta):
        """``1 - cdf(eta)`` without cancellation."""
        if self.name == "logit":
            return expit(-eta)
        return stdtr(self.df, -eta)

    def pdf(self, eta):
        if self.name == "logit":
            p = expit(eta)
            return p * expit(-eta)
        nu = self.df
        logc = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi)
        return np.exp(logc - (nu + 1) / 2 * np.log1p(eta**2 / nu))

    def loglik(self, eta, t) -> float:
        if self.name == "logit":
            return float(np.sum(t * eta - np.logaddexp(0.0, eta)))
        with np.errstate(divide="ignore"):
            lf = np.log(self.cdf(eta))
            ls = np.log(self.sf(eta))
        return float(np.sum(np.where(t == 1, lf, ls)))


LOGIT = Link.logit()


@dataclass(frozen=True)
class PropensityFit:
    """Fitted binary-regression model for the response indicator.

    ``eta`` and ``pi`` cover every unit in the fitting data, respondents
    and nonrespondents alike.  ``pi`` is never clamped.
    """

    alpha: np.ndarray
    link: Link
    eta: np.ndarray
    pi: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    dropped: tuple[int, ...] = ()
    diverging: bool = False


def _working_quantities(link: Link, eta, t):
    F = link.cdf(eta)
    S = link.sf(eta)
    v = np.maximum(F * S, WEIGHT_FLOOR)
    sd = np.sqrt(v)
    # sqrt of the Fisher weight f^2 / (F (1 - F)), and the matching
    # standardised residual, so that a least-squares solve gives the step.
    sqrt_w = np.maximum(link.pdf(eta) / sd, np.sqrt(WEIGHT_FLOOR))
    r = (t - F) / sd
    return sqrt_w, r, F


def fit_binary(X, t, link: Link = LOGIT, max_iter: int = 100, tol: float = 1e-10) -> PropensityFit:
    """Maximum-likelihood binary regression of ``t`` on ``X``.

    Fisher scoring from ``alpha = 0``; for the logit link this is Newton's
    method (IRLS).  Each step is halved until the log-likelihood does not
    decrease.  Iteration stops when the relative change in log-likelihood
    drops below ``tol`` and the step is small, or after ``max_iter``
    iterations, in which case ``converged`` is False.

    Raises
    ------
    ValueError
        If ``t`` contains only one class.
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    n, p = X.shape
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("t must be 0/1")
    if t.min() == t.max():
        raise ValueError("binary regression needs both response classes")

    _, _, kept, dropped = _pivoted_rank(X)
    kept = np.sort(kept)
    Xk = X[:, kept]

    a = np.zeros(Xk.shape[1])
    eta = Xk @ a
    ll = link.loglik(eta, t)
    converged = False
    norms = [0.0]
    it = 0
    for it in range(1, max_iter + 1):
        sqrt_w, r, _ = _working_quantities(link, eta, t)
        step, *_ = np.linalg.lstsq(Xk * sqrt_w[:, None], r, rcond=None)
        h = 1.0
        for _ in range(50):
            a_new = a + h * step
            eta_new = Xk @ a_new
            ll_new = link.loglik(eta_new, t)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            h *= 0.5
        else:
            break
        change = abs(ll_new - ll) / max(abs(ll), 1e-300)
        small_step = np.max(np.abs(h * step)) <= 1e-10 * (1.0 + np.max(np.abs(a_new)))
        a, eta, ll = a_new, eta_new, ll_new
        norms.append(float(np.linalg.norm(a)))
        if ll == 0.0:
            break
        if change < tol and small_step:
            converged = True
            break

    alpha = np.zeros(p)
    alpha[kept] = a
    diverging = (not converged) and len(norms) > 10 and norms[-1] > norms[len(norms) // 2] + 1.0
    return PropensityFit(alpha=alpha, link=link, eta=eta, pi=link.cdf(eta), converged=converged,
                         iterations=it, log_likelihood=ll, dropped=dropped, diverging=bool(diverging))


def predict_propensity(fit: PropensityFit, X):
    """Linear predictor and propensity for new rows ``X``."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != len(fit.alpha):
        raise ValueError(f"expected {len(fit.alpha)} columns, got {X.shape[-1]}")
    eta = X @ fit.alpha
    return eta, fit.link.cdf(eta)


def _fisher_information(fit: PropensityFit, X) -> np.ndarray:
    f = fit.link.pdf(fit.eta)
    v = np.maximum(fit.link.cdf(fit.eta) * fit.link.sf(fit.eta), WEIGHT_FLOOR)
    w = f**2 / v
    return (X * w[:, None]).T @ X


def link_test(X, t, base_fit: PropensityFit):
    """Hinkley's link diagnostic.

    Refits the binary model with the centred, squared linear predictor as
    an extra covariate and returns ``(coefficient, p_value)`` for that
    term, using a two-sided Wald test.
    """
    if not base_fit.converged:
        raise ValueError("link test needs a converged base fit")
    X = np.asarray(X, dtype=float)
    c = base_fit.eta - base_fit.eta.mean()
    Xa = np.column_stack([X, c**2])
    fit = fit_binary(Xa, t, base_fit.link)
    j = Xa.shape[1] - 1
    if j in fit.dropped:
        raise ValueError("squared linear predictor is collinear with the design")
    keep = [k for k in range(Xa.shape[1]) if k not in fit.dropped]
    info = _fisher_information(fit, Xa[:, keep])
    cov = np.linalg.inv(info)
    se = np.sqrt(cov[-1, -1])
    coef = float(fit.alpha[j])
    p = float(2.0 * norm.sf(abs(coef / se)))
    return coef, p
