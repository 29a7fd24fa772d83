"""Monte Carlo comparison of estimators on the synthetic population.

A study is a list of :class:`ScenarioConfig` objects.  Scenarios that share
a sample size, base seed and replicate count are evaluated together: each
replicate is drawn once and every model specification and estimator is
applied to that same draw.  Replicate ``r`` always uses the seed derived
from ``(base_seed, r)``, so results do not depend on how replicates are
split across worker processes.
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from drmean.datagen import TRUE_MEAN, draw_sample, replicate_seed
from drmean.estimators import METHODS, EstimationError, evaluate
from drmean.glm import LOGIT, Link, fit_binary, fit_linear

MODEL_SPECS = ("correct", "incorrect")


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the study grid.

    ``pi_model``/``y_model`` choose the covariates the analyst uses:
    ``"correct"`` fits on the latent z, ``"incorrect"`` on the observed x.
    ``link`` applies to the propensity model.
    """

    n: int
    pi_model: str = "correct"
    y_model: str = "correct"
    estimators: tuple[str, ...] = ("ipw_pop",)
    replicates: int = 1000
    base_seed: int = 0
    link: Link = field(default=LOGIT)
    S: int = 5

    def __post_init__(self):
        if self.n < 20:
            raise ValueError("n must be at least 20")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.pi_model not in MODEL_SPECS or self.y_model not in MODEL_SPECS:
            raise ValueError(f"model specifications must be one of {MODEL_SPECS}")
        unknown = [e for e in self.estimators if e not in METHODS]
        if unknown:
            raise ValueError(f"unknown estimators {unknown}; choose from {sorted(METHODS)}")
        object.__setattr__(self, "estimators", tuple(self.estimators))

    def key(self, estimator: str) -> tuple:
        """Row identity; model parts an estimator ignores are blanked to '-'."""
        m = METHODS[estimator]
        return (self.n,
                self.pi_model if m.uses_pi else "-",
                self.link.label if m.uses_pi else "-",
                self.y_model if m.uses_y else "-",
                estimator)


@dataclass(frozen=True)
class MetricsRow:
    n: int
    pi_model: str
    link: str
    y_model: str
    estimator: str
    bias: float
    pct_bias: float
    rmse: float
    mae: float
    sd: float
    replicates: int
    failures: int

    @property
    def scenario(self) -> str:
        return f"n={self.n}|pi={self.pi_model}:{self.link}|y={self.y_model}"


def summarize(estimates, truth: float = TRUE_MEAN, **labels) -> MetricsRow:
    """Bias, %Bias, RMSE and median absolute error over replicates.

    NaN entries are failed replicates: excluded from the metrics and
    counted in ``failures``.  ``%Bias`` is 100 * bias / sd with the sample
    standard deviation (divisor R - 1).

    Raises
    ------
    ValueError
        If fewer than two replicates succeeded.
    """
    est = np.asarray(estimates, dtype=float)
    ok = est[~np.isnan(est)]
    if ok.size < 2:
        raise ValueError(f"summarize needs at least 2 successful replicates, got {ok.size}")
    err = ok - truth
    bias = float(np.mean(err))
    sd = float(np.std(ok, ddof=1))
    if sd > 0:
        pct = 100.0 * bias / sd
    else:
        pct = 0.0 if bias == 0 else math.copysign(math.inf, bias)
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.median(np.abs(err)))
    row = dict(n=0, pi_model="-", link="-", y_model="-", estimator="-")
    row.update(labels)
    return MetricsRow(bias=bias, pct_bias=float(pct), rmse=rmse, mae=mae, sd=sd,
                      replicates=int(est.size), failures=int(est.size - ok.size), **row)


class _Fits:
    """Lazily fitted models for one draw, shared by all scenarios."""

    def __init__(self, data):
        self.data = data
        self.designs = {"correct": data.truth.design(), "incorrect": data.X}
        self._pi = {}
        self._y = {}

    def pi(self, spec: str, link: Link):
        k = (spec, link)
        if k not in self._pi:
            try:
                self._pi[k] = fit_binary(self.designs[spec], self.data.t, link)
            except ValueError as exc:
                self._pi[k] = exc
        return self._pi[k]

    def y(self, spec: str):
        if spec not in self._y:
            try:
                self._y[spec] = fit_linear(self.designs[spec], self.data.y, subset=self.data.respondents)
            except ValueError as exc:
                self._y[spec] = exc
        return self._y[spec]


def _evaluate_block(scenarios, r: int):
    """Evaluate every scenario of a group on replicate ``r``.

    Returns ``{row_key: (mu_hat or None, error message or None)}``.
    """
    first = scenarios[0]
    data = draw_sample(first.n, replicate_seed(first.base_seed, r))
    fits = _Fits(data)
    out = {}
    for sc in scenarios:
        for est in sc.estimators:
            key = sc.key(est)
            if key in out:
                continue
            m = METHODS[est]
            try:
                pfit = fits.pi(sc.pi_model, sc.link) if m.uses_pi else None
                yfit = fits.y(sc.y_model) if m.uses_y else None
                for f in (pfit, yfit):
                    if isinstance(f, Exception):
                        raise f
                if pfit is not None and not pfit.converged:
                    raise EstimationError("propensity model did not converge")
                res = evaluate(est, data,
                               pi_hat=None if pfit is None else pfit.pi,
                               eta=None if pfit is None else pfit.eta,
                               y_fit=yfit, X=fits.designs[sc.y_model], S=sc.S)
                mu = res.mu_hat
                if not np.isfinite(mu):
                    raise EstimationError("non-finite estimate")
                out[key] = (float(mu), None)
            except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
                out[key] = (None, str(exc))
    return out


def run_replicate(scenario: ScenarioConfig, replicate_index: int):
    """Estimates for one replicate of one scenario.

    Returns a list of ``(estimator, mu_hat, error)``; ``mu_hat`` is None
    and ``error`` holds the message when that estimator failed.
    """
    block = _evaluate_block([scenario], replicate_index)
    return [(est, *block[scenario.key(est)]) for est in scenario.estimators]


def _run_chunk(args):
    scenarios, indices = args
    return [(r, _evaluate_block(scenarios, r)) for r in indices]


def _groups(scenarios):
    groups = defaultdict(list)
    for sc in scenarios:
        groups[(sc.n, sc.base_seed, sc.replicates)].append(sc)
    return list(groups.values())


def run_study(scenarios, workers: int = 1, chunk_size: int = 25) -> list[MetricsRow]:
    """Run every scenario and summarise each (scenario, estimator) pair.

    Rows come back in the order scenarios and estimators were given, with
    duplicates (an estimator that ignores the model that differs between
    two scenarios) listed once.  Replicates are farmed out to ``workers``
    processes in chunks; aggregation is keyed by replicate index, so the
    result is identical for any worker count.
    """
    scenarios = list(scenarios)
    for sc in scenarios:
        if sc.replicates < 2:
            raise ValueError(f"summarize needs at least 2 successful replicates, got {sc.replicates}")

    results = {}
    jobs = []
    for grp in _groups(scenarios):
        R = grp[0].replicates
        for lo in range(0, R, chunk_size):
            jobs.append((grp, list(range(lo, min(lo + chunk_size, R)))))

    def collect(grp, chunk_out):
        gk = (grp[0].n, grp[0].base_seed, grp[0].replicates)
        for r, block in chunk_out:
            results[(gk, r)] = block

    if workers <= 1:
        for grp, idx in jobs:
            collect(grp, _run_chunk((grp, idx)))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (grp, _), chunk_out in zip(jobs, pool.map(_run_chunk, jobs)):
                collect(grp, chunk_out)

    rows = []
    seen = set()
    for sc in scenarios:
        gk = (sc.n, sc.base_seed, sc.replicates)
        for est in sc.estimators:
            key = sc.key(est)
            if key in seen:
                continue
            seen.add(key)
            vals = np.array([np.nan if results[(gk, r)][key][0] is None else results[(gk, r)][key][0]
                             for r in range(sc.replicates)])
            labels = dict(zip(("n", "pi_model", "link", "y_model", "estimator"), key))
            if np.sum(~np.isnan(vals)) < 2:
                rows.append(MetricsRow(bias=math.nan, pct_bias=math.nan, rmse=math.nan, mae=math.nan,
                                       sd=math.nan, replicates=sc.replicates,
                                       failures=int(np.isnan(vals).sum()), **labels))
            else:
                rows.append(summarize(vals, TRUE_MEAN, **labels))
    return rows


def paper_grid(sizes=(200, 1000), replicates: int = 1000, base_seed: int = 2007,
               estimators=None, robit_df: float | None = 4.0) -> list[ScenarioConfig]:
    """All four model-correctness combinations at each sample size.

    With ``robit_df`` set, an extra incorrect-covariate robit scenario
    is added for the weighting estimators.
    """
    if estimators is None:
        estimators = ("ipw_pop", "ipw_nr", "strat_pi", "ols", "strat_pi_m", "bc_ols", "bc_ols_norm",
                      "bc_ols_nr", "bc_ols_strat", "wls", "pi_cov", "pi_cov_inv")
    out = []
    for n in sizes:
        for pm in MODEL_SPECS:
            for ym in MODEL_SPECS:
                out.append(ScenarioConfig(n=n, pi_model=pm, y_model=ym, estimators=tuple(estimators),
                                          replicates=replicates, base_seed=base_seed))
        if robit_df is not None:
            out.append(ScenarioConfig(n=n, pi_model="incorrect", y_model="incorrect",
                                      estimators=("ipw_pop", "ipw_nr"), replicates=replicates,
                                      base_seed=base_seed, link=Link.robit(robit_df)))
    return out
