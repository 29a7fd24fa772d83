"""Command-line interface.

    drmean simulate --config study.json --out results/ [--workers 4]
    drmean estimate --config estimate.json --out results/

Exit status: 0 on success, 2 for configuration or input errors, 3 when no
estimator succeeded.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np
from scipy.special import logit

from drmean.estimators import METHODS, EstimationError, evaluate
from drmean.glm import LOGIT, Link, fit_binary, fit_linear
from drmean.io import (DatasetError, format_tables, read_dataset_csv, write_estimates_csv, write_metrics_csv,
                       write_residuals_csv)
from drmean.simbench import ScenarioConfig, paper_grid, run_study

log = logging.getLogger("drmean")

EXIT_OK, EXIT_CONFIG, EXIT_NO_SUCCESS = 0, 2, 3


class ConfigError(ValueError):
    pass


def parse_link(spec) -> Link:
    """Accepts ``"logit"``, ``"robit(4)"``, ``"robit:4"`` or ``{"robit": 4}``."""
    if spec is None or spec == "logit":
        return LOGIT
    if isinstance(spec, dict) and set(spec) == {"robit"}:
        return Link.robit(float(spec["robit"]))
    if isinstance(spec, str):
        m = re.fullmatch(r"\s*robit\s*[(:]\s*([0-9.eE+-]+)\s*\)?\s*", spec)
        if m:
            return Link.robit(float(m.group(1)))
    raise ConfigError(f"cannot parse link {spec!r}")


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg["_dir"] = path.parent
    return cfg


def _check_estimators(names):
    bad = [e for e in names if e not in METHODS]
    if bad:
        raise ConfigError(f"unknown estimators {bad}; choose from {sorted(METHODS)}")
    return tuple(names)


def build_scenarios(cfg: dict) -> list[ScenarioConfig]:
    """Expand a simulate config into scenarios.

    Keys: ``replicates``, ``base_seed``, ``sizes`` (or ``n``), ``S`` and
    ``scenarios``: a list of objects with ``pi_model``, ``y_model``,
    ``link`` (each a value or a list to cross) and ``estimators``.  Without
    ``scenarios`` the full four-way grid plus a robit(4) IPW run is used.
    """
    if cfg.get("mode", "simulate") != "simulate":
        raise ConfigError("config mode must be 'simulate' for this command")
    try:
        reps = int(cfg.get("replicates", 1000))
        seed = int(cfg.get("base_seed", 2007))
        sizes = [int(n) for n in _as_list(cfg.get("sizes", cfg.get("n", [200, 1000])))]
        S = int(cfg.get("S", 5))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric setting: {exc}") from None
    if reps < 2:
        raise ConfigError(f"replicates = {reps}: summarize needs at least 2 successful replicates")
    try:
        if "scenarios" not in cfg:
            out = paper_grid(sizes=sizes, replicates=reps, base_seed=seed)
            return [ScenarioConfig(**{**sc.__dict__, "S": S}) for sc in out]
        out = []
        for n in sizes:
            for spec in cfg["scenarios"]:
                ests = _check_estimators(_as_list(spec.get("estimators", ["ipw_pop"])))
                for pm, ym, lk in itertools.product(_as_list(spec.get("pi_model", "correct")),
                                                    _as_list(spec.get("y_model", "correct")),
                                                    _as_list(spec.get("link", "logit"))):
                    out.append(ScenarioConfig(n=n, pi_model=pm, y_model=ym, estimators=ests, replicates=reps,
                                              base_seed=seed, link=parse_link(lk), S=int(spec.get("S", S))))
        return out
    except ConfigError:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(config_path, out_dir, workers: int = 1) -> int:
    try:
        scenarios = build_scenarios(load_config(config_path))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %d scenarios with %d worker(s)", len(scenarios), workers)
    rows = run_study(scenarios, workers=workers)
    write_metrics_csv(rows, out / "metrics.csv")
    (out / "tables.txt").write_text(format_tables(rows))
    failed = sum(r.failures for r in rows)
    if failed:
        log.warning("%d estimator failures across replicates (see the failures column)", failed)
    return EXIT_OK


def _estimate(cfg: dict):
    if cfg.get("mode", "estimate") != "estimate":
        raise ConfigError("config mode must be 'estimate' for this command")
    if "data" not in cfg:
        raise ConfigError("estimate config needs a 'data' path")
    path = Path(cfg["data"])
    if not path.is_absolute():
        path = cfg["_dir"] / path
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    data = read_dataset_csv(path)

    covs = [c for c in data.names if c != "const"]
    pi_col = cfg.get("pi_column")
    if pi_col is not None and pi_col not in covs:
        raise ConfigError(f"pi_column {pi_col!r} is not a column of the data")
    default = [c for c in covs if c != pi_col]
    pi_covs = list(cfg.get("pi_covariates", default))
    y_covs = list(cfg.get("y_covariates", default))
    for c in pi_covs + y_covs:
        if c not in covs:
            raise ConfigError(f"unknown covariate {c!r}; data has {covs}")
    ests = _check_estimators(_as_list(cfg.get("estimators", list(METHODS))))
    S = int(cfg.get("S", 5))
    link = parse_link(cfg.get("link", "logit"))

    Xpi = data.columns(["const"] + pi_covs)
    Xy = data.columns(["const"] + y_covs)
    pi_err = y_err = None
    pi_hat = eta = None
    if pi_col is not None:
        pi_hat = data.columns([pi_col])[:, 0]
        if np.any((pi_hat < 0) | (pi_hat > 1)):
            raise ConfigError(f"pi_column {pi_col!r} must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            eta = logit(pi_hat)
    else:
        try:
            pfit = fit_binary(Xpi, data.t, link)
            if not pfit.converged:
                pi_err = "propensity model did not converge" + (" (separation)" if pfit.diverging else "")
            else:
                pi_hat, eta = pfit.pi, pfit.eta
        except ValueError as exc:
            pi_err = str(exc)
    try:
        y_fit = fit_linear(Xy, data.y, subset=data.respondents)
    except ValueError as exc:
        y_fit, y_err = None, str(exc)

    results = []
    for name in ests:
        m = METHODS[name]
        if m.uses_pi and pi_err:
            results.append((name, None, pi_err))
            continue
        if m.uses_y and y_err:
            results.append((name, None, y_err))
            continue
        try:
            res = evaluate(name, data, pi_hat=pi_hat, eta=eta, y_fit=y_fit, X=Xy, S=S)
            results.append((name, res, None))
        except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
            results.append((name, None, str(exc)))
    return data, eta, y_fit, results


def cmd_estimate(config_path, out_dir) -> int:
    try:
        data, eta, y_fit, results = _estimate(load_config(config_path))
    except (ConfigError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_estimates_csv(results, out / "estimates.csv")
    if eta is not None and y_fit is not None:
        write_residuals_csv(eta, y_fit.residuals, data.respondents, out / "residuals.csv")
    for name, res, err in results:
        if res is None:
            log.warning("%s FAILED: %s", name, err)
    if not any(res is not None for _, res, _ in results):
        print("no estimator succeeded", file=sys.stderr)
        return EXIT_NO_SUCCESS
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drmean", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a Monte Carlo study on the synthetic population")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    e = sub.add_parser("estimate", help="apply estimators to a CSV dataset")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, max(1, args.workers))
    return cmd_estimate(args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
