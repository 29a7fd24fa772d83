"""Synthetic population with a known mean and MAR-deleted outcomes.

Each unit carries four latent standard-normal covariates ``z``.  The
outcome is linear in ``z`` and the response probability is logit-linear in
``z``, but the analyst only sees nonlinear transforms ``x`` of them, so any
model that is linear (or logit-linear) in ``x`` is misspecified.

Random numbers come from numpy's PCG64 bit generator; normals use numpy's
ziggurat ``standard_normal``.  Per-replicate streams are derived with
``numpy.random.SeedSequence(base_seed, spawn_key=(r,))`` so that replicate
``r`` is reproducible on its own, whatever worker evaluates it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

TRUE_MEAN = 210.0
OUTCOME_COEF = np.array([27.4, 13.7, 13.7, 13.7])
PROPENSITY_COEF = np.array([-1.0, 0.5, -0.25, -0.1])

INTERCEPT = "const"
X_NAMES = ("x1", "x2", "x3", "x4")
Z_NAMES = ("z1", "z2", "z3", "z4")


@dataclass(frozen=True)
class Truth:
    """Hidden quantities available only for synthetic draws."""

    z: np.ndarray
    m: np.ndarray
    pi: np.ndarray
    y: np.ndarray

    def design(self) -> np.ndarray:
        """Design matrix of the correctly specified models: intercept plus z."""
        return np.column_stack([np.ones(len(self.y)), self.z])


@dataclass(frozen=True)
class Dataset:
    """Observed view of an incomplete sample.

    ``X`` always starts with an intercept column named ``const``.  ``y``
    holds NaN wherever ``t == 0``.
    """

    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    names: tuple[str, ...]
    truth: Truth | None = field(default=None, compare=False)

    def __post_init__(self):
        n = len(self.t)
        if self.X.shape[0] != n or self.y.shape[0] != n:
            raise ValueError("X, t and y must have the same number of rows")
        if self.X.shape[1] != len(self.names):
            raise ValueError("one name per column of X is required")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("covariates must be finite")
        if not np.all((self.t == 0) | (self.t == 1)):
            raise ValueError("t must be 0/1")
        if not np.array_equal(~np.isnan(self.y), self.t == 1):
            raise ValueError("y must be observed exactly where t == 1")

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def respondents(self) -> np.ndarray:
        return self.t == 1

    @property
    def n1(self) -> int:
        return int(self.t.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    def columns(self, names) -> np.ndarray:
        """Submatrix of X for the named columns, in the order given."""
        idx = [self.names.index(c) for c in names]
        return self.X[:, idx]


def transform_covariates(z):
    """Map latent covariates to the observed ones.

    Works on a single 4-vector or on an ``(n, 4)`` array.
    """
    z = np.asarray(z, dtype=float)
    z1, z2, z3, z4 = np.moveaxis(z, -1, 0)
    x1 = np.exp(z1 / 2.0)
    x2 = z2 / (1.0 + np.exp(z1)) + 10.0
    x3 = (z1 * z3 / 25.0 + 0.6) ** 3
    x4 = (z2 + z4 + 20.0) ** 2
    return np.stack([x1, x2, x3, x4], axis=-1)


def true_structures(z):
    """True conditional mean of y and true response probability.

    Returns ``(m, pi)``; vectorised over a leading axis like
    :func:`transform_covariates`.
    """
    z = np.asarray(z, dtype=float)
    m = TRUE_MEAN + z @ OUTCOME_COEF
    pi = expit(z @ PROPENSITY_COEF)
    return m, pi


def replicate_seed(base_seed: int, replicate: int) -> np.random.SeedSequence:
    """Counter-based child seed for replicate ``replicate`` of a study."""
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(replicate),))


def draw_sample(n: int, seed) -> Dataset:
    """Draw ``n`` units from the synthetic population.

    Parameters
    ----------
    n : int
        Sample size, at least 1.
    seed : int or numpy.random.SeedSequence
        Fully determines the draw.

    Returns
    -------
    Dataset
        Observed covariates ``const, x1..x4`` with outcomes deleted for
        nonrespondents; the ``truth`` attribute keeps ``z``, the true mean
        structure, the true propensities and the complete outcomes.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    z = rng.standard_normal((n, 4))
    eps = rng.standard_normal(n)
    u = rng.random(n)

    m, pi = true_structures(z)
    y = m + eps
    t = (u < pi).astype(np.int8)
    x = transform_covariates(z)

    X = np.column_stack([np.ones(n), x])
    y_obs = np.where(t == 1, y, np.nan)
    truth = Truth(z=z, m=m, pi=pi, y=y)
    return Dataset(X=X, t=t, y=y_obs, names=(INTERCEPT,) + X_NAMES, truth=truth)


def latent_from_observed(x) -> np.ndarray:
    """Invert :func:`transform_covariates`.

    Recovers ``z`` from ``x`` assuming ``z1 != 0`` and ``z2 + z4 > -20``,
    which holds with probability one under the synthetic design.
    """
    x = np.asarray(x, dtype=float)
    x1, x2, x3, x4 = np.moveaxis(x, -1, 0)
    z1 = 2.0 * np.log(x1)
    z2 = (x2 - 10.0) * (1.0 + x1**2)
    z3 = 25.0 * (np.cbrt(x3) - 0.6) / z1
    z4 = np.sqrt(x4) - 20.0 - z2
    return np.stack([z1, z2, z3, z4], axis=-1)
