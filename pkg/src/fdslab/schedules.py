"""Interpolant schedules, derived field coefficients, and perturbation-scale schedules.

A schedule is the pair (alpha_t, beta_t) on t in [0, 1] with alpha increasing
from 0 to 1 and beta decreasing from 1 to 0.  The induced affine-field
coefficients are a_t = beta_dot/beta and b_t = alpha_dot - alpha*beta_dot/beta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, SingularityError

__all__ = [
    "Schedule",
    "LinearSchedule",
    "TabulatedSchedule",
    "FieldCoefficients",
    "SigmaSchedule",
    "make_schedule",
    "sigma_at",
]


class FieldCoefficients(NamedTuple):
    """Coefficients of the affine sample-wise velocity v = a*x + b*x1."""

    a: float
    b: float


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"time {t} outside [0, 1]")
    return t


class Schedule:
    """Common interface: evaluate (alpha, beta, alpha_dot, beta_dot) at a time."""

    kind: str = "abstract"

    def eval(self, t: float) -> tuple[float, float, float, float]:
        raise NotImplementedError

    def alpha(self, t: float) -> float:
        return self.eval(t)[0]

    def beta(self, t: float) -> float:
        return self.eval(t)[1]

    def eval_many(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized eval over an array of times."""
        t = np.asarray(t, dtype=float)
        out = np.array([self.eval(v) for v in t.ravel()])
        cols = out.T.reshape(4, *t.shape)
        return cols[0], cols[1], cols[2], cols[3]

    def coefficients(self, t: float) -> FieldCoefficients:
        """Affine field coefficients a_t = beta_dot/beta, b_t = alpha_dot - alpha*beta_dot/beta.

        Raises SingularityError where beta_t = 0 (the data endpoint).
        """
        alpha, beta, alpha_dot, beta_dot = self.eval(t)
        if beta == 0.0:
            raise SingularityError(f"beta_t = 0 at t={t}; field coefficients are singular")
        a = beta_dot / beta
        b = alpha_dot - alpha * a
        return FieldCoefficients(a, b)


class LinearSchedule(Schedule):
    """alpha_t = t, beta_t = 1 - t."""

    kind = "linear"

    def eval(self, t: float) -> tuple[float, float, float, float]:
        t = _check_time(t)
        return (t, 1.0 - t, 1.0, -1.0)

    def eval_many(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > 1):
            raise DomainError("times outside [0, 1]")
        ones = np.ones_like(t)
        return t, 1.0 - t, ones, -ones

    def __repr__(self) -> str:
        return "LinearSchedule()"


class TabulatedSchedule(Schedule):
    """Generic schedule given by a coefficient table, interpolated with cubic splines.

    The table must satisfy the boundary conditions (alpha, beta) = (0, 1) at
    t=0 and (1, 0) at t=1 and be strictly monotone in between; derivatives come
    from the spline.
    """

    kind = "table"

    def __init__(self, ts, alphas, betas):
        from scipy.interpolate import CubicSpline

        ts = np.asarray(ts, dtype=float)
        alphas = np.asarray(alphas, dtype=float)
        betas = np.asarray(betas, dtype=float)
        if ts.ndim != 1 or ts.shape != alphas.shape or ts.shape != betas.shape:
            raise ConfigError("schedule table arrays must be 1-D and equal length")
        if ts[0] != 0.0 or ts[-1] != 1.0:
            raise ConfigError("schedule table must span t in [0, 1]")
        if not (np.all(np.diff(alphas) > 0) and np.all(np.diff(betas) < 0)):
            raise ConfigError("alpha must be strictly increasing and beta strictly decreasing")
        if abs(alphas[0]) > 1e-12 or abs(alphas[-1] - 1) > 1e-12:
            raise ConfigError("alpha must run from 0 to 1")
        if abs(betas[0] - 1) > 1e-12 or abs(betas[-1]) > 1e-12:
            raise ConfigError("beta must run from 1 to 0")
        self._alpha = CubicSpline(ts, alphas)
        self._beta = CubicSpline(ts, betas)
        self._alpha_dot = self._alpha.derivative()
        self._beta_dot = self._beta.derivative()

    def eval(self, t: float) -> tuple[float, float, float, float]:
        t = _check_time(t)
        return (
            float(self._alpha(t)),
            float(self._beta(t)),
            float(self._alpha_dot(t)),
            float(self._beta_dot(t)),
        )


def make_schedule(name: str) -> Schedule:
    if name == "linear":
        return LinearSchedule()
    raise ConfigError(f"unknown schedule {name!r} (use 'linear' or build a TabulatedSchedule)")


_SIGMA_KINDS = ("cosine", "linear", "concave", "constant")


@dataclass(frozen=True)
class SigmaSchedule:
    """Decaying perturbation-scale schedule sigma_t.

    The shape is evaluated on the normalized coordinate s = t / t_trunc and is
    identically zero for t >= t_trunc.  The exact decay shapes are this
    package's reconstruction; only the constant kind is pinned by the toy
    configuration (sigma = 0.3 everywhere).
    """

    kind: str = "cosine"
    sigma_max: float = 0.01

    def __post_init__(self):
        if self.kind not in _SIGMA_KINDS:
            raise ConfigError(f"unknown sigma schedule kind {self.kind!r}")
        if self.sigma_max < 0:
            raise ConfigError(f"sigma_max must be >= 0, got {self.sigma_max}")

    def at(self, t: float, t_trunc: float) -> float:
        return sigma_at(self, t, t_trunc)


def sigma_at(sch: SigmaSchedule, t: float, t_trunc: float) -> float:
    """Perturbation scale at time t with refinement truncated at t_trunc."""
    t = _check_time(t)
    if not 0.0 <= t_trunc <= 1.0:
        raise DomainError(f"t_trunc {t_trunc} outside [0, 1]")
    if t >= t_trunc:
        return 0.0
    if sch.kind == "constant":
        return sch.sigma_max
    s = t / t_trunc
    if sch.kind == "cosine":
        shape = math.cos(0.5 * math.pi * s)
    elif sch.kind == "linear":
        shape = 1.0 - s
    else:  # concave
        shape = (1.0 - s) ** 2
    return sch.sigma_max * shape
