"""Quantitative evaluation: Wasserstein distances and discrepancy maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.stats import spearmanr

from .errors import ConfigError, DomainError
from .oracle import OracleField
from .sampler import RunRecord
from .schedules import Schedule
from .targets import TargetSpec, sample_path_points

__all__ = [
    "WassersteinResult",
    "GridSpec",
    "DiscrepancyMap",
    "wasserstein",
    "discrepancy_map",
    "map_spearman",
    "wd_over_time",
]

# Exact bipartite matching is cubic; above this size use sliced projections.
EXACT_ASSIGNMENT_MAX = 512
DEFAULT_PROJECTIONS = 128


@dataclass(frozen=True)
class WassersteinResult:
    value: float
    method: str
    n: int


def _sliced_w2(a: np.ndarray, b: np.ndarray, projections: int, seed: int) -> float:
    d = a.shape[1]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(a @ dirs.T, axis=0)
    pb = np.sort(b @ dirs.T, axis=0)
    if len(pa) != len(pb):
        q = (np.arange(max(len(a), len(b))) + 0.5) / max(len(a), len(b))
        pa = np.quantile(pa, q, axis=0)
        pb = np.quantile(pb, q, axis=0)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


def wasserstein(cloud_a, cloud_b, method: str = "auto", projections: int = DEFAULT_PROJECTIONS,
                seed: int = 0) -> WassersteinResult:
    """2-Wasserstein distance between two point clouds.

    ``exact`` solves the optimal bipartite assignment on squared-Euclidean
    cost (requires equal sizes); ``sliced`` averages the closed-form 1-D
    distance over random projections; ``auto`` picks exact up to
    EXACT_ASSIGNMENT_MAX points per side.
    """
    a = np.atleast_2d(np.asarray(cloud_a, dtype=float))
    b = np.atleast_2d(np.asarray(cloud_b, dtype=float))
    if len(a) < 1 or len(b) < 1:
        raise ConfigError("point clouds must be non-empty")
    if method == "auto":
        method = "exact" if max(len(a), len(b)) <= EXACT_ASSIGNMENT_MAX else "sliced"
    if method == "exact":
        if len(a) != len(b):
            raise ConfigError(f"exact assignment needs equal sizes, got {len(a)} vs {len(b)}")
        cost = cdist(a, b, metric="sqeuclidean")
        rows, cols = linear_sum_assignment(cost)
        value = float(np.sqrt(cost[rows, cols].mean()))
        return WassersteinResult(value=value, method="exact-assignment", n=len(a))
    if method == "sliced":
        value = _sliced_w2(a, b, projections, seed)
        return WassersteinResult(value=value, method=f"sliced({projections})", n=len(a))
    raise ConfigError(f"unknown wasserstein method {method!r}")


@dataclass(frozen=True)
class GridSpec:
    """A square evaluation grid of cell centers."""

    lo: float = -2.0
    hi: float = 2.0
    resolution: int = 64

    def centers(self) -> np.ndarray:
        """Cell-center coordinates, [resolution^2 x 2], row-major over (y, x)."""
        step = (self.hi - self.lo) / self.resolution
        axis = self.lo + step * (np.arange(self.resolution) + 0.5)
        xx, yy = np.meshgrid(axis, axis)
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass(frozen=True)
class DiscrepancyMap:
    grid: GridSpec
    t: float
    mode: str
    values: np.ndarray  # [resolution x resolution]


def discrepancy_map(source, grid: GridSpec, t: float, mode: str,
                    schedule: Schedule | None = None) -> DiscrepancyMap:
    """Discrepancy over a grid of states at a fixed time.

    ``gt`` evaluates the posterior-weighted residual sum and requires an
    oracle field.  ``surrogate`` evaluates the divergence-identity expression
    with whatever divergence the source provides.
    """
    if not 0.0 < t < 1.0:
        raise DomainError(f"discrepancy map undefined at t={t}")
    pts = grid.centers()
    if mode == "gt":
        if not isinstance(source, OracleField):
            raise ConfigError("gt mode requires an oracle field")
        lhs, _, _ = source.discrepancy_batch(pts, t)
        values = lhs
    elif mode == "surrogate":
        sched = schedule or getattr(source, "schedule", None)
        if sched is None:
            raise ConfigError("surrogate mode needs a schedule for the identity coefficients")
        alpha, beta, alpha_dot, beta_dot = sched.eval(t)
        if alpha == 0.0:
            raise DomainError(f"surrogate map undefined at t={t} (alpha_t = 0)")
        div = np.asarray(source.divergence(pts, t))
        d = pts.shape[1]
        values = ((alpha_dot * beta - alpha * beta_dot) / alpha) * (beta * div - beta_dot * d)
    else:
        raise ConfigError(f"unknown map mode {mode!r}")
    res = grid.resolution
    return DiscrepancyMap(grid=grid, t=t, mode=mode, values=values.reshape(res, res))


def map_spearman(map_a: DiscrepancyMap, map_b: DiscrepancyMap) -> float:
    """Spearman rank correlation between two maps on the same grid."""
    if map_a.values.shape != map_b.values.shape:
        raise ConfigError("maps have different resolutions")
    rho, _ = spearmanr(map_a.values.ravel(), map_b.values.ravel())
    return float(rho)


def wd_over_time(run: RunRecord, target: TargetSpec, schedule: Schedule,
                 eval_times, n_ref: int | None = None, seed: int = 12345,
                 method: str = "auto") -> list[tuple[float, float]]:
    """W2 between a run's recorded states and fresh exact-path samples.

    Reference samples are drawn deterministically from ``seed`` (offset by the
    time index), so paired runs evaluated with the same seed share them.
    """
    series = []
    n = len(run.final) if n_ref is None else n_ref
    for i, t in enumerate(eval_times):
        states = run.state_at(t)
        ref = sample_path_points(schedule, target, n, t, seed + i)
        res = wasserstein(states, ref, method=method)
        series.append((float(t), res.value))
    return series
