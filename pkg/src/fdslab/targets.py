"""Synthetic target distributions, prior sampling, and interpolant construction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .schedules import Schedule

__all__ = [
    "TargetSpec",
    "CheckerboardTarget",
    "GaussianMixtureTarget",
    "SinglePointTarget",
    "FileTarget",
    "EmpiricalTarget",
    "InterpolantSample",
    "parse_target",
    "sample_prior",
    "sample_target",
    "draw_interpolant",
    "sample_path_points",
]

# Checkerboard geometry: 4x4 board on [-2, 2]^2, 8 alternating active cells.
CHECKERBOARD_LO = -2.0
CHECKERBOARD_HI = 2.0
CHECKERBOARD_CELLS = 4


def _active_cells() -> np.ndarray:
    cells = [(i, j) for i in range(CHECKERBOARD_CELLS) for j in range(CHECKERBOARD_CELLS)
             if (i + j) % 2 == 0]
    return np.array(cells, dtype=int)


class TargetSpec:
    """A sampleable target distribution specification."""

    kind: str = "abstract"
    dim: int = 2

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class CheckerboardTarget(TargetSpec):
    """Uniform over the 8 active unit cells of a 4x4 board on [-2, 2]^2."""

    kind: str = "checkerboard"
    dim: int = 2

    def sample(self, n, rng):
        cells = _active_cells()
        width = (CHECKERBOARD_HI - CHECKERBOARD_LO) / CHECKERBOARD_CELLS
        idx = rng.integers(0, len(cells), size=n)
        offsets = rng.uniform(0.0, width, size=(n, 2))
        corners = CHECKERBOARD_LO + cells[idx] * width
        return corners + offsets

    @staticmethod
    def contains(points: np.ndarray) -> np.ndarray:
        """Boolean mask: which points lie inside an active cell."""
        pts = np.asarray(points, dtype=float)
        width = (CHECKERBOARD_HI - CHECKERBOARD_LO) / CHECKERBOARD_CELLS
        inside = np.all((pts >= CHECKERBOARD_LO) & (pts < CHECKERBOARD_HI), axis=1)
        cell = np.floor((pts - CHECKERBOARD_LO) / width).astype(int)
        active = (cell[:, 0] + cell[:, 1]) % 2 == 0
        return inside & active


@dataclass(frozen=True)
class GaussianMixtureTarget(TargetSpec):
    """Isotropic Gaussian mixture with given means, weights and stddevs."""

    means: tuple = ()
    weights: tuple = ()
    stddevs: tuple = ()
    kind: str = "gmm"

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.ndim != 2 or len(means) == 0:
            raise ConfigError("gmm means must be a non-empty [k x d] array")
        k = len(means)
        weights = np.asarray(self.weights, dtype=float)
        stddevs = np.asarray(self.stddevs, dtype=float)
        if weights.shape != (k,) or stddevs.shape != (k,):
            raise ConfigError("gmm weights/stddevs must match the number of components")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ConfigError("gmm weights must be non-negative with positive sum")
        if np.any(stddevs < 0):
            raise ConfigError("gmm stddevs must be non-negative")
        object.__setattr__(self, "means", tuple(map(tuple, means)))
        object.__setattr__(self, "weights", tuple(weights / weights.sum()))
        object.__setattr__(self, "stddevs", tuple(stddevs))

    @property
    def dim(self):
        return len(self.means[0])

    def sample(self, n, rng):
        means = np.asarray(self.means)
        idx = rng.choice(len(means), size=n, p=np.asarray(self.weights))
        noise = rng.standard_normal((n, self.dim))
        return means[idx] + np.asarray(self.stddevs)[idx, None] * noise


@dataclass(frozen=True)
class SinglePointTarget(TargetSpec):
    """A point mass."""

    point: tuple = (0.0, 0.0)
    kind: str = "single"

    @property
    def dim(self):
        return len(self.point)

    def sample(self, n, rng):
        return np.tile(np.asarray(self.point, dtype=float), (n, 1))


@dataclass(frozen=True)
class FileTarget(TargetSpec):
    """Empirical target loaded from a headerless CSV, one point per row."""

    path: str = ""
    kind: str = "file"

    def _load(self) -> np.ndarray:
        try:
            pts = np.loadtxt(self.path, delimiter=",", ndmin=2, dtype=float)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"cannot parse target CSV {self.path!r}: {exc}") from exc
        if not np.all(np.isfinite(pts)):
            raise ConfigError(f"target CSV {self.path!r} contains non-finite values")
        return pts

    @property
    def dim(self):
        return self._load().shape[1]

    def sample(self, n, rng):
        pts = self._load()
        idx = rng.integers(0, len(pts), size=n)
        return pts[idx]


def parse_target(text: str) -> TargetSpec:
    """Parse a CLI target spec: checkerboard | single:<x,y,...> | file:<path> | gmm."""
    if text == "checkerboard":
        return CheckerboardTarget()
    if text.startswith("single:"):
        coords = tuple(float(v) for v in text[len("single:"):].split(","))
        return SinglePointTarget(point=coords)
    if text.startswith("file:"):
        return FileTarget(path=text[len("file:"):])
    if text == "gmm":
        # Default two-mode mixture; custom mixtures come from the config file.
        return GaussianMixtureTarget(
            means=((-3.0, 0.0), (3.0, 0.0)), weights=(0.5, 0.5), stddevs=(1.0, 1.0)
        )
    raise ConfigError(f"unknown target spec {text!r}")


@dataclass(frozen=True)
class EmpiricalTarget:
    """A finite set of target points; the data layer for oracle-field construction."""

    points: np.ndarray
    kind: str = "empirical"

    def __post_init__(self):
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(self.points, dtype=float)))
        if len(pts) < 1:
            raise ConfigError("empirical target needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ConfigError("empirical target points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_spec(cls, spec: TargetSpec, n: int = 100_000, seed: int = 0) -> "EmpiricalTarget":
        return cls(points=sample_target(spec, n, seed), kind=spec.kind)


@dataclass(frozen=True)
class InterpolantSample:
    """One interpolant draw: the bridge state and its sample-wise velocity."""

    x0: np.ndarray
    x1: np.ndarray
    t: float
    x_t: np.ndarray
    v_t: np.ndarray


def sample_prior(n: int, d: int, seed: int) -> np.ndarray:
    """n i.i.d. standard-normal draws in R^d, deterministic per seed."""
    if n < 1 or d < 1:
        raise ConfigError(f"sample_prior needs n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d))


def sample_target(spec: TargetSpec, n: int, seed: int) -> np.ndarray:
    """n draws from the target distribution, deterministic per seed."""
    if n < 1:
        raise ConfigError(f"sample_target needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return spec.sample(n, rng)


def draw_interpolant(schedule: Schedule, x0, x1, t: float) -> InterpolantSample:
    """Construct the bridge state x_t and sample-wise velocity for one pair."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != x1.shape:
        raise ConfigError(f"shape mismatch: x0 {x0.shape} vs x1 {x1.shape}")
    alpha, beta, alpha_dot, beta_dot = schedule.eval(t)
    return InterpolantSample(
        x0=x0, x1=x1, t=t,
        x_t=alpha * x1 + beta * x0,
        v_t=alpha_dot * x1 + beta_dot * x0,
    )


def sample_path_points(schedule: Schedule, spec: TargetSpec, n: int, t: float,
                       seed: int) -> np.ndarray:
    """n independent draws of x_t with fresh prior/target pairs (exact-path samples)."""
    rng = np.random.default_rng(seed)
    x1 = spec.sample(n, rng)
    x0 = rng.standard_normal(x1.shape)
    alpha, beta, _, _ = schedule.eval(t)
    return alpha * x1 + beta * x0
