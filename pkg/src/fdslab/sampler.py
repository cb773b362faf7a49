"""ODE integration (Euler, Heun) and divergence-guided state refinement.

The refinement step is a zero-order local search: at a solver state, score the
state and M Gaussian perturbations of scale sigma_t by the field's spatial
divergence and move to the arg-min, repeating for N iterations.  Candidate 0
is always the unperturbed state and wins ties, so the state never moves
without strict improvement.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import mlp as mlp_mod
from .errors import ConfigError, IntegrationError, RefinementError, SingularityError
from .schedules import SigmaSchedule, sigma_at

__all__ = [
    "FdsConfig",
    "RunRecord",
    "euler_step",
    "heun_step",
    "refine",
    "run_pipeline",
    "uniform_grid",
]


@dataclass(frozen=True)
class FdsConfig:
    """Refinement hyperparameters.  m = 0 or n = 0 disables refinement."""

    m: int = 1
    n: int = 1
    sigma: SigmaSchedule = SigmaSchedule(kind="cosine", sigma_max=0.01)
    t_trunc: float = 0.5
    divergence: str = "exact"  # "exact" or "hutch"
    probes: int = 1
    probe_kind: str = "gaussian"

    def __post_init__(self):
        if self.m < 0 or self.n < 0:
            raise ConfigError("m and n must be >= 0")
        if self.divergence not in ("exact", "hutch"):
            raise ConfigError(f"unknown divergence method {self.divergence!r}")
        if self.probes < 1:
            raise ConfigError("probes must be >= 1")

    @property
    def enabled(self) -> bool:
        return self.m > 0 and self.n > 0 and self.sigma.sigma_max > 0 and self.t_trunc > 0

    @property
    def evals_per_divergence(self) -> int:
        """Field evaluations charged per candidate divergence (d for exact, probes for hutch)."""
        return self.probes if self.divergence == "hutch" else -1  # -1: resolved to d at run time

    @classmethod
    def disabled(cls) -> "FdsConfig":
        return cls(m=0, n=0)


@dataclass
class RunRecord:
    """Everything needed to reproduce and analyze one sampling run."""

    grid: np.ndarray
    solver: str
    seed: int
    config: dict
    states_pre: np.ndarray    # [T x n x d], state at t_k before refinement
    states_post: np.ndarray   # [T x n x d], state handed to the solver step
    final: np.ndarray         # [n x d]
    chosen: list              # per step: [N x n] candidate indices, or None
    divergences: list         # per step: [N x (M+1) x n] divergence values, or None
    nfe_velocity: int = 0
    nfe_refine: int = 0
    heun_fallback_steps: tuple = ()

    @property
    def nfe_total(self) -> int:
        return self.nfe_velocity + self.nfe_refine

    def state_at(self, t: float) -> np.ndarray:
        """Pre-refinement state at a grid time (final state for t = 1)."""
        if t == self.grid[-1]:
            return self.final
        idx = np.flatnonzero(np.isclose(self.grid[:-1], t))
        if len(idx) == 0:
            raise KeyError(f"no recorded state at t={t}")
        return self.states_pre[idx[0]]


def uniform_grid(steps: int) -> np.ndarray:
    if steps < 1:
        raise ConfigError("need at least one step")
    return np.linspace(0.0, 1.0, steps + 1)


def _check_finite(x: np.ndarray, what: str):
    if not np.all(np.isfinite(x)):
        raise IntegrationError(f"non-finite {what} during integration")


def euler_step(field, x, t_k: float, t_k1: float) -> np.ndarray:
    """First-order step x + dt * u(x, t_k)."""
    if not t_k < t_k1:
        raise ConfigError(f"need t_k < t_k1, got {t_k} >= {t_k1}")
    u = field.velocity(x, t_k)
    _check_finite(u, "field output")
    return x + (t_k1 - t_k) * u


def heun_step(field, x, t_k: float, t_k1: float) -> np.ndarray:
    """Trapezoidal predictor-corrector step.

    Raises SingularityError if the field cannot be evaluated at t_k1 (the
    pipeline downgrades that step to Euler).
    """
    if not t_k < t_k1:
        raise ConfigError(f"need t_k < t_k1, got {t_k} >= {t_k1}")
    dt = t_k1 - t_k
    u0 = field.velocity(x, t_k)
    _check_finite(u0, "field output")
    x_pred = x + dt * u0
    u1 = field.velocity(x_pred, t_k1)
    _check_finite(u1, "field output")
    return x + 0.5 * dt * (u0 + u1)


def _divergence_evaluator(field, cfg: FdsConfig, d: int):
    """Returns (div_fn(candidates, t, probe), cost-per-candidate-batch, probe_fn(rng, n))."""
    if cfg.divergence == "exact":
        def div_fn(x, t, probe):
            return np.asarray(field.divergence(x, t))
        return div_fn, d, None

    if not hasattr(field, "jvp"):
        raise ConfigError("hutchinson divergence requires a field with Jacobian-vector products")

    def probe_fn(rng, n):
        return [mlp_mod._probe_batch(rng, n, d, cfg.probe_kind, p) for p in range(cfg.probes)]

    def div_fn(x, t, probe):
        draws = np.stack([np.einsum("nd,nd->n", xi, field.jvp(x, t, xi)) for xi in probe])
        return draws.mean(axis=0)

    return div_fn, cfg.probes, probe_fn


def refine(field, x, t: float, cfg: FdsConfig, rng=None, seed: int = 0):
    """One refinement pass at time t for a batch of states.

    Returns (x_new, diagnostics) with diagnostics holding the per-iteration
    divergence table ([N x (M+1) x n]), chosen candidate indices ([N x n]) and
    the number of field evaluations charged.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n_samples, d = x.shape
    diag = {"divergences": None, "chosen": None, "field_evals": 0, "sigma": 0.0}
    if not cfg.enabled:
        return x, diag
    sigma = sigma_at(cfg.sigma, t, cfg.t_trunc)
    diag["sigma"] = sigma
    if sigma == 0.0:
        return x, diag

    if rng is None:
        rng = np.random.default_rng(seed)
    div_fn, cost, probe_fn = _divergence_evaluator(field, cfg, d)

    div_table = np.empty((cfg.n, cfg.m + 1, n_samples))
    chosen = np.empty((cfg.n, n_samples), dtype=int)
    for it in range(cfg.n):
        candidates = [x]
        for _ in range(cfg.m):
            candidates.append(x + sigma * rng.standard_normal((n_samples, d)))
        # One shared probe set per iteration: common random numbers make the
        # arg-min a comparison of correlated estimates.
        probe = probe_fn(rng, n_samples) if probe_fn is not None else None
        for ci, cand in enumerate(candidates):
            vals = div_fn(cand, t, probe)
            if not np.all(np.isfinite(vals)):
                raise RefinementError(f"non-finite divergence at candidate {ci}, t={t}")
            div_table[it, ci] = vals
        diag["field_evals"] += (cfg.m + 1) * cost
        best = np.argmin(div_table[it], axis=0)  # ties resolve to the lowest index
        chosen[it] = best
        stacked = np.stack(candidates)
        x = stacked[best, np.arange(n_samples)]
    diag["divergences"] = div_table
    diag["chosen"] = chosen
    return x, diag


def run_pipeline(field, solver: str, grid, cfg: FdsConfig, n: int, seed: int,
                 config_snapshot: Optional[dict] = None) -> RunRecord:
    """Sample n trajectories: refine-then-step over the grid, fully recorded.

    Deterministic per (field, grid, cfg, seed).  The Heun corrector falls back
    to Euler on steps whose right endpoint the field cannot evaluate (the
    oracle field is singular at t = 1); such steps are flagged in the record.
    """
    if solver not in ("euler", "heun"):
        raise ConfigError(f"unknown solver {solver!r}")
    if n < 1:
        raise ConfigError("need n >= 1 samples")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or not np.all(np.diff(grid) > 0):
        raise ConfigError("grid must be strictly increasing")
    if grid[0] != 0.0 or grid[-1] != 1.0:
        raise ConfigError("grid must start at 0 and end at 1")

    d = field.dim
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))

    steps = len(grid) - 1
    states_pre = np.empty((steps, n, d))
    states_post = np.empty((steps, n, d))
    chosen, divergences = [], []
    nfe_velocity = 0
    nfe_refine = 0
    fallback = []

    for k in range(steps):
        t_k, t_k1 = grid[k], grid[k + 1]
        states_pre[k] = x
        x, diag = refine(field, x, t_k, cfg, rng=rng)
        states_post[k] = x
        chosen.append(diag["chosen"])
        divergences.append(diag["divergences"])
        nfe_refine += diag["field_evals"]

        if solver == "euler":
            x = euler_step(field, x, t_k, t_k1)
            nfe_velocity += 1
        else:
            try:
                x = heun_step(field, x, t_k, t_k1)
                nfe_velocity += 2
            except SingularityError:
                x = euler_step(field, x, t_k, t_k1)
                nfe_velocity += 1
                fallback.append(k)
        _check_finite(x, "state")

    return RunRecord(
        grid=grid, solver=solver, seed=seed,
        config=dict(config_snapshot or {}),
        states_pre=states_pre, states_post=states_post, final=x,
        chosen=chosen, divergences=divergences,
        nfe_velocity=nfe_velocity, nfe_refine=nfe_refine,
        heun_fallback_steps=tuple(fallback),
    )
