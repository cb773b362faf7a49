"""Trainable velocity network with hand-written autodiff.

A small fully-connected network u(x, t) -> R^d with time appended as an input
coordinate.  Reverse mode (for training) and forward mode (for
Jacobian-vector products and divergence) are implemented directly in numpy so
the package carries no autodiff framework dependency.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, TrainingError
from .schedules import Schedule
from .targets import InterpolantSample, TargetSpec

__all__ = [
    "MlpField",
    "TrainConfig",
    "DivergenceEstimate",
    "cfm_loss",
    "train",
    "divergence_exact_basis",
    "divergence_hutchinson",
]

CHECKPOINT_FORMAT = "fdslab-mlp"
CHECKPOINT_VERSION = 1

DEFAULT_HIDDEN = (128, 128, 128)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _silu(z):
    return z * _sigmoid(z)


def _silu_prime(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


class MlpField:
    """Velocity network: input (x, t), smooth hidden activations, linear output."""

    def __init__(self, dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN,
                 params: Optional[list] = None, seed: int = 0):
        self.dim = int(dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.widths = (self.dim + 1, *self.hidden, self.dim)
        if params is None:
            rng = np.random.default_rng(seed)
            params = []
            for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
                w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
                params.append((w, np.zeros(fan_out)))
        self.params = params

    # -- forward / reverse --------------------------------------------------

    def _inputs(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tcol = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))[:, None]
        return np.concatenate([x, tcol], axis=1)

    def _forward(self, inp: np.ndarray):
        """Returns (output, cache of pre-activations and activations)."""
        h = inp
        zs, hs = [], [h]
        last = len(self.params) - 1
        for i, (w, b) in enumerate(self.params):
            z = h @ w + b
            zs.append(z)
            h = z if i == last else _silu(z)
            hs.append(h)
        return h, (zs, hs)

    def velocity(self, x, t) -> np.ndarray:
        """u(x, t) for a batch of states (or a single state vector)."""
        x_arr = np.asarray(x, dtype=float)
        out, _ = self._forward(self._inputs(x_arr, t))
        return out[0] if x_arr.ndim == 1 else out

    def _backward(self, cache, grad_out: np.ndarray):
        """Parameter gradients (and input gradient) for a given output cotangent."""
        zs, hs = cache
        grads = [None] * len(self.params)
        g = grad_out
        last = len(self.params) - 1
        for i in range(last, -1, -1):
            w, _ = self.params[i]
            if i != last:
                g = g * _silu_prime(zs[i])
            grads[i] = (hs[i].T @ g, g.sum(axis=0))
            g = g @ w.T
        return grads, g

    def jvp(self, x, t, v) -> np.ndarray:
        """Directional derivative of u in the state direction v (time held fixed)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        h = self._inputs(x, t)
        dh = np.concatenate([v, np.zeros((len(v), 1))], axis=1)
        last = len(self.params) - 1
        for i, (w, b) in enumerate(self.params):
            z = h @ w + b
            dz = dh @ w
            if i == last:
                h, dh = z, dz
            else:
                h, dh = _silu(z), dz * _silu_prime(z)
        return dh

    def divergence(self, x, t) -> np.ndarray:
        """Exact spatial divergence (trace via d directional derivatives)."""
        x_arr = np.asarray(x, dtype=float)
        div = divergence_exact_basis(self, x_arr, t)
        return float(div[0]) if x_arr.ndim == 1 else div

    # -- checkpoint ---------------------------------------------------------

    def save(self, path) -> None:
        flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.params])
        blob = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dim": self.dim,
            "hidden": list(self.hidden),
            "activation": "silu",
            "params": flat.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path) -> "MlpField":
        with open(path) as fh:
            blob = json.load(fh)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {blob.get('version')}")
        field = cls(dim=blob["dim"], hidden=blob["hidden"], params=[])
        flat = np.asarray(blob["params"], dtype=float)
        params, off = [], 0
        for fan_in, fan_out in zip(field.widths[:-1], field.widths[1:]):
            w = flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = flat[off:off + fan_out]
            off += fan_out
            params.append((w, b))
        if off != len(flat):
            raise ConfigError(f"{path}: parameter count mismatch")
        field.params = params
        return field


@dataclass(frozen=True)
class TrainConfig:
    """Regression-training hyperparameters for the velocity network."""

    target: TargetSpec
    schedule: Schedule
    steps: int = 20_000
    batch: int = 512
    learning_rate: float = 1e-3
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass(frozen=True)
class DivergenceEstimate:
    """A divergence value with its estimation metadata."""

    value: float
    method: str
    probes: int
    stderr: float = 0.0


def cfm_loss(field: MlpField, batch: Sequence[InterpolantSample]) -> float:
    """Mean squared error between the network and the sample-wise velocities."""
    if len(batch) == 0:
        raise ConfigError("cfm_loss needs a non-empty batch")
    x_t = np.stack([s.x_t for s in batch])
    v_t = np.stack([s.v_t for s in batch])
    t = np.array([s.t for s in batch])
    if x_t.shape[1] != field.dim:
        raise ConfigError(f"dimension mismatch: batch d={x_t.shape[1]}, field d={field.dim}")
    out, _ = field._forward(field._inputs(x_t, t))
    return float(np.mean(np.sum((out - v_t) ** 2, axis=1)))


def _loss_and_grads(field: MlpField, x_t, t, v_t):
    out, cache = field._forward(field._inputs(x_t, t))
    resid = out - v_t
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    grads, _ = field._backward(cache, 2.0 * resid / len(x_t))
    return loss, grads


def train(cfg: TrainConfig):
    """Fit the network with adaptive-moment gradient descent on the CFM objective.

    Returns (field, curve) where curve is a list of (step, loss) pairs sampled
    every ``log_every`` steps.  Deterministic per seed.
    """
    rng = np.random.default_rng(cfg.seed)
    d = cfg.target.dim
    field = MlpField(dim=d, hidden=cfg.hidden, seed=cfg.seed)

    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in field.params]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in field.params]
    curve = []
    for step in range(1, cfg.steps + 1):
        x1 = cfg.target.sample(cfg.batch, rng)
        x0 = rng.standard_normal((cfg.batch, d))
        t = rng.uniform(0.0, 1.0, cfg.batch)
        alpha, beta, alpha_dot, beta_dot = cfg.schedule.eval_many(t)
        x_t = alpha[:, None] * x1 + beta[:, None] * x0
        v_t = alpha_dot[:, None] * x1 + beta_dot[:, None] * x0

        loss, grads = _loss_and_grads(field, x_t, t, v_t)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}", step=step)

        bc1 = 1.0 - cfg.adam_beta1 ** step
        bc2 = 1.0 - cfg.adam_beta2 ** step
        new_params = []
        for i, ((w, b), (gw, gb)) in enumerate(zip(field.params, grads)):
            mw = cfg.adam_beta1 * m[i][0] + (1 - cfg.adam_beta1) * gw
            mb = cfg.adam_beta1 * m[i][1] + (1 - cfg.adam_beta1) * gb
            vw = cfg.adam_beta2 * v[i][0] + (1 - cfg.adam_beta2) * gw ** 2
            vb = cfg.adam_beta2 * v[i][1] + (1 - cfg.adam_beta2) * gb ** 2
            m[i], v[i] = (mw, mb), (vw, vb)
            w = w - cfg.learning_rate * (mw / bc1) / (np.sqrt(vw / bc2) + cfg.adam_eps)
            b = b - cfg.learning_rate * (mb / bc1) / (np.sqrt(vb / bc2) + cfg.adam_eps)
            new_params.append((w, b))
        field.params = new_params

        if step % cfg.log_every == 0 or step == cfg.steps:
            curve.append((step, loss))
    return field, curve


def divergence_exact_basis(field: MlpField, x, t) -> np.ndarray:
    """Exact trace of the state Jacobian via d directional derivatives."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    div = np.zeros(n)
    for i in range(d):
        e = np.zeros((n, d))
        e[:, i] = 1.0
        div += field.jvp(x, t, e)[:, i]
    return div


def divergence_exact_basis_estimate(field: MlpField, x, t) -> DivergenceEstimate:
    value = divergence_exact_basis(field, np.asarray(x)[None, :], t)[0]
    return DivergenceEstimate(value=float(value), method="exact-basis",
                              probes=field.dim, stderr=0.0)


def _probe_batch(rng, n, d, kind, probe_index):
    if kind == "gaussian":
        return rng.standard_normal((n, d))
    if kind == "rademacher":
        return rng.integers(0, 2, size=(n, d)) * 2.0 - 1.0
    if kind == "basis":
        # Scaled basis vectors keep E[xi xi^T] = I; with probes = d the mean
        # of the quadratic forms telescopes to the exact trace.
        e = np.zeros((n, d))
        e[:, probe_index % d] = np.sqrt(d)
        return e
    raise ConfigError(f"unknown probe kind {kind!r}")


def divergence_hutchinson(field: MlpField, x, t, probes: int, seed=None,
                          probe_kind: str = "gaussian", rng=None):
    """Stochastic trace estimate: mean over probes of xi^T (J u) xi.

    Returns (values, stderr) arrays over the batch.  The same probe sequence
    is applied to every state in the batch.
    """
    if probes < 1:
        raise ConfigError("probes must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    draws = np.empty((probes, n))
    for p in range(probes):
        xi = _probe_batch(rng, n, d, probe_kind, p)
        draws[p] = np.einsum("nd,nd->n", xi, field.jvp(x, t, xi))
    values = draws.mean(axis=0)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(probes) if probes > 1 else np.zeros(n)
    return values, stderr


def divergence_hutchinson_estimate(field: MlpField, x, t, probes: int, seed=None,
                                   probe_kind: str = "gaussian") -> DivergenceEstimate:
    values, stderr = divergence_hutchinson(field, np.asarray(x)[None, :], t, probes,
                                           seed=seed, probe_kind=probe_kind)
    return DivergenceEstimate(value=float(values[0]), method="hutchinson",
                              probes=probes, stderr=float(stderr[0]))
