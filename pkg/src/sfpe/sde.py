"""Euler-Maruyama simulation of the SDE flow and its first-variation
processes on a shared Brownian path.

All paths carry an optional batch axis: ``states`` has shape
``(n_steps + 1, d)`` for a single path or ``(n_steps + 1, n_paths, d)`` for a
batch, and variation matrices add a trailing ``(d, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SimulationBlowup
from .rng import as_stream

DEFAULT_STEPS = 200


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if not np.all(np.diff(times) > 0):
            raise ValueError("grid times must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, t_start, t_end, n_steps):
        if int(n_steps) != n_steps or n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {n_steps}")
        return cls(np.linspace(t_start, t_end, int(n_steps) + 1))

    @classmethod
    def default(cls, t_start, t_end, n_steps=None):
        """Uniform grid with step at most (t_end - t_start) / 200."""
        return cls.uniform(t_start, t_end, DEFAULT_STEPS if n_steps is None else n_steps)

    @property
    def n_steps(self):
        return self.times.size - 1

    @property
    def t_start(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    @property
    def dt(self):
        return np.diff(self.times)

    def check_within(self, T):
        if self.times[0] < 0.0 or self.times[-1] > T * (1.0 + 1e-12):
            raise ValueError(f"grid [{self.t_start}, {self.t_end}] leaves [0, {T}]")


@dataclass(frozen=True)
class SdePath:
    grid: TimeGrid
    states: np.ndarray
    dW: np.ndarray

    @property
    def batch_shape(self):
        return self.states.shape[1:-1]


@dataclass(frozen=True)
class VariationPath:
    grid: TimeGrid
    matrices: np.ndarray


def sample_brownian(grid, d, rng, n_paths=None):
    """Independent N(0, dt_k I) increments, shape ``(n_steps, [n_paths,] d)``."""
    gen = as_stream(rng).generator()
    batch = () if n_paths is None else (int(n_paths),)
    z = gen.standard_normal((grid.n_steps,) + batch + (d,))
    return z * np.sqrt(grid.dt).reshape((-1,) + (1,) * (len(batch) + 1))


def _check_finite(arr, step, what):
    """Raise SimulationBlowup naming the first bad path (batch axis 0)."""
    ok = np.isfinite(arr)
    if ok.all():
        return
    path = int(np.argmin(ok.reshape(ok.shape[0], -1).all(axis=1))) if arr.ndim > 1 else None
    raise SimulationBlowup(step, path, what)


def simulate_path(spec, x0, grid, rng=None, n_paths=None, dW=None):
    """Euler-Maruyama path of dX = mu dt + sigma dW started at ``x0``.

    Either an rng stream (with optional ``n_paths``) or explicit increments
    ``dW`` must be given.  ``x0`` may itself be a batch ``(n, d)``.
    """
    grid.check_within(spec.T)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != spec.d:
        raise ValueError(f"x0 has dimension {x0.shape[-1]}, problem has d={spec.d}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if dW is None:
        if rng is None:
            raise ValueError("need an rng stream or explicit increments")
        n = n_paths if x0.ndim == 1 else (n_paths or x0.shape[0])
        dW = sample_brownian(grid, spec.d, rng, n)
    dW = np.asarray(dW, dtype=float)
    if dW.shape[0] != grid.n_steps:
        raise ValueError("increment count does not match the grid")
    batch = dW.shape[1:-1]
    x = np.broadcast_to(x0, batch + (spec.d,)).astype(float, copy=True)
    states = np.empty((grid.n_steps + 1,) + x.shape)
    states[0] = x
    times, dt = grid.times, grid.dt
    for k in range(grid.n_steps):
        s = np.full(batch, times[k])
        sig = np.broadcast_to(spec.coeffs.sigma(s, x), batch + (spec.d, spec.d))
        x = x + spec.coeffs.mu(s, x) * dt[k] + np.einsum("...ij,...j->...i", sig, dW[k])
        _check_finite(x, k + 1, "state")
        states[k + 1] = x
    return SdePath(grid, states, dW)


def _variation_factors(spec, path, k):
    batch = path.batch_shape
    d = spec.d
    s = np.full(batch, path.grid.times[k])
    x = path.states[k]
    jmu = np.broadcast_to(spec.coeffs.drift_jacobian(s, x), batch + (d, d))
    jsig = spec.coeffs.diffusion_jacobian(s, x)
    noise = np.einsum("...ilk,...l->...ik", jsig, path.dW[k])
    return jmu, noise


def _require_jacobians(spec):
    if not spec.coeffs.has_jacobians:
        raise ConfigurationError("first-variation simulation needs Jacobians of mu and sigma")


def simulate_first_variation(spec, path):
    """Y = dX/dx along ``path``: Y_{k+1} = (I + J_mu dt + sum_l B_l dW_l) Y_k."""
    _require_jacobians(spec)
    d = spec.d
    eye = np.broadcast_to(np.eye(d), path.batch_shape + (d, d))
    out = np.empty((path.grid.n_steps + 1,) + eye.shape)
    y = eye.copy()
    out[0] = y
    dt = path.grid.dt
    for k in range(path.grid.n_steps):
        jmu, noise = _variation_factors(spec, path, k)
        y = y + (jmu * dt[k] + noise) @ y
        _check_finite(y.reshape(y.shape[:-2] + (-1,)), k + 1, "first variation")
        out[k + 1] = y
    return VariationPath(path.grid, out)


def simulate_inverse_variation(spec, path):
    """Inverse first variation Z with Z_k Y_k ~ I.

    Step: ``Z_{k+1} = Z_k [(I + J_mu dt)^{-1} - S + S^2]`` with
    ``S = sum_l B_l dW_l``.  The drift factor is inverted exactly and the
    noise factor to second order; the Ito mean of ``S^2`` is the correction
    ``sum_n B_n^2 dt`` of the continuous inverse-variation equation.  For
    state-independent sigma the scheme is the exact inverse of the Y step.
    """
    _require_jacobians(spec)
    d = spec.d
    eye = np.broadcast_to(np.eye(d), path.batch_shape + (d, d))
    out = np.empty((path.grid.n_steps + 1,) + eye.shape)
    z = eye.copy()
    out[0] = z
    dt = path.grid.dt
    for k in range(path.grid.n_steps):
        jmu, noise = _variation_factors(spec, path, k)
        step = np.linalg.inv(eye + jmu * dt[k]) - noise + noise @ noise
        z = z @ step
        _check_finite(z.reshape(z.shape[:-2] + (-1,)), k + 1, "inverse variation")
        out[k + 1] = z
    return VariationPath(path.grid, out)


def malliavin_derivative(spec, path, Y, Zinv, t_index, s_index):
    """D_t X_s = Y_s Y_t^{-1} sigma(t, X_t) with Zinv standing in for Y^{-1}."""
    if not 0 <= t_index <= s_index <= path.grid.n_steps:
        raise ValueError(f"need 0 <= t_index <= s_index <= n_steps, got {t_index}, {s_index}")
    batch = path.batch_shape
    t = path.grid.times[t_index]
    sig = np.broadcast_to(spec.coeffs.sigma(np.full(batch, t), path.states[t_index]),
                          batch + (spec.d, spec.d))
    return Y.matrices[s_index] @ Zinv.matrices[t_index] @ sig
