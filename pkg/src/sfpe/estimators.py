"""Plain Monte-Carlo estimators for linear Kolmogorov problems.

``estimate_value`` approximates u(t,x) = E[g(X_T) + int_t^T h(s, X_s) ds],
``estimate_gradient_bel`` the gradient of x -> E[payoff(X_T)] through the
Bismut-Elworthy-Li weight, and ``estimate_value_gradient`` both at once with
the weighted running term.  All three draw the same Brownian increments for
the same (seed, grid, n_paths), so they can be compared sample by sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonError
from .parallel import chunk_bounds, map_chunks
from .rng import as_stream
from .sde import TimeGrid
from .weights import QuadratureNodes, propagate, quadrature_nodes


@dataclass(frozen=True)
class Estimate:
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int
    runtime: float | None = field(default=None, compare=False)

    @classmethod
    def from_samples(cls, samples, runtime=None):
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        mean = np.mean(samples, axis=0)
        se = np.std(samples, axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full_like(mean, np.inf)
        return cls(mean, se, n, runtime)

    def __iter__(self):
        yield from (self.mean, self.stderr)


def _setup(spec, t, x, grid, n_paths, antithetic):
    if not 0 <= t < spec.T:
        raise HorizonError(f"need 0 <= t < T, got t={t}")
    x = np.asarray(x, dtype=float).reshape(spec.d)
    grid = TimeGrid.default(t, spec.T) if grid is None else grid
    if not (math.isclose(grid.t_start, t) and math.isclose(grid.t_end, spec.T)):
        raise ValueError(f"grid must span [t, T] = [{t}, {spec.T}]")
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    if antithetic and n_paths % 2:
        raise ValueError("antithetic sampling needs an even path count")
    return x, grid


def _run(fn, n_paths, stream, antithetic, workers):
    def chunk(i, lo, hi):
        s = fn(stream.child(i).generator(), hi - lo)
        if antithetic:
            half = (hi - lo) // 2
            s = 0.5 * (s[:half] + s[half:])
        return s

    return np.concatenate(map_chunks(chunk, chunk_bounds(n_paths), workers))


def _evaluate(fun, *args):
    return np.asarray(fun(*args), dtype=float)


def value_samples(spec, t, x, h=None, n_paths=10_000, grid=None, rng=0, antithetic=False,
                  workers=1, terminal=None):
    x, grid = _setup(spec, t, x, grid, n_paths, antithetic)
    g = spec.g if terminal is None else terminal
    times, dts = grid.times, grid.dt

    def fn(gen, n):
        fb = propagate(spec, times, np.broadcast_to(x, (n, spec.d)), gen,
                       record=None if h is None else "all", weights=False,
                       antithetic=antithetic)
        out = _evaluate(g, fb.x_end)
        if h is not None:
            for k in range(grid.n_steps):
                out = out + _evaluate(h, np.full(n, times[k]), fb.rec_x[:, k]) * dts[k]
        return out

    return _run(fn, n_paths, as_stream(rng), antithetic, workers)


def estimate_value(spec, t, x, h=None, n_paths=10_000, grid=None, rng=0, antithetic=False,
                   workers=1, terminal=None):
    """Feynman-Kac value with a left-point rule for the running term."""
    return Estimate.from_samples(value_samples(
        spec, t, x, h, n_paths, grid, rng, antithetic, workers, terminal))


def gradient_samples(spec, t, x, payoff=None, n_paths=10_000, grid=None, rng=0,
                     antithetic=False, workers=1):
    x, grid = _setup(spec, t, x, grid, n_paths, antithetic)
    payoff = spec.g if payoff is None else payoff
    horizon = spec.T - t

    def fn(gen, n):
        fb = propagate(spec, grid.times, np.broadcast_to(x, (n, spec.d)), gen,
                       antithetic=antithetic)
        return _evaluate(payoff, fb.x_end)[:, None] * fb.integral_end / horizon

    return _run(fn, n_paths, as_stream(rng), antithetic, workers)


def estimate_gradient_bel(spec, t, x, payoff=None, n_paths=10_000, grid=None, rng=0,
                          antithetic=False, workers=1):
    """Gradient of x -> E[payoff(X_T)] as E[payoff(X_T) Z_{t,T}]."""
    return Estimate.from_samples(gradient_samples(
        spec, t, x, payoff, n_paths, grid, rng, antithetic, workers))


def left_point_nodes(times):
    """Left-point rule on a shared grid: nodes 1..K-1 with weight dt_k."""
    times = np.asarray(times, float)
    return QuadratureNodes(times, "all", np.diff(times)[None, 1:])


def _node_view(nodes, fb, n):
    times = nodes.times
    if isinstance(nodes.index, str):
        q = times.shape[-1] - 2
        node_t = np.broadcast_to(times[..., 1:-1], (n, q))
        return (node_t, fb.rec_x[:, 1:-1], fb.rec_integral[:, 1:-1],
                np.broadcast_to(nodes.node_weight, (n, q)))
    node_t = times[np.arange(n), nodes.index][:, None]
    return node_t, fb.rec_x, fb.rec_integral, nodes.node_weight


def phi_samples(spec, t, x, nodes, gen, terminal=None, running=None, include_terminal=True,
                antithetic=False, counter=None):
    """Per-path samples of g(X_T) Z_{t,T} + sum_r w_r h(r, X_r) Z_{t,r}.

    ``t`` is ``(n,)``, ``x`` is ``(n, d)`` and ``nodes`` the quadrature layout
    from :func:`left_point_nodes` or :func:`~sfpe.weights.quadrature_nodes`.
    ``running`` follows :func:`weighted_running_term`.  Returns ``(n, d+1)``.
    """
    x = np.asarray(x, float)
    n, d = x.shape
    t = np.broadcast_to(np.asarray(t, float), (n,))
    fb = propagate(spec, nodes.times, x, gen, record=None if running is None else nodes.index,
                   antithetic=antithetic, counter=counter)
    out = np.zeros((n, d + 1))
    if include_terminal:
        g = spec.g if terminal is None else terminal
        out[:, 0] = 1.0
        out[:, 1:] = fb.integral_end / (spec.T - t)[:, None]
        out *= _evaluate(g, fb.x_end)[:, None]
    if running is not None:
        out += weighted_running_term(running, t, *_node_view(nodes, fb, n))
    return out


def weighted_sum_samples(spec, t, x, terminal=None, running=None, n_paths=10_000, grid=None,
                         rng=0, quadrature="left-point", antithetic=False, workers=1):
    x, grid = _setup(spec, t, x, grid, n_paths, antithetic)

    def fn(gen, n):
        if quadrature == "left-point":
            nodes = left_point_nodes(grid.times)
        else:
            nodes = quadrature_nodes(np.full(n, t), spec.T, grid.n_steps, quadrature, gen)
        return phi_samples(spec, t, np.broadcast_to(x, (n, spec.d)), nodes, gen,
                           terminal=terminal, running=running, antithetic=antithetic)

    return _run(fn, n_paths, as_stream(rng), antithetic, workers)


def weighted_running_term(running, t, node_t, node_x, node_i, node_w):
    """sum over nodes of w * running(r, X_r) * (1, I_r / (r - t)).

    ``node_t``/``node_w`` are ``(n, q)``, ``node_x``/``node_i`` ``(n, q, d)``;
    ``running`` may instead be a precomputed ``(n, q)`` array.  Nodes with
    r = t contribute nothing.
    """
    n, q, d = node_x.shape
    if callable(running):
        vals = _evaluate(running, node_t.reshape(-1), node_x.reshape(-1, d)).reshape(n, q)
    else:
        vals = np.asarray(running, float).reshape(n, q)
    elapsed = node_t - np.reshape(t, (-1, 1))
    ok = elapsed > 0
    scale = np.where(ok, vals * node_w, 0.0)
    out = np.empty((n, d + 1))
    out[:, 0] = np.sum(scale, axis=1)
    inv = np.where(ok, 1.0 / np.where(ok, elapsed, 1.0), 0.0)
    out[:, 1:] = np.einsum("nq,nqd->nd", scale * inv, node_i)
    return out


def estimate_value_gradient(spec, t, x, terminal=None, running=None, n_paths=10_000,
                            grid=None, rng=0, quadrature="left-point", antithetic=False,
                            workers=1):
    """Joint estimate of (u, grad u) for a running term frozen to ``running``.

    The left-point rule drops the node r = t, where the weight is undefined.
    """
    return Estimate.from_samples(weighted_sum_samples(
        spec, t, x, terminal, running, n_paths, grid, rng, quadrature, antithetic, workers))
