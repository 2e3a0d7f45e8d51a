"""Nested Monte-Carlo Picard iteration for the stochastic fixed-point equation

    (v, grad v)(t, x) = E[ g(X_T) Z_{t,T} + int_t^T f(r, X_r, v, grad v) Z_{t,r} dr ],

with a multilevel (MLP) variant.  ``Phi`` below denotes the right-hand side
as a map acting on a candidate ``V = (v, grad v)``.

Randomness is keyed by position: the paths of chunk ``i`` of an evaluation
with stream ``S`` use ``S.child(i)``, and the inner evaluations those paths
trigger use ``S.child(i, 1)`` (and ``S.child(i, 2)`` for the second inner
call of a multilevel correction).  Every recursive evaluation therefore has
fresh, reproducible randomness that does not depend on the worker count.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, ConfigurationError, HorizonError
from .estimators import Estimate, left_point_nodes, phi_samples
from .parallel import chunk_bounds, map_chunks
from .reports import ResidualReport
from .rng import as_stream
from .weights import QUADRATURES, quadrature_nodes

SCHEMES = ("plain", "multilevel")
# Offset of the per-level streams of the multilevel scheme; chunk indices
# stay far below it.
_LEVEL_KEY = 1 << 32


@dataclass(frozen=True)
class PicardConfig:
    """Depth, per-level sample counts and time discretization.

    ``samples_per_level[k-1]`` is the number of outer samples used when the
    iterate of level ``k`` is evaluated.  For the multilevel scheme the
    correction of level ``l`` inside ``V_n`` uses ``samples_per_level[n-l-1]``
    samples, so the counts must be nondecreasing in ``k``.  ``budget`` caps
    the predicted number of simulated path-steps.
    """

    depth: int
    samples_per_level: tuple
    grid_steps: int = 20
    quadrature: str = "randomized-arcsine"
    scheme: str = "plain"
    budget: int | None = None

    def __post_init__(self):
        m = tuple(int(v) for v in np.atleast_1d(self.samples_per_level))
        object.__setattr__(self, "samples_per_level", m)
        if int(self.depth) != self.depth or self.depth < 0:
            raise ConfigurationError(f"depth must be a nonnegative integer, got {self.depth}")
        if len(m) < self.depth:
            raise ConfigurationError(
                f"need {self.depth} sample counts, got {len(m)}")
        if any(v < 1 for v in m):
            raise ConfigurationError("sample counts must be positive")
        if self.grid_steps < 2 or int(self.grid_steps) != self.grid_steps:
            raise ConfigurationError("grid_steps must be an integer >= 2")
        if self.quadrature not in QUADRATURES:
            raise ConfigurationError(
                f"unknown quadrature {self.quadrature!r}; choose from {QUADRATURES}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.scheme == "multilevel" and any(a > b for a, b in zip(m, m[1:self.depth])):
            raise ConfigurationError(
                "multilevel sample counts must be nondecreasing in the level index")
        if self.budget is not None and self.budget < 1:
            raise ConfigurationError("budget must be positive")

    def samples(self, level):
        return self.samples_per_level[level - 1]

    @property
    def _per_path(self):
        """(steps simulated, inner evaluations) per outer path."""
        n = self.grid_steps
        if self.quadrature == "left-point":
            return n, n - 1
        return n + 1, 1


@dataclass(frozen=True)
class ValueGradient:
    """(v, grad v) at a point, with per-component standard errors."""

    vg: np.ndarray
    at: tuple
    stderr: np.ndarray
    n_samples: int
    cost: int = 0
    runtime: float | None = field(default=None, compare=False)

    @property
    def value(self):
        return float(self.vg[0])

    @property
    def gradient(self):
        return self.vg[1:]

    CSV_COLUMNS = ("t", "x", "component", "mean", "stderr", "n_samples", "cost")

    def csv_rows(self):
        t, x = self.at
        for j in range(self.vg.size):
            yield (float(t), np.asarray(x, float), j, self.vg[j], self.stderr[j],
                   self.n_samples, self.cost)


def terminal_value(spec, x):
    """(g(x), undefined gradient): the fixed point only defines grad v on [0, T)."""
    x = np.asarray(x, float).reshape(spec.d)
    vg = np.full(spec.d + 1, np.nan)
    vg[0] = float(np.asarray(spec.g(x[None]), float)[0])
    return ValueGradient(vg, (spec.T, x), np.zeros(spec.d + 1), 0)


# -- cost model ---------------------------------------------------------------

def _plain_cost(cfg, level):
    steps, inner = cfg._per_path
    c = 0
    for k in range(1, level + 1):
        c = cfg.samples(k) * (steps + inner * c)
    return c


def _mlp_cost(cfg, level, memo=None):
    memo = {} if memo is None else memo
    if level == 0:
        return 0
    if level in memo:
        return memo[level]
    steps, inner = cfg._per_path
    total = 0
    for l in range(level):
        sub = _mlp_cost(cfg, l, memo) + (_mlp_cost(cfg, l - 1, memo) if l >= 1 else 0)
        total += cfg.samples(level - l) * (steps + inner * sub)
    memo[level] = total
    return total


def predicted_cost(cfg, n_queries=1):
    """Number of simulated path-steps for ``n_queries`` evaluations at full depth.

    The count is exact: it equals what the evaluators record.
    """
    per = _plain_cost(cfg, cfg.depth) if cfg.scheme == "plain" else _mlp_cost(cfg, cfg.depth)
    return int(n_queries) * per


def _guard(cfg, n_queries=1, budget=None):
    budget = cfg.budget if budget is None else budget
    cost = predicted_cost(cfg, n_queries)
    if budget is not None and cost > budget:
        raise BudgetExceeded(cost, budget)
    return cost


# -- evaluation ---------------------------------------------------------------

def _nodes(spec, t, cfg, gen):
    if cfg.quadrature != "left-point":
        return quadrature_nodes(t, spec.T, cfg.grid_steps, cfg.quadrature, gen)
    if np.all(t == t[0]):
        return left_point_nodes(np.linspace(t[0], spec.T, cfg.grid_steps + 1))
    return quadrature_nodes(t, spec.T, cfg.grid_steps, "left-point", gen)


def _frozen_f(spec, evaluate):
    """Running term r, y -> f(r, y, V(r, y)) for an evaluator of V."""

    def running(r, y):
        v = evaluate(r, y)
        return spec.f(r, y, v[:, 0], v[:, 1:])

    return running


def _phi_batch(spec, cfg, t, x, stream, samples, running_for, include_terminal, counter,
               workers=1):
    """Per-sample Phi contributions for each query, ``samples`` paths per query.

    ``running_for(stream)`` returns the running term (or None) whose inner
    evaluations draw from ``stream``.  Returns ``(m, samples, d+1)``.
    """
    m, d = x.shape
    t_rep = np.repeat(t, samples)
    x_rep = np.repeat(x, samples, axis=0)

    def chunk(i, lo, hi):
        sub = stream.child(i)
        gen = sub.generator()
        nodes = _nodes(spec, t_rep[lo:hi], cfg, gen)
        local = [0]
        out = phi_samples(spec, t_rep[lo:hi], x_rep[lo:hi], nodes, gen,
                          running=running_for(sub, local), include_terminal=include_terminal,
                          counter=local)
        return out, local[0]

    parts = map_chunks(chunk, chunk_bounds(m * samples), workers)
    counter[0] += sum(p[1] for p in parts)
    return np.concatenate([p[0] for p in parts]).reshape(m, samples, d + 1)


def _picard_samples(spec, cfg, level, t, x, stream, counter, workers=1):
    def running_for(sub, local):
        if level == 1:
            return lambda r, y: spec.f(r, y, np.zeros(r.shape[0]), np.zeros_like(y))
        return _frozen_f(spec, lambda r, y: _picard_samples(
            spec, cfg, level - 1, r, y, sub.child(1), local).mean(axis=1))

    return _phi_batch(spec, cfg, t, x, stream, cfg.samples(level), running_for, True,
                      counter, workers)


def _mlp_level_samples(spec, cfg, n, l, t, x, stream, counter, workers=1):
    """Samples of the level-l term of V_n: Phi(V_l) - Phi(V_{l-1}) (with the
    terminal part and f(., 0) attached to l = 0)."""

    def running_for(sub, local):
        if l == 0:
            return lambda r, y: spec.f(r, y, np.zeros(r.shape[0]), np.zeros_like(y))

        def running(r, y):
            hi = _mlp_means(spec, cfg, l, r, y, sub.child(1), local)
            lo = _mlp_means(spec, cfg, l - 1, r, y, sub.child(2), local)
            return (spec.f(r, y, hi[:, 0], hi[:, 1:])
                    - spec.f(r, y, lo[:, 0], lo[:, 1:]))

        return running

    level_stream = stream if l == 0 else stream.child(_LEVEL_KEY + l)
    return _phi_batch(spec, cfg, t, x, level_stream, cfg.samples(n - l), running_for, l == 0,
                      counter, workers)


def _mlp_means(spec, cfg, n, t, x, stream, counter):
    if n == 0:
        return np.zeros((x.shape[0], spec.d + 1))
    return sum(_mlp_level_samples(spec, cfg, n, l, t, x, stream, counter).mean(axis=1)
               for l in range(n))


def _check_query(spec, t, x, cfg):
    if t >= spec.T:
        raise HorizonError("t = T is the terminal boundary; use terminal_value")
    if t < 0:
        raise HorizonError(f"need 0 <= t < T, got t={t}")
    if cfg.depth < 1:
        raise ConfigurationError("evaluation needs depth >= 1")
    return np.asarray(x, float).reshape(1, spec.d)


def picard_evaluate(spec, t, x, cfg, rng=0, workers=1, budget=None):
    """Plain nested Picard iterate V_depth(t, x) with V_0 = 0.

    Raises BudgetExceeded before simulating when the predicted cost is above
    the budget.
    """
    if cfg.scheme == "multilevel":
        return mlp_evaluate(spec, t, x, cfg, rng, workers, budget)
    xq = _check_query(spec, t, x, cfg)
    _guard(cfg, 1, budget)
    start = time.perf_counter()
    counter = [0]
    samples = _picard_samples(spec, cfg, cfg.depth, np.array([float(t)]), xq,
                              as_stream(rng), counter, workers)[0]
    est = Estimate.from_samples(samples)
    return ValueGradient(est.mean, (float(t), xq[0]), est.stderr, est.n_samples, counter[0],
                         time.perf_counter() - start)


def mlp_evaluate(spec, t, x, cfg, rng=0, workers=1, budget=None):
    """Multilevel Picard iterate with telescoping level corrections.

    The standard error combines the independent levels:
    ``sqrt(sum_l var_l / M_l)``.
    """
    xq = _check_query(spec, t, x, cfg)
    _guard(cfg if cfg.scheme == "multilevel" else _as_mlp(cfg), 1, budget)
    start = time.perf_counter()
    stream = as_stream(rng)
    counter = [0]
    n = cfg.depth
    mean = np.zeros(spec.d + 1)
    var = np.zeros(spec.d + 1)
    total = 0
    for l in range(n):
        s = _mlp_level_samples(spec, cfg, n, l, np.array([float(t)]), xq, stream, counter,
                               workers)[0]
        est = Estimate.from_samples(s)
        mean += est.mean
        var += est.stderr ** 2
        total += est.n_samples
    return ValueGradient(mean, (float(t), xq[0]), np.sqrt(var), total, counter[0],
                         time.perf_counter() - start)


def _as_mlp(cfg):
    return PicardConfig(cfg.depth, cfg.samples_per_level, cfg.grid_steps, cfg.quadrature,
                        "multilevel", cfg.budget)


def solve(spec, t, x, cfg, rng=0, workers=1, budget=None):
    """Dispatch on ``cfg.scheme``."""
    if cfg.scheme == "multilevel":
        return mlp_evaluate(spec, t, x, cfg, rng, workers, budget)
    return picard_evaluate(spec, t, x, cfg, rng, workers, budget)


# -- fixed-point residual -----------------------------------------------------

def fixed_point_residual(spec, candidate, probes, n_paths=20_000, grid_steps=50,
                         quadrature="randomized-arcsine", rng=0, bias_tol=None, workers=1):
    """Monte-Carlo estimate of Phi(candidate) - candidate at each probe.

    ``candidate(t, x)`` maps ``(n,)``, ``(n, d)`` to ``(n, d+1)``.  The
    tolerance added to ``3 * stderr`` allows for the time-discretization bias;
    by default it is ``(T - t) / grid_steps * (1 + |candidate|)``
    componentwise.
    """
    stream = as_stream(rng)
    cfg = PicardConfig(1, (n_paths,), grid_steps, quadrature)
    running = _frozen_f(spec, lambda r, y: np.asarray(candidate(r, y), float))
    probes = [(float(t), np.asarray(x, float).reshape(spec.d)) for t, x in probes]
    res, se, tol = [], [], []
    for i, (t, x) in enumerate(probes):
        if not 0 <= t < spec.T:
            raise HorizonError(f"probe time {t} outside [0, T)")
        samples = _phi_batch(spec, cfg, np.array([t]), x[None], stream.child(i),
                             n_paths, lambda sub, local: running, True, [0], workers)[0]
        est = Estimate.from_samples(samples)
        cand = np.asarray(candidate(np.array([t]), x[None]), float)[0]
        res.append(est.mean - cand)
        se.append(est.stderr)
        dt = (spec.T - t) / grid_steps
        tol.append(dt * (1.0 + np.abs(cand)) if bias_tol is None else
                   np.full(spec.d + 1, float(bias_tol)))
    return ResidualReport(tuple(probes), np.array(res), np.array(se), np.array(tol),
                          label="fixed_point")


def convergence_in_depth(spec, t, x, cfg, depths, rng=0, workers=1):
    """Iterates V_n(t, x) for each depth in ``depths`` with a shared seed."""
    out = []
    for n in depths:
        sub = PicardConfig(n, cfg.samples_per_level[-n:] if cfg.scheme == "multilevel"
                           else cfg.samples_per_level[:n], cfg.grid_steps, cfg.quadrature,
                           cfg.scheme, cfg.budget)
        out.append(solve(spec, t, x, sub, rng, workers))
    return out


def growth_certificate(spec, evaluate, probes, p=None):
    """max over probes of |vg(t,x)| sqrt(T - t) / (1 + |x|^2)^(p/2)."""
    p = spec.growth_p if p is None else p
    worst = 0.0
    for t, x in probes:
        x = np.asarray(x, float)
        vg = np.asarray(evaluate(t, x), float)
        vg = vg[np.isfinite(vg)]
        scaled = np.linalg.norm(vg) * math.sqrt(spec.T - t) / (1.0 + x @ x) ** (p / 2)
        worst = max(worst, float(scaled))
    return worst
