"""Bismut-Elworthy-Li weights.

For a path started at (t, x) the weight on (t, s] is the (d+1)-vector

    Z_{t,s} = (1, (s - t)^{-1} int_t^s (sigma^{-1}(r, X_r) Y_r)^T dW_r)

where Y is the first variation of the flow.  Besides the path-level API this
module holds the fused kernel used by the estimators: it propagates X, Y and
the running Ito integral together so the weight is available at every node
without storing Y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import exprel

from .errors import EllipticityViolation, HorizonError, SimulationBlowup
from .rng import as_stream
from .sde import TimeGrid

MIN_HORIZON = 1e-6
COND_LIMIT = 1e12
QUADRATURES = ("left-point", "randomized-uniform", "randomized-arcsine")


@dataclass(frozen=True)
class BelWeight:
    value: np.ndarray
    horizon: tuple

    @property
    def gradient_part(self):
        return self.value[..., 1:]


def _check_horizon(t, s, T):
    if not s - t >= MIN_HORIZON * T:
        raise HorizonError(f"weight horizon s - t = {s - t:.3g} is below {MIN_HORIZON} T")


def _check_conditioning(sig, step):
    cond = np.linalg.cond(sig)
    if not np.all(cond <= COND_LIMIT):
        raise EllipticityViolation(
            f"diffusion matrix numerically singular at step {step} "
            f"(condition {float(np.max(cond)):.3g})")


def bel_weight(spec, path, Y, s_index):
    """Weight Z_{t,s} at grid node ``s_index`` of a simulated path."""
    if s_index < 1:
        raise HorizonError("the weight is undefined at s = t (s_index must be >= 1)")
    times = path.grid.times
    t, s = times[0], times[s_index]
    _check_horizon(t, s, spec.T)
    batch = path.batch_shape
    d = spec.d
    acc = np.zeros(batch + (d,))
    for k in range(s_index):
        sig = np.broadcast_to(spec.coeffs.sigma(np.full(batch, times[k]), path.states[k]),
                              batch + (d, d))
        _check_conditioning(sig, k)
        m = np.linalg.solve(sig, Y.matrices[k])
        acc += np.einsum("...ij,...i->...j", m, path.dW[k])
    value = np.concatenate([np.ones(batch + (1,)), acc / (s - t)], axis=-1)
    return BelWeight(value, (float(t), float(s)))


def moment_bound(d, alpha, c, t, s):
    """d / (alpha (s-t)^2) * int_t^s exp(2 c (r - t)) dr."""
    h = s - t
    # exprel(z) = expm1(z) / z stays accurate for tiny (even subnormal) c
    return d / (alpha * h) * float(exprel(2.0 * c * h))


@dataclass(frozen=True)
class MomentReport:
    t: float
    s: float
    n_paths: int
    mean: np.ndarray
    mean_stderr: np.ndarray
    second_moment: float
    second_moment_stderr: float
    bound: float
    passed: bool

    @property
    def mean_norm(self):
        return float(np.linalg.norm(self.mean))

    CSV_COLUMNS = ("t", "s", "n_paths", "mean_norm", "second_moment", "bound", "pass")

    def csv_row(self):
        return (self.t, self.s, self.n_paths, self.mean_norm, self.second_moment,
                self.bound, self.passed)


def weight_moment_report(spec, t, s, n_paths, rng, x=None, n_steps=None, workers=1):
    """Monte-Carlo E[Z] and E|Z_{1..d}|^2 against the analytic second-moment bound."""
    if not s > t:
        raise HorizonError("weight moments need s > t")
    _check_horizon(t, s, spec.T)
    x = np.zeros(spec.d) if x is None else np.asarray(x, float)
    grid = TimeGrid.default(t, s, n_steps)
    samples = weighted_samples(spec, grid, x, n_paths, as_stream(rng), workers=workers)
    z = samples.weight_end
    sq = np.sum(z * z, axis=-1)
    n = z.shape[0]
    second = float(np.mean(sq))
    second_se = float(np.std(sq, ddof=1) / math.sqrt(n))
    bound = moment_bound(spec.d, spec.alpha, spec.c, t, s)
    return MomentReport(
        t=float(t), s=float(s), n_paths=n, mean=np.mean(z, axis=0),
        mean_stderr=np.std(z, axis=0, ddof=1) / math.sqrt(n), second_moment=second,
        second_moment_stderr=second_se, bound=bound,
        passed=bool(second <= bound + 3.0 * second_se))


# -- fused kernel -------------------------------------------------------------

@dataclass
class FlowBatch:
    """Per-path outputs of :func:`propagate`.

    ``integral_*`` is the unnormalized Ito integral of (sigma^{-1} Y)^T dW;
    dividing by the elapsed time gives the gradient part of the weight.
    ``rec_*`` hold the state and integral at the recorded nodes, with the
    node axis second.
    """

    x_end: np.ndarray
    integral_end: np.ndarray
    rec_x: np.ndarray | None = None
    rec_integral: np.ndarray | None = None


def _normals(gen, n, d, antithetic):
    if not antithetic:
        return gen.standard_normal((n, d))
    half = gen.standard_normal((n // 2, d))
    return np.concatenate([half, -half], axis=0)


def propagate(spec, times, x0, gen, record=None, weights=True, antithetic=False,
              counter=None):
    """Simulate X, Y and the weight integral for a batch of paths.

    ``times`` is ``(K+1,)`` for a shared grid or ``(n, K+1)`` for per-path
    grids; ``x0`` is ``(n, d)``.  ``record`` selects stored nodes: ``None``,
    the string ``"all"`` (every node) or an integer array ``(n,)`` with one
    node index per path.
    """
    x = np.array(x0, dtype=float)
    n, d = x.shape
    times = np.asarray(times, dtype=float)
    shared = times.ndim == 1
    K = times.shape[-1] - 1
    dts = np.diff(times, axis=-1)
    coeffs = spec.coeffs
    if counter is not None:
        counter[0] += n * K

    acc = np.zeros((n, d))
    y = None
    lu = None
    if weights and coeffs.constant_sigma:
        sig0 = np.asarray(coeffs.sigma(np.zeros(1), x[:1]), float).reshape(-1, d, d)[0]
        _check_conditioning(sig0, 0)
        lu = lu_factor(sig0)

    rec_all = isinstance(record, str)
    if rec_all:
        rec_x = np.empty((n, K + 1, d))
        rec_i = np.empty((n, K + 1, d))
    elif record is not None:
        record = np.asarray(record)
        rec_x = np.empty((n, 1, d))
        rec_i = np.empty((n, 1, d))

    def store(k):
        if rec_all:
            rec_x[:, k] = x
            rec_i[:, k] = acc
        elif record is not None:
            hit = record == k
            if hit.any():
                rec_x[hit, 0] = x[hit]
                rec_i[hit, 0] = acc[hit]

    store(0)
    for k in range(K):
        s = np.full(n, times[k]) if shared else times[:, k]
        dt = dts[k] if shared else dts[:, k]
        dt_col = dt if shared else dt[:, None]
        dW = _normals(gen, n, d, antithetic) * np.sqrt(dt_col)
        sig = np.broadcast_to(coeffs.sigma(s, x), (n, d, d))
        if weights:
            # (sigma^{-1} Y)^T dW = Y^T v with sigma^T v = dW
            if lu is not None:
                v = lu_solve(lu, dW.T, trans=1).T
            else:
                if not spec.elliptic:
                    _check_conditioning(sig, k)
                v = np.linalg.solve(np.swapaxes(sig, -1, -2), dW[..., None])[..., 0]
            acc += v if y is None else (v[:, None, :] @ y)[:, 0]
            jmu = coeffs.drift_jacobian(s, x)
            step = np.broadcast_to(jmu, (n, d, d)) * (dt if shared else dt[:, None, None])
            if not coeffs.constant_sigma:
                jsig = coeffs.diffusion_jacobian(s, x)
                step = step + (dW[:, None, None, :] @ jsig)[:, :, 0, :]
            if y is None:
                if np.any(step):
                    y = np.eye(d) + step
            else:
                y = y + step @ y
        x = x + coeffs.mu(s, x) * dt_col + (sig @ dW[..., None])[..., 0]
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(acc)):
            bad = int(np.argmin(np.isfinite(x).all(axis=1) & np.isfinite(acc).all(axis=1)))
            raise SimulationBlowup(k + 1, bad)
        store(k + 1)

    out = FlowBatch(x, acc)
    if record is not None:
        out.rec_x, out.rec_integral = rec_x, rec_i
    return out


@dataclass
class WeightedSamples:
    x_end: np.ndarray
    weight_end: np.ndarray


def weighted_samples(spec, grid, x, n_paths, stream, workers=1):
    """Terminal states and terminal weights for paths started at ``x``."""
    from .parallel import chunk_bounds, map_chunks

    x = np.asarray(x, float)
    horizon = grid.t_end - grid.t_start

    def run(i, lo, hi):
        fb = propagate(spec, grid.times, np.broadcast_to(x, (hi - lo, spec.d)),
                       stream.child(i).generator())
        return fb.x_end, fb.integral_end / horizon

    parts = map_chunks(run, chunk_bounds(n_paths), workers)
    return WeightedSamples(np.concatenate([p[0] for p in parts]),
                           np.concatenate([p[1] for p in parts]))


# -- time quadrature ----------------------------------------------------------

@dataclass
class QuadratureNodes:
    """Per-path grids plus the nodes where the running term is evaluated.

    ``index`` is ``"all"`` (left-point rule on nodes 1..K-1) or an integer
    array with one randomized node per path; ``node_weight`` holds the
    matching quadrature weights.
    """

    times: np.ndarray
    index: object
    node_weight: np.ndarray


def quadrature_nodes(t, T, n_steps, quadrature, gen):
    """Build per-path grids on [t_i, T] for the chosen time quadrature.

    ``left-point`` uses the uniform grid and the nodes 1..K-1 with weight dt
    (node 0 is dropped because the weight is undefined at r = t).  The
    randomized rules draw one time r per path, insert it into the uniform
    grid and weight it by the inverse sampling density: ``T - t`` for a
    uniform r and ``pi sqrt((r - t)(T - r))`` for arcsine-distributed r.
    The arcsine density keeps the variance of the gradient part finite.
    """
    t = np.asarray(t, float)
    n = t.shape[0]
    frac = np.linspace(0.0, 1.0, n_steps + 1)
    base = t[:, None] + (T - t)[:, None] * frac
    if quadrature == "left-point":
        return QuadratureNodes(base, "all", np.diff(base, axis=1)[:, 1:])
    u = gen.random(n)
    if quadrature == "randomized-uniform":
        r = t + (T - t) * u
        w = T - t
    elif quadrature == "randomized-arcsine":
        r = t + (T - t) * np.sin(0.5 * np.pi * u) ** 2
        w = np.pi * np.sqrt((r - t) * (T - r))
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}; choose from {QUADRATURES}")
    times = np.sort(np.concatenate([base, r[:, None]], axis=1), axis=1, kind="stable")
    index = np.sum(base < r[:, None], axis=1)
    return QuadratureNodes(times, index, np.asarray(w, float).reshape(n, 1))
