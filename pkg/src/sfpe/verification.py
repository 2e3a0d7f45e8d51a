"""Cross-checks between independent representations of the same solution.

* :func:`pde_residual` plugs a candidate into the PDE with central
  differences.
* :func:`gradient_crosscheck` compares the weighted gradient estimator with
  a finite difference of the value estimator on common random numbers.
* :func:`convergence_study` sweeps one discretization parameter.
* :func:`moment_certificates` tests the discounted Lyapunov moment bound.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonError
from .estimators import Estimate, gradient_samples, value_samples
from .parallel import chunk_bounds, map_chunks
from .picard import PicardConfig, fixed_point_residual, solve
from .problem import (LyapunovVq, check_ellipticity, check_lipschitz_f, check_lyapunov_vq,
                      check_monotonicity, lyapunov_rho_bound, random_direction_probes,
                      random_lipschitz_probes, random_points, random_state_pairs)
from .reports import ResidualReport
from .rng import as_stream
from .sde import TimeGrid
from .weights import propagate

PDE_TOL = 1e-4
FD_REL_STEP = 1e-3


def _value_and_grad(u_eval, t, x):
    out = np.asarray(u_eval(t, x), float)
    if out.ndim == 1:
        return out, None
    return out[:, 0], (out[:, 1:] if out.shape[1] > 1 else None)


def pde_residual(spec, u_eval, probes, fd_steps=None, tol=PDE_TOL, candidate_stderr=None):
    """Finite-difference residual of the PDE at each probe.

    ``u_eval(t, x)`` maps ``(n,)``, ``(n, d)`` to either values ``(n,)`` or
    stacked ``(value, gradient)`` rows ``(n, d+1)``; a supplied gradient is
    used directly.  Time derivatives are central (second-order one-sided
    for probes closer to 0 than the step), second derivatives use the
    three-point rule on the diagonal and the four-point cross stencil off it.
    Default steps are ``h_t = 1e-3 T`` and ``h_x = 1e-3 (1 + |x|)``.  A probe
    passes when ``|residual| <= tol * max(1, |u|)``.

    For Monte-Carlo candidates pass ``candidate_stderr`` (the standard error
    of a single value evaluation).  The residual inherits it amplified by the
    stencil weights; if that exceeds a third of the tolerance the check
    would be vacuous and a ValueError is raised.
    """
    d = spec.d
    h_t_default = FD_REL_STEP * spec.T
    probes = [(float(t), np.asarray(x, float).reshape(d)) for t, x in probes]
    residuals, stderrs, tols = [], [], []
    for t, x in probes:
        h_t, h_x = fd_steps if fd_steps is not None else (h_t_default,
                                                          FD_REL_STEP * (1.0 + np.linalg.norm(x)))
        if t + h_t >= spec.T:
            raise HorizonError(f"probe t={t} is within the time step {h_t} of T={spec.T}")
        if t < 0:
            raise HorizonError(f"probe time {t} is negative")
        central = t - h_t >= 0
        offsets = [(-1, 0), (1, 0)] if central else [(0, 0), (1, 0), (2, 0)]
        pts_t = [t + k * h_t for k, _ in offsets]
        pts_x = [x] * len(offsets)
        eye = np.eye(d) * h_x
        for i in range(d):
            pts_t += [t, t]
            pts_x += [x + eye[i], x - eye[i]]
            for j in range(i + 1, d):
                pts_t += [t] * 4
                pts_x += [x + eye[i] + eye[j], x + eye[i] - eye[j],
                          x - eye[i] + eye[j], x - eye[i] - eye[j]]
        pts_t.append(t)
        pts_x.append(x)
        vals, _ = _value_and_grad(u_eval, np.array(pts_t), np.array(pts_x))
        u0, grad0 = _value_and_grad(u_eval, np.array([t]), x[None])
        u0 = float(u0[0])
        if central:
            dt_u = (vals[1] - vals[0]) / (2 * h_t)
            amp = 2.0 / (2 * h_t)
            pos = 2
        else:
            dt_u = (-3 * u0 + 4 * vals[1] - vals[2]) / (2 * h_t)
            amp = 8.0 / (2 * h_t)
            pos = 3
        hess = np.empty((d, d))
        grad_fd = np.empty(d)
        for i in range(d):
            up, dn = vals[pos], vals[pos + 1]
            pos += 2
            hess[i, i] = (up - 2 * u0 + dn) / h_x ** 2
            grad_fd[i] = (up - dn) / (2 * h_x)
            for j in range(i + 1, d):
                pp, pm, mp, mm = vals[pos:pos + 4]
                pos += 4
                hess[i, j] = hess[j, i] = (pp - pm - mp + mm) / (4 * h_x ** 2)
        grad = grad0[0] if grad0 is not None else grad_fd
        tv = np.array([t])
        mu = np.asarray(spec.coeffs.mu(tv, x[None]), float)[0]
        sig = np.broadcast_to(np.asarray(spec.coeffs.sigma(tv, x[None]), float), (1, d, d))[0]
        a = sig @ sig.T
        f = float(np.asarray(spec.f(tv, x[None], np.array([u0]), grad[None]), float)[0])
        residuals.append(dt_u + mu @ grad + 0.5 * np.sum(a * hess) + f)
        tol_i = tol * max(1.0, abs(u0))
        tols.append(tol_i)
        if candidate_stderr is None:
            stderrs.append(0.0)
        else:
            amp += (np.sum(np.abs(a)) * 4.0 + np.sum(np.abs(mu))) / h_x ** 2
            se = amp * float(candidate_stderr)
            if not 3.0 * se < tol_i:
                raise ValueError(
                    f"candidate stderr {candidate_stderr:.3g} makes the residual check vacuous "
                    f"(propagated {se:.3g} vs tolerance {tol_i:.3g})")
            stderrs.append(se)
    return ResidualReport(tuple(probes), np.array(residuals)[:, None],
                          np.array(stderrs)[:, None], np.array(tols)[:, None], label="pde")


@dataclass(frozen=True)
class CrosscheckReport:
    t: float
    x: np.ndarray
    bel: np.ndarray
    bel_stderr: np.ndarray
    fd: np.ndarray
    fd_stderr: np.ndarray
    gap_stderr: np.ndarray
    scale: float
    rel_tol: float = 0.02

    @property
    def gap(self):
        return np.abs(self.bel - self.fd)

    @property
    def tolerance(self):
        return np.maximum(3.0 * self.gap_stderr, self.rel_tol * self.scale)

    @property
    def passed(self):
        return bool(np.all(self.gap <= self.tolerance))

    CSV_COLUMNS = ("check", "t", "x", "component", "bel", "fd", "gap", "gap_stderr",
                   "tolerance", "pass")

    def csv_rows(self):
        for k in range(self.bel.size):
            yield ("gradient_crosscheck", self.t, self.x, k + 1, self.bel[k], self.fd[k],
                   self.gap[k], self.gap_stderr[k], self.tolerance[k], self.passed)


def gradient_crosscheck(spec, t, x, n_paths=50_000, grid=None, rng=0, h=1e-2, payoff=None,
                        oracle=None, rel_tol=0.02, workers=1):
    """Weighted gradient of x -> E[payoff(X_T)] versus central differences.

    Both sides use the same Brownian increments, so the paired difference
    has a small standard error.  ``oracle`` (a gradient vector) sets the
    relative tolerance scale; without it the finite-difference norm is used.
    """
    x = np.asarray(x, float).reshape(spec.d)
    kw = dict(n_paths=n_paths, grid=grid, rng=rng, workers=workers)
    bel = gradient_samples(spec, t, x, payoff, **kw)
    fd = np.empty_like(bel)
    for k in range(spec.d):
        e = np.zeros(spec.d)
        e[k] = h
        up = value_samples(spec, t, x + e, terminal=payoff, **kw)
        dn = value_samples(spec, t, x - e, terminal=payoff, **kw)
        fd[:, k] = (up - dn) / (2 * h)
    b, f, g = Estimate.from_samples(bel), Estimate.from_samples(fd), Estimate.from_samples(bel - fd)
    scale = float(np.linalg.norm(oracle if oracle is not None else f.mean))
    return CrosscheckReport(float(t), x, b.mean, b.stderr, f.mean, f.stderr, g.stderr, scale,
                            rel_tol)


# -- convergence studies ------------------------------------------------------

AXES = ("n_paths", "grid_steps", "depth")


@dataclass(frozen=True)
class ConvergenceRow:
    axis: str
    value: int
    estimate: np.ndarray
    stderr: np.ndarray
    error: np.ndarray | None
    cost: int
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple

    CSV_COLUMNS = ("axis", "value", "component", "estimate", "stderr", "abs_error", "cost")

    def csv_rows(self):
        for r in self.rows:
            for k in range(r.estimate.size):
                err = "" if r.error is None else abs(r.error[k])
                yield (r.axis, r.value, k, r.estimate[k], r.stderr[k], err, r.cost)

    def column(self, name, component=0):
        vals = [getattr(r, name) for r in self.rows]
        if name in ("estimate", "stderr", "error"):
            return np.array([np.abs(v[component]) if name == "error" else v[component]
                             for v in vals])
        return np.array(vals)

    def slope(self, name="stderr", component=0):
        """Least-squares slope of log(name) against log(value)."""
        return loglog_slope(self.column("value"), self.column(name, component))


def loglog_slope(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if xs.size < 2 or np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log slope needs at least two positive points")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def convergence_study(spec, t, x, axis, values, rng=0, base=None, oracle=None, workers=1):
    """Re-run the solver for each value along one parameter axis.

    ``base`` is the :class:`PicardConfig` whose other parameters are held
    fixed (default: depth 1, 10^4 paths, 20 steps).  For ``n_paths`` the
    outermost sample count is varied.  ``oracle(t, x)`` defaults to the
    problem's closed-form solution.
    """
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; choose from {AXES}")
    values = [int(v) for v in values]
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("values must be strictly increasing")
    base = base or PicardConfig(1, (10_000,), 20)
    x = np.asarray(x, float).reshape(spec.d)
    oracle = spec.solution if oracle is None else oracle
    exact = None if oracle is None else np.asarray(oracle(np.array([t]), x[None]), float)[0]
    rows = []
    for v in values:
        m = list(base.samples_per_level)
        if axis == "n_paths":
            m[base.depth - 1] = v
            cfg = PicardConfig(base.depth, tuple(m), base.grid_steps, base.quadrature,
                               base.scheme, base.budget)
        elif axis == "grid_steps":
            cfg = PicardConfig(base.depth, tuple(m), v, base.quadrature, base.scheme,
                               base.budget)
        else:
            m = (m + [m[-1]] * v)[:v] if len(m) < v else m[-v:] if base.scheme == "multilevel" \
                else m[:v]
            cfg = PicardConfig(v, tuple(m), base.grid_steps, base.quadrature, base.scheme,
                               base.budget)
        start = time.perf_counter()
        res = solve(spec, t, x, cfg, rng, workers)
        err = None if exact is None else res.vg - exact
        rows.append(ConvergenceRow(axis, v, res.vg, res.stderr, err, res.cost,
                                   time.perf_counter() - start))
    return ConvergenceTable(tuple(rows))


# -- Lyapunov moments ---------------------------------------------------------

@dataclass(frozen=True)
class MomentCertificate:
    t: float
    s: float
    rho: float
    q: float
    mean: float
    stderr: float
    bound: float

    @property
    def passed(self):
        rel = self.stderr / self.mean if self.mean > 0 else 0.0
        return bool(self.mean <= self.bound * (1.0 + 3.0 * rel))

    CSV_COLUMNS = ("check", "t", "s", "q", "rho", "mean", "stderr", "bound", "pass")

    def csv_row(self):
        return ("moment_certificate", self.t, self.s, self.q, self.rho, self.mean,
                self.stderr, self.bound, self.passed)


def moment_certificates(spec, vq, rho, t, x, horizons, n_paths=20_000, rng=0, n_steps=100,
                        workers=1):
    """Check E[exp(-rho (s-t)) V_q(X_s)] <= V_q(x) for each s in ``horizons``.

    The certificate is meaningful when ``rho`` is admissible for ``V_q``
    (see :func:`~sfpe.problem.check_lyapunov_vq`); a too-small rate is the
    natural negative control.
    """
    vq = vq if isinstance(vq, LyapunovVq) else LyapunovVq(float(vq))
    x = np.asarray(x, float).reshape(spec.d)
    stream = as_stream(rng)
    bound = float(vq.value(x[None])[0])
    out = []
    for h, s in enumerate(horizons):
        if not t < s <= spec.T:
            raise HorizonError(f"horizon s={s} must lie in (t, T] = ({t}, {spec.T}]")
        times = TimeGrid.uniform(t, s, n_steps).times
        sub = stream.child(h)

        def run(i, lo, hi):
            fb = propagate(spec, times, np.broadcast_to(x, (hi - lo, spec.d)),
                           sub.child(i).generator(), weights=False)
            return vq.value(fb.x_end)

        vals = math.exp(-rho * (s - t)) * np.concatenate(
            map_chunks(run, chunk_bounds(n_paths), workers))
        est = Estimate.from_samples(vals)
        out.append(MomentCertificate(float(t), float(s), float(rho), vq.q, float(est.mean),
                                     float(est.stderr), bound))
    return out


# -- full suite ---------------------------------------------------------------

def default_probes(spec, n=5, seed=0):
    """Probe points inside the domain of the problem.

    Times lie in [0, 0.8 T]; states are drawn from [-1, 1]^d, shifted to
    [0.5, 1.5] for the geometric Brownian motion preset whose state stays
    positive.
    """
    gen = np.random.default_rng(seed)
    ts = gen.uniform(0.1, 0.8, n) * spec.T
    xs = gen.uniform(-1.0, 1.0, (n, spec.d))
    if spec.name == "gbm-1d":
        xs = 1.0 + 0.5 * xs
    return [(float(a), b) for a, b in zip(ts, xs)]


@dataclass
class SuiteResult:
    rows: list
    passed: bool


def verification_suite(spec, rng=0, n_paths=50_000, n_probes=5, q=2.0, workers=1):
    """Run every applicable check on ``spec`` and collect CSV rows.

    Rows follow :data:`SUITE_COLUMNS`: check name, probe description,
    statistic, threshold and pass flag.
    """
    stream = as_stream(rng)
    rows = []

    def add(name, where, stat, thr, ok):
        rows.append((name, where, float(stat), float(thr), bool(ok)))

    d, T = spec.d, spec.T
    for rep in (check_monotonicity(spec.coeffs, spec.c, random_state_pairs(d, T, 64)),
                check_lipschitz_f(spec, random_lipschitz_probes(d, T, 64))):
        add(rep.name, f"{rep.n_probes} probes", rep.statistic, rep.threshold, rep.passed)
    if spec.elliptic:
        rep = check_ellipticity(spec.coeffs, spec.alpha, random_direction_probes(d, T, 64))
        add(rep.name, f"{rep.n_probes} probes", rep.statistic, rep.threshold, rep.passed)
    vq = LyapunovVq(q)
    rho = lyapunov_rho_bound(spec, q)
    pts = random_points(d, T, 64)
    if spec.name == "gbm-1d":
        pts = [(s, np.abs(y) + 0.1) for s, y in pts]
    rep = check_lyapunov_vq(spec, vq, rho, pts)
    add(rep.name, f"{rep.n_probes} probes", rep.statistic, rep.threshold, rep.passed)

    probes = default_probes(spec, n_probes)
    if spec.solution is not None:
        rep = pde_residual(spec, spec.solution, probes)
        for (t, x), r, tol, ok in zip(probes, rep.residuals[:, 0], rep.tolerance[:, 0],
                                      rep.passed):
            add("pde_residual", _where(t, x), abs(r), tol, ok)
    t0, x0 = probes[0]
    exact = None
    if spec.solution is not None and _is_linear(spec):
        exact = np.asarray(spec.solution(np.array([t0]), x0[None]), float)[0, 1:]
    cc = gradient_crosscheck(spec, t0, x0, n_paths, rng=stream.child(1), oracle=exact,
                             workers=workers)
    for k in range(d):
        add("gradient_crosscheck", _where(t0, x0) + f" component {k + 1}", cc.gap[k],
            cc.tolerance[k], cc.gap[k] <= cc.tolerance[k])
    horizons = [t0 + (T - t0) * f for f in (0.25, 0.5, 1.0)]
    for cert in moment_certificates(spec, vq, rho, t0, x0, horizons, n_paths // 2,
                                    stream.child(2), workers=workers):
        add("moment_certificate", f"s={cert.s!r}", cert.mean, cert.bound, cert.passed)
    if spec.solution is not None:
        rep = fixed_point_residual(spec, spec.solution, probes[:2], n_paths=n_paths // 2,
                                   rng=stream.child(3), workers=workers)
        for i, (t, x) in enumerate(rep.probes):
            stat = float(np.max(np.abs(rep.residuals[i]) - 3 * rep.stderrs[i]))
            add("fixed_point_residual", _where(t, x), stat, float(np.min(rep.tolerance[i])),
                rep.passed[i])
    return SuiteResult(rows, all(r[-1] for r in rows))


SUITE_COLUMNS = ("check", "where", "statistic", "threshold", "pass")


def _where(t, x):
    return f"t={t!r} x=" + " ".join(repr(float(v)) for v in np.atleast_1d(x))


def _is_linear(spec):
    """True when f vanishes identically on a few probes (pure Feynman-Kac)."""
    d = spec.d
    gen = np.random.default_rng(0)
    t = gen.uniform(0, spec.T, 8)
    x = gen.normal(size=(8, d))
    vals = np.asarray(spec.f(t, x, gen.normal(size=8), gen.normal(size=(8, d))), float)
    return bool(np.all(vals == 0))
