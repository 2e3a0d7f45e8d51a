"""Problem instances for semilinear Kolmogorov PDEs and checks of their
structural hypotheses.

Array conventions used throughout the package: a state batch ``x`` has shape
``(n, d)``, times ``s`` are scalars or arrays of shape ``(n,)``.  Coefficient
callables return ``mu -> (n, d)``, ``sigma -> (n, d, d)``,
``jac_mu -> (n, d, d)`` with ``[.., i, k] = d mu_i / d x_k`` and
``jac_sigma -> (n, d, d, d)`` with ``[.., i, l, k] = d sigma_il / d x_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError

_EPS = np.finfo(float).eps


def _fd_step(x):
    return math.sqrt(_EPS) * (1.0 + np.linalg.norm(x, axis=-1))


def fd_jacobian(fun, s, x):
    """Central-difference Jacobian of ``fun(s, x)`` with respect to ``x``.

    The derivative direction is appended as the last axis of the result.
    """
    x = np.asarray(x, dtype=float)
    h = _fd_step(x)
    cols = []
    for k in range(x.shape[-1]):
        step = np.zeros_like(x)
        step[..., k] = h
        diff = np.asarray(fun(s, x + step), float) - np.asarray(fun(s, x - step), float)
        hb = h.reshape(h.shape + (1,) * (diff.ndim - h.ndim))
        cols.append(diff / (2.0 * hb))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class CoefficientField:
    """Drift and diffusion with their spatial derivatives.

    ``constant_sigma`` declares that ``sigma`` depends on neither time nor
    state; the simulators then factor it once and skip the diffusion
    Jacobian.  Missing Jacobians are a configuration error unless
    ``fd_fallback`` is set, in which case central differences are used.
    """

    mu: Callable
    sigma: Callable
    jac_mu: Optional[Callable] = None
    jac_sigma: Optional[Callable] = None
    constant_sigma: bool = False
    fd_fallback: bool = False

    def drift_jacobian(self, s, x):
        if self.jac_mu is not None:
            return self.jac_mu(s, x)
        if self.fd_fallback:
            return fd_jacobian(self.mu, s, x)
        raise ConfigurationError("drift Jacobian not supplied and fd_fallback is off")

    def diffusion_jacobian(self, s, x):
        if self.constant_sigma:
            x = np.asarray(x, dtype=float)
            d = x.shape[-1]
            return np.zeros(x.shape[:-1] + (d, d, d))
        if self.jac_sigma is not None:
            return self.jac_sigma(s, x)
        if self.fd_fallback:
            return fd_jacobian(self.sigma, s, x)
        raise ConfigurationError("diffusion Jacobian not supplied and fd_fallback is off")

    def jac_sigma_cols(self, s, x, j):
        """d sigma / d x_j as a (..., d, d) matrix."""
        return self.diffusion_jacobian(s, x)[..., j]

    @property
    def has_jacobians(self):
        return self.fd_fallback or (
            self.jac_mu is not None and (self.constant_sigma or self.jac_sigma is not None))

    def validate_jacobians(self, d, T, n_probes=16, seed=0, rtol=1e-5):
        """Compare supplied Jacobians with central differences at random probes."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-3.0, 3.0, size=(n_probes, d))
        s = rng.uniform(0.0, T, size=n_probes)
        pairs = []
        if self.jac_mu is not None:
            pairs.append(("jac_mu", self.jac_mu(s, x), fd_jacobian(self.mu, s, x)))
        if self.jac_sigma is not None and not self.constant_sigma:
            pairs.append(("jac_sigma", self.jac_sigma(s, x), fd_jacobian(self.sigma, s, x)))
        for name, exact, approx in pairs:
            exact = np.broadcast_to(exact, approx.shape)
            if not np.all(np.abs(exact - approx) <= rtol * (1.0 + np.abs(exact))):
                worst = float(np.max(np.abs(exact - approx)))
                raise ConfigurationError(
                    f"{name} disagrees with finite differences (max gap {worst:.3e})")
        if self.constant_sigma:
            sig = np.asarray(self.sigma(s, x), dtype=float)
            if not np.allclose(sig, sig[:1]):
                raise ConfigurationError("constant_sigma declared but sigma varies")


@dataclass(frozen=True)
class ProblemSpec:
    """A semilinear Kolmogorov problem on [0, T] x R^d.

    ``c`` is the one-sided monotonicity constant of (mu, sigma), ``alpha`` the
    ellipticity constant (0 marks a degenerate diffusion that is only used
    for flow-derivative experiments), ``lipschitz_L`` the Lipschitz constant
    of ``f`` in (a, w) and ``growth_p`` the polynomial growth exponent of
    ``g`` and ``f(., ., 0, 0)``.  ``growth_c`` bounds ``<x, mu>`` and
    ``|sigma|_F^2`` by ``growth_c (1 + |x|^2)``; it defaults to ``c``.
    """

    d: int
    T: float
    coeffs: CoefficientField
    f: Callable
    g: Callable
    c: float
    alpha: float
    lipschitz_L: float
    growth_p: float
    growth_c: Optional[float] = None
    name: str = "custom"
    solution: Optional[Callable] = field(default=None, compare=False)
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigurationError(f"d must be a positive integer, got {self.d}")
        if not self.T > 0:
            raise ConfigurationError(f"T must be positive, got {self.T}")
        if self.c < 0:
            raise ConfigurationError(f"c must be non-negative, got {self.c}")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be non-negative, got {self.alpha}")
        if not self.lipschitz_L > 0:
            raise ConfigurationError(f"lipschitz_L must be positive, got {self.lipschitz_L}")
        if not self.growth_p > 0:
            raise ConfigurationError(f"growth_p must be positive, got {self.growth_p}")
        if self.growth_c is not None and self.growth_c < 0:
            raise ConfigurationError("growth_c must be non-negative")
        if self.validate:
            self.coeffs.validate_jacobians(self.d, self.T)

    @property
    def elliptic(self):
        return self.alpha > 0

    @property
    def lyapunov_c(self):
        """Constant that covers both the monotonicity and the growth bounds."""
        return max(self.c, self.c if self.growth_c is None else self.growth_c)

    def nonlinearity_at_zero(self, t, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        return self.f(np.broadcast_to(t, (n,)), x, np.zeros(n), np.zeros_like(x))


@dataclass(frozen=True)
class LyapunovVq:
    """V_q(x) = (1 + |x|^2)^(q/2) with closed-form derivatives."""

    q: float

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError(f"q must be positive, got {self.q}")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return (1.0 + np.sum(x * x, axis=-1)) ** (self.q / 2.0)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return self.q * x * (1.0 + r2) ** (self.q / 2.0 - 1.0)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        r2 = np.sum(x * x, axis=-1)[..., None, None]
        v = self.value(x)[..., None, None]
        outer = x[..., :, None] * x[..., None, :]
        return self.q * v * (np.eye(d) / (1.0 + r2) + (self.q - 2.0) * outer / (1.0 + r2) ** 2)


@dataclass
class ConditionReport:
    """Outcome of a probe-based check of one structural hypothesis."""

    name: str
    passed: bool
    statistic: float
    threshold: float
    n_probes: int
    worst_index: int
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return bool(self.passed)


def _slack(threshold, tol):
    return tol * max(1.0, abs(threshold))


def _stack_probes(probes, arity):
    if probes is None or len(probes) == 0:
        raise ValueError("probe list is empty")
    cols = list(zip(*probes))
    if len(cols) != arity:
        raise ValueError(f"each probe must have {arity} entries")
    out = []
    for col in cols:
        arr = np.asarray(col, dtype=float)
        out.append(arr)
    return out


def _as_states(arr):
    arr = np.asarray(arr, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def check_monotonicity(coeffs, c, probes, tol=1e-8):
    """Probe the one-sided Lipschitz bound on (mu, sigma).

    ``probes`` is a sequence of ``(s, x, y)``.  Both
    ``<x - y, mu(s,x) - mu(s,y)> / |x - y|^2`` and
    ``|sigma(s,x) - sigma(s,y)|_F^2 / (2 |x - y|^2)`` must stay below c/2.
    """
    s, x, y = _stack_probes(probes, 3)
    x, y = _as_states(x), _as_states(y)
    dist2 = np.sum((x - y) ** 2, axis=-1)
    if np.any(dist2 == 0.0):
        raise ValueError("monotonicity probe with coincident points x == y")
    drift_q = np.sum((x - y) * (coeffs.mu(s, x) - coeffs.mu(s, y)), axis=-1) / dist2
    dsig = np.asarray(coeffs.sigma(s, x), float) - np.asarray(coeffs.sigma(s, y), float)
    diff_q = 0.5 * np.sum(dsig ** 2, axis=(-2, -1)) / dist2
    worst = np.maximum(drift_q, diff_q)
    i = int(np.argmax(worst))
    threshold = 0.5 * c
    return ConditionReport(
        "monotonicity", bool(worst[i] <= threshold + _slack(threshold, tol)),
        float(worst[i]), threshold, len(dist2), i,
        {"drift_quotient": float(np.max(drift_q)), "diffusion_quotient": float(np.max(diff_q))})


def check_ellipticity(coeffs, alpha, probes, tol=1e-8):
    """Probe ``v* sigma sigma* v >= alpha |v|^2`` at ``(s, x, v)`` triples."""
    s, x, v = _stack_probes(probes, 3)
    x, v = _as_states(x), _as_states(v)
    vv = np.sum(v * v, axis=-1)
    if np.any(vv == 0.0):
        raise ValueError("ellipticity probe with zero test vector")
    sig = np.broadcast_to(np.asarray(coeffs.sigma(s, x), float), x.shape + (x.shape[-1],))
    sv = np.einsum("nji,nj->ni", sig, v)
    quotient = np.sum(sv * sv, axis=-1) / vv
    i = int(np.argmin(quotient))
    return ConditionReport(
        "ellipticity", bool(quotient[i] >= alpha - _slack(alpha, tol)),
        float(quotient[i]), float(alpha), len(vv), i)


def check_lipschitz_f(spec, probes, tol=1e-8):
    """Probe the Lipschitz bound of f in (a, w).

    ``probes`` holds ``(t, x, a1, w1, a2, w2)`` tuples.
    """
    t, x, a1, w1, a2, w2 = _stack_probes(probes, 6)
    x, w1, w2 = _as_states(x), _as_states(w1), _as_states(w2)
    gap = np.sqrt((a1 - a2) ** 2 + np.sum((w1 - w2) ** 2, axis=-1))
    if np.any(gap == 0.0):
        raise ValueError("Lipschitz probe pairs identical (a, w) values")
    quotient = np.abs(spec.f(t, x, a1, w1) - spec.f(t, x, a2, w2)) / gap
    i = int(np.argmax(quotient))
    L = spec.lipschitz_L
    return ConditionReport(
        "lipschitz_f", bool(quotient[i] <= L + _slack(L, tol)), float(quotient[i]), L,
        len(gap), i)


def lyapunov_generator_terms(spec, vq, t, x):
    """The two left-hand sides of the V_q inequalities, divided by V_q.

    Returns ``(with_gradient_square, with_lipschitz)``: the generator plus
    ``|grad V^T sigma|^2 / (2 V)`` and the generator plus ``L |grad V|``.
    """
    x = _as_states(x)
    n, d = x.shape
    t = np.broadcast_to(np.asarray(t, float), (n,))
    v = vq.value(x)
    if np.any(v <= 0.0):
        raise ArithmeticError("V_q evaluated non-positive")
    grad = vq.gradient(x)
    hess = vq.hessian(x)
    mu = np.asarray(spec.coeffs.mu(t, x), float)
    sig = np.broadcast_to(np.asarray(spec.coeffs.sigma(t, x), float), (n, d, d))
    a = np.einsum("nij,nkj->nik", sig, sig)
    generator = np.sum(mu * grad, axis=-1) + 0.5 * np.einsum("nij,nji->n", a, hess)
    gs = np.einsum("ni,nij->nj", grad, sig)
    quad = 0.5 * np.sum(gs * gs, axis=-1) / v
    lip = spec.lipschitz_L * np.linalg.norm(grad, axis=-1)
    return (generator + quad) / v, (generator + lip) / v


def check_lyapunov_vq(spec, vq, rho, probes, tol=1e-8):
    """Check both V_q generator inequalities with growth rate ``rho``.

    ``probes`` is a sequence of ``(t, x)``.  The report's ``details`` carry
    the smallest rho admissible on these probes.
    """
    t, x = _stack_probes(probes, 2)
    first, second = lyapunov_generator_terms(spec, vq, t, x)
    worst = np.maximum(first, second)
    i = int(np.argmax(worst))
    implied = float(max(np.max(worst), 0.0))
    return ConditionReport(
        "lyapunov_vq", bool(worst[i] <= rho + _slack(rho, tol)), float(worst[i]), float(rho),
        len(worst), i, {"implied_rho": implied, "q": vq.q})


def lyapunov_rho_bound(spec, q):
    """Admissible rate c q max(q+1, 3) + L q for V_q under linear growth."""
    return spec.lyapunov_c * q * max(q + 1.0, 3.0) + spec.lipschitz_L * q


# -- probe generators ---------------------------------------------------------

def random_state_pairs(d, T, n, seed=0, radius=5.0):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, T, n)
    x = rng.uniform(-radius, radius, (n, d))
    y = x + rng.normal(0.0, 1.0, (n, d)) * rng.choice([1e-3, 1e-1, 1.0, 3.0], size=(n, 1))
    return list(zip(s, x, y))


def random_direction_probes(d, T, n, seed=0, radius=5.0):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, T, n)
    x = rng.uniform(-radius, radius, (n, d))
    v = rng.normal(size=(n, d))
    return list(zip(s, x, v))


def random_lipschitz_probes(d, T, n, seed=0, radius=5.0):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, T, n)
    x = rng.uniform(-radius, radius, (n, d))
    a1, a2 = rng.normal(0, 2, n), rng.normal(0, 2, n)
    w1, w2 = rng.normal(0, 2, (n, d)), rng.normal(0, 2, (n, d))
    return list(zip(t, x, a1, w1, a2, w2))


def random_points(d, T, n, seed=0, radius=10.0):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, T, n)
    direction = rng.normal(size=(n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    x = direction * radius * rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / d)
    return list(zip(t, x))


# -- manufactured solutions ---------------------------------------------------

@dataclass(frozen=True)
class ManufacturedSolution:
    """u(t, x) = A exp(-k (T - t)) / (1 + |x|^2) with exact derivatives.

    Calling the object returns the stacked pair ``(u, grad u)`` with shape
    ``(n, d + 1)``.
    """

    T: float
    amplitude: float = 1.0
    decay: float = 1.0

    def _time_factor(self, t):
        return self.amplitude * np.exp(-self.decay * (self.T - np.asarray(t, float)))

    def value(self, t, x):
        x = _as_states(x)
        return self._time_factor(t) / (1.0 + np.sum(x * x, axis=-1))

    def gradient(self, t, x):
        x = _as_states(x)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return -2.0 * x * np.asarray(self._time_factor(t))[..., None] / (1.0 + r2) ** 2

    def hessian(self, t, x):
        x = _as_states(x)
        d = x.shape[-1]
        r2 = np.sum(x * x, axis=-1)[..., None, None]
        e = np.asarray(self._time_factor(t))[..., None, None]
        outer = x[..., :, None] * x[..., None, :]
        return e * (-2.0 * np.eye(d) / (1.0 + r2) ** 2 + 8.0 * outer / (1.0 + r2) ** 3)

    def time_derivative(self, t, x):
        return self.decay * self.value(t, x)

    def __call__(self, t, x):
        x = _as_states(x)
        t = np.broadcast_to(np.asarray(t, float), x.shape[:-1])
        return np.concatenate([self.value(t, x)[..., None], self.gradient(t, x)], axis=-1)


def _generator_applied(coeffs, t, x, grad, hess):
    n, d = x.shape
    mu = np.asarray(coeffs.mu(t, x), float)
    sig = np.broadcast_to(np.asarray(coeffs.sigma(t, x), float), (n, d, d))
    a = np.einsum("nij,nkj->nik", sig, sig)
    return np.sum(mu * grad, axis=-1) + 0.5 * np.einsum("nij,nji->n", a, hess)


def exact_pde_residual(spec, solution, t, x):
    """PDE residual of a ManufacturedSolution, using its exact derivatives."""
    x = _as_states(x)
    t = np.broadcast_to(np.asarray(t, float), x.shape[:-1])
    u = solution.value(t, x)
    grad = solution.gradient(t, x)
    lin = solution.time_derivative(t, x) + _generator_applied(
        spec.coeffs, t, x, grad, solution.hessian(t, x))
    return lin + spec.f(t, x, u, grad)


def default_manufactured_coeffs():
    """Bounded perturbation of an OU drift with a state-dependent diagonal
    diffusion: mu(x) = -x/2 + sin(x)/4, sigma(x) = diag(1 + tanh(x)/10)."""

    def mu(s, x):
        return -0.5 * x + 0.25 * np.sin(x)

    def jac_mu(s, x):
        return np.einsum("...i,ij->...ij", -0.5 + 0.25 * np.cos(x), np.eye(x.shape[-1]))

    def sigma(s, x):
        return np.einsum("...i,ij->...ij", 1.0 + 0.1 * np.tanh(x), np.eye(x.shape[-1]))

    def jac_sigma(s, x):
        d = x.shape[-1]
        diag = 0.1 / np.cosh(x) ** 2
        out = np.zeros(x.shape[:-1] + (d, d, d))
        idx = np.arange(d)
        out[..., idx, idx, idx] = diag
        return out

    return CoefficientField(mu=mu, sigma=sigma, jac_mu=jac_mu, jac_sigma=jac_sigma)


def manufactured_problem(d, T=0.5, lam=0.5, kappa=None, coeffs=None, amplitude=1.0,
                         decay=1.0, constants=None, name=None):
    """Build a problem whose solution is a known closed form.

    The nonlinearity is ``f(t,x,a,w) = s0(t,x) + lam a + <kappa, w>`` where the
    source ``s0`` is chosen so that :class:`ManufacturedSolution` solves the
    PDE exactly.  With the default coefficients the declared constants are
    exact bounds; when custom ``coeffs`` are passed, ``constants`` (a dict
    with ``c``, ``alpha`` and optionally ``growth_c``) must be given.

    Returns ``(spec, solution)``.
    """
    kappa = np.zeros(d) if kappa is None else np.asarray(kappa, dtype=float).reshape(d)
    sol = ManufacturedSolution(T=T, amplitude=amplitude, decay=decay)
    if coeffs is None:
        coeffs = default_manufactured_coeffs()
        consts = {"c": 0.01, "alpha": 0.81, "growth_c": 1.21 * d}
    else:
        if constants is None:
            raise ConfigurationError("custom coefficients need declared constants")
        consts = dict(constants)

    def source(t, x):
        u = sol.value(t, x)
        grad = sol.gradient(t, x)
        lin = sol.time_derivative(t, x) + _generator_applied(
            coeffs, t, x, grad, sol.hessian(t, x))
        return -lin - lam * u - grad @ kappa

    def f(t, x, a, w):
        return source(t, x) + lam * np.asarray(a, float) + np.asarray(w, float) @ kappa

    def g(x):
        return sol.value(T, x)

    L = float(np.hypot(lam, np.linalg.norm(kappa)))
    spec = ProblemSpec(
        d=d, T=T, coeffs=coeffs, f=f, g=g, c=consts["c"], alpha=consts["alpha"],
        lipschitz_L=L if L > 0 else 1.0, growth_p=1.0, growth_c=consts.get("growth_c"),
        name=name or f"manufactured-d{d}", solution=sol)
    return spec, sol
