"""Named problem instances with closed-form solutions."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError
from .problem import CoefficientField, ProblemSpec, manufactured_problem

PRESET_NAMES = ("heat", "brownian", "ou-linear", "gbm-1d",
                "manufactured-d1", "manufactured-d2", "manufactured-d5", "manufactured-d10")


def _zero_f(t, x, a, w):
    return np.zeros(np.shape(x)[:-1])


def _gaussian_g(x):
    x = np.asarray(x, float)
    return np.exp(-0.5 * np.sum(x * x, axis=-1))


def constant_coeffs(d, drift_rate=0.0, scale=1.0):
    """mu(x) = drift_rate * x and sigma = scale * I."""
    S = scale * np.eye(d)
    A = drift_rate * np.eye(d)

    def mu(s, x):
        return drift_rate * np.asarray(x, float)

    def jac_mu(s, x):
        return np.broadcast_to(A, np.shape(x)[:-1] + (d, d))

    def sigma(s, x):
        return np.broadcast_to(S, np.shape(x)[:-1] + (d, d))

    return CoefficientField(mu=mu, sigma=sigma, jac_mu=jac_mu, constant_sigma=True)


@dataclass(frozen=True)
class GaussianSolution:
    """E[exp(-|X_T|^2 / 2)] for X_T ~ N(m x, v I) with m, v functions of T - t.

    ``rate`` is the linear drift coefficient (mu = rate * x) and ``variance``
    the diffusion variance per unit time.
    """

    T: float
    rate: float = 0.0
    variance: float = 1.0

    def _moments(self, tau):
        if self.rate == 0.0:
            return np.ones_like(tau), self.variance * tau
        m = np.exp(self.rate * tau)
        return m, self.variance * np.expm1(2.0 * self.rate * tau) / (2.0 * self.rate)

    def __call__(self, t, x):
        x = np.atleast_2d(np.asarray(x, float))
        tau = self.T - np.broadcast_to(np.asarray(t, float), x.shape[:-1])
        m, v = self._moments(tau)
        mean = m[..., None] * x
        d = x.shape[-1]
        u = (1.0 + v) ** (-0.5 * d) * np.exp(-0.5 * np.sum(mean * mean, axis=-1) / (1.0 + v))
        grad = -(m / (1.0 + v) * u)[..., None] * mean
        return np.concatenate([u[..., None], grad], axis=-1)


@dataclass(frozen=True)
class BlackScholesCall:
    T: float
    rate: float
    vol: float
    strike: float = 1.0

    def __call__(self, t, x):
        x = np.atleast_2d(np.asarray(x, float))
        s = x[..., 0]
        tau = self.T - np.broadcast_to(np.asarray(t, float), s.shape)
        sq = self.vol * np.sqrt(tau)
        d1 = (np.log(s / self.strike) + (self.rate + 0.5 * self.vol ** 2) * tau) / sq
        d2 = d1 - sq
        u = s * ndtr(d1) - self.strike * np.exp(-self.rate * tau) * ndtr(d2)
        return np.stack([u, ndtr(d1)], axis=-1)


def heat(d=2, T=1.0):
    """mu = 0, sigma = sqrt(2) I, g(x) = exp(-|x|^2/2), f = 0."""
    return ProblemSpec(
        d=d, T=T, coeffs=constant_coeffs(d, 0.0, np.sqrt(2.0)), f=_zero_f, g=_gaussian_g,
        c=0.0, alpha=2.0, lipschitz_L=1.0, growth_p=1.0, growth_c=2.0 * d, name="heat",
        solution=GaussianSolution(T, 0.0, 2.0))


def brownian(d=2, T=1.0):
    """mu = 0, sigma = I, Gaussian terminal condition, f = 0."""
    return ProblemSpec(
        d=d, T=T, coeffs=constant_coeffs(d, 0.0, 1.0), f=_zero_f, g=_gaussian_g,
        c=0.0, alpha=1.0, lipschitz_L=1.0, growth_p=1.0, growth_c=float(d), name="brownian",
        solution=GaussianSolution(T, 0.0, 1.0))


def ou_linear(d=2, T=1.0, theta=1.0):
    """Ornstein-Uhlenbeck drift mu = -theta x, sigma = I, Gaussian g, f = 0."""
    return ProblemSpec(
        d=d, T=T, coeffs=constant_coeffs(d, -theta, 1.0), f=_zero_f, g=_gaussian_g,
        c=0.0, alpha=1.0, lipschitz_L=1.0, growth_p=1.0, growth_c=float(d), name="ou-linear",
        solution=GaussianSolution(T, -theta, 1.0))


def gbm_coeffs(drift, vol):
    def mu(s, x):
        return drift * np.asarray(x, float)

    def jac_mu(s, x):
        return np.full(np.shape(x)[:-1] + (1, 1), drift)

    def sigma(s, x):
        return vol * np.asarray(x, float)[..., None]

    def jac_sigma(s, x):
        return np.full(np.shape(x)[:-1] + (1, 1, 1), vol)

    return CoefficientField(mu=mu, sigma=sigma, jac_mu=jac_mu, jac_sigma=jac_sigma)


def gbm_1d(T=1.0, drift=0.05, vol=0.2, strike=1.0):
    """Geometric Brownian motion with a discounted call payoff.

    f(t, x, a, w) = -drift * a, so the solution is the Black-Scholes call
    price with rate ``drift``.  The diffusion vanishes at 0, so the preset is
    declared degenerate (alpha = 0).
    """

    def f(t, x, a, w):
        return -drift * np.asarray(a, float)

    def g(x):
        return np.maximum(np.asarray(x, float)[..., 0] - strike, 0.0)

    return ProblemSpec(
        d=1, T=T, coeffs=gbm_coeffs(drift, vol), f=f, g=g,
        c=max(2.0 * drift, vol ** 2), alpha=0.0, lipschitz_L=drift, growth_p=1.0,
        growth_c=max(drift, vol ** 2), name="gbm-1d",
        solution=BlackScholesCall(T, drift, vol, strike))


def manufactured(d, T=0.5, lam=0.5, kappa_first=0.3):
    kappa = np.zeros(d)
    kappa[0] = kappa_first
    spec, _ = manufactured_problem(d, T=T, lam=lam, kappa=kappa, name=f"manufactured-d{d}")
    return spec


def get_preset(name, d=None):
    """Look up a preset by name; ``d`` applies to the dimension-free ones."""
    m = re.fullmatch(r"manufactured-d(\d+)", name)
    if m:
        dim = int(m.group(1))
        if d is not None and d != dim:
            raise ConfigurationError(f"preset {name} has fixed dimension {dim}, got d={d}")
        return manufactured(dim)
    if name == "gbm-1d":
        if d not in (None, 1):
            raise ConfigurationError("gbm-1d is one-dimensional")
        return gbm_1d()
    factories = {"heat": heat, "brownian": brownian, "ou-linear": ou_linear}
    if name not in factories:
        raise ConfigurationError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}")
    return factories[name](2 if d is None else d)


def all_presets():
    return [get_preset(n) for n in PRESET_NAMES]
