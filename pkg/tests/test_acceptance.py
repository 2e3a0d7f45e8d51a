"""Acceptance criteria, one test per criterion.

Each check returns ``(passed, detail)``; the tests assert on it and record a
one-line verdict that ``conftest.py`` prints in the terminal summary.  The
module can also be run directly: ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import filecmp
import os
import sys
import tempfile
import time

import numpy as np
import pytest

from sfpe.cli import main
from sfpe.estimators import estimate_gradient_bel
from sfpe.picard import PicardConfig, fixed_point_residual, picard_evaluate
from sfpe.presets import all_presets, brownian, gbm_1d, heat, manufactured, ou_linear
from sfpe.problem import (LyapunovVq, check_lyapunov_vq, lyapunov_rho_bound, random_points)
from sfpe.rng import RngStream
from sfpe.sde import (TimeGrid, malliavin_derivative, sample_brownian, simulate_first_variation,
                      simulate_inverse_variation, simulate_path)
from sfpe.verification import (convergence_study, moment_certificates,
                               pde_residual)
from sfpe.weights import weight_moment_report

VERDICTS = {}


def record(number, title, passed, detail):
    VERDICTS[number] = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    return passed, detail


# -- 1 ------------------------------------------------------------------------

def bel_identity_heat():
    worst, slowest = 0.0, 0.0
    ok = True
    for d in (1, 2, 5):
        spec = heat(d)
        x = np.linspace(0.5, -0.3, d)
        start = time.perf_counter()
        est = estimate_gradient_bel(spec, 0.0, x, n_paths=100_000, rng=11)
        elapsed = time.perf_counter() - start
        exact = spec.solution(np.array([0.0]), x[None])[0, 1:]
        tol = np.maximum(3 * est.stderr, 0.02 * np.abs(exact))
        err = np.abs(est.mean - exact)
        ok &= bool(np.all(err <= tol)) and elapsed < 30.0
        worst = max(worst, float(np.max(err / tol)))
        slowest = max(slowest, elapsed)
    return record(1, "BEL identity on heat d=1,2,5", ok,
                  f"max err/tol {worst:.3f}, slowest {slowest:.2f}s")


# -- 2 ------------------------------------------------------------------------

def weight_moment_bounds():
    ok = True
    notes = []
    for spec in (brownian(2), ou_linear(2)):
        for h in (0.25, 0.5, 1.0):
            rep = weight_moment_report(spec, 0.0, h, 40_000, rng=5)
            ok &= rep.passed
            if spec.name == "brownian":
                # the bound is attained: the estimate must sit on it
                ok &= abs(rep.second_moment - rep.bound) <= 3 * rep.second_moment_stderr
            notes.append(f"{spec.name}@{h}: {rep.second_moment:.3f}/{rep.bound:.3f}")
    return record(2, "weight second-moment bound", ok, ", ".join(notes))


# -- 3 ------------------------------------------------------------------------

def _yz_defect(spec, x0, grid, dW):
    path = simulate_path(spec, x0, grid, dW=dW)
    Y = simulate_first_variation(spec, path)
    Z = simulate_inverse_variation(spec, path)
    prod = Y.matrices @ Z.matrices
    return np.linalg.norm(prod - np.eye(spec.d), axis=(-2, -1))


def inverse_variation_identity():
    worst_const = 0.0
    for spec in (heat(3), brownian(2), ou_linear(4)):
        for n_steps in (7, 50, 400):
            grid = TimeGrid.uniform(0.0, spec.T, n_steps)
            dW = sample_brownian(grid, spec.d, 3, n_paths=20)
            worst_const = max(worst_const, float(_yz_defect(spec, np.ones(spec.d), grid,
                                                            dW).max()))
    spec = gbm_1d()
    errs = []
    fine = TimeGrid.uniform(0.0, spec.T, 256)
    dW = sample_brownian(fine, 1, 9, n_paths=2000)
    for level in (0, 1, 2, 3):
        factor = 2 ** level
        n = 256 // factor
        coarse = dW.reshape(n, factor, 2000, 1).sum(axis=1)
        defect = _yz_defect(spec, np.ones(1), TimeGrid.uniform(0.0, spec.T, n), coarse)
        errs.append(float(np.sqrt(np.mean(defect[-1] ** 2))))
    # errs runs from the finest grid to the coarsest: each ratio is err(dt/2) / err(dt)
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = worst_const <= 1e-12 and all(0.35 <= r <= 0.65 for r in ratios)
    return record(3, "inverse-variation identity", ok,
                  f"constant-sigma max defect {worst_const:.2e}; GBM halving ratios "
                  + ", ".join(f"{r:.3f}" for r in ratios))


# -- 4 ------------------------------------------------------------------------

def malliavin_gbm():
    spec = gbm_1d()
    vol = 0.2
    grid = TimeGrid.uniform(0.0, spec.T, 100)
    dt = spec.T / 100
    path = simulate_path(spec, np.ones(1), grid, rng=RngStream(21), n_paths=100)
    Y = simulate_first_variation(spec, path)
    Z = simulate_inverse_variation(spec, path)
    worst = 0.0
    for ti in range(grid.n_steps + 1):
        for si in range(ti, grid.n_steps + 1):
            D = malliavin_derivative(spec, path, Y, Z, ti, si)[..., 0, 0]
            exact = vol * path.states[si, :, 0]
            worst = max(worst, float(np.max(np.abs(D - exact) / np.abs(exact))))
    return record(4, "Malliavin derivative on GBM", worst <= 5 * dt,
                  f"max relative error {worst:.2e} vs 5*dt = {5 * dt:.2e}")


# -- 5 ------------------------------------------------------------------------

PICARD_ACCEPT = PicardConfig(depth=4, samples_per_level=(4, 4, 8, 4000), grid_steps=20,
                             quadrature="randomized-arcsine")


def _probes(spec, n=5, seed=7):
    gen = np.random.default_rng(seed)
    return [(float(gen.uniform(0.0, 0.4)), gen.uniform(-1.0, 1.0, spec.d)) for _ in range(n)]


def picard_manufactured(d):
    spec = manufactured(d)
    assert spec.lipschitz_L * spec.T <= 0.5
    start = time.perf_counter()
    ok = True
    worst = 0.0
    for i, (t, x) in enumerate(_probes(spec)):
        res = picard_evaluate(spec, t, x, PICARD_ACCEPT, rng=RngStream(100 + i))
        exact = spec.solution(np.array([t]), x[None])[0]
        rel = np.r_[abs(exact[0]), np.full(d, np.linalg.norm(exact[1:]))]
        tol = np.maximum(3 * res.stderr, 0.05 * rel)
        err = np.abs(res.vg - exact)
        ok &= bool(np.all(err <= tol))
        worst = max(worst, float(np.max(err / tol)))
    elapsed = time.perf_counter() - start
    return ok and elapsed < 300, worst, elapsed


def sfpe_solution():
    ok = True
    notes = []
    for d in (1, 2, 5):
        passed, worst, elapsed = picard_manufactured(d)
        ok &= passed
        notes.append(f"d={d}: err/tol {worst:.2f} in {elapsed:.0f}s")
    return record(5, "depth-4 Picard on manufactured problems", ok, "; ".join(notes))


# -- 6 ------------------------------------------------------------------------

def pde_equivalence():
    ok = True
    notes = []
    for d in (1, 2, 5):
        spec = manufactured(d)
        probes = _probes(spec, seed=3)
        fp = fixed_point_residual(spec, spec.solution, probes, n_paths=40_000, grid_steps=50,
                                  rng=RngStream(8))
        pde = pde_residual(spec, spec.solution, probes)
        ok &= fp.all_passed and pde.all_passed
        notes.append(f"d={d}: fixed-point max |r|/(tol+3se) "
                     f"{np.max(np.abs(fp.residuals) / (fp.tolerance + 3 * fp.stderrs)):.2f}, "
                     f"pde max |r| {np.max(np.abs(pde.residuals)):.1e}")
    return record(6, "fixed-point and PDE residuals agree", ok, "; ".join(notes))


# -- 7 ------------------------------------------------------------------------

def lyapunov_certificates():
    ok = True
    q = 2.0
    vq = LyapunovVq(q)
    for spec in all_presets():
        rho = lyapunov_rho_bound(spec, q)
        pts = random_points(spec.d, spec.T, 64)
        if spec.name == "gbm-1d":
            pts = [(s, np.abs(y) + 0.1) for s, y in pts]
        ok &= check_lyapunov_vq(spec, vq, rho, pts).passed
        x0 = np.ones(spec.d) if spec.name == "gbm-1d" else np.full(spec.d, 0.3)
        horizons = [spec.T * f for f in (0.25, 0.5, 1.0)]
        certs = moment_certificates(spec, vq, rho, 0.0, x0, horizons, n_paths=10_000, rng=2)
        ok &= all(c.passed for c in certs)
    neg = moment_certificates(brownian(2), vq, 0.0, 0.0, np.zeros(2), [0.25, 0.5, 1.0],
                              n_paths=10_000, rng=2)
    control_fails = not neg[-1].passed
    return record(7, "Lyapunov certificates", ok and control_fails,
                  f"all presets pass: {ok}; rho=0 Brownian control fails: {control_fails}")


# -- 8 ------------------------------------------------------------------------

HYGIENE_CONFIG = """
[problem]
name = "manufactured-d2"
[run]
command = "solve"
t = 0.1
x = [0.2, -0.4]
seed = 2024
output = "out"
[picard]
depth = 2
samples_per_level = [3, 9000]
"""


def mc_hygiene():
    table = convergence_study(heat(2), 0.0, [0.5, -0.3], "n_paths", [1000, 4000, 16000, 64000],
                              rng=4, base=PicardConfig(1, (1000,), 20))
    slope = table.slope("stderr", 0)
    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "run.cfg")
        with open(cfg, "w") as fh:
            fh.write(HYGIENE_CONFIG)
        codes = [main(["--config", cfg, "--output", os.path.join(tmp, f"w{w}"),
                       "--threads", str(w)]) for w in (1, 4, 8)]
        files = [os.path.join(tmp, f"w{w}", "results.csv") for w in (1, 4, 8)]
        same = codes == [0, 0, 0] and all(filecmp.cmp(files[0], f, shallow=False)
                                           for f in files[1:])
    ok = -0.6 <= slope <= -0.4 and same
    return record(8, "Monte-Carlo hygiene", ok,
                  f"stderr slope {slope:.3f}; identical output across 1/4/8 workers: {same}")


class TestAcceptance:
    def test_1_bel_identity(self):
        assert bel_identity_heat()[0], VERDICTS[1]

    def test_2_weight_moment_bound(self):
        assert weight_moment_bounds()[0], VERDICTS[2]

    def test_3_inverse_variation(self):
        assert inverse_variation_identity()[0], VERDICTS[3]

    def test_4_malliavin(self):
        assert malliavin_gbm()[0], VERDICTS[4]

    @pytest.mark.slow
    def test_5_sfpe_solution(self):
        assert sfpe_solution()[0], VERDICTS[5]

    def test_6_pde_equivalence(self):
        assert pde_equivalence()[0], VERDICTS[6]

    def test_7_lyapunov(self):
        assert lyapunov_certificates()[0], VERDICTS[7]

    def test_8_hygiene(self):
        assert mc_hygiene()[0], VERDICTS[8]


if __name__ == "__main__":
    checks = [bel_identity_heat, weight_moment_bounds, inverse_variation_identity, malliavin_gbm,
              sfpe_solution, pde_equivalence, lyapunov_certificates, mc_hygiene]
    for check in checks:
        check()
    for k in sorted(VERDICTS):
        print(VERDICTS[k])
    sys.exit(0 if all("[PASS]" in v for v in VERDICTS.values()) else 1)
