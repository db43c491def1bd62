import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vmdetect.errors import DegenerateLayerError
from vmdetect.solvers import (
    SolverInput,
    _root_equation_literal,
    bernoulli_params,
    exact_objective,
    kkt_residual,
    oracle_projected_gradient,
    probabilities_from_rho,
    project_simplex,
    root_equation,
    solve_exact,
    solve_linear,
    solve_log,
    surrogate_objective,
)


def random_instance(rng, h_max=64, C_range=(1.0, 100.0)):
    h = int(rng.integers(2, h_max + 1))
    return SolverInput(rng.standard_normal(h) ** 2, rng.uniform(*C_range))


def assert_on_simplex(p, inp):
    assert abs(p.sum() - 1) <= 1e-9
    assert np.all(p >= 0) and np.all(p <= 1)
    off = np.setdiff1d(np.arange(p.size), inp.support)
    assert np.all(p[off] == 0)


class TestSolverInput:
    def test_support(self):
        inp = SolverInput([1.0, 0.0, 2.0], 3)
        np.testing.assert_array_equal(inp.support, [0, 2])
        assert inp.h == 2

    def test_rejects_all_zero(self):
        with pytest.raises(DegenerateLayerError):
            SolverInput([0.0, 0.0], 1)

    @pytest.mark.parametrize("C", [0, -1, math.inf])
    def test_rejects_bad_C(self, C):
        with pytest.raises(ValueError):
            SolverInput([1.0], C)

    def test_rejects_negative_alpha(self):
        with pytest.raises(ValueError):
            SolverInput([1.0, -1.0], 1)


class TestObjectives:
    def test_exact_value(self):
        assert exact_objective([0.5, 0.5], SolverInput([1.0, 1.0], 1)) == pytest.approx(4.0, rel=1e-15)

    @pytest.mark.parametrize("C", [0.5, 3.0, 40.0])
    def test_single_support(self, C):
        assert exact_objective([1.0, 0.0], SolverInput([1.0, 0.0], C)) == 1.0

    def test_pole(self):
        inp = SolverInput([1.0, 1.0], 2)
        assert exact_objective([1.0, 0.0], inp) == math.inf
        assert surrogate_objective([1.0, 0.0], inp) == math.inf

    def test_surrogate_value(self):
        assert surrogate_objective([1.0], SolverInput([1.0], math.log(2))) == pytest.approx(2.0, rel=1e-14)

    def test_surrogate_bounds_exact(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            h = int(rng.integers(1, 20))
            inp = SolverInput(rng.exponential(size=h) + 1e-3, rng.uniform(0.05, 50))
            p = rng.dirichlet(np.ones(h))
            assert surrogate_objective(p, inp) >= exact_objective(p, inp) * (1 - 1e-12)


class TestRootEquation:
    def test_stable_form_matches_literal(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.uniform(0.1, 5, size=6)
            C = rng.uniform(1, 20)
            rho = rng.uniform(0.05, 5)
            assert root_equation(rho, a, C) == pytest.approx(_root_equation_literal(rho, a, C), abs=1e-9)

    def test_quadratic_root(self):
        # p from the asinh form must satisfy rho*y^2 - (2rho + a)y + rho = 0 with y = exp(-C p)
        a = np.array([0.3, 2.0, 7.0])
        rho, C = 0.8, 5.0
        y = np.exp(-C * probabilities_from_rho(rho, a, C))
        np.testing.assert_allclose(rho * y**2 - (2 * rho + a) * y + rho, 0.0, atol=1e-14)

    def test_strictly_increasing(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            inp = random_instance(rng)
            a = inp.alpha[inp.support]
            _, state = solve_exact(inp)
            grid = state.rho * np.geomspace(1e-3, 1e3, 400)
            vals = [root_equation(r, a, inp.C) for r in grid]
            assert np.all(np.diff(vals) > 0)
            assert vals[0] < 0 < vals[-1]


class TestSolveExact:
    @pytest.mark.parametrize("a", [0.01, 1.0, 250.0])
    def test_symmetric(self, a):
        p, _ = solve_exact(SolverInput([a] * 4, 10))
        np.testing.assert_allclose(p, 0.25, atol=1e-12)

    def test_against_oracle(self):
        inp = SolverInput([0.5, 0.3, 0.2], 10)
        p, _ = solve_exact(inp)
        q = oracle_projected_gradient(inp, "exp-surrogate", tol=1e-10)
        np.testing.assert_allclose(p, q, atol=1e-5)

    @pytest.mark.parametrize("C", [0.3, 1.0, 7.0, 90.0])
    def test_zero_alpha_gets_zero(self, C):
        p, _ = solve_exact(SolverInput([1.0, 0.0], C))
        np.testing.assert_array_equal(p, [1.0, 0.0])

    def test_rejects_bad_tol(self):
        with pytest.raises(ValueError):
            solve_exact(SolverInput([1.0, 2.0], 2), tol=0)

    def test_kkt_and_simplex(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            inp = random_instance(rng, C_range=(0.05, 200))
            p, state = solve_exact(inp)
            assert_on_simplex(p, inp)
            assert kkt_residual(p, inp, state.multiplier) <= 1e-6

    def test_scale_equivariance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            inp = random_instance(rng)
            c = 10 ** rng.uniform(-3, 3)
            p, s1 = solve_exact(inp)
            q, s2 = solve_exact(SolverInput(c * inp.alpha, inp.C))
            np.testing.assert_allclose(p, q, atol=1e-10)
            assert s2.rho == pytest.approx(c * s1.rho, rel=1e-9)

    def test_newton_polish_agrees(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            inp = random_instance(rng)
            p, _ = solve_exact(inp)
            q, state = solve_exact(inp, tol=1e-3, newton=True)
            assert state.newton_steps >= 1
            np.testing.assert_allclose(p, q, atol=1e-10)

    def test_wide_dynamic_range(self):
        inp = SolverInput(np.array([1e-12, 1e-6, 1.0, 1e6]), 5.0)
        p, state = solve_exact(inp)
        assert_on_simplex(p, inp)
        assert np.all(p[inp.support] > 0)
        assert kkt_residual(p, inp, state.multiplier) <= 1e-6


class TestSolveLinear:
    def test_example(self):
        np.testing.assert_allclose(solve_linear(SolverInput.from_activation([3.0, -4.0, 0.0], 2)), [3 / 7, 4 / 7, 0.0])

    def test_uniform(self):
        np.testing.assert_allclose(solve_linear(SolverInput([2.0, 0.0, 2.0, 2.0], 1)), [1 / 3, 0, 1 / 3, 1 / 3])

    def test_indicator(self):
        np.testing.assert_array_equal(solve_linear(SolverInput([0.0, 5.0, 0.0], 1)), [0, 1, 0])

    def test_small_C_limit(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            inp = random_instance(rng, C_range=(1e-3, 0.1))
            p, _ = solve_exact(inp)
            assert np.max(np.abs(p - solve_linear(inp))) <= 1e-2


class TestSolveLog:
    def test_uniform(self):
        np.testing.assert_allclose(solve_log(SolverInput([3.0] * 5, 7)), 0.2, atol=1e-15)

    def test_two_equal(self):
        np.testing.assert_allclose(solve_log(SolverInput([1.0, 1.0], 10)), [0.5, 0.5], atol=1e-15)

    def test_kkt_when_unclipped(self):
        rng = np.random.default_rng(6)
        checked = 0
        for _ in range(300):
            h = int(rng.integers(2, 30))
            C = rng.uniform(5, 200)
            inp = SolverInput(rng.uniform(0.5, 2.0, h), C)
            a = inp.alpha
            raw = np.log(C * a) / C
            if np.any(raw + (1 - raw.sum()) / h <= 0):
                continue
            p = solve_log(inp)
            lam = C * a * np.exp(-C * p)
            assert np.max(np.abs(lam - lam.mean())) <= 1e-6 * lam.mean()
            checked += 1
        assert checked > 50

    def test_clipping_keeps_simplex(self):
        inp = SolverInput([1e-20, 1.0, 1.0, 1e-30, 0.0], 3.0)
        p = solve_log(inp)
        assert_on_simplex(p, inp)
        assert p[0] == 0 and p[3] == 0


class TestOracle:
    def test_symmetric(self):
        np.testing.assert_allclose(oracle_projected_gradient(SolverInput([2.0] * 6, 4)), 1 / 6, atol=1e-9)

    def test_dimension_one(self):
        np.testing.assert_array_equal(oracle_projected_gradient(SolverInput([0.0, 3.0], 4)), [0.0, 1.0])

    def test_exact_objective_variant_is_consistent(self):
        # On the true objective the oracle must beat both the exp solution and uniform.
        rng = np.random.default_rng(8)
        for _ in range(10):
            inp = random_instance(rng, h_max=16, C_range=(1, 10))
            q = oracle_projected_gradient(inp, "exact-objective")
            p, _ = solve_exact(inp)
            assert exact_objective(q, inp) <= exact_objective(p, inp) * (1 + 1e-12)
            assert exact_objective(q, inp) <= exact_objective(np.full(inp.h, 1 / inp.h), inp)

    def test_unknown_objective(self):
        with pytest.raises(ValueError):
            oracle_projected_gradient(SolverInput([1.0, 2.0], 2), "nope")


class TestProjection:
    @given(arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
    def test_lands_on_simplex(self, v):
        p = project_simplex(v)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) < 1e-9

    def test_fixed_point(self):
        p = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_simplex(p), p)


class TestBernoulliParams:
    def test_values(self):
        np.testing.assert_allclose(bernoulli_params([0.5], 2), [0.75])
        assert bernoulli_params([0.1], 20)[0] == pytest.approx(1 - 0.9**20, rel=1e-14)
        assert bernoulli_params([0.1], 20)[0] == pytest.approx(0.87842, abs=1e-5)

    def test_boundaries(self):
        np.testing.assert_array_equal(bernoulli_params([0.0, 1.0], 3.7), [0.0, 1.0])

    @settings(max_examples=200)
    @given(st.floats(1e-9, 1.0), st.floats(0.01, 500))
    def test_zero_iff_zero(self, p, C):
        assert bernoulli_params([p], C)[0] > 0


def test_ordering_against_closed_forms():
    rng = np.random.default_rng(9)
    for _ in range(300):
        inp = random_instance(rng, C_range=(0.5, 100))
        p, _ = solve_exact(inp)
        best = surrogate_objective(p, inp)
        uniform = inp._embed(np.full(inp.h, 1 / inp.h))
        for other in (solve_linear(inp), solve_log(inp), uniform):
            assert best <= surrogate_objective(other, inp) + 1e-9 * abs(best)


def test_large_layer_speed():
    rng = np.random.default_rng(10)
    inp = SolverInput(rng.standard_normal(10_000) ** 2, 5_000.0)
    t0 = time.perf_counter()
    p, _ = solve_exact(inp)
    assert time.perf_counter() - t0 < 1.0
    assert abs(p.sum() - 1) < 1e-9
