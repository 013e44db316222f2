import math

import numpy as np
import pytest

from geodescent import (
    AssumptionParams,
    DiagonalQuadratic,
    Objective,
    OptState,
    RunResult,
    Sphere,
    classify_stationarity,
    derive_thresholds,
    min_hess_eig,
    practical_thresholds,
    prgd_step,
    rgd_baseline,
    run,
)

D_FIG = np.array([1.0, -1.0, 4.0])


def fig_objective():
    return DiagonalQuadratic(D_FIG)


def fig_thresholds():
    # the Figure-1 practical parameters
    return practical_thresholds(8.0, 8.0, 1e-4, dim_d=2, injectivity=math.pi,
                                eta=0.05, r=1e-3, g_thres=1e-4, t_thres=200,
                                f_thres=1e-8)


class Constant(Objective):
    def __init__(self, manifold, c=0.0):
        self.manifold = manifold
        self.c = c

    def value(self, x):
        return self.c

    def ambient_grad(self, x):
        return np.zeros(self.manifold.shape)


class TestDeriveThresholds:
    PARAMS = AssumptionParams(beta=8.0, rho=8.0, epsilon=0.1, delta=0.1,
                              f_gap=2.0, dim_d=2, curvature_K=1.0,
                              injectivity=math.pi)

    def test_c_max_maximal_admissible(self):
        thr = derive_thresholds(self.PARAMS, c_hat=4.0)
        assert thr.c_max == pytest.approx((1.0 / 896.0) ** 2, rel=1e-15)
        assert math.sqrt(thr.c_max) <= 1.0 / (56.0 * 16.0) + 1e-18

    def test_chi_clamps_at_twelve(self):
        # log(d beta f_gap / (c_hat eps^2 delta)) = log(1) = 0 clamps to 4
        p = AssumptionParams(beta=1.0, rho=1.0, epsilon=1.0, delta=0.5,
                             f_gap=1.0, dim_d=2)
        thr = derive_thresholds(p, c_hat=4.0)
        assert thr.chi == pytest.approx(12.0)

    def test_full_set_matches_independent_evaluation(self):
        # frozen values from a spreadsheet-style evaluation of the parameter
        # box for (d=2, beta=8, rho_hat=8, eps=0.1, delta=0.1, f_gap=2, c_hat=4)
        thr = derive_thresholds(self.PARAMS, c_hat=4.0)
        expected = {
            "c_max": 1.2456154336734693e-06,
            "chi": 26.96159046198592,
            "r": 1.535327310012351e-07,
            "f_thres": 7.105627953361329e-13,
            "g_thres": 1.535327310012351e-07,
            "eta": 1.5570192920918366e-07,
            "gamma": 0.8944271909999159,
            "kappa": 8.94427190999916,
            "script_F": 9.980542489349673e-11,
            "script_G": 4.148605105382996e-06,
            "script_S": 2.4057586190595688e-05,
            "script_T": 37243969.23704066,
        }
        for name, val in expected.items():
            assert getattr(thr, name) == pytest.approx(val, rel=1e-12), name
        assert thr.t_thres == 193600521

    def test_c_hat_below_four_rejected(self):
        with pytest.raises(ValueError, match="c_hat"):
            derive_thresholds(self.PARAMS, c_hat=3.0)

    def test_epsilon_bound_violation_warns_not_raises(self):
        # with the tiny theory step size the bound only binds for large
        # fitted curvature constants
        p = AssumptionParams(beta=8.0, rho=8.0, epsilon=10.0, delta=0.1,
                             f_gap=2.0, dim_d=2, injectivity=math.pi)
        with pytest.warns(RuntimeWarning, match="admissible accuracy bound"):
            derive_thresholds(p, c_hat=4.0, c2=1e9, c3=1e9)


class TestPracticalThresholds:
    def test_documented_defaults(self):
        thr = practical_thresholds(8.0, 8.0, 1e-2)
        assert thr.eta == pytest.approx(0.1 / 8.0)
        assert thr.r == pytest.approx(0.1)
        assert thr.g_thres == pytest.approx(1e-2)
        assert thr.t_thres == math.ceil(4.0 / (thr.eta * math.sqrt(8.0 * 1e-2)))
        assert thr.f_thres == pytest.approx(0.1 * math.sqrt(1e-6 / 8.0))
        assert thr.mode == "practical"

    def test_overrides_win(self):
        thr = practical_thresholds(8.0, 8.0, 1e-2, eta=0.3, r=1e-5, t_thres=77)
        assert (thr.eta, thr.r, thr.t_thres) == (0.3, 1e-5, 77)


class TestPrgdStep:
    def test_large_gradient_takes_descending_step(self):
        obj = fig_objective()
        man = obj.manifold
        thr = fig_thresholds()
        x0 = man.random_point(np.random.default_rng(0))
        state = OptState.initial(x0, thr)
        f0 = obj.value(x0)
        g0 = obj.rgrad(x0)
        out = prgd_step(state, thr, obj, np.random.default_rng(1))
        assert isinstance(out, OptState)
        assert not out.trace.rows[-1].perturbed
        if g0.norm() > thr.g_thres:
            eta_bar = min(thr.eta, thr.injectivity / g0.norm())
            assert obj.value(out.x) <= f0 - 0.5 * eta_bar * g0.norm() ** 2 + 1e-12

    def test_small_gradient_perturbs_within_radius(self):
        obj = fig_objective()
        man = obj.manifold
        thr = fig_thresholds()
        x0 = man.point([1.0, 0.0, 0.0])  # exact saddle: zero gradient
        state = OptState.initial(x0, thr)
        out = prgd_step(state, thr, obj, np.random.default_rng(2))
        assert isinstance(out, OptState)
        row = out.trace.rows[-1]
        assert row.perturbed
        assert row.dist_to_anchor is not None and row.dist_to_anchor <= thr.r + 1e-12
        assert out.x_tilde is not None and np.array_equal(out.x_tilde.coords, x0.coords)

    def test_window_without_decrease_terminates_with_anchor(self):
        man = Sphere(3)
        obj = Constant(man, 0.0)
        thr = practical_thresholds(1.0, 1.0, 1e-2, injectivity=math.pi,
                                   eta=0.1, r=1e-3, t_thres=5, f_thres=1e-8)
        x0 = man.point([1.0, 0.0, 0.0])
        state = OptState.initial(x0, thr)
        rng = np.random.default_rng(3)
        result = None
        for _ in range(100):
            out = prgd_step(state, thr, obj, rng)
            if isinstance(out, RunResult):
                result = out
                break
            state = out
        assert result is not None
        assert result.status == "second-order-point"
        assert np.array_equal(result.final_point.coords, x0.coords)
        assert result.final_f == 0.0
        assert result.iterations == thr.t_thres + 1

    def test_nonfinite_cost_is_step_failure(self):
        man = Sphere(3)

        class Bad(Constant):
            def value(self, x):
                return math.nan

        thr = fig_thresholds()
        state = OptState.initial(man.point([1.0, 0, 0]), thr)
        out = prgd_step(state, thr, Bad(man), np.random.default_rng(0))
        assert isinstance(out, RunResult)
        assert out.status == "step-failure"


class TestRun:
    def test_figure_one_scenario_escapes_to_minimum(self):
        obj = fig_objective()
        man = obj.manifold
        thr = fig_thresholds()
        x0 = man.point([1.0, 0.0, 0.0])
        result = run(obj, x0, thr, 100_000, np.random.default_rng(7))
        assert result.status == "second-order-point"
        assert abs(result.final_f - (-1.0)) <= 1e-6
        target = min(man.dist(result.final_point, man.point([0.0, 1.0, 0.0])),
                     man.dist(result.final_point, man.point([0.0, -1.0, 0.0])))
        assert target <= 1e-3

    def test_start_at_exact_minimum_terminates_after_one_window(self):
        obj = fig_objective()
        man = obj.manifold
        thr = fig_thresholds()
        x0 = man.point([0.0, 1.0, 0.0])
        result = run(obj, x0, thr, 100_000, np.random.default_rng(8))
        assert result.status == "second-order-point"
        assert np.array_equal(result.final_point.coords, x0.coords)
        assert result.iterations == thr.t_thres + 1

    def test_zero_objective_terminates_at_first_window(self):
        man = Sphere(4)
        obj = Constant(man, 0.0)
        thr = practical_thresholds(1.0, 1.0, 1e-2, injectivity=math.pi,
                                   eta=0.1, r=1e-2, t_thres=10, f_thres=1e-9)
        x0 = man.point([0.0, 0.0, 0.0, 1.0])
        result = run(obj, x0, thr, 1000, np.random.default_rng(9))
        assert result.status == "second-order-point"
        assert result.final_f == 0.0
        assert result.iterations == thr.t_thres + 1

    def test_iteration_cap(self):
        obj = fig_objective()
        x0 = obj.manifold.random_point(np.random.default_rng(1))
        result = run(obj, x0, fig_thresholds(), 3, np.random.default_rng(1))
        assert result.status == "iteration-cap"
        assert result.iterations == 3

    def test_deterministic_traces(self):
        obj = fig_objective()
        x0 = obj.manifold.point([1.0, 0.0, 0.0])
        thr = fig_thresholds()
        r1 = run(obj, x0, thr, 50_000, np.random.default_rng(21))
        r2 = run(obj, x0, thr, 50_000, np.random.default_rng(21))
        assert r1.iterations == r2.iterations
        assert r1.status == r2.status
        for a, b in zip(r1.trace.rows, r2.trace.rows):
            assert (a.t, a.f, a.gradnorm, a.step_norm, a.perturbed) == \
                   (b.t, b.f, b.gradnorm, b.step_norm, b.perturbed)
        assert np.array_equal(r1.final_point.coords, r2.final_point.coords)


class TestRunInvariants:
    def test_descent_outside_perturbation_and_step_clamp(self):
        obj = fig_objective()
        man = obj.manifold
        thr = fig_thresholds()  # eta = 0.05 <= 1/beta_hat = 0.1
        result = run(obj, man.point([1.0, 0.0, 0.0]), thr, 100_000,
                     np.random.default_rng(13))
        rows = result.trace.rows
        for a, b in zip(rows, rows[1:]):
            assert a.step_norm <= min(thr.eta * a.gradnorm, thr.injectivity) + 1e-15
            if b.perturbed or a.gradnorm == 0.0:
                continue
            eta_bar = a.step_norm / a.gradnorm
            assert b.f <= a.f - 0.5 * eta_bar * a.gradnorm ** 2 + 1e-12

    def test_perturbation_displacement_bounded(self):
        obj = fig_objective()
        thr = fig_thresholds()
        result = run(obj, obj.manifold.point([1.0, 0.0, 0.0]), thr, 100_000,
                     np.random.default_rng(14))
        perturbed_rows = [r for r in result.trace.rows if r.perturbed]
        assert perturbed_rows, "expected at least one perturbation"
        for r in perturbed_rows:
            assert r.dist_to_anchor <= thr.r + 1e-12

    def test_termination_soundness_over_seeds(self):
        obj = fig_objective()
        man = obj.manifold
        thr = fig_thresholds()
        epsilon, rho_hat, delta = 1e-4, 8.0, 0.1
        bad = 0
        for seed in range(50):
            result = run(obj, man.point([1.0, 0.0, 0.0]), thr, 100_000,
                         np.random.default_rng(seed))
            assert result.status == "second-order-point"
            lam, _ = min_hess_eig(obj, result.final_point, 1e-4,
                                  np.random.default_rng(seed + 1000))
            ok = (result.final_gradnorm <= thr.g_thres
                  and lam >= -math.sqrt(rho_hat * epsilon) - 1e-4)
            bad += 0 if ok else 1
        assert bad <= delta * 50


class TestBaseline:
    def test_stalls_at_exact_saddle(self):
        obj = fig_objective()
        x0 = obj.manifold.point([1.0, 0.0, 0.0])
        result = rgd_baseline(obj, x0, eta=0.05, g_tol=1e-4, max_iters=10_000)
        assert result.status == "first-order-point"
        assert result.iterations == 1
        assert np.array_equal(result.final_point.coords, x0.coords)
        assert result.final_f == pytest.approx(1.0)

    def test_generic_start_reaches_tolerance(self):
        obj = fig_objective()
        x0 = obj.manifold.random_point(np.random.default_rng(4))
        result = rgd_baseline(obj, x0, eta=0.05, g_tol=1e-6, max_iters=10_000)
        assert result.status == "first-order-point"
        assert result.final_gradnorm <= 1e-6

    def test_deterministic(self):
        obj = fig_objective()
        x0 = obj.manifold.random_point(np.random.default_rng(5))
        r1 = rgd_baseline(obj, x0, 0.05, 1e-6, 10_000)
        r2 = rgd_baseline(obj, x0, 0.05, 1e-6, 10_000)
        assert r1.iterations == r2.iterations
        assert [(a.f, a.gradnorm) for a in r1.trace.rows] == \
               [(b.f, b.gradnorm) for b in r2.trace.rows]


class TestClassify:
    def test_examples(self):
        assert classify_stationarity(0.0, -4.0, 0.1, 8.0) == "saddle"
        assert classify_stationarity(0.0, 4.0, 0.1, 8.0) == "second-order"
        assert classify_stationarity(1.0, -4.0, 0.1, 8.0) == "non-stationary"

    def test_boundary_ties_resolve_to_saddle(self):
        thresh = -math.sqrt(8.0 * 0.1)
        assert classify_stationarity(0.1, thresh, 0.1, 8.0) == "saddle"

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            classify_stationarity(0.0, 0.0, -1.0, 8.0)
