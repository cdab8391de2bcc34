"""Benchmark fields: hand arithmetic, derivative consistency, bookkeeping."""

import threading

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gpsaddle.errors import InputError
from gpsaddle.gpr import ObservationKind
from gpsaddle.problems import (
    AnalyticProvider,
    FdJacobianProvider,
    Problem,
    example1_energy,
    example1_problem,
    example2_force,
    example2_problem,
    observe,
    oracle_critical_points,
)

# Critical points found by multi-start Newton at tight tolerance; frozen
# here so a regression in either the fields or the root finder shows up.
E1_POINTS = {
    (0.46434425, 0.69847661): 0,
    (1.28418887, 3.44839363): 1,
    (2.20384074, 5.98041583): 0,
    (3.56893225, 6.07350792): 1,
    (5.71092279, 6.23693304): 0,
}
E2_POINTS = {
    (0.59311623, 0.76547496): 0,
    (1.79542175, 3.30884991): 1,
    (5.87695855, 6.25067053): 0,
}


def test_example1_energy_hand_value():
    # At (5, 5) both arctan terms vanish and the quadratic gives
    # 0.5 * (0.8*25 - 2*0.2*25 + 0.5*25) = 11.25.
    assert example1_energy([5.0, 5.0]) == pytest.approx(11.25, abs=1e-12)


def test_example2_force_hand_values():
    # gamma = 1 at both coordinates of (5, 5).
    assert_allclose(example2_force([5.0, 5.0]), [2.5, 3.5], atol=1e-12)
    # gamma(1) = 1/17, gamma(2) = 1/10.
    assert_allclose(example2_force([1.0, 2.0]),
                    [5.0 / 17.0 - 0.2, -0.3], atol=1e-12)


def test_example1_analytic_derivs_hand_values():
    b, J = example1_problem().analytic_derivs([1.0, 2.0])
    assert_allclose(b, [-(0.4 - 5.0 / 17.0), -0.3], atol=1e-12)
    want_J = -np.array([[0.8 + 10.0 * (-4.0) / 17.0**2, -0.2],
                        [-0.2, 0.5 + 10.0 * (-3.0) / 100.0]])
    assert_allclose(J, want_J, atol=1e-12)


@pytest.mark.parametrize("make", [example1_problem, example2_problem])
def test_analytic_derivs_match_finite_differences(make):
    prob = make()
    rng = np.random.default_rng(5)
    h = 1e-5
    for _ in range(25):
        x = rng.uniform(0.0, 7.0, size=2)
        b, J = prob.analytic_derivs(x)
        if prob.kind is ObservationKind.FORCE:
            f = prob.evaluator
            assert_allclose(b, f(x), atol=1e-12)
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
                assert_allclose(J[:, j], fd, atol=1e-6)
        else:
            u = prob.evaluator
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                fd = (u(x + e) - u(x - e)) / (2 * h)
                assert b[j] == pytest.approx(-fd, abs=1e-6)
            # J = -hess u via differentiating b itself.
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                bp, _ = prob.analytic_derivs(x + e)
                bm, _ = prob.analytic_derivs(x - e)
                assert_allclose(J[:, j], (bp - bm) / (2 * h), atol=1e-6)


@pytest.mark.parametrize("make,frozen", [(example1_problem, E1_POINTS),
                                         (example2_problem, E2_POINTS)])
def test_critical_point_oracle(make, frozen):
    pts = oracle_critical_points(make())
    assert len(pts) == len(frozen)
    for (x, idx), (want_x, want_idx) in zip(pts, sorted(frozen.items())):
        assert_allclose(x, want_x, atol=1e-6)
        assert idx == want_idx


def test_oracle_residuals_are_roots():
    prob = example2_problem()
    for x, _ in oracle_critical_points(prob):
        assert np.max(np.abs(example2_force(x))) < 1e-8


def test_oracle_fd_fallback_on_bare_quadratic():
    # Energy (x^2 - y^2)/2 has one stationary point; J = -hess u has a
    # single positive eigenvalue there, so the oracle labels it index 1.
    prob = Problem(
        name="quad",
        kind=ObservationKind.ENERGY,
        dim=2,
        domain=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
        evaluator=lambda x: 0.5 * (x[0] ** 2 - x[1] ** 2),
    )
    pts = oracle_critical_points(prob, grid_resolution=4)
    assert len(pts) == 1
    assert_allclose(pts[0][0], [0.0, 0.0], atol=1e-6)
    assert pts[0][1] == 1


def test_oracle_rejects_tiny_grid():
    with pytest.raises(InputError):
        oracle_critical_points(example1_problem(), grid_resolution=1)


def test_observe_shapes_and_counting():
    rng = np.random.default_rng(0)
    p1 = example1_problem()
    y = observe(p1, [1.0, 2.0], 0.0, rng)
    assert isinstance(y, float)
    assert p1.eval_count == 1
    p2 = example2_problem()
    y2 = observe(p2, [1.0, 2.0], 0.0, rng)
    assert y2.shape == (2,)
    assert_allclose(y2, example2_force([1.0, 2.0]), atol=1e-14)
    for _ in range(4):
        observe(p2, [0.0, 0.0], 0.0, rng)
    assert p2.eval_count == 5


def test_observe_noise_statistics():
    rng = np.random.default_rng(42)
    p = example2_problem()
    x = np.array([2.0, 3.0])
    ys = np.array([observe(p, x, 0.09, rng) for _ in range(4000)])
    assert_allclose(ys.mean(axis=0), example2_force(x), atol=0.02)
    assert_allclose(ys.var(axis=0), 0.09, rtol=0.15)


def test_observe_input_errors():
    rng = np.random.default_rng(0)
    p = example1_problem()
    with pytest.raises(InputError):
        observe(p, [1.0], 0.0, rng)
    with pytest.raises(InputError):
        observe(p, [np.inf, 0.0], 0.0, rng)
    with pytest.raises(InputError):
        observe(p, [1.0, 1.0], -0.5, rng)


def test_eval_count_is_thread_safe():
    p = example2_problem()
    rng = np.random.default_rng(1)
    xs = rng.uniform(0, 5, size=(50, 2))

    def worker():
        local = np.random.default_rng(0)
        for x in xs:
            observe(p, x, 0.0, local)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert p.eval_count == 200


def test_analytic_provider_cost_and_values():
    p = example2_problem()
    prov = AnalyticProvider(p)
    b, J = prov.derivs([1.0, 2.0])
    want_b, want_J = p.analytic_derivs([1.0, 2.0])
    assert_allclose(b, want_b, atol=1e-14)
    assert_allclose(J, want_J, atol=1e-14)
    assert prov.cost == 1
    assert p.eval_count == 1


def test_fd_provider_noise_free_accuracy():
    p = example2_problem()
    prov = FdJacobianProvider(p, noise_var=0.0, fd_step=1e-5)
    x = np.array([2.5, 4.0])
    b, J = prov.derivs(x)
    want_b, want_J = p.analytic_derivs(x)
    assert_allclose(b, want_b, atol=1e-12)
    assert_allclose(J, want_J, atol=1e-6)
    assert prov.cost == 1 + 2 * p.dim
    assert p.eval_count == 1 + 2 * p.dim


def test_fd_provider_rejects_energy_problem():
    with pytest.raises(InputError):
        FdJacobianProvider(example1_problem())


def test_fd_provider_noisy_jacobian_error_scales_inversely_with_step():
    """Each difference quotient carries noise sd sqrt(2 sigma^2)/(2h), so
    widening the step by 100x should shrink the error by roughly 100x."""
    x = np.array([3.0, 2.0])
    _, want_J = example2_problem().analytic_derivs(x)

    def median_err(fd_step, seed):
        p = example2_problem()
        prov = FdJacobianProvider(p, noise_var=0.05,
                                  rng=np.random.default_rng(seed),
                                  fd_step=fd_step)
        errs = [np.abs(prov.derivs(x)[1] - want_J).max() for _ in range(40)]
        return float(np.median(errs))

    sd = np.sqrt(2 * 0.05) / (2 * 0.1)
    wide = median_err(0.1, 3)
    assert 0.5 * sd < wide < 4.0 * sd
    narrow = median_err(0.001, 3)
    assert 30.0 < narrow / wide < 300.0


def test_problem_domain_validation():
    with pytest.raises(InputError):
        Problem(name="bad", kind=ObservationKind.ENERGY, dim=2,
                domain=np.zeros((3, 2)), evaluator=lambda x: 0.0)
