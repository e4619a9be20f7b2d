import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_minimum, central_diff, dense_translation_lls, four_pose_graph
from rlpgo.graph import EdgeSE2, PoseGraph, SolveState, edge_residuals, objective_F, odometry_init, parse_g2o
from rlpgo.solvers import (
    SingularSystemError,
    gauss_newton,
    levenberg_marquardt,
    linearize,
    translation_lls,
    translation_objective,
)
from rlpgo.synth import EnvParams, generate, noiseless_twin

DATA = os.path.join(os.path.dirname(__file__), "data")


def _flat(state):
    return np.column_stack([state.translations, state.thetas]).ravel()


def _unflat(x):
    x = np.asarray(x).reshape(-1, 3)
    return SolveState(x[:, 2], x[:, :2])


def _random_state(rng, n):
    return SolveState(rng.uniform(-3, 3, n), rng.normal(scale=2, size=(n, 2)))


# --- linearize -------------------------------------------------------------------


def test_gradient_zero_at_zero_residual():
    g, gt = generate(EnvParams(n=30, sigma_R=0.0, sigma_t=0.0, seed=3))
    _, b, chi2 = linearize(g, gt)
    assert chi2 <= 1e-20
    np.testing.assert_allclose(b, 0.0, atol=1e-6)


def test_single_edge_matches_finite_differences(rng):
    info = np.array([[3.0, 0.5, 0.1], [0.5, 2.0, 0.2], [0.1, 0.2, 4.0]])
    g = PoseGraph(SolveState.zeros(2), [EdgeSE2(0, 1, (1.0, -0.5), 0.4, info)])
    for _ in range(10):
        s = _random_state(rng, 2)
        H, b, chi2 = linearize(g, s, anchor=False)
        x = _flat(s)
        grad = central_diff(lambda v: objective_F(g, _unflat(v)), x)
        np.testing.assert_allclose(2 * b, grad, rtol=1e-6, atol=1e-7 * max(1.0, np.abs(grad).max()))
        J = np.array([central_diff(lambda v, k=k: edge_residuals(g, _unflat(v))[0, k], x) for k in range(3)])
        np.testing.assert_allclose(H.toarray(), J.T @ info @ J, rtol=1e-6, atol=1e-6)
        assert chi2 == pytest.approx(objective_F(g, s))


@given(st.integers(0, 10_000))
@settings(max_examples=15)
def test_gradient_matches_finite_differences_on_random_graphs(seed):
    rng = np.random.default_rng(seed)
    g, _ = generate(EnvParams(n=6, sigma_R=0.3, sigma_t=0.2, d=1.0, lc=0.8, seed=seed))
    s = _random_state(rng, 6)
    _, b, _ = linearize(g, s, anchor=False)
    grad = central_diff(lambda v: objective_F(g, _unflat(v)), _flat(s))
    scale = max(1.0, np.abs(grad).max())
    assert np.abs(2 * b - grad).max() / scale <= 1e-6


def test_translation_block_is_rotation_transpose(rng):
    theta = 0.7
    g = PoseGraph(SolveState.zeros(2), [EdgeSE2(0, 1, (1.0, 0.0), 0.0, np.eye(3))])
    s = SolveState(np.array([theta, 0.2]), rng.normal(size=(2, 2)))
    J = np.array([central_diff(lambda v, k=k: edge_residuals(g, _unflat(v))[0, k], _flat(s)) for k in range(2)])
    c, sn = math.cos(theta), math.sin(theta)
    np.testing.assert_allclose(J[:, 3:5], [[c, sn], [-sn, c]], atol=1e-8)


def test_anchor_prior_pins_pose_zero():
    g, _ = generate(EnvParams(n=10, seed=1))
    H, _, _ = linearize(g, g.estimate)
    H0, _, _ = linearize(g, g.estimate, anchor=False)
    np.testing.assert_allclose((H - H0).toarray()[:3, :3], 1e12 * np.eye(3))


# --- Gauss-Newton / LM -------------------------------------------------------------


@pytest.mark.parametrize("solver", [gauss_newton, levenberg_marquardt])
def test_zero_noise_chain_converges_immediately(solver):
    g, gt = generate(EnvParams(n=300, sigma_R=0.0, sigma_t=0.0, d=3, lc=0.0, seed=0))
    rep = solver(g, odometry_init(g), 100)
    assert rep.final_chi2 <= 1e-10
    assert rep.iterations <= 5
    assert rep.converged


def test_easy_instance_reaches_global_minimum():
    # GN from odometry ends at the same optimum as GN started from ground truth
    g, gt = generate(EnvParams(n=300, sigma_R=0.3, sigma_t=0.2, d=3, lc=0.5, seed=7))
    rep = gauss_newton(g, odometry_init(g), 100)
    ref = gauss_newton(g, gt, 100)
    assert rep.final_chi2 == pytest.approx(ref.final_chi2, rel=1e-8)
    assert rep.final_chi2 < 1e-2 * objective_F(g, odometry_init(g))


@pytest.mark.parametrize("seed", range(3))
def test_four_pose_minimum_matches_grid_oracle(seed):
    g = four_pose_graph(seed)
    f_star, thetas_star = brute_force_minimum(g)
    gn = gauss_newton(g, odometry_init(g), 100)
    lm = levenberg_marquardt(g, odometry_init(g), 100)
    assert gn.final_chi2 == pytest.approx(f_star, abs=1e-6)
    assert lm.final_chi2 == pytest.approx(f_star, abs=1e-6)
    assert lm.final_chi2 == pytest.approx(gn.final_chi2, abs=1e-6)
    gauge = gn.final_state.thetas[0]
    np.testing.assert_allclose(
        np.angle(np.exp(1j * (gn.final_state.thetas - gauge - thetas_star))), 0.0, atol=1e-4
    )


def test_toy_file_matches_grid_oracle():
    g = parse_g2o(os.path.join(DATA, "noisy_toy.g2o"))
    f_star, _ = brute_force_minimum(g)
    assert gauss_newton(g, odometry_init(g), 100).final_chi2 == pytest.approx(f_star, abs=1e-6)


@given(st.integers(0, 10_000))
@settings(max_examples=10)
def test_lm_trace_monotone(seed):
    g, _ = generate(EnvParams(n=60, sigma_R=0.3, sigma_t=0.05, d=3, lc=0.5, seed=seed))
    rep = levenberg_marquardt(g, odometry_init(g), 30)
    assert len(rep.chi2_trace) == rep.iterations + 1
    assert all(b <= a for a, b in zip(rep.chi2_trace, rep.chi2_trace[1:]))
    assert rep.iterations <= 30


def test_gn_and_lm_agree_on_zero_noise():
    g, gt = generate(EnvParams(n=120, sigma_R=0.0, sigma_t=0.0, d=3, lc=0.5, seed=12))
    init = SolveState(odometry_init(g).thetas + 0.01 * np.sin(np.arange(120)), odometry_init(g).translations)
    init.thetas[0] = 0.0
    gn = gauss_newton(g, init, 50)
    lm = levenberg_marquardt(g, init, 50)
    assert gn.final_chi2 <= 1e-8 and lm.final_chi2 <= 1e-8
    assert abs(gn.final_chi2 - lm.final_chi2) <= 1e-8


def test_singular_system_reports_failure():
    # node 2 is not connected to anything: its block of H is zero
    edges = [EdgeSE2(0, 1, (1, 0), 0.0, np.eye(3))]
    g = PoseGraph(SolveState.zeros(3), edges)
    rep = gauss_newton(g, g.estimate, 10)
    assert not rep.converged
    assert "factorization" in rep.message
    assert len(rep.chi2_trace) >= 1


def test_report_fields():
    g, _ = generate(EnvParams(n=40, sigma_R=0.1, sigma_t=0.1, seed=2))
    rep = gauss_newton(g, odometry_init(g), 3)
    assert rep.iterations <= 3
    assert rep.wall_time >= 0.0
    assert rep.final_chi2 == pytest.approx(objective_F(g, rep.final_state))


# --- translation LLS ----------------------------------------------------------------


def test_lls_recovers_ground_truth():
    g, gt = generate(EnvParams(n=200, sigma_R=0.0, sigma_t=0.0, d=3, lc=0.5, seed=6))
    t = translation_lls(g, gt.thetas)
    np.testing.assert_allclose(t, gt.translations, atol=1e-9)


def test_lls_single_edge():
    g = PoseGraph(SolveState.zeros(2), [EdgeSE2(0, 1, (1.0, 2.0), 0.0, np.eye(3))])
    np.testing.assert_allclose(translation_lls(g, np.zeros(2)), [[0, 0], [1, 2]], atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_lls_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    g, _ = generate(EnvParams(n=50, sigma_R=0.3, sigma_t=0.1, d=2, lc=0.7, seed=seed))
    thetas = rng.uniform(-np.pi, np.pi, 50)
    np.testing.assert_allclose(translation_lls(g, thetas), dense_translation_lls(g, thetas), atol=1e-9)


def test_lls_is_exact_minimizer(rng):
    g, _ = generate(EnvParams(n=25, sigma_R=0.3, sigma_t=0.1, seed=10))
    thetas = g.estimate.thetas + rng.normal(scale=0.2, size=25)
    t = translation_lls(g, thetas)
    base = translation_objective(g, thetas, t)
    for k in range(1, 25):
        for axis in range(2):
            for h in (1e-3, -1e-3):
                p = t.copy()
                p[k, axis] += h
                assert translation_objective(g, thetas, p) > base


def test_lls_disconnected_raises():
    g = PoseGraph(SolveState.zeros(4), [EdgeSE2(0, 1, (1, 0), 0, np.eye(3)), EdgeSE2(2, 3, (1, 0), 0, np.eye(3))])
    with pytest.raises(SingularSystemError):
        translation_lls(g, np.zeros(4))


def test_lls_on_noiseless_twin_with_noisy_thetas_is_consistent():
    g, gt = generate(EnvParams(n=40, sigma_R=0.2, sigma_t=0.05, seed=1))
    twin = noiseless_twin(g, gt)
    t = translation_lls(twin, gt.thetas)
    assert objective_F(twin, SolveState(gt.thetas, t)) <= 1e-12
