import math

import numpy as np
import pytest

from wcslp.constellation import CiGeometry, PskConstellation, build_ci_geometry
from wcslp.realify import build_real_channel, build_real_distortion
from wcslp.solver import (ProblemInstance, SecularPoleError, SolverConfig,
                          SolverState, approx_mu, apgd_t_step,
                          count_secular_roots, mu_bracket, nominal_slp, phi,
                          relaxed_objective, secular_value, solve, solve_batch,
                          solve_mu, update_u, worst_case_w)
from wcslp.validation import random_instance, random_point

QPSK = PskConstellation(4)


def scalar_instance(beta=1.0, eps=1.0, gamma=4.0, offset=None):
    """n_t = n_r = 1, h = 1 (so H = I2), G = I."""
    chan = build_real_channel([[1.0 + 0j]])
    g = build_real_distortion([[1.0 + 0j]])
    const = PskConstellation(4, offset)
    geom = build_ci_geometry([0], [gamma], [1.0], const)
    return ProblemInstance(chan, g, geom, beta, eps)


def scalar_point(inst):
    """(u, t) for the scalar instance giving q = (1, 0) at beta = 1."""
    phi0 = phi(np.zeros(2), inst.geometry)
    u = (phi0 + np.array([1.0, 0.0])) / 2.0
    return u, np.zeros(2)


def test_phi_examples():
    geom = CiGeometry(a=np.eye(2), d=2 * np.eye(2), w=np.eye(2),
                      s=np.array([1.0, 0.0]), gammas=np.array([4.0]),
                      sigmas=np.array([1.0]), symbols=np.array([0]),
                      constellation=QPSK)
    np.testing.assert_allclose(phi(np.zeros(2), geom), [2, 0])
    np.testing.assert_allclose(phi(np.array([1.0, 2.0]), geom), [3, 2])
    with pytest.raises(ValueError):
        phi(np.array([-0.1, 0.0]), geom)


def test_phi_linearity():
    rng = np.random.default_rng(0)
    inst = random_instance(rng, 3)
    t1 = np.abs(rng.standard_normal(6))
    t2 = np.abs(rng.standard_normal(6))
    lhs = phi(t1 + t2, inst.geometry) - phi(t2, inst.geometry)
    np.testing.assert_allclose(lhs, inst.geometry.a_inv @ t1, atol=1e-12)


def test_relaxed_objective_zero_point():
    inst = scalar_instance(beta=7.0)
    ds = inst.geometry.d @ inst.geometry.s
    got = relaxed_objective(np.zeros(2), np.zeros(2), np.zeros(2), inst)
    assert got == pytest.approx(7.0 * float(ds @ ds))


def test_relaxed_objective_against_expanded_form():
    rng = np.random.default_rng(1)
    for _ in range(20):
        inst = random_instance(rng, 3, beta=5.0, random_g=True)
        u, t = random_point(rng, inst)
        w = rng.standard_normal(6)
        x = inst.g @ u + w
        target = phi(t, inst.geometry)
        expected = (x @ x + inst.beta * (x @ inst.hth @ x
                                         - 2 * (inst.h @ x) @ target
                                         + target @ target))
        got = relaxed_objective(u, t, w, inst)
        assert got == pytest.approx(expected, rel=1e-10)


def test_secular_scalar_closed_form():
    inst = scalar_instance(beta=1.0, eps=1.0)
    u, t = scalar_point(inst)
    assert secular_value(3.0, u, t, inst) == pytest.approx(0.0, abs=1e-12)
    assert secular_value(1.0, u, t, inst) == pytest.approx(0.0, abs=1e-12)
    assert secular_value(1e9, u, t, inst) == pytest.approx(-1.0, rel=1e-6)
    with pytest.raises(SecularPoleError):
        secular_value(2.0, u, t, inst)


def test_secular_degenerate_q():
    inst = scalar_instance(beta=1.0, eps=0.5)
    # u chosen so that P G u = H^T Phi(0) exactly
    u = phi(np.zeros(2), inst.geometry) / 2.0
    assert secular_value(5.0, u, np.zeros(2), inst) == pytest.approx(-0.25)


def test_mu_bracket_examples():
    inst = scalar_instance(beta=1.0, eps=1.0)
    u, t = scalar_point(inst)
    lo, hi = mu_bracket(u, t, inst)
    assert (lo, hi) == (pytest.approx(2.0), pytest.approx(3.0))
    inst2 = scalar_instance(beta=1.0, eps=0.01)
    lo2, hi2 = mu_bracket(u, t, inst2)
    assert (lo2, hi2) == (pytest.approx(2.0), pytest.approx(102.0))
    # doubling ||q|| doubles the bracket width
    u4 = (phi(np.zeros(2), inst.geometry) + np.array([2.0, 0.0])) / 2.0
    lo4, hi4 = mu_bracket(u4, t, inst)
    assert hi4 - lo4 == pytest.approx(2 * (hi - lo))


def test_solve_mu_scalar_roots():
    inst = scalar_instance(beta=1.0, eps=1.0)
    u, t = scalar_point(inst)
    assert solve_mu(u, t, inst) == pytest.approx(3.0, abs=1e-9)
    inst2 = scalar_instance(beta=1.0, eps=0.01)
    assert solve_mu(u, t, inst2) == pytest.approx(102.0, rel=1e-10)


def test_solve_mu_above_pole_on_random_instances():
    rng = np.random.default_rng(2)
    for i in range(100):
        inst = random_instance(rng, (2, 4)[i % 2], beta=(1.0, 10.0)[i % 2],
                               eps=(0.1, 0.56)[i % 2])
        u, t = random_point(rng, inst)
        mu = solve_mu(u, t, inst)
        lo, hi = mu_bracket(u, t, inst)
        assert lo < mu <= hi * (1 + 1e-12)


def test_approx_mu_values_and_scaling():
    inst = scalar_instance(beta=1.0, eps=1.0)
    u, t = scalar_point(inst)
    assert approx_mu(u, t, inst) == pytest.approx(2 * 4 ** (1 / 3), rel=1e-12)
    inst2 = scalar_instance(beta=1.0, eps=0.01)
    assert approx_mu(u, t, inst2) == pytest.approx(2 * 4e4 ** (1 / 3), rel=1e-12)
    inst3 = scalar_instance(beta=1.0, eps=0.005)
    assert (approx_mu(u, t, inst3) / approx_mu(u, t, inst2)
            == pytest.approx(2 ** (2 / 3), rel=1e-12))


def test_worst_case_w_scalar():
    inst = scalar_instance(beta=1.0, eps=1.0)
    u, t = scalar_point(inst)
    w = worst_case_w(u, t, 3.0, inst)
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-12)
    assert np.linalg.norm(w) == pytest.approx(inst.epsilon)


def test_worst_case_w_norm_and_dominance():
    rng = np.random.default_rng(3)
    for i in range(10):
        inst = random_instance(rng, 3, beta=(1.0, 10.0)[i % 2], eps=0.3)
        u, t = random_point(rng, inst)
        mu = solve_mu(u, t, inst)
        w = worst_case_w(u, t, mu, inst)
        assert np.linalg.norm(w) == pytest.approx(inst.epsilon, rel=1e-8)
        samples = rng.standard_normal((2000, 6))
        samples *= inst.epsilon / np.linalg.norm(samples, axis=1)[:, None]
        best = np.max(relaxed_objective(u, t, samples, inst))
        star = relaxed_objective(u, t, w, inst)
        assert star >= best - 1e-9 * abs(star)


def test_worst_case_w_degenerate_is_top_eigvec():
    inst = scalar_instance(beta=1.0, eps=0.7)
    u = phi(np.zeros(2), inst.geometry) / 2.0  # q = 0
    w = worst_case_w(u, np.zeros(2), solve_mu(u, np.zeros(2), inst), inst)
    assert np.linalg.norm(w) == pytest.approx(0.7)


def test_apgd_step_identity_geometry():
    # A = I makes B = 0 and the step exact: t = max(residual, 0)
    geom = CiGeometry(a=np.eye(2), d=2 * np.eye(2), w=np.eye(2),
                      s=np.array([1.0, 0.0]), gammas=np.array([4.0]),
                      sigmas=np.array([1.0]), symbols=np.array([0]),
                      constellation=QPSK)
    chan = build_real_channel([[1.0 + 0j]])
    g = build_real_distortion([[1.0 + 0j]])
    inst = ProblemInstance(chan, g, geom, 1.0, 0.0)
    # choose u so that H (G u + w) - D s = (0.5, -0.3)
    u = geom.d @ geom.s + np.array([0.5, -0.3])
    state = SolverState(u=u, t=np.zeros(2), z=np.zeros(2), w=np.zeros(2))
    t_new, z_new = apgd_t_step(state, inst)
    np.testing.assert_allclose(t_new, [0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(z_new, t_new)  # momentum is 0 for A = I
    assert t_new.min() >= 0


def test_apgd_fixed_point():
    rng = np.random.default_rng(4)
    inst = random_instance(rng, 3, eps=0.0)
    t0 = np.abs(rng.standard_normal(6))
    # pick u with H G u - D s = A^{-1} t0 so the gradient vanishes at t0
    target = inst.ds + inst.geometry.a_inv @ t0
    u = np.linalg.solve(inst.g, np.linalg.lstsq(inst.h, target, rcond=None)[0])
    residual = inst.h @ inst.g @ u - target
    assert np.linalg.norm(residual) < 1e-9  # square channel: exact solve
    state = SolverState(u=u, t=t0, z=t0, w=np.zeros(6))
    t_new, _ = apgd_t_step(state, inst)
    np.testing.assert_allclose(t_new, t0, atol=1e-9)


def test_update_u_example():
    inst = scalar_instance(beta=1.0, gamma=4.0, offset=0.0)
    u = update_u(np.zeros(2), np.array([0.1, 0.0]), inst)
    np.testing.assert_allclose(u, [0.9, 0.0], atol=1e-12)


def test_update_u_fixed_point_identity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        inst = random_instance(rng, 4, beta=10.0, random_g=True)
        t = np.abs(rng.standard_normal(8))
        w = rng.standard_normal(8) * 0.3
        u = update_u(t, w, inst)
        target = inst.apply_p_inv(inst.h.T @ phi(t, inst.geometry))
        resid = np.linalg.norm(inst.g @ u + w - target)
        assert resid <= 1e-10 * np.linalg.norm(phi(t, inst.geometry))


def test_update_u_large_beta_matches_pinv():
    rng = np.random.default_rng(6)
    inst = random_instance(rng, 3, beta=1e12, eps=0.0)
    t = np.abs(rng.standard_normal(6))
    u = update_u(t, np.zeros(6), inst)
    expected = np.linalg.pinv(inst.h) @ phi(t, inst.geometry)
    np.testing.assert_allclose(inst.g @ u, expected, rtol=1e-6, atol=1e-9)


def test_solve_eps_zero_keeps_w_zero():
    rng = np.random.default_rng(7)
    inst = random_instance(rng, 3, beta=10.0, eps=0.0)
    report = solve(inst, SolverConfig(max_iterations=500, outer_tol=1e-9))
    assert report.converged
    np.testing.assert_array_equal(report.w, np.zeros(6))
    assert report.mu is None
    assert report.trace.size == report.iterations
    assert report.t.min() >= 0


def test_solve_scalar_baseline_consistency():
    # single-user case: the relaxed design at huge beta and tiny eps recovers
    # the hard-CI nominal solution
    inst = scalar_instance(beta=1e6, eps=1e-9)
    report = solve(inst, SolverConfig(max_iterations=2000, outer_tol=1e-10))
    x_nom, t_nom = nominal_slp(inst.channel, inst.geometry)
    power = float(report.u @ report.u)
    assert power == pytest.approx(float(x_nom @ x_nom), rel=1e-3)
    assert power == pytest.approx(4.0, rel=1e-3)
    np.testing.assert_allclose(t_nom, 0.0, atol=1e-9)


def test_solve_invariants_on_moderate_instance():
    rng = np.random.default_rng(8)
    inst = random_instance(rng, 4, beta=1.0, eps=0.56)
    report = solve(inst)
    assert report.converged
    assert report.t.min() >= 0
    assert np.linalg.norm(report.w) == pytest.approx(0.56, rel=1e-6)
    assert report.w_norm_relerr_max <= 1e-6
    assert report.fixed_point_residual_max <= 1e-10


def test_solve_nonconvergence_is_reported_not_raised():
    rng = np.random.default_rng(9)
    inst = random_instance(rng, 4, beta=100.0, eps=0.56)
    report = solve(inst, SolverConfig(max_iterations=5, outer_tol=1e-12))
    assert not report.converged
    assert report.iterations == 5


def test_solve_batch_matches_scalar_solve():
    rng = np.random.default_rng(10)
    h = (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))) / math.sqrt(2)
    chan = build_real_channel(h)
    g = build_real_distortion(np.eye(4, dtype=complex))
    geoms = [build_ci_geometry(rng.integers(0, 4, 4), np.full(4, 10.0),
                               np.ones(4), QPSK) for _ in range(6)]
    proto = ProblemInstance(chan, g, geoms[0], 1.0, 0.56)
    cfg = SolverConfig(max_iterations=500, outer_tol=1e-6)
    batch = solve_batch(proto, geoms, cfg)
    for j, geom in enumerate(geoms):
        rep = solve(proto.with_geometry(geom), cfg)
        assert rep.iterations == batch.iterations[j]
        assert rep.converged == batch.converged[j]
        np.testing.assert_allclose(rep.u, batch.u[j], atol=1e-9)
        np.testing.assert_allclose(rep.w, batch.w[j], atol=1e-9)


def test_nominal_slp_hand_example():
    chan = build_real_channel([[1.0 + 0j]])
    geom = build_ci_geometry([0], [4.0], [1.0], QPSK)
    x, t = nominal_slp(chan, geom)
    np.testing.assert_allclose(x, [math.sqrt(2), math.sqrt(2)], atol=1e-12)
    np.testing.assert_allclose(t, 0.0, atol=1e-12)
    assert float(x @ x) == pytest.approx(4.0)


def test_nominal_slp_feasibility_and_oracle():
    def projected_gradient_nnls(design, target, tol=1e-12, iters=200_000):
        # plain projected gradient, step 1/L; independent oracle
        gram = design.T @ design
        rhs = design.T @ target
        step = 1.0 / np.linalg.eigvalsh(gram)[-1]
        t = np.zeros(design.shape[1])
        for _ in range(iters):
            t_next = np.maximum(t - step * (gram @ t - rhs), 0.0)
            if np.max(np.abs(t_next - t)) < tol:
                return t_next
            t = t_next
        return t

    rng = np.random.default_rng(11)
    for _ in range(10):
        h = (rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3)))
        chan = build_real_channel(h / math.sqrt(2))
        geom = build_ci_geometry(rng.integers(0, 4, 2), np.full(2, 8.0),
                                 np.ones(2), QPSK)
        x, t = nominal_slp(chan, geom)
        target = geom.d @ geom.s + geom.a_inv @ t
        np.testing.assert_allclose(chan.matrix @ x, target, atol=1e-9)
        assert t.min() >= 0
        # compare against the independent projected-gradient oracle
        hht = chan.matrix @ chan.matrix.T
        chol = np.linalg.cholesky(hht)
        design = np.linalg.solve(chol, geom.a_inv)
        rhs = -np.linalg.solve(chol, geom.d @ geom.s)
        t_ref = projected_gradient_nnls(design, rhs)
        np.testing.assert_allclose(t, t_ref, atol=1e-6)


def test_nominal_slp_rejects_rank_deficient():
    chan = build_real_channel([[1.0 + 0j, 0.0], [1.0 + 0j, 0.0]])
    geom = build_ci_geometry([0, 1], [4.0, 4.0], [1.0, 1.0], QPSK)
    with pytest.raises(ValueError):
        nominal_slp(chan, geom)


def test_count_secular_roots_scalar():
    inst = scalar_instance(beta=1.0, eps=1.0)
    u, t = scalar_point(inst)
    assert count_secular_roots(u, t, inst) == 2


def test_count_secular_roots_four_root_case():
    # two well-separated pole clusters; small q makes the interior valley of
    # the secular function dip below zero, adding a root pair
    chan = build_real_channel([[1.0 + 0j, 0.0], [0.0, 0.2 + 0j]])
    g = build_real_distortion(np.eye(2, dtype=complex))
    geom = build_ci_geometry([0, 0], [4.0, 4.0], [1.0, 1.0], QPSK)
    inst = ProblemInstance(chan, g, geom, 1e3, 1.0)
    rng = np.random.default_rng(12)
    t = np.zeros(4)
    u0 = update_u(t, np.zeros(4), inst)  # q = 0 at this point
    found = set()
    for _ in range(50):
        u = u0 + 0.02 * rng.standard_normal(4)
        found.add(count_secular_roots(u, t, inst))
    assert found <= {2, 4}
    assert 4 in found


def test_instance_validation():
    chan = build_real_channel([[1.0 + 0j]])
    geom = build_ci_geometry([0], [4.0], [1.0], QPSK)
    with pytest.raises(ValueError):
        ProblemInstance(chan, build_real_distortion([[0.0 + 0j]]), geom, 1.0, 0.1)
    with pytest.raises(ValueError):
        ProblemInstance(chan, build_real_distortion([[1.0 + 0j]]), geom, -1.0, 0.1)
    with pytest.raises(ValueError):
        ProblemInstance(chan, build_real_distortion([[1.0 + 0j]]), geom, 1.0, -0.1)
