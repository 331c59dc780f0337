import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dexrefine.energy import ContactKernelParams, PriorWeights, temporal_energy
from dexrefine.fixtures import sphere_cloud, sphere_grasp_sequence
from dexrefine.geometry import RigidTransform, TargetPoseTrajectory
from dexrefine.handmodel import HandTrajectory, fingertip_positions, load_demo_chain
from dexrefine.pointcloud import OrientedPointCloud, build_index
from dexrefine.refiner import (
    FrameProblem,
    RefinementConfig,
    RefinementError,
    SingularSystemError,
    lm_update,
    noise_study,
    refine_frame,
    refine_sequence,
    solve_normal_equations,
)

seeds = st.integers(0, 2**31 - 1)


@pytest.fixture(scope="module")
def grasp():
    chain = load_demo_chain("gripper3")
    q, poses = sphere_grasp_sequence(4, chain)
    return chain, q, poses, build_index(sphere_cloud())


def random_system(rng, d, f):
    j = rng.standard_normal((f, d))
    r = rng.standard_normal(f)
    w = rng.uniform(0, 1, d)
    g = rng.standard_normal(d)
    return j, r, w, g


def test_full_step_to_generator():
    v = np.array([0.3, -0.1, 0.2])
    dq = solve_normal_equations(np.zeros((0, 3)), np.zeros(0), PriorWeights(1.0, 0.0, 0.0), 0.0, v)
    np.testing.assert_allclose(dq, -v, atol=1e-15)


@given(seeds, st.integers(1, 30))
def test_solver_matches_dense_solve(seed, d):
    rng = np.random.default_rng(seed)
    j, r, w, g = random_system(rng, d, rng.integers(1, 40))
    lam = float(rng.uniform(0, 1))
    dq = solve_normal_equations(j, r, w, lam, g)
    a = j.T @ j + np.diag(w + lam)
    rhs = -j.T @ r - g
    assert np.linalg.norm(a @ dq - rhs) <= 1e-10 * np.linalg.norm(rhs)
    np.testing.assert_allclose(dq, np.linalg.solve(a, rhs), rtol=1e-8, atol=1e-12)


def test_heavy_damping_vanishes(rng):
    j, r, w, g = random_system(rng, 12, 20)
    dq = solve_normal_equations(j, r, w, 1e9, g)
    assert np.linalg.norm(dq) <= np.linalg.norm(-j.T @ r - g) / 1e9


def test_prior_weights_object_sums_diagonals(rng):
    j, r, _, g = random_system(rng, 4, 6)
    pw = PriorWeights(0.1, 0.2, 0.3)
    np.testing.assert_allclose(solve_normal_equations(j, r, pw, 0.01, g), solve_normal_equations(j, r, np.full(4, 0.6), 0.01, g))


def test_singular_system():
    j = np.array([[1.0, 1.0]])
    with pytest.raises(SingularSystemError):
        solve_normal_equations(j, [1.0], np.zeros(2), 0.0, np.zeros(2))
    with pytest.raises(SingularSystemError):
        solve_normal_equations(np.zeros((0, 2)), np.zeros(0), PriorWeights(0.0, 0.0, 0.0), 0.0, np.zeros(2))


def test_lm_update_rules():
    cfg = RefinementConfig()
    assert lm_update(1.0, True, cfg) == 0.5
    assert lm_update(1.0, False, cfg) == 10.0
    assert lm_update(1e-12, True, cfg) == 1e-12
    lam, seen = 1e-3, []
    for _ in range(5):
        lam = lm_update(lam, False, cfg)
        seen.append(lam)
    assert all(b > a for a, b in zip(seen, seen[1:]))


def test_config_validation():
    for bad in (dict(lambda_up=1.0), dict(lambda_down=1.0), dict(lambda_init=-1), dict(step_tol=0), dict(max_inner_iters=0)):
        with pytest.raises(ValueError):
            RefinementConfig(**bad)


def on_plane_setup():
    chain = load_demo_chain("one_dof")
    n = np.array([[0.0, 0.0, 1.0]])
    g = np.linspace(-2, 2, 41)
    pts = np.array([[x, y, 0.0] for x in g for y in g])
    cloud = OrientedPointCloud(pts, np.repeat(n, len(pts), axis=0))
    return chain, cloud


def test_optimal_frame_unchanged():
    chain, cloud = on_plane_setup()
    q = np.array([0.3])
    out, tr = refine_frame(q, q, q, chain, build_index(cloud), RigidTransform(), RefinementConfig())
    assert np.linalg.norm(out - q) <= RefinementConfig().step_tol
    assert tr.final_energy == 0.0


def test_sphere_grasp_reaches_surface(grasp):
    chain, q, poses, index = grasp
    cfg = RefinementConfig(priors=PriorWeights(0.01, 0.005, 0.0025))
    for t in range(len(q)):
        _, tr = refine_frame(q[t], q[t], q[t], chain, index, poses[t], cfg)
        assert max(abs(d) for d in tr.distances) < 1e-3
        assert len(tr.iterations) <= 50


def test_accepted_steps_decrease_energy(rng, grasp):
    chain, q, poses, index = grasp
    for _ in range(20):
        cfg = RefinementConfig(
            kernel=ContactKernelParams(lambda_c=float(rng.uniform(1, 500))),
            priors=PriorWeights(*rng.uniform(0, 1, 3)),
        )
        qg = q[0] + rng.normal(scale=0.1, size=chain.dof)
        _, tr = refine_frame(qg, qg + 0.01, qg - 0.01, chain, index, poses[0], cfg)
        for it in tr.iterations:
            if it.accepted:
                assert it.energy_after < it.energy_before
        assert tr.final_energy <= tr.initial_energy


def test_boundary_prior_zero_at_start(grasp):
    chain, q, poses, index = grasp
    problem = FrameProblem(q[0], q[0], q[0], chain, index, poses[0], RefinementConfig())
    cfg = problem.config.priors
    assert temporal_energy(problem.q_gen, problem.q_prev, problem.q_prev2, cfg.w_vel, cfg.w_acc) == 0.0


def test_sequence_single_frame_matches_frame(grasp):
    chain, q, poses, index = grasp
    seq, trace = refine_sequence(HandTrajectory(q[:1], chain), index, TargetPoseTrajectory(poses.frames[:1], 30.0), chain)
    single, _ = refine_frame(q[0], q[0], q[0], chain, index, poses[0])
    np.testing.assert_array_equal(seq.frames[0], single)
    assert len(trace.frames) == 1


def test_sequence_constant_on_surface():
    chain, cloud = on_plane_setup()
    q = np.full((5, 1), 0.2)
    out, _ = refine_sequence(q, cloud, TargetPoseTrajectory.constant(RigidTransform(), 5), chain)
    np.testing.assert_array_equal(out.frames, q)


def test_sequence_smooths_without_contact(rng):
    chain = load_demo_chain("gripper3")
    t = np.linspace(0, 2 * np.pi, 30)
    q = 0.3 * np.sin(t)[:, None] * np.ones(chain.dof) + rng.normal(scale=0.02, size=(30, chain.dof))
    cfg = RefinementConfig(kernel=ContactKernelParams(lambda_c=0.0), priors=PriorWeights(1.0, 0.5, 2.0))
    out, _ = refine_sequence(q, sphere_cloud(200), TargetPoseTrajectory.constant(RigidTransform(), 30), chain, cfg)
    before = np.abs(np.diff(q, 2, axis=0)).max()
    after = np.abs(np.diff(out.frames, 2, axis=0)).max()
    assert after <= before


def test_sequence_is_causal_and_deterministic(grasp):
    chain, q, poses, index = grasp
    full, tr1 = refine_sequence(q, index, poses, chain)
    head, _ = refine_sequence(q[:2], index, TargetPoseTrajectory(poses.frames[:2], 30.0), chain)
    np.testing.assert_array_equal(full.frames[:2], head.frames)
    again, tr2 = refine_sequence(q, index, poses, chain)
    np.testing.assert_array_equal(full.frames, again.frames)
    assert [f.records() for f in tr1.frames] == [f.records() for f in tr2.frames]


def test_sequence_length_mismatch(grasp):
    chain, q, poses, index = grasp
    with pytest.raises(ValueError):
        refine_sequence(q[:2], index, poses, chain)


def test_non_finite_energy_aborts(grasp):
    chain, q, poses, index = grasp
    with pytest.raises(RefinementError):
        refine_frame(np.full(6, np.nan), q[0], q[0], chain, index, poses[0], RefinementConfig(clamp_to_limits=False))


def test_noise_study_rows_and_zero_sigma(grasp):
    chain, q, poses, _ = grasp
    cfg = RefinementConfig()
    rows, summary = noise_study(sphere_cloud(), [0.0, 0.001], 3, chain, cfg, q[0], poses[0], rng=0)
    assert len(rows) == 2 * 3 * 2
    assert all(r.deviation <= cfg.step_tol for r in rows if r.sigma == 0.0)
    assert [s["sigma"] for s in summary] == [0.0, 0.001]


def test_grasp_fixture_starts_outside(grasp):
    chain, q, poses, _ = grasp
    for t in range(len(q)):
        tips = fingertip_positions(chain, q[t])
        np.testing.assert_allclose(np.linalg.norm(tips - poses[t].translation, axis=1), 1.005, atol=1e-12)
