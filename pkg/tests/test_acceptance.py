"""The 17 acceptance criteria, one test each, at the stated tolerances.

Each test records a ``criterion N: PASS|FAIL`` line (printed in the terminal
summary and, with ``-s``, inline) before asserting.
"""

import math
import shutil
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

import dexrefine.refiner as refiner_mod
from conftest import ACCEPTANCE_LINES
from dexrefine.cli import run
from dexrefine.config import load_config
from dexrefine.energy import ContactKernelParams, PriorWeights, kernel, kernel_derivative, temporal_energy
from dexrefine.fixtures import generate_fixtures, hand20_reference_pose, retarget_spec_doc
from dexrefine.geometry import TargetPoseTrajectory
from dexrefine.handmodel import HandTrajectory, link_positions, load_demo_chain
from dexrefine.io import read_cloud, read_joint_trajectory, read_pose_trajectory
from dexrefine.metrics import diversity, fid, fol, fpl, mpjpe
from dexrefine.pointcloud import build_index
from dexrefine.refiner import RefinementConfig, refine_frame, refine_sequence, solve_normal_equations
from dexrefine.retarget import RetargetSpec, retarget_frame, retarget_spec_from_dict
from dexrefine.tokenizer.codebook import MASK_TOKEN, Codebook, PoseChunkSpec, make_chunks, mask_ratio_schedule, mask_sequence, quantize_many, refresh_cold_codes
from dexrefine.tokenizer.training import reconstruction_mse, train_new_morphology, train_reference
from test_energy import contact_jacobian_fd_error
from test_refiner import random_system
from test_tokenizer import ste_gradient_check, two_blob_case

ONE = ContactKernelParams(alpha=1.0, k=1.0)


def record(n: int, ok: bool, detail: str = ""):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# ---------------------------------------------------------------- refinement


@pytest.mark.xfail(
    strict=True,
    reason="the slope-gap bound |f'(h)-f'(-h)| <= 2h cannot hold: with alpha=k=1 the gap is h + expm1(h) = 2h + h^2/2 + O(h^3) > 2h",
)
def test_criterion_01_kernel_regularity():
    hs = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    with Timer() as t:
        f0 = kernel(0.0, ONE) == 0.0
        values = all(abs(kernel(h, ONE) - kernel(-h, ONE)) <= h * h for h in hs)
        slopes = all(abs(kernel_derivative(h, ONE) - kernel_derivative(-h, ONE)) <= 2 * h for h in hs)
        h = 1e-5
        plus = (kernel_derivative(h, ONE) - kernel_derivative(0.0, ONE)) / h
        minus = (kernel_derivative(0.0, ONE) - kernel_derivative(-h, ONE)) / h
        second = all(1 - 1e-4 <= v <= 1 + 1e-4 for v in (plus, minus))
    worst = max(abs(kernel_derivative(h, ONE) - kernel_derivative(-h, ONE)) / (2 * h) for h in hs)
    detail = (
        f"f(0)=0 {f0}, value symmetry {values}, slope gap <= 2h {slopes} (max gap/2h = {worst:.6f}), "
        f"f''(0+)={plus:.8f} f''(0-)={minus:.8f} {second}, {t.elapsed:.3f}s"
    )
    record(1, f0 and values and slopes and second and t.elapsed < 1.0, detail)


def test_criterion_02_kernel_point_values():
    with Timer() as t:
        a = kernel(1.0, ONE)
        b = kernel(-1.0, ONE)
    ok = a == 0.5 and abs(b - (math.e - 2)) <= 1e-12 and t.elapsed < 1.0
    record(2, ok, f"f(1)={a!r}, |f(-1)-(e-2)|={abs(b - (math.e - 2)):.2e}")


def test_criterion_03_contact_jacobian():
    rng = np.random.default_rng(3)
    with Timer() as t:
        worst = max(contact_jacobian_fd_error(rng) for _ in range(100))
    record(3, worst <= 1e-5 and t.elapsed < 10.0, f"worst relative error {worst:.2e} over 100 cases, {t.elapsed:.2f}s")


def test_criterion_04_normal_equations():
    rng = np.random.default_rng(4)
    worst_res, worst_damp = 0.0, 0.0
    with Timer() as t:
        for _ in range(200):
            d = int(rng.integers(1, 31))
            j, r, w, g = random_system(rng, d, int(rng.integers(1, 40)))
            lam = float(rng.uniform(0, 1))
            dq = solve_normal_equations(j, r, w, lam, g)
            a = j.T @ j + np.diag(w + lam)
            rhs = -j.T @ r - g
            # Residual against the solver, and distance to an independent dense solve.
            worst_res = max(worst_res, np.linalg.norm(a @ dq - rhs) / np.linalg.norm(rhs))
            assert np.allclose(dq, np.linalg.solve(a, rhs), rtol=1e-8, atol=1e-12)
            heavy = solve_normal_equations(j, r, w, 1e9, g)
            worst_damp = max(worst_damp, np.linalg.norm(heavy) / (np.linalg.norm(rhs) / 1e9))
    ok = worst_res <= 1e-10 and worst_damp <= 1.0 and t.elapsed < 5.0
    record(4, ok, f"max relative residual {worst_res:.2e}, max ||dq||*lambda/||rhs|| {worst_damp:.4f}, {t.elapsed:.2f}s")


@pytest.fixture(scope="module")
def grasp(fixture_tree):
    chain = load_demo_chain("gripper3")
    q = read_joint_trajectory(fixture_tree / "refine" / "generated.txt")
    poses = read_pose_trajectory(fixture_tree / "refine" / "target_poses.txt")
    cloud = read_cloud(fixture_tree / "clouds" / "sphere.ply")
    return chain, q, poses, build_index(cloud)


def test_criterion_05_monotone_lm(grasp):
    chain, q, poses, index = grasp
    rng = np.random.default_rng(5)
    bad, accepted = 0, 0
    with Timer() as t:
        for i in range(100):
            cfg = RefinementConfig(
                kernel=ContactKernelParams(lambda_c=float(rng.uniform(1, 500)), k=float(rng.uniform(0.5, 5))),
                priors=PriorWeights(*rng.uniform(0, 1, 3)),
            )
            f = i % len(q)
            qg = np.clip(q[f] + rng.normal(scale=0.1, size=chain.dof), chain.lower, chain.upper)
            qp = np.clip(qg + rng.normal(scale=0.02, size=chain.dof), chain.lower, chain.upper)
            qp2 = np.clip(qp + rng.normal(scale=0.02, size=chain.dof), chain.lower, chain.upper)
            _, tr = refine_frame(qg, qp, qp2, chain, index, poses[f], cfg)
            for it in tr.iterations:
                if it.accepted:
                    accepted += 1
                    bad += not it.energy_after < it.energy_before
            bad += not tr.final_energy <= tr.initial_energy
    record(5, bad == 0 and t.elapsed < 30.0, f"{accepted} accepted steps over 100 frames, {bad} violations, {t.elapsed:.2f}s")


def test_criterion_06_sphere_grasp(grasp):
    chain, q, poses, index = grasp
    cfg = RefinementConfig()
    results = []
    for f in range(len(q)):
        with Timer() as t:
            _, tr = refine_frame(q[f], q[f], q[f], chain, index, poses[f], cfg)
        results.append((max(abs(d) for d in tr.distances), len(tr.iterations), t.elapsed))
    worst_d = max(r[0] for r in results)
    worst_it = max(r[1] for r in results)
    worst_t = max(r[2] for r in results)
    ok = worst_d < 1e-3 and worst_it <= 50 and worst_t < 1.0
    record(6, ok, f"{len(q)} frames: max|d| {worst_d * 1000:.4f} mm, <= {worst_it} iterations, <= {worst_t:.3f}s/frame")


def test_criterion_07_boundary_prior(grasp, monkeypatch):
    chain, q, poses, index = grasp
    seen = []
    real = refiner_mod.refine_frame

    def spy(q_gen, q_prev, q_prev2, *args, **kwargs):
        seen.append((np.array(q_gen), np.array(q_prev), np.array(q_prev2)))
        return real(q_gen, q_prev, q_prev2, *args, **kwargs)

    monkeypatch.setattr(refiner_mod, "refine_frame", spy)
    refine_sequence(HandTrajectory(q[:2], chain), index, TargetPoseTrajectory(poses.frames[:2]), chain)
    q_gen, q_prev, q_prev2 = seen[0]
    w = PriorWeights()
    e = temporal_energy(q_gen, q_prev, q_prev2, w.w_vel, w.w_acc)
    record(7, e == 0.0, f"temporal energy at initialisation of frame 0 = {e!r}")


def test_criterion_08_noise_study(fixture_tree):
    cfg = load_config(fixture_tree / "noise.yaml")
    chain = load_demo_chain("gripper3")
    q_gen = read_joint_trajectory(cfg.inputs.trajectory)[0]
    pose = read_pose_trajectory(cfg.inputs.target_poses)[0]
    cloud = read_cloud(cfg.inputs.cloud)
    with Timer() as t:
        _, summary = refiner_mod.noise_study(cloud, [0.002], 20, chain, cfg.refinement_config(), q_gen, pose, np.random.default_rng(cfg.seed))
    s = summary[0]
    a, b = s["median_deviation_asymmetric"], s["median_deviation_smooth_abs"]
    record(8, a <= b and t.elapsed < 60.0, f"sigma 2 mm, 20 seeds: median {a * 1000:.4f} mm (asymmetric) vs {b * 1000:.4f} mm (smooth |d|), {t.elapsed:.1f}s")


def test_criterion_09_retarget_recovery():
    chain = load_demo_chain("hand20")
    spec = retarget_spec_from_dict(retarget_spec_doc(chain), chain.fingertip_links)
    rng = np.random.default_rng(9)
    cfg = RefinementConfig()
    worst, worst_pin = 0.0, 0.0
    with Timer() as t:
        for _ in range(5):
            q_star = rng.uniform(chain.lower + 0.05, chain.upper - 0.05)
            targets = link_positions(chain, q_star, spec.links)
            q = retarget_frame(targets, q_star + rng.normal(scale=0.05, size=chain.dof), chain, spec, cfg)
            worst = max(worst, float(np.max(np.abs(q - q_star))))
        stiff = RetargetSpec(spec.correspondences, spec.keypoint_weights, lambda_smooth=1e9)
        q_prev = hand20_reference_pose()
        targets = link_positions(chain, q_prev + 0.2, spec.links)
        worst_pin = float(np.linalg.norm(retarget_frame(targets, q_prev, chain, stiff, cfg) - q_prev))
    ok = worst < 1e-3 and worst_pin <= cfg.step_tol and t.elapsed < 5.0
    record(9, ok, f"max joint error {worst:.2e} rad, pinned step {worst_pin:.2e}, {t.elapsed:.2f}s")


# ---------------------------------------------------------------- tokenizer


def test_criterion_10_quantizer_exact():
    rng = np.random.default_rng(10)
    codes = rng.standard_normal((8192, 64))
    codes[5000:5100] = codes[100:200]  # duplicated rows: ties must go to the lower index
    queries = rng.standard_normal((1000, 64))
    queries[:100] = codes[5000:5100]
    queries[100:200] = codes[100:200] + 1e-12
    cb = Codebook(codes)
    with Timer() as t:
        got = quantize_many(cb, queries)
    expect = np.array([int(np.argmin(((codes - z) ** 2).sum(axis=1))) for z in queries])
    mismatches = int(np.count_nonzero(got != expect))
    record(10, mismatches == 0 and t.elapsed < 5.0, f"{mismatches} mismatches in 1000 queries, {t.elapsed:.2f}s")


def test_criterion_11_cold_code_refresh():
    rng = np.random.default_rng(11)
    with Timer() as t:
        cb = Codebook(rng.standard_normal((6, 4)))
        buf, ma, mb = two_blob_case(rng)
        out = refresh_cold_codes(cb, [4, 1], buf, seed=3)
        warm = [0, 2, 3, 5]
        warm_ok = out.codes[warm].tobytes() == cb.codes[warm].tobytes()
        err = max(np.max(np.abs(out.codes[1] - mb)), np.max(np.abs(out.codes[4] - ma)))
        small = refresh_cold_codes(cb, [0, 1, 2, 3, 5], rng.standard_normal((3, 4)), seed=0)
        changed = int(np.count_nonzero(np.any(small.codes != cb.codes, axis=1)))
    ok = warm_ok and err <= 1e-6 and changed == 3 and t.elapsed < 5.0
    record(11, ok, f"warm rows bitwise equal {warm_ok}, centroid error {err:.2e}, replaced {changed} = min(5, 3), {t.elapsed:.2f}s")


@pytest.fixture(scope="module")
def vq_data(fixture_tree):
    cfg = load_config(fixture_tree / "vq_new.yaml")
    cspec = PoseChunkSpec(cfg.vq.spec.window, cfg.vq.spec.stride, cfg.vq.spec.dof)

    def chunks(paths):
        return np.vstack([make_chunks(read_joint_trajectory(p), cspec) for p in paths])

    return cfg, chunks


def test_criterion_12_vq_training(vq_data):
    cfg, chunks = vq_data
    x = chunks(cfg.inputs.dataset_ref)
    with Timer() as t:
        enc, dec, cb, hist = train_reference(x, cfg.tokenizer_spec(), cfg.train_config())
    enc2, dec2, cb2, hist2 = train_reference(x, cfg.tokenizer_spec(), cfg.train_config())
    same = cb.codes.tobytes() == cb2.codes.tobytes() and all(
        a.tobytes() == b.tobytes() for a, b in zip(enc.parameters() + dec.parameters(), enc2.parameters() + dec2.parameters())
    )
    same = same and [e.loss for e in hist.epochs] == [e.loss for e in hist2.epochs]
    ratio = hist.final_mse / hist.initial_mse
    ok = ratio <= 0.1 and same and t.elapsed < 60.0
    record(12, ok, f"D=4 W=8 K=32, 200 epochs: MSE {hist.initial_mse:.4g} -> {hist.final_mse:.4g} (ratio {ratio:.4f}), byte-identical rerun {same}, {t.elapsed:.1f}s")


def test_criterion_13_straight_through():
    with Timer() as t:
        err = max(ste_gradient_check(np.random.default_rng(s)) for s in range(5))
    record(13, err <= 1e-4 and t.elapsed < 10.0, f"max relative gradient error {err:.2e}, {t.elapsed:.2f}s")


def test_criterion_14_distill_and_translate(vq_data, fixture_tree):
    cfg, chunks = vq_data
    x_ref, x_new = chunks(cfg.inputs.dataset_ref), chunks(cfg.inputs.dataset)
    spec, tcfg = cfg.tokenizer_spec(), cfg.train_config()
    with Timer() as t:
        enc_ref, _, cb, _ = train_reference(x_ref, spec, tcfg)
        enc_new, dec_new, hist = train_new_morphology(x_new, x_ref, enc_ref, cb, spec, tcfg)
    dcfg = load_config(fixture_tree / "translate.yaml")
    h_ref, h_new = chunks(dcfg.inputs.dataset), chunks(dcfg.inputs.dataset_target)
    translated = dec_new.forward(cb.codes[quantize_many(cb, enc_ref.forward(h_ref))])
    tr_mse = float(np.mean((translated - h_new) ** 2))
    rec_mse = reconstruction_mse(enc_new, dec_new, cb, h_new)
    d_ratio = hist.distill_after / hist.distill_before
    ok = d_ratio <= 0.1 and tr_mse <= 1.2 * rec_mse and t.elapsed < 120.0
    record(
        14,
        ok,
        f"distill {hist.distill_before:.4g} -> {hist.distill_after:.4g} (ratio {d_ratio:.2e}); "
        f"held-out translation MSE {tr_mse:.4g} vs reconstruction {rec_mse:.4g} (ratio {tr_mse / rec_mse:.3f}), {t.elapsed:.1f}s",
    )


def test_criterion_15_masking_curriculum():
    anchors = (mask_ratio_schedule(0.1), mask_ratio_schedule(0.5), mask_ratio_schedule(0.9))
    tokens = np.random.default_rng(15).integers(0, 32, 10_000)
    frac = float(np.mean(mask_sequence(tokens, 0.5, 15) == MASK_TOKEN))
    ok = anchors == (0.0, 0.5, 1.0) and 0.48 <= frac <= 0.52
    record(15, ok, f"anchors {anchors}, masked fraction {frac:.4f}")


# ---------------------------------------------------------------- metrics


def test_criterion_16_metrics():
    rng = np.random.default_rng(16)
    checks = {}
    with Timer() as t:
        gt = rng.standard_normal((6, 5, 3))
        checks["mpjpe identity"] = mpjpe(gt, gt) == 0.0
        checks["mpjpe offset"] = abs(mpjpe(gt + [0.003, 0.004, 0.0], gt) - 5.0) <= 1e-9
        checks["fpl identity"] = fpl([1, 2, 3], [1, 2, 3]) == 0.0
        checks["fpl offset"] = abs(fpl([0.003, 0.004, 0.0], [0, 0, 0]) - 5.0) <= 1e-9
        rz = Rotation.from_euler("z", 90, degrees=True).as_matrix()
        checks["fol 90"] = abs(fol(rz, np.eye(3)) - 90.0) <= 1e-6
        checks["fol clamp"] = fol(np.eye(3) * (1 + 1e-12 / 3), np.eye(3)) == 0.0
        z = rng.standard_normal((60, 8))
        checks["fid self"] = fid(z, z) <= 1e-6
        d = rng.standard_normal(8)
        checks["fid shift"] = abs(fid(z, z + d) - d @ d) <= 1e-6
        a, b = rng.normal(1, 2, (40, 1)), rng.normal(0, 0.5, (30, 1))
        sa, sb = a.std(ddof=1), b.std(ddof=1)
        closed = (a.mean() - b.mean()) ** 2 + sa**2 + sb**2 - 2 * sa * sb
        checks["fid 1-d"] = abs(fid(a, b) - closed) <= 1e-8
        g = rng.standard_normal((50, 8)) @ rng.standard_normal((8, 8)) + 1.0
        f = fid(z, g)
        checks["fid symmetry"] = abs(fid(g, z) - f) <= 1e-6
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        checks["fid orthogonal"] = abs(fid(z @ q.T, g @ q.T) - f) <= 1e-6
        zz = rng.standard_normal((50, 8))
        brute = sum(np.linalg.norm(zz[i] - zz[j]) for i in range(50) for j in range(i + 1, 50)) * 2 / (50 * 49)
        checks["diversity"] = abs(diversity(zz) - brute) <= 1e-10
    failed = [k for k, v in checks.items() if not v]
    record(16, not failed and t.elapsed < 10.0, f"{len(checks) - len(failed)}/{len(checks)} checks" + (f", failed: {failed}" if failed else "") + f", {t.elapsed:.2f}s")


# ---------------------------------------------------------------- CLI


PIPELINE = [
    (["refine"], "refine.yaml", "refine"),
    (["retarget"], "retarget.yaml", "retarget"),
    (["vq", "train-ref"], "vq_ref.yaml", "vq_ref"),
    (["vq", "train-new"], "vq_new.yaml", "vq_new"),
    (["vq", "translate"], "translate.yaml", "translate"),
    (["vq", "refresh-stats"], "refresh_stats.yaml", "refresh_stats"),
    (["metrics"], "metrics.yaml", "metrics"),
    (["noise-study"], "noise.yaml", "noise"),
    (["normals"], "normals.yaml", "normals"),
]


def test_criterion_17_cli_determinism(fixture_tree, tmp_path):
    root = tmp_path / "fx"
    shutil.copytree(fixture_tree, root)
    differing, codes = [], []
    for cmd, cfg, name in PIPELINE:
        codes.append(run([*cmd, "--config", str(root / cfg)]))
        rerun = tmp_path / "rerun" / name
        codes.append(run([*cmd, "--config", str(root / cfg), "--out-dir", str(rerun)]))
        first = root / "out" / name
        names = sorted(p.name for p in first.iterdir())
        if names != sorted(p.name for p in rerun.iterdir()):
            differing.append(f"{name}: file sets differ")
        differing += [f"{name}/{n}" for n in names if (first / n).read_bytes() != (rerun / n).read_bytes()]
    a = generate_fixtures(0, tmp_path / "gen_a")
    b = generate_fixtures(0, tmp_path / "gen_b")
    if a["files"] != b["files"]:
        differing.append("fixtures generate")
    ok = not differing and all(c == 0 for c in codes)
    record(17, ok, f"{len(PIPELINE)} commands plus fixture generation rerun" + (f"; differing: {differing}" if differing else " byte-identical"))
