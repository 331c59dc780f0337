"""Synthetic fixtures: demo hands, clouds, grasps, pose datasets and keypoint arcs.

``generate_fixtures(seed, out_dir)`` writes everything to disk together with
run configs and a ``manifest.json`` of SHA-256 checksums; the same seed
always yields the same bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import brentq

from . import io
from .geometry import RigidTransform, TargetPoseTrajectory
from .handmodel import KinematicChain, chain_from_dict, fingertip_positions, link_positions, load_demo_chain
from .pointcloud import OrientedPointCloud

# ---------------------------------------------------------------- demo hands


def _joint(name, jtype, parent, child, xyz=(0, 0, 0), rpy=(0, 0, 0), axis=None, limit=None):
    j = {"name": name, "type": jtype, "parent": parent, "child": child, "origin": {"xyz": list(xyz), "rpy": list(rpy)}}
    if jtype != "fixed":
        j["axis"] = list(axis)
        j["limit"] = list(limit)
    return j


def one_dof_dict(length: float = 1.0) -> dict:
    return {
        "name": "one_dof",
        "links": ["base", "arm", "tip"],
        "joints": [
            _joint("j1", "revolute", "base", "arm", axis=(0, 0, 1), limit=(-np.pi, np.pi)),
            _joint("tip_fixed", "fixed", "arm", "tip", xyz=(length, 0, 0)),
        ],
        "fingertip_links": ["tip"],
    }


def planar2_dict(l1: float = 1.0, l2: float = 0.5) -> dict:
    return {
        "name": "planar2",
        "links": ["base", "upper", "lower", "tip"],
        "joints": [
            _joint("j1", "revolute", "base", "upper", axis=(0, 0, 1), limit=(-np.pi, np.pi)),
            _joint("j2", "revolute", "upper", "lower", xyz=(l1, 0, 0), axis=(0, 0, 1), limit=(-np.pi, np.pi)),
            _joint("tip_fixed", "fixed", "lower", "tip", xyz=(l2, 0, 0)),
        ],
        "fingertip_links": ["tip"],
    }


GRIPPER_MOUNT_RADIUS = 1.0
GRIPPER_LINKS = (0.8, 0.6)


def gripper3_dict() -> dict:
    """Three two-joint fingers on a palm, 120 degrees apart, pointing up (+z)."""
    links = ["palm"]
    joints = []
    l1, l2 = GRIPPER_LINKS
    for f in range(3):
        phi = 2.0 * np.pi * f / 3.0
        mount = (GRIPPER_MOUNT_RADIUS * np.cos(phi), GRIPPER_MOUNT_RADIUS * np.sin(phi), 0.0)
        # Positive rotation curls the finger toward the palm axis.
        axis = (float(np.sin(phi)), float(-np.cos(phi)), 0.0)
        names = [f"f{f}_proximal", f"f{f}_distal", f"f{f}_tip"]
        links += names
        joints += [
            _joint(f"f{f}_j1", "revolute", "palm", names[0], xyz=mount, axis=axis, limit=(-0.8, 1.5)),
            _joint(f"f{f}_j2", "revolute", names[0], names[1], xyz=(0, 0, l1), axis=axis, limit=(-0.3, 2.0)),
            _joint(f"f{f}_tip_fixed", "fixed", names[1], names[2], xyz=(0, 0, l2)),
        ]
    return {"name": "gripper3", "links": links, "joints": joints, "fingertip_links": [f"f{f}_tip" for f in range(3)], "palm_link": "palm"}


HAND20_FINGERS = {
    # name: (mount xyz, mount rpy, phalanx lengths)
    "thumb": ((0.025, 0.035, -0.01), (0.0, 0.3, 0.9), (0.045, 0.032, 0.028)),
    "index": ((0.09, 0.03, 0.0), (0.0, 0.0, 0.05), (0.045, 0.026, 0.022)),
    "middle": ((0.095, 0.01, 0.0), (0.0, 0.0, 0.0), (0.05, 0.03, 0.024)),
    "ring": ((0.09, -0.01, 0.0), (0.0, 0.0, -0.05), (0.046, 0.028, 0.022)),
    "little": ((0.08, -0.03, 0.0), (0.0, 0.0, -0.1), (0.036, 0.022, 0.02)),
}


def hand20_dict() -> dict:
    """Five fingers with abduction, MCP, PIP and DIP joints: 20 dof."""
    links = ["palm"]
    joints = []
    for f, (xyz, rpy, (lp, lm, ld)) in HAND20_FINGERS.items():
        names = [f"{f}_base", f"{f}_proximal", f"{f}_middle", f"{f}_distal", f"{f}_tip"]
        links += names
        joints += [
            _joint(f"{f}_abd", "revolute", "palm", names[0], xyz=xyz, rpy=rpy, axis=(0, 0, 1), limit=(-0.35, 0.35)),
            _joint(f"{f}_mcp", "revolute", names[0], names[1], axis=(0, 1, 0), limit=(-0.3, 1.6)),
            _joint(f"{f}_pip", "revolute", names[1], names[2], xyz=(lp, 0, 0), axis=(0, 1, 0), limit=(0.0, 1.8)),
            _joint(f"{f}_dip", "revolute", names[2], names[3], xyz=(lm, 0, 0), axis=(0, 1, 0), limit=(0.0, 1.4)),
            _joint(f"{f}_tip_fixed", "fixed", names[3], names[4], xyz=(ld, 0, 0)),
        ]
    return {"name": "hand20", "links": links, "joints": joints, "fingertip_links": [f"{f}_tip" for f in HAND20_FINGERS], "palm_link": "palm"}


DEMO_BUILDERS = {"one_dof": one_dof_dict, "planar2": planar2_dict, "gripper3": gripper3_dict, "hand20": hand20_dict}


def demo_model_json(name: str) -> str:
    return json.dumps(DEMO_BUILDERS[name](), indent=2) + "\n"


def hand20_keypoint_links() -> list[str]:
    """Middle, distal and tip link of every finger: enough to pin all 20 joints."""
    return [f"{f}_{part}" for f in HAND20_FINGERS for part in ("middle", "distal", "tip")]


def random_chain_doc(rng: np.random.Generator, n_joints: int = 6, n_tips: int = 2) -> dict:
    """Model document for a random tree of revolute/prismatic/fixed joints with ``n_tips`` branches.

    ``n_joints`` counts sampled joints, fixed ones included, so the chain has at most that many DOF.
    """
    links = ["base"]
    joints = []
    per_branch = max(1, n_joints // n_tips)
    tips = []
    k = 0
    for b in range(n_tips):
        parent = "base"
        for s in range(per_branch):
            child = f"b{b}_l{s}"
            jtype = rng.choice(["revolute", "revolute", "revolute", "prismatic", "fixed"])
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            xyz = rng.uniform(-0.3, 0.3, 3) + np.array([0.0, 0.0, 0.2])
            rpy = rng.uniform(-np.pi, np.pi, 3)
            joints.append(_joint(f"j{k}", str(jtype), parent, child, xyz=xyz.tolist(), rpy=rpy.tolist(), axis=axis.tolist(), limit=(-2.0, 2.0)))
            links.append(child)
            parent = child
            k += 1
        tip = f"b{b}_tip"
        joints.append(_joint(f"j{k}", "fixed", parent, tip, xyz=rng.uniform(-0.2, 0.2, 3).tolist()))
        links.append(tip)
        tips.append(tip)
        k += 1
    doc = {"name": "random", "links": links, "joints": joints, "fingertip_links": tips}
    if all(j["type"] == "fixed" for j in joints):
        return random_chain_doc(rng, n_joints, n_tips)
    return doc


def random_chain(rng: np.random.Generator, n_joints: int = 6, n_tips: int = 2) -> KinematicChain:
    return chain_from_dict(random_chain_doc(rng, n_joints, n_tips))


# ---------------------------------------------------------------- clouds


def sphere_cloud(n: int = 4000, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> OrientedPointCloud:
    """Fibonacci-lattice sphere with exact radial normals."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    normals = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return OrientedPointCloud(np.asarray(center) + radius * normals, normals)


def box_cloud(size=(0.2, 0.1, 0.05), per_side: int = 12) -> OrientedPointCloud:
    """Axis-aligned box surface samples with face normals (edges excluded)."""
    half = np.asarray(size, dtype=float) / 2.0
    g = (np.arange(per_side) + 0.5) / per_side * 2.0 - 1.0
    uu, vv = np.meshgrid(g, g, indexing="ij")
    pts, nrm = [], []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        for sign in (-1.0, 1.0):
            p = np.zeros((uu.size, 3))
            p[:, axis] = sign * half[axis]
            p[:, a] = uu.ravel() * half[a]
            p[:, b] = vv.ravel() * half[b]
            n = np.zeros_like(p)
            n[:, axis] = sign
            pts.append(p)
            nrm.append(n)
    return OrientedPointCloud(np.vstack(pts), np.vstack(nrm))


# ---------------------------------------------------------------- sphere grasp

SPHERE_HEIGHT = 1.6
GRASP_OFFSET = 0.005


def gripper_grasp(chain: KinematicChain, t_obj: RigidTransform, offset: float = GRASP_OFFSET, radius: float = 1.0, distal=(0.4, 0.5, 0.6)) -> np.ndarray:
    """Gripper configuration whose fingertips sit ``offset`` outside the sphere.

    The distal joint of finger ``f`` is fixed to ``distal[f]`` and the proximal
    joint is solved by bracketing.
    """
    q = np.zeros(chain.dof)
    center = t_obj.translation
    for f in range(3):
        q[2 * f + 1] = distal[f]

        def gap(theta, f=f):
            qq = q.copy()
            qq[2 * f] = theta
            return np.linalg.norm(fingertip_positions(chain, qq)[f] - center) - (radius + offset)

        q[2 * f] = brentq(gap, -0.8, 0.3, xtol=1e-15, rtol=1e-15, maxiter=200)
    return q


def sphere_grasp_sequence(n_frames: int = 6, chain: KinematicChain | None = None):
    """Generated gripper trajectory with fingertips 5 mm outside a slowly rising sphere."""
    chain = chain if chain is not None else load_demo_chain("gripper3")
    poses = [RigidTransform.from_translation(0.0, 0.0, SPHERE_HEIGHT + 0.004 * t) for t in range(n_frames)]
    frames = []
    for t, pose in enumerate(poses):
        distal = tuple(0.4 + 0.1 * f + 0.02 * t for f in range(3))
        frames.append(gripper_grasp(chain, pose, distal=distal))
    return np.array(frames), TargetPoseTrajectory(tuple(poses), 30.0)


# ---------------------------------------------------------------- pose datasets

SINUSOID_AMPLITUDES = np.array([0.8, 0.6, 0.5, 0.4])
SINUSOID_LAGS = np.array([0.0, 0.5, 1.0, 1.5])
PAIR_MATRIX = np.array(
    [
        [1.0, 0.2, 0.0, 0.0],
        [0.0, 0.9, 0.3, 0.0],
        [0.1, 0.0, 1.1, 0.2],
        [0.0, -0.2, 0.0, 0.8],
    ]
)


def sinusoid_sequences(rng: np.random.Generator, n_sequences: int = 12, n_frames: int = 64, rate: float = 30.0) -> list[np.ndarray]:
    """Coordinated 4-joint sinusoids, one random phase and one of two speeds per sequence."""
    t = np.arange(n_frames) / rate
    out = []
    for _ in range(n_sequences):
        speed = rng.choice([1.0, 2.0])
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out.append(SINUSOID_AMPLITUDES * np.sin(np.pi * speed * t[:, None] + phase + SINUSOID_LAGS))
    return out


def paired_sequences(sequences, matrix=PAIR_MATRIX) -> list[np.ndarray]:
    """Second morphology whose joints are a fixed linear map of the first."""
    return [s @ np.asarray(matrix).T for s in sequences]


# ---------------------------------------------------------------- keypoint arcs


def hand20_reference_pose() -> np.ndarray:
    """Mid-range flexion, inside every joint limit."""
    per_finger = np.array([0.05, 0.5, 0.6, 0.4])
    return np.tile(per_finger, 5)


def hand20_keypoint_arc(chain: KinematicChain, n_frames: int = 12, amplitude: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Smooth closing motion: joint trajectory and the matching keypoints."""
    q0 = hand20_reference_pose()
    s = np.sin(np.linspace(0.0, np.pi / 2, n_frames))
    direction = np.tile(np.array([0.0, 1.0, 1.0, 0.6]), 5)
    qs = np.array([q0 + amplitude * si * direction for si in s])
    links = hand20_keypoint_links()
    kps = np.array([link_positions(chain, q, links) for q in qs])
    return qs, kps


def retarget_spec_doc(chain: KinematicChain) -> dict:
    links = hand20_keypoint_links()
    tips = set(chain.fingertip_links)
    return {
        "correspondences": [[link, i] for i, link in enumerate(links)],
        "keypoint_weights": [1.0 if link in tips else 0.5 for link in links],
        "device_alignment": np.eye(4).reshape(-1).tolist(),
        "scales": [1.0] * len(links),
        "lambda_smooth": 0.0,
    }


# ---------------------------------------------------------------- writer


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_fixtures(seed: int, out_dir) -> dict:
    """Write the fixture tree under ``out_dir`` and return the manifest."""
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    for sub in ("hands", "clouds", "refine", "vq", "retarget", "metrics"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    for name in DEMO_BUILDERS:
        (out / "hands" / f"{name}.json").write_text(demo_model_json(name))

    sphere = sphere_cloud()
    io.write_cloud_ply(out / "clouds" / "sphere.ply", sphere)
    box = box_cloud()
    io.write_cloud_xyz(out / "clouds" / "box.xyz", box.points, box.normals)

    gripper = load_demo_chain("gripper3")
    q_gen, poses = sphere_grasp_sequence(6, gripper)
    io.write_joint_trajectory(out / "refine" / "generated.txt", q_gen)
    io.write_pose_trajectory(out / "refine" / "target_poses.txt", poses)
    io.write_pose_trajectory(out / "refine" / "extrinsics.txt", TargetPoseTrajectory((RigidTransform(),), 30.0))

    ref = sinusoid_sequences(rng, 12)
    held = sinusoid_sequences(rng, 4)
    for group, seqs in (("ref", ref), ("new", paired_sequences(ref)), ("heldout_ref", held), ("heldout_new", paired_sequences(held))):
        for i, s in enumerate(seqs):
            io.write_joint_trajectory(out / "vq" / f"{group}_{i:02d}.txt", s)

    hand = load_demo_chain("hand20")
    qs, kps = hand20_keypoint_arc(hand)
    names = hand20_keypoint_links()
    io.write_keypoints(out / "retarget" / "arc_keypoints.txt", kps, names)
    io.write_joint_trajectory(out / "retarget" / "arc_joints.txt", qs)
    (out / "retarget" / "spec.yaml").write_text(yaml.safe_dump(retarget_spec_doc(hand), sort_keys=True))
    io.write_joint_trajectory(out / "retarget" / "q_init.txt", hand20_reference_pose()[None, :])

    gt_kp = kps
    offset = np.array([0.003, 0.004, 0.0])
    io.write_keypoints(out / "metrics" / "gt_00.txt", gt_kp, names)
    io.write_keypoints(out / "metrics" / "offset_00.txt", gt_kp + offset, names)
    root = TargetPoseTrajectory(tuple(RigidTransform.from_axis_angle((0, 0, 1), 0.05 * t, (0.01 * t, 0, 0)) for t in range(len(qs))), 30.0)
    io.write_pose_trajectory(out / "metrics" / "gt_root_00.txt", root)

    _write_configs(out)

    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "seed": seed,
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
        "fixtures": FIXTURE_NOTES,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


FIXTURE_NOTES = {
    "sphere_grasp": {
        "files": ["clouds/sphere.ply", "refine/generated.txt", "refine/target_poses.txt", "hands/gripper3.json"],
        "expect": "refined max |d| < 1 mm within 50 inner iterations",
    },
    "noise_study": {
        "files": ["clouds/sphere.ply", "refine/generated.txt"],
        "expect": "sigma=2 mm, 20 seeds: median deviation (asymmetric) <= median deviation (smooth |d|)",
    },
    "sinusoid_vq": {
        "files": ["vq/ref_*.txt"],
        "expect": "200 epochs: final reconstruction MSE <= 0.1 x initial; 15 chunks per 64-frame sequence (W=8, stride=4)",
    },
    "linear_pair": {
        "files": ["vq/new_*.txt", "vq/heldout_*.txt"],
        "expect": "post-alignment distillation <= 0.1 x pre; translation error <= 1.2 x reconstruction error",
    },
    "keypoint_arc": {
        "files": ["retarget/arc_keypoints.txt", "retarget/arc_joints.txt", "retarget/spec.yaml", "hands/hand20.json"],
        "expect": "targets from known q: per-joint error < 1e-3 rad",
    },
    "metrics_offset": {
        "files": ["metrics/gt_00.txt", "metrics/offset_00.txt"],
        "expect": "MPJPE = 5 mm (offset (3, 4, 0) mm)",
    },
}


def _write_configs(out: Path):
    refine = {
        "inputs": {
            "hand_model": "hands/gripper3.json",
            "trajectory": "refine/generated.txt",
            "cloud": "clouds/sphere.ply",
            "target_poses": "refine/target_poses.txt",
        },
        "refine": {"priors": {"w_gen": 0.01, "w_vel": 0.005, "w_acc": 0.0025}},
    }
    noise = {
        "include": ["refine.yaml"],
        "noise_study": {"sigma_levels": [0.0, 0.001, 0.002], "seeds": 20},
    }
    vq_ref = {
        "inputs": {"dataset": [f"vq/ref_{i:02d}.txt" for i in range(12)]},
        "vq": {
            "spec": {"K": 32, "d_z": 16, "window": 8, "stride": 4, "dof": 4, "hidden": [64, 64]},
            "train": {"learning_rate": 0.03, "epochs": 200},
        },
    }
    vq_new = {
        "include": ["vq_ref.yaml"],
        "inputs": {
            "dataset": [f"vq/new_{i:02d}.txt" for i in range(12)],
            "dataset_ref": [f"vq/ref_{i:02d}.txt" for i in range(12)],
            "codebook": "out/vq_ref/codebook.json",
        },
    }
    translate = {
        "include": ["vq_ref.yaml"],
        "inputs": {
            "dataset": [f"vq/heldout_ref_{i:02d}.txt" for i in range(4)],
            "dataset_target": [f"vq/heldout_new_{i:02d}.txt" for i in range(4)],
            "codebook": "out/vq_new/codebook.json",
        },
        "vq": {"source": "ref", "target": "new"},
    }
    retarget = {
        "inputs": {
            "hand_model": "hands/hand20.json",
            "keypoints": "retarget/arc_keypoints.txt",
            "retarget_spec": "retarget/spec.yaml",
            "q_init": "retarget/q_init.txt",
        },
    }
    metrics = {
        "inputs": {
            "pred_keypoints": ["metrics/offset_00.txt"],
            "gt_keypoints": ["metrics/gt_00.txt"],
            "pred_root_poses": ["metrics/gt_root_00.txt"],
            "gt_root_poses": ["metrics/gt_root_00.txt"],
        },
    }
    normals = {"inputs": {"cloud": "clouds/box.xyz"}, "normals": {"k_neighbors": 8}}
    refresh = {"include": ["vq_ref.yaml"], "inputs": {"codebook": "out/vq_ref/codebook.json"}}
    for name, doc in (
        ("refine", refine),
        ("noise", noise),
        ("vq_ref", vq_ref),
        ("vq_new", vq_new),
        ("translate", translate),
        ("retarget", retarget),
        ("metrics", metrics),
        ("normals", normals),
        ("refresh_stats", refresh),
    ):
        doc = dict(doc, out_dir=f"out/{name}")
        (out / f"{name}.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))
