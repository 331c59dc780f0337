import json

import numpy as np
import pytest

from dexrefine.fixtures import (
    GRASP_OFFSET,
    SPHERE_HEIGHT,
    generate_fixtures,
    hand20_keypoint_arc,
    paired_sequences,
    random_chain,
    sinusoid_sequences,
    sphere_cloud,
    sphere_grasp_sequence,
)
from dexrefine.handmodel import fingertip_positions, link_positions, load_demo_chain
from dexrefine.io import read_cloud, read_joint_trajectory
from dexrefine.tokenizer.codebook import PoseChunkSpec, make_chunks


def test_manifest_checksums_are_seed_deterministic(fixture_tree, tmp_path):
    again = generate_fixtures(0, tmp_path / "a")
    manifest = json.loads((fixture_tree / "manifest.json").read_text())
    assert again["files"] == manifest["files"]
    other = generate_fixtures(1, tmp_path / "b")
    assert other["files"] != manifest["files"]


def test_manifest_lists_every_file(fixture_tree):
    manifest = json.loads((fixture_tree / "manifest.json").read_text())
    on_disk = {p.relative_to(fixture_tree).as_posix() for p in fixture_tree.rglob("*") if p.is_file()}
    assert set(manifest["files"]) == on_disk - {"manifest.json"}


def test_sphere_cloud_geometry():
    c = sphere_cloud(500, 0.3, (1, 2, 3))
    np.testing.assert_allclose(np.linalg.norm(c.points - [1, 2, 3], axis=1), 0.3, atol=1e-15)
    np.testing.assert_allclose(c.points - [1, 2, 3], 0.3 * c.normals, atol=1e-15)


def test_sphere_grasp_offset():
    chain = load_demo_chain("gripper3")
    q, poses = sphere_grasp_sequence(4, chain)
    for qt, pose in zip(q, poses):
        tips = fingertip_positions(chain, qt)
        assert pose.translation[2] >= SPHERE_HEIGHT
        np.testing.assert_allclose(np.linalg.norm(tips - pose.translation, axis=1), 1.0 + GRASP_OFFSET, atol=1e-12)
        assert np.all(qt >= chain.lower) and np.all(qt <= chain.upper)


def test_sinusoid_chunk_counts(fixture_tree):
    spec = PoseChunkSpec(8, 4, 4)
    for i in range(12):
        seq = read_joint_trajectory(fixture_tree / "vq" / f"ref_{i:02d}.txt")
        assert seq.shape == (64, 4)
        assert len(make_chunks(seq, spec)) == 15


def test_paired_sequences_are_linear_map():
    seqs = sinusoid_sequences(np.random.default_rng(0), 2)
    new = paired_sequences(seqs, np.eye(4) * 2)
    np.testing.assert_array_equal(new[0], 2 * seqs[0])


def test_keypoint_arc_matches_fk():
    chain = load_demo_chain("hand20")
    qs, kps = hand20_keypoint_arc(chain, 5)
    assert kps.shape == (5, 15, 3)
    assert np.all(qs >= chain.lower) and np.all(qs <= chain.upper)
    from dexrefine.fixtures import hand20_keypoint_links

    np.testing.assert_array_equal(kps[3], link_positions(chain, qs[3], hand20_keypoint_links()))


def test_cloud_files_readable(fixture_tree):
    assert len(read_cloud(fixture_tree / "clouds" / "sphere.ply")) > 100
    assert len(read_cloud(fixture_tree / "clouds" / "box.xyz")) > 100


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_chain_is_valid(seed):
    chain = random_chain(np.random.default_rng(seed), 6, 2)
    assert 1 <= chain.dof <= 6
    assert len(chain.fingertip_links) == 2
