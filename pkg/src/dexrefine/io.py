"""Readers and writers for trajectories, clouds, keypoints, archives and reports.

Formats
-------
pose trajectory
    ``<frame_count> <frame_rate>`` header, then one line per frame holding
    the 16 entries of the 4x4 transform, row-major.
joint trajectory
    ``<frame_count> <dof>`` header, then one line of ``dof`` values per frame.
keypoint trajectory
    ``keypoints: name_1 ... name_K`` header, then ``K`` rows of ``x y z``
    per frame, frames back to back.
cloud
    ASCII PLY with vertex properties ``x y z [nx ny nz]``, or plain
    whitespace-separated rows of 3 or 6 numbers.
codebook archive
    JSON: format tag, version, tokenizer spec, codebook rows, named nets.
reports
    JSON lines, one record per line, keys sorted.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, TargetPoseTrajectory
from .pointcloud import OrientedPointCloud, estimate_normals
from .tokenizer.codebook import Codebook
from .tokenizer.nets import CoderNet

ARCHIVE_FORMAT = "dexrefine-codebook"
ARCHIVE_VERSION = 1


class DataFileError(ValueError):
    """A data file is missing or malformed; the message names the file."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _lines(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise DataFileError(f"file not found: {path}")
    return [ln.strip() for ln in path.read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def _floats(line: str, path, lineno: int) -> list[float]:
    try:
        return [float(v) for v in line.split()]
    except ValueError as exc:
        raise DataFileError(f"{path}: line {lineno}: {exc}") from exc


def write_pose_trajectory(path, traj: TargetPoseTrajectory):
    rows = [f"{len(traj)} {_fmt(traj.frame_rate)}"]
    for t in traj:
        rows.append(" ".join(_fmt(v) for v in t.as_matrix().reshape(-1)))
    Path(path).write_text("\n".join(rows) + "\n")


def read_pose_trajectory(path) -> TargetPoseTrajectory:
    lines = _lines(path)
    if not lines:
        raise DataFileError(f"{path}: empty pose trajectory")
    head = _floats(lines[0], path, 1)
    if len(head) != 2:
        raise DataFileError(f"{path}: header must be '<frame_count> <frame_rate>'")
    n, rate = int(head[0]), head[1]
    if len(lines) - 1 != n:
        raise DataFileError(f"{path}: header announces {n} frames, found {len(lines) - 1}")
    frames = []
    for i, ln in enumerate(lines[1:], start=2):
        vals = _floats(ln, path, i)
        if len(vals) != 16:
            raise DataFileError(f"{path}: line {i}: expected 16 numbers, got {len(vals)}")
        try:
            frames.append(RigidTransform.from_matrix(vals))
        except ValueError as exc:
            raise DataFileError(f"{path}: line {i}: {exc}") from exc
    return TargetPoseTrajectory(tuple(frames), rate)


def write_joint_trajectory(path, frames):
    f = np.asarray(getattr(frames, "frames", frames), dtype=float)
    rows = [f"{f.shape[0]} {f.shape[1]}"] + [" ".join(_fmt(v) for v in row) for row in f]
    Path(path).write_text("\n".join(rows) + "\n")


def read_joint_trajectory(path) -> np.ndarray:
    lines = _lines(path)
    if not lines:
        raise DataFileError(f"{path}: empty joint trajectory")
    head = _floats(lines[0], path, 1)
    if len(head) != 2:
        raise DataFileError(f"{path}: header must be '<frame_count> <dof>'")
    n, dof = int(head[0]), int(head[1])
    rows = [_floats(ln, path, i) for i, ln in enumerate(lines[1:], start=2)]
    if len(rows) != n or any(len(r) != dof for r in rows):
        raise DataFileError(f"{path}: expected {n} rows of {dof} values")
    if n == 0:
        raise DataFileError(f"{path}: no frames")
    return np.array(rows, dtype=float)


def write_keypoints(path, frames, names):
    f = np.asarray(frames, dtype=float)
    if f.ndim != 3 or f.shape[1] != len(names) or f.shape[2] != 3:
        raise ValueError("keypoint frames must have shape (T, K, 3) matching the names")
    rows = ["keypoints: " + " ".join(names)]
    for frame in f:
        rows += [" ".join(_fmt(v) for v in p) for p in frame]
    Path(path).write_text("\n".join(rows) + "\n")


def read_keypoints(path) -> tuple[np.ndarray, list[str]]:
    lines = _lines(path)
    if not lines or not lines[0].startswith("keypoints:"):
        raise DataFileError(f"{path}: first line must be 'keypoints: <names>'")
    names = lines[0].split(":", 1)[1].split()
    if not names:
        raise DataFileError(f"{path}: no keypoint names in header")
    rows = [_floats(ln, path, i) for i, ln in enumerate(lines[1:], start=2)]
    if any(len(r) != 3 for r in rows):
        raise DataFileError(f"{path}: keypoint rows must hold 3 numbers")
    if not rows or len(rows) % len(names):
        raise DataFileError(f"{path}: {len(rows)} rows is not a positive multiple of {len(names)} keypoints")
    return np.array(rows, dtype=float).reshape(-1, len(names), 3), names


def write_cloud_ply(path, cloud: OrientedPointCloud):
    head = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property double nx",
        "property double ny",
        "property double nz",
        "end_header",
    ]
    body = [" ".join(_fmt(v) for v in np.concatenate([p, n])) for p, n in zip(cloud.points, cloud.normals)]
    Path(path).write_text("\n".join(head + body) + "\n")


def write_cloud_xyz(path, points, normals=None):
    data = np.asarray(points, dtype=float) if normals is None else np.hstack([points, normals])
    Path(path).write_text("\n".join(" ".join(_fmt(v) for v in row) for row in data) + "\n")


def _parse_ply(path, lines) -> tuple[np.ndarray, list[str]]:
    n_vertex = None
    props = []
    in_vertex = False
    end = None
    for i, ln in enumerate(lines):
        tok = ln.split()
        if tok[0] == "format" and tok[1] != "ascii":
            raise DataFileError(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            end = i
            break
    if end is None or n_vertex is None:
        raise DataFileError(f"{path}: malformed PLY header")
    body = lines[end + 1 : end + 1 + n_vertex]
    if len(body) != n_vertex:
        raise DataFileError(f"{path}: header announces {n_vertex} vertices, found {len(body)}")
    data = np.array([_floats(b, path, end + 2 + j)[: len(props)] for j, b in enumerate(body)], dtype=float)
    return data.reshape(n_vertex, len(props)), props


def read_cloud(path, k_neighbors: int = 16, orient_ref=None) -> OrientedPointCloud:
    """Load a cloud; normals are estimated (outward from the centroid) when absent."""
    path = Path(path)
    lines = _lines(path)
    if not lines:
        raise DataFileError(f"{path}: empty cloud file")
    if lines[0] == "ply":
        data, props = _parse_ply(path, lines)
        try:
            pts = data[:, [props.index(c) for c in ("x", "y", "z")]]
        except ValueError as exc:
            raise DataFileError(f"{path}: PLY vertices need x, y, z properties") from exc
        nrm = data[:, [props.index(c) for c in ("nx", "ny", "nz")]] if {"nx", "ny", "nz"} <= set(props) else None
    else:
        rows = [_floats(ln, path, i + 1) for i, ln in enumerate(lines)]
        width = {len(r) for r in rows}
        if width not in ({3}, {6}):
            raise DataFileError(f"{path}: rows must all hold 3 or 6 numbers")
        data = np.array(rows, dtype=float)
        pts = data[:, :3]
        nrm = data[:, 3:] if data.shape[1] == 6 else None
    if nrm is None:
        nrm, _ = estimate_normals(pts, min(k_neighbors, len(pts)), orient_ref)
    else:
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    try:
        return OrientedPointCloud(pts, nrm)
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc


def dumps_canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def write_archive(path, spec_doc: dict, codebook: Codebook, nets: dict[str, CoderNet], extra: dict | None = None):
    doc = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "K": codebook.K,
        "d_z": codebook.d_z,
        "spec": spec_doc,
        "codes": codebook.codes.tolist(),
        "nets": {name: net.to_dict() for name, net in nets.items()},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(dumps_canonical(doc) + "\n")


def read_archive(path) -> tuple[dict, Codebook, dict[str, CoderNet]]:
    path = Path(path)
    if not path.is_file():
        raise DataFileError(f"file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFileError(f"{path}: not a JSON archive ({exc})") from exc
    if doc.get("format") != ARCHIVE_FORMAT:
        raise DataFileError(f"{path}: not a codebook archive")
    if doc.get("version") != ARCHIVE_VERSION:
        raise DataFileError(f"{path}: unsupported archive version {doc.get('version')}")
    codebook = Codebook(np.array(doc["codes"], dtype=float))
    if codebook.K != doc["K"] or codebook.d_z != doc["d_z"]:
        raise DataFileError(f"{path}: code matrix does not match the K/d_z header")
    nets = {name: CoderNet.from_dict(n) for name, n in doc["nets"].items()}
    return doc, codebook, nets


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dumps_canonical(rec) + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
