"""Kinematic chains, forward kinematics and fingertip Jacobians.

Hand-model files are JSON documents::

    {
      "name": "planar2",
      "links": ["base", "l1", "l2", "tip"],
      "joints": [
        {"name": "j1", "type": "revolute", "parent": "base", "child": "l1",
         "origin": {"xyz": [0, 0, 0], "rpy": [0, 0, 0]},
         "axis": [0, 0, 1], "limit": [-3.14, 3.14]},
        ...
      ],
      "fingertip_links": ["tip"],
      "palm_link": "base"            # optional
    }

``origin`` may instead be given as ``{"matrix": [16 numbers, row-major]}``.
Fixed joints need no ``axis``/``limit``. The configuration vector indexes the
non-fixed joints in declaration order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, axis_angle_matrix

JOINT_TYPES = ("revolute", "prismatic", "fixed")
AXIS_TOL = 1e-9


class ModelError(ValueError):
    """Malformed or inconsistent hand-model description."""


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    type: str
    parent: str
    child: str
    origin: RigidTransform
    axis: np.ndarray
    limit_lo: float
    limit_hi: float


class KinematicChain:
    """Tree of links connected by revolute, prismatic or fixed joints."""

    def __init__(self, links, joints, fingertip_links, name="chain", palm_link=None):
        self.name = name
        self.links = tuple(links)
        self.joints = tuple(joints)
        self.fingertip_links = tuple(fingertip_links)
        self._validate()
        self.palm_link = palm_link if palm_link is not None else self.base_link
        if self.palm_link not in self._link_index:
            raise ModelError(f"palm_link '{self.palm_link}' is not a declared link")

        self.active_joints = tuple(j for j in self.joints if j.type != "fixed")
        self.dof = len(self.active_joints)
        self.lower = np.array([j.limit_lo for j in self.active_joints])
        self.upper = np.array([j.limit_hi for j in self.active_joints])
        self.lower.flags.writeable = False
        self.upper.flags.writeable = False

        q_index = {}
        for d, j in enumerate(self.active_joints):
            q_index[j.name] = d
        # Joints in an order where every parent precedes its children.
        order = []
        stack = [self.base_link]
        children = {name: [] for name in self.links}
        for j in self.joints:
            children[j.parent].append(j)
        while stack:
            link = stack.pop()
            for j in reversed(children[link]):
                order.append(j)
                stack.append(j.child)
        self._order = [
            (self._link_index[j.parent], self._link_index[j.child], j, q_index.get(j.name, -1)) for j in order
        ]
        # Active-joint indices on the path from the base to each link.
        ancestors = {self.base_link: ()}
        for j in order:
            own = (q_index[j.name],) if j.type != "fixed" else ()
            ancestors[j.child] = ancestors[j.parent] + own
        self._ancestors = [np.array(sorted(ancestors[name]), dtype=int) for name in self.links]
        self._joint_child = np.array([self._link_index[j.child] for j in self.active_joints], dtype=int)
        self._joint_kind = np.array([j.type == "revolute" for j in self.active_joints], dtype=bool)
        self._tip_index = np.array([self._link_index[n] for n in self.fingertip_links], dtype=int)

    def _validate(self):
        if not self.links:
            raise ModelError("chain has no links")
        if len(set(self.links)) != len(self.links):
            raise ModelError("duplicate link names")
        self._link_index = {name: i for i, name in enumerate(self.links)}
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ModelError("duplicate joint names")
        parent_of = {}
        for j in self.joints:
            if j.type not in JOINT_TYPES:
                raise ModelError(f"joint '{j.name}': unknown type '{j.type}'")
            for end in (j.parent, j.child):
                if end not in self._link_index:
                    raise ModelError(f"joint '{j.name}' references unknown link '{end}'")
            if j.child in parent_of:
                raise ModelError(f"link '{j.child}' has more than one parent joint (cycle or graph is not a tree)")
            parent_of[j.child] = j.parent
            if j.type != "fixed":
                if abs(np.linalg.norm(j.axis) - 1.0) > AXIS_TOL:
                    raise ModelError(f"joint '{j.name}': axis {j.axis.tolist()} is not unit length")
                if not j.limit_lo <= j.limit_hi:
                    raise ModelError(f"joint '{j.name}': limit_lo > limit_hi")
        roots = [name for name in self.links if name not in parent_of]
        if len(roots) != 1:
            raise ModelError(f"joint graph has a cycle or is disconnected (roots: {roots})")
        self.base_link = roots[0]
        # Every link must be reachable from the root by following parents.
        for name in self.links:
            seen = set()
            cur = name
            while cur in parent_of:
                if cur in seen:
                    raise ModelError(f"joint graph has a cycle through link '{cur}'")
                seen.add(cur)
                cur = parent_of[cur]
        for tip in self.fingertip_links:
            if tip not in self._link_index:
                raise ModelError(f"unknown fingertip link '{tip}'")

    def link_index(self, name: str) -> int:
        return self._link_index[name]

    def ancestor_joints(self, link: str) -> np.ndarray:
        """Indices into ``q`` of the active joints that move ``link``."""
        return self._ancestors[self._link_index[link]]

    @property
    def n_fingertips(self) -> int:
        return len(self.fingertip_links)

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.dof:
            raise ValueError(f"configuration has {q.shape[0]} entries, chain '{self.name}' has dof {self.dof}")
        return q

    def link_poses(self, q) -> tuple[np.ndarray, np.ndarray]:
        """World rotations ``(L, 3, 3)`` and positions ``(L, 3)`` of every link."""
        q = self.check_q(q)
        n = len(self.links)
        rot = np.empty((n, 3, 3))
        pos = np.empty((n, 3))
        base = self._link_index[self.base_link]
        rot[base] = np.eye(3)
        pos[base] = 0.0
        for pi, ci, j, d in self._order:
            r = rot[pi] @ j.origin.rotation
            p = rot[pi] @ j.origin.translation + pos[pi]
            if j.type == "revolute":
                r = r @ axis_angle_matrix(j.axis, q[d])
            elif j.type == "prismatic":
                p = p + r @ (j.axis * q[d])
            rot[ci] = r
            pos[ci] = p
        return rot, pos

    def to_dict(self) -> dict:
        joints = []
        for j in self.joints:
            entry = {
                "name": j.name,
                "type": j.type,
                "parent": j.parent,
                "child": j.child,
                "origin": {"matrix": j.origin.as_matrix().reshape(-1).tolist()},
            }
            if j.type != "fixed":
                entry["axis"] = j.axis.tolist()
                entry["limit"] = [j.limit_lo, j.limit_hi]
            joints.append(entry)
        return {
            "name": self.name,
            "links": list(self.links),
            "joints": joints,
            "fingertip_links": list(self.fingertip_links),
            "palm_link": self.palm_link,
        }


@dataclass(frozen=True, eq=False)
class HandConfiguration:
    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        q.flags.writeable = False
        object.__setattr__(self, "q", q)


@dataclass(frozen=True, eq=False)
class HandTrajectory:
    """Joint configurations over time, stored as a ``(T, D)`` array."""

    frames: np.ndarray
    chain: KinematicChain | None = None

    def __post_init__(self):
        f = np.array(self.frames, dtype=float)
        if f.ndim == 1:
            f = f[None, :]
        if f.ndim != 2 or f.shape[0] == 0:
            raise ValueError("hand trajectory must be a non-empty (T, D) array")
        if self.chain is not None and f.shape[1] != self.chain.dof:
            raise ValueError(f"trajectory dof {f.shape[1]} does not match chain dof {self.chain.dof}")
        f.flags.writeable = False
        object.__setattr__(self, "frames", f)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dof(self) -> int:
        return self.frames.shape[1]


def _parse_origin(spec, where: str) -> RigidTransform:
    if spec is None:
        return RigidTransform.identity()
    if "matrix" in spec:
        return RigidTransform.from_matrix(spec["matrix"])
    unknown = set(spec) - {"xyz", "rpy"}
    if unknown:
        raise ModelError(f"{where}: unknown origin keys {sorted(unknown)}")
    return RigidTransform.from_rpy(spec.get("rpy", (0, 0, 0)), spec.get("xyz", (0, 0, 0)))


def chain_from_dict(doc: dict) -> KinematicChain:
    try:
        links = list(doc["links"])
        joints = []
        for i, jd in enumerate(doc["joints"]):
            where = f"joints[{i}]"
            jtype = jd["type"]
            if jtype == "fixed":
                axis = np.zeros(3)
                lo = hi = 0.0
            else:
                axis = np.asarray(jd["axis"], dtype=float).reshape(3)
                lo, hi = (float(v) for v in jd["limit"])
            joints.append(
                Joint(
                    name=str(jd["name"]),
                    type=jtype,
                    parent=str(jd["parent"]),
                    child=str(jd["child"]),
                    origin=_parse_origin(jd.get("origin"), where),
                    axis=axis,
                    limit_lo=lo,
                    limit_hi=hi,
                )
            )
        tips = list(doc.get("fingertip_links", []))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed hand model: {exc!r}") from exc
    return KinematicChain(links, joints, tips, name=doc.get("name", "chain"), palm_link=doc.get("palm_link"))


def load_chain(model_file) -> KinematicChain:
    """Load a hand model from a JSON file (see module docstring for the schema)."""
    path = Path(model_file)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from exc
    return chain_from_dict(doc)


DEMO_MODELS = ("one_dof", "planar2", "gripper3", "hand20")


def demo_model_path(name: str) -> Path:
    if name not in DEMO_MODELS:
        raise KeyError(f"unknown demo model '{name}', choose from {DEMO_MODELS}")
    return Path(str(resources.files("dexrefine") / "data" / "hands" / f"{name}.json"))


def load_demo_chain(name: str) -> KinematicChain:
    return load_chain(demo_model_path(name))


def forward_kinematics(chain: KinematicChain, q) -> dict[str, RigidTransform]:
    rot, pos = chain.link_poses(q)
    return {name: RigidTransform(rot[i], pos[i]) for i, name in enumerate(chain.links)}


def fingertip_positions(chain: KinematicChain, q) -> np.ndarray:
    """World positions of ``chain.fingertip_links`` as an ``(F, 3)`` array."""
    _, pos = chain.link_poses(q)
    return pos[chain._tip_index].copy()


def link_positions(chain: KinematicChain, q, links) -> np.ndarray:
    _, pos = chain.link_poses(q)
    return pos[[chain.link_index(n) for n in links]].copy()


def _position_jacobians(chain: KinematicChain, rot, pos, link_ids) -> np.ndarray:
    # Joint d sits at the origin of its child link frame; its axis is fixed in that frame.
    axes = np.einsum("dij,dj->di", rot[chain._joint_child], np.array([j.axis for j in chain.active_joints]).reshape(-1, 3))
    origins = pos[chain._joint_child]
    out = np.zeros((len(link_ids), 3, chain.dof))
    for row, li in enumerate(link_ids):
        anc = chain._ancestors[li]
        if anc.size == 0:
            continue
        rev = chain._joint_kind[anc]
        cols = np.where(rev[:, None], np.cross(axes[anc], pos[li] - origins[anc]), axes[anc])
        out[row][:, anc] = cols.T
    return out


def fingertip_jacobian(chain: KinematicChain, q, i: int) -> np.ndarray:
    """3xD world-frame position Jacobian of fingertip ``i``."""
    if not 0 <= i < chain.n_fingertips:
        raise IndexError(f"fingertip index {i} out of range for {chain.n_fingertips} fingertips")
    rot, pos = chain.link_poses(q)
    return _position_jacobians(chain, rot, pos, [chain._tip_index[i]])[0]


def fingertip_kinematics(chain: KinematicChain, q) -> tuple[np.ndarray, np.ndarray]:
    """Fingertip positions ``(F, 3)`` and Jacobians ``(F, 3, D)`` from one FK pass."""
    rot, pos = chain.link_poses(q)
    return pos[chain._tip_index].copy(), _position_jacobians(chain, rot, pos, chain._tip_index)


def link_kinematics(chain: KinematicChain, q, links) -> tuple[np.ndarray, np.ndarray]:
    rot, pos = chain.link_poses(q)
    ids = [chain.link_index(n) for n in links]
    return pos[ids].copy(), _position_jacobians(chain, rot, pos, ids)


def clamp_to_limits(chain: KinematicChain, q) -> np.ndarray:
    q = chain.check_q(q)
    return np.clip(q, chain.lower, chain.upper)
