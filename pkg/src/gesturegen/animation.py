"""Animation file export and import (CSV, JSON, BVH).

CSV rows hold one frame of joint coordinates; JSON carries the frame rate
and joint names alongside the coordinates; BVH reconstructs a joint
hierarchy with per-frame rotations derived from the bone directions.
"""
from __future__ import annotations

import json

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidInputError
from .poses import (
    BONE_ORDER,
    JOINT_NAMES,
    PARENT_INDEX,
    DirVecSequence,
    PoseSequence,
    Skeleton,
    dirvecs_to_coords,
)

CSV_HEADER = "frame," + ",".join(f"j{j}{a}" for j in range(10) for a in "xyz")

# T-pose rest direction per bone (right arm along -x, left along +x).
_REST_DIRS = np.array([
    [0.0, 1.0, 0.0],   # spine-neck
    [0.0, 0.6, 0.8],   # neck-nose
    [0.0, 1.0, 0.0],   # nose-head
    [-1.0, 0.0, 0.0],  # neck-r_shoulder
    [1.0, 0.0, 0.0],   # neck-l_shoulder
    [-1.0, 0.0, 0.0],  # r_shoulder-r_elbow
    [1.0, 0.0, 0.0],   # l_shoulder-l_elbow
    [-1.0, 0.0, 0.0],  # r_elbow-r_wrist
    [1.0, 0.0, 0.0],   # l_elbow-l_wrist
])
_REST_DIRS /= np.linalg.norm(_REST_DIRS, axis=-1, keepdims=True)

_CHILD_BONES = {j: [b for b, (p, _) in enumerate(BONE_ORDER) if p == j] for j in range(10)}
_DFS_ORDER = (0, 1, 2, 3, 4, 6, 8, 5, 7, 9)


def save_pose_csv(seq: PoseSequence, path) -> None:
    lines = [CSV_HEADER]
    for i, frame in enumerate(seq.frames):
        lines.append(f"{i}," + ",".join(repr(float(v)) for v in frame.reshape(-1)))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_pose_csv(path, fps: float = 15.0) -> PoseSequence:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or not lines[0].startswith("frame,"):
        raise InvalidInputError(f"not a pose CSV file: {path}")
    frames = []
    for ln in lines[1:]:
        vals = ln.split(",")
        if len(vals) != 31:
            raise InvalidInputError(f"pose CSV row has {len(vals)} fields, expected 31")
        frames.append([float(v) for v in vals[1:]])
    return PoseSequence(np.asarray(frames).reshape(-1, 10, 3), fps)


def save_pose_json(seq: PoseSequence, path) -> None:
    doc = {
        "fps": seq.fps,
        "joint_names": list(JOINT_NAMES),
        "frames": seq.frames.tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)


def load_pose_json(path) -> PoseSequence:
    with open(path) as f:
        doc = json.load(f)
    return PoseSequence(np.asarray(doc["frames"]), float(doc["fps"]))


def export_animation(seq: DirVecSequence, skel: Skeleton | None, path, fmt: str) -> None:
    """Write a directional-vector sequence to ``path`` as csv, json, or bvh."""
    skel = skel or Skeleton()
    if fmt == "csv":
        save_pose_csv(dirvecs_to_coords(seq, skel), path)
    elif fmt == "json":
        save_pose_json(dirvecs_to_coords(seq, skel), path)
    elif fmt == "bvh":
        save_bvh(seq, skel, path)
    else:
        raise InvalidInputError(f"unknown animation format '{fmt}' (expected csv, json, or bvh)")


def _rotation_between(a, b) -> Rotation:
    """Minimal rotation carrying unit vector a onto unit vector b (zero twist)."""
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return Rotation.identity()
        # antiparallel: rotate pi about any axis perpendicular to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return Rotation.from_rotvec(np.pi * perp / np.linalg.norm(perp))
    return Rotation.from_rotvec(axis / s * np.arctan2(s, c))


def _frame_eulers(dirs: np.ndarray) -> dict[int, np.ndarray]:
    """Per-joint local ZXY euler angles (degrees) for one frame of bone directions."""
    glob: dict[int, Rotation] = {}
    eulers: dict[int, np.ndarray] = {}
    for j in _DFS_ORDER:
        parent = PARENT_INDEX[j]
        r_parent = glob[parent] if parent >= 0 else Rotation.identity()
        bones = _CHILD_BONES[j]
        if not bones:
            local = Rotation.identity()
        elif len(bones) == 1:
            target = r_parent.inv().apply(dirs[bones[0]])
            local = _rotation_between(_REST_DIRS[bones[0]], target)
        else:
            targets = r_parent.inv().apply(dirs[bones])
            local, _ = Rotation.align_vectors(targets, _REST_DIRS[bones])
        glob[j] = r_parent * local
        eulers[j] = local.as_euler("ZXY", degrees=True)
    return eulers


def save_bvh(seq: DirVecSequence, skel: Skeleton | None, path) -> None:
    skel = skel or Skeleton()
    lengths = np.asarray(skel.bone_lengths)
    bone_of_child = {c: b for b, (_, c) in enumerate(BONE_ORDER)}

    lines = ["HIERARCHY"]

    def emit(j: int, depth: int):
        pad = "  " * depth
        if j == 0:
            lines.append(f"{pad}ROOT {JOINT_NAMES[j]}")
            lines.append(pad + "{")
            lines.append(f"{pad}  OFFSET 0.000000 0.000000 0.000000")
            lines.append(f"{pad}  CHANNELS 6 Xposition Yposition Zposition "
                         "Zrotation Xrotation Yrotation")
        else:
            b = bone_of_child[j]
            off = _REST_DIRS[b] * lengths[b]
            lines.append(f"{pad}JOINT {JOINT_NAMES[j]}")
            lines.append(pad + "{")
            lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
            lines.append(f"{pad}  CHANNELS 3 Zrotation Xrotation Yrotation")
        children = [c for c in range(10) if PARENT_INDEX[c] == j]
        if children:
            for c in children:
                emit(c, depth + 1)
        else:
            tip = _REST_DIRS[bone_of_child[j]] * lengths[bone_of_child[j]] * 0.1
            lines.append(f"{pad}  End Site")
            lines.append(f"{pad}  {{")
            lines.append(f"{pad}    OFFSET {tip[0]:.6f} {tip[1]:.6f} {tip[2]:.6f}")
            lines.append(f"{pad}  }}")
        lines.append(pad + "}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {len(seq)}")
    lines.append(f"Frame Time: {1.0 / seq.fps:.8f}")
    for frame in seq.frames:
        eulers = _frame_eulers(frame)
        vals = ["0.000000", "0.000000", "0.000000"]
        for j in _DFS_ORDER:
            vals.extend(f"{v:.6f}" for v in eulers[j])
        lines.append(" ".join(vals))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
