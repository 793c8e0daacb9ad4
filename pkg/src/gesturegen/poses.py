"""Skeletal pose sequences, directional-vector sequences, and motion filters.

A pose is 10 upper-body joints in 3D. The training representation is 9
unit directional vectors (parent-to-child bone directions, 27 values per
frame), which is insensitive to bone lengths and root translation.
Coordinates are y-up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateBoneError, InsufficientFramesError, InvalidInputError

JOINT_NAMES = (
    "spine", "neck", "nose", "head",
    "r_shoulder", "l_shoulder", "r_elbow", "l_elbow", "r_wrist", "l_wrist",
)
PARENT_INDEX = (-1, 0, 1, 2, 1, 1, 4, 5, 6, 7)
# Parent->child edges in fixed order; topologically sorted (parents first).
BONE_ORDER = ((0, 1), (1, 2), (2, 3), (1, 4), (1, 5), (4, 6), (5, 7), (6, 8), (7, 9))
BONE_NAMES = tuple(f"{JOINT_NAMES[p]}-{JOINT_NAMES[c]}" for p, c in BONE_ORDER)
# Plausible proportions in units where spine-neck = 1.
DEFAULT_BONE_LENGTHS = (1.0, 0.25, 0.2, 0.4, 0.4, 0.55, 0.55, 0.5, 0.5)

RIGHT_ARM_JOINTS = (4, 6, 8)
LEFT_ARM_JOINTS = (5, 7, 9)

UP_AXIS = 1  # +y is up

_DEGENERATE_NORM = 1e-8


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple = JOINT_NAMES
    parent_index: tuple = PARENT_INDEX
    bone_order: tuple = BONE_ORDER
    bone_lengths: tuple = DEFAULT_BONE_LENGTHS

    def __post_init__(self):
        if len(self.joint_names) != 10 or len(self.parent_index) != 10:
            raise InvalidInputError("skeleton must have exactly 10 joints")
        if len(self.bone_order) != 9 or len(self.bone_lengths) != 9:
            raise InvalidInputError("skeleton must have exactly 9 bones")
        if any(l <= 0 for l in self.bone_lengths):
            raise InvalidInputError("bone lengths must be positive")
        if self.parent_index[0] != -1:
            raise InvalidInputError("joint 0 must be the root")
        for j, p in enumerate(self.parent_index[1:], start=1):
            if not 0 <= p < j:
                raise InvalidInputError("parent graph must be a tree with parents before children")

    def with_lengths(self, lengths) -> "Skeleton":
        return Skeleton(self.joint_names, self.parent_index, self.bone_order,
                        tuple(float(l) for l in lengths))


@dataclass
class PoseSequence:
    """T frames of 10 joints in 3D coordinates at a fixed frame rate."""

    frames: np.ndarray  # (T, 10, 3)
    fps: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (10, 3):
            raise InvalidInputError(f"pose frames must be (T, 10, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise InvalidInputError("pose sequence needs at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInputError("pose coordinates must be finite")
        if self.fps <= 0:
            raise InvalidInputError("fps must be positive")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.fps


@dataclass
class DirVecSequence:
    """T frames of 9 bone direction vectors (unit norm after normalization)."""

    frames: np.ndarray  # (T, 9, 3)
    fps: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (9, 3):
            raise InvalidInputError(f"dirvec frames must be (T, 9, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise InvalidInputError("dirvec sequence needs at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise InvalidInputError("direction vectors must be finite")
        if self.fps <= 0:
            raise InvalidInputError("fps must be positive")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def flat(self) -> np.ndarray:
        """Frames as (T, 27)."""
        return self.frames.reshape(len(self), 27)


@dataclass(frozen=True)
class ValidityThresholds:
    min_motion_variance: float = 1e-4          # normalized units^2
    min_spine_neck_angle: float = math.radians(30.0)  # from horizontal

    def __post_init__(self):
        if self.min_motion_variance < 0 or self.min_spine_neck_angle < 0:
            raise InvalidInputError("validity thresholds must be non-negative")


def spine_center(seq: PoseSequence) -> PoseSequence:
    """Translate every frame so the spine joint sits at the origin."""
    return PoseSequence(seq.frames - seq.frames[:, :1, :], seq.fps)


def coords_to_dirvecs(seq: PoseSequence, skel: Skeleton | None = None) -> DirVecSequence:
    """Convert joint coordinates to unit parent-to-child bone directions."""
    skel = skel or Skeleton()
    parents = np.array([p for p, _ in skel.bone_order])
    children = np.array([c for _, c in skel.bone_order])
    vecs = seq.frames[:, children] - seq.frames[:, parents]  # (T, 9, 3)
    norms = np.linalg.norm(vecs, axis=-1)
    bad = norms < _DEGENERATE_NORM
    if np.any(bad):
        f, b = np.argwhere(bad)[0]
        raise DegenerateBoneError(int(f), BONE_NAMES[int(b)])
    return DirVecSequence(vecs / norms[..., None], seq.fps)


def dirvecs_to_coords(seq: DirVecSequence, skel: Skeleton | None = None,
                      root=(0.0, 0.0, 0.0), bone_lengths=None) -> PoseSequence:
    """Reconstruct joint coordinates from bone directions and lengths.

    ``bone_lengths`` may be a (9,) vector or a (T, 9) per-frame matrix;
    defaults to the skeleton's fixed lengths.
    """
    skel = skel or Skeleton()
    norms = np.linalg.norm(seq.frames, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-3):
        raise InvalidInputError("direction vectors must be unit length within 1e-3")
    dirs = seq.frames / norms[..., None]
    lengths = np.asarray(skel.bone_lengths if bone_lengths is None else bone_lengths,
                         dtype=np.float64)
    if lengths.ndim == 1:
        lengths = np.broadcast_to(lengths, (len(seq), 9))
    coords = np.zeros((len(seq), 10, 3))
    coords[:, 0] = np.asarray(root, dtype=np.float64)
    for b, (p, c) in enumerate(skel.bone_order):
        coords[:, c] = coords[:, p] + lengths[:, b, None] * dirs[:, b]
    return PoseSequence(coords, seq.fps)


def measure_bone_lengths(seq: PoseSequence, skel: Skeleton | None = None) -> np.ndarray:
    """Per-frame bone lengths, shape (T, 9)."""
    skel = skel or Skeleton()
    parents = np.array([p for p, _ in skel.bone_order])
    children = np.array([c for _, c in skel.bone_order])
    return np.linalg.norm(seq.frames[:, children] - seq.frames[:, parents], axis=-1)


def normalize_dirvecs(seq: DirVecSequence) -> DirVecSequence:
    """Rescale every direction vector to unit norm; degenerate vectors raise."""
    norms = np.linalg.norm(seq.frames, axis=-1)
    bad = norms < _DEGENERATE_NORM
    if np.any(bad):
        f, b = np.argwhere(bad)[0]
        raise DegenerateBoneError(int(f), BONE_NAMES[int(b)])
    return DirVecSequence(seq.frames / norms[..., None], seq.fps)


def resample(seq, dst_fps: float):
    """Resample to ``dst_fps``: cubic splines upsample, nearest-time downsamples.

    Directional sequences are renormalized to unit vectors afterwards.
    """
    if dst_fps <= 0:
        raise InvalidInputError("dst_fps must be positive")
    is_dirvec = isinstance(seq, DirVecSequence)
    src_fps = seq.fps
    n_src = len(seq)
    n_dst = int(round(n_src * dst_fps / src_fps))
    if n_dst < 1:
        raise InvalidInputError("resampled sequence would be empty")
    flat = seq.frames.reshape(n_src, -1)
    if math.isclose(dst_fps, src_fps):
        out = flat.copy()
    elif dst_fps > src_fps:
        if n_src < 4:
            raise InsufficientFramesError("cubic spline upsampling needs at least 4 frames")
        spline = CubicSpline(np.arange(n_src) / src_fps, flat, axis=0)
        out = spline(np.arange(n_dst) / dst_fps)
    else:
        idx = np.clip(np.round(np.arange(n_dst) / dst_fps * src_fps).astype(int), 0, n_src - 1)
        out = flat[idx]
    out = out.reshape(n_dst, *seq.frames.shape[1:])
    if is_dirvec:
        return normalize_dirvecs(DirVecSequence(out, dst_fps))
    return PoseSequence(out, dst_fps)


def _resolve_joints(joints) -> list[int]:
    idx = []
    for j in joints:
        if isinstance(j, str):
            if j not in JOINT_NAMES:
                raise InvalidInputError(f"unknown joint name '{j}'")
            idx.append(JOINT_NAMES.index(j))
        else:
            if not 0 <= int(j) < 10:
                raise InvalidInputError(f"joint index {j} out of range")
            idx.append(int(j))
    return idx


def motion_variance(seq: PoseSequence, joints=None) -> float:
    """Mean temporal variance of the selected joints' coordinates."""
    if joints is None:
        idx = list(range(10))
    else:
        idx = _resolve_joints(joints)
        if not idx:
            raise InvalidInputError("joint subset must be non-empty")
    if len(seq) < 2:
        raise InvalidInputError("motion variance needs at least 2 frames")
    sel = seq.frames[:, idx, :]
    return float(np.mean(np.var(sel, axis=0)))


def spine_neck_elevation(seq: PoseSequence) -> np.ndarray:
    """Per-frame elevation angle of the spine-neck vector above horizontal (radians)."""
    v = seq.frames[:, 1] - seq.frames[:, 0]
    norms = np.linalg.norm(v, axis=-1)
    norms = np.where(norms < _DEGENERATE_NORM, 1.0, norms)
    return np.arcsin(np.clip(v[:, UP_AXIS] / norms, -1.0, 1.0))


def is_valid_sample(seq: PoseSequence, th: ValidityThresholds | None = None):
    """Filter out near-frozen windows and lying poses.

    Returns ``(True, None)`` or ``(False, reason)`` with reason
    ``"low_motion"`` or ``"lying_pose"``.
    """
    th = th or ValidityThresholds()
    var = motion_variance(seq) if len(seq) >= 2 else 0.0
    if var < th.min_motion_variance:
        return False, "low_motion"
    if float(np.mean(spine_neck_elevation(seq))) < th.min_spine_neck_angle:
        return False, "lying_pose"
    return True, None
