"""Synthetic disturbance models for validating gesture metrics, plus the
runner that sweeps disturbance levels and tabulates metric responses.

Gaussian and salt&pepper noise share one draw per sequence (no artificial
temporal discontinuity); temporal noise perturbs a contiguous frame span;
the multiplicative transform scales poses in the PCA eigenpose basis;
mismatch re-pairs speech with other sequences' gestures.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .poses import PoseSequence, Skeleton, coords_to_dirvecs, spine_center

POSE_DIM = 30  # 10 joints x 3
NOISE_KINDS = ("gaussian", "salt_pepper", "temporal", "multiplicative", "mismatched")
SALT_PEPPER_MAGNITUDE = 0.2
TEMPORAL_VARIANCE = 0.003


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    zeta: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidInputError(f"unknown noise kind '{self.kind}'")
        if self.zeta < 0:
            raise InvalidInputError("zeta must be non-negative")
        if self.kind in ("salt_pepper", "mismatched") and self.zeta > 1:
            raise InvalidInputError(f"{self.kind} zeta must lie in [0, 1]")
        if self.kind == "temporal" and self.zeta != int(self.zeta):
            raise InvalidInputError("temporal zeta is a frame count")


@dataclass
class EigenposeModel:
    """Full-rank PCA basis over flattened poses."""

    mean_pose: np.ndarray   # (30,)
    components: np.ndarray  # (30, 30), rows are components
    fitted_on: str = "corpus"
    effective_rank: int = POSE_DIM

    def __post_init__(self):
        self.mean_pose = np.asarray(self.mean_pose, dtype=np.float64).reshape(POSE_DIM)
        self.components = np.asarray(self.components, dtype=np.float64)
        if self.components.shape != (POSE_DIM, POSE_DIM):
            raise InvalidInputError("components must be a 30x30 matrix")
        gram = self.components @ self.components.T
        if np.max(np.abs(gram - np.eye(POSE_DIM))) > 1e-6:
            raise InvalidInputError("components must be orthonormal within 1e-6")

    def transform(self, flat_poses: np.ndarray) -> np.ndarray:
        return (flat_poses - self.mean_pose) @ self.components.T

    def inverse(self, eigen: np.ndarray) -> np.ndarray:
        return eigen @ self.components + self.mean_pose


def apply_gaussian(seq: PoseSequence, zeta: float, seed: int) -> PoseSequence:
    """Add one N(0, zeta*I) offset in R^30 to every frame of the sequence."""
    if zeta < 0:
        raise InvalidInputError("zeta must be non-negative")
    if zeta == 0:
        return PoseSequence(seq.frames.copy(), seq.fps)
    x = np.random.default_rng(seed).normal(0.0, np.sqrt(zeta), POSE_DIM)
    return PoseSequence(seq.frames + x.reshape(1, 10, 3), seq.fps)


def apply_salt_pepper(seq: PoseSequence, zeta: float, seed: int) -> PoseSequence:
    """Shift each coordinate by +/-0.2 with probability zeta/2 each, shared across frames."""
    if not 0 <= zeta <= 1:
        raise InvalidInputError("salt&pepper zeta must lie in [0, 1]")
    if zeta == 0:
        return PoseSequence(seq.frames.copy(), seq.fps)
    u = np.random.default_rng(seed).uniform(0.0, 1.0, POSE_DIM)
    x = np.where(u <= zeta / 2, SALT_PEPPER_MAGNITUDE,
                 np.where(u <= zeta, -SALT_PEPPER_MAGNITUDE, 0.0))
    return PoseSequence(seq.frames + x.reshape(1, 10, 3), seq.fps)


def temporal_noise_start(n_frames: int, zeta: int, seed: int) -> int:
    """The random start frame r used by apply_temporal for the same seed."""
    return int(np.random.default_rng(seed).integers(0, n_frames - int(zeta) + 1))


def apply_temporal(seq: PoseSequence, zeta: int, seed: int) -> PoseSequence:
    """Independent per-frame Gaussian noise on zeta consecutive frames."""
    zeta = int(zeta)
    n = len(seq)
    if zeta < 0 or zeta > n:
        raise InvalidInputError(f"temporal zeta must lie in [0, {n}]")
    if zeta == 0:
        return PoseSequence(seq.frames.copy(), seq.fps)
    rng = np.random.default_rng(seed)
    r = int(rng.integers(0, n - zeta + 1))
    frames = seq.frames.copy()
    frames[r:r + zeta] += rng.normal(0.0, np.sqrt(TEMPORAL_VARIANCE),
                                     (zeta, 10, 3))
    return PoseSequence(frames, seq.fps)


def fit_eigenposes(poses, fitted_on: str = "corpus") -> EigenposeModel:
    """PCA over flattened poses; keeps all 30 components.

    ``poses`` is an (N, 10, 3) array, an (N, 30) array, or a list of
    PoseSequence whose frames are pooled.
    """
    if isinstance(poses, np.ndarray):
        flat = poses.reshape(-1, POSE_DIM).astype(np.float64)
    else:
        flat = np.concatenate([p.frames.reshape(-1, POSE_DIM) for p in poses]).astype(np.float64)
    if flat.shape[0] < POSE_DIM + 1:
        rank = int(np.linalg.matrix_rank(flat - flat.mean(axis=0)))
        raise InvalidInputError(
            f"eigenpose fit needs at least {POSE_DIM + 1} poses "
            f"(got {flat.shape[0]}, effective rank {rank})")
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / (flat.shape[0] - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    rank = int(np.sum(w > max(w.max(), 0.0) * 1e-10))
    return EigenposeModel(mean, v.T.copy(), fitted_on, rank)


def apply_multiplicative(seq: PoseSequence, zeta: float, model: EigenposeModel) -> PoseSequence:
    """Scale every pose's eigenpose coordinates by zeta (1 = identity, 0 = mean pose)."""
    if zeta < 0:
        raise InvalidInputError("zeta must be non-negative")
    flat = seq.frames.reshape(len(seq), POSE_DIM)
    out = model.inverse(zeta * model.transform(flat))
    return PoseSequence(out.reshape(len(seq), 10, 3), seq.fps)


def apply_mismatch(pairs, zeta: float, seed: int) -> list:
    """Re-pair a zeta fraction of (speech, gesture) pairs with each other's gestures.

    The selected subset receives a fixed-point-free permutation of its own
    gestures, so the gesture multiset is preserved and no selected pair
    keeps its original gesture.
    """
    if not 0 <= zeta <= 1:
        raise InvalidInputError("mismatch zeta must lie in [0, 1]")
    pairs = list(pairs)
    n = len(pairs)
    if zeta == 0:
        return pairs
    if n < 2:
        raise InvalidInputError("mismatch needs at least 2 pairs for nonzero zeta")
    m = int(round(zeta * n))
    if m < 2:
        return pairs
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=m, replace=False)
    perm = rng.permutation(m)
    while np.any(perm == np.arange(m)):  # reject until fixed-point-free
        perm = rng.permutation(m)
    out = pairs[:]
    for pos, i in enumerate(chosen):
        speech = pairs[i][0]
        donor = pairs[chosen[perm[pos]]][1]
        out[i] = (speech, donor)
    return out


@dataclass
class ValidationReport:
    rows: list            # dicts: kind, zeta, fgd, maej, mae_accel
    meta: dict = field(default_factory=dict)


def _windows_to_dirvecs(windows: np.ndarray, fps: float, skel: Skeleton) -> np.ndarray:
    out = np.empty((windows.shape[0], windows.shape[1], 27), dtype=np.float32)
    for i in range(windows.shape[0]):
        seq = PoseSequence(windows[i], fps)
        out[i] = coords_to_dirvecs(spine_center(seq), skel).frames.reshape(-1, 27)
    return out


def run_validation(windows: np.ndarray, grid: dict, extractor, seed: int = 0,
                   metrics=("fgd", "maej", "mae_accel"), fps: float = 15.0,
                   min_windows: int = 100, log=None) -> ValidationReport:
    """Sweep every (kind, zeta) grid point and score noisy windows against clean ones.

    ``windows`` holds clean pose windows, shape (N, t, 10, 3). Each grid
    point derives its own rng stream from the master seed.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 4 or windows.shape[2:] != (10, 3):
        raise InvalidInputError(f"windows must be (N, t, 10, 3), got {windows.shape}")
    n = windows.shape[0]
    if n < min_windows:
        raise InvalidInputError(f"validation needs at least {min_windows} windows, got {n}")
    for kind in grid:
        NoiseSpec(kind, 1 if kind == "temporal" else 0.0)  # validates the kind name

    skel = Skeleton()
    clean_dirs = _windows_to_dirvecs(windows, fps, skel) if "fgd" in metrics else None
    eigen_model = None
    if "multiplicative" in grid:
        eigen_model = fit_eigenposes(windows.reshape(-1, POSE_DIM))

    rows = []
    for kind_idx, kind in enumerate(sorted(grid)):
        for z_idx, zeta in enumerate(grid[kind]):
            NoiseSpec(kind, zeta)
            child = np.random.default_rng([seed, kind_idx, z_idx])
            seeds = child.integers(0, 2 ** 31, size=n)
            noisy = np.empty_like(windows)
            if kind == "mismatched":
                pairs = [(i, windows[i]) for i in range(n)]
                shuffled = apply_mismatch(pairs, zeta, int(seeds[0]))
                for i, (_, gesture) in enumerate(shuffled):
                    noisy[i] = gesture
            else:
                for i in range(n):
                    seq = PoseSequence(windows[i], fps)
                    if kind == "gaussian":
                        res = apply_gaussian(seq, zeta, int(seeds[i]))
                    elif kind == "salt_pepper":
                        res = apply_salt_pepper(seq, zeta, int(seeds[i]))
                    elif kind == "temporal":
                        res = apply_temporal(seq, int(zeta), int(seeds[i]))
                    else:
                        res = apply_multiplicative(seq, zeta, eigen_model)
                    noisy[i] = res.frames
            row = {"kind": kind, "zeta": float(zeta)}
            if "fgd" in metrics:
                from .fgd import fgd as fgd_metric
                row["fgd"] = fgd_metric(clean_dirs, _windows_to_dirvecs(noisy, fps, skel),
                                        extractor)
            if "maej" in metrics:
                from .fgd import maej as maej_metric
                row["maej"] = maej_metric(windows, noisy)
            if "mae_accel" in metrics:
                from .fgd import mae_accel as accel_metric
                row["mae_accel"] = accel_metric(windows, noisy)
            rows.append(row)
            if log:
                log("  ".join(f"{k}={v}" for k, v in row.items()))
    meta = {"seed": seed, "n_windows": n,
            "extractor_id": getattr(extractor, "extractor_id", None),
            "grid": {k: list(map(float, v)) for k, v in grid.items()}}
    return ValidationReport(rows, meta)
