"""Frechet gesture distance: a convolutional autoencoder supplies latent
features, Gaussians are fitted to real and generated feature sets, and the
Frechet distance between the Gaussians scores the generated set. Baseline
metrics (joint-coordinate MAE and acceleration MAE) live here too.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import WindowSet
from .errors import CheckpointError, CorpusError, InvalidInputError, ShapeError
from .poses import DirVecSequence, PoseSequence
from .serialization import load_archive, save_archive

MIN_EXTRACTOR_SEQUENCES = 500


@dataclass(frozen=True)
class ExtractorConfig:
    latent_dim: int = 32
    channels: int = 64
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.001
    seed: int = 0
    chunk_len: int = 34
    pose_dim: int = 27


@dataclass
class GaussianStats:
    mean: np.ndarray        # (D,)
    covariance: np.ndarray  # (D, D)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        if self.mean.ndim != 1 or self.covariance.shape != (self.mean.size, self.mean.size):
            raise ShapeError("mean must be (D,) and covariance (D, D)")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.covariance))):
            raise InvalidInputError("Gaussian stats must be finite")
        if np.max(np.abs(self.covariance - self.covariance.T)) > 1e-8:
            raise InvalidInputError("covariance must be symmetric within 1e-8")


class ConvAutoencoder(nn.Module):
    """Convolutional encoder/decoder over (t, 27) direction-vector chunks."""

    def __init__(self, cfg: ExtractorConfig):
        super().__init__()
        c = cfg.channels
        t_half = (cfg.chunk_len + 2 - 4) // 2 + 1          # 34 -> 17
        t_quarter = (t_half + 2 - 4) // 2 + 1              # 17 -> 8
        self.cfg = cfg
        self._t_quarter = t_quarter
        self.enc_convs = nn.Sequential(
            nn.Conv1d(cfg.pose_dim, c, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv1d(c, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv1d(c, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv1d(c, 32, 3, padding=1), nn.LeakyReLU(0.2),
        )
        self.enc_fc = nn.Linear(32 * t_quarter, cfg.latent_dim)
        self.dec_fc = nn.Linear(cfg.latent_dim, 32 * t_quarter)
        self.dec_convs = nn.Sequential(
            nn.ConvTranspose1d(32, c, 3, padding=1), nn.LeakyReLU(0.2),
            nn.ConvTranspose1d(c, c, 4, stride=2, padding=1, output_padding=1), nn.LeakyReLU(0.2),
            nn.ConvTranspose1d(c, cfg.pose_dim, 4, stride=2, padding=1),
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = self.enc_convs(x.transpose(1, 2))
        return self.enc_fc(h.flatten(1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.encode(x)
        h = self.dec_fc(z).view(-1, 32, self._t_quarter)
        return self.dec_convs(h).transpose(1, 2)


@dataclass
class GestureFeatureExtractor:
    module: ConvAutoencoder
    config: ExtractorConfig
    extractor_id: str

    def encode(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        self.module.eval()
        feats = []
        with torch.no_grad():
            for i in range(0, len(windows), batch_size):
                x = torch.as_tensor(windows[i:i + batch_size], dtype=torch.float32)
                feats.append(self.module.encode(x).numpy())
        return np.concatenate(feats, axis=0).astype(np.float64)

    def save(self, path) -> None:
        arrays = {f"extractor.{k}": v.detach().cpu().numpy().astype(np.float32)
                  for k, v in self.module.state_dict().items()}
        save_archive(path, arrays, {"kind": "feature_extractor",
                                    "config": asdict(self.config),
                                    "extractor_id": self.extractor_id})

    @classmethod
    def load(cls, path) -> "GestureFeatureExtractor":
        arrays, meta = load_archive(path)
        if meta is None or meta.get("kind") != "feature_extractor":
            raise CheckpointError(f"not a feature extractor checkpoint: {path}")
        cfg = ExtractorConfig(**meta["config"])
        module = ConvAutoencoder(cfg)
        state = {k[len("extractor."):]: torch.as_tensor(v) for k, v in arrays.items()}
        module.load_state_dict(state)
        module.eval()
        return cls(module, cfg, meta["extractor_id"])


def _weights_id(module: nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in sorted(module.state_dict().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().astype(np.float32).tobytes())
    return h.hexdigest()[:12]


def _as_window_array(sequences, chunk_len: int = 34, pose_dim: int = 27) -> np.ndarray:
    """Accepts (N, t, 27), (N, t, 9, 3), a WindowSet, or a list of DirVecSequence."""
    if isinstance(sequences, WindowSet):
        arr = sequences.dirvecs
    elif isinstance(sequences, np.ndarray):
        arr = sequences
    else:
        rows = []
        for i, s in enumerate(sequences):
            frames = s.frames if isinstance(s, DirVecSequence) else np.asarray(s)
            if frames.shape[0] != chunk_len:
                raise ShapeError(f"sequence {i} has {frames.shape[0]} frames, expected {chunk_len}")
            rows.append(frames.reshape(chunk_len, pose_dim))
        if not rows:
            return np.zeros((0, chunk_len, pose_dim), np.float32)
        arr = np.stack(rows)
    if arr.ndim == 4:
        arr = arr.reshape(arr.shape[0], arr.shape[1], -1)
    if arr.ndim != 3 or arr.shape[2] != pose_dim:
        raise ShapeError(f"expected (N, t, {pose_dim}) windows, got {arr.shape}")
    if arr.shape[1] != chunk_len:
        raise ShapeError(f"windows must have {chunk_len} frames, got {arr.shape[1]}")
    return arr.astype(np.float32)


def train_feature_extractor(sequences, config: ExtractorConfig | None = None,
                            log=None) -> tuple[GestureFeatureExtractor, list]:
    """Autoencode the motion corpus; the trained encoder becomes the extractor.

    Returns (extractor, per-epoch reconstruction MSE history).
    """
    cfg = config or ExtractorConfig()
    windows = _as_window_array(sequences, cfg.chunk_len, cfg.pose_dim)
    if len(windows) < MIN_EXTRACTOR_SEQUENCES:
        raise CorpusError(f"extractor needs at least {MIN_EXTRACTOR_SEQUENCES} sequences, "
                          f"got {len(windows)}")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    module = ConvAutoencoder(cfg)
    opt = torch.optim.Adam(module.parameters(), lr=cfg.learning_rate)
    history = []
    module.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(windows))
        total, n = 0.0, 0
        for i in range(0, len(windows), cfg.batch_size):
            x = torch.as_tensor(windows[order[i:i + cfg.batch_size]])
            opt.zero_grad()
            loss = F.mse_loss(module(x), x)
            loss.backward()
            opt.step()
            total += loss.item() * x.shape[0]
            n += x.shape[0]
        history.append(total / n)
        if log:
            log(f"extractor epoch {epoch + 1}: recon mse {history[-1]:.6f}")
    module.eval()
    return GestureFeatureExtractor(module, cfg, _weights_id(module)), history


def extract_features(sequences, extractor: GestureFeatureExtractor) -> np.ndarray:
    """Latent features for a set of chunk-length sequences, row per input."""
    windows = _as_window_array(sequences, extractor.config.chunk_len, extractor.config.pose_dim)
    return extractor.encode(windows)


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and (N-1)-normalized covariance of a feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"features must be (N, D), got {features.shape}")
    if features.shape[0] < 2:
        raise InvalidInputError("need at least 2 feature rows for covariance")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (features.shape[0] - 1)
    return GaussianStats(mean, (cov + cov.T) / 2.0)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    # Tr((A B)^1/2) via the symmetrized product A^1/2 B A^1/2, which shares
    # its spectrum with A B; negative eigenvalues are numerical and clamped.
    root_a = _sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def frechet_distance(a: GaussianStats, b: GaussianStats, eps: float = 1e-6) -> float:
    """Frechet distance between two Gaussians:
    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
    """
    if a.mean.shape != b.mean.shape:
        raise ShapeError("Gaussian stats dimensions differ")
    diff = a.mean - b.mean
    base = float(diff @ diff) + float(np.trace(a.covariance) + np.trace(b.covariance))
    d = base - 2.0 * _trace_sqrt_product(a.covariance, b.covariance)
    if not np.isfinite(d) or d < -1e-8:
        # regularize once and retry
        eye = eps * np.eye(a.mean.size)
        cov_a, cov_b = a.covariance + eye, b.covariance + eye
        base = float(diff @ diff) + float(np.trace(cov_a) + np.trace(cov_b))
        d = base - 2.0 * _trace_sqrt_product(cov_a, cov_b)
    if not np.isfinite(d):
        raise InvalidInputError("Frechet distance is non-finite")
    if d < 0.0:
        if d < -1e-8:
            raise InvalidInputError(f"Frechet distance {d} below numerical tolerance")
        d = 0.0
    return float(d)


def fgd(real, generated, extractor: GestureFeatureExtractor) -> float:
    """Frechet distance between latent-feature Gaussians of two gesture sets."""
    stats_r = gaussian_stats(extract_features(real, extractor))
    stats_g = gaussian_stats(extract_features(generated, extractor))
    return frechet_distance(stats_r, stats_g)


def _paired_pose_arrays(reference, candidate) -> tuple[np.ndarray, np.ndarray]:
    def stack(seqs):
        if isinstance(seqs, np.ndarray):
            return np.asarray(seqs, dtype=np.float64)
        return np.stack([s.frames if isinstance(s, PoseSequence) else np.asarray(s)
                         for s in seqs]).astype(np.float64)
    ref, cand = stack(reference), stack(candidate)
    if ref.shape != cand.shape:
        raise ShapeError(f"paired sets must match: {ref.shape} vs {cand.shape}")
    return ref, cand


def maej(reference, candidate) -> float:
    """Mean absolute joint-coordinate error over paired pose sets."""
    ref, cand = _paired_pose_arrays(reference, candidate)
    return float(np.mean(np.abs(ref - cand)))


def mae_accel(reference, candidate) -> float:
    """Mean absolute error of per-sequence second temporal differences."""
    ref, cand = _paired_pose_arrays(reference, candidate)
    if ref.shape[1] < 3:
        raise InvalidInputError("acceleration needs at least 3 frames")
    def accel(x):
        return x[:, 2:] - 2.0 * x[:, 1:-1] + x[:, :-2]
    return float(np.mean(np.abs(accel(ref) - accel(cand))))
