"""Trimodal gesture model: text/audio/style encoders, recurrent generator,
discriminator, chunked long-form synthesis, and checkpoint IO.

All modules run frame-synchronized: every input modality is brought to the
same t time steps as the generated poses.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import PaddedWordSeq, Vocab, build_padded_words, slice_audio_array
from .errors import CheckpointError, InvalidInputError, ShapeError
from .poses import DirVecSequence, normalize_dirvecs
from .serialization import load_archive, save_archive


@dataclass
class ModelConfig:
    vocab_size: int
    n_speakers: int
    hidden_size: int = 256
    num_layers: int = 4
    embedding_dim: int = 300
    dropout: float = 0.1
    text_feat_dim: int = 32
    audio_feat_dim: int = 32
    style_dim: int = 8
    pose_dim: int = 27
    chunk_len: int = 34
    seed_frames: int = 4
    fps: float = 15.0
    sample_rate: int = 16000
    use_speaker: bool = True  # False ablates the speaker-identity input

    def __post_init__(self):
        for name in ("vocab_size", "n_speakers", "hidden_size", "num_layers",
                     "embedding_dim", "text_feat_dim", "audio_feat_dim",
                     "style_dim", "pose_dim", "chunk_len"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"model config field {name} must be positive")

    @property
    def samples_per_chunk(self) -> int:
        return int(round(self.sample_rate * self.chunk_len / self.fps))


@dataclass
class StyleVector:
    """A point in the style space: posterior moments plus the drawn sample."""

    mean: np.ndarray          # (8,)
    log_variance: np.ndarray  # (8,)
    sample: np.ndarray        # (8,)
    eps: np.ndarray           # noise used by the reparameterized draw


class TextEncoder(nn.Module):
    """Word embeddings followed by a 4-layer dilated convolution stack.

    Kernel 2 with dilations 1, 2, 4, 8 gives each output frame a 16-token
    receptive field. Padding alternates sides, so context is bidirectional
    (5 tokens back, 10 forward) rather than causal.
    """

    PADS = ((1, 0), (0, 2), (4, 0), (0, 8))

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.embedding_dim)
        dims = [cfg.embedding_dim] + [cfg.text_feat_dim] * 4
        self.convs = nn.ModuleList(
            nn.Conv1d(dims[i], dims[i + 1], kernel_size=2, dilation=d)
            for i, d in enumerate((1, 2, 4, 8)))
        self.drop = nn.Dropout(cfg.dropout)

    def load_pretrained_embeddings(self, matrix: np.ndarray) -> None:
        """Optional hook: initialize from pretrained word vectors (fine-tuned later)."""
        if matrix.shape != tuple(self.embedding.weight.shape):
            raise ShapeError(f"embedding matrix must be {tuple(self.embedding.weight.shape)}")
        with torch.no_grad():
            self.embedding.weight.copy_(torch.as_tensor(matrix, dtype=torch.float32))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.embedding(tokens).transpose(1, 2)  # (B, E, t)
        for conv, (left, right) in zip(self.convs, self.PADS):
            x = F.leaky_relu(conv(F.pad(x, (left, right))), 0.2)
            x = self.drop(x)
        return x.transpose(1, 2)  # (B, t, 32)


class AudioEncoder(nn.Module):
    """Strided 1-D convolutions over the raw waveform, one feature per pose frame.

    Five stride-4 layers reduce ~1067 samples to one step (receptive field
    3420 samples ~ 0.21 s at 16 kHz); linear interpolation lands the stack
    on exactly t steps.
    """

    GEOMETRY = ((1, 8, 80), (8, 16, 40), (16, 32, 20), (32, 32, 10), (32, 32, 10))

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.convs = nn.ModuleList(
            nn.Conv1d(cin, cout, kernel_size=k, stride=4, padding=k // 2)
            for cin, cout, k in self.GEOMETRY)
        self.proj = nn.Conv1d(32, cfg.audio_feat_dim, kernel_size=1)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, samples: torch.Tensor, t: int | None = None) -> torch.Tensor:
        t = t or self.cfg.chunk_len
        expected = int(round(self.cfg.sample_rate * t / self.cfg.fps))
        if samples.shape[-1] != expected:
            raise ShapeError(f"audio window must have {expected} samples, got {samples.shape[-1]}")
        x = samples.unsqueeze(1)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            x = self.drop(x)
        x = self.proj(x)
        x = F.interpolate(x, size=t, mode="linear", align_corners=True)
        return x.transpose(1, 2)  # (B, t, 32)


class SpeakerStyleEncoder(nn.Module):
    """One-hot speaker id to an 8-D Gaussian style posterior."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_speakers = cfg.n_speakers
        self.style_dim = cfg.style_dim
        self.net = nn.Sequential(
            nn.Linear(cfg.n_speakers, 16), nn.ReLU(),
            nn.Linear(16, 2 * cfg.style_dim))

    def posterior(self, speaker: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        onehot = F.one_hot(speaker, self.n_speakers).float()
        h = self.net(onehot)
        return h[:, :self.style_dim], h[:, self.style_dim:]

    def forward(self, speaker: torch.Tensor, sample: bool = True):
        mean, log_var = self.posterior(speaker)
        if sample:
            eps = torch.randn_like(mean)
            z = mean + torch.exp(0.5 * log_var) * eps
        else:
            eps = torch.zeros_like(mean)
            z = mean
        return z, mean, log_var, eps


class Generator(nn.Module):
    """Bidirectional GRU stack emitting one 27-D pose per time step."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        in_dim = cfg.text_feat_dim + cfg.audio_feat_dim + cfg.style_dim + cfg.pose_dim + 1
        self.gru = nn.GRU(in_dim, cfg.hidden_size, cfg.num_layers, batch_first=True,
                          bidirectional=True,
                          dropout=cfg.dropout if cfg.num_layers > 1 else 0.0)
        self.out = nn.Linear(2 * cfg.hidden_size, cfg.pose_dim)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        h, _ = self.gru(feats)
        return self.out(h)


class Discriminator(nn.Module):
    """Bidirectional GRU scoring each step, aggregated to one probability."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.gru = nn.GRU(cfg.pose_dim, cfg.hidden_size, cfg.num_layers, batch_first=True,
                          bidirectional=True,
                          dropout=cfg.dropout if cfg.num_layers > 1 else 0.0)
        self.step_score = nn.Linear(2 * cfg.hidden_size, 1)
        self.aggregate = nn.Linear(cfg.chunk_len, 1)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        if seq.ndim != 3 or seq.shape[1] != self.aggregate.in_features:
            raise ShapeError(f"discriminator expects (B, {self.aggregate.in_features}, pose), "
                             f"got {tuple(seq.shape)}")
        h, _ = self.gru(seq)
        steps = self.step_score(h).squeeze(-1)  # (B, t)
        return torch.sigmoid(self.aggregate(steps)).squeeze(-1)  # (B,)


class GestureGenerationModel(nn.Module):
    """Encoders plus generator, wired frame-by-frame."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.text_encoder = TextEncoder(cfg)
        self.audio_encoder = AudioEncoder(cfg)
        self.style_encoder = SpeakerStyleEncoder(cfg)
        self.generator = Generator(cfg)

    def encode_context(self, tokens: torch.Tensor, audio: torch.Tensor,
                       t: int | None = None) -> torch.Tensor:
        t = t or self.cfg.chunk_len
        if tokens.shape[1] != t:
            raise ShapeError(f"token sequence must have length {t}, got {tokens.shape[1]}")
        return torch.cat([self.text_encoder(tokens), self.audio_encoder(audio, t)], dim=-1)

    def decode(self, context: torch.Tensor, style: torch.Tensor,
               seed_dirvecs: torch.Tensor) -> torch.Tensor:
        b, t, _ = context.shape
        k = self.cfg.seed_frames
        if not self.cfg.use_speaker:
            style = torch.zeros_like(style)
        style_seq = style.unsqueeze(1).expand(b, t, self.cfg.style_dim)
        seed = torch.zeros(b, t, self.cfg.pose_dim, dtype=context.dtype, device=context.device)
        seed[:, :k] = seed_dirvecs
        flag = torch.zeros(b, t, 1, dtype=context.dtype, device=context.device)
        flag[:, :k] = 1.0
        feats = torch.cat([context, style_seq, seed, flag], dim=-1)
        return self.generator(feats)

    def forward(self, tokens, audio, style, seed_dirvecs) -> torch.Tensor:
        return self.decode(self.encode_context(tokens, audio), style, seed_dirvecs)


def _as_model(weights) -> GestureGenerationModel:
    if not isinstance(weights, GestureGenerationModel):
        raise InvalidInputError("expected a GestureGenerationModel")
    return weights


def encode_text(model: GestureGenerationModel, padded: PaddedWordSeq, vocab: Vocab) -> np.ndarray:
    """Per-frame 32-D text features for one padded word sequence."""
    model.eval()
    if len(padded) != model.cfg.chunk_len:
        raise ShapeError(f"padded word sequence must have length {model.cfg.chunk_len}")
    tokens = torch.as_tensor(vocab.encode_seq(padded.tokens)).unsqueeze(0)
    with torch.no_grad():
        return model.text_encoder(tokens)[0].numpy()


def encode_audio(model: GestureGenerationModel, samples: np.ndarray) -> np.ndarray:
    """Per-frame 32-D audio features for one chunk-length sample window."""
    model.eval()
    x = torch.as_tensor(np.asarray(samples, dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        return model.audio_encoder(x, model.cfg.chunk_len)[0].numpy()


def encode_style(model: GestureGenerationModel, speaker_id: int | None = None,
                 explicit: np.ndarray | None = None, sampling: bool = False) -> StyleVector:
    """Map a speaker id to a style vector, or pass an explicit vector through."""
    model.eval()
    if explicit is not None:
        v = np.asarray(explicit, dtype=np.float32).reshape(-1)
        if v.shape[0] != model.cfg.style_dim:
            raise ShapeError(f"explicit style vector must have {model.cfg.style_dim} dims")
        z = np.zeros_like(v)
        return StyleVector(mean=v.copy(), log_variance=z.copy(), sample=v.copy(), eps=z)
    if speaker_id is None:
        raise InvalidInputError("need a speaker_id or an explicit style vector")
    if not 0 <= speaker_id < model.cfg.n_speakers:
        raise InvalidInputError(f"speaker_id {speaker_id} out of range [0, {model.cfg.n_speakers})")
    with torch.no_grad():
        z, mean, log_var, eps = model.style_encoder(torch.tensor([speaker_id]), sample=sampling)
    return StyleVector(mean[0].numpy(), log_var[0].numpy(), z[0].numpy(), eps[0].numpy())


def generate(model: GestureGenerationModel, padded: PaddedWordSeq, samples: np.ndarray,
             style: StyleVector, seed_dirvecs: np.ndarray, vocab: Vocab) -> DirVecSequence:
    """One chunk of gesture, unit-normalized per bone."""
    model.eval()
    cfg = model.cfg
    tokens = torch.as_tensor(vocab.encode_seq(padded.tokens)).unsqueeze(0)
    audio = torch.as_tensor(np.asarray(samples, dtype=np.float32)).unsqueeze(0)
    z = torch.as_tensor(style.sample, dtype=torch.float32).unsqueeze(0)
    seed = torch.as_tensor(np.asarray(seed_dirvecs, dtype=np.float32)
                           .reshape(cfg.seed_frames, cfg.pose_dim)).unsqueeze(0)
    with torch.no_grad():
        raw = model(tokens, audio, z, seed)[0].numpy()
    return normalize_dirvecs(DirVecSequence(raw.reshape(-1, 9, 3), cfg.fps))


def discriminate(disc: Discriminator, seq: DirVecSequence) -> float:
    """Probability that a chunk is a real human gesture."""
    disc.eval()
    x = torch.as_tensor(seq.flat, dtype=torch.float32).unsqueeze(0)
    with torch.no_grad():
        return float(disc(x)[0])


def synthesize_long(model: GestureGenerationModel, words: list, audio: np.ndarray,
                    style: StyleVector, mean_dirvecs: np.ndarray, vocab: Vocab,
                    sample_rate: int | None = None) -> DirVecSequence:
    """Long-form synthesis in 2-second chunks chained by seed poses.

    The first chunk is seeded with the corpus mean pose; every following
    chunk reuses the last 4 generated frames. One style vector serves all
    chunks. Output is trimmed to the speech duration.
    """
    cfg = model.cfg
    sr = sample_rate or cfg.sample_rate
    duration = len(audio) / sr
    if duration < 2.0:
        raise InvalidInputError(f"clip too short for synthesis: {duration:.2f}s < 2s")
    new_frames = cfg.chunk_len - cfg.seed_frames  # 30
    total = int(round(duration * cfg.fps))
    n_chunks = math.ceil(total / new_frames)
    seeds = np.tile(np.asarray(mean_dirvecs, dtype=np.float32).reshape(1, cfg.pose_dim),
                    (cfg.seed_frames, 1))
    pieces = []
    for k in range(n_chunks):
        start = k * new_frames
        padded = build_padded_words(words, start / cfg.fps,
                                    (start + cfg.chunk_len) / cfg.fps, cfg.chunk_len)
        window = slice_audio_array(audio, sr, cfg.fps, start, cfg.chunk_len)
        out = generate(model, padded, window, style, seeds, vocab)
        flat = out.flat.astype(np.float32)
        pieces.append(flat[cfg.seed_frames:])
        seeds = flat[-cfg.seed_frames:]
    frames = np.concatenate(pieces, axis=0)[:total]
    return DirVecSequence(frames.reshape(-1, 9, 3), cfg.fps)


def state_to_arrays(module: nn.Module, prefix: str) -> dict:
    return {f"{prefix}.{k}": v.detach().cpu().numpy().astype(np.float32)
            for k, v in module.state_dict().items()}


def arrays_to_state(arrays: dict, prefix: str) -> dict:
    pre = prefix + "."
    return {k[len(pre):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith(pre)}


def checkpoint_id(arrays: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()[:12]


def save_checkpoint(path, model: GestureGenerationModel, extras: dict,
                    discriminator: Discriminator | None = None) -> None:
    """Archive of named float32 weight tensors plus a JSON config block."""
    arrays = state_to_arrays(model, "model")
    if discriminator is not None:
        arrays.update(state_to_arrays(discriminator, "disc"))
    meta = {"kind": "gesture_model", "model_config": asdict(model.cfg),
            "has_discriminator": discriminator is not None, "extras": extras}
    save_archive(path, arrays, meta)


def load_checkpoint(path):
    """Returns (model, discriminator | None, extras dict)."""
    arrays, meta = load_archive(path)
    if meta is None or meta.get("kind") != "gesture_model":
        raise CheckpointError(f"not a gesture model checkpoint: {path}")
    cfg = ModelConfig(**meta["model_config"])
    model = GestureGenerationModel(cfg)
    model.load_state_dict(arrays_to_state(arrays, "model"))
    model.eval()
    disc = None
    if meta.get("has_discriminator"):
        disc = Discriminator(cfg)
        disc.load_state_dict(arrays_to_state(arrays, "disc"))
        disc.eval()
    return model, disc, meta["extras"]
