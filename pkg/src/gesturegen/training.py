"""Adversarial training with a warm-up phase and per-epoch checkpoints.

The discriminator and generator alternate every batch once the warm-up
ends; during warm-up only the generator's non-adversarial terms train and
the discriminator is left untouched.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import WindowSet
from .errors import CorpusError, DivergenceError, InvalidInputError
from .losses import (
    LossBreakdown,
    LossWeights,
    discriminator_loss,
    huber_loss,
    kld_loss,
    nsgan_generator_loss,
    style_diversity_loss,
)
from .models import (
    Discriminator,
    GestureGenerationModel,
    ModelConfig,
    save_checkpoint,
)

HISTORY_COLUMNS = ("epoch", "huber", "nsgan_g", "style", "kld",
                   "total_g", "total_d", "fgd_val", "warmup")


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.0005
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    warmup_epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    grad_clip: float = 10.0
    use_style_loss: bool = True  # False zeroes the style and KL terms (ablation)

    def __post_init__(self):
        if self.warmup_epochs > self.epochs:
            raise InvalidInputError("warmup_epochs cannot exceed epochs")
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise InvalidInputError("epochs, batch_size, and learning_rate must be positive")


@dataclass
class EpochStats:
    epoch: int
    breakdown: LossBreakdown
    fgd_val: float | None
    warmup: bool


@dataclass
class TrainResult:
    model: GestureGenerationModel
    discriminator: Discriminator
    history: list
    step_log: list
    checkpoint_paths: list = field(default_factory=list)
    clip_events: int = 0
    step_records: list = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def generate_for_windows(model: GestureGenerationModel, windows: WindowSet,
                         batch_size: int = 64, sampling: bool = False) -> np.ndarray:
    """Generator output for every window, using its real seeds and speaker.

    Returns normalized directional vectors, shape (N, t, 27).
    """
    was_training = model.training
    model.eval()
    cfg = model.cfg
    outs = []
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            sl = slice(i, i + batch_size)
            tokens = torch.as_tensor(windows.tokens[sl])
            audio = torch.as_tensor(windows.audio[sl])
            speaker = torch.as_tensor(windows.speaker[sl])
            z, _, _, _ = model.style_encoder(speaker, sample=sampling)
            seeds = torch.as_tensor(windows.dirvecs[sl, :cfg.seed_frames])
            raw = model(tokens, audio, z, seeds).numpy()
            v = raw.reshape(raw.shape[0], cfg.chunk_len, 9, 3)
            norms = np.linalg.norm(v, axis=-1, keepdims=True)
            outs.append((v / np.clip(norms, 1e-8, None)).reshape(raw.shape[0], cfg.chunk_len, 27))
    if was_training:
        model.train()
    return np.concatenate(outs, axis=0).astype(np.float32)


def train(train_windows: WindowSet, model_config: ModelConfig,
          train_config: TrainConfig | None = None,
          loss_weights: LossWeights | None = None,
          val_windows: WindowSet | None = None,
          extractor=None,
          out_dir: str | None = None,
          checkpoint_extras: dict | None = None,
          record_steps: bool = False,
          log=None) -> TrainResult:
    """Train generator and discriminator; returns models plus the loss history.

    Deterministic for a fixed config seed. When ``extractor`` and
    ``val_windows`` are given, validation FGD is recorded per epoch.
    """
    if len(train_windows) == 0:
        raise CorpusError("training split is empty")
    cfg = train_config or TrainConfig()
    lw = loss_weights or LossWeights()

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    model = GestureGenerationModel(model_config)
    disc = Discriminator(model_config)
    model.train()
    disc.train()
    opt_g = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                             betas=(cfg.adam_beta1, cfg.adam_beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate,
                             betas=(cfg.adam_beta1, cfg.adam_beta2))

    gamma = lw.gamma if cfg.use_style_loss else 0.0
    lam = lw.lam if cfg.use_style_loss else 0.0
    k = model_config.seed_frames
    history, step_log, ckpt_paths = [], [], []
    step_records: list = []
    clip_events = 0

    for epoch in range(1, cfg.epochs + 1):
        warmup = epoch <= cfg.warmup_epochs
        beta = 0.0 if warmup else lw.beta
        sums = np.zeros(6)
        n_steps = 0
        for idx in _batches(len(train_windows), cfg.batch_size, rng):
            tokens = torch.as_tensor(train_windows.tokens[idx])
            audio = torch.as_tensor(train_windows.audio[idx])
            speaker = torch.as_tensor(train_windows.speaker[idx])
            real = torch.as_tensor(train_windows.dirvecs[idx])
            seeds = real[:, :k]
            b = real.shape[0]

            context = model.encode_context(tokens, audio)
            z_a, mean_a, logvar_a, _ = model.style_encoder(speaker, sample=True)
            gen_a = model.decode(context, z_a, seeds)

            total_d_val = 0.0
            if not warmup:
                opt_d.zero_grad()
                d_real = disc(real)
                d_fake = disc(gen_a.detach())
                loss_d = discriminator_loss(d_real, d_fake)
                loss_d.backward()
                opt_d.step()
                total_d_val = loss_d.item()
                step_log.append("d")

            opt_g.zero_grad()
            l_huber = huber_loss(real, gen_a, lw.huber_delta)
            if warmup:
                l_nsgan = torch.zeros(())
            else:
                l_nsgan = nsgan_generator_loss(disc(gen_a))
            if gamma > 0.0:
                other = torch.as_tensor(rng.integers(0, model_config.n_speakers, b))
                z_b, _, _, _ = model.style_encoder(other, sample=True)
                gen_b = model.decode(context, z_b, seeds)
                l_style = style_diversity_loss(gen_a, gen_b, z_a, z_b, lw.tau, lw.huber_delta)
            else:
                l_style = torch.zeros(())
            l_kld = kld_loss(mean_a, logvar_a) if lam > 0.0 else torch.zeros(())

            total_g = lw.alpha * l_huber + beta * l_nsgan + gamma * l_style + lam * l_kld
            if not torch.isfinite(total_g):
                raise DivergenceError(
                    f"non-finite generator loss at epoch {epoch} "
                    f"(huber={l_huber.item()}, nsgan={l_nsgan.item()}, "
                    f"style={l_style.item()}, kld={l_kld.item()})")
            total_g.backward()
            gnorm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            if float(gnorm) > cfg.grad_clip:
                clip_events += 1
                if log:
                    log(f"gradient clipped at epoch {epoch} (norm {float(gnorm):.1f})")
            opt_g.step()
            step_log.append("g")

            # recombine recorded terms in float64 so the breakdown identity
            # total_g = a*huber + b*nsgan + g*style + l*kld holds exactly
            vals = (l_huber.item(), l_nsgan.item(), l_style.item(), l_kld.item())
            total_val = (lw.alpha * vals[0] + beta * vals[1]
                         + gamma * vals[2] + lam * vals[3])
            if record_steps:
                step_records.append(LossBreakdown(*vals, total_val, total_d_val))
            sums += [*vals, total_val, total_d_val]
            n_steps += 1

        means = sums / max(n_steps, 1)
        fgd_val = None
        if extractor is not None and val_windows is not None and len(val_windows) >= 2:
            from .fgd import fgd as fgd_metric
            gen_val = generate_for_windows(model, val_windows)
            fgd_val = fgd_metric(val_windows.dirvecs, gen_val, extractor)
        total_mean = (lw.alpha * means[0] + beta * means[1]
                      + gamma * means[2] + lam * means[3])
        breakdown = LossBreakdown(huber=means[0], nsgan_g=means[1], style=means[2],
                                  kld=means[3], total_g=total_mean, total_d=means[5])
        history.append(EpochStats(epoch, breakdown, fgd_val, warmup))
        if log:
            msg = (f"epoch {epoch}: huber={means[0]:.4f} nsgan={means[1]:.4f} "
                   f"style={means[2]:.4f} kld={means[3]:.4f} total={means[4]:.3f}")
            if fgd_val is not None:
                msg += f" fgd_val={fgd_val:.4f}"
            log(msg + (" [warmup]" if warmup else ""))
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            path = os.path.join(out_dir, f"epoch_{epoch:03d}.npz")
            save_checkpoint(path, model, checkpoint_extras or {}, discriminator=disc)
            ckpt_paths.append(path)

    return TrainResult(model, disc, history, step_log, ckpt_paths, clip_events, step_records)


def write_history_csv(history, path) -> None:
    lines = [",".join(HISTORY_COLUMNS)]
    for st in history:
        b = st.breakdown
        fgd = "" if st.fgd_val is None else repr(float(st.fgd_val))
        lines.append(",".join([
            str(st.epoch), repr(b.huber), repr(b.nsgan_g), repr(b.style), repr(b.kld),
            repr(b.total_g), repr(b.total_d), fgd, str(int(st.warmup)),
        ]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
