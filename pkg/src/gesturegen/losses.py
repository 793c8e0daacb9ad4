"""Training losses: Huber reconstruction, non-saturating GAN terms,
style diversity regularization, and the KL prior on the style space."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError

_LOG_EPS = 1e-7
_STYLE_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 500.0   # Huber reconstruction
    beta: float = 5.0      # adversarial (generator side)
    gamma: float = 0.05    # style diversity
    lam: float = 0.1       # KL divergence
    tau: float = 1000.0    # diversity ratio clamp
    huber_delta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam", "tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass
class LossBreakdown:
    huber: float
    nsgan_g: float
    style: float
    kld: float
    total_g: float
    total_d: float


def huber_loss(target: torch.Tensor, output: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Mean elementwise Huber between two equally shaped tensors."""
    if target.shape != output.shape:
        raise ShapeError(f"huber shapes differ: {tuple(target.shape)} vs {tuple(output.shape)}")
    return torch.nn.functional.huber_loss(output, target, delta=delta, reduction="mean")


def _clamp_prob(p: torch.Tensor) -> torch.Tensor:
    return torch.clamp(p, _LOG_EPS, 1.0 - _LOG_EPS)


def nsgan_generator_loss(d_scores: torch.Tensor) -> torch.Tensor:
    """-E[log D(generated)], the non-saturating generator objective."""
    return -torch.log(_clamp_prob(d_scores)).mean()


def discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """-E[log D(real)] - E[log(1 - D(generated))]."""
    return (-torch.log(_clamp_prob(real_scores)).mean()
            - torch.log(1.0 - _clamp_prob(fake_scores)).mean())


def style_diversity_loss(gen_a: torch.Tensor, gen_b: torch.Tensor,
                         style_a: torch.Tensor, style_b: torch.Tensor,
                         tau: float = 1000.0, delta: float = 1.0) -> torch.Tensor:
    """Reward output differences per unit of style difference (negated, clamped).

    Inputs are batched: gen_* is (B, t, D), style_* is (B, S). Elements whose
    styles are (near-)identical contribute zero instead of dividing by zero.
    """
    if gen_a.shape != gen_b.shape or style_a.shape != style_b.shape:
        raise ShapeError("style diversity inputs must be pairwise equal shapes")
    b = gen_a.shape[0]
    diff = torch.nn.functional.huber_loss(gen_a.reshape(b, -1), gen_b.reshape(b, -1),
                                          delta=delta, reduction="none").mean(dim=1)
    dist = (style_a - style_b).abs().sum(dim=1)
    usable = dist > _STYLE_EPS
    ratio = torch.where(usable, diff / torch.clamp(dist, min=_STYLE_EPS),
                        torch.zeros_like(dist))
    return -torch.clamp(ratio, max=tau).mean()


def kld_loss(mean: torch.Tensor, log_variance: torch.Tensor) -> torch.Tensor:
    """KL(N(mean, var) || N(0, I)), summed over dims and averaged over the batch."""
    if mean.shape != log_variance.shape:
        raise ShapeError("kld mean/log_variance shapes differ")
    per_sample = 0.5 * (mean ** 2 + log_variance.exp() - 1.0 - log_variance).sum(dim=-1)
    return per_sample.mean()
