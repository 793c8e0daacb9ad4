import math

import numpy as np
import pytest
import torch

from gesturegen.errors import ShapeError
from gesturegen.losses import (
    LossWeights,
    discriminator_loss,
    huber_loss,
    kld_loss,
    nsgan_generator_loss,
    style_diversity_loss,
)


def test_huber_identical_zero():
    x = torch.randn(2, 34, 27)
    assert huber_loss(x, x).item() == 0.0


def test_huber_quadratic_zone():
    t = torch.zeros(3, 4)
    o = torch.full((3, 4), 0.5)
    assert huber_loss(t, o, delta=1.0).item() == pytest.approx(0.125, abs=1e-7)


def test_huber_linear_zone():
    t = torch.zeros(3, 4)
    o = torch.full((3, 4), 2.0)
    assert huber_loss(t, o, delta=1.0).item() == pytest.approx(1.5, abs=1e-7)


def test_huber_shape_mismatch():
    with pytest.raises(ShapeError):
        huber_loss(torch.zeros(2, 3), torch.zeros(3, 2))


def test_huber_nonnegative_zero_iff_equal(rng):
    for _ in range(20):
        a = torch.as_tensor(rng.normal(size=(4, 7)))
        b = torch.as_tensor(rng.normal(size=(4, 7)))
        v = huber_loss(a, b).item()
        assert v >= 0
        assert (v == 0) == bool(torch.equal(a, b))


def test_nsgan_half():
    assert nsgan_generator_loss(torch.tensor([0.5])).item() == pytest.approx(0.6931, abs=1e-4)


def test_nsgan_limit_to_zero():
    assert nsgan_generator_loss(torch.tensor([0.9999999])).item() == pytest.approx(0.0, abs=1e-4)


def test_nsgan_batch():
    v = nsgan_generator_loss(torch.tensor([0.5, 0.25])).item()
    assert v == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-4)
    assert v == pytest.approx(1.0397, abs=1e-3)


def test_nsgan_clamps_extremes():
    assert math.isfinite(nsgan_generator_loss(torch.tensor([0.0, 1.0])).item())


def test_discriminator_perfect():
    v = discriminator_loss(torch.tensor([1.0 - 1e-9]), torch.tensor([1e-9])).item()
    assert v == pytest.approx(0.0, abs=1e-4)


def test_discriminator_coin_flip():
    v = discriminator_loss(torch.tensor([0.5]), torch.tensor([0.5])).item()
    assert v == pytest.approx(2 * math.log(2), abs=1e-6)


def test_discriminator_hand_case():
    v = discriminator_loss(torch.tensor([0.8]), torch.tensor([0.3])).item()
    assert v == pytest.approx(-math.log(0.8) - math.log(0.7), abs=1e-6)
    assert v == pytest.approx(0.5798, abs=1e-3)


def test_style_identical_outputs():
    g = torch.randn(2, 34, 27)
    sa = torch.zeros(2, 8)
    sb = torch.ones(2, 8)
    assert style_diversity_loss(g, g, sa, sb).item() == 0.0


def test_style_clamp():
    ga = torch.zeros(1, 4, 3)
    gb = torch.full((1, 4, 3), 0.9)  # huber mean = 0.5 * 0.81 = 0.405
    sa = torch.zeros(1, 8)
    sb = torch.full((1, 8), 1e-5 / 8)  # L1 distance 1e-5 -> ratio 40500 > tau
    assert style_diversity_loss(ga, gb, sa, sb, tau=1000.0).item() == pytest.approx(-1000.0)


def test_style_hand_case():
    # per-element huber 0.2 needs |diff| = sqrt(0.4); style L1 distance 0.5
    ga = torch.zeros(1, 5, 4)
    gb = torch.full((1, 5, 4), math.sqrt(0.4))
    sa = torch.zeros(1, 8)
    sb = torch.zeros(1, 8)
    sb[0, 0] = 0.5
    v = style_diversity_loss(ga, gb, sa, sb).item()
    assert v == pytest.approx(-0.4, abs=1e-6)


def test_style_skips_identical_styles():
    ga = torch.zeros(2, 4, 3)
    gb = torch.ones(2, 4, 3)
    sa = torch.zeros(2, 8)
    sb = torch.zeros(2, 8)
    sb[1, 0] = 1.0  # element 0 has identical styles, element 1 does not
    v2 = style_diversity_loss(ga, gb, sa, sb).item()
    only_second = style_diversity_loss(ga[1:], gb[1:], sa[1:], sb[1:]).item()
    assert v2 == pytest.approx(only_second / 2, abs=1e-6)


def test_style_range(rng):
    for _ in range(20):
        ga = torch.as_tensor(rng.normal(size=(3, 6, 9)))
        gb = torch.as_tensor(rng.normal(size=(3, 6, 9)))
        sa = torch.as_tensor(rng.normal(size=(3, 8)))
        sb = torch.as_tensor(rng.normal(size=(3, 8)))
        v = style_diversity_loss(ga, gb, sa, sb, tau=1000.0).item()
        assert -1000.0 <= v <= 0.0


def test_kld_standard_zero():
    assert kld_loss(torch.zeros(1, 8), torch.zeros(1, 8)).item() == 0.0


def test_kld_mean_shift():
    mu = torch.zeros(1, 8)
    mu[0, 0] = 1.0
    assert kld_loss(mu, torch.zeros(1, 8)).item() == pytest.approx(0.5, abs=1e-6)


def test_kld_variance_case():
    lv = torch.zeros(1, 8)
    lv[0, 0] = math.log(4.0)
    expected = 0.5 * (4.0 - 1.0 - math.log(4.0))
    assert kld_loss(torch.zeros(1, 8), lv).item() == pytest.approx(expected, abs=1e-6)
    assert kld_loss(torch.zeros(1, 8), lv).item() == pytest.approx(0.8069, abs=1e-4)


def test_kld_nonnegative(rng):
    for _ in range(30):
        mu = torch.as_tensor(rng.normal(size=(2, 8)))
        lv = torch.as_tensor(rng.normal(size=(2, 8)))
        assert kld_loss(mu, lv).item() >= 0.0


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(alpha=-1.0)
    w = LossWeights()
    assert (w.alpha, w.beta, w.gamma, w.lam, w.tau) == (500.0, 5.0, 0.05, 0.1, 1000.0)
