import math

import numpy as np
import pytest
import torch

from pedp_policy.sampling import (GumbelConfig, SamplingError, gumbel_noise, gumbel_sigmoid, gumbel_softmax,
                                  hard_binarize, make_generator, probability_logit)

N_DRAWS = 100000


def test_gumbel_noise_moments():
    noise = gumbel_noise((1000000,), make_generator(0), torch.float64)
    assert torch.isfinite(noise).all()
    # Gumbel(0, 1): mean is the Euler-Mascheroni constant, variance pi^2 / 6
    assert abs(float(noise.mean()) - 0.5772) < 0.01
    assert abs(float(noise.var()) - math.pi ** 2 / 6) < 0.02


def test_gumbel_noise_is_reproducible():
    assert torch.equal(gumbel_noise((50,), make_generator(4)), gumbel_noise((50,), make_generator(4)))


@pytest.mark.parametrize("logits", [
    [0.0, 0.0, 0.0, 0.0],
    [5.0, 0.0, 0.0],
    [0.5, -1.0, 1.5],
])
def test_gumbel_softmax_frequencies_follow_softmax(logits):
    logits = torch.tensor(logits, dtype=torch.float64)
    size = logits.shape[0]
    _, index = gumbel_softmax(logits.expand(N_DRAWS, size), 1.0, make_generator(1))
    freq = np.bincount(index.numpy(), minlength=size) / N_DRAWS
    np.testing.assert_allclose(freq, torch.softmax(logits, -1).numpy(), atol=0.01, rtol=0.0)


def test_dominant_logit_frequency():
    _, index = gumbel_softmax(torch.tensor([5.0, 0.0, 0.0], dtype=torch.float64).expand(N_DRAWS, 3), 1.0,
                              make_generator(5))
    expected = math.exp(5) / (math.exp(5) + 2)
    assert abs(float((index == 0).double().mean()) - expected) < 0.005


def test_soft_samples_are_on_the_simplex():
    soft, _ = gumbel_softmax(torch.randn(200, 7) * 10, 0.3, make_generator(6), hard=False)
    assert (soft >= 0).all()
    torch.testing.assert_close(soft.sum(dim=-1), torch.ones(200), atol=1e-6, rtol=0.0)


def test_gumbel_softmax_hard_is_one_hot():
    logits = torch.tensor([[0.2, 0.1, -0.3]], requires_grad=True)
    sample, index = gumbel_softmax(logits, 0.5, make_generator(2), hard=True)
    assert sample.sum().item() == pytest.approx(1.0)
    assert sample[0, int(index)].item() == pytest.approx(1.0)


def test_straight_through_gradient_is_the_soft_gradient():
    tau = 0.7
    weights = torch.tensor([1.0, -2.0, 3.0, 0.5], dtype=torch.float64)
    noise = gumbel_noise((4,), make_generator(8), torch.float64)
    base = torch.tensor([0.3, -0.2, 0.1, 0.4], dtype=torch.float64)

    def soft_objective(values):
        return float((gumbel_softmax(values, tau, noise=noise, hard=False)[0] * weights).sum())

    logits = base.clone().requires_grad_(True)
    sample, index = gumbel_softmax(logits, tau, noise=noise, hard=True)
    torch.testing.assert_close(sample.detach(), torch.nn.functional.one_hot(index, 4).double())
    (sample * weights).sum().backward()

    eps = 1e-6
    for i in range(4):
        up, down = base.clone(), base.clone()
        up[i] += eps
        down[i] -= eps
        numeric = (soft_objective(up) - soft_objective(down)) / (2 * eps)
        assert logits.grad[i].item() == pytest.approx(numeric, rel=1e-4, abs=1e-9)


def test_small_temperature_with_fixed_noise_approaches_one_hot():
    logits = torch.tensor([0.3, 1.0, -0.5], dtype=torch.float64)
    noise = torch.tensor([0.5, -0.4, 0.2], dtype=torch.float64)
    soft, index = gumbel_softmax(logits, 1e-3, noise=noise, hard=False)
    assert int(index) == 0
    torch.testing.assert_close(soft, torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64))


def test_gumbel_softmax_same_seed_same_draw():
    logits = torch.randn(4, 6)
    a = gumbel_softmax(logits, 1.0, make_generator(7))[1]
    b = gumbel_softmax(logits, 1.0, make_generator(7))[1]
    assert torch.equal(a, b)


@pytest.mark.parametrize("logits, tau", [
    (torch.tensor([1.0]), 1.0),
    (torch.tensor([1.0, 2.0]), 0.0),
    (torch.tensor([1.0, float("nan")]), 1.0),
])
def test_gumbel_softmax_rejects_bad_inputs(logits, tau):
    with pytest.raises(SamplingError):
        gumbel_softmax(logits, tau)


def test_gumbel_sigmoid_without_noise_is_sigmoid():
    values = torch.linspace(-4, 4, 9, dtype=torch.float64)
    torch.testing.assert_close(gumbel_sigmoid(values, 2.0, noise=False), torch.sigmoid(values / 2.0))


def test_gumbel_sigmoid_rate_matches_sigmoid():
    values = torch.tensor([-2.0, 0.0, 1.0], dtype=torch.float64)
    draws = gumbel_sigmoid(values.expand(N_DRAWS, 3), 1.0, make_generator(3))
    rate = (draws > 0.5).double().mean(dim=0)
    torch.testing.assert_close(rate, torch.sigmoid(values), atol=0.01, rtol=0.0)


def test_gumbel_sigmoid_on_probability_logits():
    p = torch.tensor([0.1, 0.5, 0.8], dtype=torch.float64)
    draws = gumbel_sigmoid(probability_logit(p).expand(N_DRAWS, 3), 1.0, make_generator(9))
    torch.testing.assert_close((draws > 0.5).double().mean(dim=0), p, atol=0.01, rtol=0.0)


def test_hard_binarize_is_strict():
    probs = torch.tensor([0.5, 0.51, 0.49, 1.0])
    assert hard_binarize(probs).tolist() == [0.0, 1.0, 0.0, 1.0]


def test_probability_logit_is_finite_at_the_edges():
    out = probability_logit(torch.tensor([0.0, 0.5, 1.0]))
    assert torch.isfinite(out).all()
    assert out[1].item() == pytest.approx(0.0)


def test_gumbel_config_rejects_nonpositive_temperature():
    with pytest.raises(SamplingError):
        GumbelConfig(tau_out=0.0)
