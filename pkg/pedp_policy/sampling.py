"""
Differentiable discrete sampling: Gumbel noise, Gumbel-Softmax with a
straight-through hard mode, Gumbel-Sigmoid and hard binarisation.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

EPS = 1e-10


class SamplingError(ValueError):
    """Raised on invalid sampler inputs (non-finite logits, bad temperatures)."""
    pass


@dataclass
class GumbelConfig:
    tau_d: float = 1.0
    tau_s: float = 1.0
    tau_out: float = 1.0
    hard: bool = True

    def __post_init__(self):
        for name in ("tau_d", "tau_s", "tau_out"):
            if not getattr(self, name) > 0:
                raise SamplingError(f"{name} must be strictly positive, got {getattr(self, name)}")

    def to_dict(self) -> Dict:
        return asdict(self)


def make_generator(seed: int) -> torch.Generator:
    """A CPU generator owned by a single consumer."""
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


def gumbel_noise(shape: Union[torch.Size, Sequence[int]], generator: Optional[torch.Generator] = None,
                 dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """i.i.d. Gumbel(0, 1) samples: -log(-log u), u ~ U(0, 1) clamped away from 0 and 1."""
    u = torch.rand(tuple(shape), generator=generator, dtype=dtype)
    u = u.clamp(min=EPS, max=1.0 - EPS)
    return -torch.log(-torch.log(u))


def _straight_through(hard: torch.Tensor, soft: torch.Tensor) -> torch.Tensor:
    # forward value is `hard`, gradient is that of `soft`
    if soft.requires_grad:
        return (hard - soft).detach() + soft
    return hard


def gumbel_softmax(logits: torch.Tensor, tau: float, generator: Optional[torch.Generator] = None,
                   hard: bool = True, noise: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Sample from softmax(logits) over the last dimension.

    :return: (sample, index) where sample is softmax((logits + g) / tau), replaced by the
             one-hot of index = argmax(logits + g) when ``hard`` (straight-through)
    """
    if logits.shape[-1] < 2:
        raise SamplingError(f"Gumbel-Softmax needs at least 2 classes, got {logits.shape[-1]}")
    if not tau > 0:
        raise SamplingError(f"Temperature must be positive, got {tau}")
    if not torch.isfinite(logits).all():
        raise SamplingError("Gumbel-Softmax received non-finite logits")
    if noise is None:
        noise = gumbel_noise(logits.shape, generator, logits.dtype)
    perturbed = logits + noise
    soft = F.softmax(perturbed / tau, dim=-1)
    index = perturbed.argmax(dim=-1)
    if not hard:
        return soft, index
    one_hot = F.one_hot(index, logits.shape[-1]).to(soft.dtype)
    return _straight_through(one_hot, soft), index


def gumbel_sigmoid(values: torch.Tensor, tau: float, generator: Optional[torch.Generator] = None,
                   noise: bool = True) -> torch.Tensor:
    """
    Binary Gumbel-Softmax: a two-logit softmax over (values + g1, 0 + g2), elementwise.

    With ``noise=False`` this is exactly sigmoid(values / tau).
    """
    if not tau > 0:
        raise SamplingError(f"Temperature must be positive, got {tau}")
    if noise:
        g1 = gumbel_noise(values.shape, generator, values.dtype)
        g2 = gumbel_noise(values.shape, generator, values.dtype)
    else:
        g1 = torch.zeros_like(values)
        g2 = torch.zeros_like(values)
    first = (values + g1) / tau
    second = g2 / tau
    top = torch.maximum(first, second)
    e_first = torch.exp(first - top)
    e_second = torch.exp(second - top)
    return e_first / (e_first + e_second)


def hard_binarize(probs: torch.Tensor) -> torch.Tensor:
    """1 where probs > 0.5 (strict), straight-through when probs carry gradient."""
    hard = (probs > 0.5).to(probs.dtype)
    return _straight_through(hard, probs)


def probability_logit(probs: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    """log(p / (1 - p)) with p clamped into (eps, 1 - eps)."""
    clamped = probs.clamp(min=eps, max=1.0 - eps)
    return torch.log(clamped) - torch.log1p(-clamped)
