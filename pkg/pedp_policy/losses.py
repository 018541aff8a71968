"""
The four supervised objectives and their weighted sum.

DAP and SFP are per-step cross-entropies over planned single-action steps;
SR and MAP are binary cross-entropies over the structured state and the
macro-action vector.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional

import torch
import torch.nn.functional as F

TASKS = ("dap", "sfp", "sr", "map")
BCE_EPS = 1e-12


class LossWeightsError(ValueError):
    """Raised when task weights are negative or all zero."""
    pass


@dataclass
class LossWeights:
    w_dap: float = 1.0
    w_sfp: float = 1.0
    w_sr: float = 1.0
    w_map: float = 1.0

    def __post_init__(self):
        values = [self.w_dap, self.w_sfp, self.w_sr, self.w_map]
        if any(v < 0 for v in values):
            raise LossWeightsError(f"Loss weights must be nonnegative, got {values}")
        if not any(v > 0 for v in values):
            raise LossWeightsError("At least one loss weight must be positive")

    def weight(self, task: str) -> float:
        return getattr(self, f"w_{task}")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    dap: Optional[torch.Tensor] = None
    sfp: Optional[torch.Tensor] = None
    sr: Optional[torch.Tensor] = None
    map: Optional[torch.Tensor] = None

    def as_floats(self) -> Dict[str, float]:
        """loss_total plus every computed task term, as plain floats."""
        out = {"loss_total": float(self.total.detach())}
        for task in TASKS:
            value = getattr(self, task)
            out[f"loss_{task}"] = float(value.detach()) if value is not None else 0.0
        return out


def _masked_step_mean(per_step: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over valid steps per sample, then mean over samples that have any step."""
    mask = mask.to(per_step.dtype)
    counts = mask.sum(dim=-1)
    has_steps = counts > 0
    if not bool(has_steps.any()):
        return per_step.sum() * 0.0
    per_sample = (per_step * mask).sum(dim=-1) / counts.clamp(min=1.0)
    return per_sample[has_steps].mean()


def step_cross_entropy(logits: torch.Tensor, targets: torch.Tensor,
                       mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    :param logits: (..., N, C) per-step logits
    :param targets: (..., N) class indices
    :param mask: (..., N) valid steps; all steps when omitted
    """
    per_step = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1).long(),
                               reduction="none").reshape(targets.shape)
    if mask is None:
        mask = torch.ones_like(per_step)
    if per_step.dim() == 1:
        return _masked_step_mean(per_step.unsqueeze(0), mask.unsqueeze(0))
    return _masked_step_mean(per_step, mask)


def loss_dap(policy_logits: torch.Tensor, target_actions: torch.Tensor,
             mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    return step_cross_entropy(policy_logits, target_actions, mask)


def loss_sfp(stop_logits: torch.Tensor, stop_targets: torch.Tensor,
             mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    return step_cross_entropy(stop_logits, stop_targets, mask)


def _bce(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    # NaN probabilities propagate to the loss instead of failing a range check
    targets = targets.to(probs.dtype)
    log_p = torch.log(probs.clamp(min=BCE_EPS))
    log_q = torch.log((1.0 - probs).clamp(min=BCE_EPS))
    return -(targets * log_p + (1.0 - targets) * log_q).mean()


def loss_sr(recovered_t: torch.Tensor, recovered_t1: torch.Tensor,
            s_t: torch.Tensor, s_t1: torch.Tensor) -> torch.Tensor:
    """Average of the two state-recovery binary cross-entropies."""
    return 0.5 * (_bce(recovered_t, s_t) + _bce(recovered_t1, s_t1))


def loss_map(probs: torch.Tensor, macro_vector: torch.Tensor) -> torch.Tensor:
    return _bce(probs, macro_vector)
