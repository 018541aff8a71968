"""
Planning targets for one corpus turn and padded minibatches of turns.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset

from pedp_policy.corpus import TurnSample


@dataclass(frozen=True)
class PlanningTargets:
    action_sequence: Tuple[int, ...]
    stop_sequence: Tuple[int, ...]
    s_t: np.ndarray
    s_t1: np.ndarray
    macro_vector: np.ndarray

    @property
    def N(self) -> int:
        return len(self.action_sequence)


def build_targets(sample: TurnSample) -> Optional[PlanningTargets]:
    """
    Canonical single-action targets for a turn: its actions in vocabulary-index
    order and a stop sequence 0...01. Returns None for a turn without actions,
    which then only contributes to the multi-action objective.
    """
    actions = tuple(sample.macro.sorted_members())
    if not actions:
        return None
    stops = (0,) * (len(actions) - 1) + (1,)
    return PlanningTargets(actions, stops, sample.state.bits, sample.next_state.bits, sample.macro.vector())


@dataclass
class TurnBatch:
    states: torch.Tensor
    next_states: torch.Tensor
    macro: torch.Tensor
    actions: torch.Tensor
    stops: torch.Tensor
    step_mask: torch.Tensor
    has_plan: torch.Tensor

    def __len__(self) -> int:
        return self.states.shape[0]

    def to(self, dtype: torch.dtype) -> "TurnBatch":
        return TurnBatch(self.states.to(dtype), self.next_states.to(dtype), self.macro.to(dtype),
                         self.actions, self.stops, self.step_mask, self.has_plan)


def collate_turns(samples: Sequence[TurnSample]) -> TurnBatch:
    """Stack turns, padding action/stop sequences to the longest one in the batch."""
    targets = [build_targets(sample) for sample in samples]
    width = max([t.N for t in targets if t is not None] + [1])
    actions = np.zeros((len(samples), width), dtype=np.int64)
    stops = np.zeros((len(samples), width), dtype=np.int64)
    mask = np.zeros((len(samples), width), dtype=bool)
    for row, target in enumerate(targets):
        if target is None:
            continue
        actions[row, :target.N] = target.action_sequence
        stops[row, :target.N] = target.stop_sequence
        mask[row, :target.N] = True
    return TurnBatch(
        states=torch.as_tensor(np.stack([s.state.bits for s in samples]), dtype=torch.float32),
        next_states=torch.as_tensor(np.stack([s.next_state.bits for s in samples]), dtype=torch.float32),
        macro=torch.as_tensor(np.stack([s.macro.vector() for s in samples]), dtype=torch.float32),
        actions=torch.as_tensor(actions),
        stops=torch.as_tensor(stops),
        step_mask=torch.as_tensor(mask),
        has_plan=torch.as_tensor([t is not None for t in targets]),
    )


class TurnDataset(Dataset):
    def __init__(self, samples: Sequence[TurnSample]):
        self.samples: List[TurnSample] = list(samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> TurnSample:
        return self.samples[index]
