"""
The planning-enhanced dialog policy.

A state encoder turns the multi-hot dialog state into an embedding h_0. From
h_0 the model plans K single-action paths: a discrete policy picks one atomic
action per step, a GRU world model moves the embedding forward and a stop
predictor compares h_0 with the new embedding to decide whether the fragment
is complete. Each path's terminal embedding is decoded, together with h_0, by
M independent per-action classifiers; the K distributions are averaged and the
macro-action is sampled with Gumbel-Sigmoid (or thresholded).

A recovery model maps embeddings back to the structured state; it only
supervises training.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from pedp_policy.actions import MacroAction
from pedp_policy.sampling import (GumbelConfig, gumbel_sigmoid, gumbel_softmax, hard_binarize,
                                  probability_logit)
from pedp_policy.state_layout import DialogStateVector

SAMPLE = "sample"
THRESHOLD = "threshold"
PREDICTION_MODES = (SAMPLE, THRESHOLD)
MIN_PLAN_STEPS = 10

# trainable parameter sets by submodule: encoder (eta), policy (theta),
# world model (phi), stop predictor (gamma), recovery (zeta), decoder (omega)
PARAMETER_GROUPS = ("encoder", "policy", "world", "stop", "recovery", "decoder")


class ShapeError(ValueError):
    """Raised when an input does not have the width the configuration expects."""
    pass


@dataclass
class PedpConfig:
    state_dim: int
    num_actions: int
    hidden_dim: int = 64
    num_paths: int = 3
    max_plan_steps: int = MIN_PLAN_STEPS
    action_embed_dim: int = 32
    decoder_hidden: int = 32
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)

    def __post_init__(self):
        if isinstance(self.gumbel, dict):
            self.gumbel = GumbelConfig(**self.gumbel)
        for name in ("state_dim", "num_actions", "hidden_dim", "num_paths", "max_plan_steps",
                     "action_embed_dim", "decoder_hidden"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def S(self) -> int:
        return self.state_dim

    @property
    def H(self) -> int:
        return self.hidden_dim

    @property
    def M(self) -> int:
        return self.num_actions

    @property
    def K(self) -> int:
        return self.num_paths

    @property
    def N_max(self) -> int:
        return self.max_plan_steps

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "PedpConfig":
        return cls(**data)


def plan_horizon(max_cardinality: int, floor: int = MIN_PLAN_STEPS) -> int:
    """Planning cap: largest macro-action in the training data plus two, at least ``floor``."""
    return max(floor, max_cardinality + 2)


def select_macro_vectors(probs: torch.Tensor, generator: Optional[torch.Generator] = None,
                         mode: str = SAMPLE, tau: float = 1.0,
                         literal_gumbel_sigmoid: bool = False) -> torch.Tensor:
    """
    Binary macro vectors from per-action probabilities.

    ``threshold`` keeps probs > 0.5. ``sample`` draws Gumbel-Sigmoid on logit(probs),
    or on the probabilities themselves when ``literal_gumbel_sigmoid`` is set.
    """
    if mode == THRESHOLD:
        return hard_binarize(probs)
    if mode != SAMPLE:
        raise ValueError(f'Unknown prediction mode "{mode}"')
    pre = probs if literal_gumbel_sigmoid else probability_logit(probs)
    return hard_binarize(gumbel_sigmoid(pre, tau, generator))


def init_linear(layer: nn.Linear) -> None:
    nn.init.xavier_uniform_(layer.weight)
    nn.init.zeros_(layer.bias)


class FeedForward(nn.Module):
    """Two linear layers with a ReLU in between."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int):
        super().__init__()
        self.first = nn.Linear(in_dim, hidden_dim)
        self.second = nn.Linear(hidden_dim, out_dim)
        init_linear(self.first)
        init_linear(self.second)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.second(F.relu(self.first(x)))


class StateEncoder(FeedForward):
    def __init__(self, state_dim: int, hidden_dim: int):
        super().__init__(state_dim, hidden_dim, hidden_dim)


class DiscretePolicy(nn.Module):
    """Single linear layer over the current embedding."""

    def __init__(self, hidden_dim: int, num_actions: int):
        super().__init__()
        self.head = nn.Linear(hidden_dim, num_actions)
        init_linear(self.head)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.head(h)


class WorldModel(nn.Module):
    """GRU cell whose hidden state is the dialog embedding and whose input is Emb(a)."""

    def __init__(self, num_actions: int, embed_dim: int, hidden_dim: int):
        super().__init__()
        self.embedding = nn.Parameter(torch.empty(num_actions, embed_dim))
        self.cell = nn.GRUCell(embed_dim, hidden_dim)
        nn.init.xavier_uniform_(self.embedding)
        nn.init.xavier_uniform_(self.cell.weight_ih)
        nn.init.xavier_uniform_(self.cell.weight_hh)
        nn.init.zeros_(self.cell.bias_ih)
        nn.init.zeros_(self.cell.bias_hh)

    def forward(self, h: torch.Tensor, one_hot: torch.Tensor) -> torch.Tensor:
        x = one_hot @ self.embedding
        lead = h.shape[:-1]
        out = self.cell(x.reshape(-1, x.shape[-1]), h.reshape(-1, h.shape[-1]))
        return out.reshape(*lead, h.shape[-1])


class StopPredictor(FeedForward):
    """Two stop logits (class 1 = stop) from [h_0 : h_next]."""

    def __init__(self, hidden_dim: int):
        super().__init__(2 * hidden_dim, hidden_dim, 2)

    def forward(self, h0: torch.Tensor, h_next: torch.Tensor) -> torch.Tensor:
        return super().forward(torch.cat([h0, h_next], dim=-1))


class RecoveryModel(FeedForward):
    def __init__(self, hidden_dim: int, state_dim: int):
        super().__init__(hidden_dim, hidden_dim, state_dim)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(super().forward(h))


class PathDecoder(nn.Module):
    """
    M independent two-layer classifiers over [h_0 : h_terminal].

    Weights are stored stacked along a leading action axis; row m only ever
    touches output m.
    """

    def __init__(self, hidden_dim: int, num_actions: int, decoder_hidden: int):
        super().__init__()
        in_dim = 2 * hidden_dim
        self.w1 = nn.Parameter(torch.empty(num_actions, in_dim, decoder_hidden))
        self.b1 = nn.Parameter(torch.zeros(num_actions, decoder_hidden))
        self.w2 = nn.Parameter(torch.empty(num_actions, decoder_hidden))
        self.b2 = nn.Parameter(torch.zeros(num_actions))
        bound1 = math.sqrt(6.0 / (in_dim + decoder_hidden))
        bound2 = math.sqrt(6.0 / (decoder_hidden + 1))
        nn.init.uniform_(self.w1, -bound1, bound1)
        nn.init.uniform_(self.w2, -bound2, bound2)

    def forward(self, h0: torch.Tensor, h_terminal: torch.Tensor) -> torch.Tensor:
        x = torch.cat([h0, h_terminal], dim=-1)
        hidden = F.relu(torch.einsum("...i,mid->...md", x, self.w1) + self.b1)
        return torch.sigmoid(torch.einsum("...md,md->...m", hidden, self.w2) + self.b2)


@dataclass
class PlanStep:
    action: int
    one_hot: torch.Tensor
    logits: torch.Tensor
    embedding: torch.Tensor
    stop_logits: torch.Tensor
    stop: int


@dataclass
class PlannedPath:
    initial: torch.Tensor
    steps: List[PlanStep]
    terminal: torch.Tensor
    truncated: bool

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def actions(self) -> List[int]:
        return [step.action for step in self.steps]

    @property
    def stop_flags(self) -> List[int]:
        return [step.stop for step in self.steps]


@dataclass
class RolloutStep:
    actions: torch.Tensor
    samples: torch.Tensor
    logits: torch.Tensor
    embeddings: torch.Tensor
    stop_logits: torch.Tensor
    stops: torch.Tensor
    active: torch.Tensor


@dataclass
class Rollout:
    terminal: torch.Tensor
    lengths: torch.Tensor
    truncated: torch.Tensor
    steps: List[RolloutStep]


@dataclass
class Prediction:
    macro: MacroAction
    probs: torch.Tensor
    paths: List[PlannedPath]


StateInput = Union[DialogStateVector, np.ndarray, torch.Tensor, Sequence[int]]


def state_tensor(s: StateInput, width: int, dtype: torch.dtype) -> torch.Tensor:
    """A float tensor of states (any leading shape) whose last dimension must be ``width``."""
    if isinstance(s, DialogStateVector):
        s = s.bits
    if isinstance(s, torch.Tensor):
        tensor = s.to(dtype)
    else:
        tensor = torch.as_tensor(np.array(s, dtype=np.float64), dtype=dtype)
    if tensor.shape[-1] != width:
        raise ShapeError(f"State width {tensor.shape[-1]} does not match S={width}")
    return tensor


class PedpModel(nn.Module):
    kind = "pedp"

    def __init__(self, config: PedpConfig):
        super().__init__()
        self.config = config
        self.encoder = StateEncoder(config.S, config.H)
        self.policy = DiscretePolicy(config.H, config.M)
        self.world = WorldModel(config.M, config.action_embed_dim, config.H)
        self.stop = StopPredictor(config.H)
        self.recovery = RecoveryModel(config.H, config.S)
        self.decoder = PathDecoder(config.H, config.M, config.decoder_hidden)

    @property
    def dtype(self) -> torch.dtype:
        return self.policy.head.weight.dtype

    def parameter_groups(self) -> Dict[str, List[Tuple[str, nn.Parameter]]]:
        return {group: list(getattr(self, group).named_parameters()) for group in PARAMETER_GROUPS}

    def as_state_tensor(self, s: StateInput) -> torch.Tensor:
        return state_tensor(s, self.config.S, self.dtype)

    def encode_state(self, s: StateInput) -> torch.Tensor:
        return self.encoder(self.as_state_tensor(s))

    def policy_step(self, h: torch.Tensor,
                    generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Return (action index, one-hot sample, logits)."""
        logits = self.policy(h)
        sample, index = gumbel_softmax(logits, self.config.gumbel.tau_d, generator, hard=self.config.gumbel.hard)
        return index, sample, logits

    def world_step(self, h: torch.Tensor, one_hot: torch.Tensor) -> torch.Tensor:
        return self.world(h, one_hot)

    def stop_predict(self, h0: torch.Tensor, h_next: torch.Tensor,
                     generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return (stop flag in {0, 1}, stop logits)."""
        logits = self.stop(h0, h_next)
        _, flag = gumbel_softmax(logits, self.config.gumbel.tau_s, generator, hard=self.config.gumbel.hard)
        return flag, logits

    def recover_state(self, h: torch.Tensor) -> torch.Tensor:
        return self.recovery(h)

    def decode_path(self, h0: torch.Tensor, h_terminal: torch.Tensor) -> torch.Tensor:
        return self.decoder(h0, h_terminal)

    @staticmethod
    def aggregate(paths: Union[torch.Tensor, Sequence[torch.Tensor]]) -> torch.Tensor:
        """Elementwise mean over the path axis (second to last)."""
        if not isinstance(paths, torch.Tensor):
            paths = torch.stack(list(paths), dim=-2)
        return paths.mean(dim=-2)

    def rollout(self, h0: torch.Tensor, generator: Optional[torch.Generator] = None) -> Rollout:
        """
        Free-running planning for every embedding in ``h0`` (any leading shape).

        A path stops after the step whose stop flag is 1, or after N_max steps
        (truncated). Finished paths keep their terminal embedding while the rest
        continue.
        """
        h = h0
        active = torch.ones(h0.shape[:-1], dtype=torch.bool)
        lengths = torch.zeros(h0.shape[:-1], dtype=torch.long)
        steps = []
        for _ in range(self.config.N_max):
            actions, samples, logits = self.policy_step(h, generator)
            h_next = self.world_step(h, samples)
            stops, stop_logits = self.stop_predict(h0, h_next, generator)
            steps.append(RolloutStep(actions, samples, logits, h_next, stop_logits, stops, active))
            h = torch.where(active.unsqueeze(-1), h_next, h)
            lengths = lengths + active.long()
            active = active & (stops == 0)
            if not bool(active.any()):
                break
        if bool(active.any()):
            logging.debug(f"{int(active.sum())} planned path(s) truncated at N_max={self.config.N_max}")
        return Rollout(h, lengths, active, steps)

    @staticmethod
    def _unpack_path(h0: torch.Tensor, rollout: Rollout, index: Tuple[int, ...]) -> PlannedPath:
        length = int(rollout.lengths[index])
        steps = [
            PlanStep(
                action=int(step.actions[index]),
                one_hot=step.samples[index],
                logits=step.logits[index],
                embedding=step.embeddings[index],
                stop_logits=step.stop_logits[index],
                stop=int(step.stops[index]),
            )
            for step in rollout.steps[:length]
        ]
        return PlannedPath(h0, steps, rollout.terminal[index], bool(rollout.truncated[index]))

    def plan_path(self, h0: torch.Tensor, generator: Optional[torch.Generator] = None) -> PlannedPath:
        rollout = self.rollout(h0.reshape(1, -1), generator)
        return self._unpack_path(h0, rollout, (0,))

    def multi_action_probs(self, states: torch.Tensor, generator: Optional[torch.Generator] = None,
                           num_paths: Optional[int] = None,
                           planning: bool = True) -> Tuple[torch.Tensor, Optional[Rollout]]:
        """P_t for a batch of states; differentiable (used by the multi-action objective)."""
        h0 = self.encode_state(states)
        if not planning:
            return self.decode_path(h0, h0), None
        k = num_paths or self.config.K
        h0_paths = h0.unsqueeze(-2).expand(*h0.shape[:-1], k, h0.shape[-1])
        rollout = self.rollout(h0_paths, generator)
        per_path = self.decode_path(h0_paths, rollout.terminal)
        return self.aggregate(per_path), rollout

    def select_actions(self, probs: torch.Tensor, generator: Optional[torch.Generator] = None,
                       mode: str = SAMPLE, literal_gumbel_sigmoid: bool = False) -> torch.Tensor:
        return select_macro_vectors(probs, generator, mode, self.config.gumbel.tau_out, literal_gumbel_sigmoid)

    def predict_batch(self, states: StateInput, generator: Optional[torch.Generator] = None,
                      mode: str = SAMPLE, num_paths: Optional[int] = None, ensemble: bool = True,
                      planning: bool = True, literal_gumbel_sigmoid: bool = False
                      ) -> Tuple[List[MacroAction], torch.Tensor, Optional[Rollout]]:
        with torch.no_grad():
            states = self.as_state_tensor(states)
            k = (num_paths or self.config.K) if ensemble else 1
            probs, rollout = self.multi_action_probs(states, generator, k, planning)
            chosen = self.select_actions(probs, generator, mode, literal_gumbel_sigmoid)
        macros = [MacroAction.from_vector(row) for row in chosen.cpu().numpy()]
        return macros, probs, rollout

    def predict_macro(self, s_t: StateInput, generator: Optional[torch.Generator] = None,
                      mode: str = SAMPLE, num_paths: Optional[int] = None, ensemble: bool = True,
                      planning: bool = True, literal_gumbel_sigmoid: bool = False) -> Prediction:
        """
        Predict one macro-action.

        :param ensemble: plan K paths (False plans a single path)
        :param planning: False decodes [h_0 : h_0] without planning
        """
        states = self.as_state_tensor(s_t).reshape(1, -1)
        macros, probs, rollout = self.predict_batch(states, generator, mode, num_paths, ensemble,
                                                    planning, literal_gumbel_sigmoid)
        paths = []
        if rollout is not None:
            with torch.no_grad():
                h0 = self.encode_state(states)[0]
            paths = [self._unpack_path(h0, rollout, (0, k)) for k in range(rollout.lengths.shape[-1])]
        return Prediction(macros[0], probs[0], paths)
