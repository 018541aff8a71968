"""
Supervised comparison policies.

- DiaMultiClass: one feed-forward network with a sigmoid per action.
- DiaMultiDense: the planning model's encoder and per-action decoder applied to
  [h_0 : h_0], i.e. the planning model with planning removed.
- DiaSeq: feed-forward state encoder plus a recurrent decoder that emits actions
  one at a time until an end token.
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from pedp_policy.actions import MacroAction
from pedp_policy.losses import LossBreakdown, LossWeights, loss_map, step_cross_entropy
from pedp_policy.model import (SAMPLE, FeedForward, PathDecoder, StateEncoder, StateInput, init_linear,
                               select_macro_vectors, state_tensor)
from pedp_policy.targets import TurnBatch

MULTICLASS = "multiclass"
MULTIDENSE = "multidense"
SEQ = "seq"
BASELINE_KINDS = (MULTICLASS, MULTIDENSE, SEQ)

GREEDY = "greedy"
BEAM = "beam"
DECODE_MODES = (GREEDY, SAMPLE, BEAM)


class BaselineConfigError(ValueError):
    """Raised for an unknown baseline kind or decode mode."""
    pass


@dataclass
class BaselineConfig:
    kind: str
    state_dim: int
    num_actions: int
    hidden_dim: int = 64
    decoder_hidden: int = 32
    decode_mode: str = GREEDY
    beam_width: int = 4
    max_length: int = 10
    temperature: float = 1.0
    tau_out: float = 1.0

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise BaselineConfigError(f'Unknown baseline "{self.kind}", expected one of {BASELINE_KINDS}')
        if self.decode_mode not in DECODE_MODES:
            raise BaselineConfigError(f'Unknown decode mode "{self.decode_mode}"')
        if self.kind == SEQ and self.beam_width < 1:
            raise BaselineConfigError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.temperature <= 0 or self.tau_out <= 0:
            raise BaselineConfigError("Temperatures must be strictly positive")

    @property
    def S(self) -> int:
        return self.state_dim

    @property
    def M(self) -> int:
        return self.num_actions

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "BaselineConfig":
        return cls(**data)


class _StatePolicy(nn.Module):
    """Shared input handling for the baselines."""

    def __init__(self, config: BaselineConfig):
        super().__init__()
        self.config = config

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def as_state_tensor(self, s: StateInput) -> torch.Tensor:
        return state_tensor(s, self.config.S, self.dtype)


class _ProbabilityPolicy(_StatePolicy):
    """Baselines that output an independent probability per action."""

    def action_probs(self, states: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def training_losses(self, batch: TurnBatch, weights: LossWeights,
                        generator: Optional[torch.Generator] = None) -> LossBreakdown:
        value = loss_map(self.action_probs(batch.states), batch.macro)
        return LossBreakdown(total=value, map=value)

    def predict_batch(self, states: StateInput, generator: Optional[torch.Generator] = None,
                      mode: str = SAMPLE, literal_gumbel_sigmoid: bool = False
                      ) -> Tuple[List[MacroAction], torch.Tensor, None]:
        with torch.no_grad():
            probs = self.action_probs(self.as_state_tensor(states))
            chosen = select_macro_vectors(probs, generator, mode, self.config.tau_out, literal_gumbel_sigmoid)
        return [MacroAction.from_vector(row) for row in chosen.cpu().numpy()], probs, None


class DiaMultiClass(_ProbabilityPolicy):
    kind = MULTICLASS

    def __init__(self, config: BaselineConfig):
        super().__init__(config)
        self.net = FeedForward(config.S, config.hidden_dim, config.M)

    def action_probs(self, states: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(self.as_state_tensor(states)))


class DiaMultiDense(_ProbabilityPolicy):
    kind = MULTIDENSE

    def __init__(self, config: BaselineConfig):
        super().__init__(config)
        self.encoder = StateEncoder(config.S, config.hidden_dim)
        self.decoder = PathDecoder(config.hidden_dim, config.M, config.decoder_hidden)

    def action_probs(self, states: torch.Tensor) -> torch.Tensor:
        h0 = self.encoder(self.as_state_tensor(states))
        return self.decoder(h0, h0)


class DiaSeq(_StatePolicy):
    kind = SEQ

    def __init__(self, config: BaselineConfig):
        super().__init__(config)
        self.end_token = config.M
        self.start_token = config.M + 1
        self.encoder = FeedForward(config.S, config.hidden_dim, config.hidden_dim)
        self.token_embedding = nn.Embedding(config.M + 2, config.hidden_dim)
        self.cell = nn.GRUCell(config.hidden_dim, config.hidden_dim)
        self.output = nn.Linear(config.hidden_dim, config.M + 1)
        init_linear(self.output)

    def _step(self, tokens: torch.Tensor, hidden: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        hidden = self.cell(self.token_embedding(tokens), hidden)
        return self.output(hidden), hidden

    def training_losses(self, batch: TurnBatch, weights: LossWeights,
                        generator: Optional[torch.Generator] = None) -> LossBreakdown:
        """Teacher-forced cross-entropy over the index-ordered actions followed by the end token."""
        size, width = batch.actions.shape
        lengths = batch.step_mask.sum(dim=1)
        sequence = torch.full((size, width + 1), self.end_token, dtype=torch.long)
        sequence[:, :width] = torch.where(batch.step_mask, batch.actions, sequence[:, :width])
        mask = torch.arange(width + 1).unsqueeze(0) <= lengths.unsqueeze(1)

        hidden = self.encoder(self.as_state_tensor(batch.states))
        tokens = torch.full((size,), self.start_token, dtype=torch.long)
        logits = []
        for position in range(width + 1):
            step_logits, hidden = self._step(tokens, hidden)
            logits.append(step_logits)
            tokens = sequence[:, position]
        value = step_cross_entropy(torch.stack(logits, dim=1), sequence, mask)
        return LossBreakdown(total=value, map=value)

    def _sample_or_greedy(self, hidden: torch.Tensor, mode: str,
                          generator: Optional[torch.Generator]) -> List[int]:
        emitted = []
        token = self.start_token
        for _ in range(self.config.max_length):
            logits, hidden = self._step(torch.tensor([token]), hidden)
            if mode == GREEDY:
                token = int(logits.argmax(dim=-1))
            else:
                probs = F.softmax(logits / self.config.temperature, dim=-1)
                token = int(torch.multinomial(probs[0], 1, generator=generator))
            if token == self.end_token:
                break
            emitted.append(token)
        return emitted

    def _beam_search(self, hidden: torch.Tensor, width: int) -> List[int]:
        beams = [(0.0, [], self.start_token, hidden)]
        finished = []
        for _ in range(self.config.max_length):
            candidates = []
            for score, emitted, token, state in beams:
                logits, next_state = self._step(torch.tensor([token]), state)
                top = torch.topk(F.log_softmax(logits, dim=-1)[0], min(width, self.config.M + 1))
                for log_prob, index in zip(top.values.tolist(), top.indices.tolist()):
                    candidates.append((score + log_prob, emitted, index, next_state))
            candidates.sort(key=lambda c: c[0], reverse=True)
            beams = []
            for score, emitted, index, next_state in candidates[:width]:
                if index == self.end_token:
                    finished.append((score, emitted))
                else:
                    beams.append((score, emitted + [index], index, next_state))
            if not beams:
                break
        if finished:
            return max(finished, key=lambda f: f[0])[1]
        return beams[0][1]

    def decode(self, state: StateInput, mode: Optional[str] = None,
               generator: Optional[torch.Generator] = None) -> List[int]:
        """Emitted action indices in order (duplicates possible)."""
        mode = mode or self.config.decode_mode
        with torch.no_grad():
            hidden = self.encoder(self.as_state_tensor(state).reshape(1, -1))
            if mode == BEAM:
                return self._beam_search(hidden, self.config.beam_width)
            return self._sample_or_greedy(hidden, mode, generator)

    def dia_seq(self, s_t: StateInput, mode: Optional[str] = None,
                generator: Optional[torch.Generator] = None) -> MacroAction:
        return MacroAction(frozenset(self.decode(s_t, mode, generator)), self.config.M)

    def predict_batch(self, states: StateInput, generator: Optional[torch.Generator] = None,
                      mode: Optional[str] = None) -> Tuple[List[MacroAction], None, None]:
        rows = self.as_state_tensor(states).reshape(-1, self.config.S)
        return [self.dia_seq(row, mode, generator) for row in rows], None, None


BASELINE_CLASSES = {MULTICLASS: DiaMultiClass, MULTIDENSE: DiaMultiDense, SEQ: DiaSeq}


def build_baseline(config: BaselineConfig) -> nn.Module:
    return BASELINE_CLASSES[config.kind](config)


def dia_multiclass(model: DiaMultiClass, s_t: StateInput) -> torch.Tensor:
    with torch.no_grad():
        return model.action_probs(s_t)


def dia_multidense(model: DiaMultiDense, s_t: StateInput) -> torch.Tensor:
    with torch.no_grad():
        return model.action_probs(s_t)
