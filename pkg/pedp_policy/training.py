"""
The four-task training objective and the minibatch training loop.

DAP, SFP and SR are computed on a teacher-forced rollout: the world model is
fed the target action at every step, so the per-step targets stay aligned with
the embeddings they supervise. MAP runs the free-running K-path pipeline
exactly as at inference.
"""

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader

from pedp_policy.actions import MacroAction
from pedp_policy.baselines import SEQ
from pedp_policy.corpus import TurnSample
from pedp_policy.evaluation import standard_metrics
from pedp_policy.losses import LossBreakdown, LossWeights, loss_dap, loss_map, loss_sfp, loss_sr
from pedp_policy.model import THRESHOLD, PedpModel
from pedp_policy.sampling import SamplingError, make_generator
from pedp_policy.targets import TurnBatch, TurnDataset, collate_turns


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""
    pass


@dataclass
class OptimizerSettings:
    learning_rate: float = 1e-3
    batch_size: int = 32
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.grad_clip <= 0:
            raise ValueError(f"Invalid optimizer settings: {self}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TeacherForcedRollout:
    policy_logits: torch.Tensor
    stop_logits: torch.Tensor
    terminal: torch.Tensor


def rollout_teacher_forced(model: PedpModel, h0: torch.Tensor, actions: torch.Tensor,
                           step_mask: torch.Tensor) -> TeacherForcedRollout:
    """
    Run exactly N steps per row, feeding the target action into the world model.

    :param h0: (B, H) initial embeddings
    :param actions: (B, N) target action indices, padded
    :param step_mask: (B, N) valid steps; a row's terminal embedding is the one after its last valid step
    """
    h = h0
    policy_logits, stop_logits = [], []
    for n in range(actions.shape[-1]):
        policy_logits.append(model.policy(h))
        one_hot = F.one_hot(actions[:, n], model.config.M).to(h.dtype)
        h_next = model.world_step(h, one_hot)
        stop_logits.append(model.stop(h0, h_next))
        h = torch.where(step_mask[:, n].unsqueeze(-1), h_next, h)
    return TeacherForcedRollout(torch.stack(policy_logits, dim=1), torch.stack(stop_logits, dim=1), h)


def pedp_losses(model: PedpModel, batch: TurnBatch, weights: LossWeights,
                generator: Optional[torch.Generator] = None, planning: bool = True) -> LossBreakdown:
    h0 = model.encode_state(batch.states)
    forced = rollout_teacher_forced(model, h0, batch.actions, batch.step_mask)

    dap = loss_dap(forced.policy_logits, batch.actions, batch.step_mask)
    sfp = loss_sfp(forced.stop_logits, batch.stops, batch.step_mask)
    rows = batch.has_plan
    if bool(rows.any()):
        sr = loss_sr(model.recover_state(h0[rows]), model.recover_state(forced.terminal[rows]),
                     batch.states[rows], batch.next_states[rows])
    else:
        sr = h0.sum() * 0.0

    if weights.w_map > 0:
        probs, _ = model.multi_action_probs(batch.states, generator, planning=planning)
        map_ = loss_map(probs, batch.macro)
    else:
        # still reported, but the decoder must not see any gradient
        with torch.no_grad():
            probs, _ = model.multi_action_probs(batch.states, generator, planning=planning)
            map_ = loss_map(probs, batch.macro)

    terms = {"dap": dap, "sfp": sfp, "sr": sr, "map": map_}
    total = sum(weights.weight(task) * value for task, value in terms.items() if weights.weight(task) > 0)
    return LossBreakdown(total=total, **terms)


def total_loss(model: nn.Module, batch: TurnBatch, weights: LossWeights,
               generator: Optional[torch.Generator] = None) -> LossBreakdown:
    """Weighted training loss of any policy model, with its per-task breakdown."""
    batch = batch.to(model.dtype)
    if isinstance(model, PedpModel):
        return pedp_losses(model, batch, weights, generator)
    return model.training_losses(batch, weights, generator)


def predict_corpus(model: nn.Module, samples: Sequence[TurnSample], generator: Optional[torch.Generator] = None,
                   batch_size: int = 256, **options) -> List[MacroAction]:
    """Predict one macro-action per turn, in corpus order."""
    was_training = model.training
    model.eval()
    predictions = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        states = torch.stack([model.as_state_tensor(s.state) for s in chunk])
        macros, _, _ = model.predict_batch(states, generator, **options)
        predictions.extend(macros)
    model.train(was_training)
    return predictions


def validation_options(model: nn.Module) -> Dict:
    if getattr(model, "kind", None) == SEQ:
        return {}
    return {"mode": THRESHOLD}


@dataclass
class FitResult:
    best_epoch: int
    best_val_f1: float
    final_loss: float
    log: List[Dict] = field(default_factory=list)
    best_state: Optional[Dict[str, torch.Tensor]] = None


def fit(model: nn.Module, train_samples: Sequence[TurnSample], weights: LossWeights,
        settings: OptimizerSettings, epochs: int, seed: int,
        val_samples: Optional[Sequence[TurnSample]] = None, log_path: Optional[Path] = None,
        run_digest: Optional[str] = None, predict_options: Optional[Dict] = None) -> FitResult:
    """
    Train ``model`` in place and restore its best-validation parameters at the end.

    Validation falls back to the training turns when no validation split is given.
    One JSON-lines record per epoch is appended to ``log_path``.
    """
    if not train_samples:
        raise ValueError("Cannot train on an empty dataset")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    val_samples = list(val_samples) if val_samples else list(train_samples)
    options = predict_options if predict_options is not None else validation_options(model)

    sample_generator = make_generator(seed)
    loader = DataLoader(TurnDataset(train_samples), batch_size=settings.batch_size, shuffle=True,
                        collate_fn=collate_turns, generator=make_generator(seed + 1))
    optimizer = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)

    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = log_path.open("w", encoding="utf-8")

    result = FitResult(best_epoch=0, best_val_f1=-1.0, final_loss=math.nan)
    try:
        for epoch in range(1, epochs + 1):
            started = time.perf_counter()
            model.train()
            sums: Dict[str, float] = {}
            seen = 0
            for batch in loader:
                try:
                    breakdown = total_loss(model, batch, weights, sample_generator)
                except SamplingError as err:
                    raise TrainingDivergedError(f"Non-finite planner logits at epoch {epoch}: {err}") from err
                if not torch.isfinite(breakdown.total):
                    logging.error(f"Loss diverged at epoch {epoch}: {breakdown.as_floats()}")
                    raise TrainingDivergedError(f"Non-finite training loss at epoch {epoch}")
                optimizer.zero_grad()
                breakdown.total.backward()
                nn.utils.clip_grad_norm_(model.parameters(), settings.grad_clip)
                optimizer.step()
                for key, value in breakdown.as_floats().items():
                    sums[key] = sums.get(key, 0.0) + value * len(batch)
                seen += len(batch)

            predictions = predict_corpus(model, val_samples, make_generator(seed + 2), **options)
            report = standard_metrics(predictions, [s.macro for s in val_samples])
            record = {"epoch": epoch}
            record.update({key: value / seen for key, value in sums.items()})
            record.update({
                "val_f1": report.f1,
                "val_precision": report.precision,
                "val_recall": report.recall,
                "seconds": round(time.perf_counter() - started, 3),
            })
            if run_digest is not None:
                record["run_digest"] = run_digest
            result.log.append(record)
            result.final_loss = record["loss_total"]
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            logging.info(f"epoch {epoch}: loss {record['loss_total']:.4f} "
                         f"(dap {record['loss_dap']:.4f}, sfp {record['loss_sfp']:.4f}, "
                         f"sr {record['loss_sr']:.4f}, map {record['loss_map']:.4f}) val F1 {report.f1:.4f}")

            if report.f1 > result.best_val_f1:
                result.best_val_f1 = report.f1
                result.best_epoch = epoch
                result.best_state = copy.deepcopy(model.state_dict())
    finally:
        if log_file is not None:
            log_file.close()

    model.load_state_dict(result.best_state)
    logging.info(f"Best validation F1 {result.best_val_f1:.4f} at epoch {result.best_epoch}")
    return result
