import json
import math

import numpy as np
import pytest
import torch

from conftest import make_samples
from pedp_policy.actions import MacroAction
from pedp_policy.corpus import TurnSample
from pedp_policy.losses import LossWeights, LossWeightsError, loss_map, step_cross_entropy
from pedp_policy.model import THRESHOLD, PedpConfig, PedpModel
from pedp_policy.sampling import GumbelConfig, make_generator
from pedp_policy.state_layout import DialogStateVector
from pedp_policy.targets import build_targets, collate_turns
from pedp_policy.training import (OptimizerSettings, TrainingDivergedError, fit, pedp_losses, predict_corpus,
                                  rollout_teacher_forced, total_loss)


def _zero_heads(model):
    with torch.no_grad():
        for layer in (model.policy.head, model.stop.second, model.recovery.second):
            layer.weight.zero_()
            layer.bias.zero_()
        model.decoder.w2.zero_()
        model.decoder.b2.zero_()


def test_targets_for_a_turn(tiny_samples):
    targets = build_targets(tiny_samples[3])
    assert targets.action_sequence == (0, 3, 4)
    assert targets.stop_sequence == (0, 0, 1)
    assert build_targets(tiny_samples[2]) is None


def test_collate_pads_and_masks(tiny_samples):
    batch = collate_turns(tiny_samples)
    assert batch.actions.shape == (6, 3)
    assert batch.step_mask.sum(dim=1).tolist() == [1, 2, 0, 3, 1, 2]
    assert batch.has_plan.tolist() == [True, True, False, True, True, True]
    assert batch.stops[3].tolist() == [0, 0, 1]


def test_losses_at_uninformative_heads(tiny_model, tiny_samples):
    _zero_heads(tiny_model)
    batch = collate_turns(tiny_samples)
    breakdown = pedp_losses(tiny_model, batch, LossWeights(), make_generator(0))
    assert breakdown.dap.item() == pytest.approx(math.log(5), abs=1e-5)
    assert breakdown.sfp.item() == pytest.approx(math.log(2), abs=1e-5)
    assert breakdown.sr.item() == pytest.approx(math.log(2), abs=1e-5)
    assert breakdown.map.item() == pytest.approx(math.log(2), abs=1e-5)
    assert breakdown.total.item() == pytest.approx(math.log(5) + 3 * math.log(2), abs=1e-4)


def test_weights_scale_the_total(tiny_model, tiny_samples):
    _zero_heads(tiny_model)
    batch = collate_turns(tiny_samples)
    breakdown = pedp_losses(tiny_model, batch, LossWeights(2.0, 0.0, 0.5, 1.0), make_generator(0))
    assert breakdown.total.item() == pytest.approx(2 * math.log(5) + 1.5 * math.log(2), abs=1e-4)
    assert breakdown.as_floats()["loss_sfp"] == pytest.approx(math.log(2), abs=1e-5)


def test_loss_weights_validation():
    with pytest.raises(LossWeightsError):
        LossWeights(-1.0, 1.0, 1.0, 1.0)
    with pytest.raises(LossWeightsError):
        LossWeights(0.0, 0.0, 0.0, 0.0)


def test_step_cross_entropy_ignores_padding():
    logits = torch.tensor([[[5.0, 0.0], [0.0, 0.0]]])
    targets = torch.tensor([[0, 1]])
    masked = step_cross_entropy(logits, targets, torch.tensor([[True, False]]))
    assert masked.item() == pytest.approx(math.log(1 + math.exp(-5.0)), abs=1e-6)


def test_loss_map_is_binary_cross_entropy():
    probs = torch.tensor([[0.9, 0.2]])
    expected = -(math.log(0.9) + math.log(0.8)) / 2
    assert loss_map(probs, torch.tensor([[1.0, 0.0]])).item() == pytest.approx(expected, abs=1e-6)


def _double_model():
    torch.manual_seed(1)
    return PedpModel(PedpConfig(state_dim=8, num_actions=5, hidden_dim=6, num_paths=2, max_plan_steps=3,
                                action_embed_dim=4, decoder_hidden=3, gumbel=GumbelConfig(hard=False))).double()


def test_gradient_matches_finite_differences(tiny_samples):
    model = _double_model()
    batch = collate_turns(tiny_samples).to(torch.float64)
    weights = LossWeights()

    def loss():
        return pedp_losses(model, batch, weights, make_generator(11)).total

    model.zero_grad()
    loss().backward()
    eps = 1e-6
    rng = np.random.default_rng(0)
    for group, params in model.parameter_groups().items():
        for name, param in params:
            flat = param.data.view(-1)
            grad = param.grad.view(-1)
            for i in rng.choice(flat.numel(), min(3, flat.numel()), replace=False).tolist():
                original = flat[i].item()
                with torch.no_grad():
                    flat[i] = original + eps
                    up = loss().item()
                    flat[i] = original - eps
                    down = loss().item()
                    flat[i] = original
                numeric = (up - down) / (2 * eps)
                assert grad[i].item() == pytest.approx(numeric, rel=1e-4, abs=1e-7), f"{group}.{name}[{i}]"


def test_every_parameter_receives_gradient(tiny_samples):
    model = _double_model()
    batch = collate_turns(tiny_samples).to(torch.float64)
    pedp_losses(model, batch, LossWeights(), make_generator(11)).total.backward()
    for group, params in model.parameter_groups().items():
        for name, param in params:
            assert param.grad is not None, f"{group}.{name}"
            assert torch.isfinite(param.grad).all(), f"{group}.{name}"
            assert param.grad.norm().item() > 0, f"{group}.{name}"


def test_turns_without_actions_only_train_the_multi_action_head(tiny_model, tiny_samples):
    batch = collate_turns(tiny_samples)
    before = pedp_losses(tiny_model, batch, LossWeights(), make_generator(0))
    # row 2 has an empty macro-action
    batch.next_states[2] = 1.0 - batch.next_states[2]
    batch.macro[2] = 1.0
    after = pedp_losses(tiny_model, batch, LossWeights(), make_generator(0))
    assert after.sr.item() == pytest.approx(before.sr.item(), abs=1e-7)
    assert after.dap.item() == pytest.approx(before.dap.item(), abs=1e-7)
    assert after.map.item() != pytest.approx(before.map.item(), abs=1e-6)


def test_decoder_untouched_without_multi_action_weight(tiny_model, tiny_samples):
    batch = collate_turns(tiny_samples)
    breakdown = pedp_losses(tiny_model, batch, LossWeights(1.0, 1.0, 1.0, 0.0), make_generator(0))
    breakdown.total.backward()
    assert breakdown.map is not None
    for _, param in tiny_model.decoder.named_parameters():
        assert param.grad is None or not param.grad.any()
    assert tiny_model.policy.head.weight.grad.abs().sum() > 0


def test_teacher_forced_rollout_follows_targets(tiny_model, tiny_samples):
    batch = collate_turns(tiny_samples)
    with torch.no_grad():
        h0 = tiny_model.encode_state(batch.states)
        torch.manual_seed(0)
        first = rollout_teacher_forced(tiny_model, h0, batch.actions, batch.step_mask)
        torch.manual_seed(123)
        second = rollout_teacher_forced(tiny_model, h0, batch.actions, batch.step_mask)
        torch.testing.assert_close(first.terminal, second.terminal)

        # row 3 plans actions 0, 3, 4
        h = h0[3:4]
        for action in (0, 3, 4):
            h = tiny_model.world_step(h, torch.eye(5)[[action]])
        torch.testing.assert_close(first.terminal[3:4], h)
        # a turn without actions keeps its initial embedding
        torch.testing.assert_close(first.terminal[2], h0[2])
    assert first.policy_logits.shape == (6, 3, 5)
    assert first.stop_logits.shape == (6, 3, 2)


def test_total_loss_casts_batch_to_model_dtype(tiny_model, tiny_samples):
    tiny_model.double()
    breakdown = total_loss(tiny_model, collate_turns(tiny_samples), LossWeights(), make_generator(0))
    assert breakdown.total.dtype == torch.float64


def test_predict_corpus_keeps_order(tiny_model, tiny_samples):
    predictions = predict_corpus(tiny_model, tiny_samples, make_generator(0), batch_size=4, mode=THRESHOLD)
    assert len(predictions) == len(tiny_samples)
    assert tiny_model.training


def test_fit_writes_an_epoch_log(tmp_path, tiny_model, tiny_samples):
    log = tmp_path / "train_log.jsonl"
    result = fit(tiny_model, tiny_samples, LossWeights(), OptimizerSettings(batch_size=4), epochs=2, seed=0,
                 log_path=log, run_digest="abc")
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2]
    for key in ("loss_total", "loss_dap", "loss_sfp", "loss_sr", "loss_map", "val_f1", "seconds"):
        assert key in records[0]
    assert records[0]["run_digest"] == "abc"
    assert 1 <= result.best_epoch <= 2
    assert result.best_val_f1 == max(r["val_f1"] for r in records)


def test_fit_is_reproducible(tiny_config, tiny_samples):
    finals = []
    for _ in range(2):
        torch.manual_seed(0)
        model = PedpModel(tiny_config)
        finals.append(fit(model, tiny_samples, LossWeights(), OptimizerSettings(batch_size=4), epochs=2,
                          seed=7).log)
    for a, b in zip(*finals):
        a.pop("seconds")
        b.pop("seconds")
    assert finals[0] == finals[1]


def test_fit_rejects_empty_data(tiny_model):
    with pytest.raises(ValueError):
        fit(tiny_model, [], LossWeights(), OptimizerSettings(), epochs=1, seed=0)


def test_fit_rejects_zero_epochs(tiny_model, tiny_samples):
    with pytest.raises(ValueError):
        fit(tiny_model, tiny_samples, LossWeights(), OptimizerSettings(), epochs=0, seed=0)


def test_fit_reports_divergence(tiny_model, tiny_samples):
    with torch.no_grad():
        tiny_model.encoder.first.weight.fill_(float("nan"))
    with pytest.raises(TrainingDivergedError):
        fit(tiny_model, tiny_samples, LossWeights(), OptimizerSettings(), epochs=1, seed=0)


def _distinct_samples(layout, macros):
    samples = []
    for i, members in enumerate(macros):
        bits = [int(b) for b in format(i + 1, f"0{layout.S}b")]
        state = DialogStateVector(bits, layout)
        samples.append(TurnSample(f"d{i}", 0, state, MacroAction(frozenset(members), 5), state))
    return samples


@pytest.mark.slow
def test_overfits_fifty_turns(tiny_layout):
    rng = np.random.default_rng(4)
    macros = [sorted(rng.choice(5, int(rng.integers(1, 4)), replace=False).tolist()) for _ in range(50)]
    samples = _distinct_samples(tiny_layout, macros)
    torch.manual_seed(0)
    model = PedpModel(PedpConfig(state_dim=8, num_actions=5, hidden_dim=64, num_paths=3, max_plan_steps=5,
                                 action_embed_dim=16, decoder_hidden=32))
    result = fit(model, samples, LossWeights(), OptimizerSettings(learning_rate=1e-2, batch_size=10),
                 epochs=500, seed=0)
    assert result.best_val_f1 >= 0.99
    assert result.log[-1]["loss_map"] < result.log[0]["loss_map"] / 4


def test_training_loss_trends_down(tiny_layout):
    samples = _distinct_samples(tiny_layout, [[0], [1, 2], [3], [0, 3, 4], [2], [1, 4]])
    torch.manual_seed(0)
    model = PedpModel(PedpConfig(state_dim=8, num_actions=5, hidden_dim=16, num_paths=2, max_plan_steps=3,
                                 action_embed_dim=4, decoder_hidden=8))
    result = fit(model, samples, LossWeights(), OptimizerSettings(learning_rate=1e-2, batch_size=6),
                 epochs=40, seed=0)
    totals = [r["loss_total"] for r in result.log]
    assert np.mean(totals[-5:]) < 0.8 * np.mean(totals[:5])
    teacher_forced = [r["loss_dap"] + r["loss_sfp"] + r["loss_sr"] for r in result.log]
    assert teacher_forced[-1] < teacher_forced[0]


def test_make_samples_helper_is_deterministic(tiny_layout):
    assert make_samples(tiny_layout, [[0], [1]], seed=3) == make_samples(tiny_layout, [[0], [1]], seed=3)
    assert np.unique([s.dialog_id for s in make_samples(tiny_layout, [[0]] * 4)]).tolist() == ["dlg-0", "dlg-1"]
