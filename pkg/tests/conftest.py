import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pytest
import torch

from pedp_policy.actions import ActionVocab, MacroAction
from pedp_policy.corpus import CorpusSchema, TurnSample
from pedp_policy.generator import generate_corpus
from pedp_policy.model import PedpConfig, PedpModel
from pedp_policy.schema import build_schema_document, parse_hexa_file, schema_from_dict
from pedp_policy.state_layout import BELIEF, ENTITIES, SYSTEM_ACTION, USER_ACTION, DialogStateVector, StateLayout

HEXA = Path(__file__).resolve().parents[1] / "pedp_policy" / "data" / "toy_schema.hexa"

TINY_ACTIONS = ["d-i-a", "d-i-b", "d-i-c", "d-i-d", "d-i-e"]


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def schema_document():
    logging.getLogger().setLevel(logging.WARNING)
    return build_schema_document(parse_hexa_file(HEXA))


@pytest.fixture(scope="session")
def toy_schema(schema_document):
    return schema_from_dict(schema_document)


@pytest.fixture
def tiny_config():
    return PedpConfig(state_dim=8, num_actions=5, hidden_dim=6, num_paths=2, max_plan_steps=3,
                      action_embed_dim=4, decoder_hidden=3)


@pytest.fixture
def tiny_model(tiny_config):
    torch.manual_seed(0)
    return PedpModel(tiny_config)


@pytest.fixture
def tiny_layout():
    return StateLayout.from_spans([(ENTITIES, 2), (USER_ACTION, 2), (SYSTEM_ACTION, 2), (BELIEF, 2)])


@pytest.fixture
def tiny_vocab():
    return ActionVocab(TINY_ACTIONS)


@pytest.fixture
def tiny_corpus_schema(tiny_layout, tiny_vocab):
    return CorpusSchema(tiny_layout, tiny_vocab)


def make_samples(layout: StateLayout, macros: Sequence[Sequence[int]], size: int = 5,
                 seed: int = 0, dialog_prefix: str = "dlg") -> List[TurnSample]:
    """One sample per macro, two turns per dialog, random binary states."""
    rng = np.random.default_rng(seed)
    samples = []
    for i, members in enumerate(macros):
        state = DialogStateVector(rng.integers(0, 2, layout.S), layout)
        next_state = DialogStateVector(rng.integers(0, 2, layout.S), layout)
        samples.append(TurnSample(f"{dialog_prefix}-{i // 2}", i % 2, state, MacroAction(frozenset(members), size),
                                  next_state))
    return samples


@pytest.fixture
def tiny_samples(tiny_layout):
    return make_samples(tiny_layout, [[0], [1, 2], [], [0, 3, 4], [2], [1, 4]])


@pytest.fixture(scope="session")
def generated(toy_schema):
    return generate_corpus(toy_schema, n_dialogs=12, multi_action=True, seed=5)


@pytest.fixture(scope="session")
def corpus_file(tmp_path_factory, toy_schema):
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    generate_corpus(toy_schema, n_dialogs=20, multi_action=True, seed=3, out=path)
    return path
