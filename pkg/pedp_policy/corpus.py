"""
Read and write turn-level JSON-lines corpora and their schema sidecar.

Each corpus line holds one system turn::

    {"dialog_id": str, "turn_id": int, "state": [0/1,...],
     "macro_action": ["dom-int-slot",...], "next_state": [0/1,...]}

The sidecar (``<name>.schema.json``) declares the state segment layout and the
action list; loaders verify the vocabulary digest against it.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pedp_policy.actions import ActionVocab, MacroAction, UnknownActionError, VocabError, encode_macro
from pedp_policy.digests import _convert_to_id
from pedp_policy.state_layout import DialogStateVector, StateLayout, StateLayoutError

SIDECAR_SUFFIX = ".schema.json"
SIDECAR_VERSION = 1
REQUIRED_FIELDS = ("dialog_id", "turn_id", "state", "macro_action", "next_state")


class CorpusError(ValueError):
    """Raised when a corpus file or its sidecar violates the schema."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class CorpusSchema:
    """The sidecar contents: state layout, system action vocabulary and user act names."""

    layout: StateLayout
    vocab: ActionVocab
    user_actions: Tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> Dict:
        return {
            "format_version": SIDECAR_VERSION,
            "segments": self.layout.spans(),
            "layout_digest": self.layout.digest,
            "actions": self.vocab.texts(),
            "vocab_digest": self.vocab.digest,
            "user_actions": list(self.user_actions),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CorpusSchema":
        try:
            layout = StateLayout.from_spans([tuple(span) for span in data["segments"]])
            vocab = ActionVocab(data["actions"])
            declared = data["vocab_digest"]
        except (KeyError, TypeError) as err:
            raise CorpusError(f"Malformed schema sidecar: {err}") from err
        vocab.verify_digest(declared)
        return cls(layout, vocab, tuple(data.get("user_actions", [])))


@dataclass(frozen=True)
class TurnSample:
    dialog_id: str
    turn_id: int
    state: DialogStateVector
    macro: MacroAction
    next_state: DialogStateVector

    def to_record(self, vocab: ActionVocab) -> Dict:
        return {
            "dialog_id": self.dialog_id,
            "turn_id": self.turn_id,
            "state": self.state.tolist(),
            "macro_action": [vocab.actions[i].text for i in self.macro.sorted_members()],
            "next_state": self.next_state.tolist(),
        }


def sidecar_path(corpus_path: Path) -> Path:
    corpus_path = Path(corpus_path)
    return corpus_path.with_name(corpus_path.stem + SIDECAR_SUFFIX)


def read_sidecar(path: Path) -> CorpusSchema:
    try:
        with Path(path).open("r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as err:
        raise CorpusError(f"Unable to read schema sidecar {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise CorpusError(f"Schema sidecar {path} is not valid JSON: {err}") from err
    return CorpusSchema.from_dict(data)


def _parse_line(line: str, lineno: int, schema: CorpusSchema) -> TurnSample:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as err:
        raise CorpusError(f"invalid JSON ({err.msg})", lineno) from err
    if not isinstance(record, dict):
        raise CorpusError("expected a JSON object", lineno)
    missing = [name for name in REQUIRED_FIELDS if name not in record]
    if missing:
        raise CorpusError(f"missing fields {missing}", lineno)
    try:
        state = DialogStateVector(record["state"], schema.layout)
        next_state = DialogStateVector(record["next_state"], schema.layout)
    except StateLayoutError as err:
        raise CorpusError(str(err), lineno) from err
    try:
        macro = MacroAction.from_vector(encode_macro(record["macro_action"], schema.vocab))
    except UnknownActionError as err:
        raise CorpusError(str(err), lineno) from err
    return TurnSample(str(record["dialog_id"]), int(record["turn_id"]), state, macro, next_state)


def load_corpus(path: Path, schema: Optional[CorpusSchema] = None,
                expected_vocab_digest: Optional[str] = None) -> List[TurnSample]:
    """
    Load and validate every turn of a corpus against one shared layout and vocabulary.

    :param schema: sidecar contents; read from ``<name>.schema.json`` when omitted
    :param expected_vocab_digest: digest the corpus vocabulary must match (e.g. a checkpoint's)
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"Corpus file {path} does not exist")
    if schema is None:
        schema = read_sidecar(sidecar_path(path))
    if expected_vocab_digest is not None:
        try:
            schema.vocab.verify_digest(expected_vocab_digest)
        except VocabError as err:
            raise CorpusError(str(err)) from err

    samples = []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            samples.append(_parse_line(line, lineno, schema))

    if not samples:
        logging.warning(f"Corpus {path} is empty")
    else:
        logging.info(f"Loaded {len(samples)} turns from {path}")
    return samples


def write_corpus(samples: Iterable[TurnSample], path: Path, schema: CorpusSchema) -> Path:
    """Write samples as JSON lines plus the schema sidecar; returns the sidecar path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps(sample.to_record(schema.vocab)) + "\n")
            count += 1
    side = sidecar_path(path)
    with side.open("w", encoding="utf-8") as f:
        json.dump(schema.to_dict(), f, indent=2)
    logging.info(f"Wrote {count} turns to {path}")
    return side


def _dialog_bucket(dialog_id: str) -> float:
    return int(_convert_to_id(dialog_id)[:8], 16) / 0xFFFFFFFF


def split_by_dialog(samples: Sequence[TurnSample],
                    fraction: float = 0.1) -> Tuple[List[TurnSample], List[TurnSample]]:
    """Split by dialog-id hash so that no dialog contributes turns to both sides."""
    kept, held_out = [], []
    for sample in samples:
        (held_out if _dialog_bucket(sample.dialog_id) < fraction else kept).append(sample)
    return kept, held_out


def split_by_cardinality(samples: Sequence[TurnSample],
                         max_train_cardinality: int = 2) -> Tuple[List[TurnSample], List[TurnSample]]:
    """
    Held-out-combination split: train keeps turns with at most ``max_train_cardinality``
    actions; test keeps turns with exactly one more action whose atoms all occur in train.
    """
    train = [s for s in samples if len(s.macro) <= max_train_cardinality]
    seen = {index for s in train for index in s.macro.members}
    test = [s for s in samples
            if len(s.macro) == max_train_cardinality + 1 and s.macro.members <= seen]
    return train, test
