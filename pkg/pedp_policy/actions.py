"""
Atomic dialog actions, the action vocabulary and macro-actions.

An atomic action is a "domain-intent-slot" triple such as ``hotel-inform-area``.
A macro-action is the set of atomic actions emitted in one system turn, and is
interchangeably viewed as a binary vector over the vocabulary.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from pedp_policy.digests import lines_digest

ACTION_SEPARATOR = "-"
MACRO_FIELD = "macro_action"


class ActionParseError(ValueError):
    """Raised when a string is not a well-formed domain-intent-slot triple."""
    pass


class VocabError(ValueError):
    """Raised when a vocabulary cannot be built or does not match a digest."""
    pass


class UnknownActionError(KeyError):
    """Raised when an action is not part of the vocabulary."""
    pass


class EmptyMacroError(ValueError):
    """Raised when an operation needs at least one atomic action."""
    pass


@dataclass(frozen=True, order=True)
class AtomicAction:
    domain: str
    intent: str
    slot: str
    index: int = field(default=-1, compare=False)

    @property
    def text(self) -> str:
        return format_action(self)

    def __str__(self) -> str:
        return self.text


def parse_action(text: str, index: int = -1) -> AtomicAction:
    """Parse ``domain-intent-slot`` into an AtomicAction."""
    parts = text.split(ACTION_SEPARATOR)
    if len(parts) != 3 or not all(parts):
        raise ActionParseError(f'Malformed atomic action "{text}": expected domain-intent-slot')
    domain, intent, slot = parts
    return AtomicAction(domain, intent, slot, index)


def format_action(action: AtomicAction) -> str:
    return ACTION_SEPARATOR.join((action.domain, action.intent, action.slot))


class ActionVocab:
    """
    Ordered, indexed set of atomic actions.

    Actions are sorted lexicographically by (domain, intent, slot) and each
    action's index equals its list position.
    """

    def __init__(self, texts: Iterable[str]):
        triples = sorted({parse_action(text) for text in texts})
        self.actions: Tuple[AtomicAction, ...] = tuple(
            replace(triple, index=position) for position, triple in enumerate(triples)
        )
        self._by_text: Dict[str, AtomicAction] = {action.text: action for action in self.actions}
        self.digest = lines_digest(self.texts())

    @property
    def M(self) -> int:
        return len(self.actions)

    def __len__(self) -> int:
        return len(self.actions)

    def __contains__(self, item: Union[str, AtomicAction]) -> bool:
        text = item if isinstance(item, str) else item.text
        return text in self._by_text

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ActionVocab) and self.digest == other.digest

    def __hash__(self) -> int:
        return hash(self.digest)

    def texts(self) -> List[str]:
        return [action.text for action in self.actions]

    def lookup(self, text: str) -> AtomicAction:
        try:
            return self._by_text[text]
        except KeyError:
            raise UnknownActionError(f'Action "{text}" is not in the vocabulary') from None

    def index_of(self, text: str) -> int:
        return self.lookup(text).index

    def verify_digest(self, expected: str) -> None:
        if expected != self.digest:
            raise VocabError(f"Vocabulary digest mismatch: expected {expected}, found {self.digest}")


def build_vocab(corpus: Sequence[Mapping]) -> ActionVocab:
    """Build the vocabulary from every action appearing in a raw corpus's macro-action labels."""
    if not corpus:
        raise VocabError("Cannot build a vocabulary from an empty corpus")
    texts = {text for record in corpus for text in record.get(MACRO_FIELD, [])}
    if not texts:
        raise VocabError("Corpus contains no labelled actions")
    vocab = ActionVocab(texts)
    logging.debug(f"Built vocabulary of {vocab.M} actions (digest {vocab.digest[:12]})")
    return vocab


@dataclass(frozen=True)
class MacroAction:
    """A set of atomic action indices over a vocabulary of size ``size``."""

    members: FrozenSet[int]
    size: int

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))
        outside = sorted(m for m in self.members if not 0 <= m < self.size)
        if outside:
            raise UnknownActionError(f"Macro-action indices {outside} lie outside [0, {self.size})")

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, index: int) -> bool:
        return index in self.members

    def sorted_members(self) -> List[int]:
        return sorted(self.members)

    def vector(self) -> np.ndarray:
        vec = np.zeros(self.size, dtype=np.uint8)
        vec[self.sorted_members()] = 1
        return vec

    @classmethod
    def from_vector(cls, vector: Sequence) -> "MacroAction":
        vec = np.asarray(vector)
        return cls(frozenset(np.flatnonzero(vec > 0.5).tolist()), int(vec.shape[-1]))

    @classmethod
    def from_texts(cls, texts: Iterable[str], vocab: ActionVocab) -> "MacroAction":
        return cls.from_vector(encode_macro(texts, vocab))


def encode_macro(actions: Iterable[Union[str, AtomicAction]], vocab: ActionVocab) -> np.ndarray:
    """Encode a set of actions as a binary vector of length M."""
    texts = [a if isinstance(a, str) else a.text for a in actions]
    unknown = sorted({text for text in texts if text not in vocab})
    if unknown:
        raise UnknownActionError(f"Actions not in the vocabulary: {', '.join(unknown)}")
    vec = np.zeros(vocab.M, dtype=np.uint8)
    for text in texts:
        vec[vocab.index_of(text)] = 1
    return vec


def decode_macro(vector: Sequence, vocab: ActionVocab) -> FrozenSet[AtomicAction]:
    vec = np.asarray(vector)
    if vec.shape != (vocab.M,):
        raise VocabError(f"Macro vector has shape {vec.shape}, expected ({vocab.M},)")
    return frozenset(vocab.actions[i] for i in np.flatnonzero(vec > 0.5))


def decompose_macro(macro: MacroAction, vocab: ActionVocab) -> List[AtomicAction]:
    """
    Canonical single-action fragment for one multi-action turn: every member
    exactly once, ordered by vocabulary index.
    """
    if not macro.members:
        raise EmptyMacroError("An empty macro-action has no single-action decomposition")
    if macro.size != vocab.M:
        raise VocabError(f"Macro-action over {macro.size} actions used with a vocabulary of {vocab.M}")
    return [vocab.actions[i] for i in macro.sorted_members()]
