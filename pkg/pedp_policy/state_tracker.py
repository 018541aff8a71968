"""
Rule-based dialog state tracking for the toy world.

The tracker folds user and system dialog acts into the multi-hot state vector:

- entities: one-hot of the database match count per domain (0..4, 5+)
- user_action: multi-hot of the last user turn
- system_action: multi-hot of the system acts since the last user turn
- belief: per domain informed/requested/provided flags plus offer and booking
  flags, and a final flag set while a user turn awaits its reply

System updates within one turn are set-like: they commute and repeating an act
changes nothing, so a macro-action and its acts applied one at a time lead to
the same state.
"""

import copy
from typing import Dict, Iterable, List, NamedTuple, Optional

import numpy as np

from pedp_policy.actions import parse_action
from pedp_policy.schema import (BOOK, DOMAIN_FLAGS, INFORM, MATCH_BUCKETS, RECOMMEND, REQUEST, DomainSchema)
from pedp_policy.state_layout import BELIEF, ENTITIES, SYSTEM_ACTION, USER_ACTION, DialogStateVector


class UserAct(NamedTuple):
    text: str
    value: Optional[str] = None


class _DomainBelief:
    def __init__(self):
        self.constraints: Dict[str, str] = {}
        self.pending: set = set()
        self.provided: set = set()
        self.offered = False
        self.booked = False
        self.book_requested = False


class DialogStateTracker:
    """
    Track one dialog.

    :param schema: the toy world the dialog takes place in
    """

    def __init__(self, schema: DomainSchema):
        self.schema = schema
        self.layout = schema.layout()
        self.beliefs = {name: _DomainBelief() for name in schema.domain_names}
        self.user_bits = np.zeros(len(schema.user_vocab), dtype=np.uint8)
        self.system_bits = np.zeros(len(schema.vocab), dtype=np.uint8)
        self.awaiting_reply = False

    def copy(self) -> "DialogStateTracker":
        clone = copy.copy(self)
        clone.beliefs = copy.deepcopy(self.beliefs)
        clone.user_bits = self.user_bits.copy()
        clone.system_bits = self.system_bits.copy()
        return clone

    def match_count(self, domain: str) -> int:
        return len(self.schema.domain(domain).matches(self.beliefs[domain].constraints))

    def observe_user(self, acts: Iterable[UserAct]) -> None:
        self.user_bits[:] = 0
        for act in acts:
            self.user_bits[self.schema.user_vocab.index_of(act.text)] = 1
            action = parse_action(act.text)
            belief = self.beliefs.get(action.domain)
            if belief is None:
                continue
            if action.intent == INFORM:
                belief.constraints[action.slot] = act.value
            elif action.intent == REQUEST:
                belief.pending.add(action.slot)
            elif action.intent == BOOK:
                belief.book_requested = True
        self.awaiting_reply = True

    def observe_system(self, texts: Iterable[str]) -> None:
        """Apply system acts; the first update after a user turn replaces the previous system acts."""
        if self.awaiting_reply:
            self.system_bits[:] = 0
            self.awaiting_reply = False
        for text in texts:
            self.system_bits[self.schema.vocab.index_of(text)] = 1
            action = parse_action(text)
            belief = self.beliefs.get(action.domain)
            if belief is None:
                continue
            spec = self.schema.domain(action.domain)
            available = self.match_count(action.domain) > 0
            if action.intent == INFORM and action.slot in spec.requestable:
                belief.provided.add(action.slot)
                belief.pending.discard(action.slot)
            elif action.intent == RECOMMEND and available:
                belief.offered = True
            elif action.intent == BOOK and available:
                belief.offered = True
                belief.booked = True

    def _belief_bits(self) -> List[int]:
        bits = []
        for spec in self.schema.domains:
            belief = self.beliefs[spec.name]
            bits.extend(int(slot in belief.constraints) for slot in spec.informable_slots)
            bits.extend(int(slot in belief.pending) for slot in spec.requestable)
            bits.extend(int(slot in belief.provided) for slot in spec.requestable)
            bits.extend(int(getattr(belief, flag)) for flag in DOMAIN_FLAGS)
        bits.append(int(self.awaiting_reply))
        return bits

    def state(self) -> DialogStateVector:
        bits = np.zeros(self.layout.S, dtype=np.uint8)
        entities = np.zeros(MATCH_BUCKETS * len(self.schema.domains), dtype=np.uint8)
        for i, name in enumerate(self.schema.domain_names):
            entities[i * MATCH_BUCKETS + min(self.match_count(name), MATCH_BUCKETS - 1)] = 1
        bits[self.layout.span(ENTITIES)] = entities
        bits[self.layout.span(USER_ACTION)] = self.user_bits
        bits[self.layout.span(SYSTEM_ACTION)] = self.system_bits
        bits[self.layout.span(BELIEF)] = self._belief_bits()
        return DialogStateVector(bits, self.layout)


class BeliefView:
    """Read a tracker-produced state vector back into per-domain facts."""

    def __init__(self, schema: DomainSchema, state: DialogStateVector):
        self.schema = schema
        self.state = state
        self._belief = state.segment(BELIEF)
        self._entities = state.segment(ENTITIES)
        self._offsets = {}
        position = 0
        for spec in schema.domains:
            self._offsets[spec.name] = position
            position += len(spec.informable) + 2 * len(spec.requestable) + len(DOMAIN_FLAGS)

    def user_acts(self) -> List[str]:
        user = self.state.segment(USER_ACTION)
        return [self.schema.user_vocab.actions[i].text for i in np.flatnonzero(user)]

    def match_bucket(self, domain: str) -> int:
        i = self.schema.domain_names.index(domain)
        return int(np.argmax(self._entities[i * MATCH_BUCKETS:(i + 1) * MATCH_BUCKETS]))

    def _flags(self, domain: str, offset: int, slots: List[str]) -> Dict[str, bool]:
        start = self._offsets[domain] + offset
        return {slot: bool(self._belief[start + j]) for j, slot in enumerate(slots)}

    def informed(self, domain: str) -> Dict[str, bool]:
        spec = self.schema.domain(domain)
        return self._flags(domain, 0, spec.informable_slots)

    def pending(self, domain: str) -> List[str]:
        spec = self.schema.domain(domain)
        flags = self._flags(domain, len(spec.informable), list(spec.requestable))
        return [slot for slot, on in flags.items() if on]

    def flag(self, domain: str, name: str) -> bool:
        spec = self.schema.domain(domain)
        offset = len(spec.informable) + 2 * len(spec.requestable) + DOMAIN_FLAGS.index(name)
        return bool(self._belief[self._offsets[domain] + offset])
