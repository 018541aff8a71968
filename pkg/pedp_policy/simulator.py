"""
Agenda-based user simulation over the toy world.

A sampled goal becomes an agenda per domain: informs of the constraints first,
then the requests, then the booking. Each turn the user speaks up to 1-3 acts
from the top of the current domain's agenda. Informs are popped as soon as
they are uttered; requests and the booking stay until the system satisfies
them, so the user repeats them until it does.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch

from pedp_policy.actions import AtomicAction, MacroAction, format_action, parse_action
from pedp_policy.model import SAMPLE
from pedp_policy.schema import (BOOK, BYE, DONTCARE, GENERAL, INFORM, NAME, NONE, RECOMMEND, REQUEST,
                                DomainSchema)
from pedp_policy.state_layout import DialogStateVector
from pedp_policy.state_tracker import DialogStateTracker, UserAct

DEFAULT_MAX_TURNS = 20
MAX_GOAL_TRIES = 100
USER_BYE = format_action(AtomicAction(GENERAL, BYE, NONE))


class GoalSamplingError(RuntimeError):
    """Raised when no satisfiable goal is drawn within the retry budget."""
    pass


class PolicyError(ValueError):
    """Raised when a policy emits an action index outside the vocabulary."""
    pass


@dataclass(frozen=True)
class DomainGoal:
    domain: str
    constraints: Tuple[Tuple[str, str], ...]
    requests: Tuple[str, ...]
    book: bool

    def to_dict(self) -> Dict:
        return {"domain": self.domain, "constraints": dict(self.constraints),
                "requests": list(self.requests), "book": self.book}


@dataclass(frozen=True)
class UserGoal:
    domains: Tuple[DomainGoal, ...]

    def requested(self) -> List[str]:
        return [f"{g.domain}-{slot}" for g in self.domains for slot in g.requests]

    def to_dict(self) -> Dict:
        return {"domains": [g.to_dict() for g in self.domains]}

    @classmethod
    def from_dict(cls, data: Dict) -> "UserGoal":
        return cls(tuple(DomainGoal(d["domain"], tuple(d["constraints"].items()), tuple(d["requests"]), d["book"])
                         for d in data["domains"]))


def _sample_domain_goal(schema: DomainSchema, domain: str, rng: np.random.Generator) -> DomainGoal:
    spec = schema.domain(domain)
    slots = spec.informable_slots
    for _ in range(MAX_GOAL_TRIES):
        n_constraints = int(rng.integers(2, len(slots) + 1))
        chosen = sorted(rng.choice(len(slots), n_constraints, replace=False))
        constraints = tuple((slots[i], spec.values(slots[i])[int(rng.integers(len(spec.values(slots[i]))))])
                            for i in chosen)
        n_requests = int(rng.integers(1, len(spec.requestable) + 1))
        requests = tuple(spec.requestable[i] for i in sorted(rng.choice(len(spec.requestable), n_requests,
                                                                          replace=False)))
        book = bool(rng.random() < 0.5)
        if spec.matches(dict(constraints)):
            return DomainGoal(domain, constraints, requests, book)
    raise GoalSamplingError(f'No satisfiable goal for "{domain}" after {MAX_GOAL_TRIES} draws')


def sample_goal(schema: DomainSchema, rng: np.random.Generator) -> UserGoal:
    """One or two domains, each with 2+ constraints an entity satisfies, 1+ requests and maybe a booking."""
    names = schema.domain_names
    n_domains = int(rng.integers(1, min(2, len(names)) + 1))
    chosen = sorted(rng.choice(len(names), n_domains, replace=False))
    return UserGoal(tuple(_sample_domain_goal(schema, names[i], rng) for i in chosen))


@dataclass
class AgendaItem:
    intent: str
    slot: str
    value: Optional[str] = None

    def act(self, domain: str) -> UserAct:
        return UserAct(format_action(AtomicAction(domain, self.intent, self.slot)), self.value)


@dataclass
class UserSimState:
    goal: UserGoal
    schema: DomainSchema
    rng: np.random.Generator
    agenda: Dict[str, List[AgendaItem]] = field(default_factory=dict)
    informed: Dict[str, Dict[str, str]] = field(default_factory=dict)
    offered: Dict[str, str] = field(default_factory=dict)
    booked: Dict[str, Dict[str, str]] = field(default_factory=dict)
    provided: set = field(default_factory=set)
    done: bool = False

    @classmethod
    def from_goal(cls, goal: UserGoal, schema: DomainSchema, rng: np.random.Generator) -> "UserSimState":
        state = cls(goal, schema, rng)
        for g in goal.domains:
            items = [AgendaItem(INFORM, slot, value) for slot, value in g.constraints]
            items += [AgendaItem(REQUEST, slot) for slot in g.requests]
            if g.book:
                items.append(AgendaItem(BOOK, NONE))
            state.agenda[g.domain] = items
            state.informed[g.domain] = {}
        return state

    def domain_goal(self, domain: str) -> Optional[DomainGoal]:
        for g in self.goal.domains:
            if g.domain == domain:
                return g
        return None

    def _first_match(self, domain: str) -> Optional[Dict[str, str]]:
        found = self.schema.domain(domain).matches(self.informed.get(domain, {}))
        return found[0] if found else None

    def _remove(self, domain: str, intent: str, slot: str) -> None:
        items = self.agenda.get(domain, [])
        self.agenda[domain] = [i for i in items if not (i.intent == intent and i.slot == slot)]

    def _push_inform(self, domain: str, slot: str) -> None:
        goal = self.domain_goal(domain)
        if goal is None or slot not in self.schema.domain(domain).informable_slots:
            return
        value = dict(goal.constraints).get(slot, DONTCARE)
        self._remove(domain, INFORM, slot)
        self.agenda[domain].insert(0, AgendaItem(INFORM, slot, value))

    def match(self) -> bool:
        """Every goal domain that needs a booking has booked an entity satisfying all its constraints."""
        for g in self.goal.domains:
            if not g.book:
                continue
            entity = self.booked.get(g.domain)
            if entity is None or any(entity[slot] != value for slot, value in g.constraints):
                return False
        return True


def _apply_system_acts(sim: UserSimState, texts: Sequence[str]) -> None:
    actions = [parse_action(text) for text in texts]
    # offers and bookings first so that informs in the same turn refer to them
    for action in actions:
        if action.domain not in sim.agenda:
            continue
        if action.intent == RECOMMEND:
            entity = sim._first_match(action.domain)
            if entity is not None:
                sim.offered[action.domain] = entity[NAME]
        elif action.intent == BOOK:
            entity = sim._first_match(action.domain)
            if entity is not None:
                sim.booked[action.domain] = entity
                sim.offered[action.domain] = entity[NAME]
                sim._remove(action.domain, BOOK, NONE)
    for action in actions:
        if action.domain not in sim.agenda:
            continue
        spec = sim.schema.domain(action.domain)
        if action.intent == INFORM and action.slot in spec.requestable and action.domain in sim.offered:
            sim.provided.add(f"{action.domain}-{action.slot}")
            sim._remove(action.domain, REQUEST, action.slot)
        elif action.intent == REQUEST:
            sim._push_inform(action.domain, action.slot)


def user_respond(sim: UserSimState, system_macro: Sequence[str]) -> Tuple[List[UserAct], bool]:
    """
    React to the system's acts and produce the next user turn.

    :param system_macro: system act texts of the last turn (empty for the opening turn)
    :return: (user acts, done); done turns true with the goodbye once every agenda is empty
    """
    _apply_system_acts(sim, system_macro)
    current = next((d for d, items in sim.agenda.items() if items), None)
    if current is None:
        sim.done = True
        return [UserAct(USER_BYE)], True

    cap = int(sim.rng.integers(1, 4))
    acts = []
    for item in list(sim.agenda[current][:cap]):
        acts.append(item.act(current))
        if item.intent == INFORM:
            sim.informed[current][item.slot] = item.value
            sim.agenda[current].remove(item)
    return acts, False


class Policy(Protocol):
    def predict_macro(self, state: DialogStateVector) -> MacroAction:
        ...


class ModelPolicy:
    """
    Adapt a trained model to the simulator's policy interface.

    :param options: keyword options of the model's predict_batch (mode, ensemble, ...)
    """

    def __init__(self, model: torch.nn.Module, generator: Optional[torch.Generator] = None, **options):
        self.model = model
        self.generator = generator
        self.options = options

    def predict_macro(self, state: DialogStateVector) -> MacroAction:
        states = self.model.as_state_tensor(state).reshape(1, -1)
        macros, _, _ = self.model.predict_batch(states, self.generator, **self.options)
        return macros[0]


@dataclass
class EpisodeTurn:
    user: List[UserAct]
    state: List[int]
    system: List[str]
    next_state: List[int]
    reply: List[UserAct]

    def to_dict(self) -> Dict:
        return {
            "user": [list(act) for act in self.user],
            "state": self.state,
            "system": self.system,
            "next_state": self.next_state,
            "reply": [list(act) for act in self.reply],
        }


@dataclass
class EpisodeLog:
    goal: UserGoal
    turns: List[EpisodeTurn]
    match: bool
    provided: List[str]
    requested: List[str]
    booked: Dict[str, str]
    done: bool

    @property
    def n_turns(self) -> int:
        return len(self.turns)

    def to_dict(self) -> Dict:
        return {
            "goal": self.goal.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "n_turns": self.n_turns,
            "match": self.match,
            "provided": self.provided,
            "requested": self.requested,
            "booked": self.booked,
            "done": self.done,
        }


def _system_texts(macro: MacroAction, schema: DomainSchema) -> List[str]:
    if macro.size != len(schema.vocab) or any(i < 0 or i >= len(schema.vocab) for i in macro.members):
        raise PolicyError(f"Policy emitted indices outside [0, {len(schema.vocab)}): {macro.sorted_members()}")
    return [schema.vocab.actions[i].text for i in macro.sorted_members()]


def run_episode(policy: Policy, goal: UserGoal, schema: DomainSchema, max_turns: int = DEFAULT_MAX_TURNS,
                rng: Optional[np.random.Generator] = None) -> EpisodeLog:
    """
    Alternate user and system turns until the user has said goodbye and been
    answered, or ``max_turns`` system turns have been taken.
    """
    if max_turns < 1:
        raise ValueError(f"max_turns must be >= 1, got {max_turns}")
    rng = rng if rng is not None else np.random.default_rng(0)
    sim = UserSimState.from_goal(goal, schema, rng)
    tracker = DialogStateTracker(schema)
    user, done = user_respond(sim, [])
    tracker.observe_user(user)

    turns = []
    for _ in range(max_turns):
        state = tracker.state()
        texts = _system_texts(policy.predict_macro(state), schema)
        tracker.observe_system(texts)
        reply: List[UserAct] = []
        if not done:
            reply, done_now = user_respond(sim, texts)
            tracker.observe_user(reply)
        turns.append(EpisodeTurn(list(user), state.tolist(), texts, tracker.state().tolist(), reply))
        if done:
            break
        done = done_now
        user = reply
    else:
        logging.debug(f"Episode hit max_turns={max_turns} before the user finished")

    return EpisodeLog(
        goal=goal,
        turns=turns,
        match=sim.match(),
        provided=sorted(sim.provided),
        requested=sorted(goal.requested()),
        booked={domain: entity[NAME] for domain, entity in sorted(sim.booked.items())},
        done=done,
    )
