"""
Scripted expert policy used to label the synthetic corpus.

It reads nothing but the state vector, so the corpus it produces is a
learnable function of the state.
"""

from typing import List

from pedp_policy.actions import AtomicAction, MacroAction, format_action, parse_action
from pedp_policy.schema import (BOOK, BYE, GENERAL, INFORM, NAME, NONE, NOOFFER, RECOMMEND, REF, REQMORE,
                                REQUEST, DomainSchema)
from pedp_policy.state_layout import DialogStateVector
from pedp_policy.state_tracker import BeliefView

MAX_SLOT_REQUESTS = 2


def _act(domain: str, intent: str, slot: str) -> str:
    return format_action(AtomicAction(domain, intent, slot))


class ScriptedExpert:
    """
    Rules, per domain the user just addressed:

    1. booking asked for and an entity already offered: book it, offer more
       help and answer the pending requests
    2. nothing offered yet, several matches and unknown constraints: ask for
       up to two of them
    3. nothing offered yet: recommend the match (or report that none exists)
       and answer the pending requests
    4. already offered: answer the pending requests, or offer more help

    A user goodbye is answered with a goodbye.
    """

    def __init__(self, schema: DomainSchema):
        self.schema = schema

    def respond(self, state: DialogStateVector) -> List[str]:
        view = BeliefView(self.schema, state)
        user_acts = [parse_action(text) for text in view.user_acts()]
        if any(a.domain == GENERAL and a.intent == BYE for a in user_acts):
            return [_act(GENERAL, BYE, NONE)]

        texts = []
        for domain in sorted({a.domain for a in user_acts if a.domain != GENERAL}):
            texts.extend(self._respond_domain(view, domain))
        return texts

    def _respond_domain(self, view: BeliefView, domain: str) -> List[str]:
        answers = [_act(domain, INFORM, slot) for slot in view.pending(domain)]
        offered = view.flag(domain, "offered")
        if view.flag(domain, "book_requested") and offered and not view.flag(domain, "booked"):
            return [_act(domain, BOOK, REF), _act(GENERAL, REQMORE, NONE)] + answers
        if not offered:
            matches = view.match_bucket(domain)
            unknown = [slot for slot, known in view.informed(domain).items() if not known]
            if matches > 1 and unknown:
                return [_act(domain, REQUEST, slot) for slot in unknown[:MAX_SLOT_REQUESTS]]
            if matches == 0:
                return [_act(domain, NOOFFER, NONE)]
            return [_act(domain, RECOMMEND, NAME)] + answers
        return answers or [_act(GENERAL, REQMORE, NONE)]

    def predict_macro(self, state: DialogStateVector) -> MacroAction:
        return MacroAction.from_texts(self.respond(state), self.schema.vocab)
