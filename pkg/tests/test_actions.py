import numpy as np
import pytest

from pedp_policy.actions import (ActionParseError, ActionVocab, EmptyMacroError, MacroAction, UnknownActionError,
                                 VocabError, build_vocab, decode_macro, decompose_macro, encode_macro, parse_action)


def test_parse_action():
    action = parse_action("hotel-inform-area")
    assert (action.domain, action.intent, action.slot) == ("hotel", "inform", "area")
    assert action.text == "hotel-inform-area"


@pytest.mark.parametrize("text", ["hotel-inform", "hotel--area", "a-b-c-d", ""])
def test_parse_action_rejects_malformed(text):
    with pytest.raises(ActionParseError):
        parse_action(text)


def test_vocab_sorted_and_indexed():
    vocab = ActionVocab(["taxi-request-leave", "hotel-request-area", "hotel-inform-area", "hotel-inform-area"])
    assert vocab.texts() == ["hotel-inform-area", "hotel-request-area", "taxi-request-leave"]
    assert [a.index for a in vocab.actions] == [0, 1, 2]
    assert vocab.M == 3
    assert vocab.index_of("taxi-request-leave") == 2
    with pytest.raises(UnknownActionError):
        vocab.index_of("taxi-inform-leave")


def test_vocab_digest_is_order_independent():
    a = ActionVocab(["x-y-z", "a-b-c"])
    b = ActionVocab(["a-b-c", "x-y-z"])
    assert a.digest == b.digest
    a.verify_digest(b.digest)
    with pytest.raises(VocabError):
        a.verify_digest(ActionVocab(["a-b-c"]).digest)


def test_build_vocab_from_records():
    records = [{"macro_action": ["hotel-inform-area", "general-bye-none"]}, {"macro_action": []}]
    assert build_vocab(records).texts() == ["general-bye-none", "hotel-inform-area"]


@pytest.mark.parametrize("records", [[], [{"macro_action": []}]])
def test_build_vocab_rejects_empty(records):
    with pytest.raises(VocabError):
        build_vocab(records)


def test_encode_and_decode(tiny_vocab):
    vec = encode_macro(["d-i-c", "d-i-a"], tiny_vocab)
    assert vec.tolist() == [1, 0, 1, 0, 0]
    assert {a.text for a in decode_macro(vec, tiny_vocab)} == {"d-i-a", "d-i-c"}
    with pytest.raises(UnknownActionError):
        encode_macro(["d-i-z"], tiny_vocab)
    with pytest.raises(VocabError):
        decode_macro(np.zeros(4), tiny_vocab)


def test_macro_action_vector_view(tiny_vocab):
    macro = MacroAction.from_texts(["d-i-e", "d-i-b"], tiny_vocab)
    assert macro.sorted_members() == [1, 4]
    assert MacroAction.from_vector(macro.vector()) == macro
    assert len(MacroAction(frozenset(), 5)) == 0
    with pytest.raises(UnknownActionError):
        MacroAction(frozenset([5]), 5)


def test_decompose_macro_is_index_ordered(tiny_vocab):
    macro = MacroAction(frozenset([4, 0, 2]), 5)
    assert [a.text for a in decompose_macro(macro, tiny_vocab)] == ["d-i-a", "d-i-c", "d-i-e"]
    with pytest.raises(EmptyMacroError):
        decompose_macro(MacroAction(frozenset(), 5), tiny_vocab)
    with pytest.raises(VocabError):
        decompose_macro(MacroAction(frozenset([0]), 6), tiny_vocab)
