import pytest

from gainrag.lm_backend import MockBackend, MockLMSpec
from gainrag.pseudo_passage import generate_pseudo, is_unavailable, pseudo_id, with_pseudo
from gainrag.retrieval import Passage


def _backend(reply):
    return MockBackend(MockLMSpec.uniform(["x"], completions=[("Question:", reply)]))


def test_passthrough():
    p = generate_pseudo(_backend("Paris is the capital of France."), "capital of France?")
    assert p.text == "Paris is the capital of France."
    assert p.is_pseudo and p.id == pseudo_id("capital of France?")


@pytest.mark.parametrize("reply", ["N/A", "  n/a  ", "", "   "])
def test_unavailable_replies_are_dropped(reply):
    assert generate_pseudo(_backend(reply), "q") is None


def test_unavailable_can_be_kept():
    p = generate_pseudo(_backend("N/A"), "q", drop_unavailable=False)
    assert p.text == "N/A"
    assert generate_pseudo(_backend(" "), "q", drop_unavailable=False) is None


def test_is_unavailable():
    assert is_unavailable("N/A\n") and not is_unavailable("N/A but also more")


def test_pseudo_id_is_stable_and_distinct():
    assert pseudo_id("a") == pseudo_id("a") != pseudo_id("b")
    assert pseudo_id("a").startswith("pseudo:")


def test_with_pseudo_places_it_first_once():
    pseudo = Passage("pseudo:x", "bg", origin="pseudo")
    stale = Passage("pseudo:y", "old", origin="pseudo")
    a, b = Passage("a", "t"), Passage("b", "t")
    assert with_pseudo(pseudo, [a, stale, b]) == [pseudo, a, b]
    assert with_pseudo(None, [a, b]) == [a, b]
