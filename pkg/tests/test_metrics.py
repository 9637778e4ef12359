import numpy as np
import pytest

from avlab.errors import ContractError, DomainError
from avlab.metrics import (
    A_WINS,
    B_WINS,
    TIE,
    EloConfig,
    SpeakerTranscript,
    Vote,
    bootstrap_ci,
    bradley_terry_ratings,
    cpcer,
    cpcer_details,
    elo_ratings,
    win_rate_matrix,
)


def test_single_vote():
    ratings = elo_ratings([Vote("a", "b", A_WINS)])
    assert ratings == {"a": 1002.0, "b": 998.0}


def test_tie_between_equals_changes_nothing():
    assert elo_ratings([Vote("a", "b", TIE)]) == {"a": 1000.0, "b": 1000.0}


def test_rating_sum_is_conserved():
    rng = np.random.default_rng(0)
    models = ["m0", "m1", "m2", "m3", "m4"]
    outcomes = [A_WINS, B_WINS, TIE]
    n = 1_000_000
    first = rng.integers(len(models), size=n)
    second = (first + rng.integers(1, len(models), size=n)) % len(models)
    picks = rng.integers(3, size=n)
    votes = [Vote(models[a], models[b], outcomes[o], i) for i, (a, b, o) in enumerate(zip(first, second, picks))]
    ratings = elo_ratings(votes)
    assert sum(ratings.values()) == pytest.approx(1000.0 * len(models), abs=1e-6)


def test_order_matters_for_online_updates():
    ab = elo_ratings([Vote("a", "b", A_WINS), Vote("a", "b", B_WINS)])
    assert ab["b"] > ab["a"]
    assert ab["a"] + ab["b"] == pytest.approx(2000.0)


def test_models_without_votes_keep_the_initial_rating():
    ratings = elo_ratings([Vote("a", "b", A_WINS)], models=["c"])
    assert ratings["c"] == 1000.0


def test_elo_config_validation():
    with pytest.raises(DomainError):
        EloConfig(k=0.0)
    with pytest.raises(DomainError):
        EloConfig(base=1.0)
    with pytest.raises(DomainError):
        EloConfig(bootstrap_iters=0)


def test_vote_validation():
    with pytest.raises(ContractError):
        Vote("a", "a", A_WINS)
    with pytest.raises(ContractError):
        Vote("a", "b", "draw")
    with pytest.raises(ContractError):
        Vote.from_dict({"model_a": "a", "outcome": A_WINS})
    assert Vote.from_dict({"model_a": "a", "model_b": "b", "outcome": TIE, "order": "3"}) == Vote("a", "b", TIE, 3)


def _votes(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return [Vote("strong", "weak", A_WINS if rng.random() < 0.8 else B_WINS, i) for i in range(n)]


def test_bootstrap_is_seeded():
    cfg = EloConfig(bootstrap_iters=200, seed=5)
    a = bootstrap_ci(_votes(), cfg)
    b = bootstrap_ci(_votes(), cfg)
    assert a == b
    c = bootstrap_ci(_votes(), EloConfig(bootstrap_iters=200, seed=6))
    assert a != c
    for interval in a.values():
        assert interval.lower <= interval.median <= interval.upper
    assert a["strong"].median > a["weak"].median
    assert set(a["strong"].to_dict()) == {"median", "p2.5", "p97.5"}


def test_bootstrap_needs_votes():
    with pytest.raises(DomainError):
        bootstrap_ci([])


def test_win_rate_matrix():
    votes = [Vote("a", "b", A_WINS)] * 3 + [Vote("b", "a", A_WINS), Vote("a", "c", TIE)]
    m = win_rate_matrix(votes)
    assert m["a"]["b"] == 0.75
    assert m["b"]["a"] == 0.25
    assert m["a"]["c"] == 0.5
    assert m["b"]["c"] is None
    assert "a" not in m["a"]


def test_bradley_terry_orders_and_centres():
    ratings = bradley_terry_ratings(_votes(200))
    assert ratings["strong"] > ratings["weak"]
    assert np.mean(list(ratings.values())) == pytest.approx(1000.0)
    assert bradley_terry_ratings([]) == {}


def test_bradley_terry_of_a_balanced_record_is_flat():
    votes = [Vote("a", "b", A_WINS), Vote("a", "b", B_WINS)]
    ratings = bradley_terry_ratings(votes)
    assert ratings["a"] == pytest.approx(ratings["b"], abs=1e-3)


# ---------------------------------------------------------------------------
# cpCER
# ---------------------------------------------------------------------------


def test_cpcer_one_substitution_in_ten():
    ref = SpeakerTranscript({"A": "hello", "B": "world"})
    hyp = SpeakerTranscript({"A": "hello", "B": "warld"})
    assert cpcer(ref, hyp) == pytest.approx(0.1)


def test_cpcer_ignores_speaker_labels():
    ref = SpeakerTranscript({"A": "good morning", "B": "hi there"})
    hyp = SpeakerTranscript({"S2": "good morning", "S1": "hi there"})
    details = cpcer_details(ref, hyp)
    assert details.errors == 0
    assert dict(details.mapping) == {"A": "S2", "B": "S1"}


def test_cpcer_empty_hypothesis():
    ref = SpeakerTranscript({"A": "abc", "B": "de"})
    assert cpcer(ref, SpeakerTranscript({"A": ""})) == 1.0


def test_cpcer_counts_extra_speakers():
    ref = SpeakerTranscript({"A": "abcd"})
    hyp = SpeakerTranscript({"X": "abcd", "Y": "zz"})
    assert cpcer(ref, hyp) == pytest.approx(0.5)


def test_cpcer_errors():
    with pytest.raises(ContractError):
        SpeakerTranscript({})
    with pytest.raises(DomainError):
        cpcer(SpeakerTranscript({"A": ""}), SpeakerTranscript({"A": "x"}))
    many = SpeakerTranscript({f"s{i}": "a" for i in range(9)})
    with pytest.raises(ContractError):
        cpcer(many, many)
