import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gainrag.retrieval import Passage
from gainrag.selector import (ALL_FEATURES, IS_PSEUDO, OVERLAP, RETRIEVAL_SCORE, ChecksumError, FeatureConfig,
                              ModelFileError, SelectorModel, TrainConfig, VersionMismatchError, featurize,
                              group_features, group_loss_and_grad, kl_grad, kl_loss, load_model, raw_features,
                              save_model, score, select_best, train)
from gainrag.synthesis import GainRecord, GroupMember, TrainingGroup
from fixtures import synthetic_groups
from oracles import finite_difference_grads, kl_oracle

ONLY_OVERLAP = FeatureConfig(names=(OVERLAP,))


def test_overlap_feature():
    assert raw_features("a b", Passage("c", "a c"), 0.0, ONLY_OVERLAP)[0] == 0.5
    assert raw_features("x y z", Passage("c", "x y z"), 0.0, ONLY_OVERLAP)[0] == 1.0


def test_pseudo_features():
    cfg = FeatureConfig()
    v = raw_features("q", Passage("pseudo:1", "bg", origin="pseudo"), 7.5, cfg)
    assert v[ALL_FEATURES.index(IS_PSEUDO)] == 1.0
    assert v[ALL_FEATURES.index(RETRIEVAL_SCORE)] == 0.0
    w = raw_features("q", Passage("p", "bg"), 7.5, cfg)
    assert w[ALL_FEATURES.index(IS_PSEUDO)] == 0.0 and w[ALL_FEATURES.index(RETRIEVAL_SCORE)] == 7.5


def test_featurize_applies_normalization():
    cfg = FeatureConfig(names=(OVERLAP,), mean=(0.25,), scale=(0.5,))
    assert featurize("a b", Passage("c", "a c"), 0.0, cfg)[0] == pytest.approx(0.5)


def test_feature_config_validation():
    with pytest.raises(ValueError):
        FeatureConfig(names=("nope",))
    with pytest.raises(ValueError):
        FeatureConfig(names=(OVERLAP,), scale=(0.0,))


def test_zero_model_scores_zero():
    m = SelectorModel.zeros(FeatureConfig())
    assert score(m, "any question", Passage("p", "any text"), 3.0) == 0.0


def test_hand_forward_pass():
    m = SelectorModel([[2.0]], [0.0], [1.0], 0.0, ONLY_OVERLAP)
    x = featurize("a b", Passage("c", "a c"), 0.0, ONLY_OVERLAP)
    assert (x @ m.W1.T + m.b1)[0] == pytest.approx(1.0)
    assert score(m, "a b", Passage("c", "a c")) == pytest.approx(math.tanh(1.0))
    assert score(m, "a b", Passage("c", "a c")) == score(m, "a b", Passage("c", "a c"))


def test_score_rejects_feature_count_mismatch():
    m = SelectorModel([[1.0, 1.0]], [0.0], [1.0], 0.0, ONLY_OVERLAP)
    with pytest.raises(ValueError, match="mismatch"):
        score(m, "a", Passage("p", "a"))


def test_model_invariants():
    with pytest.raises(ValueError):
        SelectorModel([[math.nan]], [0.0], [1.0], 0.0, ONLY_OVERLAP)
    with pytest.raises(ValueError):
        SelectorModel(np.zeros((2, 1)), [0.0], [1.0], 0.0, ONLY_OVERLAP)


def test_kl_examples():
    V, V_hat = np.log([0.7, 0.3]), np.log([0.5, 0.5])
    assert kl_loss(V, V_hat) == pytest.approx(0.7 * math.log(1.4) + 0.3 * math.log(0.6), abs=1e-12)
    assert kl_loss(V, V_hat) == pytest.approx(0.0823, abs=1e-4)
    assert kl_grad(V, V_hat) == pytest.approx([-0.2, 0.2], abs=1e-12)
    assert kl_loss([1.0, 5.0, -2.0], [1.0, 5.0, -2.0]) == 0.0
    assert np.all(kl_grad([3.0, 1.0], [3.0, 1.0]) == 0.0)


def test_kl_errors():
    with pytest.raises(ValueError):
        kl_loss([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        kl_loss([1.0], [1.0])
    with pytest.raises(ValueError):
        kl_loss([1.0, 2.0], [1.0, 2.0], temperature=0.0)


vectors = st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-10, 10), min_size=n, max_size=n), st.lists(st.floats(-10, 10), min_size=n, max_size=n)))


@settings(max_examples=100, deadline=None)
@given(vectors, st.floats(-50, 50), st.floats(0.2, 5.0))
def test_kl_properties(pair, shift, tau):
    V, V_hat = map(np.array, pair)
    loss = kl_loss(V, V_hat, tau)
    assert loss >= 0.0
    assert loss == pytest.approx(kl_oracle(V, V_hat, tau), abs=1e-9)
    assert kl_loss(V, V_hat + shift, tau) == pytest.approx(loss, abs=1e-9)
    assert kl_loss(V + shift, V_hat, tau) == pytest.approx(loss, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(vectors, st.floats(0.5, 2.0))
def test_kl_grad_matches_finite_differences(pair, tau):
    V, V_hat = map(np.array, pair)
    (num,) = finite_difference_grads(lambda p: kl_loss(V, p[0], tau), [V_hat.copy()])
    assert np.max(np.abs(kl_grad(V, V_hat, tau) - num)) < 1e-7


def test_full_scorer_gradient():
    rng = np.random.default_rng(11)
    for _ in range(5):
        h, n = int(rng.integers(1, 10)), int(rng.integers(2, 10))
        m = SelectorModel(rng.normal(size=(h, 7)), rng.normal(size=h), rng.normal(size=h), rng.normal(),
                          FeatureConfig())
        X, V = rng.normal(size=(n, 7)), rng.normal(size=n)
        _, grads = group_loss_and_grad(m, X, V)

        def loss(p):
            return kl_loss(V, SelectorModel(p[0], p[1], p[2], p[3][0], m.features).forward(X))

        num = finite_difference_grads(loss, [m.W1, m.b1, m.w2, np.array([m.b2])])
        for a, b in zip(grads, num):
            assert np.max(np.abs(a - b)) < 1e-7


def test_train_linear_labels_reaches_low_loss():
    groups = synthetic_groups(1000, gain_of=lambda rs: float(np.expm1(0.25 * rs)))
    initial = np.mean([kl_loss(g.labels, np.zeros(g.size)) for g in groups])
    model = train(groups, TrainConfig())
    assert initial > 0.5
    assert model.metadata["loss_curve"][-1] < 0.01
    assert len(model.metadata["loss_curve"]) == 2


def test_train_is_deterministic():
    groups = synthetic_groups(100, seed=5)
    a, b = train(groups, TrainConfig(seed=3)), train(groups, TrainConfig(seed=3))
    assert a.metadata["loss_curve"] == b.metadata["loss_curve"]
    assert np.array_equal(a.W1, b.W1) and np.array_equal(a.w2, b.w2)


def test_train_equal_labels_gives_near_uniform_softmax():
    (g,) = synthetic_groups(1, size=8, seed=2, gain_of=lambda rs: 3.0)
    model = train([g], TrainConfig(epochs=50))
    s = model.forward(group_features(g, model.features))
    q = np.exp(s - s.max())
    q /= q.sum()
    assert 0.5 * np.abs(q - 1 / g.size).sum() <= 0.05


def test_train_label_shift_invariance():
    groups = synthetic_groups(50, seed=8)
    shifted = [TrainingGroup(g.query_id, g.question, tuple(
        GroupMember(GainRecord(m.record.query_id, m.record.passage_id, m.record.origin, m.record.gain,
                               m.record.label + 3.0, m.record.retrieval_score), m.passage) for m in g.members))
        for g in groups]
    a, b = train(groups), train(shifted)
    assert np.allclose(a.metadata["loss_curve"], b.metadata["loss_curve"], atol=1e-12)


def test_train_rejects_tiny_groups():
    (g,) = synthetic_groups(1, size=1)
    with pytest.raises(ValueError):
        train([g])
    with pytest.raises(ValueError):
        train([])


def test_select_best():
    # score = tanh(retrieval score), so the argmax follows the given scores
    cands = [(Passage("a", "x"), 0.0), (Passage("b", "y"), 0.0), (Passage("c", "z"), 0.0)]
    m = SelectorModel([[1.0]], [0.0], [1.0], 0.0, FeatureConfig(names=(RETRIEVAL_SCORE,)))
    scored = [(p, s) for (p, _), s in zip(cands, [0.1, 0.9, 0.3])]
    assert select_best(m, "q", scored).id == "b"
    assert select_best(SelectorModel.zeros(FeatureConfig()), "q", cands).id == "a"
    assert select_best(m, "q", cands[:1]).id == "a"
    with pytest.raises(ValueError):
        select_best(m, "q", [])


def test_save_load_round_trip(tmp_path):
    groups = synthetic_groups(40, seed=1)
    model = train(groups, TrainConfig(epochs=1), FeatureConfig(idf={"w1": 2.5}))
    save_model(model, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    rng = np.random.default_rng(0)
    for i in range(100):
        q = " ".join(rng.choice(["w1", "w2", "w3", "w9"], size=3))
        c = Passage(f"p{i}", " ".join(rng.choice(["w1", "w2", "w5"], size=int(rng.integers(1, 9)))),
                    origin="pseudo" if i % 7 == 0 else "retrieved")
        rs = float(rng.uniform(0, 20))
        assert score(loaded, q, c, rs) == score(model, q, c, rs)
    assert loaded.metadata == model.metadata and loaded.features == model.features


def test_load_wrong_version(tmp_path):
    save_model(SelectorModel.zeros(FeatureConfig()), tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["version"] = 99
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(VersionMismatchError) as err:
        load_model(tmp_path / "m.json")
    assert "v1" in str(err.value) and "v99" in str(err.value)


def test_load_truncated_or_tampered(tmp_path):
    save_model(SelectorModel.zeros(FeatureConfig()), tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(ChecksumError):
        load_model(tmp_path / "t.json")
    doc = json.loads(text)
    doc["payload"]["b2"] = 1.0
    (tmp_path / "x.json").write_text(json.dumps(doc))
    with pytest.raises(ChecksumError):
        load_model(tmp_path / "x.json")
    assert issubclass(ChecksumError, ModelFileError)
