import json
import math

import numpy as np
import pytest

from csparse.dataset import Example
from csparse.parser import FeatureConfig, JointModel, TrainConfig, featurize, train_joint_model
from csparse.parser import crf
from csparse.parser.features import EmbeddingFileMissing, Embeddings, MalformedEmbeddingLine, char_ngrams
from csparse.parser.model import transition_constraints
from csparse.seqlogical import bio_tags_for
from oracles import brute_force_best_path, brute_force_partition, crf_nll, finite_difference


# -- features ---------------------------------------------------------------

def test_char_trigrams_of_clima():
    grams = set(char_ngrams("clima", 3, 3))
    assert {"cli", "lim", "ima"} <= grams
    assert {"<cl", "ma>"} <= grams
    assert grams == {"cli", "lim", "ima", "<cl", "ma>"}


def test_featurize_window_names():
    f = featurize(["dime", "el", "clima"], FeatureConfig(char_ngram_range=None))
    assert f.tokens[1] == ["w-1=dime", "w0=el", "w+1=clima"]
    assert "w-1=<s>" in f.tokens[0] and "w+1=</s>" in f.tokens[2]
    assert f.dense is None
    assert sum(f.utterance.values()) == pytest.approx(3.0)


def _emb_file(tmp_path, lines):
    p = tmp_path / "emb.vec"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def test_embeddings_oov_is_zero(tmp_path):
    p = _emb_file(tmp_path, ["2 3", "clima 1 2 3", "el 0 1 0"])
    emb = Embeddings.load(p)
    assert np.array_equal(emb["nope"], np.zeros(3))
    f = featurize(["clima", "xyz"], FeatureConfig(embedding_file=str(p), context_window=0), emb)
    assert f.dense.shape == (2, 3)
    assert np.array_equal(f.dense[0], [1, 2, 3]) and np.array_equal(f.dense[1], [0, 0, 0])


def test_embeddings_missing_and_malformed(tmp_path):
    with pytest.raises(EmbeddingFileMissing):
        Embeddings.load(tmp_path / "none.vec")
    with pytest.raises(MalformedEmbeddingLine):
        Embeddings.load(_emb_file(tmp_path, ["1 3", "clima 1 2"]))
    with pytest.raises(MalformedEmbeddingLine):
        Embeddings.load(_emb_file(tmp_path, ["1 2", "clima 1 x"]))


def test_feature_config_invariants():
    with pytest.raises(ValueError):
        FeatureConfig(use_word_identity=False, char_ngram_range=None)
    with pytest.raises(ValueError):
        FeatureConfig(char_ngram_range=(3, 2))
    fc = FeatureConfig(char_ngram_range=(1, 3))
    assert FeatureConfig.from_json(json.loads(json.dumps(fc.to_json()))) == fc


# -- CRF numerics -----------------------------------------------------------

def _instances(count, seed, max_len=6, max_tags=5):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n, k = int(rng.integers(1, max_len + 1)), int(rng.integers(1, max_tags + 1))
        E = rng.normal(size=(n, k))
        T = rng.normal(size=(k, k))
        tags = rng.integers(0, k, size=n)
        yield E, T, tags


def test_gradient_matches_finite_difference():
    for E, T, tags in _instances(50, 0, max_len=4, max_tags=4):
        nll, dE, dT = crf.nll_and_grad(E, T, tags)
        assert nll == pytest.approx(crf_nll(E, T, tags), rel=1e-9)
        fd_E = finite_difference(lambda: crf.nll_and_grad(E, T, tags)[0], E)
        fd_T = finite_difference(lambda: crf.nll_and_grad(E, T, tags)[0], T)
        np.testing.assert_allclose(dE, fd_E, rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(dT, fd_T, rtol=1e-4, atol=1e-7)


def test_partition_matches_enumeration():
    for E, T, _ in _instances(60, 1):
        assert crf.log_partition(E, T) == pytest.approx(math.log(brute_force_partition(E, T)), rel=1e-8)


def test_viterbi_matches_enumeration():
    rng = np.random.default_rng(2)
    for E, T, _ in _instances(200, 3):
        start = rng.normal(size=E.shape[1])
        path, score = crf.viterbi(E, T, start)
        best, best_score = brute_force_best_path(E, T, start)
        assert path == best
        assert score == pytest.approx(best_score)


def test_constrained_viterbi_yields_valid_bio():
    tags = bio_tags_for(["DATE_TIME", "LOCATION"])
    mask_t, mask_s = transition_constraints(tags)
    rng = np.random.default_rng(4)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        E = rng.normal(size=(n, len(tags))) * 3
        path, _ = crf.viterbi(E, rng.normal(size=mask_t.shape) + mask_t, mask_s)
        labels = [tags[k] for k in path]
        for prev, cur in zip(["O"] + labels, labels):
            if cur.startswith("I-"):
                assert prev in ("B-" + cur[2:], cur)


# -- training ---------------------------------------------------------------

SEPARABLE = [
    "[IN:GET_WEATHER clima en [SL:LOCATION Miami ] ]",
    "[IN:GET_WEATHER clima [SL:DATE_TIME hoy ] ]",
    "[IN:GET_WEATHER weather en [SL:LOCATION Boston ] ]",
    "[IN:OPEN_RESOURCE abre [SL:RESOURCE maps ] ]",
    "[IN:OPEN_RESOURCE abre [SL:RESOURCE spotify ] ]",
    "[IN:OPEN_RESOURCE open [SL:RESOURCE maps ] please ]",
    "[IN:SLEEP modo sleep ]",
    "[IN:SLEEP go to sleep ]",
]


def _ds(texts):
    return [Example.from_seqlogical(str(i), "d", t) for i, t in enumerate(texts)]


def test_separable_fixture_learned():
    train = _ds(SEPARABLE)
    model = train_joint_model(train, tc=TrainConfig(epochs=10, seed=0))
    assert all(model.predict(ex.utterance).intent == ex.parse.intent for ex in train)
    # memorization: full parses too
    assert all(model.predict(ex.utterance) == ex.parse for ex in train)
    assert len(model.history) == 10
    assert isinstance(model.history[0]["train_loss"], float)


def test_training_is_deterministic():
    train = _ds(SEPARABLE)
    a = train_joint_model(train, tc=TrainConfig(epochs=3, seed=5)).to_json()
    b = train_joint_model(train, tc=TrainConfig(epochs=3, seed=5)).to_json()
    assert json.dumps(a) == json.dumps(b)


def test_save_load_roundtrip(tmp_path):
    train = _ds(SEPARABLE)
    model = train_joint_model(train, tc=TrainConfig(epochs=5))
    model.save(tmp_path / "m.json")
    again = JointModel.load(tmp_path / "m.json")
    for ex in train:
        assert again.predict(ex.utterance) == model.predict(ex.utterance)
    assert again.tags == model.tags and again.intents == model.intents


def test_early_stopping_uses_dev():
    train = _ds(SEPARABLE)
    model = train_joint_model(train, train, tc=TrainConfig(epochs=30, early_stop_patience=2))
    assert len(model.history) < 30
    assert max(h["dev_exact_match"] for h in model.history) == 1.0


def test_embedding_features_train(tmp_path):
    p = _emb_file(tmp_path, ["3 2", "clima 1 0", "abre 0 1", "sleep 1 1"])
    fc = FeatureConfig(use_word_identity=True, char_ngram_range=None, embedding_file=str(p))
    model = train_joint_model(_ds(SEPARABLE), fc=fc, tc=TrainConfig(epochs=5))
    assert model.emission_dense.shape == (6, len(model.tags))
    assert model.predict(["clima", "en", "Miami"]).intent == "GET_WEATHER"


def test_unknown_tokens_still_decode():
    model = train_joint_model(_ds(SEPARABLE), tc=TrainConfig(epochs=3))
    parse = model.predict(["zzz", "qqq"])
    parse.check_against(2)
    assert parse.intent in model.intents
