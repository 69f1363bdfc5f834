"""Joint intent classifier + linear-chain CRF slot tagger."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataset import Dataset, Example
from ..seqlogical import SemanticParse, Utterance, bio_tags_for, from_bio, to_bio
from . import crf
from .features import Embeddings, FeatureConfig, featurize, load_embeddings

log = logging.getLogger(__name__)

MODEL_FORMAT = "csparse-joint-model"
MODEL_VERSION = 1


class LabelNotInTrain(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    learning_rate: float = 0.1
    l2: float = 1e-6
    seed: int = 0
    early_stop_patience: int = 3

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


def transition_constraints(tags: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """(-inf masks) forbidding I-X after anything but B-X/I-X, and I-X first."""
    K = len(tags)
    trans = np.zeros((K, K))
    start = np.zeros(K)
    for j, cur in enumerate(tags):
        if not cur.startswith("I-"):
            continue
        start[j] = -np.inf
        label = cur[2:]
        for i, prev in enumerate(tags):
            if prev not in ("B-" + label, "I-" + label):
                trans[i, j] = -np.inf
    return trans, start


@dataclass
class _Encoded:
    token_idx: list[np.ndarray]
    dense: np.ndarray | None
    utt_idx: np.ndarray
    utt_val: np.ndarray
    utt_dense: np.ndarray | None


class _ScaledMatrix:
    """Weight matrix stored as scale * raw, so L2 decay is O(1) per step."""

    def __init__(self, rows, cols):
        self.raw = np.zeros((rows, cols))
        self.scale = 1.0

    def decay(self, factor):
        self.scale *= factor
        if self.scale < 1e-6:
            self.raw *= self.scale
            self.scale = 1.0

    def rows(self, idx):
        return self.raw[idx] * self.scale

    def add_rows(self, idx, values):
        np.add.at(self.raw, idx, values / self.scale)

    def dense(self):
        return self.raw * self.scale


@dataclass
class JointModel:
    feature_config: FeatureConfig
    intents: list[str]
    tags: list[str]
    features: dict[str, int]
    emission: np.ndarray
    transitions: np.ndarray
    intent_weights: np.ndarray
    intent_bias: np.ndarray
    emission_dense: np.ndarray | None = None
    intent_dense: np.ndarray | None = None
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self._trans_mask, self._start_mask = transition_constraints(self.tags)

    @property
    def slot_labels(self) -> list[str]:
        return sorted({t[2:] for t in self.tags if t != "O"})

    def _embeddings(self) -> Embeddings | None:
        fc = self.feature_config
        return load_embeddings(str(fc.embedding_file)) if fc.embedding_file else None

    def encode(self, tokens: Sequence[str], embeddings=None) -> _Encoded:
        if embeddings is None:
            embeddings = self._embeddings()
        feats = featurize(tokens, self.feature_config, embeddings)
        idx = [np.array([self.features[f] for f in fs if f in self.features], dtype=np.int64)
               for fs in feats.tokens]
        utt = [(self.features[f], v) for f, v in sorted(feats.utterance.items()) if f in self.features]
        return _Encoded(
            idx, feats.dense,
            np.array([i for i, _ in utt], dtype=np.int64),
            np.array([v for _, v in utt], dtype=float),
            feats.utterance_dense,
        )

    def emission_scores(self, enc: _Encoded, emission=None) -> np.ndarray:
        W = self.emission if emission is None else emission
        E = np.stack([W[ix].sum(axis=0) for ix in enc.token_idx])
        if enc.dense is not None and self.emission_dense is not None:
            E = E + enc.dense @ self.emission_dense
        return E

    def intent_scores(self, enc: _Encoded) -> np.ndarray:
        s = self.intent_bias + enc.utt_val @ self.intent_weights[enc.utt_idx]
        if enc.utt_dense is not None and self.intent_dense is not None:
            s = s + enc.utt_dense @ self.intent_dense
        return s

    def predict_encoded(self, enc: _Encoded) -> SemanticParse:
        intent = self.intents[int(np.argmax(self.intent_scores(enc)))]
        E = self.emission_scores(enc)
        path, _ = crf.viterbi(E, self.transitions + self._trans_mask, self._start_mask)
        return from_bio([self.tags[k] for k in path], intent)

    def predict(self, utterance: Utterance | Sequence[str]) -> SemanticParse:
        tokens = utterance.tokens if isinstance(utterance, Utterance) else tuple(utterance)
        return self.predict_encoded(self.encode(tokens))

    # -- persistence -------------------------------------------------------

    def to_json(self) -> dict:
        def arr(a):
            return None if a is None else a.tolist()
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "feature_config": self.feature_config.to_json(),
            "intents": self.intents,
            "tags": self.tags,
            "features": sorted(self.features, key=self.features.get),
            "emission": arr(self.emission),
            "transitions": arr(self.transitions),
            "intent_weights": arr(self.intent_weights),
            "intent_bias": arr(self.intent_bias),
            "emission_dense": arr(self.emission_dense),
            "intent_dense": arr(self.intent_dense),
            "history": self.history,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "JointModel":
        if obj.get("format") != MODEL_FORMAT:
            raise ValueError("not a joint-model file")
        if obj.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')}")
        K, I = len(obj["tags"]), len(obj["intents"])

        def arr(a, cols):
            if a is None:
                return None
            out = np.array(a, dtype=float)
            return out.reshape(-1, cols) if out.ndim < 2 else out
        return cls(
            FeatureConfig.from_json(obj["feature_config"]),
            list(obj["intents"]),
            list(obj["tags"]),
            {f: i for i, f in enumerate(obj["features"])},
            arr(obj["emission"], K),
            arr(obj["transitions"], K),
            arr(obj["intent_weights"], I),
            np.array(obj["intent_bias"], dtype=float),
            arr(obj["emission_dense"], K),
            arr(obj["intent_dense"], I),
            list(obj.get("history", [])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "JointModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _build_inventories(train: Dataset, fc: FeatureConfig, embeddings):
    intents = sorted({ex.parse.intent for ex in train})
    tags = bio_tags_for({s.label for ex in train for s in ex.parse.slots})
    features: dict[str, int] = {}
    for ex in train:
        for fs in featurize(ex.utterance.tokens, fc, embeddings).tokens:
            for f in fs:
                if f not in features:
                    features[f] = len(features)
    return intents, tags, features


def _snapshot(model: JointModel, W: _ScaledMatrix, V: _ScaledMatrix) -> dict:
    return {
        "emission": W.dense(),
        "intent_weights": V.dense(),
        "transitions": model.transitions.copy(),
        "intent_bias": model.intent_bias.copy(),
        "emission_dense": None if model.emission_dense is None else model.emission_dense.copy(),
        "intent_dense": None if model.intent_dense is None else model.intent_dense.copy(),
    }


def _exact_match(model: JointModel, encoded, examples) -> float:
    if not examples:
        return 0.0
    hits = sum(model.predict_encoded(enc) == ex.parse for enc, ex in zip(encoded, examples))
    return hits / len(examples)


def train_joint_model(train: Dataset | Sequence[Example], dev: Dataset | Sequence[Example] = (),
                      fc: FeatureConfig = FeatureConfig(), tc: TrainConfig = TrainConfig()) -> JointModel:
    """Per-example SGD on intent log-loss plus CRF negative log-likelihood, with L2.

    With a non-empty dev set the returned weights are those of the epoch with
    the best dev exact match, and training stops after `early_stop_patience`
    epochs without improvement.
    """
    train = list(train)
    dev = list(dev)
    if not train:
        raise ValueError("training set is empty")
    embeddings = load_embeddings(str(fc.embedding_file)) if fc.embedding_file else None
    intents, tags, features = _build_inventories(train, fc, embeddings)
    K, I, F = len(tags), len(intents), len(features)
    D = embeddings.dim * (2 * fc.context_window + 1) if embeddings is not None else 0

    unseen_intents = {ex.parse.intent for ex in dev} - set(intents)
    unseen_slots = {s.label for ex in dev for s in ex.parse.slots} - {t[2:] for t in tags if t != "O"}
    if unseen_intents or unseen_slots:
        warnings.warn(f"dev labels absent from train (scored as wrong): "
                      f"intents={sorted(unseen_intents)} slots={sorted(unseen_slots)}", LabelNotInTrain)

    model = JointModel(fc, intents, tags, features, np.zeros((F, K)), np.zeros((K, K)),
                       np.zeros((F, I)), np.zeros(I),
                       np.zeros((D, K)) if D else None, np.zeros((D, I)) if D else None)
    W, V = _ScaledMatrix(F, K), _ScaledMatrix(F, I)
    tag_index = {t: i for i, t in enumerate(tags)}
    intent_index = {t: i for i, t in enumerate(intents)}
    enc_train = [model.encode(ex.utterance.tokens, embeddings) for ex in train]
    gold_tags = [np.array([tag_index[t] for t in to_bio(ex.parse, len(ex.utterance))]) for ex in train]
    gold_intent = [intent_index[ex.parse.intent] for ex in train]
    enc_dev = [model.encode(ex.utterance.tokens, embeddings) for ex in dev]

    rng = np.random.default_rng(tc.seed)
    lr, decay = tc.learning_rate, 1.0 - tc.learning_rate * tc.l2
    best_score, best, since_best = -1.0, None, 0
    history = []
    for epoch in range(tc.epochs):
        total = 0.0
        for n in rng.permutation(len(train)):
            enc, y_tags, y_int = enc_train[n], gold_tags[n], gold_intent[n]
            # sync the scaled matrices into the model views used for scoring
            W.decay(decay)
            V.decay(decay)
            model.transitions *= decay
            if model.emission_dense is not None:
                model.emission_dense *= decay
                model.intent_dense *= decay

            E = np.stack([W.rows(ix).sum(axis=0) for ix in enc.token_idx])
            if enc.dense is not None:
                E = E + enc.dense @ model.emission_dense
            nll, dE, dT = crf.nll_and_grad(E, model.transitions + model._trans_mask, y_tags,
                                           model._start_mask)

            s = model.intent_bias + enc.utt_val @ V.rows(enc.utt_idx)
            if enc.utt_dense is not None:
                s = s + enc.utt_dense @ model.intent_dense
            p = np.exp(s - crf.logsumexp(s))
            intent_loss = -np.log(max(p[y_int], 1e-300))
            p[y_int] -= 1.0

            for t, ix in enumerate(enc.token_idx):
                if ix.size:
                    W.add_rows(ix, -lr * np.broadcast_to(dE[t], (ix.size, K)))
            model.transitions -= lr * dT
            if enc.utt_idx.size:
                V.add_rows(enc.utt_idx, -lr * np.outer(enc.utt_val, p))
            model.intent_bias -= lr * p
            if enc.dense is not None:
                model.emission_dense -= lr * enc.dense.T @ dE
                model.intent_dense -= lr * np.outer(enc.utt_dense, p)
            total += nll + intent_loss

        model.emission, model.intent_weights = W.dense(), V.dense()
        entry = {"epoch": epoch + 1, "train_loss": float(total / len(train))}
        if dev:
            score = _exact_match(model, enc_dev, dev)
            entry["dev_exact_match"] = score
            if score > best_score:
                best_score, best, since_best = score, _snapshot(model, W, V), 0
            else:
                since_best += 1
        history.append(entry)
        log.info("epoch %d loss %.4f%s", epoch + 1, entry["train_loss"],
                 f" dev EM {entry['dev_exact_match']:.4f}" if dev else "")
        if dev and since_best >= tc.early_stop_patience:
            break

    if best is not None:
        for k, v in best.items():
            setattr(model, k, v)
    model.history = history
    return model


def predict_parse(model: JointModel, utterance: Utterance | Sequence[str]) -> SemanticParse:
    return model.predict(utterance)
