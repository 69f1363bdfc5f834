"""Token representations: word identity, character n-grams, frozen embeddings."""
from __future__ import annotations

import functools
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

BOS = "<s>"
EOS = "</s>"


class EmbeddingFileMissing(FileNotFoundError):
    pass


class MalformedEmbeddingLine(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    use_word_identity: bool = True
    char_ngram_range: tuple[int, int] | None = (2, 4)
    embedding_file: str | None = None
    freeze_embeddings: bool = True
    context_window: int = 1

    def __post_init__(self):
        if self.char_ngram_range is not None:
            lo, hi = self.char_ngram_range
            if not 1 <= lo <= hi:
                raise ValueError(f"bad char_ngram_range {self.char_ngram_range}")
            object.__setattr__(self, "char_ngram_range", (int(lo), int(hi)))
        if not (self.use_word_identity or self.char_ngram_range or self.embedding_file):
            raise ValueError("at least one token representation must be enabled")
        if self.context_window < 0:
            raise ValueError("context_window must be >= 0")
        if not self.freeze_embeddings:
            raise ValueError("only frozen embeddings are supported")

    def to_json(self) -> dict:
        d = asdict(self)
        d["char_ngram_range"] = list(self.char_ngram_range) if self.char_ngram_range else None
        return d

    @classmethod
    def from_json(cls, d: dict) -> "FeatureConfig":
        d = dict(d)
        if d.get("char_ngram_range") is not None:
            d["char_ngram_range"] = tuple(d["char_ngram_range"])
        return cls(**d)


class Embeddings:
    """Word vectors in the text format: a "<count> <dim>" header, then "<word> <floats>"."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.vectors = vectors
        self.dim = dim
        self._zero = np.zeros(dim)

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors.get(word, self._zero)

    def __contains__(self, word):
        return word in self.vectors

    @classmethod
    def load(cls, path) -> "Embeddings":
        path = Path(path)
        if not path.exists():
            raise EmbeddingFileMissing(str(path))
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            try:
                count, dim = int(header[0]), int(header[1])
            except (IndexError, ValueError):
                raise MalformedEmbeddingLine(f"{path}:1: expected '<count> <dim>' header") from None
            for lineno, line in enumerate(fh, 2):
                parts = line.rstrip("\n").split(" ")
                if not line.strip():
                    continue
                if len(parts) != dim + 1:
                    raise MalformedEmbeddingLine(
                        f"{path}:{lineno}: expected word plus {dim} values, got {len(parts) - 1}")
                try:
                    vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
                except ValueError:
                    raise MalformedEmbeddingLine(f"{path}:{lineno}: non-numeric value") from None
        if len(vectors) != count:
            raise MalformedEmbeddingLine(f"{path}: header says {count} vectors, found {len(vectors)}")
        return cls(vectors, dim)


@functools.lru_cache(maxsize=8)
def load_embeddings(path: str) -> Embeddings:
    return Embeddings.load(path)


def char_ngrams(token: str, lo: int, hi: int) -> list[str]:
    """Plain n-grams of the token, then the ones touching a '<'/'>' boundary marker."""
    tok = token.lower()
    plain = [tok[i:i + n] for n in range(lo, hi + 1) for i in range(len(tok) - n + 1)]
    marked_src = f"<{tok}>"
    marked = [g for n in range(lo, hi + 1) for i in range(len(marked_src) - n + 1)
              for g in [marked_src[i:i + n]] if g[0] == "<" or g[-1] == ">"]
    return plain + marked


def _token_features(token: str, config: FeatureConfig) -> list[str]:
    feats = []
    if config.use_word_identity:
        feats.append("w=" + token)
    if config.char_ngram_range and token not in (BOS, EOS):
        lo, hi = config.char_ngram_range
        feats.extend("c=" + g for g in dict.fromkeys(char_ngrams(token, lo, hi)))
    return feats


def _offset_name(d: int) -> str:
    return "0" if d == 0 else f"{d:+d}"


@dataclass
class Featurized:
    tokens: list[list[str]]
    dense: np.ndarray | None
    utterance: dict[str, float]
    utterance_dense: np.ndarray | None


def featurize(tokens: Sequence[str], config: FeatureConfig, embeddings: Embeddings | None = None) -> Featurized:
    """Per-token sparse features over a +/- context window and their utterance average.

    A feature "w0=clima" is the word at the token itself, "w-1=..." the word to
    its left, and so on; character n-grams follow the same scheme with "c".
    Embedding vectors of the window are concatenated, zeros for padding and
    out-of-vocabulary words.
    """
    if config.embedding_file and embeddings is None:
        embeddings = load_embeddings(str(config.embedding_file))
    w = config.context_window
    padded = [BOS] * w + list(tokens) + [EOS] * w
    base = [_token_features(tok, config) for tok in padded]
    per_token = []
    for t in range(len(tokens)):
        feats = []
        for d in range(-w, w + 1):
            name = _offset_name(d)
            for f in base[t + w + d]:
                kind, _, value = f.partition("=")
                feats.append(f"{kind}{name}={value}")
        per_token.append(feats)

    dense = None
    if embeddings is not None:
        vecs = [np.zeros(embeddings.dim) if tok in (BOS, EOS) else embeddings[tok] for tok in padded]
        dense = np.array([np.concatenate(vecs[t:t + 2 * w + 1]) for t in range(len(tokens))])

    counts = Counter(f for feats in per_token for f in feats)
    n = max(len(tokens), 1)
    utterance = {f: c / n for f, c in counts.items()}
    utterance_dense = dense.mean(axis=0) if dense is not None else None
    return Featurized(per_token, dense, utterance, utterance_dense)
