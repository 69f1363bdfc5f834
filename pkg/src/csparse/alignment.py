"""Word alignment: IBM Model 1 EM with an optional diagonal prior,
grow-diag-final-and symmetrization, and attention-argmax alignment.

Conventions: a TranslationTable stores t(f|e) where e is a source word and f a
target word. Alignment links are (source index, target index).
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

NULL = "<NULL>"


class EmptyCorpus(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class ParallelPair:
    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    pair_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "source_tokens", tuple(self.source_tokens))
        object.__setattr__(self, "target_tokens", tuple(self.target_tokens))
        if not self.source_tokens or not self.target_tokens:
            raise ValueError(f"pair {self.pair_id!r} has an empty side")

    def swapped(self) -> "ParallelPair":
        return ParallelPair(self.target_tokens, self.source_tokens, self.pair_id)


@dataclass(frozen=True)
class AlignmentConfig:
    em_iterations: int = 5
    null_prob: float = 0.08
    diagonal_tension: float = 4.0
    epsilon: float = 1e-9

    def __post_init__(self):
        if self.em_iterations < 1:
            raise ValueError("em_iterations must be >= 1")
        if not 0.0 <= self.null_prob < 1.0:
            raise ValueError("null_prob must be in [0, 1)")
        if self.diagonal_tension < 0:
            raise ValueError("diagonal_tension must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class AlignmentSet:
    links: frozenset
    source_len: int
    target_len: int

    def __post_init__(self):
        links = frozenset((int(i), int(j)) for i, j in self.links)
        for i, j in links:
            if not (0 <= i < self.source_len and 0 <= j < self.target_len):
                raise IndexOutOfRange(
                    f"link ({i},{j}) outside {self.source_len}x{self.target_len}")
        object.__setattr__(self, "links", links)

    def __iter__(self):
        return iter(sorted(self.links))

    def __len__(self):
        return len(self.links)

    def transposed(self) -> "AlignmentSet":
        return AlignmentSet(frozenset((j, i) for i, j in self.links), self.target_len, self.source_len)

    def format(self) -> str:
        return " ".join(f"{i}-{j}" for i, j in sorted(self.links))

    @classmethod
    def parse(cls, text: str, source_len: int, target_len: int) -> "AlignmentSet":
        links = set()
        for item in text.split():
            i, _, j = item.partition("-")
            links.add((int(i), int(j)))
        return cls(frozenset(links), source_len, target_len)


@dataclass
class AttentionMatrix:
    pair_id: str
    scores: list[list[float]]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.scores), (len(self.scores[0]) if self.scores else 0)


@dataclass
class TranslationTable:
    """t(f|e) for source words e (plus NULL) and target words f."""

    probs: dict[str, dict[str, float]]
    epsilon: float = 1e-9
    log_likelihoods: list[float] = field(default_factory=list)

    def prob(self, f: str, e: str) -> float:
        return self.probs.get(e, {}).get(f, self.epsilon)

    def best(self, e: str) -> str | None:
        row = self.probs.get(e)
        if not row:
            return None
        return min(row, key=lambda f: (-row[f], f))

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "log_likelihoods": self.log_likelihoods,
                "probs": {e: dict(sorted(row.items())) for e, row in sorted(self.probs.items())}}

    @classmethod
    def from_json(cls, obj: Mapping) -> "TranslationTable":
        return cls({e: dict(row) for e, row in obj["probs"].items()},
                   obj.get("epsilon", 1e-9), list(obj.get("log_likelihoods", [])))


def position_prior(n: int, m: int, j: int, config: AlignmentConfig) -> list[float]:
    """p(a_j = i) for i in 0..n-1 followed by the NULL probability."""
    p0 = config.null_prob
    if config.diagonal_tension == 0:
        h = [1.0] * n
    else:
        h = [math.exp(-config.diagonal_tension * abs(i / n - j / m)) for i in range(n)]
    z = sum(h)
    return [(1.0 - p0) * x / z for x in h] + [p0]


def _pair_posteriors(pair: ParallelPair, table: TranslationTable, config: AlignmentConfig):
    """Yield (j, weights, total) per target position; weights cover sources then NULL."""
    src = list(pair.source_tokens) + [NULL]
    n, m = len(pair.source_tokens), len(pair.target_tokens)
    for j, f in enumerate(pair.target_tokens):
        prior = position_prior(n, m, j, config)
        w = [prior[i] * table.prob(f, e) for i, e in enumerate(src)]
        yield j, w, sum(w)


def corpus_log_likelihood(corpus: Sequence[ParallelPair], table: TranslationTable,
                          config: AlignmentConfig) -> float:
    ll = 0.0
    for pair in corpus:
        for _, _, total in _pair_posteriors(pair, table, config):
            ll += math.log(total)
    return ll


def _initial_table(corpus: Sequence[ParallelPair], epsilon: float) -> TranslationTable:
    cooc: dict[str, dict[str, None]] = defaultdict(dict)
    for pair in corpus:
        for e in list(pair.source_tokens) + [NULL]:
            row = cooc[e]
            for f in pair.target_tokens:
                row[f] = None
    probs = {e: {f: 1.0 / len(row) for f in row} for e, row in cooc.items()}
    return TranslationTable(probs, epsilon)


def train_translation_table(corpus: Sequence[ParallelPair], config: AlignmentConfig = AlignmentConfig()
                            ) -> TranslationTable:
    """Estimate t(f|e) by EM over all alignments of each target word.

    The position prior (NULL at `null_prob`, diagonal weighting when the
    tension is positive) is held fixed, so every iteration is a proper EM step
    and the recorded log-likelihoods never decrease. Pairs are processed in
    corpus order, which makes the accumulation reproducible bit for bit.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("cannot train on an empty corpus")
    table = _initial_table(corpus, config.epsilon)
    lls = []
    for _ in range(config.em_iterations):
        counts: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))
        ll = 0.0
        for pair in corpus:
            src = list(pair.source_tokens) + [NULL]
            for j, w, total in _pair_posteriors(pair, table, config):
                ll += math.log(total)
                f = pair.target_tokens[j]
                for e, wi in zip(src, w):
                    if wi > 0.0:
                        counts[e][f] += wi / total
        lls.append(ll)
        probs = {}
        for e, old_row in table.probs.items():
            row = counts.get(e)
            z = sum(row.values()) if row else 0.0
            if z > 0.0:
                probs[e] = {f: row[f] / z for f in old_row if row.get(f, 0.0) > 0.0}
            else:
                probs[e] = dict(old_row)
        table = TranslationTable(probs, config.epsilon)
    lls.append(corpus_log_likelihood(corpus, table, config))
    table.log_likelihoods = lls
    return table


def align_asymmetric(pair: ParallelPair, table: TranslationTable,
                     config: AlignmentConfig = AlignmentConfig()) -> AlignmentSet:
    """Viterbi alignment of each target token to one source token or NULL.

    Ties go to the lowest source index; NULL wins only when strictly better.
    """
    n = len(pair.source_tokens)
    links = set()
    for j, w, _ in _pair_posteriors(pair, table, config):
        best = max(range(n + 1), key=lambda i: (w[i], -i))
        if best < n:
            links.add((best, j))
    return AlignmentSet(frozenset(links), n, len(pair.target_tokens))


def train_bidirectional(corpus: Sequence[ParallelPair], config: AlignmentConfig = AlignmentConfig()):
    """Tables for source->target and (retrained on swapped pairs) target->source."""
    corpus = list(corpus)
    forward = train_translation_table(corpus, config)
    reverse = train_translation_table([p.swapped() for p in corpus], config)
    return forward, reverse


def align_reverse(pair: ParallelPair, reverse_table: TranslationTable,
                  config: AlignmentConfig = AlignmentConfig()) -> AlignmentSet:
    """Align with the target->source model, reported in source->target indices."""
    return align_asymmetric(pair.swapped(), reverse_table, config).transposed()


_NEIGHBORS = [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]


def symmetrize_gdfa(forward: AlignmentSet, reverse: AlignmentSet) -> AlignmentSet:
    """grow-diag-final-and over two alignments given in the same index convention.

    Growth passes scan the union in (i, j) order and add any link that touches
    an existing link (8-neighbourhood) and has an unaligned endpoint; passes
    repeat to a fixpoint. Final-and then adds union links whose endpoints are
    both still unaligned.
    """
    if (forward.source_len, forward.target_len) != (reverse.source_len, reverse.target_len):
        raise DimensionMismatch(
            f"{forward.source_len}x{forward.target_len} vs {reverse.source_len}x{reverse.target_len}")
    union = sorted(forward.links | reverse.links)
    current = set(forward.links & reverse.links)
    src_aligned = {i for i, _ in current}
    tgt_aligned = {j for _, j in current}

    def add(i, j):
        current.add((i, j))
        src_aligned.add(i)
        tgt_aligned.add(j)

    grown = True
    while grown:
        grown = False
        for i, j in union:
            if (i, j) in current:
                continue
            if i in src_aligned and j in tgt_aligned:
                continue
            if any((i + di, j + dj) in current for di, dj in _NEIGHBORS):
                add(i, j)
                grown = True
    for i, j in union:
        if i not in src_aligned and j not in tgt_aligned:
            add(i, j)
    return AlignmentSet(frozenset(current), forward.source_len, forward.target_len)


def attention_align(matrix: AttentionMatrix, slot_source_indices: Iterable[int]) -> AlignmentSet:
    """Link each given source index to its highest-scoring target (lowest index on ties)."""
    n, m = matrix.shape
    links = set()
    for i in sorted(set(slot_source_indices)):
        if not 0 <= i < n:
            raise IndexOutOfRange(f"source index {i} outside 0..{n - 1}")
        row = matrix.scores[i]
        links.add((i, max(range(m), key=lambda j: (row[j], -j))))
    return AlignmentSet(frozenset(links), n, m)


# -- file formats -----------------------------------------------------------

def read_parallel_corpus(path) -> list[ParallelPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                pairs.append(ParallelPair(rec["src"].split(), rec["tgt"].split(), str(rec["id"])))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return pairs


def write_parallel_corpus(pairs: Iterable[ParallelPair], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"id": p.pair_id, "src": " ".join(p.source_tokens), "tgt": " ".join(p.target_tokens)}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def write_alignments(alignments: Mapping[str, AlignmentSet], path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for pid, aset in alignments.items():
            fh.write(f"{pid}\t{aset.format()}\n")
    return len(alignments)


def read_alignments(path, corpus: Sequence[ParallelPair]) -> dict[str, AlignmentSet]:
    """Read "id<TAB>i-j ..." lines; dimensions come from the matching corpus pairs."""
    dims = {p.pair_id: (len(p.source_tokens), len(p.target_tokens)) for p in corpus}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            pid, _, links = line.partition("\t")
            if pid not in dims:
                raise ValueError(f"{path}:{lineno}: unknown pair id {pid!r}")
            out[pid] = AlignmentSet.parse(links, *dims[pid])
    return out


def read_attention(path) -> dict[str, AttentionMatrix]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[str(rec["id"])] = AttentionMatrix(str(rec["id"]), rec["scores"])
    return out


def save_table(table: TranslationTable, path) -> None:
    Path(path).write_text(json.dumps(table.to_json(), ensure_ascii=False, sort_keys=True) + "\n",
                          encoding="utf-8")
