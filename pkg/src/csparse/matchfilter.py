"""Match-and-filter augmentation.

Each code-switched seed is paired with its K nearest source-language
neighbours that share its skeleton (intent + slot-label multiset). A generator
maps source parses to new code-switched parses, and the output is filtered for
novelty, well-formedness, and skeleton agreement.
"""
from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataset import Dataset, Example
from .seqlogical import (
    ParseSkeleton,
    SemanticParse,
    SeqlogicalError,
    SlotAnnotation,
    Utterance,
    compute_skeleton,
    parse_seqlogical,
    serialize_seqlogical,
    validate_tree,
)

BUILTIN = "builtin_slot_substitution"
EXTERNAL = "external"

KEPT = "kept"
DUPLICATE = "duplicate"
INVALID_TREE = "invalid_tree"
SKELETON_MISMATCH = "skeleton_mismatch"
DROP_REASONS = (DUPLICATE, INVALID_TREE, SKELETON_MISMATCH)


class GeneratorFailure(RuntimeError):
    def __init__(self, message, record=None):
        super().__init__(message if record is None else f"{message}: {record!r}")
        self.record = record


class NoTemplate(ValueError):
    pass


class UnknownSource(KeyError):
    pass


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit insert/delete/substitute costs over any sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class MatchConfig:
    k: int = 10
    distance_unit: str = "token"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.distance_unit not in ("token", "character"):
            raise ValueError(f"unknown distance unit {self.distance_unit!r}")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = BUILTIN
    external_command: str | None = None
    work_dir: str | None = None

    def __post_init__(self):
        if self.kind not in (BUILTIN, EXTERNAL):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if (self.kind == EXTERNAL) != (self.external_command is not None):
            raise ValueError("external_command is required for, and only for, external generators")


@dataclass(frozen=True)
class GenerationConfig:
    beam_size: int = 5
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")


@dataclass(frozen=True)
class GenCandidate:
    source_id: str
    text: str
    verdict: str | None = None

    @property
    def kept(self) -> bool:
        return self.verdict == KEPT


def utterance_distance(a: Utterance, b: Utterance, unit: str = "token") -> int:
    if unit == "character":
        return levenshtein(a.text, b.text)
    return levenshtein(a.tokens, b.tokens)


class NeighborIndex:
    """Pool examples bucketed by skeleton for repeated neighbour queries."""

    def __init__(self, pool: Iterable[Example]):
        self.buckets: dict[ParseSkeleton, list[Example]] = defaultdict(list)
        for ex in pool:
            self.buckets[compute_skeleton(ex.parse)].append(ex)

    def ranked(self, query: Example, config: MatchConfig) -> list[tuple[int, Example]]:
        cands = self.buckets.get(compute_skeleton(query.parse), [])
        scored = [(utterance_distance(query.utterance, ex.utterance, config.distance_unit), ex)
                  for ex in cands]
        scored.sort(key=lambda de: (de[0], de[1].utterance.text, de[1].id))
        return scored[:config.k]


def find_neighbors(cs_example: Example, en_pool: Iterable[Example] | NeighborIndex,
                   config: MatchConfig = MatchConfig()) -> list[Example]:
    index = en_pool if isinstance(en_pool, NeighborIndex) else NeighborIndex(en_pool)
    return [ex for _, ex in index.ranked(cs_example, config)]


@dataclass(frozen=True)
class ParallelRecord:
    """One (source neighbour, code-switched seed) training pair."""

    source: str
    target: str
    source_id: str
    target_id: str


def build_parallel_corpus(seeds: Iterable[Example], en_pool: Iterable[Example] | NeighborIndex,
                          config: MatchConfig = MatchConfig()) -> list[ParallelRecord]:
    index = en_pool if isinstance(en_pool, NeighborIndex) else NeighborIndex(en_pool)
    seen = set()
    out = []
    for seed in seeds:
        tgt = seed.seqlogical
        for _, nb in index.ranked(seed, config):
            src = nb.seqlogical
            if (src, tgt) in seen:
                continue
            seen.add((src, tgt))
            out.append(ParallelRecord(src, tgt, nb.id, seed.id))
    return out


def _substitute(template: Example, source: Example) -> str:
    """Put the source's slot texts into the template's slots, label by label in span order."""
    fillers: dict[str, deque] = defaultdict(deque)
    for s in source.parse.slots:
        fillers[s.label].append(source.utterance.tokens[s.start:s.end])
    tokens: list[str] = []
    slots = []
    pos = 0
    t_toks = template.utterance.tokens
    for s in template.parse.slots:
        tokens.extend(t_toks[pos:s.start])
        filler = fillers[s.label].popleft() if fillers[s.label] else t_toks[s.start:s.end]
        slots.append(SlotAnnotation(len(tokens), len(tokens) + len(filler), s.label))
        tokens.extend(filler)
        pos = s.end
    tokens.extend(t_toks[pos:])
    return serialize_seqlogical(Utterance(tuple(tokens)), SemanticParse(template.parse.intent, tuple(slots)))


def builtin_generate(source: str | Example, seeds: Iterable[Example], beam: int,
                     distance_unit: str = "token") -> list[str]:
    """Slot-substitution stand-in for a trained source-to-CS generator.

    Seeds sharing the source skeleton act as carrier templates, ranked by
    distance to the source utterance; each yields the template with the
    source's slot values swapped in.
    """
    if isinstance(source, str):
        source = Example.from_seqlogical("source", "", source)
    skel = compute_skeleton(source.parse)
    templates = [ex for ex in seeds if compute_skeleton(ex.parse) == skel]
    if not templates:
        raise NoTemplate(f"no template with skeleton {skel}")
    templates.sort(key=lambda t: (utterance_distance(t.utterance, source.utterance, distance_unit),
                                  t.seqlogical, t.id))
    out: list[str] = []
    for t in templates:
        text = _substitute(t, source)
        if text not in out:
            out.append(text)
            if len(out) == beam:
                break
    return out


def _templates_from_parallel(parallel: Sequence[ParallelRecord | tuple]) -> list[Example]:
    seen = {}
    for rec in parallel:
        tgt = rec.target if isinstance(rec, ParallelRecord) else rec[1]
        if tgt not in seen:
            seen[tgt] = Example.from_seqlogical(f"template-{len(seen)}", "", tgt)
    return list(seen.values())


def _run_external(sources: Sequence[str], parallel: Sequence, config: GenerationConfig) -> list[list[str]]:
    spec = config.generator
    work_dir = Path(spec.work_dir) if spec.work_dir else Path(tempfile.mkdtemp(prefix="csparse-gen-"))
    work_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: work_dir / f"{name}.txt" for name in ("train_src", "train_tgt", "infer_src")}
    out_path = work_dir / "out.jsonl"
    pairs = [(r.source, r.target) if isinstance(r, ParallelRecord) else tuple(r) for r in parallel]
    paths["train_src"].write_text("".join(s + "\n" for s, _ in pairs), encoding="utf-8")
    paths["train_tgt"].write_text("".join(t + "\n" for _, t in pairs), encoding="utf-8")
    paths["infer_src"].write_text("".join(s + "\n" for s in sources), encoding="utf-8")
    if out_path.exists():
        out_path.unlink()
    fmt = {k: shlex.quote(str(v)) for k, v in paths.items()}
    fmt.update(out=shlex.quote(str(out_path)), beam=str(config.beam_size))
    cmd = spec.external_command.format(**fmt)
    proc = subprocess.run(cmd, shell=True, cwd=work_dir, capture_output=True, text=True)
    if proc.returncode != 0:
        raise GeneratorFailure(f"generator exited with status {proc.returncode}",
                               proc.stderr.strip()[-2000:] or None)
    if not out_path.exists():
        raise GeneratorFailure(f"generator wrote no output file {out_path}")

    results: list[list[str]] = [[] for _ in sources]
    with open(out_path, encoding="utf-8") as fh:
        for raw in fh:
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError:
                raise GeneratorFailure("malformed generator output", raw.strip()) from None
            if not isinstance(rec, dict):
                raise GeneratorFailure("malformed generator output", rec)
            line, cands = rec.get("line"), rec.get("candidates")
            if (not isinstance(line, int) or isinstance(line, bool) or not 0 <= line < len(sources)
                    or not isinstance(cands, list) or not all(isinstance(c, str) for c in cands)
                    or len(cands) > config.beam_size):
                raise GeneratorFailure("malformed generator output", rec)
            results[line].extend(cands)
    return results


def generate_candidates(sources: Sequence[str], parallel: Sequence[ParallelRecord | tuple],
                        config: GenerationConfig = GenerationConfig(),
                        source_ids: Sequence[str] | None = None) -> list[GenCandidate]:
    """Up to `beam_size` unfiltered candidates per source seqlogical string."""
    sources = list(sources)
    ids = list(source_ids) if source_ids is not None else [str(i) for i in range(len(sources))]
    if len(ids) != len(sources):
        raise ValueError("source_ids must align with sources")
    if config.generator.kind == EXTERNAL:
        per_source = _run_external(sources, parallel, config)
    else:
        if not parallel:
            raise NoTemplate("builtin generator needs a non-empty parallel corpus")
        templates = _templates_from_parallel(parallel)
        per_source = []
        for src in sources:
            try:
                per_source.append(builtin_generate(src, templates, config.beam_size))
            except NoTemplate:
                per_source.append([])
    return [GenCandidate(sid, text) for sid, cands in zip(ids, per_source) for text in cands]


@dataclass
class FilterReport:
    total: int = 0
    counts: Counter = field(default_factory=Counter)
    candidates: list[GenCandidate] = field(default_factory=list)

    @property
    def kept(self) -> int:
        return self.counts[KEPT]

    def as_dict(self) -> dict:
        return {"total": self.total, "kept": self.counts[KEPT],
                **{r: self.counts[r] for r in DROP_REASONS}}

    def drops(self) -> list[dict]:
        return [{"source_id": c.source_id, "text": c.text, "verdict_reason": c.verdict}
                for c in self.candidates if not c.kept]


def filter_candidates(cands: Iterable[GenCandidate], seeds: Iterable[Example],
                      source_index: Mapping[str, ParseSkeleton], generator: str = BUILTIN,
                      source_domains: Mapping[str, str] | None = None,
                      max_depth: int = 2) -> tuple[Dataset, FilterReport]:
    """Keep candidates that are valid trees, new, and match their source skeleton.

    Checks run in the order tree validity, seed duplicate, skeleton; a kept
    candidate repeating an earlier kept one is dropped as a duplicate.
    """
    seeds = list(seeds)
    seed_texts = {ex.seqlogical for ex in seeds}
    intent_domain = {}
    for ex in seeds:
        intent_domain.setdefault(ex.parse.intent, ex.domain)
    source_domains = source_domains or {}
    report = FilterReport()
    kept_texts: set[str] = set()
    kept: list[Example] = []
    for cand in cands:
        report.total += 1
        if cand.source_id not in source_index:
            raise UnknownSource(cand.source_id)
        verdict = KEPT
        if not validate_tree(cand.text, max_depth):
            verdict = INVALID_TREE
        else:
            utt, parse = parse_seqlogical(cand.text, max_depth)
            canon = serialize_seqlogical(utt, parse)
            if canon in seed_texts or canon in kept_texts:
                verdict = DUPLICATE
            elif compute_skeleton(parse) != source_index[cand.source_id]:
                verdict = SKELETON_MISMATCH
        report.counts[verdict] += 1
        report.candidates.append(replace(cand, verdict=verdict))
        if verdict == KEPT:
            kept_texts.add(canon)
            domain = source_domains.get(cand.source_id) or intent_domain.get(parse.intent, "")
            kept.append(Example(f"aug-{len(kept):06d}", domain, utt, parse, None,
                                {"source_id": cand.source_id, "generator": generator}))
    return Dataset(kept), report


@dataclass
class AugmentResult:
    parallel: list[ParallelRecord]
    sources: list[Example]
    candidates: list[GenCandidate]
    augmented: Dataset
    report: FilterReport


def match_and_filter(seeds: Dataset, en_pool: Dataset, match: MatchConfig = MatchConfig(),
                     generation: GenerationConfig = GenerationConfig()) -> AugmentResult:
    """Neighbours -> parallel corpus -> generation from the neighbours -> filter."""
    parallel = build_parallel_corpus(seeds, NeighborIndex(en_pool), match)
    pool = en_pool.by_id()
    sources = []
    seen = set()
    for rec in parallel:
        if rec.source_id not in seen:
            seen.add(rec.source_id)
            sources.append(pool[rec.source_id])
    cands = generate_candidates([s.seqlogical for s in sources], parallel, generation,
                                [s.id for s in sources])
    index = {s.id: compute_skeleton(s.parse) for s in sources}
    domains = {s.id: s.domain for s in sources}
    gen_name = generation.generator.kind if generation.generator.kind == BUILTIN \
        else generation.generator.external_command
    augmented, report = filter_candidates(cands, seeds, index, gen_name, domains)
    return AugmentResult(parallel, sources, cands, augmented, report)
