"""Exact-match accuracy, slot P/R/F1, and a paired sign-flip permutation test."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, Example, load_dataset
from .seqlogical import LengthMismatch, SemanticParse, parse_seqlogical


@dataclass
class EvalReport:
    exact_match: float
    intent_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    n: int
    per_intent: dict = field(default_factory=dict)
    correct: list[int] = field(default_factory=list, repr=False)
    errors: list[dict] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "exact_match": self.exact_match,
            "intent_accuracy": self.intent_accuracy,
            "slot_f1": self.slot_f1,
            "slot_precision": self.slot_precision,
            "slot_recall": self.slot_recall,
            "n": self.n,
            "per_intent": self.per_intent,
        }


def _slot_set(parse: SemanticParse) -> set:
    return {(s.label, s.start, s.end) for s in parse.slots}


def exact_match_accuracy(gold: Sequence[Example] | Dataset, pred: Sequence[SemanticParse]) -> EvalReport:
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold vs {len(pred)} predicted parses")
    n_exact = n_intent = tp = n_pred_slots = n_gold_slots = 0
    per_intent = defaultdict(lambda: [0, 0])
    correct, errors = [], []
    for ex, p in zip(gold, pred):
        g = ex.parse
        gs, ps = _slot_set(g), _slot_set(p)
        intent_ok = g.intent == p.intent
        exact = intent_ok and gs == ps
        n_intent += intent_ok
        n_exact += exact
        tp += len(gs & ps)
        n_gold_slots += len(gs)
        n_pred_slots += len(ps)
        per_intent[g.intent][0] += 1
        per_intent[g.intent][1] += exact
        correct.append(int(exact))
        if not exact:
            errors.append({"id": ex.id, "gold_intent": g.intent, "pred_intent": p.intent,
                           "missing_slots": sorted(gs - ps), "extra_slots": sorted(ps - gs)})
    n = len(gold)
    precision = tp / n_pred_slots if n_pred_slots else (1.0 if not n_gold_slots else 0.0)
    recall = tp / n_gold_slots if n_gold_slots else (1.0 if not n_pred_slots else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        exact_match=n_exact / n if n else 0.0,
        intent_accuracy=n_intent / n if n else 0.0,
        slot_precision=precision,
        slot_recall=recall,
        slot_f1=f1,
        n=n,
        per_intent={k: {"n": v[0], "exact_match": v[1] / v[0]} for k, v in sorted(per_intent.items())},
        correct=correct,
        errors=errors,
    )


def paired_permutation_test(correct_a: Sequence[int], correct_b: Sequence[int],
                            n_permutations: int = 10000, seed: int = 0) -> float:
    """Two-sided sign-flip test on the paired accuracy difference.

    p = (1 + #{|flipped sum| >= |observed sum|}) / (1 + n_permutations), drawn
    from a Philox (counter-based) stream keyed by `seed`.
    """
    a = np.asarray(correct_a, dtype=np.int64)
    b = np.asarray(correct_b, dtype=np.int64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} vs {b.size} outcomes")
    if n_permutations < 1000:
        raise ValueError("n_permutations must be >= 1000")
    d = a - b
    observed = abs(int(d.sum()))
    rng = np.random.Generator(np.random.Philox(seed))
    hits = 0
    chunk = 1000
    done = 0
    while done < n_permutations:
        size = min(chunk, n_permutations - done)
        signs = rng.integers(0, 2, size=(size, d.size), dtype=np.int8) * 2 - 1
        sums = np.abs(signs.astype(np.int64) @ d)
        hits += int((sums >= observed).sum())
        done += size
    return (1 + hits) / (1 + n_permutations)


def read_predictions(path) -> list[tuple[str | None, SemanticParse]]:
    """Prediction JSONL: each record needs "seqlogical"; "id" is optional."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                _, parse = parse_seqlogical(rec["seqlogical"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            out.append((rec.get("id"), parse))
    return out


def evaluate_run(gold_path, pred_path, out_path=None) -> EvalReport:
    """Score a prediction file against a gold file.

    Records are matched by id when every prediction carries a known id,
    otherwise by position.
    """
    gold = load_dataset(gold_path)
    preds = read_predictions(pred_path)
    if len(gold) != len(preds):
        raise LengthMismatch(f"{len(gold)} gold vs {len(preds)} predicted records")
    by_id = {pid: parse for pid, parse in preds}
    if all(pid is not None for pid, _ in preds) and len(by_id) == len(preds) \
            and set(by_id) == {ex.id for ex in gold}:
        aligned = [by_id[ex.id] for ex in gold]
    else:
        aligned = [parse for _, parse in preds]
    report = exact_match_accuracy(gold, aligned)
    if out_path is not None:
        payload = dict(report.to_json(), errors=report.errors)
        Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report
