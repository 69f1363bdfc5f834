import json
import random
import time

import pytest

from csparse.alignment import (
    NULL,
    AlignmentConfig,
    AlignmentSet,
    AttentionMatrix,
    DimensionMismatch,
    EmptyCorpus,
    IndexOutOfRange,
    ParallelPair,
    TranslationTable,
    align_asymmetric,
    align_reverse,
    attention_align,
    position_prior,
    read_alignments,
    read_attention,
    read_parallel_corpus,
    symmetrize_gdfa,
    train_bidirectional,
    train_translation_table,
    write_alignments,
    write_parallel_corpus,
)
from oracles import brute_force_em, reference_gdfa

TOY = [ParallelPair("the house".split(), "la casa".split(), "0"),
       ParallelPair(["the"], ["la"], "1")]

FIXTURES = {
    "toy": TOY,
    "three": [ParallelPair("the house".split(), "la casa".split()),
              ParallelPair("the book".split(), "el libro".split()),
              ParallelPair("a book".split(), "un libro".split())],
    "spanglish": [ParallelPair("show me the weather".split(), "muéstrame el clima".split()),
                  ParallelPair("what is the weather".split(), "cómo está el clima".split()),
                  ParallelPair("open maps".split(), "abre maps".split()),
                  ParallelPair("close the maps app".split(), "cierra la app de maps".split())],
}


def test_toy_argmax_after_five_iterations():
    start = time.perf_counter()
    table = train_translation_table(TOY, AlignmentConfig(em_iterations=5, diagonal_tension=0.0))
    assert table.best("the") == "la"
    assert table.best("house") == "casa"
    assert table.prob("la", "the") > 0.9
    assert time.perf_counter() - start < 1.0


def test_single_pair_single_word():
    table = train_translation_table([ParallelPair(["a"], ["b"])], AlignmentConfig(diagonal_tension=0))
    assert table.prob("b", "a") == pytest.approx(1.0)


@pytest.mark.parametrize("name", sorted(FIXTURES))
@pytest.mark.parametrize("tension", [0.0, 4.0])
def test_log_likelihood_non_decreasing(name, tension):
    table = train_translation_table(FIXTURES[name],
                                    AlignmentConfig(em_iterations=10, diagonal_tension=tension))
    lls = table.log_likelihoods
    assert len(lls) == 11
    assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_matches_brute_force_em(name):
    corpus = FIXTURES[name]
    cfg = AlignmentConfig(em_iterations=4, diagonal_tension=0.0, null_prob=0.08)
    table = train_translation_table(corpus, cfg)
    ref, ref_lls = brute_force_em([(p.source_tokens, p.target_tokens) for p in corpus], 4, 0.08)
    assert table.log_likelihoods == pytest.approx(ref_lls, abs=1e-9)
    assert set(table.probs) == set(ref)
    for e, row in ref.items():
        for f, p in row.items():
            assert table.prob(f, e) == pytest.approx(p, abs=1e-9)


def test_rows_are_distributions():
    table = train_translation_table(FIXTURES["spanglish"])
    for row in table.probs.values():
        assert sum(row.values()) == pytest.approx(1.0)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        train_translation_table([])


def test_position_prior_sums_to_one():
    for tension in (0.0, 4.0):
        p = position_prior(4, 3, 1, AlignmentConfig(diagonal_tension=tension))
        assert sum(p) == pytest.approx(1.0) and p[-1] == 0.08


def test_align_toy():
    table = train_translation_table(TOY)
    assert align_asymmetric(TOY[0], table).links == {(0, 0), (1, 1)}


def test_null_wins_when_strictly_better():
    table = TranslationTable({"a": {"x": 0.5}, NULL: {"y": 1.0}})
    pair = ParallelPair(["a"], ["x", "y"])
    aset = align_asymmetric(pair, table, AlignmentConfig(null_prob=0.9))
    # y only has mass under NULL; x goes to a
    assert aset.links == {(0, 0)}


def test_reverse_direction_is_transposed_convention():
    fwd, rev = train_bidirectional(TOY)
    r = align_reverse(TOY[0], rev)
    assert (r.source_len, r.target_len) == (2, 2)
    assert r.links == {(0, 0), (1, 1)}


def _aset(links, n, m):
    return AlignmentSet(frozenset(links), n, m)


def test_gdfa_hand_examples():
    # agreement stays as is
    f = _aset({(0, 0), (1, 1)}, 2, 2)
    assert symmetrize_gdfa(f, f).links == {(0, 0), (1, 1)}
    # a neighbour of the intersection with an unaligned target is grown
    f = _aset({(0, 0), (1, 1)}, 2, 3)
    r = _aset({(0, 0), (1, 1), (1, 2)}, 2, 3)
    assert symmetrize_gdfa(f, r).links == {(0, 0), (1, 1), (1, 2)}
    # a union link whose endpoints are both unaligned and far away enters in final-and
    f = _aset({(0, 0), (3, 3)}, 4, 4)
    r = _aset({(0, 0)}, 4, 4)
    assert symmetrize_gdfa(f, r).links == {(0, 0), (3, 3)}
    # no link added when both endpoints are already aligned
    f = _aset({(0, 0), (1, 1), (0, 1)}, 2, 2)
    r = _aset({(0, 0), (1, 1)}, 2, 2)
    assert symmetrize_gdfa(f, r).links == {(0, 0), (1, 1)}


def test_gdfa_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        symmetrize_gdfa(_aset(set(), 2, 2), _aset(set(), 2, 3))


def _random_alignment(rng, n, m):
    return {(i, j) for i in range(n) for j in range(m) if rng.random() < 0.3}


def _random_instances(count, seed):
    rng = random.Random(seed)
    for _ in range(count):
        n, m = rng.randint(1, 6), rng.randint(1, 6)
        yield n, m, _random_alignment(rng, n, m), _random_alignment(rng, n, m)


def test_gdfa_matches_reference_200():
    for n, m, f, r in _random_instances(200, 3):
        out = symmetrize_gdfa(_aset(f, n, m), _aset(r, n, m)).links
        assert out == reference_gdfa(f, r, n, m)


def test_gdfa_bounds():
    for n, m, f, r in _random_instances(500, 4):
        out = symmetrize_gdfa(_aset(f, n, m), _aset(r, n, m)).links
        assert f & r <= out <= f | r


def test_gdfa_transpose_symmetric_without_conflicts():
    # order of growth can matter only when candidate links compete for a row or column
    checked = 0
    for n, m, f, r in _random_instances(2000, 5):
        extra = sorted((f | r) - (f & r))
        rows = [i for i, _ in extra]
        cols = [j for _, j in extra]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            continue
        checked += 1
        out = symmetrize_gdfa(_aset(f, n, m), _aset(r, n, m))
        flipped = symmetrize_gdfa(_aset(f, n, m).transposed(), _aset(r, n, m).transposed())
        assert out.transposed() == flipped
    assert checked > 100


def test_attention_align():
    m = AttentionMatrix("p", [[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]])
    assert attention_align(m, [0]).links == {(0, 1)}
    # ties go to the lowest target index
    assert attention_align(m, [1]).links == {(1, 0)}
    with pytest.raises(IndexOutOfRange):
        attention_align(m, [2])


def test_alignment_set_bounds():
    with pytest.raises(IndexOutOfRange):
        _aset({(2, 0)}, 2, 2)
    a = AlignmentSet.parse("0-1 1-0", 2, 2)
    assert a.format() == "0-1 1-0"


def test_io_roundtrip(tmp_path):
    path = tmp_path / "par.jsonl"
    write_parallel_corpus(TOY, path)
    pairs = read_parallel_corpus(path)
    assert pairs == TOY
    table = train_translation_table(pairs)
    aligned = {p.pair_id: align_asymmetric(p, table) for p in pairs}
    write_alignments(aligned, tmp_path / "a.txt")
    assert read_alignments(tmp_path / "a.txt", pairs) == aligned
    att = tmp_path / "att.jsonl"
    att.write_text(json.dumps({"id": "0", "scores": [[1, 0], [0, 1]]}) + "\n")
    assert read_attention(att)["0"].shape == (2, 2)


def test_table_json_roundtrip():
    table = train_translation_table(TOY)
    again = TranslationTable.from_json(json.loads(json.dumps(table.to_json())))
    assert again.probs == table.probs and again.log_likelihoods == table.log_likelihoods
