"""Command-line entry point: ``csparse <subcommand> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 1 data error, 2 config error, 3 external-generator failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import alignment as al
from .config import ConfigError, PipelineConfig, config_hash, load_config, stage_seed
from .dataset import Dataset, dataset_stats, dump_dataset, load_dataset, sample_fewshot
from .evaluation import evaluate_run, exact_match_accuracy, paired_permutation_test, read_predictions
from .matchfilter import (
    BUILTIN,
    GenCandidate,
    GeneratorFailure,
    NeighborIndex,
    ParallelRecord,
    build_parallel_corpus,
    filter_candidates,
    generate_candidates,
)
from .parser import JointModel, train_joint_model
from .projection import project_corpus
from .seqlogical import compute_skeleton, serialize_seqlogical

log = logging.getLogger("csparse")

EXIT_DATA, EXIT_CONFIG, EXIT_GENERATOR = 1, 2, 3


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (GeneratorFailure, ConfigError):
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


# -- file helpers -----------------------------------------------------------

def _write_jsonl(path: Path, records) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _file_entry(path: Path) -> dict:
    data = path.read_bytes()
    return {"sha256": hashlib.sha256(data).hexdigest(), "lines": data.count(b"\n")}


def write_manifest(out_dir: Path, command: str, cfg: PipelineConfig, artifacts: list[Path],
                   counts: dict | None = None, name: str | None = None) -> Path:
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg.tree),
        "config": cfg.tree,
        "artifacts": {p.relative_to(out_dir).as_posix(): _file_entry(p) for p in sorted(artifacts)},
        "counts": counts or {},
    }
    path = out_dir / (name or f"{command}.manifest.json")
    _write_json(path, manifest)
    return path


# -- stage implementations --------------------------------------------------

def _dataset_from_path(cfg: PipelineConfig, key: str, split: str = "unsplit") -> Dataset:
    (path,) = cfg.require(key)
    return load_dataset(path, split=split)


def _alignments(cfg: PipelineConfig, pairs, source: Dataset | None):
    """Symmetrized statistical alignments, or attention argmax when configured."""
    if cfg.paths.get("attention"):
        (att_path,) = cfg.require("attention")
        matrices = al.read_attention(att_path)
        examples = source.by_id() if source is not None else {}
        out = {}
        for pair in pairs:
            if pair.pair_id not in matrices or pair.pair_id not in examples:
                continue
            m = matrices[pair.pair_id]
            if m.shape != (len(pair.source_tokens), len(pair.target_tokens)):
                raise al.DimensionMismatch(f"attention matrix {pair.pair_id} has shape {m.shape}")
            slot_idx = {i for s in examples[pair.pair_id].parse.slots for i in range(s.start, s.end)}
            out[pair.pair_id] = al.attention_align(m, slot_idx)
        return out, None, None
    forward_t, reverse_t = al.train_bidirectional(pairs, cfg.alignment)
    out = {}
    for pair in pairs:
        fwd = al.align_asymmetric(pair, forward_t, cfg.alignment)
        rev = al.align_reverse(pair, reverse_t, cfg.alignment)
        out[pair.pair_id] = al.symmetrize_gdfa(fwd, rev)
    return out, forward_t, reverse_t


def run_translate_align(cfg: PipelineConfig, out_dir: Path) -> tuple[Dataset, list[Path], dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    (par_path,) = cfg.require("parallel")
    pairs = _stage("align", al.read_parallel_corpus, par_path)
    source = _stage("align", _dataset_from_path, cfg, "en_pool")
    links, fwd, rev = _stage("align", _alignments, cfg, pairs, source)
    artifacts = []
    p = out_dir / "alignments.txt"
    al.write_alignments(links, p)
    artifacts.append(p)
    if fwd is not None:
        for name, table in (("table_forward.json", fwd), ("table_reverse.json", rev)):
            al.save_table(table, out_dir / name)
            artifacts.append(out_dir / name)
    report = _stage("project", project_corpus, source, pairs, links)
    p = out_dir / "projected.jsonl"
    n_proj = dump_dataset(report.dataset, p)
    artifacts.append(p)
    p = out_dir / "rejections.jsonl"
    n_rej = report.write_rejections(p)
    artifacts.append(p)
    counts = {"pairs": len(pairs), "alignments": len(links), "projected": n_proj,
              "rejections": n_rej, "fragments_created": report.fragments_created}
    return report.dataset, artifacts, counts


def _seeds(cfg: PipelineConfig) -> Dataset:
    if cfg.paths.get("seeds"):
        return _dataset_from_path(cfg, "seeds", "train")
    train = _dataset_from_path(cfg, "train", "train")
    return sample_fewshot(train, cfg.fewshot_n, stage_seed(cfg.seed, "sample"))


def _parallel_records(parallel) -> list[dict]:
    return [{"source": r.source, "target": r.target, "source_id": r.source_id, "target_id": r.target_id}
            for r in parallel]


def _sources_for(parallel, pool: Dataset):
    by_id = pool.by_id()
    seen, out = set(), []
    for rec in parallel:
        if rec.source_id not in seen:
            seen.add(rec.source_id)
            out.append(by_id[rec.source_id])
    return out


def _generator_name(cfg: PipelineConfig) -> str:
    spec = cfg.generation.generator
    return BUILTIN if spec.kind == BUILTIN else f"external:{spec.external_command}"


def run_match_filter(cfg: PipelineConfig, out_dir: Path, seeds: Dataset | None = None
                     ) -> tuple[Dataset, list[Path], dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = seeds if seeds is not None else _stage("sample", _seeds, cfg)
    pool = _stage("match", _dataset_from_path, cfg, "en_pool")
    artifacts = []
    p = out_dir / "seeds.jsonl"
    dump_dataset(seeds, p)
    artifacts.append(p)

    parallel = _stage("match", build_parallel_corpus, seeds, NeighborIndex(pool), cfg.match)
    p = out_dir / "parallel_corpus.jsonl"
    _write_jsonl(p, _parallel_records(parallel))
    artifacts.append(p)

    sources = _sources_for(parallel, pool)
    cands = _stage("generate", generate_candidates, [s.seqlogical for s in sources], parallel,
                   cfg.generation, [s.id for s in sources])
    p = out_dir / "candidates.jsonl"
    _write_jsonl(p, [{"source_id": c.source_id, "text": c.text} for c in cands])
    artifacts.append(p)

    index = {s.id: compute_skeleton(s.parse) for s in sources}
    domains = {s.id: s.domain for s in sources}
    kept, report = _stage("filter", filter_candidates, cands, seeds, index, _generator_name(cfg), domains)
    p = out_dir / "augmented.jsonl"
    dump_dataset(kept, p)
    artifacts.append(p)
    p = out_dir / "drops.jsonl"
    _write_jsonl(p, report.drops())
    artifacts.append(p)
    p = out_dir / "filter_report.json"
    _write_json(p, report.as_dict())
    artifacts.append(p)
    counts = {"seeds": len(seeds), "parallel_pairs": len(parallel), "sources": len(sources),
              "candidates": len(cands), "augmented": len(kept), "drops": report.total - report.kept}
    return kept, artifacts, counts


# -- subcommands ------------------------------------------------------------

def cmd_stats(cfg, args):
    inputs = args.input or [cfg.paths[k] for k in ("train", "dev", "test") if cfg.paths.get(k)]
    if not inputs:
        raise ConfigError("stats needs --input or paths.train/dev/test")
    examples = []
    for path in inputs:
        examples.extend(load_dataset(path))
    stats = {d: vars(s) for d, s in dataset_stats(examples).items()}
    stats["_total"] = {"n_utterances": len(examples)}
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "stats.json"
    _write_json(out, stats)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return [out], {"utterances": len(examples)}


def cmd_sample(cfg, args):
    train = _dataset_from_path(cfg, "train", "train")
    seeds = sample_fewshot(train, cfg.fewshot_n, stage_seed(cfg.seed, "sample"))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "seeds.jsonl"
    dump_dataset(seeds, out)
    return [out], {"seeds": len(seeds)}


def cmd_align(cfg, args):
    (par_path,) = cfg.require("parallel")
    pairs = al.read_parallel_corpus(par_path)
    source = _dataset_from_path(cfg, "en_pool") if cfg.paths.get("attention") else None
    links, fwd, rev = _alignments(cfg, pairs, source)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = [cfg.output_dir / "alignments.txt"]
    al.write_alignments(links, out[0])
    if fwd is not None:
        for name, table in (("table_forward.json", fwd), ("table_reverse.json", rev)):
            al.save_table(table, cfg.output_dir / name)
            out.append(cfg.output_dir / name)
    return out, {"alignments": len(links)}


def cmd_project(cfg, args):
    (par_path,) = cfg.require("parallel")
    pairs = al.read_parallel_corpus(par_path)
    source = _dataset_from_path(cfg, "en_pool")
    align_path = Path(args.alignments) if args.alignments else cfg.output_dir / "alignments.txt"
    if not align_path.exists():
        raise ConfigError(f"alignment file {align_path} not found (run `align` first or pass --alignments)")
    links = al.read_alignments(align_path, pairs)
    report = project_corpus(source, pairs, links)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    proj, rej = cfg.output_dir / "projected.jsonl", cfg.output_dir / "rejections.jsonl"
    n = dump_dataset(report.dataset, proj)
    m = report.write_rejections(rej)
    return [proj, rej], {"projected": n, "rejections": m, "fragments_created": report.fragments_created}


def cmd_match(cfg, args):
    seeds = _seeds(cfg)
    pool = _dataset_from_path(cfg, "en_pool")
    parallel = build_parallel_corpus(seeds, NeighborIndex(pool), cfg.match)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "parallel_corpus.jsonl"
    n = _write_jsonl(out, _parallel_records(parallel))
    return [out], {"parallel_pairs": n}


def _load_parallel_records(path) -> list[ParallelRecord]:
    return [ParallelRecord(r["source"], r["target"], r["source_id"], r["target_id"]) for r in _read_jsonl(path)]


def cmd_generate(cfg, args):
    par_path = Path(args.parallel_corpus) if args.parallel_corpus else cfg.output_dir / "parallel_corpus.jsonl"
    if not par_path.exists():
        raise ConfigError(f"parallel corpus {par_path} not found (run `match` first)")
    parallel = _load_parallel_records(par_path)
    pool = _dataset_from_path(cfg, "en_pool")
    sources = _sources_for(parallel, pool)
    cands = generate_candidates([s.seqlogical for s in sources], parallel, cfg.generation,
                                [s.id for s in sources])
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "candidates.jsonl"
    n = _write_jsonl(out, [{"source_id": c.source_id, "text": c.text} for c in cands])
    return [out], {"candidates": n}


def cmd_filter(cfg, args):
    cand_path = Path(args.candidates) if args.candidates else cfg.output_dir / "candidates.jsonl"
    if not cand_path.exists():
        raise ConfigError(f"candidate file {cand_path} not found (run `generate` first)")
    cands = [GenCandidate(r["source_id"], r["text"]) for r in _read_jsonl(cand_path)]
    seeds = _seeds(cfg)
    pool = _dataset_from_path(cfg, "en_pool")
    index = {ex.id: compute_skeleton(ex.parse) for ex in pool}
    domains = {ex.id: ex.domain for ex in pool}
    kept, report = filter_candidates(cands, seeds, index, _generator_name(cfg), domains)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    aug, drops, rep = (cfg.output_dir / n for n in ("augmented.jsonl", "drops.jsonl", "filter_report.json"))
    dump_dataset(kept, aug)
    _write_jsonl(drops, report.drops())
    _write_json(rep, report.as_dict())
    return [aug, drops, rep], report.as_dict()


def cmd_augment(cfg, args):
    artifacts, counts = [], {}
    for name in cfg.pipelines:
        sub = cfg.output_dir / name
        runner = run_translate_align if name == "translate_align" else run_match_filter
        _, files, c = runner(cfg, sub)
        artifacts.extend(files)
        counts[name] = c
    return artifacts, counts


def cmd_train(cfg, args):
    train = _dataset_from_path(cfg, "train", "train")
    examples = list(train)
    for extra in args.extra or ():
        examples.extend(load_dataset(extra))
    ids = set()
    merged = []
    for ex in examples:
        # augmented sets may reuse ids from other files
        if ex.id in ids:
            continue
        ids.add(ex.id)
        merged.append(ex)
    dev = _dataset_from_path(cfg, "dev", "valid") if cfg.paths.get("dev") else Dataset([], "valid")
    model = train_joint_model(Dataset(merged, "train"), dev, cfg.features, cfg.train)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = Path(args.model) if args.model else cfg.output_dir / "model.json"
    model.save(out)
    return [out], {"train_examples": len(merged), "epochs_run": len(model.history)}


def cmd_predict(cfg, args):
    model_path = Path(args.model) if args.model else cfg.output_dir / "model.json"
    if not model_path.exists():
        raise ConfigError(f"model file {model_path} not found (run `train` first)")
    model = JointModel.load(model_path)
    data = load_dataset(args.input or cfg.require("test")[0])
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = Path(args.output) if args.output else cfg.output_dir / "predictions.jsonl"
    records = []
    for ex in data:
        parse = model.predict(ex.utterance)
        records.append({"id": ex.id, "domain": ex.domain,
                        "seqlogical": serialize_seqlogical(ex.utterance, parse)})
    n = _write_jsonl(out, records)
    return [out], {"predictions": n}


def cmd_evaluate(cfg, args):
    gold = args.gold or cfg.require("test")[0]
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = Path(args.output) if args.output else cfg.output_dir / "eval_report.json"
    report = evaluate_run(gold, args.pred, out)
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return [out], {"n": report.n}


def cmd_significance(cfg, args):
    gold = load_dataset(args.gold or cfg.require("test")[0])
    vectors = []
    for path in (args.pred_a, args.pred_b):
        preds = [p for _, p in read_predictions(path)]
        vectors.append(exact_match_accuracy(gold, preds).correct)
    p = paired_permutation_test(vectors[0], vectors[1], args.permutations,
                                stage_seed(cfg.seed, "significance"))
    n = len(vectors[0])
    result = {"p_value": p, "n": n, "permutations": args.permutations,
              "exact_match_a": sum(vectors[0]) / n if n else 0.0,
              "exact_match_b": sum(vectors[1]) / n if n else 0.0}
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "significance.json"
    _write_json(out, result)
    print(json.dumps(result, indent=2, sort_keys=True))
    return [out], {"n": n}


COMMANDS = {
    "stats": (cmd_stats, "per-domain corpus statistics"),
    "sample": (cmd_sample, "coverage-first few-shot sample of paths.train"),
    "align": (cmd_align, "train alignment tables and symmetrize (or attention argmax)"),
    "project": (cmd_project, "project en_pool annotations onto the translations"),
    "match": (cmd_match, "build the neighbour parallel corpus for the seeds"),
    "generate": (cmd_generate, "generate candidates from the neighbour sources"),
    "filter": (cmd_filter, "filter generated candidates"),
    "augment": (cmd_augment, "run the configured augmentation pipelines end to end"),
    "train": (cmd_train, "train the joint intent/slot model"),
    "predict": (cmd_predict, "predict parses for a dataset"),
    "evaluate": (cmd_evaluate, "exact-match evaluation of a prediction file"),
    "significance": (cmd_significance, "paired permutation test between two prediction files"),
}

_PATH_FLAGS = ("train", "dev", "test", "seeds", "en_pool", "parallel", "attention")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csparse", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. match.k=5 (repeatable)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        for flag in _PATH_FLAGS:
            p.add_argument(f"--{flag.replace('_', '-')}", dest=f"path_{flag}", help=f"overrides paths.{flag}")
        if name == "stats":
            p.add_argument("--input", action="append", help="dataset file (repeatable)")
        if name == "project":
            p.add_argument("--alignments")
        if name == "generate":
            p.add_argument("--parallel-corpus")
        if name == "filter":
            p.add_argument("--candidates")
        if name == "train":
            p.add_argument("--extra", action="append", help="additional training file (repeatable)")
        if name in ("train", "predict"):
            p.add_argument("--model")
        if name == "predict":
            p.add_argument("--input")
        if name in ("predict", "evaluate"):
            p.add_argument("--output")
        if name == "evaluate":
            p.add_argument("--gold")
            p.add_argument("--pred", required=True)
        if name == "significance":
            p.add_argument("--gold")
            p.add_argument("--pred-a", required=True)
            p.add_argument("--pred-b", required=True)
            p.add_argument("--permutations", type=int, default=10000)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, _ = COMMANDS[args.command]
    try:
        overrides = list(args.set)
        if args.out:
            overrides.append(f"output_dir={json.dumps(args.out)}")
        for flag in _PATH_FLAGS:
            value = getattr(args, f"path_{flag}")
            if value:
                overrides.append(f"paths.{flag}={json.dumps(value)}")
        cfg = PipelineConfig.from_tree(load_config(args.config, overrides))
        artifacts, counts = fn(cfg, args)
        name = "manifest.json" if args.command == "augment" else None
        write_manifest(cfg.output_dir, args.command, cfg,
                       [p for p in artifacts if p.resolve().is_relative_to(cfg.output_dir.resolve())],
                       counts, name)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeneratorFailure as exc:
        print(f"generator failure: {exc}", file=sys.stderr)
        return EXIT_GENERATOR
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATOR if isinstance(exc.cause, GeneratorFailure) else EXIT_DATA
    except (ValueError, KeyError, OSError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
