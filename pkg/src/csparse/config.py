"""Pipeline configuration: a YAML key/value tree plus dotted overrides.

Schema (every key optional unless a subcommand needs it)::

    seed: 13                      # global seed, split per stage by label
    output_dir: out
    paths:
      train: data/train.jsonl     # code-switched training set (sample/train)
      dev: data/valid.jsonl
      test: data/test.jsonl
      seeds: out/seeds.jsonl      # few-shot seeds for match-and-filter
      en_pool: data/en.jsonl      # annotated source-language pool
      parallel: data/parallel.jsonl   # {"id","src","tgt"} translations of en_pool ids
      attention: null             # {"id","scores"}; switches alignment to attention argmax
    pipelines: [translate_align, match_filter]
    fewshot: {n: 100}
    match: {k: 10, distance_unit: token}
    generation:
      beam_size: 5
      generator: {kind: builtin_slot_substitution, external_command: null, work_dir: null}
    alignment: {em_iterations: 5, null_prob: 0.08, diagonal_tension: 4.0, epsilon: 1.0e-9}
    train: {epochs: 15, learning_rate: 0.1, l2: 1.0e-6, early_stop_patience: 3}
    features: {use_word_identity: true, char_ngram_range: [2, 4], embedding_file: null,
               freeze_embeddings: true, context_window: 1}
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .alignment import AlignmentConfig
from .matchfilter import GenerationConfig, GeneratorSpec, MatchConfig
from .parser import FeatureConfig, TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 13,
    "output_dir": "out",
    "paths": {"train": None, "dev": None, "test": None, "seeds": None, "en_pool": None,
              "parallel": None, "attention": None},
    "pipelines": ["translate_align", "match_filter"],
    "fewshot": {"n": 100},
    "match": {"k": 10, "distance_unit": "token"},
    "generation": {"beam_size": 5,
                   "generator": {"kind": "builtin_slot_substitution", "external_command": None,
                                 "work_dir": None}},
    "alignment": {"em_iterations": 5, "null_prob": 0.08, "diagonal_tension": 4.0, "epsilon": 1e-9},
    "train": {"epochs": 15, "learning_rate": 0.1, "l2": 1e-6, "early_stop_patience": 3},
    "features": {"use_word_identity": True, "char_ngram_range": [2, 4], "embedding_file": None,
                 "freeze_embeddings": True, "context_window": 1},
}
PIPELINES = ("translate_align", "match_filter")


class ConfigError(ValueError):
    pass


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict) and base[key] and not isinstance(value, dict):
            raise ConfigError(f"config key {path!r} must be a mapping")
        if isinstance(base[key], dict) and base[key]:
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def apply_override(tree: dict, assignment: str) -> dict:
    """Apply "a.b.c=value"; the value is parsed as YAML (so 5, true, [2,3] work)."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not key=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None
    nested: Any = value
    for part in reversed(key.split(".")):
        nested = {part: nested}
    return _merge(tree, nested)


def load_config(path=None, overrides=()) -> dict:
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        tree = _merge(tree, loaded)
    for item in overrides:
        tree = apply_override(tree, item)
    for name in tree["pipelines"]:
        if name not in PIPELINES:
            raise ConfigError(f"unknown pipeline {name!r}; choose from {PIPELINES}")
    return tree


def config_hash(tree: dict) -> str:
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def stage_seed(global_seed: int, label: str) -> int:
    """Per-stage seed derived from the global seed and a fixed stage label."""
    digest = hashlib.sha256(f"{global_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass
class PipelineConfig:
    tree: dict
    seed: int
    output_dir: Path
    paths: dict
    match: MatchConfig
    generation: GenerationConfig
    alignment: AlignmentConfig
    train: TrainConfig
    features: FeatureConfig
    pipelines: list = field(default_factory=list)
    fewshot_n: int = 100

    @classmethod
    def from_tree(cls, tree: dict) -> "PipelineConfig":
        try:
            gen = dict(tree["generation"])
            spec = GeneratorSpec(**gen.pop("generator"))
            feats = dict(tree["features"])
            if feats.get("char_ngram_range") is not None:
                feats["char_ngram_range"] = tuple(feats["char_ngram_range"])
            seed = int(tree["seed"])
            return cls(
                tree=tree,
                seed=seed,
                output_dir=Path(tree["output_dir"]),
                paths=dict(tree["paths"]),
                match=MatchConfig(**tree["match"]),
                generation=GenerationConfig(generator=spec, **gen),
                alignment=AlignmentConfig(**tree["alignment"]),
                train=TrainConfig(seed=stage_seed(seed, "train"), **tree["train"]),
                features=FeatureConfig(**feats),
                pipelines=list(tree["pipelines"]),
                fewshot_n=int(tree["fewshot"]["n"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def require(self, *names: str) -> list[Path]:
        out = []
        for name in names:
            value = self.paths.get(name)
            if not value:
                raise ConfigError(f"paths.{name} is required for this command")
            p = Path(value)
            if not p.exists():
                raise ConfigError(f"paths.{name}: {p} does not exist")
            out.append(p)
        return out
