"""Experiment configuration loaded from a strict JSON file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from dtalang.embedder import SkipGramParams
from dtalang.errors import ConfigError
from dtalang.featurize import MODEL_RECIPES, RepresentationRecipe
from dtalang.gbt import HyperParamGrid


@dataclass(frozen=True)
class SwSettings:
    matrix: str | None = None      # substitution matrix file; BLOSUM62 when None
    gap_open: float = 10.0
    gap_extend: float = 0.5


@dataclass(frozen=True)
class BpeSettings:
    target_size: int = 20000
    character_coverage: float = 0.99
    max_word_len: int = 100


@dataclass
class ExperimentConfig:
    dataset: str
    recipe: RepresentationRecipe
    grid: HyperParamGrid = field(default_factory=HyperParamGrid)
    seed: int = 0
    output_dir: str = "out"
    embedding_table: str | None = None
    embedding_tables: dict[str, str] = field(default_factory=dict)
    bpe_vocab: str | None = None
    corpus: str | None = None
    protein_embeddings: str | None = None
    augmentation: str | None = None
    sw_matrix: str | None = None
    sw: SwSettings = field(default_factory=SwSettings)
    skipgram: SkipGramParams = field(default_factory=SkipGramParams)
    bpe: BpeSettings = field(default_factory=BpeSettings)
    n_parts: int = 6
    mss_bins: int = 4
    analyze_mss: bool = True
    threads: int = 1

    PATH_FIELDS = ("dataset", "embedding_table", "bpe_vocab", "corpus",
                   "protein_embeddings", "augmentation", "sw_matrix")

    def embedding_path(self, scheme: str) -> str | None:
        return self.embedding_tables.get(scheme, self.embedding_table)

    def validate(self) -> None:
        for name in self.PATH_FIELDS:
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name}: {value} does not exist")
        for scheme, value in self.embedding_tables.items():
            if not Path(value).exists():
                raise ConfigError(f"embedding_tables[{scheme}]: {value} does not exist")
        if self.sw.matrix is not None and not Path(self.sw.matrix).exists():
            raise ConfigError(f"sw.matrix: {self.sw.matrix} does not exist")
        self.grid.points()

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["recipe"] = self.recipe.to_dict()
        d["grid"] = {k: list(v) for k, v in asdict(self.grid).items()}
        d["sw"] = asdict(self.sw)
        d["skipgram"] = asdict(self.skipgram)
        d["bpe"] = asdict(self.bpe)
        return d


def _strict(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_recipe(value) -> RepresentationRecipe:
    if isinstance(value, str):
        if value not in MODEL_RECIPES:
            raise ConfigError(f"unknown model name {value!r}; known: {sorted(MODEL_RECIPES)}")
        return MODEL_RECIPES[value]
    return RepresentationRecipe.from_dict(value)


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> ExperimentConfig:
    """Build a config; unknown keys anywhere are errors and paths resolve against ``base_dir``."""
    data = dict(data)
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for required in ("dataset", "recipe"):
        if required not in data:
            raise ConfigError(f"config is missing {required!r}")
    data["recipe"] = parse_recipe(data["recipe"])
    if "grid" in data:
        data["grid"] = _strict(HyperParamGrid, {k: tuple(v) for k, v in data["grid"].items()}
                               if isinstance(data["grid"], Mapping) else data["grid"], "grid")
    if "sw" in data:
        data["sw"] = _strict(SwSettings, data["sw"], "sw")
    if "skipgram" in data:
        data["skipgram"] = _strict(SkipGramParams, data["skipgram"], "skipgram")
    if "bpe" in data:
        data["bpe"] = _strict(BpeSettings, data["bpe"], "bpe")
    base = Path(base_dir)

    def resolve(p):
        return None if p is None else str((base / p) if not Path(p).is_absolute() else Path(p))

    for name in ExperimentConfig.PATH_FIELDS:
        if name in data:
            data[name] = resolve(data[name])
    if "embedding_tables" in data:
        data["embedding_tables"] = {k: resolve(v) for k, v in data["embedding_tables"].items()}
    if "output_dir" in data:
        data["output_dir"] = resolve(data["output_dir"])
    if "sw" in data and data["sw"].matrix is not None:
        data["sw"] = SwSettings(resolve(data["sw"].matrix), data["sw"].gap_open,
                                data["sw"].gap_extend)
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, path.parent)
