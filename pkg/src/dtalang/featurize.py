"""Protein and ligand representations and per-interaction feature matrices.

A :class:`RepresentationRecipe` names how proteins and ligands are turned
into vectors. Protein vectors may come from Smith-Waterman similarity
profiles, precomputed protein embeddings, random keyed vectors, or the
ligands a protein binds (ligand-centric). Ligand-centric vectors are always
computed from training interactions only.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from dtalang.embedder import EmbeddingTable, smilesvec
from dtalang.errors import ConfigError, InvalidInputError
from dtalang.pipeline.datasets import Interaction, InteractionDataset
from dtalang.seqsim import SimilarityMatrix
from dtalang.smiles_lang import BpeVocabulary, tokenize_bpe, tokenize_kmer

logger = logging.getLogger(__name__)

PROTEIN_MODES = (
    "none",
    "random",
    "sw",
    "protein_embedding",
    "ligand_centric_all",
    "ligand_centric_strong",
    "ligand_centric_strong_augmented",
    "sw_concat_ligand_centric_strong",
    "sw_concat_ligand_centric_strong_augmented",
)
LIGAND_MODES = ("none", "random", "smilesvec")
POOLINGS = ("ligand_mean", "word_pool")
RANDOM_DIM = 100


@dataclass(frozen=True)
class WordScheme:
    kind: str = "kmer"
    k: int = 8

    def __post_init__(self):
        if self.kind not in ("kmer", "bpe"):
            raise ConfigError(f"unknown word scheme {self.kind!r}")
        if self.kind == "kmer" and self.k < 1:
            raise ConfigError("k must be positive")

    @classmethod
    def parse(cls, text: str) -> "WordScheme":
        """Accept ``bpe``, ``kmer``, ``kmer:8`` or ``8-mer``."""
        text = text.strip().lower()
        if text == "bpe":
            return cls("bpe", 0)
        if text.endswith("-mer"):
            return cls("kmer", int(text[:-4]))
        if text.startswith("kmer"):
            _, _, k = text.partition(":")
            return cls("kmer", int(k) if k else 8)
        raise ConfigError(f"unknown word scheme {text!r}")

    def __str__(self):
        return "bpe" if self.kind == "bpe" else f"kmer:{self.k}"

    def tokenize(self, smiles: str, vocab: BpeVocabulary | None = None) -> list[str]:
        if self.kind == "kmer":
            return tokenize_kmer(smiles, self.k)
        if vocab is None:
            raise ConfigError("BPE word scheme needs a trained vocabulary")
        return tokenize_bpe(smiles, vocab)


@dataclass(frozen=True)
class StrongThreshold:
    value: float
    larger_is_stronger: bool = True

    def is_strong(self, affinity: float) -> bool:
        if self.larger_is_stronger:
            return affinity > self.value
        return affinity < self.value

    def __str__(self):
        return f"{'>' if self.larger_is_stronger else '<'}{self.value:g}"


PKD_STRONG = StrongThreshold(7.0, True)
KIBA_STRONG = StrongThreshold(12.1, False)


def default_threshold(dataset: InteractionDataset) -> StrongThreshold:
    return PKD_STRONG if dataset.larger_is_stronger else KIBA_STRONG


@dataclass(frozen=True)
class RepresentationRecipe:
    protein_mode: str
    ligand_mode: str
    word_scheme: WordScheme = WordScheme()
    strong_threshold: StrongThreshold | None = None
    pooling: str = "ligand_mean"
    name: str = ""

    def __post_init__(self):
        if self.protein_mode not in PROTEIN_MODES:
            raise ConfigError(f"unknown protein mode {self.protein_mode!r}")
        if self.ligand_mode not in LIGAND_MODES:
            raise ConfigError(f"unknown ligand mode {self.ligand_mode!r}")
        if self.protein_mode == "none" and self.ligand_mode == "none":
            raise ConfigError("protein and ligand modes cannot both be 'none'")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}")

    @property
    def uses_sw(self) -> bool:
        return self.protein_mode == "sw" or self.protein_mode.startswith("sw_concat")

    @property
    def ligand_centric(self) -> str | None:
        """'all', 'strong' or 'strong_augmented' when the protein side is ligand-centric."""
        mode = self.protein_mode
        if "ligand_centric_" not in mode:
            return None
        return mode.split("ligand_centric_", 1)[1]

    @property
    def needs_words(self) -> bool:
        return self.ligand_mode == "smilesvec" or self.ligand_centric is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["word_scheme"] = str(self.word_scheme)
        if self.strong_threshold is not None:
            d["strong_threshold"] = asdict(self.strong_threshold)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RepresentationRecipe":
        known = {"protein_mode", "ligand_mode", "word_scheme", "strong_threshold", "pooling", "name"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown recipe keys {sorted(unknown)}")
        kw = dict(d)
        if isinstance(kw.get("word_scheme"), str):
            kw["word_scheme"] = WordScheme.parse(kw["word_scheme"])
        elif isinstance(kw.get("word_scheme"), Mapping):
            kw["word_scheme"] = WordScheme(**kw["word_scheme"])
        if isinstance(kw.get("strong_threshold"), Mapping):
            kw["strong_threshold"] = StrongThreshold(**kw["strong_threshold"])
        return cls(**kw)


_KMER8 = WordScheme("kmer", 8)
_BPE = WordScheme("bpe", 0)

MODEL_RECIPES: dict[str, RepresentationRecipe] = {
    r.name: r for r in [
        RepresentationRecipe("sw", "none", _KMER8, name="S1"),
        RepresentationRecipe("none", "smilesvec", _KMER8, name="S2"),
        RepresentationRecipe("sw", "random", _KMER8, name="R1"),
        RepresentationRecipe("random", "smilesvec", _KMER8, name="R2"),
        RepresentationRecipe("sw", "smilesvec", _KMER8, name="1"),
        RepresentationRecipe("protein_embedding", "smilesvec", _KMER8, name="2"),
        RepresentationRecipe("protein_embedding", "smilesvec", _BPE, name="3"),
        RepresentationRecipe("ligand_centric_all", "smilesvec", _KMER8, name="4"),
        RepresentationRecipe("ligand_centric_strong", "smilesvec", _KMER8, name="5"),
        RepresentationRecipe("ligand_centric_strong", "smilesvec", _BPE, name="6"),
        RepresentationRecipe("ligand_centric_strong_augmented", "smilesvec", _KMER8, name="7"),
        RepresentationRecipe("sw_concat_ligand_centric_strong", "smilesvec", _KMER8, name="8"),
        RepresentationRecipe("sw_concat_ligand_centric_strong_augmented", "smilesvec", _KMER8,
                             name="9"),
    ]
}


def random_entity_vector(entity_id: str, dim: int = RANDOM_DIM, seed: int = 0) -> np.ndarray:
    """Uniform [0, 1) vector that depends only on (seed, entity_id)."""
    digest = hashlib.sha256(f"{seed}\x00{entity_id}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    return rng.random(dim)


@dataclass(frozen=True)
class ProteinVector:
    values: np.ndarray
    source: str
    n_ligands: int | None = None


@dataclass
class FeatureInputs:
    """Artifacts a recipe may need; unused ones can stay None."""

    embeddings: EmbeddingTable | None = None
    bpe_vocab: BpeVocabulary | None = None
    similarity: SimilarityMatrix | None = None
    protein_embeddings: EmbeddingTable | None = None
    augmentation: Mapping[str, Sequence[str]] | None = None
    seed: int = 0


class LigandWords:
    """Per-SMILES word lists and SMILESVecs, computed once."""

    def __init__(self, scheme: WordScheme, table: EmbeddingTable,
                 vocab: BpeVocabulary | None = None):
        self.scheme = scheme
        self.table = table
        self.vocab = vocab
        self._words: dict[str, list[str]] = {}
        self._vecs: dict[str, object] = {}

    def words(self, smiles: str) -> list[str]:
        if smiles not in self._words:
            self._words[smiles] = self.scheme.tokenize(smiles, self.vocab)
        return self._words[smiles]

    def vector(self, smiles: str):
        if smiles not in self._vecs:
            self._vecs[smiles] = smilesvec(self.words(smiles), self.table)
        return self._vecs[smiles]


def select_ligands(protein_id: str, interactions: Sequence[Interaction],
                   ligand_smiles: Mapping[str, str], mode: str,
                   threshold: StrongThreshold | None = None,
                   augmentation: Mapping[str, Sequence[str]] | None = None) -> list[str]:
    """SMILES of the ligands that represent ``protein_id`` under ``mode``.

    ``strong`` falls back to every ligand of the protein when no ligand
    passes the threshold; ``strong_augmented`` adds the external
    high-affinity ligands to the strong set before that check.
    """
    own = [it for it in interactions if it.protein_id == protein_id]
    if mode == "all":
        return [ligand_smiles[it.ligand_id] for it in own]
    if mode not in ("strong", "strong_augmented"):
        raise ConfigError(f"unknown ligand-centric mode {mode!r}")
    if threshold is None:
        raise ConfigError("strong-binder selection needs a threshold")
    chosen = [ligand_smiles[it.ligand_id] for it in own if threshold.is_strong(it.affinity)]
    if mode == "strong_augmented" and augmentation:
        chosen = chosen + [s for s in augmentation.get(protein_id, ()) if s not in chosen]
    if not chosen:
        chosen = [ligand_smiles[it.ligand_id] for it in own]
    return chosen


def ligand_centric_protein_vector(protein_id: str, interactions: Sequence[Interaction],
                                  ligand_smiles: Mapping[str, str], words: LigandWords,
                                  mode: str = "strong",
                                  threshold: StrongThreshold | None = PKD_STRONG,
                                  augmentation: Mapping[str, Sequence[str]] | None = None,
                                  pooling: str = "ligand_mean") -> ProteinVector:
    """Average SMILESVec of the selected ligands.

    ``interactions`` must come from training folds only. With
    ``pooling='ligand_mean'`` every ligand counts equally (mean of the
    per-ligand SMILESVecs; ligands with no known word are skipped); with
    ``'word_pool'`` all chemical words of the selected ligands are pooled
    and averaged once.
    """
    selected = sorted(select_ligands(protein_id, interactions, ligand_smiles, mode,
                                     threshold, augmentation))
    dim = words.table.dim
    if pooling == "word_pool":
        pooled = [w for s in selected for w in words.words(s)]
        vec = smilesvec(pooled, words.table)
        n = len(selected) if vec.n_words else 0
        values = vec.values
    else:
        vecs = [words.vector(s) for s in selected]
        vecs = [v.values for v in vecs if v.n_words > 0]
        n = len(vecs)
        values = np.zeros(dim)
        for v in vecs:
            values = values + v
        if n:
            values = values / n
    if n == 0:
        logger.warning("protein %s: no usable ligands for %s representation", protein_id, mode)
    return ProteinVector(values, f"ligand_centric_{mode}", n)


def protein_embedding_vector(protein_id: str, sequence: str, table: EmbeddingTable,
                             k: int = 3) -> ProteinVector:
    """Precomputed vector for the protein id, else the mean of its k-mer vectors."""
    if protein_id in table:
        return ProteinVector(np.array(table[protein_id]), "protein_embedding", None)
    vec = smilesvec(tokenize_kmer(sequence, k), table)
    return ProteinVector(vec.values, "protein_embedding", None)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    pairs: list[tuple[str, str]]
    recipe: RepresentationRecipe
    segments: list[tuple[str, int]] = field(default_factory=list)

    @property
    def column_count(self) -> int:
        return self.values.shape[1]

    def save(self, path: str | Path) -> None:
        """``<path>.npy`` (column-major) plus ``<path>.json`` describing it."""
        path = Path(path)
        np.save(path.with_suffix(".npy"), np.asfortranarray(self.values))
        meta = {"recipe": self.recipe.to_dict(), "segments": self.segments,
                "pairs": self.pairs, "shape": list(self.values.shape)}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        values = np.ascontiguousarray(np.load(path.with_suffix(".npy")))
        return cls(values, [tuple(p) for p in meta["pairs"]],
                   RepresentationRecipe.from_dict(meta["recipe"]),
                   [tuple(s) for s in meta["segments"]])

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            cols = [f"{name}_{i}" for name, size in self.segments for i in range(size)]
            w.writerow(["protein_id", "ligand_id", *cols])
            for (p, lig), row in zip(self.pairs, self.values):
                w.writerow([p, lig, *(repr(float(v)) for v in row)])


class Featurizer:
    """Builds protein and ligand vectors for one recipe and one training set.

    ``train_interactions`` is the only interaction data the ligand-centric
    representations ever see.
    """

    def __init__(self, dataset: InteractionDataset, recipe: RepresentationRecipe,
                 inputs: FeatureInputs, train_interactions: Sequence[Interaction]):
        self.dataset = dataset
        self.recipe = recipe
        self.inputs = inputs
        self.train = list(train_interactions)
        self.threshold = recipe.strong_threshold or default_threshold(dataset)
        self._check_inputs()
        self.words = None
        if recipe.needs_words:
            self.words = LigandWords(recipe.word_scheme, inputs.embeddings, inputs.bpe_vocab)
        self._protein_cache: dict[str, ProteinVector] = {}
        self._by_protein: dict[str, list[Interaction]] = {}
        for it in self.train:
            self._by_protein.setdefault(it.protein_id, []).append(it)

    def _check_inputs(self):
        r, inp = self.recipe, self.inputs
        if r.needs_words:
            if inp.embeddings is None:
                raise ConfigError(f"recipe {r.name or r.protein_mode} needs an embedding table")
            if r.word_scheme.kind == "bpe" and inp.bpe_vocab is None:
                raise ConfigError(f"recipe {r.name or r.protein_mode} needs a BPE vocabulary")
        if r.uses_sw:
            if inp.similarity is None:
                raise ConfigError(f"recipe {r.name or r.protein_mode} needs an SW similarity matrix")
            missing = set(self.dataset.proteins) - set(inp.similarity.position)
            if missing:
                raise ConfigError(f"similarity matrix lacks {len(missing)} dataset proteins")
        if r.protein_mode == "protein_embedding" and inp.protein_embeddings is None:
            raise ConfigError("recipe needs a protein embedding table")
        if r.ligand_centric == "strong_augmented" and inp.augmentation is None:
            logger.warning("augmented recipe without an augmentation store; using training ligands only")

    def segments(self) -> list[tuple[str, int]]:
        r = self.recipe
        segs = []
        n_prot = len(self.dataset.proteins)
        dim = self.inputs.embeddings.dim if self.inputs.embeddings is not None else RANDOM_DIM
        if r.uses_sw:
            segs.append(("sw", n_prot))
        if r.protein_mode == "random":
            segs.append(("protein_random", RANDOM_DIM))
        if r.protein_mode == "protein_embedding":
            segs.append(("protein_embedding", self.inputs.protein_embeddings.dim))
        if r.ligand_centric is not None:
            segs.append((f"ligand_centric_{r.ligand_centric}", dim))
        if r.ligand_mode == "random":
            segs.append(("ligand_random", RANDOM_DIM))
        if r.ligand_mode == "smilesvec":
            segs.append(("smilesvec", dim))
        return segs

    def protein_vector(self, protein_id: str) -> np.ndarray:
        if protein_id not in self._protein_cache:
            self._protein_cache[protein_id] = self._protein_vector(protein_id)
        return self._protein_cache[protein_id].values

    def protein_provenance(self, protein_id: str) -> ProteinVector:
        self.protein_vector(protein_id)
        return self._protein_cache[protein_id]

    def _protein_vector(self, pid: str) -> ProteinVector:
        r, inp = self.recipe, self.inputs
        parts = []
        n_ligands = None
        if r.uses_sw:
            parts.append(inp.similarity.row(pid, self.dataset.protein_ids))
        if r.protein_mode == "random":
            parts.append(random_entity_vector("protein:" + pid, RANDOM_DIM, inp.seed))
        if r.protein_mode == "protein_embedding":
            parts.append(protein_embedding_vector(pid, self.dataset.proteins[pid],
                                                  inp.protein_embeddings).values)
        if r.ligand_centric is not None:
            lc = ligand_centric_protein_vector(
                pid, self._by_protein.get(pid, []), self.dataset.ligands, self.words,
                r.ligand_centric, self.threshold, inp.augmentation, r.pooling)
            parts.append(lc.values)
            n_ligands = lc.n_ligands
        values = np.concatenate(parts) if parts else np.zeros(0)
        return ProteinVector(values, r.protein_mode, n_ligands)

    def ligand_vector(self, ligand_id: str) -> np.ndarray:
        r = self.recipe
        if r.ligand_mode == "none":
            return np.zeros(0)
        if r.ligand_mode == "random":
            return random_entity_vector("ligand:" + ligand_id, RANDOM_DIM, self.inputs.seed)
        return self.words.vector(self.dataset.ligands[ligand_id]).values

    def transform(self, interactions: Sequence[Interaction]) -> FeatureMatrix:
        width = sum(size for _, size in self.segments())
        values = np.empty((len(interactions), width))
        for i, it in enumerate(interactions):
            row = np.concatenate([self.protein_vector(it.protein_id),
                                  self.ligand_vector(it.ligand_id)])
            if len(row) != width:
                raise InvalidInputError(f"row {i} has {len(row)} columns, expected {width}")
            values[i] = row
        return FeatureMatrix(values, [it.pair for it in interactions], self.recipe,
                             self.segments())

    def protein_vectors(self) -> dict[str, np.ndarray]:
        return {pid: self.protein_vector(pid) for pid in self.dataset.protein_ids}


def build_feature_matrix(dataset: InteractionDataset, interactions: Sequence[Interaction],
                         recipe: RepresentationRecipe, inputs: FeatureInputs,
                         train_interactions: Sequence[Interaction]) -> FeatureMatrix:
    """Rows ``protein_vector(p_i) ++ ligand_vector(l_i)`` in interaction order."""
    return Featurizer(dataset, recipe, inputs, train_interactions).transform(interactions)
