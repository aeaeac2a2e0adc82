"""Seeded synthetic benchmark with a planted, learnable affinity signal.

Proteins come in families (point-mutated copies of a random ancestor), so
Smith-Waterman similarity recovers the family. Every ligand has a home
family. The chemical-word embedding table plants two signals in each
ligand's SMILESVec: coordinate ``f`` is about 1 when ``f`` is the home
family and coordinate ``n_families`` carries a ligand-specific score.
Affinity is linear in those SMILESVec coordinates plus Gaussian noise, so
the best achievable test MSE is the noise variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dtalang.embedder import EmbeddingTable, smilesvec
from dtalang.pipeline.datasets import PKD, Interaction, InteractionDataset
from dtalang.smiles_lang import tokenize_kmer

AMINO = "ACDEFGHIKLMNPQRSTVWY"
SMILES_CHARS = "CCCCNNOOcccn()=123FSl[]@H+"


@dataclass
class SyntheticBundle:
    dataset: InteractionDataset
    embeddings: EmbeddingTable
    protein_embeddings: EmbeddingTable
    augmentation: dict[str, list[str]]
    family: dict[str, int]
    home: dict[str, int]
    noise_sd: float

    @property
    def noise_floor(self) -> float:
        """Expected squared error of the true regression function."""
        return self.noise_sd ** 2

    def write(self, directory: str | Path) -> dict[str, str]:
        """Save every file an experiment config can point at; returns the paths."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.dataset.save(d / "dataset")
        self.embeddings.save(d / "embeddings.txt")
        self.protein_embeddings.save(d / "protein_embeddings.txt")
        with open(d / "augmentation.tsv", "w", encoding="utf-8") as fh:
            fh.write("protein_id\tsmiles\n")
            for pid, smis in self.augmentation.items():
                for s in smis:
                    fh.write(f"{pid}\t{s}\n")
        with open(d / "corpus.txt", "w", encoding="utf-8") as fh:
            for s in self.dataset.ligands.values():
                fh.write(s + "\n")
        return {"dataset": str(d / "dataset"), "embedding_table": str(d / "embeddings.txt"),
                "protein_embeddings": str(d / "protein_embeddings.txt"),
                "augmentation": str(d / "augmentation.tsv"), "corpus": str(d / "corpus.txt")}


def _random_smiles(rng, length):
    return "".join(rng.choice(list(SMILES_CHARS), size=length))


def make_synthetic(seed: int = 0, n_proteins: int = 40, n_ligands: int = 120,
                   n_families: int = 2, n_subfamilies: int = 4, seq_len: int = 60,
                   subfamily_mutation: float = 0.3, mutation_rate: float = 0.1,
                   p_home: float = 1.0, p_family: float = 0.85, p_other: float = 0.15,
                   family_weights: tuple[float, ...] = (5.0, 3.0), ligand_weight: float = 2.5,
                   noise_sd: float = 0.5, dim: int = 8, n_augment: int = 2) -> SyntheticBundle:
    """Build the benchmark.

    Each family splits into subfamilies, each protein is a point-mutated
    copy of its subfamily ancestor, and every ligand has a home subfamily.
    A pair is measured with probability ``p_home`` inside the home
    subfamily, ``p_family`` elsewhere in the home family and ``p_other``
    across families. Affinity depends on the family only, so ligands
    measured across families are both rare and poorly predicted from the
    protein alone. Unequal ``family_weights`` keep the family effect from
    being a pure interaction that greedy tree splits cannot see one feature
    at a time. ``dim`` must exceed ``n_families``.
    """
    if dim <= n_families:
        raise ValueError("dim must exceed n_families")
    if len(family_weights) != n_families:
        raise ValueError("need one family weight per family")
    rng = np.random.default_rng(seed)
    n_groups = n_families * n_subfamilies

    def mutate(seq, rate):
        seq = list(seq)
        for pos in np.flatnonzero(rng.random(len(seq)) < rate):
            seq[pos] = AMINO[rng.integers(len(AMINO))]
        return "".join(seq)

    ancestors = ["".join(rng.choice(list(AMINO), size=seq_len)) for _ in range(n_families)]
    sub_ancestors = [mutate(ancestors[g // n_subfamilies], subfamily_mutation)
                     for g in range(n_groups)]
    proteins, family, group = {}, {}, {}
    for i in range(n_proteins):
        g = i % n_groups
        pid = f"P{i:03d}"
        proteins[pid] = mutate(sub_ancestors[g], mutation_rate)
        group[pid] = g
        family[pid] = g // n_subfamilies

    words: dict[str, np.ndarray] = {}

    def plant(smiles, home_family, z):
        for w in tokenize_kmer(smiles, 8):
            if w in words:
                continue
            v = rng.normal(0.0, 0.05, dim)
            v[home_family] += 1.0
            v[n_families] += z
            words[w] = v

    ligands, home, home_group = {}, {}, {}
    for j in range(n_ligands):
        lid = f"L{j:03d}"
        smi = _random_smiles(rng, int(rng.integers(24, 37)))
        home_group[lid] = j % n_groups
        home[lid] = home_group[lid] // n_subfamilies
        plant(smi, home[lid], rng.normal())
        ligands[lid] = smi

    augmentation = {}
    for pid in proteins:
        extra = []
        for _ in range(n_augment):
            smi = _random_smiles(rng, int(rng.integers(24, 37)))
            plant(smi, family[pid], rng.normal())
            extra.append(smi)
        augmentation[pid] = extra

    word_list = sorted(words)
    table = EmbeddingTable(word_list, np.array([words[w] for w in word_list]))
    svec = {lid: smilesvec(tokenize_kmer(s, 8), table).values for lid, s in ligands.items()}

    interactions = []
    for pid in proteins:
        for lid in ligands:
            if home_group[lid] == group[pid]:
                p = p_home
            elif home[lid] == family[pid]:
                p = p_family
            else:
                p = p_other
            if rng.random() >= p:
                continue
            s = svec[lid]
            y = 5.0 + family_weights[family[pid]] * s[family[pid]] + ligand_weight * s[n_families]
            y += rng.normal(0.0, noise_sd)
            interactions.append(Interaction(pid, lid, float(y), PKD))

    trigrams = sorted({seq[i:i + 3] for seq in proteins.values() for i in range(len(seq) - 2)})
    protein_table = EmbeddingTable(trigrams, rng.normal(0.0, 1.0, (len(trigrams), dim)))
    dataset = InteractionDataset(proteins, ligands, interactions, name=f"synthetic_{seed}")
    return SyntheticBundle(dataset, table, protein_table, augmentation, family, home, noise_sd)
