"""Interaction datasets: types, file formats, BindingDB filtering, KIBA loading."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import pickle
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from dtalang.errors import DataError, InvalidInputError

logger = logging.getLogger(__name__)

PKD = "pKd"
KIBA = "KIBA"
AFFINITY_KINDS = (PKD, KIBA)
CENSOR_CAP_NM = 10000.0


@dataclass(frozen=True)
class Interaction:
    protein_id: str
    ligand_id: str
    affinity: float
    kind: str = PKD
    censored: bool = False

    @property
    def pair(self) -> tuple[str, str]:
        return (self.protein_id, self.ligand_id)


def larger_is_stronger(kind: str) -> bool:
    if kind == PKD:
        return True
    if kind == KIBA:
        return False
    raise InvalidInputError(f"unknown affinity kind {kind!r}")


@dataclass
class InteractionDataset:
    proteins: dict[str, str]
    ligands: dict[str, str]
    interactions: list[Interaction]
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen = set()
        kinds = set()
        for it in self.interactions:
            if it.protein_id not in self.proteins:
                raise DataError(f"interaction references unknown protein {it.protein_id!r}")
            if it.ligand_id not in self.ligands:
                raise DataError(f"interaction references unknown ligand {it.ligand_id!r}")
            if it.pair in seen:
                raise DataError(f"duplicate interaction {it.pair}")
            if not math.isfinite(it.affinity):
                raise DataError(f"non-finite affinity for {it.pair}")
            seen.add(it.pair)
            kinds.add(it.kind)
        if len(kinds) > 1:
            raise DataError(f"mixed affinity kinds {sorted(kinds)}")

    @property
    def kind(self) -> str:
        return self.interactions[0].kind if self.interactions else PKD

    @property
    def larger_is_stronger(self) -> bool:
        return larger_is_stronger(self.kind)

    @property
    def protein_ids(self) -> list[str]:
        return list(self.proteins)

    @property
    def ligand_ids(self) -> list[str]:
        return list(self.ligands)

    def affinities(self, interactions=None) -> np.ndarray:
        its = self.interactions if interactions is None else interactions
        return np.array([it.affinity for it in its], dtype=np.float64)

    def subset(self, indices) -> list[Interaction]:
        return [self.interactions[i] for i in indices]

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        _write_tsv(d / "proteins.tsv", ["id", "sequence"], self.proteins.items())
        _write_tsv(d / "ligands.tsv", ["id", "smiles"], self.ligands.items())
        _write_tsv(d / "interactions.tsv",
                   ["protein_id", "ligand_id", "value", "kind", "censored"],
                   ((it.protein_id, it.ligand_id, repr(it.affinity), it.kind, int(it.censored))
                    for it in self.interactions))

    @classmethod
    def load(cls, directory: str | Path) -> "InteractionDataset":
        d = Path(directory)
        for fname in ("proteins.tsv", "ligands.tsv", "interactions.tsv"):
            if not (d / fname).exists():
                raise DataError(f"{d / fname} not found")
        proteins = {r["id"]: r["sequence"] for r in _read_tsv(d / "proteins.tsv")}
        ligands = {r["id"]: r["smiles"] for r in _read_tsv(d / "ligands.tsv")}
        interactions = []
        for lineno, r in enumerate(_read_tsv(d / "interactions.tsv"), start=2):
            try:
                interactions.append(Interaction(
                    r["protein_id"], r["ligand_id"], float(r["value"]),
                    r.get("kind") or PKD, r.get("censored", "0") in ("1", "true", "True")))
            except (KeyError, ValueError) as exc:
                raise DataError(f"interactions.tsv:{lineno}: {exc}") from None
        return cls(proteins, ligands, interactions, name=d.name)


def _write_tsv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_tsv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def kd_to_pkd(kd_nm: float, censored: bool = False) -> float:
    """Convert a Kd in nanomolar to pKd = -log10(Kd / 1e9).

    A right-censored measurement (``Kd >= x`` with x at or above 10 uM) is
    stored at the cap, pKd 5.
    """
    if not kd_nm > 0 or not math.isfinite(kd_nm):
        raise InvalidInputError(f"Kd must be a positive finite number, got {kd_nm}")
    if censored and kd_nm >= CENSOR_CAP_NM:
        return 5.0
    return -math.log10(kd_nm / 1e9)


@dataclass(frozen=True)
class RawRow:
    protein_id: str
    sequence: str
    ligand_id: str
    smiles: str
    measurement: str
    value: str


DEFAULT_COLUMNS = {
    "protein_id": "UniProt (SwissProt) Primary ID of Target Chain",
    "sequence": "BindingDB Target Chain Sequence",
    "ligand_id": "BindingDB MonomerID",
    "smiles": "Ligand SMILES",
    "Kd": "Kd (nM)",
    "Ki": "Ki (nM)",
    "IC50": "IC50 (nM)",
    "EC50": "EC50 (nM)",
}


def read_bindingdb(path: str | Path, columns: Mapping[str, str] | None = None,
                   measurements: Iterable[str] = ("Kd",)) -> Iterable[RawRow]:
    """Yield one RawRow per (row, measurement column) with a value.

    ``columns`` maps logical names to header names of the export; defaults
    follow the BindingDB TSV download.
    """
    cols = {**DEFAULT_COLUMNS, **(columns or {})}
    with open(path, newline="", encoding="utf-8", errors="replace") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        for rec in reader:
            for kind in measurements:
                value = (rec.get(cols[kind]) or "").strip()
                if not value:
                    continue
                yield RawRow(
                    protein_id=(rec.get(cols["protein_id"]) or "").strip(),
                    sequence=(rec.get(cols["sequence"]) or "").strip().upper(),
                    ligand_id=(rec.get(cols["ligand_id"]) or "").strip(),
                    smiles=(rec.get(cols["smiles"]) or "").strip(),
                    measurement=kind,
                    value=value,
                )


def parse_measurement(text: str) -> tuple[float, bool]:
    """``'>10000'`` -> (10000.0, True); ``'<0.1'`` and ``'12'`` are uncensored."""
    text = text.strip()
    censored = text.startswith(">")
    value = float(text.lstrip("<>=~ "))
    return value, censored


def filter_bindingdb(rows: Iterable[RawRow], min_protein: int = 6, min_ligand: int = 3,
                     name: str = "BDB") -> InteractionDataset:
    """Kd-only, strongest-measurement-per-pair, count-filtered pKd dataset.

    Proteins with fewer than ``min_protein`` and compounds with fewer than
    ``min_ligand`` interactions are removed repeatedly until neither rule
    removes anything.
    """
    skipped = Counter()
    best: dict[tuple[str, str], Interaction] = {}
    sequences: dict[str, str] = {}
    smiles: dict[str, str] = {}
    for row in rows:
        if row.measurement != "Kd":
            skipped["not Kd"] += 1
            continue
        try:
            if not row.sequence or not row.smiles:
                raise ValueError("missing sequence or SMILES")
            if any(ch.isspace() for ch in row.smiles):
                raise ValueError("whitespace in SMILES")
            kd, censored = parse_measurement(row.value)
            pkd = kd_to_pkd(kd, censored)
        except (ValueError, InvalidInputError):
            skipped["malformed"] += 1
            continue
        pid = row.protein_id or "seq_" + hashlib.sha1(row.sequence.encode()).hexdigest()[:12]
        lid = row.ligand_id or row.smiles
        sequences.setdefault(pid, row.sequence)
        smiles.setdefault(lid, row.smiles)
        key = (pid, lid)
        prev = best.get(key)
        if prev is None or pkd > prev.affinity:
            best[key] = Interaction(pid, lid, pkd, PKD, censored and pkd == 5.0)
    if skipped:
        logger.warning("skipped rows: %s", dict(skipped))

    kept = list(best.values())
    while True:
        pc = Counter(it.protein_id for it in kept)
        lc = Counter(it.ligand_id for it in kept)
        nxt = [it for it in kept if pc[it.protein_id] >= min_protein and lc[it.ligand_id] >= min_ligand]
        if len(nxt) == len(kept):
            break
        kept = nxt
    if not kept:
        raise DataError("no interactions left after filtering")
    kept.sort(key=lambda it: it.pair)
    proteins = {p: sequences[p] for p in sorted({it.protein_id for it in kept})}
    ligands = {lig: smiles[lig] for lig in sorted({it.ligand_id for it in kept})}
    return InteractionDataset(proteins, ligands, kept, name=name,
                              meta={"skipped": dict(skipped)})


def load_deepdta_dir(directory: str | Path, kind: str = KIBA, name: str | None = None
                     ) -> InteractionDataset:
    """Load the ``ligands_can.txt`` / ``proteins.txt`` / ``Y`` layout.

    ``ligands_can.txt`` and ``proteins.txt`` are JSON objects (id ->
    SMILES / sequence) in matrix order; ``Y`` is a pickled ligand x protein
    matrix with NaN for unmeasured pairs. Pickle can execute code, so only
    load ``Y`` files from trusted sources.
    """
    d = Path(directory)
    ligands = json.loads((d / "ligands_can.txt").read_text(encoding="utf-8"))
    proteins = json.loads((d / "proteins.txt").read_text(encoding="utf-8"))
    with open(d / "Y", "rb") as fh:
        Y = np.asarray(pickle.load(fh, encoding="latin1"), dtype=np.float64)
    lig_ids, prot_ids = list(ligands), list(proteins)
    if Y.shape != (len(lig_ids), len(prot_ids)):
        raise DataError(f"Y has shape {Y.shape}, expected {(len(lig_ids), len(prot_ids))}")
    if kind == PKD and np.nanmax(Y) > 20:
        Y = -np.log10(Y / 1e9)
    interactions = [Interaction(prot_ids[j], lig_ids[i], float(Y[i, j]), kind)
                    for i, j in zip(*np.nonzero(np.isfinite(Y)))]
    interactions.sort(key=lambda it: it.pair)
    return InteractionDataset(proteins, ligands, interactions, name=name or d.name)


def load_augmentation(path: str | Path, dataset: InteractionDataset | None = None
                      ) -> dict[str, list[str]]:
    """Read ``protein_id<TAB>smiles`` high-affinity pairs.

    Pairs already in ``dataset`` (same protein, same SMILES) are dropped so
    the store never duplicates benchmark interactions.
    """
    present = set()
    if dataset is not None:
        present = {(it.protein_id, dataset.ligands[it.ligand_id]) for it in dataset.interactions}
    store: dict[str, list[str]] = {}
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected protein_id<TAB>smiles")
            pid, smi = parts[0].strip(), parts[1].strip()
            if lineno == 1 and pid.lower() in ("protein_id", "protein"):
                continue
            if (pid, smi) in present:
                dropped += 1
                continue
            bucket = store.setdefault(pid, [])
            if smi not in bucket:
                bucket.append(smi)
    if dropped:
        logger.info("augmentation: dropped %d pairs already in the benchmark", dropped)
    return store
