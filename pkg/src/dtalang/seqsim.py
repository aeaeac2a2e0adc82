"""Smith-Waterman local alignment scores and normalized similarity matrices.

Gap model: a gap of length L costs ``gap_open + (L - 1) * gap_extend``.
Alignments are built from match columns separated by gaps; a gap in one
sequence is never immediately followed by a gap in the other (the usual
three-state affine model).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from dtalang.errors import DegenerateSequenceError, InvalidInputError

AMINO_ACIDS = frozenset("ACDEFGHIKLMNPQRSTVWYX")


@dataclass(frozen=True)
class ProteinSequence:
    id: str
    residues: str

    def __post_init__(self):
        if not self.residues:
            raise InvalidInputError(f"protein {self.id!r} has an empty sequence")
        bad = set(self.residues) - AMINO_ACIDS
        if bad:
            raise InvalidInputError(
                f"protein {self.id!r} has invalid residues {''.join(sorted(bad))!r}")


class SubstitutionMatrix:
    def __init__(self, letters: str, scores: np.ndarray):
        self.letters = letters
        self.scores = np.asarray(scores, dtype=np.float64)
        self.lookup = {ch: i for i, ch in enumerate(letters)}

    def __getitem__(self, pair):
        a, b = pair
        return float(self.scores[self.lookup[a], self.lookup[b]])

    def encode(self, residues: str) -> np.ndarray:
        try:
            return np.array([self.lookup[ch] for ch in residues], dtype=np.intp)
        except KeyError as exc:
            raise InvalidInputError(f"residue {exc.args[0]!r} not in substitution matrix") from None

    @classmethod
    def parse(cls, text: str) -> "SubstitutionMatrix":
        """Parse the whitespace-separated NCBI matrix layout (``#`` comments)."""
        rows = [ln.split() for ln in text.splitlines()
                if ln.strip() and not ln.lstrip().startswith("#")]
        header = rows[0]
        scores = np.zeros((len(header), len(header)))
        seen = []
        for row in rows[1:]:
            letter, values = row[0], row[1:]
            if len(values) != len(header):
                raise InvalidInputError(f"matrix row {letter!r} has {len(values)} entries")
            scores[header.index(letter)] = [float(v) for v in values]
            seen.append(letter)
        if sorted(seen) != sorted(header):
            raise InvalidInputError("matrix rows do not match the header letters")
        return cls("".join(header), scores)

    @classmethod
    def from_file(cls, path: str | Path) -> "SubstitutionMatrix":
        return cls.parse(Path(path).read_text())


@lru_cache(maxsize=None)
def blosum62() -> SubstitutionMatrix:
    text = resources.files("dtalang").joinpath("data/BLOSUM62").read_text()
    return SubstitutionMatrix.parse(text)


@dataclass(frozen=True)
class Scoring:
    matrix: SubstitutionMatrix | None = None
    gap_open: float = 10.0
    gap_extend: float = 0.5

    def __post_init__(self):
        if self.matrix is None:
            object.__setattr__(self, "matrix", blosum62())
        if self.gap_extend < 0 or self.gap_open < self.gap_extend:
            raise InvalidInputError("need gap_open >= gap_extend >= 0")


def _as_residues(seq) -> str:
    if isinstance(seq, ProteinSequence):
        return seq.residues
    return ProteinSequence("?", seq).residues


def sw_score(a, b, scoring: Scoring | None = None) -> float:
    """Best local alignment score of ``a`` and ``b`` (never negative).

    ``a`` and ``b`` may be ProteinSequence objects or residue strings. The
    DP runs row by row over ``a`` with each row vectorized over ``b``; the
    horizontal gap recurrence is a running maximum.
    """
    scoring = scoring or Scoring()
    ra, rb = _as_residues(a), _as_residues(b)
    sub = scoring.matrix.scores[np.ix_(scoring.matrix.encode(ra), scoring.matrix.encode(rb))]
    go, ge = scoring.gap_open, scoring.gap_extend
    m = len(rb)
    neg = -np.inf
    match_prev = np.full(m, neg)   # best score ending with a match column at (i-1, j)
    vgap_prev = np.full(m, neg)    # ... ending with a[i-1] against a gap
    hgap_prev = np.full(m, neg)    # ... ending with b[j] against a gap
    offsets = np.arange(m) * ge
    best = 0.0
    for i in range(len(ra)):
        diag = np.empty(m)
        diag[0] = 0.0
        if m > 1:
            diag[1:] = np.maximum(np.maximum(match_prev[:-1], vgap_prev[:-1]), hgap_prev[:-1])
            np.maximum(diag[1:], 0.0, out=diag[1:])
        match = sub[i] + diag
        vgap = np.maximum(match_prev - go, vgap_prev - ge)
        hgap = np.full(m, neg)
        if m > 1:
            # hgap[j] = max_{k<j} match[k] - go - (j-1-k)*ge
            run = np.maximum.accumulate(match[:-1] + offsets[:-1])
            hgap[1:] = run - go - offsets[:-1]
        best = max(best, float(match.max()))
        match_prev, vgap_prev, hgap_prev = match, vgap, hgap
    return best


@dataclass
class SimilarityMatrix:
    ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.position = {pid: i for i, pid in enumerate(self.ids)}

    def __getitem__(self, pair) -> float:
        a, b = pair
        return float(self.values[self.position[a], self.position[b]])

    def row(self, protein_id: str, order: Sequence[str] | None = None) -> np.ndarray:
        row = self.values[self.position[protein_id]]
        if order is None:
            return row.copy()
        return row[[self.position[p] for p in order]]

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["id", *self.ids])
            for pid, row in zip(self.ids, self.values):
                w.writerow([pid, *(repr(float(v)) for v in row)])

    @classmethod
    def load(cls, path: str | Path) -> "SimilarityMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        ids = rows[0][1:]
        if [r[0] for r in rows[1:]] != ids:
            raise InvalidInputError(f"{path}: row ids do not match column ids")
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(ids, values)


def normalized_sw_matrix(proteins: Sequence[ProteinSequence], scoring: Scoring | None = None,
                         workers: int = 1) -> SimilarityMatrix:
    """All-pairs ``SW(a, b) / sqrt(SW(a, a) * SW(b, b))``.

    Each unordered pair is aligned once. With ``workers > 1`` the upper
    triangle is spread over a thread pool; results are identical.
    """
    scoring = scoring or Scoring()
    if not proteins:
        raise InvalidInputError("need at least one protein")
    ids = [p.id for p in proteins]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("duplicate protein ids")
    n = len(proteins)
    self_scores = np.array([sw_score(p, p, scoring) for p in proteins])
    for p, s in zip(proteins, self_scores):
        if s <= 0:
            raise DegenerateSequenceError(p.id)

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def job(pair):
        i, j = pair
        return sw_score(proteins[i], proteins[j], scoring)

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(job, pairs))
    else:
        scores = [job(p) for p in pairs]

    values = np.eye(n)
    for (i, j), s in zip(pairs, scores):
        v = s / math.sqrt(self_scores[i] * self_scores[j])
        values[i, j] = values[j, i] = min(v, 1.0)
    return SimilarityMatrix(ids, values)
