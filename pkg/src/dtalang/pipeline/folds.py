"""Random six-part interaction splits and derived per-stage seeds."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dtalang.errors import ConfigError, InvariantError


def derive_seed(master: int, label: str) -> int:
    """Stable per-stage seed from the master seed and a stage label."""
    digest = hashlib.sha256(f"{master}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class FoldPlan:
    part_of: np.ndarray   # part index of every interaction
    n_parts: int
    test_part: int
    seed: int

    def __post_init__(self):
        self.part_of = np.asarray(self.part_of, dtype=np.int64)
        sizes = np.bincount(self.part_of, minlength=self.n_parts)
        if len(sizes) != self.n_parts or sizes.max() - sizes.min() > 1:
            raise InvariantError(f"unbalanced fold sizes {sizes.tolist()}")

    def part(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.part_of == k)

    @property
    def test_indices(self) -> np.ndarray:
        return self.part(self.test_part)

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.part_of != self.test_part)

    @property
    def cv_parts(self) -> list[int]:
        return [k for k in range(self.n_parts) if k != self.test_part]

    def cv_folds(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(fit indices, held-out indices) for each non-test part."""
        out = []
        for k in self.cv_parts:
            fit = np.flatnonzero((self.part_of != self.test_part) & (self.part_of != k))
            out.append((fit, self.part(k)))
        return out

    def sizes(self) -> list[int]:
        return np.bincount(self.part_of, minlength=self.n_parts).tolist()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "n_parts": self.n_parts, "test_part": self.test_part, "seed": self.seed,
            "part_of": self.part_of.tolist()}) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FoldPlan":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(np.array(d["part_of"]), d["n_parts"], d["test_part"], d["seed"])


def make_folds(n_interactions: int, seed: int, n_parts: int = 6,
               test_part: int | None = None) -> FoldPlan:
    """Uniformly random partition into ``n_parts`` parts of near-equal size.

    The last part is the test part unless ``test_part`` says otherwise.
    """
    if n_interactions < n_parts:
        raise ConfigError(f"need at least {n_parts} interactions, got {n_interactions}")
    test_part = n_parts - 1 if test_part is None else test_part
    if not 0 <= test_part < n_parts:
        raise ConfigError(f"test part {test_part} out of range")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_interactions)
    part_of = np.empty(n_interactions, dtype=np.int64)
    for k, chunk in enumerate(np.array_split(perm, n_parts)):
        part_of[chunk] = k
    return FoldPlan(part_of, n_parts, test_part, seed)
