"""Evaluation metrics and analyses for affinity predictions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from dtalang.errors import ConfigError, InvalidInputError, UndefinedMetricError

logger = logging.getLogger(__name__)


@dataclass
class PredictionSet:
    y: np.ndarray
    b: np.ndarray
    protein_ids: list[str] | None = None
    ligand_ids: list[str] | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.y.ndim != 1 or self.y.shape != self.b.shape or len(self.y) == 0:
            raise InvalidInputError("y and b must be equal-length non-empty vectors")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.b))):
            raise InvalidInputError("non-finite value in prediction set")
        for ids in (self.protein_ids, self.ligand_ids):
            if ids is not None and len(ids) != len(self.y):
                raise InvalidInputError("id lists must match the prediction length")


def _pair_counts_slow(y, b):
    """Integer counts (2 * concordant + ties, comparable pairs) by enumeration."""
    score2 = 0
    z = 0
    n = len(y)
    for i in range(n):
        for j in range(n):
            if y[i] > y[j]:
                z += 1
                if b[i] > b[j]:
                    score2 += 2
                elif b[i] == b[j]:
                    score2 += 1
    return score2, z


class _Fenwick:
    def __init__(self, n):
        self.tree = [0] * (n + 1)

    def add(self, i, v=1):
        i += 1
        while i < len(self.tree):
            self.tree[i] += v
            i += i & -i

    def prefix(self, i):
        """Sum over positions < i."""
        s = 0
        while i > 0:
            s += self.tree[i]
            i -= i & -i
        return s


def _pair_counts_fast(y, b):
    """Same counts as the slow path in O(n log n).

    Rows are visited by increasing truth, one group of equal truth at a
    time; a Fenwick tree over prediction ranks counts earlier (strictly
    smaller truth) rows with smaller or equal prediction.
    """
    ranks = np.unique(b, return_inverse=True)[1]
    order = np.argsort(y, kind="stable")
    fen = _Fenwick(int(ranks.max()) + 1)
    score2 = 0
    z = 0
    seen = 0
    i = 0
    n = len(y)
    while i < n:
        j = i
        while j < n and y[order[j]] == y[order[i]]:
            j += 1
        group = order[i:j]
        for r in ranks[group]:
            below = fen.prefix(int(r))
            equal = fen.prefix(int(r) + 1) - below
            score2 += 2 * below + equal
        z += seen * len(group)
        for r in ranks[group]:
            fen.add(int(r))
        seen += len(group)
        i = j
    return score2, z


def concordance_index(preds: PredictionSet | Sequence[float], b=None, *,
                      larger_is_stronger: bool = True, fast: bool = True) -> float:
    """Fraction of correctly ordered prediction pairs.

    Only pairs with different true affinity count; tied predictions score
    one half. ``larger_is_stronger=False`` (KIBA scores) flips both vectors,
    which leaves the value unchanged but keeps the pair orientation
    explicit.
    """
    if not isinstance(preds, PredictionSet):
        preds = PredictionSet(preds, b)
    y, bb = preds.y, preds.b
    if not larger_is_stronger:
        y, bb = -y, -bb
    score2, z = (_pair_counts_fast if fast else _pair_counts_slow)(y, bb)
    if z == 0:
        raise UndefinedMetricError("concordance index undefined: all true affinities are equal")
    return score2 / (2 * z)


def mse(preds: PredictionSet | Sequence[float], b=None) -> float:
    if not isinstance(preds, PredictionSet):
        preds = PredictionSet(preds, b)
    return float(np.mean((preds.b - preds.y) ** 2))


def mss(test_pairs: Sequence[tuple[str, str]], sim, train_pairs: Sequence[tuple[str, str]]
        ) -> np.ndarray:
    """Maximum sequence similarity of each test (protein, ligand) pair.

    For pair (P, L) this is the largest similarity between P and any
    protein that interacts with L in ``train_pairs``. Ligands without
    training partners get 0.
    """
    partners: dict[str, list[int]] = {}
    for p, lig in train_pairs:
        partners.setdefault(lig, []).append(sim.position[p])
    partners = {lig: np.unique(v) for lig, v in partners.items()}
    out = np.zeros(len(test_pairs))
    unseen = 0
    for i, (p, lig) in enumerate(test_pairs):
        if p not in sim.position:
            raise InvalidInputError(f"test protein {p!r} missing from similarity matrix")
        cols = partners.get(lig)
        if cols is None:
            unseen += 1
            continue
        out[i] = sim.values[sim.position[p], cols].max()
    if unseen:
        logger.info("%d test pairs have ligands unseen in training (MSS = 0)", unseen)
    return out


@dataclass
class MssBins:
    boundaries: np.ndarray
    assignment: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.boundaries) + 1

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def sizes(self) -> list[int]:
        return [int(np.sum(self.assignment == k)) for k in range(self.n_bins)]

    def labels(self) -> list[str]:
        edges = ["-inf", *(f"{v:.4f}" for v in self.boundaries), "+inf"]
        return [f"({edges[k]}, {edges[k + 1]}]" for k in range(self.n_bins)]


def mss_bins(values, n_bins: int = 4) -> MssBins:
    """Split values at empirical quantiles; a value equal to a cut point goes to the lower bin."""
    values = np.asarray(values, dtype=np.float64)
    if n_bins < 1 or len(values) < n_bins:
        raise ConfigError(f"need at least {n_bins} values, got {len(values)}")
    qs = np.arange(1, n_bins) / n_bins
    boundaries = np.quantile(values, qs)
    assignment = np.searchsorted(boundaries, values, side="left")
    bins = MssBins(boundaries, assignment)
    empty = [k for k, size in enumerate(bins.sizes()) if size == 0]
    if empty:
        logger.warning("MSS bins %s are empty (many identical values)", empty)
    return bins


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    pvalue: float
    outcome: str  # "ok", "indistinguishable" or "degenerate"
    n: int


def paired_t_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on per-run scores."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise InvalidInputError("paired t-test needs two equal-length lists of >= 2 scores")
    d = a - b
    n = len(d)
    if np.all(d == 0):
        return TTestResult(math.nan, 1.0, "indistinguishable", n)
    mean = d.mean()
    sd = math.sqrt(np.sum((d - mean) ** 2) / (n - 1))
    if sd == 0:
        return TTestResult(math.copysign(math.inf, mean), 0.0, "degenerate", n)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return TTestResult(float(t), float(p), "ok", n)


@dataclass
class WardResult:
    ids: list[str]
    labels: dict[str, int]
    merges: list[tuple[frozenset, frozenset, float]]


def ward_cluster(vectors: Mapping[str, Sequence[float]] | Sequence[tuple[str, Sequence[float]]],
                 n_clusters: int) -> WardResult:
    """Agglomerative clustering with Ward linkage.

    Distances are updated with the Lance-Williams recurrence on squared
    Euclidean distances; merge heights are reported on the Euclidean scale
    (as in the usual dendrogram convention). Equal distances merge the pair
    with the smallest member indices first. Cluster labels are numbered by
    first appearance in input order.
    """
    items = list(vectors.items()) if isinstance(vectors, Mapping) else list(vectors)
    ids = [pid for pid, _ in items]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("duplicate ids in ward_cluster input")
    n = len(ids)
    if not 1 <= n_clusters <= n:
        raise ConfigError(f"cannot cut {n} vectors into {n_clusters} clusters")
    X = np.array([np.asarray(v, dtype=np.float64) for _, v in items])

    diff = X[:, None, :] - X[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    size = np.ones(n)
    alive = np.ones(n, dtype=bool)
    members = [frozenset([i]) for i in range(n)]
    merges = []
    for _ in range(n - n_clusters):
        masked = np.where(alive[:, None] & alive[None, :], d2, np.inf)
        flat = int(np.argmin(masked))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        height = math.sqrt(d2[i, j])
        merges.append((frozenset(ids[m] for m in members[i]),
                       frozenset(ids[m] for m in members[j]), height))
        si, sj = size[i], size[j]
        total = si + sj + size
        new = ((si + size) * d2[i] + (sj + size) * d2[j] - size * d2[i, j]) / total
        d2[i, :] = new
        d2[:, i] = new
        d2[i, i] = np.inf
        alive[j] = False
        d2[j, :] = np.inf
        d2[:, j] = np.inf
        size[i] = si + sj
        members[i] = members[i] | members[j]

    labels: dict[str, int] = {}
    roots = [i for i in range(n) if alive[i]]
    root_of = {}
    for r in roots:
        for m in members[r]:
            root_of[m] = r
    numbering: dict[int, int] = {}
    for idx, pid in enumerate(ids):
        r = root_of[idx]
        numbering.setdefault(r, len(numbering))
        labels[pid] = numbering[r]
    return WardResult(ids=ids, labels=labels, merges=merges)
