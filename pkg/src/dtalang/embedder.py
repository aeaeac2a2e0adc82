"""Chemical-word embeddings and SMILESVec ligand vectors.

``train_skipgram`` is a small single-threaded skip-gram trainer with
negative sampling. Its defaults mirror the usual word2vec settings (window
5, 5 negatives, 5 epochs, min count 5, learning rate 0.025 decaying
linearly, subsampling threshold 1e-3). Training is deterministic for a
given seed.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dtalang.errors import EmptyVocabularyError, InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SkipGramParams:
    dim: int = 100
    window: int = 5
    negative: int = 5
    epochs: int = 5
    min_count: int = 5
    alpha: float = 0.025
    min_alpha: float = 0.0001
    sample: float = 1e-3
    ns_exponent: float = 0.75
    seed: int = 1


@dataclass
class EmbeddingTable:
    words: list[str]
    vectors: np.ndarray
    counts: dict[str, int] = field(default_factory=dict)
    trained_with: dict = field(default_factory=dict)
    epoch_losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise InvalidInputError("vectors must be a (n_words, dim) matrix")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise InvalidInputError("duplicate words in embedding table")
        self.vectors.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def __getitem__(self, word) -> np.ndarray:
        return self.vectors[self.index[word]]

    def save(self, path: str | Path) -> None:
        """Write the text format: ``<count> <dim>`` then ``word v1 .. vdim``."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.words)} {self.dim}\n")
            for w, row in zip(self.words, self.vectors):
                fh.write(w + " " + " ".join(repr(float(v)) for v in row) + "\n")
        if self.counts or self.trained_with:
            meta = {"counts": self.counts, "trained_with": self.trained_with,
                    "epoch_losses": self.epoch_losses}
            Path(str(path) + ".meta.json").write_text(
                json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        """Read the text format.

        The ``<count> <dim>`` header is optional so that precomputed
        protein n-gram tables (ProtVec-style) load through the same path.
        Tab separators and quoted words are tolerated for the same reason.
        """
        words, rows = [], []
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise InvalidInputError(f"{path}: empty embedding file")
        start = 0
        head = lines[0].split()
        if len(head) == 2 and all(t.isdigit() for t in head):
            start = 1
        for lineno, line in enumerate(lines[start:], start=start + 1):
            parts = line.replace("\t", " ").split()
            word = parts[0].strip('"')
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
            words.append(word)
        dims = {len(r) for r in rows}
        if len(dims) != 1:
            raise InvalidInputError(f"{path}: rows have differing dimensions {sorted(dims)}")
        if start and int(head[1]) not in dims:
            raise InvalidInputError(f"{path}: header dim {head[1]} does not match rows")
        table = cls(words=words, vectors=np.array(rows, dtype=np.float64))
        meta = Path(str(path) + ".meta.json")
        if meta.exists():
            info = json.loads(meta.read_text(encoding="utf-8"))
            table.counts = info.get("counts", {})
            table.trained_with = info.get("trained_with", {})
            table.epoch_losses = info.get("epoch_losses", [])
        return table


@dataclass(frozen=True)
class LigandVector:
    values: np.ndarray
    n_words: int


def smilesvec(words: Sequence[str], table: EmbeddingTable) -> LigandVector:
    """Mean of the vectors of the in-vocabulary words.

    Out-of-vocabulary words are ignored; with nothing left the zero vector
    is returned. Words are accumulated in sorted order with their
    multiplicities, which makes the result independent of word order.
    """
    counts = Counter(w for w in words if w in table.index)
    n = sum(counts.values())
    total = np.zeros(table.dim)
    if n == 0:
        return LigandVector(total, 0)
    for w in sorted(counts):
        total += counts[w] * table[w]
    return LigandVector(total / n, n)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def train_skipgram(corpus: Iterable[Sequence[str]],
                   params: SkipGramParams = SkipGramParams()) -> EmbeddingTable:
    """Train skip-gram word vectors with negative sampling.

    For every (center, context) pair inside a randomly shrunk window, the
    logistic loss pushes the center's input vector towards the context's
    output vector and away from ``negative`` words drawn from the unigram
    distribution raised to ``ns_exponent``.
    """
    sentences = [list(s) for s in corpus]
    counts = Counter(w for s in sentences for w in s)
    vocab = sorted((w for w, c in counts.items() if c >= params.min_count),
                   key=lambda w: (-counts[w], w))
    if not vocab:
        raise EmptyVocabularyError(
            f"no word reaches min_count={params.min_count}")
    index = {w: i for i, w in enumerate(vocab)}
    freq = np.array([counts[w] for w in vocab], dtype=np.float64)
    encoded = [np.array([index[w] for w in s if w in index], dtype=np.int64)
               for s in sentences]
    encoded = [s for s in encoded if len(s) > 1]

    rng = np.random.default_rng(params.seed)
    dim = params.dim
    n_vocab = len(vocab)
    w_in = (rng.random((n_vocab, dim)) - 0.5) / dim
    w_out = np.zeros((n_vocab, dim))

    noise = freq ** params.ns_exponent
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    total = freq.sum()
    if params.sample > 0:
        thresh = params.sample * total
        keep_prob = np.minimum(1.0, (np.sqrt(freq / thresh) + 1.0) * thresh / freq)
    else:
        keep_prob = np.ones(n_vocab)

    n_tokens = sum(len(s) for s in encoded)
    total_steps = max(1, params.epochs * n_tokens)
    step = 0
    losses = []
    for epoch in range(params.epochs):
        loss_sum = 0.0
        n_pairs = 0
        for sent in encoded:
            alpha = params.alpha - (params.alpha - params.min_alpha) * step / total_steps
            alpha = max(alpha, params.min_alpha)
            step += len(sent)
            kept = sent[rng.random(len(sent)) < keep_prob[sent]]
            n = len(kept)
            if n < 2:
                continue
            shrink = rng.integers(0, params.window, size=n)
            for pos in range(n):
                win = params.window - shrink[pos]
                lo, hi = max(0, pos - win), min(n, pos + win + 1)
                ctx = np.concatenate([kept[lo:pos], kept[pos + 1:hi]])
                if len(ctx) == 0:
                    continue
                center = kept[pos]
                negs = np.searchsorted(noise_cdf, rng.random((len(ctx), params.negative)),
                                       side="right")
                targets = np.concatenate([ctx[:, None], negs], axis=1)
                labels = np.zeros(targets.shape)
                labels[:, 0] = 1.0
                live = np.ones(targets.shape)
                live[:, 1:] = negs != ctx[:, None]

                v = w_in[center].copy()
                u = w_out[targets]
                scores = u @ v
                prob = _sigmoid(scores)
                grad = (labels - prob) * live * alpha
                pos_p = np.clip(prob[:, 0], 1e-12, 1.0)
                neg_p = np.clip(1.0 - prob[:, 1:], 1e-12, 1.0)
                loss_sum += -np.log(pos_p).sum() - (np.log(neg_p) * live[:, 1:]).sum()
                n_pairs += len(ctx)

                w_in[center] += np.tensordot(grad, u, axes=([0, 1], [0, 1]))
                np.add.at(w_out, targets, grad[..., None] * v)
        losses.append(loss_sum / n_pairs if n_pairs else math.nan)
        logger.debug("epoch %d: loss %.6f", epoch + 1, losses[-1])

    if not np.all(np.isfinite(w_in)):
        raise FloatingPointError("skip-gram training diverged")
    return EmbeddingTable(words=vocab, vectors=w_in,
                          counts={w: counts[w] for w in vocab},
                          trained_with=asdict(params), epoch_losses=losses)
