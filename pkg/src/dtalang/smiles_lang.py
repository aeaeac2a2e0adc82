"""Chemical-word extraction from SMILES strings.

Two segmentation schemes are provided: overlapping k-mers and a byte pair
encoding (BPE) vocabulary learned from a SMILES corpus. SMILES are handled
as opaque character strings; digits, brackets and bond symbols are ordinary
characters and are never pre-split.
"""

from __future__ import annotations

import heapq
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from dtalang.errors import InvalidInputError

logger = logging.getLogger(__name__)

MAX_WORD_LEN = 100
UNK_TOKEN = "<unk>"


def check_smiles(s: str) -> str:
    if not isinstance(s, str) or not s:
        raise InvalidInputError("SMILES string must be non-empty")
    if any(ch.isspace() for ch in s):
        raise InvalidInputError(f"SMILES string contains whitespace: {s!r}")
    return s


def tokenize_kmer(s: str, k: int = 8) -> list[str]:
    """Split ``s`` into overlapping substrings of length ``k``.

    Strings shorter than ``k`` come back as a single word so every ligand
    has at least one chemical word.
    """
    check_smiles(s)
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if len(s) < k:
        return [s]
    return [s[i:i + k] for i in range(len(s) - k + 1)]


def read_corpus(path: str | Path) -> Iterator[str]:
    """Yield SMILES from a one-per-line UTF-8 file, skipping blank lines."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield line


@dataclass
class BpeVocabulary:
    merges: list[tuple[str, str]]
    tokens: set[str]
    target_size: int
    character_coverage: float = 1.0
    alphabet: frozenset[str] = field(default_factory=frozenset)
    unk_token: str = UNK_TOKEN
    max_word_len: int = MAX_WORD_LEN

    def __post_init__(self):
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    @property
    def ranks(self) -> dict[tuple[str, str], int]:
        return self._ranks

    def save(self, path: str | Path) -> None:
        lines = [f"bpe {self.target_size} {self.character_coverage!r}",
                 "alphabet\t" + "".join(sorted(self.alphabet))]
        lines.extend(f"{left}\t{right}" for left, right in self.merges)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeVocabulary":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text:
            raise InvalidInputError(f"{path}: empty vocabulary file")
        header = text[0].split()
        if len(header) != 3 or header[0] != "bpe":
            raise InvalidInputError(f"{path}: bad header {text[0]!r}")
        target_size, coverage = int(header[1]), float(header[2])
        body = text[1:]
        alphabet: set[str] = set()
        if body and body[0].startswith("alphabet\t"):
            alphabet = set(body[0].split("\t", 1)[1])
            body = body[1:]
        merges = []
        for lineno, line in enumerate(body, start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise InvalidInputError(f"{path}:{lineno}: bad merge line {line!r}")
            merges.append((parts[0], parts[1]))
        if not alphabet:
            # legacy files without an alphabet line: recover what the merges imply
            for left, right in merges:
                for tok in (left, right):
                    if len(tok) == 1:
                        alphabet.add(tok)
        tokens = set(alphabet) | {left + right for left, right in merges}
        return cls(merges=merges, tokens=tokens, target_size=target_size,
                   character_coverage=coverage, alphabet=frozenset(alphabet))


def kept_characters(char_counts: Counter, coverage: float) -> set[str]:
    """Smallest set of most frequent characters covering ``coverage`` of the mass."""
    if not 0 < coverage <= 1:
        raise InvalidInputError(f"character coverage must be in (0, 1], got {coverage}")
    total = sum(char_counts.values())
    ordered = sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept: set[str] = set()
    running = 0
    for ch, n in ordered:
        if running >= coverage * total:
            break
        kept.add(ch)
        running += n
    return kept


def _symbols(s: str, alphabet, unk: str) -> list[str]:
    return [ch if ch in alphabet else unk for ch in s]


def _merge_seq(seq: tuple[str, ...], left: str, right: str, merged: str) -> tuple[str, ...]:
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i < n - 1 and seq[i] == left and seq[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return tuple(out)


def _pairs(seq):
    return zip(seq, seq[1:])


def train_bpe(corpus: Iterable[str], target_size: int = 20000,
              character_coverage: float = 0.99,
              max_word_len: int = MAX_WORD_LEN,
              unk_token: str = UNK_TOKEN,
              min_pair_count: int = 1) -> BpeVocabulary:
    """Learn an ordered BPE merge list from SMILES strings.

    Merging stops when the vocabulary reaches ``target_size``, when no
    adjacent pair with at least ``min_pair_count`` occurrences is left, or
    when every remaining pair would create a token longer than
    ``max_word_len``. Ties in pair frequency go to the
    lexicographically smallest (left, right) pair.

    Pair counts are maintained incrementally: only the words touched by a
    merge are re-counted.
    """
    strings = Counter(check_smiles(s) for s in corpus)
    if not strings:
        raise InvalidInputError("BPE corpus is empty")

    char_counts: Counter = Counter()
    for s, n in strings.items():
        for ch in s:
            char_counts[ch] += n
    alphabet = kept_characters(char_counts, character_coverage)
    dropped = set(char_counts) - alphabet
    if dropped:
        logger.info("coverage %.4f maps %d characters to %s", character_coverage,
                    len(dropped), unk_token)
    if target_size <= len(alphabet):
        raise InvalidInputError(
            f"target_size {target_size} must exceed the {len(alphabet)} kept characters")

    words = [tuple(_symbols(s, alphabet, unk_token)) for s in strings]
    freqs = list(strings.values())

    pair_counts: dict[tuple[str, str], int] = defaultdict(int)
    where: dict[tuple[str, str], set[int]] = defaultdict(set)

    def add_word(idx, sign):
        for pair in _pairs(words[idx]):
            if unk_token in pair:
                continue
            pair_counts[pair] += sign * freqs[idx]
            if sign > 0:
                where[pair].add(idx)

    for idx in range(len(words)):
        add_word(idx, +1)

    heap = [(-c, pair) for pair, c in pair_counts.items()]
    heapq.heapify(heap)

    tokens = set(alphabet)
    merges: list[tuple[str, str]] = []
    while len(tokens) < target_size and heap:
        neg, pair = heapq.heappop(heap)
        count = pair_counts.get(pair, 0)
        if count != -neg:
            # stale entry; the live count has its own heap entry
            continue
        if count < min_pair_count:
            break
        left, right = pair
        merged = left + right
        if len(merged) > max_word_len:
            continue
        merges.append(pair)
        tokens.add(merged)

        changed: set[tuple[str, str]] = set()
        for idx in sorted(where.pop(pair, ())):
            changed.update(_pairs(words[idx]))
            add_word(idx, -1)
            words[idx] = _merge_seq(words[idx], left, right, merged)
            changed.update(_pairs(words[idx]))
            add_word(idx, +1)
        for p in changed:
            c = pair_counts.get(p, 0)
            if c > 0 and unk_token not in p:
                heapq.heappush(heap, (-c, p))
            elif c <= 0:
                pair_counts.pop(p, None)
                where.pop(p, None)

    return BpeVocabulary(merges=merges, tokens=tokens, target_size=target_size,
                         character_coverage=character_coverage,
                         alphabet=frozenset(alphabet), unk_token=unk_token,
                         max_word_len=max_word_len)


def tokenize_bpe(s: str, vocab: BpeVocabulary) -> list[str]:
    """Segment ``s`` by replaying the vocabulary's merges in learned order."""
    check_smiles(s)
    alphabet = vocab.alphabet or frozenset(s)
    seq = _symbols(s, alphabet, vocab.unk_token)
    ranks = vocab.ranks
    while len(seq) > 1:
        best = None
        best_rank = None
        for pair in _pairs(seq):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best, best_rank = pair, r
        if best is None:
            break
        seq = list(_merge_seq(tuple(seq), best[0], best[1], best[0] + best[1]))
    return seq
