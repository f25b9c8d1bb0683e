"""Per-code conditional log-likelihoods of a code grid given a caption.

A backend supplies ``P(c_t | c_<t, caption)``.  ``score_teacher_forced`` asks the
backend for every position of a known sequence at once; ``score_autoregressive_oracle``
walks the sequence one prefix at a time and is the slow reference for it.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .binio import Reader, Writer, content_hash
from .errors import DataError, ShapeMismatchError, VocabularyMismatchError
from .tokenizer import CodeGrid

LOG_FLOOR = math.log(1e-300)
COUNT_MODEL_MAGIC = b"LEICM1"


@dataclass(frozen=True)
class Caption:
    raw: str
    tokens: tuple[str, ...]

    @classmethod
    def from_text(cls, raw: str) -> "Caption":
        tokens = tuple(raw.lower().split())
        if not tokens:
            raise DataError("caption is empty after tokenization")
        return cls(raw, tokens)

    @property
    def bag(self) -> tuple[str, ...]:
        """Order-insensitive caption key (sorted unique tokens)."""
        return tuple(sorted(set(self.tokens)))


@dataclass(frozen=True)
class LogLikMap:
    values: np.ndarray
    codebook_id: bytes | None

    @property
    def m(self) -> int:
        return len(self.values)


class EstimatorBackend(Protocol):
    vocab_size: int
    codebook_id: bytes | None

    def next_distribution(self, cap: Caption, prefix: Sequence[int]) -> np.ndarray:
        """Probabilities over all ``vocab_size`` codes for the code after ``prefix``."""

    def log_probs(self, cap: Caption, codes: np.ndarray) -> np.ndarray:
        """``ln P(codes[t] | codes[:t], cap)`` for every ``t``, floored at ``LOG_FLOOR``."""


def safe_log(p: np.ndarray | float) -> np.ndarray:
    return np.log(np.maximum(p, 1e-300))


class UniformBackend:
    """Every code equally likely in every state."""

    def __init__(self, K: int, codebook_id: bytes | None = None):
        if K < 1:
            raise ValueError("K must be >= 1")
        self.vocab_size = K
        self.codebook_id = codebook_id

    def next_distribution(self, cap: Caption, prefix: Sequence[int]) -> np.ndarray:
        return np.full(self.vocab_size, 1.0 / self.vocab_size)

    def log_probs(self, cap: Caption, codes: np.ndarray) -> np.ndarray:
        return np.full(len(codes), safe_log(1.0 / self.vocab_size))


class CountModel:
    """Additive-smoothed conditional frequency model over codes.

    The context of position ``t`` is ``(t, previous code, caption bag)``; with
    ``positional=False`` the position is dropped.  Position 0 uses previous
    code ``-1``.  Probabilities are ``(n(ctx, c) + alpha) / (n(ctx) + alpha*K)``;
    a context never seen in fitting with ``alpha == 0`` falls back to uniform.
    """

    def __init__(self, K: int, alpha: float = 0.1, *, positional: bool = True,
                 codebook_id: bytes | None = None):
        if K < 1 or alpha < 0:
            raise ValueError("need K >= 1 and alpha >= 0")
        self.vocab_size = K
        self.alpha = float(alpha)
        self.positional = positional
        self.codebook_id = codebook_id
        self._bags: dict[tuple[str, ...], int] = {}
        self._table: dict[tuple[int, int, int], tuple[int, dict[int, int]]] = {}

    @classmethod
    def fit(cls, corpus: Iterable[tuple[Caption, CodeGrid]], K: int, alpha: float = 0.1, *,
            positional: bool = True, codebook_id: bytes | None = None) -> "CountModel":
        model = cls(K, alpha, positional=positional, codebook_id=codebook_id)
        raw: dict[tuple[int, int, int], dict[int, int]] = defaultdict(lambda: defaultdict(int))
        for cap, grid in corpus:
            if codebook_id is not None and grid.codebook_id != codebook_id:
                raise VocabularyMismatchError("corpus grid from a different codebook")
            grid.check_vocab(K)
            bag = model._bags.setdefault(cap.bag, len(model._bags))
            seq = grid.flat.tolist()
            prev = -1
            for t, c in enumerate(seq):
                raw[(t if positional else -1, prev, bag)][c] += 1
                prev = c
        model._table = {ctx: (sum(cnt.values()), dict(cnt)) for ctx, cnt in raw.items()}
        return model

    def _ctx(self, cap: Caption, t: int, prev: int):
        bag = self._bags.get(cap.bag)
        if bag is None:
            return None
        return self._table.get((t if self.positional else -1, prev, bag))

    def _denominator(self, total: int) -> float:
        return float(total) + self.alpha * self.vocab_size

    def next_distribution(self, cap: Caption, prefix: Sequence[int]) -> np.ndarray:
        K = self.vocab_size
        prev = int(prefix[-1]) if len(prefix) else -1
        entry = self._ctx(cap, len(prefix), prev)
        total = 0 if entry is None else entry[0]
        if total + self.alpha * K == 0:
            return np.full(K, 1.0 / K)
        counts = np.full(K, self.alpha)
        if entry is not None:
            for c, n in entry[1].items():
                counts[c] = float(n) + self.alpha
        return counts / self._denominator(total)

    def log_probs(self, cap: Caption, codes: np.ndarray) -> np.ndarray:
        K = self.vocab_size
        codes = np.asarray(codes, dtype=np.int64)
        num = np.empty(len(codes))
        den = np.empty(len(codes))
        prev = -1
        for t, c in enumerate(codes.tolist()):
            entry = self._ctx(cap, t, prev)
            total = 0 if entry is None else entry[0]
            if total + self.alpha * K == 0:
                num[t], den[t] = 1.0, float(K)
            else:
                n = 0 if entry is None else entry[1].get(c, 0)
                num[t] = float(n) + self.alpha
                den[t] = self._denominator(total)
            prev = c
        return safe_log(num / den)

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        w = Writer(COUNT_MODEL_MAGIC)
        w.u32(self.vocab_size)
        w.f64(self.alpha)
        w.u8(1 if self.positional else 0)
        w.raw(self.codebook_id or bytes(8))
        words = sorted({tok for bag in self._bags for tok in bag})
        word_id = {s: i for i, s in enumerate(words)}
        w.u32(len(words))
        for s in words:
            w.string(s)
        bags = sorted(self._bags, key=self._bags.__getitem__)
        w.u32(len(bags))
        for bag in bags:
            w.u32(len(bag))
            w.array(np.array([word_id[s] for s in bag], dtype=np.uint32), "u4")
        rows = sorted((ctx[0], ctx[1], ctx[2], c, n)
                      for ctx, (_, cnt) in self._table.items() for c, n in cnt.items())
        arr = np.array(rows, dtype=np.int64).reshape(-1, 5)
        w.u64(len(arr))
        w.array(arr[:, 0], "i4")
        w.array(arr[:, 1], "i4")
        w.array(arr[:, 2], "u4")
        w.array(arr[:, 3], "u4")
        w.array(arr[:, 4], "u4")
        return w.finish()

    @classmethod
    def load(cls, path: str | Path) -> "CountModel":
        r = Reader(Path(path).read_bytes(), COUNT_MODEL_MAGIC, what=str(path))
        K = r.u32()
        alpha = r.f64()
        positional = bool(r.u8())
        cid = r.raw(8)
        model = cls(K, alpha, positional=positional, codebook_id=None if cid == bytes(8) else cid)
        words = [r.string() for _ in range(r.u32())]
        for i in range(r.u32()):
            n = r.u32()
            model._bags[tuple(words[j] for j in r.array("u4", n))] = i
        n = r.u64()
        cols = [r.array(dt, n) for dt in ("i4", "i4", "u4", "u4", "u4")]
        r.done()
        table: dict[tuple[int, int, int], dict[int, int]] = defaultdict(dict)
        for pos, prev, bag, c, cnt in zip(*(col.tolist() for col in cols)):
            table[(pos, prev, bag)][c] = cnt
        model._table = {ctx: (sum(cnt.values()), cnt) for ctx, cnt in table.items()}
        return model

    @property
    def id(self) -> bytes:
        return content_hash(self.to_bytes())


def _check(backend: EstimatorBackend, grid: CodeGrid) -> None:
    if backend.codebook_id is not None and grid.codebook_id != backend.codebook_id:
        raise VocabularyMismatchError("code grid and estimator use different codebooks")
    grid.check_vocab(backend.vocab_size)


def score_teacher_forced(backend: EstimatorBackend, cap: Caption, grid: CodeGrid) -> LogLikMap:
    _check(backend, grid)
    values = np.asarray(backend.log_probs(cap, grid.flat), dtype=np.float64)
    if values.shape != (grid.m,):
        raise ShapeMismatchError(f"backend returned {values.shape}, expected ({grid.m},)")
    return LogLikMap(values, grid.codebook_id)


def score_autoregressive_oracle(backend: EstimatorBackend, cap: Caption, grid: CodeGrid) -> LogLikMap:
    _check(backend, grid)
    seq = grid.flat
    values = np.empty(grid.m)
    for t in range(grid.m):
        dist = backend.next_distribution(cap, seq[:t])
        values[t] = safe_log(dist[seq[t]])
    return LogLikMap(values, grid.codebook_id)


def total_log_likelihood(llm: LogLikMap) -> float:
    return float(np.sum(llm.values))
