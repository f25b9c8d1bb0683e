"""Perceptual credit: zero out codes that are rare in real images or poorly predicted."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .binio import Reader, Writer
from .errors import ShapeMismatchError, VocabularyMismatchError
from .likelihood import LogLikMap
from .tokenizer import CodeGrid

PRIOR_MAGIC = b"LEIPR1"
DEFAULT_LAMBDA = math.log(1e-9)


@dataclass(frozen=True)
class CodePrior:
    probs: np.ndarray
    source_count: int
    codebook_id: bytes | None
    alpha: float = 1.0

    @property
    def K(self) -> int:
        return len(self.probs)

    def save(self, path: str | Path) -> None:
        w = Writer(PRIOR_MAGIC)
        w.u32(self.K)
        w.f64(self.alpha)
        w.array(self.probs, "f8")
        w.u64(self.source_count)
        w.raw(self.codebook_id or bytes(8))
        Path(path).write_bytes(w.finish())

    @classmethod
    def load(cls, path: str | Path) -> "CodePrior":
        r = Reader(Path(path).read_bytes(), PRIOR_MAGIC, what=str(path))
        K = r.u32()
        alpha = r.f64()
        probs = r.array("f8", K)
        count = r.u64()
        cid = r.raw(8)
        r.done()
        return cls(probs, count, None if cid == bytes(8) else cid, alpha)


@dataclass(frozen=True)
class PerceptualConfig:
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not self.lam < 0:
            raise ValueError(f"lambda must be negative, got {self.lam}")


def parse_lambda(text: str) -> float:
    """``"-20.72"`` is a log threshold; a positive value such as ``"1e-9"`` is ``exp(lambda)``."""
    v = float(text)
    if v > 0:
        if v >= 1:
            raise ValueError(f"probability threshold must be in (0, 1), got {text}")
        return math.log(v)
    if v == 0:
        raise ValueError("lambda must be negative")
    return v


def estimate_prior(grids: Iterable[CodeGrid], K: int, alpha: float = 1.0) -> CodePrior:
    counts = np.zeros(K, dtype=np.int64)
    cid = None
    n_grids = 0
    for g in grids:
        if n_grids and g.codebook_id != cid:
            raise VocabularyMismatchError("prior grids come from different codebooks")
        cid = g.codebook_id
        g.check_vocab(K)
        counts += np.bincount(g.flat, minlength=K)
        n_grids += 1
    if n_grids == 0:
        raise ValueError("estimate_prior needs at least one grid")
    total = int(counts.sum())
    probs = (counts + alpha) / (total + alpha * K)
    return CodePrior(probs, total, cid, alpha)


def prior_gate(prior: CodePrior, grid: CodeGrid, cfg: PerceptualConfig) -> np.ndarray:
    """1.0 where ``ln prior[c_t] - lambda > 0`` (strictly), else 0.0."""
    return (np.log(prior.probs[grid.flat]) - cfg.lam > 0).astype(np.float64)


def apply_H(loglik: LogLikMap, prior: CodePrior, grid: CodeGrid,
            cfg: PerceptualConfig = PerceptualConfig()) -> np.ndarray:
    """Credit per position: ``1(ln prior - lambda > 0) * max(loglik - lambda, 0)``."""
    if loglik.m != grid.m:
        raise ShapeMismatchError(f"log-likelihood map has {loglik.m} positions, grid has {grid.m}")
    if grid.codebook_id is not None and prior.codebook_id is not None \
            and grid.codebook_id != prior.codebook_id:
        raise VocabularyMismatchError("prior and code grid use different codebooks")
    grid.check_vocab(prior.K)
    return prior_gate(prior, grid, cfg) * np.maximum(loglik.values - cfg.lam, 0.0)
