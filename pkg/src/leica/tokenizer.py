"""Image tokenization: patch features, codebook quantization, codebook fitting.

An image is cut into non-overlapping ``p x p`` blocks, each block is mapped
linearly to a ``d``-dimensional feature, and each feature is replaced by the
index of its nearest codebook row.  Code grids are flattened row-major, so
position ``t`` is ``row * w + col``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .binio import Reader, Writer, content_hash
from .errors import ShapeMismatchError, VocabularyMismatchError
from .imageio import check_image

CODEBOOK_MAGIC = b"LEICB1"


@dataclass(frozen=True)
class PatchEncoder:
    """Deterministic linear map from a flattened ``p*p*3`` block to ``d`` features."""

    patch: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != self.patch * self.patch * 3:
            raise ShapeMismatchError(
                f"encoder weights must be ({self.patch * self.patch * 3}, d), got {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def random_orthogonal(cls, patch: int = 16, dim: int = 32, seed: int = 0) -> "PatchEncoder":
        n = patch * patch * 3
        if dim > n:
            raise ValueError(f"dim {dim} exceeds block size {n}")
        g = np.random.default_rng(seed).standard_normal((n, dim))
        q, r = np.linalg.qr(g)
        # sign fix makes the factorization unique
        q = q * np.sign(np.diag(r))
        return cls(patch, q)


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """Return blocks as an ``(h, w, p*p*3)`` array; rejects non-divisible sizes."""
    img = check_image(img, min_side=patch)
    H, W, _ = img.shape
    if H % patch or W % patch:
        raise ShapeMismatchError(f"image {H}x{W} not divisible by patch size {patch}")
    h, w = H // patch, W // patch
    blocks = img.reshape(h, patch, w, patch, 3).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(h, w, patch * patch * 3)


def unpatchify(blocks: np.ndarray, patch: int) -> np.ndarray:
    h, w, _ = blocks.shape
    return blocks.reshape(h, w, patch, patch, 3).transpose(0, 2, 1, 3, 4).reshape(h * patch, w * patch, 3)


def encode(img: np.ndarray, enc: PatchEncoder) -> np.ndarray:
    """Feature grid of shape ``(H/p, W/p, d)``."""
    blocks = patchify(img, enc.patch)
    h, w, n = blocks.shape
    return (blocks.reshape(h * w, n) @ enc.weights).reshape(h, w, enc.dim)


class Codebook:
    """``K x d`` code vectors.  Values are held at float32 precision so that a
    codebook survives a save/load round trip bit-for-bit."""

    def __init__(self, vectors: np.ndarray):
        v = np.asarray(vectors, dtype=np.float32).astype(np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ShapeMismatchError(f"codebook must be a non-empty K x d matrix, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("codebook vectors must be finite")
        if len(np.unique(v, axis=0)) != len(v):
            raise ValueError("codebook has duplicate rows")
        v.setflags(write=False)
        self.vectors = v
        self._sq = np.einsum("kd,kd->k", v, v)
        self._body = _codebook_body(v)
        self.id = content_hash(self._body)

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __repr__(self) -> str:
        return f"Codebook(K={self.K}, dim={self.dim}, id={self.id.hex()})"

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self._body + self.id)

    @classmethod
    def load(cls, path: str | Path) -> "Codebook":
        r = Reader(Path(path).read_bytes(), CODEBOOK_MAGIC, what=str(path))
        K, d = r.u32(), r.u32()
        vec = r.array("f4", K * d).reshape(K, d)
        r.done()
        return cls(vec)


def _codebook_body(v: np.ndarray) -> bytes:
    w = Writer(CODEBOOK_MAGIC)
    w.u32(v.shape[0])
    w.u32(v.shape[1])
    w.array(v, "f4")
    return w.finish(with_hash=False)


@dataclass(frozen=True)
class CodeGrid:
    codes: np.ndarray
    codebook_id: bytes

    def __post_init__(self):
        c = np.array(self.codes, dtype=np.int64)
        if c.ndim != 2 or c.size == 0:
            raise ShapeMismatchError(f"code grid must be a non-empty 2-D array, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "codes", c)

    @property
    def h(self) -> int:
        return self.codes.shape[0]

    @property
    def w(self) -> int:
        return self.codes.shape[1]

    @property
    def m(self) -> int:
        return self.codes.size

    @property
    def flat(self) -> np.ndarray:
        """Row-major code sequence (position ``t = row * w + col``)."""
        return self.codes.reshape(-1)

    def check_vocab(self, K: int) -> None:
        if self.codes.min() < 0 or self.codes.max() >= K:
            raise VocabularyMismatchError(f"code index outside [0, {K})")


def nearest_codes(x: np.ndarray, cb: Codebook, chunk: int = 4096) -> np.ndarray:
    """Index of the nearest code (squared Euclidean, ties to lowest index) for each row of ``x``.

    Candidates are screened with the expanded form ``|x|^2 - 2 x.c + |c|^2`` and
    every candidate within rounding distance of the screened minimum is
    re-scored exactly as ``sum((x - c)^2)``, so results match an exhaustive
    exact scan.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(len(x), dtype=np.int64)
    C = cb.vectors
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk]
        xx = np.einsum("nd,nd->n", xs, xs)
        approx = xx[:, None] - 2.0 * (xs @ C.T) + cb._sq[None, :]
        lo = approx.min(axis=1)
        tol = 1e-9 * (xx + cb._sq.max()) + 1e-300
        cand = approx <= (lo + tol)[:, None]
        idx = np.argmax(cand, axis=1)
        multi = np.flatnonzero(cand.sum(axis=1) > 1)
        for i in multi:
            ks = np.flatnonzero(cand[i])
            d = ((C[ks] - xs[i]) ** 2).sum(axis=1)
            idx[i] = ks[int(np.argmin(d))]
        out[s:s + chunk] = idx
    return out


def quantize(features: np.ndarray, cb: Codebook) -> CodeGrid:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3 or f.shape[2] != cb.dim:
        raise ShapeMismatchError(f"features {f.shape} do not match codebook dim {cb.dim}")
    h, w, d = f.shape
    return CodeGrid(nearest_codes(f.reshape(h * w, d), cb).reshape(h, w), cb.id)


@dataclass(frozen=True)
class Tokenizer:
    """Encoder plus codebook; the image-to-codes half of the estimator."""

    encoder: PatchEncoder
    codebook: Codebook

    def __post_init__(self):
        if self.encoder.dim != self.codebook.dim:
            raise ShapeMismatchError(
                f"encoder dim {self.encoder.dim} != codebook dim {self.codebook.dim}")

    def tokenize(self, img: np.ndarray) -> CodeGrid:
        return quantize(encode(img, self.encoder), self.codebook)


class MeanPatchDecoder:
    """Renders each code as the mean pixel block of the training blocks assigned to it.

    Codes that never received a block render as the overall mean block.
    """

    def __init__(self, patch: int, means: np.ndarray, codebook_id: bytes):
        self.patch = patch
        self.means = np.asarray(means, dtype=np.float64)
        self.codebook_id = codebook_id

    @classmethod
    def fit(cls, images: Iterable[np.ndarray], enc: PatchEncoder, cb: Codebook) -> "MeanPatchDecoder":
        n = enc.patch * enc.patch * 3
        sums = np.zeros((cb.K, n))
        counts = np.zeros(cb.K)
        for img in images:
            blocks = patchify(img, enc.patch).reshape(-1, n)
            codes = nearest_codes(blocks @ enc.weights, cb)
            np.add.at(sums, codes, blocks)
            counts += np.bincount(codes, minlength=cb.K)
        if counts.sum() == 0:
            raise ValueError("decoder needs at least one image")
        fallback = sums.sum(axis=0) / counts.sum()
        means = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], fallback)
        return cls(enc.patch, means, cb.id)

    def decode(self, grid: CodeGrid) -> np.ndarray:
        if grid.codebook_id != self.codebook_id:
            raise VocabularyMismatchError("code grid and decoder use different codebooks")
        blocks = self.means[grid.codes]
        return np.clip(unpatchify(blocks, self.patch), 0.0, 1.0)


def roundtrip_distort(img: np.ndarray, enc: PatchEncoder, cb: Codebook,
                      dec: MeanPatchDecoder) -> np.ndarray:
    """Re-render ``img`` from its quantized codes (model-based distortion)."""
    return dec.decode(quantize(encode(img, enc), cb))


def _kmeanspp(x: np.ndarray, wts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    first = rng.choice(n, p=wts / wts.sum())
    centers = [first]
    d2 = ((x - x[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        p = wts * d2
        tot = p.sum()
        if tot <= 0:
            break
        nxt = rng.choice(n, p=p / tot)
        centers.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[np.array(centers)].copy()


def kmeans(x: np.ndarray, k: int, *, weights: np.ndarray | None = None, seed: int = 0,
           iters: int = 20, chunk: int = 8192) -> np.ndarray:
    """Weighted Lloyd k-means with k-means++ seeding.

    Empty clusters are reseeded, in index order, from the point farthest from
    its assigned centroid.  Requires at least ``k`` distinct points.
    """
    x = np.asarray(x, dtype=np.float64)
    wts = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(np.unique(x, axis=0)) < k:
        raise ValueError(f"k-means needs at least {k} distinct points")
    rng = np.random.default_rng(seed)
    c = _kmeanspp(x, wts, k, rng)
    while len(c) < k:  # degenerate seeding; top up with unused points
        unused = np.flatnonzero(~(x[:, None, :] == c[None]).all(-1).any(-1))
        c = np.vstack([c, x[unused[:k - len(c)]]])
    assign = np.zeros(len(x), dtype=np.int64)
    dist = np.zeros(len(x))
    for _ in range(iters):
        cc = np.einsum("kd,kd->k", c, c)
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk]
            d = np.einsum("nd,nd->n", xs, xs)[:, None] - 2.0 * xs @ c.T + cc[None]
            a = np.argmin(d, axis=1)
            assign[s:s + chunk] = a
            dist[s:s + chunk] = np.maximum(d[np.arange(len(a)), a], 0.0)
        mass = np.bincount(assign, weights=wts, minlength=k)
        sums = np.zeros_like(c)
        np.add.at(sums, assign, x * wts[:, None])
        nonempty = mass > 0
        c[nonempty] = sums[nonempty] / mass[nonempty, None]
        taken = dist.copy()
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(taken))
            c[j] = x[far]
            taken[far] = -1.0
    return c


def fit_codebook(features: np.ndarray, K: int, *, weights: np.ndarray | None = None,
                 seed: int = 0, iters: int = 20) -> Codebook:
    """Fit a codebook by k-means; float32 rounding collisions are nudged apart."""
    c = kmeans(features, K, weights=weights, seed=seed, iters=iters).astype(np.float32)
    _, first = np.unique(c, axis=0, return_index=True)
    for j in sorted(set(range(K)) - set(first.tolist())):
        while (c[:j] == c[j]).all(axis=1).any():
            c[j, 0] = np.nextafter(c[j, 0], np.float32(np.inf))
    return Codebook(c)
