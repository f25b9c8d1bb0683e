"""A fully specified synthetic text-image world with oracle models.

Scenes are one flat-colored shape (square, circle or upright triangle) in one
quadrant of a muted background.  Captions follow a fixed template, e.g.
``"a red square in the top left on gray"``.

The oracle matcher is a one-layer attention image tower whose weights are
written down rather than trained:

* patch embedding: palette-membership fractions (8 shape colors, 4
  backgrounds), a quadrant position one-hot, a constant, and three edge
  statistics of the foreground mask (edge mass and its 4th/6th circular
  harmonics, which separate square / circle / triangle outlines);
* last self-attention: the class token queries with two heads, one keyed on
  foreground mass and one on edge mass; values are copies of the patch
  embedding;
* class-token tail: renormalizes palette and quadrant mass and turns the
  harmonic ratios into a sharp shape posterior;
* final projection into a 20-d joint space shared with a bag-of-words text
  tower.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from .binio import Reader, Writer
from .errors import ShapeMismatchError
from .imageio import check_image
from .likelihood import Caption, CountModel
from .metaeval import cell_seed
from .perceptual import CodePrior, estimate_prior
from .semantic import TowerOutput
from .tokenizer import Codebook, CodeGrid, MeanPatchDecoder, PatchEncoder, Tokenizer, fit_codebook

SHAPES = ("square", "circle", "triangle")
COLORS = {
    "red": (230, 25, 25), "green": (30, 180, 40), "blue": (30, 60, 220), "yellow": (240, 220, 30),
    "magenta": (220, 30, 200), "cyan": (30, 210, 220), "orange": (250, 140, 0), "purple": (120, 30, 160),
}
BACKGROUNDS = {"gray": (128, 128, 128), "beige": (205, 190, 155), "slate": (80, 90, 110), "olive": (120, 120, 70)}
QUADRANTS = {"tl": ("top", "left"), "tr": ("top", "right"), "bl": ("bottom", "left"), "br": ("bottom", "right")}
FILLER_WORDS = ("dog", "tree", "car", "house", "cloud", "boat", "cat", "chair", "apple", "river")

DEFAULT_SIZE = 256
DEFAULT_PATCH = 16
DEFAULT_DIM = 32
DEFAULT_K = 512
MATCHER_PATCH = 32
FIT_SEEDS = (0, 1, 2, 3)


def keyword_lexicon() -> list[str]:
    """Semantically loaded caption words: colors, shapes and position words."""
    pos = sorted({w for pair in QUADRANTS.values() for w in pair})
    return list(COLORS) + list(BACKGROUNDS) + list(SHAPES) + pos


def replacement_vocabulary() -> list[str]:
    return keyword_lexicon() + list(FILLER_WORDS)


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    quadrant: str
    background: str
    seed: int = 0

    def __post_init__(self):
        if (self.shape not in SHAPES or self.color not in COLORS or self.quadrant not in QUADRANTS
                or self.background not in BACKGROUNDS):
            raise ValueError(f"invalid scene {self}")

    @property
    def caption(self) -> str:
        v, h = QUADRANTS[self.quadrant]
        return f"a {self.color} {self.shape} in the {v} {h} on {self.background}"

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (SHAPES.index(self.shape), list(COLORS).index(self.color),
                list(QUADRANTS).index(self.quadrant), list(BACKGROUNDS).index(self.background))


def all_scenes(seeds: Iterable[int] = (0,)) -> list[SceneSpec]:
    return [SceneSpec(s, c, q, b, seed)
            for seed in seeds
            for s, c, q, b in itertools.product(SHAPES, COLORS, QUADRANTS, BACKGROUNDS)]


def random_scenes(n: int, seed: int, first_jitter: int = 1000) -> list[SceneSpec]:
    """``n`` scenes with uniform attributes and fresh jitter seeds."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        out.append(SceneSpec(SHAPES[rng.integers(3)], list(COLORS)[rng.integers(8)],
                             list(QUADRANTS)[rng.integers(4)], list(BACKGROUNDS)[rng.integers(4)],
                             first_jitter + i))
    return out


def shape_mask(spec: SceneSpec, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Boolean foreground mask; the shape lies strictly inside its quadrant."""
    rng = np.random.default_rng(cell_seed(spec.seed, *spec.key))
    half = size // 2
    r = int(rng.integers(int(0.22 * half), int(0.38 * half) + 1))
    margin = r + max(2, size // 64)
    cy = int(rng.integers(margin, half - margin + 1))
    cx = int(rng.integers(margin, half - margin + 1))
    if spec.quadrant in ("bl", "br"):
        cy += half
    if spec.quadrant in ("tr", "br"):
        cx += half
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if spec.shape == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if spec.shape == "circle":
        return dy * dy + dx * dx <= r * r
    # upright isosceles: apex (cy - r, cx), base row cy + r from cx - r to cx + r
    return (dy <= r) & (dy >= -r) & (2 * np.abs(dx) <= dy + r)


def render(spec: SceneSpec, size: int = DEFAULT_SIZE) -> tuple[np.ndarray, np.ndarray]:
    mask = shape_mask(spec, size)
    img = np.empty((size, size, 3))
    img[:] = np.array(BACKGROUNDS[spec.background]) / 255.0
    img[mask] = np.array(COLORS[spec.color]) / 255.0
    return img, mask


def generate(spec: SceneSpec, size: int = DEFAULT_SIZE) -> tuple[Caption, np.ndarray]:
    return Caption.from_text(spec.caption), render(spec, size)[0]


# -- oracle matcher -----------------------------------------------------------

PALETTE = np.array(list(COLORS.values()) + list(BACKGROUNDS.values()), dtype=np.float64) / 255.0
N_FG = len(COLORS)
E = 20   # patch embedding: palette 0:12, quadrant 12:16, const 16, edges 17:20
D = 20   # joint: fg colors 0:8, shapes 8:11, quadrants 11:15, backgrounds 15:19, const 19
MATCHER_MAGIC = b"LEIMM1"


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _default_weights() -> dict:
    cls0 = np.zeros(E)
    cls0[16] = 1.0
    wq = np.zeros((2, E))
    wq[0, 16] = 8.0   # head 0 scale on foreground mass
    wq[1, 16] = 6.0   # head 1 scale on edge mass
    wk = np.zeros((2, E))
    wk[0, :N_FG] = 1.0
    wk[1, 17] = 1.0
    wv = np.vstack([np.eye(E), np.eye(E)])          # (2E, E): both heads copy the embedding
    wo = np.zeros((E, 2 * E))
    wo[:17, :17] = np.eye(17)                        # head 0 carries palette, quadrant, const
    wo[17:, E + 17:] = np.eye(3)                     # head 1 carries edge statistics
    wp = np.zeros((D, E))
    wp[np.arange(N_FG), np.arange(N_FG)] = 1.0
    wp[15 + np.arange(4), N_FG + np.arange(4)] = 0.5
    wp[11 + np.arange(4), 12 + np.arange(4)] = 0.5
    wp[19, 16] = 0.2
    # shape rows (square, circle, triangle) from (edge mass, c4 mass, c6 mass)
    wp[8:11, 17:20] = 0.5 * np.array([[0, 1, 0], [1, 0, 0], [0, 0, -1]])
    text = {}
    for i, w in enumerate(COLORS):
        text[w] = np.eye(D)[i]
    for i, w in enumerate(SHAPES):
        text[w] = np.eye(D)[8 + i]
    for i, w in enumerate(BACKGROUNDS):
        text[w] = 0.3 * np.eye(D)[15 + i]
    for word in ("top", "bottom", "left", "right"):
        v = np.zeros(D)
        for qi, pair in enumerate(QUADRANTS.values()):
            if word in pair:
                v[11 + qi] = 0.25
        text[word] = v
    text_bias = np.zeros(D)
    text_bias[19] = 0.2
    return dict(cls0=cls0, wq=wq, wk=wk, wv=wv, wo=wo, wp=wp, text=text, text_bias=text_bias)


class OracleMatcher:
    """Hand-built contrastive matcher for the synthetic world (see module docstring)."""

    def __init__(self, patch_size: int = MATCHER_PATCH, palette: np.ndarray = PALETTE,
                 shape_sharpness: float = 10.0, **weights):
        w = _default_weights()
        w.update(weights)
        self.patch_size = int(patch_size)
        self.palette = _f32(palette)
        self.shape_sharpness = float(shape_sharpness)
        self.cls0 = _f32(w["cls0"])
        self.wq, self.wk, self.wv, self.wo, self.wp = (_f32(w[k]) for k in ("wq", "wk", "wv", "wo", "wp"))
        self.text = {k: _f32(v) for k, v in sorted(w["text"].items())}
        self.text_bias = _f32(w["text_bias"])
        self.heads = self.wq.shape[0]
        self.projection = self.wp @ self.wo

    # text tower
    def text_embedding(self, cap: Caption) -> np.ndarray:
        v = self.text_bias.copy()
        for tok in cap.tokens:
            if tok in self.text:
                v = v + self.text[tok]
        return v

    # image tower
    def patch_embeddings(self, img: np.ndarray) -> tuple[np.ndarray, int]:
        img = check_image(img, min_side=self.patch_size)
        p = self.patch_size
        H, W, _ = img.shape
        if H % p or W % p:
            raise ShapeMismatchError(f"image {H}x{W} not divisible by matcher patch {p}")
        hs, ws = H // p, W // p
        npal = len(self.palette)
        # |x|^2 is constant per pixel, so nearest palette entry = argmin(|c|^2 - 2 x.c)
        d2 = (self.palette ** 2).sum(axis=1)[None] - 2.0 * img.reshape(-1, 3) @ self.palette.T
        label = np.argmin(d2, axis=1).reshape(H, W)
        patch_id = (np.arange(H)[:, None] // p) * ws + np.arange(W)[None, :] // p
        pal = np.bincount((patch_id * npal + label).ravel(), minlength=hs * ws * npal)
        pal = pal.reshape(hs * ws, npal) / float(p * p)

        fg = (label < N_FG).astype(np.float64)
        gy = ndimage.sobel(fg, axis=0, mode="nearest")
        gx = ndimage.sobel(fg, axis=1, mode="nearest")
        on = np.flatnonzero((gx != 0) | (gy != 0))     # edges are sparse; skip flat pixels
        gx, gy = gx.ravel()[on], gy.ravel()[on]
        mag = np.hypot(gx, gy)
        theta = np.arctan2(gy, gx)
        pid = patch_id.ravel()[on]
        edge = np.stack([np.bincount(pid, weights=v, minlength=hs * ws)
                         for v in (mag, mag * np.cos(4 * theta), mag * np.cos(6 * theta))], axis=1)
        edge /= 8.0 * p

        rows, cols = np.divmod(np.arange(hs * ws), ws)
        quad = 2 * (rows >= hs / 2) + (cols >= ws / 2)
        x = np.zeros((hs * ws, E))
        x[:, :12] = pal
        x[np.arange(hs * ws), 12 + quad] = 1.0
        x[:, 16] = 1.0
        x[:, 17:] = edge
        if hs != ws:
            raise ShapeMismatchError("matcher expects square images")
        return x, hs

    def _tail(self, c: np.ndarray) -> np.ndarray:
        g = np.zeros(E)
        pal = c[:12]
        g[:12] = pal / pal.sum() if pal.sum() > 0 else pal
        quad = c[12:16]
        g[12:16] = quad / quad.sum() if quad.sum() > 0 else quad
        g[16] = 1.0
        mass, c4, c6 = c[17:20]
        if mass > 1e-12:
            r4, r6 = c4 / mass, c6 / mass
            scores = np.array([r4, 1.0 - abs(r4) - abs(r6), -r6])
            e = np.exp(self.shape_sharpness * (scores - scores.max()))
            post = e / e.sum()
        else:
            post = np.full(3, 1.0 / 3)
        g[17:20] = np.linalg.solve(self.wp[8:11, 17:20], post)
        return g

    def image_pass(self, img: np.ndarray) -> TowerOutput:
        x, s = self.patch_embeddings(img)
        tokens = np.vstack([self.cls0, x])               # class token first
        values = tokens @ self.wv.T                      # (1 + s*s, heads * E)
        q = self.wq @ self.cls0                          # one query per head (key dim 1)
        k = tokens @ self.wk.T                           # (1 + s*s, heads)
        dh = values.shape[1] // self.heads
        heads_out = []
        for h in range(self.heads):
            a = q[h] * k[:, h]
            a = np.exp(a - a.max())
            a /= a.sum()
            heads_out.append(a @ values[:, h * dh:(h + 1) * dh])
        cls = self.cls0 + self.wo @ np.concatenate(heads_out)
        glob = self.wp @ self._tail(cls)
        return TowerOutput(values[1:], glob, s)

    # persistence
    def save(self, path: str | Path) -> None:
        w = Writer(MATCHER_MAGIC)
        w.u32(self.patch_size)
        w.u32(E)
        w.u32(D)
        w.u32(self.heads)
        w.u32(len(self.palette))
        w.f64(self.shape_sharpness)
        for a in (self.palette, self.cls0, self.wq, self.wk, self.wv, self.wo, self.wp, self.text_bias):
            w.array(a, "f4")
        w.u32(len(self.text))
        for word, vec in self.text.items():
            w.string(word)
            w.array(vec, "f4")
        Path(path).write_bytes(w.finish())

    @classmethod
    def load(cls, path: str | Path) -> "OracleMatcher":
        r = Reader(Path(path).read_bytes(), MATCHER_MAGIC, what=str(path))
        patch, e, d, heads, npal = (r.u32() for _ in range(5))
        if (e, d) != (E, D):
            raise ShapeMismatchError(f"matcher dims {(e, d)} unsupported")
        sharp = r.f64()
        palette = r.array("f4", npal * 3).reshape(npal, 3)
        cls0 = r.array("f4", E)
        wq = r.array("f4", heads * E).reshape(heads, E)
        wk = r.array("f4", heads * E).reshape(heads, E)
        wv = r.array("f4", heads * E * E).reshape(heads * E, E)
        wo = r.array("f4", E * heads * E).reshape(E, heads * E)
        wp = r.array("f4", D * E).reshape(D, E)
        bias = r.array("f4", D)
        text = {}
        for _ in range(r.u32()):
            word = r.string()
            text[word] = r.array("f4", D)
        r.done()
        return cls(patch, palette, sharp, cls0=cls0, wq=wq, wk=wk, wv=wv, wo=wo, wp=wp,
                   text=text, text_bias=bias)


def patch_foreground_fraction(mask: np.ndarray, patch: int) -> np.ndarray:
    H, W = mask.shape
    return mask.reshape(H // patch, patch, W // patch, patch).mean(axis=(1, 3)).reshape(-1)


def foreground_focus(phi: np.ndarray, mask: np.ndarray, patch: int) -> tuple[float, float]:
    """Mean phi over foreground patches (>= half covered, or the best-covered
    one) and over patches without any foreground pixel."""
    frac = patch_foreground_fraction(mask, patch)
    fg = frac >= 0.5
    if not fg.any():
        fg = frac == frac.max()
    bg = frac == 0
    return float(phi[fg].mean()), float(phi[bg].mean())


# -- oracle fitting -------------------------------------------------------------

@dataclass
class SynthWorld:
    encoder: PatchEncoder
    codebook: Codebook
    estimator: CountModel
    matcher: OracleMatcher
    prior: CodePrior
    decoder: MeanPatchDecoder | None = None
    size: int = DEFAULT_SIZE
    encoder_seed: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def tokenizer(self) -> Tokenizer:
        return Tokenizer(self.encoder, self.codebook)


def build_oracles(corpus: list[SceneSpec] | None = None, *, size: int = DEFAULT_SIZE,
                  patch: int = DEFAULT_PATCH, dim: int = DEFAULT_DIM, K: int = DEFAULT_K,
                  alpha: float = 0.1, seed: int = 0, iters: int = 20,
                  with_decoder: bool = False) -> SynthWorld:
    """Fit codebook, count-model estimator and code prior on a scene corpus.

    The default corpus is every scene under each of the jitter seeds
    ``FIT_SEEDS`` (384 x 4 images).  The codebook is a k-means fit over the
    distinct pixel blocks of the corpus, weighted by multiplicity.
    """
    corpus = all_scenes(FIT_SEEDS) if corpus is None else list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    enc = PatchEncoder.random_orthogonal(patch, dim, seed)
    n = patch * patch * 3
    blocks: dict[bytes, int] = {}
    images = []
    for spec in corpus:
        img = render(spec, size)[0]
        images.append(img)
        h = size // patch
        px = np.rint(img * 255).astype(np.uint8).reshape(h, patch, h, patch, 3)
        for b in px.transpose(0, 2, 1, 3, 4).reshape(h * h, n):
            key = b.tobytes()
            blocks[key] = blocks.get(key, 0) + 1
    uniq = np.frombuffer(b"".join(blocks), dtype=np.uint8).reshape(len(blocks), n) / 255.0
    counts = np.fromiter(blocks.values(), dtype=np.float64, count=len(blocks))
    Kfit = min(K, len(uniq))
    cb = fit_codebook(uniq @ enc.weights, Kfit, weights=counts, seed=seed, iters=iters)
    tok = Tokenizer(enc, cb)
    grids = [tok.tokenize(img) for img in images]
    caps = [Caption.from_text(s.caption) for s in corpus]
    est = CountModel.fit(zip(caps, grids), cb.K, alpha, positional=True, codebook_id=cb.id)
    prior = estimate_prior(grids, cb.K)
    dec = MeanPatchDecoder.fit(images, enc, cb) if with_decoder else None
    return SynthWorld(enc, cb, est, OracleMatcher(matcher_patch_for(size)), prior, dec, size, seed,
                      {"unique_blocks": len(uniq), "corpus": len(corpus)})


def grids_of(world: SynthWorld, specs: Iterable[SceneSpec]) -> list[CodeGrid]:
    return [world.tokenizer.tokenize(render(s, world.size)[0]) for s in specs]


def matcher_patch_for(size: int) -> int:
    """Matcher patch giving an 8 x 8 patch grid (at least 1 pixel)."""
    return max(1, size // 8)


def scene_angle_stats(mask: np.ndarray) -> tuple[float, float]:
    """Edge-weighted mean of cos(4 theta) and cos(6 theta) of the mask outline."""
    m = mask.astype(np.float64)
    gy = ndimage.sobel(m, axis=0, mode="nearest")
    gx = ndimage.sobel(m, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    th = np.arctan2(gy, gx)
    tot = mag.sum()
    return float((mag * np.cos(4 * th)).sum() / tot), float((mag * np.cos(6 * th)).sum() / tot)

