"""Image and caption distortions with known oracle orderings.

Randomness comes from numpy's PCG64 bit generator seeded with a
64-bit seed (``numpy.random.Generator(PCG64(seed))``); the same seed always
gives bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError, InvalidSpecError
from .imageio import check_image
from .likelihood import Caption

IMAGE_KINDS = ("gn", "gb", "spn", "mirror", "gn+", "gb+", "spn+")
DEFAULT_MIRROR_AMPLITUDE = 6.0

# geometric ladders ending at the heaviest degree of each kind
DEFAULT_LADDERS = {
    "gn": (0.0125, 0.025, 0.05, 0.1, 0.2),
    "gb": (0.5, 1.0, 2.0, 4.0, 8.0),
    "spn": (0.025, 0.05, 0.1, 0.2, 0.4),
    "mirror": (1.0, 2.0, 4.0, 8.0),
}
for _k in ("gn", "gb", "spn"):
    DEFAULT_LADDERS[_k + "+"] = DEFAULT_LADDERS[_k]
K_LADDER = (0, 1, 2, 3, 4)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class DistortionSpec:
    """``degree`` is the GN variance, GB sigma, SPN pixel fraction or mirror
    amplitude in pixels.  ``+`` kinds warp with ``mirror_amplitude`` first."""

    kind: str
    degree: float
    seed: int = 0
    mirror_amplitude: float = DEFAULT_MIRROR_AMPLITUDE

    def __post_init__(self):
        if self.kind not in IMAGE_KINDS:
            raise InvalidSpecError(f"unknown distortion kind {self.kind!r}")
        if not (self.degree >= 0 and math.isfinite(self.degree)):
            raise InvalidSpecError(f"degree must be finite and >= 0, got {self.degree}")
        if self.kind.startswith("spn") and self.degree > 1:
            raise InvalidSpecError("salt-and-pepper fraction must be <= 1")
        if self.mirror_amplitude < 0:
            raise InvalidSpecError("mirror amplitude must be >= 0")


def gaussian_noise(img: np.ndarray, variance: float, rng: np.random.Generator) -> np.ndarray:
    if variance == 0:
        return img.copy()
    return np.clip(img + rng.normal(0.0, math.sqrt(variance), img.shape), 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable normalized Gaussian, radius ``ceil(3*sigma)``, reflect padding."""
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    # scipy's "mirror" is numpy's "reflect": the edge pixel is not repeated
    out = ndimage.correlate1d(img, k, axis=0, mode="mirror")
    return np.clip(ndimage.correlate1d(out, k, axis=1, mode="mirror"), 0.0, 1.0)


def salt_and_pepper(img: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Set exactly ``round(fraction * H * W)`` pixels to black or white (equal odds)."""
    H, W, _ = img.shape
    n = int(round(fraction * H * W))
    out = img.copy()
    if n == 0:
        return out
    idx = rng.permutation(H * W)[:n]
    vals = (rng.random(n) < 0.5).astype(np.float64)
    flat = out.reshape(H * W, 3)
    flat[idx] = vals[:, None]
    return out


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional coordinates, clamping to the border."""
    H, W, _ = img.shape
    ys = np.clip(ys, 0, H - 1)
    xs = np.clip(xs, 0, W - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def funny_mirror(img: np.ndarray, amplitude: float) -> np.ndarray:
    """Sinusoidal warp: output ``(y, x)`` reads input at
    ``(y + A sin(2 pi x / P), x + A sin(2 pi y / P))`` with ``P = H / 4``."""
    if amplitude == 0:
        return img.copy()
    H, W, _ = img.shape
    period = H / 4
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    src_x = xx + amplitude * np.sin(2 * np.pi * yy / period)
    src_y = yy + amplitude * np.sin(2 * np.pi * xx / period)
    return bilinear_sample(img, src_y, src_x)


def distort_image(img: np.ndarray, spec: DistortionSpec) -> np.ndarray:
    img = check_image(img)
    rng = rng_for(spec.seed)
    kind = spec.kind
    if kind == "mirror":
        return funny_mirror(img, spec.degree)
    if kind.endswith("+"):
        img = funny_mirror(img, spec.mirror_amplitude)
        kind = kind[:-1]
    if kind == "gn":
        return gaussian_noise(img, spec.degree, rng)
    if kind == "gb":
        return gaussian_blur(img, spec.degree)
    return salt_and_pepper(img, spec.degree, rng)


@dataclass(frozen=True)
class TextPerturbSpec:
    kind: str
    k: int = 0
    vocabulary: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("replace_k", "mismatch"):
            raise InvalidSpecError(f"unknown text perturbation {self.kind!r}")
        if self.k < 0:
            raise InvalidSpecError("k must be >= 0")


def perturb_text(cap: Caption, spec: TextPerturbSpec, keywords: Sequence[str] = (),
                 pool: Sequence[Caption] = ()) -> Caption:
    """Replace ``k`` keyword tokens by pool words, or swap in a different caption.

    Replacement words never repeat any keyword of the original caption, so
    replacing every keyword leaves none of them behind.
    """
    rng = rng_for(spec.seed)
    if spec.kind == "mismatch":
        others = [c for c in pool if c.tokens != cap.tokens]
        if not others:
            raise DataError("mismatch needs a pool with at least one different caption")
        return others[int(rng.integers(len(others)))]
    if spec.k == 0:
        return cap
    kw = set(keywords)
    positions = [i for i, tok in enumerate(cap.tokens) if tok in kw]
    if spec.k > len(positions):
        raise DataError(f"caption has {len(positions)} keywords, cannot replace {spec.k}")
    original = {cap.tokens[i] for i in positions}
    choices = sorted(set(spec.vocabulary) - original)
    if not choices:
        raise DataError("replacement vocabulary is empty")
    chosen = rng.choice(len(positions), size=spec.k, replace=False)
    tokens = list(cap.tokens)
    for j in sorted(chosen.tolist()):
        tokens[positions[j]] = choices[int(rng.integers(len(choices)))]
    return Caption(" ".join(tokens), tuple(tokens))


@dataclass(frozen=True)
class Triplet:
    id: str
    text: str
    noised: np.ndarray
    clean: np.ndarray


def build_triplets(clean: dict[str, tuple[str, np.ndarray]],
                   distorted: dict[str, np.ndarray]) -> list[Triplet]:
    """Pair clean ``id -> (caption, image)`` with distorted ``id -> image``."""
    if set(clean) != set(distorted):
        missing = sorted(set(clean) ^ set(distorted))
        raise DataError(f"clean and distorted sets disagree on ids: {missing[:5]}")
    return [Triplet(i, clean[i][0], distorted[i], clean[i][1]) for i in clean]
