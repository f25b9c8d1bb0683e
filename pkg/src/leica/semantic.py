"""Semantic credit: per-patch text alignment from a contrastive image-text matcher.

Patch scores come from the value vectors of the image tower's last
self-attention, pushed through the same projections the class token takes
(attention output projection, then the final image projection) and compared
with the text embedding by cosine.  Everything after the last attention that
only touches the class token is skipped for the patch path.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Protocol

import numpy as np

from .errors import LeicaError, ShapeMismatchError
from .imageio import check_image, write_ppm
from .likelihood import Caption


@dataclass(frozen=True)
class TowerOutput:
    """One image-tower pass.

    ``values``: ``(s*s, dv)`` value-projection outputs of the patch tokens,
    heads concatenated.  ``global_embedding``: the unmodified tower output.
    """

    values: np.ndarray
    global_embedding: np.ndarray
    s: int


class MatcherModel(Protocol):
    patch_size: int
    projection: np.ndarray  # (D, dv): output projection then final image projection

    def text_embedding(self, cap: Caption) -> np.ndarray: ...

    def image_pass(self, img: np.ndarray) -> TowerOutput: ...


@dataclass(frozen=True)
class SemanticMap:
    phi: np.ndarray
    psi: float
    s: int


@dataclass(frozen=True)
class SemanticConfig:
    tau: float = 0.07
    use_global: bool = True
    phi_resize: str = "2d"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.phi_resize not in ("2d", "1d"):
            raise ValueError("phi_resize must be '2d' or '1d'")


class DegenerateModelError(LeicaError):
    """A matcher produced a zero-norm embedding."""


def _norm(v: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1)
    if np.any(n == 0) or not np.all(np.isfinite(n)):
        raise DegenerateModelError(f"zero-norm {what}")
    return n


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine of every row of ``a`` with vector ``b``."""
    return (a @ b) / (_norm(a, "patch embedding") * _norm(b, "text embedding"))


def patch_alignment(model, cap: Caption, img: np.ndarray, image_path: str | Path | None = None) -> SemanticMap:
    if isinstance(model, ExternalMatcher):
        return model.align(cap, img, image_path)
    img = check_image(img, min_side=model.patch_size)
    p = model.patch_size
    if img.shape[0] % p or img.shape[1] % p:
        raise ShapeMismatchError(f"image {img.shape[:2]} not divisible by matcher patch {p}")
    x = np.asarray(model.text_embedding(cap), dtype=np.float64)
    out = model.image_pass(img)
    W = np.asarray(model.projection, dtype=np.float64)
    if out.values.shape[1] != W.shape[1]:
        raise ShapeMismatchError(f"value dim {out.values.shape[1]} != projection input {W.shape[1]}")
    projected = out.values @ W.T
    phi = np.clip(cosine_rows(projected, x), -1.0, 1.0)
    g = np.asarray(out.global_embedding, dtype=np.float64)
    psi = float(np.clip(g @ x / (_norm(g, "image embedding") * _norm(x, "text embedding")), -1.0, 1.0))
    return SemanticMap(phi, psi, out.s)


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align-corners sample positions: output ``j`` reads input ``j*(n_in-1)/(n_out-1)``."""
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def resize_bilinear(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Align-corners bilinear resampling of a 2-D array to ``(h, w)``."""
    g = np.asarray(grid, dtype=np.float64)
    r0, r1, fr = _axis_weights(g.shape[0], h)
    c0, c1, fc = _axis_weights(g.shape[1], w)
    top = g[r0][:, c0] * (1 - fc) + g[r0][:, c1] * fc
    bot = g[r1][:, c0] * (1 - fc) + g[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def resize_map(phi: np.ndarray, h: int, w: int, mode: str = "2d") -> np.ndarray:
    """Resample an ``s*s`` patch map to ``h*w`` positions, flattened row-major.

    ``mode="1d"`` instead interpolates the flattened sequence linearly from
    length ``s*s`` to ``h*w``.
    """
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    if mode == "1d":
        return resize_bilinear(phi[None, :], 1, h * w)[0]
    s = int(round(np.sqrt(len(phi))))
    if s < 1 or s * s != len(phi):
        raise ShapeMismatchError(f"patch map of length {len(phi)} is not square")
    return resize_bilinear(phi.reshape(s, s), h, w).reshape(-1)


def semantic_score(smap: SemanticMap, h: int, w: int, cfg: SemanticConfig = SemanticConfig()) -> np.ndarray:
    """Per-position weight ``exp(psi/tau) * max(phi_resized, 0)``."""
    phi = np.maximum(resize_map(smap.phi, h, w, cfg.phi_resize), 0.0)
    if not cfg.use_global:
        return phi
    return np.exp(smap.psi / cfg.tau) * phi


# -- external matcher over newline-delimited JSON --------------------------

class ExternalMatcher:
    """Matcher living in another process.

    Protocol, one JSON object per line.  Request:
    ``{"caption": str, "image": path-to-PPM}``.  Response:
    ``{"phi": [s*s floats, row-major], "psi": float}`` or ``{"error": str}``.
    """

    def __init__(self, command: list[str]):
        self.command = list(command)
        self._proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                      text=True, bufsize=1)
        self._lock = threading.Lock()

    def align(self, cap: Caption, img: np.ndarray | None, image_path: str | Path | None) -> SemanticMap:
        with self._lock, tempfile.TemporaryDirectory() as tmp:
            if image_path is None:
                image_path = Path(tmp) / "image.ppm"
                write_ppm(image_path, img)
            req = json.dumps({"caption": cap.raw, "image": str(image_path)})
            self._proc.stdin.write(req + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        if not line:
            raise LeicaError(f"external matcher {self.command!r} closed its output")
        resp = json.loads(line)
        if "error" in resp:
            raise LeicaError(f"external matcher: {resp['error']}")
        phi = np.asarray(resp["phi"], dtype=np.float64)
        s = int(round(np.sqrt(len(phi))))
        if s * s != len(phi):
            raise ShapeMismatchError("external matcher returned a non-square patch map")
        return SemanticMap(phi, float(resp["psi"]), s)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(model, stdin: IO[str] = sys.stdin, stdout: IO[str] = sys.stdout) -> None:
    """Answer ExternalMatcher requests using an in-process matcher."""
    from .imageio import read_ppm

    for line in stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            smap = patch_alignment(model, Caption.from_text(req["caption"]), read_ppm(req["image"]))
            resp = {"phi": smap.phi.tolist(), "psi": smap.psi}
        except Exception as exc:  # reported to the client, the server keeps going
            resp = {"error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
