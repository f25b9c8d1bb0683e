"""LEICA score: the mean over positions of semantic weight times perceptual credit."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatchError
from .imageio import read_ppm
from .likelihood import Caption, EstimatorBackend, LogLikMap, score_teacher_forced, total_log_likelihood
from .perceptual import CodePrior, PerceptualConfig, apply_H, prior_gate
from .semantic import SemanticConfig, patch_alignment, semantic_score
from .tokenizer import CodeGrid, Tokenizer

H_ABLATIONS = ("shifted", "prior", "clamp", "raw")


@dataclass(frozen=True)
class LeicaConfig:
    """Scoring switches.

    ``ablate_H`` replaces the perceptual credit according to ``h_ablation``:

    - ``"shifted"``: ``ln P - lambda`` (prior gate and clamp both dropped)
    - ``"prior"``: ``max(ln P - lambda, 0)`` (prior gate dropped)
    - ``"clamp"``: ``gate * (ln P - lambda)`` (clamp dropped)
    - ``"raw"``: ``ln P``

    With ``ablate_S`` the semantic weight is 1.  With both ablations the score
    is the plain mean log-likelihood, whatever ``h_ablation`` says.
    """

    perceptual: PerceptualConfig = field(default_factory=PerceptualConfig)
    semantic: SemanticConfig = field(default_factory=SemanticConfig)
    ablate_H: bool = False
    ablate_S: bool = False
    h_ablation: str = "shifted"

    def __post_init__(self):
        if self.h_ablation not in H_ABLATIONS:
            raise ValueError(f"h_ablation must be one of {H_ABLATIONS}")

    def echo(self) -> dict:
        return {
            "lambda": self.perceptual.lam,
            "tau": self.semantic.tau,
            "use_global": self.semantic.use_global,
            "phi_resize": self.semantic.phi_resize,
            "ablate_H": self.ablate_H,
            "ablate_S": self.ablate_S,
            "h_ablation": self.h_ablation,
        }


@dataclass(frozen=True)
class Models:
    tokenizer: Tokenizer
    backend: EstimatorBackend
    prior: CodePrior
    matcher: object


@dataclass(frozen=True)
class SampleScore:
    id: str
    leica: float
    total_loglik: float
    mean_loglik: float
    m: int
    zeroed: int
    psi: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def credit_map(loglik: LogLikMap, prior: CodePrior, grid: CodeGrid, cfg: LeicaConfig) -> np.ndarray:
    """Perceptual credit per position, honoring the H ablation switches."""
    lam = cfg.perceptual.lam
    if not cfg.ablate_H:
        return apply_H(loglik, prior, grid, cfg.perceptual)
    if cfg.ablate_S or cfg.h_ablation == "raw":
        return loglik.values.copy()
    if cfg.h_ablation == "shifted":
        return loglik.values - lam
    if cfg.h_ablation == "prior":
        return np.maximum(loglik.values - lam, 0.0)
    return prior_gate(prior, grid, cfg.perceptual) * (loglik.values - lam)


def combine(credit: np.ndarray, weights: np.ndarray | None) -> float:
    """``sum_t weights[t] * credit[t] / m``; ``weights=None`` means all ones."""
    m = len(credit)
    if weights is None:
        return float(np.sum(credit)) / m
    if len(weights) != m:
        raise ShapeMismatchError(f"score map has {len(weights)} positions, credit map has {m}")
    return float(np.dot(credit, weights)) / m


def leica_score(cap: Caption, img: np.ndarray, models: Models, cfg: LeicaConfig = LeicaConfig(),
                sample_id: str = "", image_path: str | Path | None = None) -> SampleScore:
    grid = models.tokenizer.tokenize(img)
    loglik = score_teacher_forced(models.backend, cap, grid)
    total = total_log_likelihood(loglik)
    zeroed = int(np.count_nonzero(apply_H(loglik, models.prior, grid, cfg.perceptual) == 0))
    credit = credit_map(loglik, models.prior, grid, cfg)
    psi = None
    weights = None
    if not cfg.ablate_S:
        smap = patch_alignment(models.matcher, cap, img, image_path)
        psi = smap.psi
        weights = semantic_score(smap, grid.h, grid.w, cfg.semantic)
    if cfg.ablate_H and cfg.ablate_S:
        score = total / grid.m
    else:
        score = combine(credit, weights)
    return SampleScore(sample_id, score, total, total / grid.m, grid.m, zeroed, psi)


@dataclass(frozen=True)
class Sample:
    """One (caption, image) pair; the image is either in memory or at ``image_path``."""

    id: str
    text: str
    image: np.ndarray | None = None
    image_path: str | None = None

    def load(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.image_path is None:
            raise ValueError(f"sample {self.id!r} has no image")
        return read_ppm(self.image_path)


@dataclass
class BatchResult:
    scores: list[SampleScore]
    errors: list[tuple[str, str]]

    @property
    def values(self) -> np.ndarray:
        return np.array([s.leica for s in self.scores])

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.values)) if self.scores else None

    @property
    def std(self) -> float | None:
        return float(np.std(self.values)) if self.scores else None

    def summary(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n": len(self.scores), "n_errors": len(self.errors)}


def _score_one(sample: Sample, models: Models, cfg: LeicaConfig):
    try:
        cap = Caption.from_text(sample.text)
        return leica_score(cap, sample.load(), models, cfg, sample.id, sample.image_path)
    except Exception as exc:  # collected per sample; the batch goes on
        return (sample.id, f"{type(exc).__name__}: {exc}")


def score_batch(samples: list[Sample], models: Models, cfg: LeicaConfig = LeicaConfig(),
                jobs: int = 1) -> BatchResult:
    """Score every sample; failures are listed and left out of the summary.

    Output order follows ``samples`` regardless of ``jobs``.
    """
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda s: _score_one(s, models, cfg), samples))
    else:
        results = [_score_one(s, models, cfg) for s in samples]
    scores = [r for r in results if isinstance(r, SampleScore)]
    errors = [r for r in results if not isinstance(r, SampleScore)]
    return BatchResult(scores, errors)
