"""Meta-evaluation: judging a metric against oracle orderings.

Statistics: accuracy of pairwise judgments, Kendall's tau (tau-a), Pearson and
Spearman correlation.  Experiments: distortion ladders, word-replacement
ladders and subsample-size stability sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import rankdata

from .errors import UndefinedStatisticError
from .likelihood import Caption
from .perturb import DistortionSpec, TextPerturbSpec, distort_image, perturb_text


@dataclass(frozen=True)
class JudgmentPair:
    score_pos: float
    score_neg: float
    id: str = ""


def accuracy(pairs: Sequence[JudgmentPair]) -> float:
    """Fraction of pairs with ``score_pos > score_neg``; ties count as wrong."""
    if not pairs:
        raise UndefinedStatisticError("accuracy of zero pairs")
    return sum(p.score_pos > p.score_neg for p in pairs) / len(pairs)


def _tie_pairs(sorted_vals: np.ndarray) -> int:
    if len(sorted_vals) == 0:
        return 0
    change = np.flatnonzero(np.diff(sorted_vals) != 0)
    bounds = np.concatenate(([0], change + 1, [len(sorted_vals)]))
    runs = np.diff(bounds)
    return int((runs * (runs - 1) // 2).sum())


def _count_inversions(seq: list) -> int:
    """Strict inversions (``i < j`` and ``seq[i] > seq[j]``) by bottom-up merge sort."""
    a = list(seq)
    n = len(a)
    inv = 0
    width = 1
    buf = [None] * n
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    inv += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            buf[k:k + mid - i] = a[i:mid]
            k += mid - i
            buf[k:k + hi - j] = a[j:hi]
        a, buf = buf, a
        width *= 2
    return inv


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """Tau-a: ``(concordant - discordant) / C(n, 2)``, no tie correction.

    O(n log n) via Knight's algorithm.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("kendall_tau needs two 1-D sequences of equal length")
    n = len(x)
    if n < 2:
        raise UndefinedStatisticError("kendall_tau needs at least two observations")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    tx = _tie_pairs(xs)
    ty = _tie_pairs(np.sort(ys))
    joint = np.flatnonzero((np.diff(xs) != 0) | (np.diff(ys) != 0))
    bounds = np.concatenate(([0], joint + 1, [n]))
    runs = np.diff(bounds)
    txy = int((runs * (runs - 1) // 2).sum())
    swaps = _count_inversions(ys.tolist())
    return (n0 - tx - ty + txy - 2 * swaps) / n0


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or len(x) < 2:
        raise ValueError("pearson needs two sequences of equal length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedStatisticError("pearson correlation undefined for zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation of average-tied ranks."""
    return pearson(rankdata(a, method="average"), rankdata(b, method="average"))


def triplet_tau(clean: Sequence[float], noised: Sequence[float]) -> float | None:
    """Kendall's tau of (text, noised, clean) triplets against the oracle
    "clean beats noised": ``(concordant - discordant) / n``.

    Returns ``None`` when every triplet is tied.
    """
    c = np.asarray(clean, dtype=np.float64)
    z = np.asarray(noised, dtype=np.float64)
    if c.shape != z.shape or len(c) == 0:
        raise ValueError("triplet_tau needs equal-length non-empty inputs")
    if np.all(c == z):
        return None
    return float(np.sign(c - z).sum() / len(c))


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedStatisticError:
        return None


@dataclass
class MetaEvalReport:
    accuracy: float
    kendall_tau: float | None
    pearson: float | None
    spearman: float | None
    n: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "kendall_tau": self.kendall_tau, "pearson": self.pearson,
                "spearman": self.spearman, "n": self.n, "config": self.config}


def meta_evaluate(pos: Sequence[float], neg: Sequence[float], config: dict | None = None) -> MetaEvalReport:
    """All four measures for paired scores where ``pos`` should beat ``neg``.

    Kendall's tau is the triplet tau; Pearson and Spearman correlate the pooled
    scores with the oracle label (1 for ``pos``, 0 for ``neg``).
    """
    pos = list(map(float, pos))
    neg = list(map(float, neg))
    if len(pos) != len(neg) or not pos:
        raise ValueError("meta_evaluate needs equal, non-zero numbers of pos and neg scores")
    pairs = [JudgmentPair(p, q) for p, q in zip(pos, neg)]
    scores = pos + neg
    labels = [1.0] * len(pos) + [0.0] * len(neg)
    return MetaEvalReport(accuracy(pairs), triplet_tau(pos, neg), _maybe(pearson, scores, labels),
                          _maybe(spearman, scores, labels), len(pos), dict(config or {}))


def frechet_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets (FID-style)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx, my = x.mean(axis=0), y.mean(axis=0)
    cx, cy = np.atleast_2d(np.cov(x, rowvar=False)), np.atleast_2d(np.cov(y, rowvar=False))
    covmean = linalg.sqrtm(cx @ cy)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    d = mx - my
    return float(d @ d + np.trace(cx) + np.trace(cy) - 2 * np.trace(covmean))


# -- experiments --------------------------------------------------------------

def cell_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SweepRow:
    size: int
    mean: float
    std: float
    values: tuple[float, ...]


def stability_sweep(items: Sequence, metric: Callable[[list], float], sizes: Sequence[int],
                    repeats: int, seed: int = 0) -> list[SweepRow]:
    """Score random subsets (without replacement) of each size, ``repeats`` times each."""
    n = len(items)
    rows = []
    for si, size in enumerate(sizes):
        if not 1 <= size <= n:
            raise ValueError(f"subset size {size} outside [1, {n}]")
        vals = []
        for r in range(repeats):
            rng = np.random.default_rng(cell_seed(seed, si, r))
            idx = np.sort(rng.choice(n, size=size, replace=False))
            vals.append(float(metric([items[i] for i in idx])))
        rows.append(SweepRow(size, float(np.mean(vals)), float(np.std(vals)), tuple(vals)))
    return rows


@dataclass(frozen=True)
class LadderRung:
    degree: float
    score_mean: float
    score_std: float
    tau_mean: float | None
    tau_std: float | None
    accuracy_mean: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


ScoreFn = Callable[[Caption, np.ndarray], float]
Mapper = Callable[[Callable, Sequence], list]


def _serial(fn: Callable, xs: Sequence) -> list:
    return [fn(x) for x in xs]


def _image(x) -> np.ndarray:
    return x() if callable(x) else x


def noise_ladder_experiment(samples: Sequence[tuple[str, object]], kind: str,
                            degrees: Sequence[float], score_fn: ScoreFn, runs: int = 5,
                            seed: int = 0, mirror_amplitude: float | None = None,
                            mapper: Mapper = _serial) -> tuple[float, list[LadderRung]]:
    """Mean noised score and triplet tau per distortion degree, over ``runs`` seeds.

    ``samples`` are clean ``(caption, image)`` pairs; the image may also be a
    zero-argument loader.  ``mapper(fn, items)`` lets callers score in
    parallel; it must return results in item order.  Returns the clean mean
    score and one rung per degree; a rung whose every run is all ties
    reports ``tau_mean = None``.
    """
    caps = [Caption.from_text(t) for t, _ in samples]
    idx = range(len(samples))
    clean = np.array(mapper(lambda i: score_fn(caps[i], _image(samples[i][1])), idx))
    extra = {} if mirror_amplitude is None else {"mirror_amplitude": mirror_amplitude}
    rungs = []
    for di, degree in enumerate(degrees):
        means, taus = [], []
        for r in range(runs):
            def noised_score(i, di=di, r=r, degree=degree):
                spec = DistortionSpec(kind, degree, cell_seed(seed, di, r, i), **extra)
                return score_fn(caps[i], distort_image(_image(samples[i][1]), spec))
            noised = np.array(mapper(noised_score, idx))
            means.append(float(noised.mean()))
            taus.append(triplet_tau(clean, noised))
        defined = [t for t in taus if t is not None]
        rungs.append(LadderRung(
            float(degree), float(np.mean(means)), float(np.std(means)),
            float(np.mean(defined)) if defined else None,
            float(np.std(defined)) if defined else None))
    return float(clean.mean()), rungs


def word_replacement_experiment(samples: Sequence[tuple[str, object]], ks: Sequence[int],
                                score_fn: ScoreFn, keywords: Sequence[str], vocabulary: Sequence[str],
                                runs: int = 5, seed: int = 0,
                                mapper: Mapper = _serial) -> tuple[float, list[LadderRung]]:
    """Mean score and judgment accuracy as ``k`` caption keywords are replaced."""
    caps = [Caption.from_text(t) for t, _ in samples]
    idx = range(len(samples))
    clean = np.array(mapper(lambda i: score_fn(caps[i], _image(samples[i][1])), idx))
    rungs = []
    for ki, k in enumerate(ks):
        means, accs = [], []
        for r in range(runs):
            def pert_score(i, ki=ki, r=r, k=k):
                spec = TextPerturbSpec("replace_k", k, tuple(vocabulary), cell_seed(seed, ki, r, i))
                return score_fn(perturb_text(caps[i], spec, keywords), _image(samples[i][1]))
            pert = np.array(mapper(pert_score, idx))
            means.append(float(pert.mean()))
            accs.append(accuracy([JudgmentPair(a, b) for a, b in zip(clean, pert)]))
        rungs.append(LadderRung(float(k), float(np.mean(means)), float(np.std(means)),
                                None, None, float(np.mean(accs))))
    return float(clean.mean()), rungs
