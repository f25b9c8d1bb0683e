"""End-to-end acceptance suite.

Each test records one PASS/FAIL line through the ``acceptance`` fixture; the
lines are repeated in the terminal summary of every pytest run.
"""
import filecmp
import math
import time

import numpy as np
import pytest

from leica.cli import main
from leica.likelihood import (Caption, CountModel, LogLikMap, UniformBackend, score_autoregressive_oracle,
                              score_teacher_forced)
from leica.metaeval import (cell_seed, frechet_distance, kendall_tau, meta_evaluate, noise_ladder_experiment,
                            pearson, spearman, stability_sweep, triplet_tau)
from leica.metric import LeicaConfig, credit_map, leica_score
from leica.perceptual import CodePrior, PerceptualConfig, apply_H
from leica.perturb import DEFAULT_LADDERS, TextPerturbSpec, perturb_text
from leica.semantic import SemanticMap, patch_alignment, resize_bilinear, semantic_score
from leica.synthworld import all_scenes, foreground_focus, generate, random_scenes, render
from leica.tokenizer import CodeGrid, encode
from oracles import bilinear_align_corners, kendall_bruteforce, pearson_bruteforce, spearman_bruteforce

pytestmark = pytest.mark.slow

LAM = math.log(1e-9)
WORDS = ("red", "blue", "square", "circle", "top", "left", "on", "gray")
CB = b"acceptance"


def random_caption(rng):
    return Caption.from_text(" ".join(rng.choice(WORDS, size=int(rng.integers(1, 5)))))


def random_backend(rng):
    K = int(rng.integers(1, 17))
    if rng.random() < 0.25:
        return UniformBackend(K, CB)
    h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    corpus = [(random_caption(rng), CodeGrid(rng.integers(0, K, (h, w)), CB)) for _ in range(8)]
    return CountModel.fit(corpus, K, float(rng.choice([0.0, 0.1, 1.0])), positional=bool(rng.random() < 0.7),
                          codebook_id=CB)


@pytest.fixture(scope="module")
def pair_set(world):
    """200 matched and 200 mismatched (caption, image) pairs, plus build time."""
    t0 = time.perf_counter()
    specs = random_scenes(200, 2024)
    samples = [generate(s) for s in specs]
    caps = [c for c, _ in samples]
    negs = [perturb_text(c, TextPerturbSpec("mismatch", seed=cell_seed(7, i)), pool=caps)
            for i, c in enumerate(caps)]
    return samples, negs, time.perf_counter() - t0


def pair_accuracy(models, pair_set, cfg=LeicaConfig()):
    samples, negs, _ = pair_set
    pos = [leica_score(c, img, models, cfg).leica for c, img in samples]
    neg = [leica_score(n, img, models, cfg).leica for (_, img), n in zip(samples, negs)]
    return meta_evaluate(pos, neg).accuracy


class TestAcceptance:
    def test_01_parallel_sequential(self, world, acceptance):
        rng = np.random.default_rng(101)
        worst, n = 0.0, 0
        t0 = time.perf_counter()
        for case in range(500):
            if case % 10 == 0:
                backend = world.estimator if case % 50 == 0 else random_backend(rng)
            if backend is world.estimator:
                spec = random_scenes(1, case)[0]
                cap, img = generate(spec)
                grid = world.tokenizer.tokenize(img)
            else:
                cap = random_caption(rng)
                shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
                grid = CodeGrid(rng.integers(0, backend.vocab_size, shape), CB)
            a = score_teacher_forced(backend, cap, grid).values
            b = score_autoregressive_oracle(backend, cap, grid).values
            worst = max(worst, float(np.max(np.abs(a - b))))
            n += 1
        elapsed = time.perf_counter() - t0
        ok = acceptance(1, n == 500 and worst <= 1e-9 and elapsed < 10,
                        f"{n} cases, max |diff| {worst:.2e}, {elapsed:.2f}s")
        assert ok

    def test_02_normalization(self, world, acceptance):
        rng = np.random.default_rng(202)
        worst = {}
        for name in ("uniform", "count", "world"):
            dev = 0.0
            for i in range(1000):
                if name == "world":
                    backend = world.estimator
                elif i % 20 == 0:
                    K = int(rng.integers(1, 33))
                    if name == "uniform":
                        backend = UniformBackend(K, CB)
                    else:
                        corpus = [(random_caption(rng), CodeGrid(rng.integers(0, K, (3, 3)), CB))
                                  for _ in range(10)]
                        alpha = float(rng.choice([0.0, 0.1, 2.0]))
                        backend = CountModel.fit(corpus, K, alpha, codebook_id=CB)
                prefix = rng.integers(0, backend.vocab_size, int(rng.integers(0, 12))).tolist()
                d = backend.next_distribution(random_caption(rng), prefix)
                assert np.all(d >= 0)
                dev = max(dev, abs(float(d.sum()) - 1))
            worst[name] = dev
        ok = acceptance(2, max(worst.values()) <= 1e-6,
                        "max |sum-1| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
                        + " over 1000 states each")
        assert ok

    def test_03_rare_code_suppression(self, acceptance):
        rng = np.random.default_rng(303)
        # dyadic log-likelihoods keep every sum exact
        base = -rng.integers(1, 64, 15) / 8.0
        codes = rng.integers(0, 4, 15)
        prior = CodePrior(np.full(4, 0.25), 1, CB)
        rare = math.log(1e-12)

        def credits(values, cs, cfg):
            grid = CodeGrid(np.asarray(cs)[None, :], CB)
            return credit_map(LogLikMap(np.asarray(values, dtype=np.float64), CB), prior, grid, cfg)

        full = LeicaConfig(PerceptualConfig(LAM))
        raw = LeicaConfig(PerceptualConfig(LAM), ablate_H=True, h_ablation="raw")
        h0 = credits(base, codes, full)
        h1 = credits(np.append(base, rare), np.append(codes, 0), full)
        r0 = credits(base, codes, raw)
        r1 = credits(np.append(base, rare), np.append(codes, 0), raw)
        d_full = math.fsum(h1) - math.fsum(h0)
        d_raw = math.fsum(r1) - math.fsum(r0)
        ok = acceptance(3, d_full == 0.0 and h1[-1] == 0.0 and np.array_equal(h1[:-1], h0) and d_raw == rare,
                        f"sum H change {d_full!r}; without indicator {d_raw!r} (ln 1e-12 = {rare!r})")
        assert ok

    def test_04_matched_mismatched(self, models, pair_set, acceptance):
        t0 = time.perf_counter()
        acc = pair_accuracy(models, pair_set)
        elapsed = time.perf_counter() - t0 + pair_set[2]
        ok = acceptance(4, acc >= 0.90 and elapsed < 60, f"accuracy {acc:.3f} on 200+200 pairs, {elapsed:.1f}s")
        assert ok

    def test_05_noise_monotonicity(self, world, models, acceptance):
        samples = [(s.caption, (lambda s=s: render(s)[0])) for s in random_scenes(60, 55)]
        score_fn = lambda cap, img: leica_score(cap, img, models).leica  # noqa: E731
        lines, ok = [], True
        for kind, floor in (("gn", 0.8), ("spn", 0.7)):
            clean, rungs = noise_ladder_experiment(samples, kind, DEFAULT_LADDERS[kind], score_fn, runs=5, seed=5)
            means = [clean] + [r.score_mean for r in rungs]
            strict = all(a > b for a, b in zip(means, means[1:]))
            tau = rungs[-1].tau_mean
            ok &= strict and tau is not None and tau >= floor
            lines.append(f"{kind}: strictly decreasing {strict}, tau@{rungs[-1].degree:g} = {tau:.3f}")
        ok = acceptance(5, ok, "; ".join(lines))
        assert ok

    def test_06_ablation_ordering(self, models, pair_set, acceptance):
        accs = {
            "full": pair_accuracy(models, pair_set),
            "noS": pair_accuracy(models, pair_set, LeicaConfig(ablate_S=True)),
            "noH": pair_accuracy(models, pair_set, LeicaConfig(ablate_H=True)),
            "loglik": pair_accuracy(models, pair_set, LeicaConfig(ablate_H=True, ablate_S=True)),
        }
        ok = (accs["full"] >= accs["noS"] and accs["full"] >= accs["noH"]
              and accs["loglik"] <= min(accs["noS"], accs["noH"], accs["full"]))
        ok = acceptance(6, ok, ", ".join(f"{k} {v:.3f}" for k, v in accs.items()))
        assert ok

    def test_07_stability(self, world, models, acceptance):
        t0 = time.perf_counter()
        n = 5000
        scores = np.empty(n)
        feats = np.empty((n, world.encoder.dim))
        for i, spec in enumerate(random_scenes(n, 77)):
            cap, img = generate(spec)
            scores[i] = leica_score(cap, img, models).leica
            feats[i] = encode(img, world.encoder).reshape(-1, world.encoder.dim).mean(axis=0)
        full = float(scores.mean())
        subsets = stability_sweep(list(range(n)), lambda ix: float(scores[ix].mean()), [100], 10, seed=3)[0]
        elapsed = time.perf_counter() - t0
        rel_diffs = [abs(v - full) / full for v in subsets.values]
        rel_std = subsets.std / subsets.mean
        # reference: a distribution distance on the same subsets varies far more
        fid = stability_sweep(list(range(n)), lambda ix: frechet_distance(feats[ix], feats), [100], 10, seed=3)[0]
        ok = max(rel_diffs) < 0.05 and rel_std < 0.10 and elapsed < 300
        ok = acceptance(7, ok, f"max rel diff {max(rel_diffs):.4f}, rel std {rel_std:.4f} at size 100; "
                               f"Frechet reference rel std {fid.std / fid.mean:.3f}; {elapsed:.0f}s")
        assert ok
        assert rel_std < fid.std / fid.mean

    def test_08_statistics_oracles(self, acceptance):
        rng = np.random.default_rng(808)
        worst = 0.0
        for _ in range(200):
            m = int(rng.integers(3, 51))
            a = rng.standard_normal(m) if rng.random() < 0.5 else rng.integers(0, 6, m).astype(float)
            b = a + rng.standard_normal(m) if rng.random() < 0.5 else rng.integers(0, 6, m).astype(float)
            if np.ptp(a) == 0 or np.ptp(b) == 0:
                b = rng.standard_normal(m)
                a = rng.standard_normal(m)
            worst = max(worst, abs(kendall_tau(a, b) - kendall_bruteforce(a, b)),
                        abs(pearson(a, b) - pearson_bruteforce(a, b)),
                        abs(spearman(a, b) - spearman_bruteforce(a, b)))
        closed = (kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == 4 / 6
                  and kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
                  and pearson([1, 2, 3], [3, 1, 2]) == -0.5
                  and spearman([1, 2, 3], [3, 1, 2]) == -0.5
                  and triplet_tau([1, 2, 3], [1, 2, 3]) is None
                  and triplet_tau([3, 1, 2, 5], [1, 2, 2, 4]) == 0.25)
        ok = acceptance(8, worst <= 1e-12 and closed,
                        f"max |diff| {worst:.1e} over 200 vectors; closed forms {closed}")
        assert ok

    def test_09_semantic_map(self, world, acceptance):
        out = resize_bilinear(np.array([[0.0, 1.0], [0.0, 1.0]]), 4, 4)
        want = np.tile([0.0, 1 / 3, 2 / 3, 1.0], (4, 1))
        err = max(float(np.max(np.abs(out - want))),
                  float(np.max(np.abs(out - bilinear_align_corners(np.array([[0.0, 1.0], [0.0, 1.0]]), 4, 4)))))
        hits = 0
        scenes = all_scenes((0,))
        patch = world.matcher.patch_size
        for spec in scenes:
            img, mask = render(spec, world.size)
            fg, bg = foreground_focus(patch_alignment(world.matcher, Caption.from_text(spec.caption), img).phi,
                                      mask, patch)
            hits += fg > bg
        frac = hits / len(scenes)
        ok = acceptance(9, err <= 1e-12 and len(scenes) == 384 and frac >= 0.95,
                        f"resize max err {err:.1e}; foreground focus on {hits}/{len(scenes)} scenes")
        assert ok

    def test_10_hand_values(self, acceptance):
        # by hand: -0.693147 + 20.723266 = 20.030119; exp(4.285714) * 0.5 = 72.6544 * 0.5 = 36.3272
        h = apply_H(LogLikMap(np.array([math.log(0.5)]), CB), CodePrior(np.array([0.5, 0.5]), 1, CB),
                    CodeGrid(np.array([[0]]), CB), PerceptualConfig(LAM))[0]
        s = semantic_score(SemanticMap(np.array([0.5]), 0.3, 1), 1, 1)[0]
        ok = acceptance(10, abs(h - 20.0302) <= 1e-4 and abs(s - 36.33) <= 0.05, f"H {h:.6f}, S {s:.4f}")
        assert ok

    def test_11_cli_determinism(self, tmp_path, acceptance):
        a, b = tmp_path / "a", tmp_path / "b"
        synth = ["synth", "--n", "10", "--size", "64", "--K", "64", "--fit-seeds", "0"]
        codes = [main(synth + ["--out", str(a)]), main(synth + ["--out", str(b)])]
        same_synth = not filecmp.dircmp(a, b).diff_files and not filecmp.dircmp(a / "images", b / "images").diff_files
        m = str(a / "manifest.jsonl")
        common = ["--models", str(a)]
        commands = {
            "score": ["score", m, *common],
            "metaeval-paired": ["metaeval", m, "--paired", m, *common],
            "metaeval-ladder": ["metaeval", m, "--perturb", "gn", "--degree", "0.05", "0.2", "--runs", "2", *common],
            "metaeval-text": ["metaeval", m, "--text", "replace", "--k", "1", *common],
            "rank": ["rank", m, *common, "--format", "json"],
            "stability": ["stability", m, "--sizes", "5", "10", "--repeats", "4", *common],
        }
        diffs = []
        for name, argv in commands.items():
            outs = []
            for run, jobs in ((0, "1"), (1, "3")):
                out = tmp_path / f"{name}-{run}.out"
                codes.append(main(argv + ["--jobs", jobs, "--out", str(out)]))
                outs.append(out.read_bytes())
            if outs[0] != outs[1]:
                diffs.append(name)
        pert = []
        for run in range(2):
            out = tmp_path / f"perturb-{run}"
            codes.append(main(["perturb", "--kind", "spn", "--degree", "0.1", "--seed", "4", "--in", m,
                               "--out", str(out)]))
            pert.append(out)
        same_pert = (not filecmp.dircmp(pert[0], pert[1]).diff_files
                     and not filecmp.dircmp(pert[0] / "images", pert[1] / "images").diff_files)
        ok = acceptance(11, set(codes) == {0} and same_synth and same_pert and not diffs,
                        f"{len(commands) + 2} commands run twice; differing: {diffs or 'none'}")
        assert ok
