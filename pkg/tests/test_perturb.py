import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leica.errors import DataError, InvalidSpecError
from leica.imageio import to_uint8
from leica.likelihood import Caption
from leica.metaeval import kendall_tau, triplet_tau
from leica.perturb import (DEFAULT_LADDERS, IMAGE_KINDS, DistortionSpec, TextPerturbSpec, build_triplets,
                           distort_image, funny_mirror, gaussian_blur, gaussian_kernel, perturb_text)
from leica.synthworld import SceneSpec, keyword_lexicon, render, replacement_vocabulary

GOLDEN = json.loads((Path(__file__).parent / "golden" / "perturb.json").read_text())


def scene(size=32):
    return render(SceneSpec("circle", "red", "tl", "beige", 0), size)[0]


class TestImageDistortions:
    @pytest.mark.parametrize("kind", IMAGE_KINDS)
    def test_degree_zero_identity(self, kind, rng):
        img = rng.random((16, 16, 3))
        out = distort_image(img, DistortionSpec(kind, 0.0, 3, mirror_amplitude=0.0))
        assert np.array_equal(out, img)

    @pytest.mark.parametrize("kind", IMAGE_KINDS)
    def test_deterministic(self, kind, rng):
        img = rng.random((16, 16, 3))
        spec = DistortionSpec(kind, 0.3, 99)
        assert np.array_equal(distort_image(img, spec), distort_image(img, spec))

    @pytest.mark.parametrize("kind", sorted(GOLDEN["cases"]))
    def test_golden(self, kind):
        case = GOLDEN["cases"][kind]
        out = distort_image(scene(GOLDEN["size"]), DistortionSpec(kind, case["degree"], case["seed"],
                                                                  case["mirror_amplitude"]))
        assert hashlib.sha256(to_uint8(out).tobytes()).hexdigest() == case["sha256_uint8"]

    def test_spn_full_is_binary(self, rng):
        out = distort_image(rng.random((10, 12, 3)), DistortionSpec("spn", 1.0, 5))
        assert set(np.unique(out).tolist()) <= {0.0, 1.0}
        # channels of a pixel move together
        assert np.all(out.min(axis=2) == out.max(axis=2))

    def test_spn_exact_count(self, rng):
        img = np.full((20, 20, 3), 0.5)
        out = distort_image(img, DistortionSpec("spn", 0.1, 1))
        assert int(np.sum(np.any(out != 0.5, axis=2))) == 40

    def test_blur_constant_preserved(self):
        img = np.full((12, 9, 3), 0.42)
        np.testing.assert_allclose(gaussian_blur(img, 2.5), 0.42, atol=1e-15)

    def test_kernel(self):
        k = gaussian_kernel(1.0)
        assert len(k) == 7 and abs(k.sum() - 1) < 1e-15
        assert np.all(k == k[::-1]) and np.argmax(k) == 3

    def test_blur_reflect_padding_by_hand(self):
        # 1-D check along columns: reflect padding excludes the edge sample
        img = np.zeros((1, 5, 3))
        img[0, 0] = 1.0
        k = gaussian_kernel(0.5)   # radius 2
        out = gaussian_blur(img, 0.5)[0, :, 0]
        # padded row: [0, 0 | 1, 0, 0, 0, 0 | 0, 0] with reflect -> p[-1]=p[1]=0, p[-2]=p[2]=0
        assert out[0] == pytest.approx(k[2], abs=1e-15)
        assert out[1] == pytest.approx(k[1], abs=1e-15)
        assert out[2] == pytest.approx(k[0], abs=1e-15)

    def test_mirror_formula(self):
        H = 16
        img = np.zeros((H, H, 3))
        img[..., 0] = np.arange(H)[None, :]   # red = column index
        img[..., 1] = np.arange(H)[:, None]   # green = row index
        out = funny_mirror(img / 15.0, 1.0) * 15.0
        for y, x in [(0, 0), (3, 7), (9, 2), (12, 12)]:
            sx = np.clip(x + math.sin(2 * math.pi * y / (H / 4)), 0, H - 1)
            sy = np.clip(y + math.sin(2 * math.pi * x / (H / 4)), 0, H - 1)
            assert out[y, x, 0] == pytest.approx(sx, abs=1e-9)
            assert out[y, x, 1] == pytest.approx(sy, abs=1e-9)

    def test_plus_kind_is_mirror_then_noise(self, rng):
        img = rng.random((16, 16, 3))
        a = distort_image(img, DistortionSpec("gn+", 0.05, 11, mirror_amplitude=2.0))
        b = distort_image(funny_mirror(img, 2.0), DistortionSpec("gn", 0.05, 11))
        assert np.array_equal(a, b)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-4, 0.004), st.floats(1.5, 3.0), st.integers(0, 2**32 - 1))
    def test_gn_energy_increases(self, var, factor, seed):
        # mid-gray and small variance: clipping is practically inactive
        img = np.full((64, 64, 3), 0.5)
        lo = np.mean((distort_image(img, DistortionSpec("gn", var, seed)) - img) ** 2)
        hi = np.mean((distort_image(img, DistortionSpec("gn", var * factor, seed)) - img) ** 2)
        assert hi > lo
        assert lo == pytest.approx(var, rel=0.1)

    @pytest.mark.parametrize("kw", [dict(kind="blur", degree=1.0), dict(kind="gn", degree=-1.0),
                                    dict(kind="spn", degree=1.5), dict(kind="gn", degree=math.nan)])
    def test_invalid_specs(self, kw):
        with pytest.raises(InvalidSpecError):
            DistortionSpec(**kw)


class TestText:
    CAP = Caption.from_text("a red square in the top left on gray")

    def test_k0_identity(self):
        spec = TextPerturbSpec("replace_k", 0, tuple(replacement_vocabulary()), 1)
        assert perturb_text(self.CAP, spec, keyword_lexicon()) == self.CAP

    def test_replace_all_keywords(self):
        kws = keyword_lexicon()
        n = sum(t in kws for t in self.CAP.tokens)
        for seed in range(20):
            spec = TextPerturbSpec("replace_k", n, tuple(kws), seed)
            out = perturb_text(self.CAP, spec, kws)
            assert len(out.tokens) == len(self.CAP.tokens)
            originals = {t for t in self.CAP.tokens if t in kws}
            assert not originals & set(out.tokens)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 5), st.integers(0, 2**32 - 1))
    def test_token_count_preserved(self, k, seed):
        out = perturb_text(self.CAP, TextPerturbSpec("replace_k", k, tuple(replacement_vocabulary()), seed),
                           keyword_lexicon())
        assert len(out.tokens) == len(self.CAP.tokens)
        changed = [i for i, (a, b) in enumerate(zip(out.tokens, self.CAP.tokens)) if a != b]
        assert len(changed) == k
        assert all(self.CAP.tokens[i] in keyword_lexicon() for i in changed)

    def test_too_many(self):
        with pytest.raises(DataError):
            perturb_text(self.CAP, TextPerturbSpec("replace_k", 9, ("x",), 0), keyword_lexicon())

    def test_mismatch_single_pool(self):
        other = Caption.from_text("a blue circle")
        out = perturb_text(self.CAP, TextPerturbSpec("mismatch", seed=3), pool=[self.CAP, other])
        assert out == other

    def test_mismatch_never_original(self):
        pool = [Caption.from_text(f"a {c} square") for c in ("red", "blue", "green")]
        for seed in range(30):
            assert perturb_text(pool[0], TextPerturbSpec("mismatch", seed=seed), pool=pool) != pool[0]

    def test_mismatch_empty_pool(self):
        with pytest.raises(DataError):
            perturb_text(self.CAP, TextPerturbSpec("mismatch"), pool=[self.CAP])


class TestTriplets:
    def test_disjoint_ids(self):
        with pytest.raises(DataError):
            build_triplets({"a": ("x", np.zeros(1))}, {"b": np.zeros(1)})

    def test_count(self, rng):
        clean = {f"i{k}": (f"cap {k}", rng.random((2, 2, 3))) for k in range(7)}
        noised = {k: v[1] * 0.5 for k, v in clean.items()}
        trips = build_triplets(clean, noised)
        assert len(trips) == 7 and {t.id for t in trips} == set(clean)

    def test_clean_preferring_metric_tau_one(self, rng):
        clean = {f"i{k}": (f"cap {k}", rng.random((4, 4, 3))) for k in range(9)}
        noised = {k: np.clip(v[1] + 0.3, 0, 1) for k, v in clean.items()}
        metric = lambda img: -float(np.mean(img))   # prefers the darker (clean) image  # noqa: E731
        trips = build_triplets(clean, noised)
        c = [metric(t.clean) for t in trips]
        z = [metric(t.noised) for t in trips]
        assert triplet_tau(c, z) == 1.0
        # same through the generic tau: pairs (score, oracle label) over both images
        scores = c + z
        labels = [1] * len(c) + [0] * len(z)
        assert kendall_tau(scores, labels) > 0


class TestLadders:
    @pytest.mark.parametrize("kind", IMAGE_KINDS)
    def test_every_kind_has_valid_increasing_ladder(self, kind):
        ladder = DEFAULT_LADDERS[kind]
        assert list(ladder) == sorted(set(ladder))
        for d in ladder:
            DistortionSpec(kind, d, 0)

    def test_geometric(self):
        for kind in ("gn", "gb", "spn"):
            ratios = np.diff(np.log(DEFAULT_LADDERS[kind]))
            np.testing.assert_allclose(ratios, math.log(2), atol=1e-12)
