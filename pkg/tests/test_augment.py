import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ringpose.augment import (
    AugmentConfig,
    augment,
    draw_hshift,
    draw_vshift,
    horizontal_shift,
    max_hshift,
    pixel_noise,
    shift_axis,
    vertical_shift,
)
from ringpose.echo import EchoProfile, pixel_to_distance
from ringpose.errors import ParameterError

finite = st.floats(-1e3, 1e3, allow_nan=False)


def rand_profile(seed=0, width=100):
    rng = np.random.default_rng(seed)
    return EchoProfile(rng.normal(size=(54, width)), rng.normal(size=(54, width)), 0.012)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"pixel_noise_prob": 1.5}, {"hshift_prob": -0.1},
                                    {"pixel_noise_range": -0.01}, {"vshift_max": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            AugmentConfig(**kw)

    def test_for_item_distinct(self):
        cfg = AugmentConfig(seed=5)
        seeds = {cfg.for_item(i).seed for i in range(100)}
        assert len(seeds) == 100 and cfg.for_item(3) == cfg.for_item(3)


class TestPixelNoise:
    def test_zero_probability_identity(self):
        p = rand_profile()
        out = pixel_noise(p, AugmentConfig(pixel_noise_prob=0.0))
        assert np.array_equal(out.original, p.original) and np.array_equal(out.differential, p.differential)

    def test_ratio_bounds(self):
        x = np.random.default_rng(1).normal(size=(2, 54, 200)) + 3
        r = pixel_noise(x, AugmentConfig(seed=2)) / x
        assert r.min() >= 0.95 and r.max() <= 1.05

    def test_modified_fraction(self):
        x = np.ones((2, 500, 1000))
        out = pixel_noise(x, AugmentConfig(seed=3))
        assert np.mean(out != x) == pytest.approx(0.80, abs=0.01)

    def test_channels_independent(self):
        x = np.ones((2, 54, 100))
        out = pixel_noise(x, AugmentConfig(seed=4))
        assert not np.array_equal(out[0], out[1])

    @given(arrays(np.float64, (2, 6, 7), elements=finite), st.integers(0, 2**63 - 1))
    def test_sign_and_determinism(self, x, seed):
        cfg = AugmentConfig(seed=seed)
        a = pixel_noise(x, cfg)
        assert np.array_equal(np.sign(a), np.sign(x))
        assert np.array_equal(a, pixel_noise(x, cfg))


class TestVerticalShift:
    def test_identity_and_onehot(self):
        p = rand_profile()
        out = vertical_shift(p, shift=0)
        assert np.array_equal(out.original, p.original)
        hot = np.zeros((2, 54, 5))
        hot[:, 25] = 1
        moved = vertical_shift(hot, shift=2)
        assert np.array_equal(np.argmax(moved, axis=1), np.full((2, 5), 27))

    def test_range_equivalent(self):
        assert pixel_to_distance(3) == pytest.approx(10.29, abs=0.01)

    def test_draw_bounds(self):
        draws = {draw_vshift(AugmentConfig(seed=s)) for s in range(400)}
        assert draws == set(range(-3, 4))

    def test_same_shift_for_both_channels(self):
        p = rand_profile(2)
        out = vertical_shift(p, AugmentConfig(seed=9))
        s = draw_vshift(AugmentConfig(seed=9))
        assert np.array_equal(out.original, shift_axis(p.original, s, 0))
        assert np.array_equal(out.differential, shift_axis(p.differential, s, 0))


class TestHorizontalShift:
    def test_max_shift(self):
        assert max_hshift(100) == 13
        assert 13 * 0.012 == pytest.approx(0.156)
        assert max_hshift(160) == 21

    def test_no_shift_branch(self):
        p = rand_profile()
        cfg = AugmentConfig(hshift_prob=0.0, seed=1)
        assert draw_hshift(100, cfg) == 0
        assert np.array_equal(horizontal_shift(p, cfg).original, p.original)

    def test_shift_probability(self):
        zero = sum(draw_hshift(100, AugmentConfig(seed=s)) == 0 for s in range(4000))
        # 20% no-shift branch plus 1/27 of the shift branch landing on zero
        assert zero / 4000 == pytest.approx(0.2 + 0.8 / 27, abs=0.025)

    @given(st.integers(-20, 20))
    def test_shift_algebra(self, s):
        x = np.random.default_rng(0).normal(size=(2, 54, 100))
        back = horizontal_shift(horizontal_shift(x, shift=s), shift=-s)
        keep = slice(0, 100 - s) if s >= 0 else slice(-s, 100)
        assert np.array_equal(back[..., keep], x[..., keep])
        zeroed = np.ones(100, bool)
        zeroed[keep] = False
        assert not back[..., zeroed].any()


@given(st.integers(-3, 3), st.integers(-13, 13))
def test_shifts_preserve_interior_multiset(vs, hs):
    x = np.random.default_rng(7).normal(size=(2, 54, 100))
    out = horizontal_shift(vertical_shift(x, shift=vs), shift=hs)
    src = x[:, max(0, -vs):54 - max(0, vs), max(0, -hs):100 - max(0, hs)]
    assert np.array_equal(np.sort(out[out != 0]), np.sort(src.ravel()))


class TestAugment:
    def test_deterministic(self):
        p = rand_profile(3)
        a, b = augment(p, AugmentConfig(seed=11)), augment(p, AugmentConfig(seed=11))
        assert np.array_equal(a.original, b.original) and np.array_equal(a.differential, b.differential)
        c = augment(p, AugmentConfig(seed=12))
        assert not np.array_equal(a.original, c.original)

    def test_classification_adds_hshift(self):
        x = np.random.default_rng(1).normal(size=(2, 54, 160))
        cfg = AugmentConfig(seed=21, hshift_prob=1.0, hshift_frac=0.5)
        assert not np.array_equal(augment(x, cfg), augment(x, cfg, classification=True))

    def test_returns_same_kind(self):
        assert isinstance(augment(rand_profile()), EchoProfile)
        assert isinstance(augment(np.zeros((2, 54, 10))), np.ndarray)
