import math
from fractions import Fraction

import numpy as np
import pytest

from autolabel import augment as aug
from autolabel.errors import ConfigError, ShapeMismatchError


def rand_image(rng, c=1, h=8, w=8):
    return rng.random((c, h, w), dtype=np.float32)


def bucket_scan_oracle(value, top, n_buckets):
    """Independent big-step oracle: walk the right-closed ranges
    ((r-1)*top/N, r*top/N] in order and return the first containing range.
    Exact rational arithmetic throughout."""
    v = Fraction(value)
    if v == 0:
        return 1
    for r in range(1, n_buckets + 1):
        if v <= Fraction(top) * r / n_buckets:
            return r
    raise AssertionError(f"{value} outside [0, {top}]")


# ---------------------------------------------------------------------------
# single transforms

def test_rotation_zero_degrees_is_identity():
    rng = np.random.default_rng(0)
    img = rand_image(rng)
    out = aug.rotate(img, 0.0)
    np.testing.assert_array_equal(out, img)
    out2 = aug.apply_randaug_op(img, aug.RandAugParams("rotation", 0))
    np.testing.assert_array_equal(out2, img)


def test_solarize_threshold_one_is_identity():
    rng = np.random.default_rng(1)
    img = rand_image(rng)
    np.testing.assert_array_equal(aug.solarize(img, 1.0), img)


def test_solarize_inverts_above_threshold():
    img = np.array([[[0.2, 0.8], [0.5, 1.0]]], dtype=np.float32)
    out = aug.solarize(img, 0.5)
    np.testing.assert_allclose(out, [[[0.2, 0.19999999], [0.5, 0.0]]], atol=1e-6)


def test_posterize_one_bit_on_gray_ramp():
    # quantization map: min(floor(x*2), 1)/2 snaps each pixel to {0, 0.5}
    img = np.array([[[0.1, 0.3], [0.6, 0.9]]], dtype=np.float32)
    out = aug.posterize(img, 1)
    np.testing.assert_array_equal(out, np.array([[[0.0, 0.0], [0.5, 0.5]]],
                                                dtype=np.float32))


def test_posterize_eight_bits_nearly_identity():
    rng = np.random.default_rng(2)
    img = rand_image(rng)
    out = aug.posterize(img, 8)
    assert np.abs(out - img).max() <= 1 / 256 + 1e-7


def test_translate_shifts_content():
    img = np.zeros((1, 4, 4), dtype=np.float32)
    img[0, 1, 1] = 1.0
    out = aug.translate_x(img, 1.0)
    assert out[0, 1, 2] == pytest.approx(1.0)
    assert out[0, 1, 1] == pytest.approx(0.0)
    out = aug.translate_y(img, -1.0)
    assert out[0, 0, 1] == pytest.approx(1.0)


def test_geometry_zero_fill():
    img = np.ones((1, 4, 4), dtype=np.float32)
    out = aug.translate_x(img, 2.0)
    np.testing.assert_array_equal(out[0, :, :2], 0.0)
    np.testing.assert_array_equal(out[0, :, 2:], 1.0)


def test_autocontrast_rescales_to_full_range():
    img = np.array([[[0.2, 0.4], [0.3, 0.6]]], dtype=np.float32)
    out = aug.autocontrast(img)
    assert out.min() == pytest.approx(0.0)
    assert out.max() == pytest.approx(1.0)
    flat = aug.autocontrast(np.full((1, 2, 2), 0.7, dtype=np.float32))
    np.testing.assert_array_equal(flat, np.float32(0.7))


def test_equalize_flattens_histogram_direction():
    rng = np.random.default_rng(3)
    img = (rng.random((1, 16, 16)) * 0.3).astype(np.float32)  # compressed range
    out = aug.equalize(img)
    assert out.shape == img.shape
    assert out.max() > 0.8  # stretched toward the full range
    assert np.all((out >= 0) & (out <= 1))


def test_color_identity_on_single_channel():
    rng = np.random.default_rng(4)
    img = rand_image(rng)
    np.testing.assert_array_equal(aug.color_saturation(img, 1.9), img)


def test_color_blends_rgb_saturation():
    rng = np.random.default_rng(5)
    img = rand_image(rng, c=3)
    gray = aug.color_saturation(img, 0.0)
    assert np.allclose(gray[0], gray[1], atol=1e-6)
    boosted = aug.color_saturation(img, 1.5)
    assert not np.allclose(boosted, img)


def test_unknown_op_rejected():
    with pytest.raises(ConfigError):
        aug.apply_randaug_op(np.zeros((1, 2, 2), dtype=np.float32),
                             aug.RandAugParams("swirl", 3))


def test_all_ops_preserve_range_and_shape():
    rng = np.random.default_rng(6)
    img = rand_image(rng, c=3, h=10, w=10)
    for op in aug.RANDAUG_OPS:
        for m in (1, 5, 10):
            out = aug.apply_randaug_op(img, aug.RandAugParams(op, m),
                                       np.random.default_rng(m))
            assert out.shape == img.shape, op
            assert out.min() >= 0.0 and out.max() <= 1.0, op


# ---------------------------------------------------------------------------
# sampling

def test_sample_forced_parameterless_bucket():
    rng = np.random.default_rng(7)
    img = rand_image(rng)
    out, key = aug.sample_randaug(img, np.random.default_rng(0), m_max=1,
                                  ops=["autocontrast"])
    assert key == aug.BucketKey("randaug", ("autocontrast", 1))


def test_sample_randaug_uniform_over_type_magnitude_cells():
    # multinomial oracle: magnitude cells carry 1/100 mass, the two
    # parameterless ops aggregate their magnitudes into one cell of 1/10
    rng = np.random.default_rng(8)
    img = np.full((1, 2, 2), 0.5, dtype=np.float32)
    n = 100_000
    counts = {}
    for _ in range(n):
        _, key = aug.sample_randaug(img, rng, m_max=10)
        counts[key.coords] = counts.get(key.coords, 0) + 1
    for op in aug.RANDAUG_OPS:
        if op in aug.PARAMETERLESS_OPS:
            p = 1 / 10
            sigma = math.sqrt(n * p * (1 - p))
            assert abs(counts.get((op, 1), 0) - n * p) <= 4 * sigma, op
        else:
            p = 1 / 100
            sigma = math.sqrt(n * p * (1 - p))
            for m in range(1, 11):
                assert abs(counts.get((op, m), 0) - n * p) <= 4 * sigma, (op, m)


def test_sample_randaug_deterministic_under_seed():
    img = rand_image(np.random.default_rng(9))
    a_img, a_key = aug.sample_randaug(img, np.random.default_rng(123), m_max=10)
    b_img, b_key = aug.sample_randaug(img, np.random.default_rng(123), m_max=10)
    assert a_key == b_key
    np.testing.assert_array_equal(a_img, b_img)


# ---------------------------------------------------------------------------
# chain-mix

def test_convex_mix_endpoints_bitwise():
    rng = np.random.default_rng(10)
    x = rand_image(rng)
    x_aug = rand_image(rng)
    np.testing.assert_array_equal(aug.convex_mix(x, x_aug, 1.0), x)
    np.testing.assert_array_equal(aug.convex_mix(x, x_aug, 0.0), x_aug)


def test_convex_mix_hand_value():
    x = np.full((1, 2, 2), 0.8, dtype=np.float32)
    x_aug = np.full((1, 2, 2), 0.4, dtype=np.float32)
    out = aug.convex_mix(x, x_aug, 0.25)
    np.testing.assert_allclose(out, 0.5, atol=1e-7)  # 0.25*0.8 + 0.75*0.4


def test_augmix_bucket_hand_values():
    assert aug.augmix_bucket(2, 0.5, 5) == aug.BucketKey("augmix", (2, 3))  # ceil(2.5)
    assert aug.augmix_bucket(3, 0.0, 5).coords == (3, 1)  # merge rule
    assert aug.augmix_bucket(1, 1.0, 5).coords == (1, 5)


def test_augmix_bucket_matches_scan_oracle_on_dense_grid():
    for n_buckets in (1, 3, 5, 10):
        grid = [i / 997 for i in range(998)] + [i / n_buckets for i in range(n_buckets + 1)]
        for lam in grid:
            got = aug.augmix_bucket(1, lam, n_buckets).coords[1]
            assert got == bucket_scan_oracle(lam, 1, n_buckets), (lam, n_buckets)
            assert 1 <= got <= n_buckets


def test_augmix_outputs_and_params_consistent():
    rng = np.random.default_rng(11)
    img = rand_image(rng, h=8, w=8)
    seen = set()
    for _ in range(300):
        out, params, key = aug.augmix(img, rng, d_max=3, fixed_magnitude=3,
                                      n_buckets=5)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert 1 <= params.depth <= 3
        assert len(params.chain_ops) == params.depth
        assert 0.0 <= params.lam <= 1.0
        assert key == aug.augmix_bucket(params.depth, params.lam, 5)
        seen.add(key.coords)
    assert len(seen) == 15  # all (d, n) cells reachable


# ---------------------------------------------------------------------------
# mixup

def test_mixup_endpoints_and_midpoint():
    x_i = np.ones((1, 2, 2), dtype=np.float32)
    x_j = np.zeros((1, 2, 2), dtype=np.float32)
    out, _, _ = aug.mixup(x_i, x_j, 0, 1, 1.0)
    np.testing.assert_array_equal(out, x_i)
    out, _, _ = aug.mixup(x_i, x_j, 0, 1, 0.0)
    np.testing.assert_array_equal(out, x_j)
    out, pair, key = aug.mixup(x_i, x_j, 0, 1, 0.5, n_buckets=5)
    np.testing.assert_allclose(out, 0.5)
    assert pair.gamma == 0.5
    assert key.coords == (5,)


def test_mixup_rejects_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        aug.mixup(np.zeros((1, 2, 2), dtype=np.float32),
                  np.zeros((1, 3, 3), dtype=np.float32), 0, 1, 0.5)


def test_mixup_bucket_hand_values():
    assert aug.mixup_bucket(0.5, 5).coords == (5,)   # ceil(10 * 0.5)
    assert aug.mixup_bucket(0.9, 5).coords == (1,)   # min(0.9, 0.1) -> ceil(1)
    assert aug.mixup_bucket(0.0, 5).coords == (1,)   # merge rule
    assert aug.mixup_bucket(1.0, 5).coords == (1,)


def test_mixup_bucket_matches_scan_oracle_on_dense_grid():
    for n_buckets in (1, 2, 5, 8):
        grid = [i / 991 for i in range(992)]
        for gamma in grid:
            got = aug.mixup_bucket(gamma, n_buckets).coords[0]
            want = bucket_scan_oracle(min(Fraction(gamma), 1 - Fraction(gamma)),
                                      Fraction(1, 2), n_buckets)
            assert got == want, (gamma, n_buckets)
            assert 1 <= got <= n_buckets


def test_bucket_maps_surjective_under_dense_sampling():
    rng = np.random.default_rng(12)
    n_buckets = 5
    seen_mix = {aug.mixup_bucket(float(g), n_buckets).coords[0]
                for g in rng.random(10_000)}
    seen_chain = {aug.augmix_bucket(1, float(l), n_buckets).coords[1]
                  for l in rng.random(10_000)}
    assert seen_mix == set(range(1, n_buckets + 1))
    assert seen_chain == set(range(1, n_buckets + 1))


# ---------------------------------------------------------------------------
# bucket keys

def test_bucket_key_string_roundtrip():
    for key in (aug.BucketKey("randaug", ("rotation", 3)),
                aug.BucketKey("augmix", (2, 4)),
                aug.BucketKey("adversarial", (7,)),
                aug.BucketKey("mixup", (1,))):
        assert aug.parse_bucket(str(key)) == key


def test_bucket_space_sizes():
    assert len(aug.randaug_bucket_space(10)) == 8 * 10 + 2
    assert len(aug.randaug_bucket_space(4, ops=["rotation", "solarize"])) == 8
    assert len(aug.augmix_bucket_space(3, 5)) == 15
    assert len(aug.mixup_bucket_space(5)) == 5
    space = aug.randaug_bucket_space(10)
    assert len(set(space)) == len(space)
