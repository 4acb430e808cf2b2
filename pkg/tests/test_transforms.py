"""Tests for invarlab.transforms — catalog, parsing and golden outputs."""

import numpy as np
import pytest

from invarlab.errors import ParseError
from invarlab.image import cyclic_shift, from_uint8, to_uint8
from invarlab.registry import KIND_ORDER, is_geometric
from invarlab.transforms import (
    CyclicShift,
    SubPolicy,
    TransformSpec,
    affine_matrix,
    apply,
    apply_transform,
    catalog,
    compose,
    enhance_factor,
    parse_transform,
    posterize_bits,
    solarize_threshold,
    sort_key,
    subpolicy_catalog,
    transform_matrix,
)

GEOMETRIC_KINDS = [k for k in KIND_ORDER if is_geometric(k)]


class TestSpec:
    def test_unsigned_kind_drops_sign(self):
        assert TransformSpec("invert", 3, "-").sign == "+"

    def test_rejects_bad_level(self):
        with pytest.raises(ValueError):
            TransformSpec("rotate", 10)

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            TransformSpec("blur", 1)

    def test_str(self):
        assert str(TransformSpec("rotate", 7, "-")) == "rotate:7:-"
        assert str(TransformSpec("posterize", 4)) == "posterize:4"


class TestParse:
    @pytest.mark.parametrize("text", ["rotate:7:-", "posterize:4", "shearX:0:+", "equalize:1;translateY:3:-", "cyclic:2:-1"])
    def test_roundtrip(self, text):
        assert str(parse_transform(text)) == text

    def test_default_sign(self):
        assert parse_transform("rotate:3") == TransformSpec("rotate", 3, "+")

    def test_cyclic_default_dy(self):
        assert parse_transform("cyclic:4") == CyclicShift(4, 0)

    @pytest.mark.parametrize("text", ["rotate", "rotate:10", "blur:1", "a:1;b:1;c:1", "cyclic:x", "rotate:1:*"])
    def test_invalid(self, text):
        with pytest.raises(ParseError):
            parse_transform(text)


class TestGolden:
    def test_invert(self, fixture_4x4):
        out = apply(TransformSpec("invert", 1), fixture_4x4)
        assert np.array_equal(to_uint8(out), 255 - to_uint8(fixture_4x4))

    def test_posterize_keeps_top_bits(self, fixture_4x4):
        out = apply(TransformSpec("posterize", 9), fixture_4x4)
        assert posterize_bits(9) == 4
        assert np.array_equal(to_uint8(out), to_uint8(fixture_4x4) & 0xF0)

    def test_posterize_level_5(self, fixture_4x4):
        out = apply(TransformSpec("posterize", 5), fixture_4x4)
        assert posterize_bits(5) == 6
        assert np.array_equal(to_uint8(out), to_uint8(fixture_4x4) & 0xFC)

    def test_solarize(self, fixture_4x4):
        out = apply(TransformSpec("solarize", 5), fixture_4x4)
        u8 = to_uint8(fixture_4x4).astype(np.int64)
        # threshold 4/9 of 255 is 113.3, so 114 is the first flipped value
        expected = np.where(u8 >= 114, 255 - u8, u8)
        assert np.array_equal(to_uint8(out), expected)

    def test_solarize_full_level_inverts(self, fixture_4x4):
        out = apply(TransformSpec("solarize", 9), fixture_4x4)
        assert solarize_threshold(9) == 0.0
        assert np.array_equal(to_uint8(out), 255 - to_uint8(fixture_4x4))

    def test_invert_twice_is_identity(self):
        # k/256 keeps 1 - v exact, so both inversions are exact
        img = np.random.default_rng(5).integers(0, 257, size=(8, 8, 3)) / 256.0
        spec = TransformSpec("invert", 1)
        assert np.array_equal(apply(spec, apply(spec, img)), img)

    def test_invert_twice_is_identity_on_8bit_grid(self, fixture_4x4):
        spec = TransformSpec("invert", 1)
        twice = apply(spec, apply(spec, fixture_4x4))
        assert np.array_equal(to_uint8(twice), to_uint8(fixture_4x4))
        assert np.allclose(twice, fixture_4x4, rtol=0, atol=1e-15)

    def test_autocontrast_is_idempotent(self, fixture_4x4, image):
        spec = TransformSpec("autocontrast", 1)
        for img in (fixture_4x4, image):
            once = apply(spec, img)
            u8 = to_uint8(once).reshape(-1, 3)
            assert np.all(u8.min(axis=0) == 0) and np.all(u8.max(axis=0) == 255)
            assert np.array_equal(apply(spec, once), once)

    def test_equalize_is_idempotent_on_flat_histogram(self):
        # each channel holds every 8-bit value exactly once
        rng = np.random.default_rng(11)
        channels = [rng.permutation(256).reshape(16, 16) for _ in range(3)]
        img = from_uint8(np.stack(channels, axis=-1).astype(np.uint8))
        spec = TransformSpec("equalize", 1)
        once = apply(spec, img)
        assert np.array_equal(once, img)
        assert np.array_equal(apply(spec, once), once)

    @pytest.mark.parametrize("kind", KIND_ORDER)
    def test_level_zero_is_identity(self, kind, image):
        assert np.array_equal(apply(TransformSpec(kind, 0), image), image)

    @pytest.mark.parametrize("kind", KIND_ORDER)
    def test_output_in_range(self, kind, image):
        for sign in ("+", "-"):
            out = apply(TransformSpec(kind, 9, sign), image)
            assert out.shape == image.shape
            assert out.min() >= 0.0 and out.max() <= 1.0


class TestGeometry:
    @pytest.mark.parametrize("kind", ["shearX", "shearY", "translateX", "translateY"])
    def test_sign_pairs_compose_to_identity_exactly(self, kind):
        for level in range(10):
            plus = affine_matrix(TransformSpec(kind, level, "+"))
            minus = affine_matrix(TransformSpec(kind, level, "-"))
            assert np.array_equal(plus @ minus, np.eye(3))

    @pytest.mark.parametrize("kind", ["rotate", "rescale"])
    def test_sign_pairs_compose_to_identity(self, kind):
        for level in range(10):
            plus = affine_matrix(TransformSpec(kind, level, "+"))
            minus = affine_matrix(TransformSpec(kind, level, "-"))
            assert np.array_equal(compose(plus, minus), np.eye(3))
            assert np.array_equal(compose(minus, plus), np.eye(3))

    @pytest.mark.parametrize("kind", GEOMETRIC_KINDS)
    def test_compose_agrees_with_matmul(self, kind):
        a = affine_matrix(TransformSpec(kind, 7, "+"))
        b = affine_matrix(TransformSpec("rotate", 4, "-"))
        assert np.allclose(compose(a, b), a @ b, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("kind", GEOMETRIC_KINDS)
    def test_opposite_signs_subpolicy_matrix_is_identity(self, kind):
        sp = SubPolicy(TransformSpec(kind, 6, "+"), TransformSpec(kind, 6, "-"))
        assert np.array_equal(transform_matrix(sp), np.eye(3))

    def test_mixed_subpolicy_has_no_matrix(self):
        sp = SubPolicy(TransformSpec("rotate", 3), TransformSpec("invert", 1))
        assert transform_matrix(sp) is None

    def test_appearance_has_no_matrix(self):
        assert affine_matrix(TransformSpec("contrast", 4)) is None

    def test_translate_moves_content_right(self):
        img = np.random.default_rng(3).random((20, 20, 3))
        out = apply(TransformSpec("translateX", 1, "+"), img)
        assert np.array_equal(out[:, 1:], img[:, :-1])
        assert np.all(out[:, 0] == 0.0)

    def test_rescale_magnitude(self):
        assert affine_matrix(TransformSpec("rescale", 9, "+"))[0, 0] == 2.0
        assert affine_matrix(TransformSpec("rescale", 9, "-"))[0, 0] == 0.5

    def test_rotate_magnitude(self):
        m = affine_matrix(TransformSpec("rotate", 9, "+"))
        assert m[1, 0] == pytest.approx(0.5)

    def test_cyclic_shift_transform(self, image):
        assert np.array_equal(apply_transform(CyclicShift(2, 1), image), cyclic_shift(image, 2, 1))


class TestEnhance:
    def test_factor_range(self):
        assert enhance_factor(TransformSpec("color", 9, "+")) == pytest.approx(1.9)
        assert enhance_factor(TransformSpec("color", 9, "-")) == pytest.approx(0.1)

    def test_contrast_minus_pulls_toward_mean(self, image):
        out = apply(TransformSpec("contrast", 9, "-"), image)
        assert out.std() < image.std()

    def test_color_keeps_gray_pixels(self):
        img = np.full((4, 4, 3), 0.3)
        assert np.allclose(apply(TransformSpec("color", 6, "+"), img), 0.3)


class TestCatalog:
    def test_size_and_order(self):
        specs = catalog([1])
        assert len(specs) == 2 * len(GEOMETRIC_KINDS) + (len(KIND_ORDER) - len(GEOMETRIC_KINDS))
        assert str(specs[0]) == "equalize:1"
        assert specs == sorted(specs, key=sort_key)

    def test_level_zero_once(self):
        specs = catalog([0], signs="both")
        assert len(specs) == len(KIND_ORDER)

    def test_single_sign(self):
        specs = catalog([2], signs="-", kinds=["rotate", "invert"])
        assert [str(s) for s in specs] == ["invert:2", "rotate:2:-"]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            catalog([1], kinds=["blur"])

    def test_sort_key_groups(self):
        items = [CyclicShift(1), SubPolicy(TransformSpec("invert", 1), TransformSpec("rotate", 1)),
                 TransformSpec("sharpness", 2)]
        assert sorted(items, key=sort_key)[0] == TransformSpec("sharpness", 2)
        assert isinstance(sorted(items, key=sort_key)[-1], CyclicShift)

    def test_subpolicy_catalog(self):
        first = catalog([1], kinds=["invert"])
        second = catalog([1], kinds=["rotate"])
        assert [str(sp) for sp in subpolicy_catalog(first, second)] == ["invert:1;rotate:1:+", "invert:1;rotate:1:-"]

    def test_subpolicy_applies_in_order(self, image):
        sp = SubPolicy(TransformSpec("solarize", 5), TransformSpec("invert", 1))
        expected = apply(TransformSpec("invert", 1), apply(TransformSpec("solarize", 5), image))
        assert np.array_equal(apply_transform(sp, image), expected)
