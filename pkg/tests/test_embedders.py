"""Tests for invarlab.embedders — built-in providers, heads and file stores."""

import numpy as np
import pytest

from invarlab.errors import CapabilityError, ConfigError, DuplicateId, MissingEmbedding, ParseError, ShapeError
from invarlab.embedders import (
    FileStore,
    HistogramEmbedder,
    LinearHead,
    NoiseEmbedder,
    PixelEmbedder,
    SeededConvEmbedder,
    SeededPatchPoolEmbedder,
    build_provider,
    embed_all,
    image_digest,
    load_file_store,
    transform_key,
    write_file_store,
)
from invarlab.image import cyclic_shift
from invarlab.transforms import TransformSpec


def _img(seed: int, size: int = 8) -> np.ndarray:
    return np.random.default_rng(seed).random((size, size, 3))


def _check_vjp(provider, img, seed=0, h=1e-6):
    rng = np.random.default_rng(seed)
    grad = rng.normal(size=provider.dim)
    direction = rng.normal(size=img.shape)
    plus = provider.embed(np.clip(img + h * direction, 0, 1)) @ grad
    minus = provider.embed(np.clip(img - h * direction, 0, 1)) @ grad
    numeric = (plus - minus) / (2 * h)
    analytic = float(np.sum(provider.vjp(img, grad) * direction))
    assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-6)


class TestConv:
    def test_deterministic_per_seed(self):
        img = _img(0)
        a = SeededConvEmbedder(seed=3, input_size=8).embed(img)
        b = SeededConvEmbedder(seed=3, input_size=8).embed(img)
        c = SeededConvEmbedder(seed=4, input_size=8).embed(img)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_dim(self):
        assert SeededConvEmbedder(input_size=8, channels=(4, 2)).dim == 8 * 8 * 2
        assert SeededConvEmbedder(input_size=8, pooling="gap", channels=(4, 2)).dim == 2

    def test_circular_map_commutes_with_cyclic_shift(self):
        provider = SeededConvEmbedder(input_size=8)
        img = _img(1)
        shifted_map = provider.feature_map(cyclic_shift(img, 2, -1))
        assert np.allclose(shifted_map, cyclic_shift(provider.feature_map(img), 2, -1), atol=1e-12)

    def test_gap_is_invariant_to_cyclic_shift(self):
        provider = SeededConvEmbedder(input_size=8, pooling="gap")
        img = _img(2)
        assert np.allclose(provider.embed(cyclic_shift(img, 3, 5)), provider.embed(img), atol=1e-12)

    def test_zero_padding_breaks_equivariance(self):
        provider = SeededConvEmbedder(input_size=8, padding="zero")
        img = _img(1)
        shifted_map = provider.feature_map(cyclic_shift(img, 2, 0))
        assert not np.allclose(shifted_map, cyclic_shift(provider.feature_map(img), 2, 0))

    @pytest.mark.parametrize("pooling", ["none", "gap"])
    def test_vjp_matches_finite_differences(self, pooling):
        _check_vjp(SeededConvEmbedder(input_size=8, pooling=pooling), _img(3))

    def test_wrong_input_size(self):
        with pytest.raises(ShapeError):
            SeededConvEmbedder(input_size=8).embed(_img(0, size=16))

    def test_nested_list_input(self):
        provider = SeededConvEmbedder(input_size=4, channels=(2,))
        img = _img(7, size=4)
        assert np.array_equal(provider.embed(img.tolist()), provider.embed(img))
        with pytest.raises(ShapeError):
            provider.embed([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ShapeError):
            PixelEmbedder(input_size=4).embed([[[0.1, 0.2, 0.3]] * 4] * 3)

    def test_parameters_are_the_kernels(self):
        provider = SeededConvEmbedder(input_size=6, channels=(3, 2))
        assert [p.shape for p in provider.parameters()] == [(3, 3, 3, 3), (3, 3, 3, 2)]
        assert all(p is k for p, k in zip(provider.parameters(), provider.kernels))
        assert PixelEmbedder(input_size=6).parameters() == []

    def test_backward_kernel_gradient_matches_finite_differences(self):
        provider = SeededConvEmbedder(input_size=5, channels=(2, 2), pooling="gap", seed=1)
        img = _img(8, size=5)
        grad = np.random.default_rng(2).normal(size=provider.dim)
        g_img, g_kernels = provider.backward(img, grad)
        assert np.array_equal(g_img, provider.vjp(img, grad))
        h = 1e-6
        for layer, (k, gk) in enumerate(zip(provider.kernels, g_kernels)):
            flat = k.reshape(-1)
            for j in (0, flat.size // 2, flat.size - 1):
                original = flat[j]
                flat[j] = original + h
                up = provider.embed(img) @ grad
                flat[j] = original - h
                down = provider.embed(img) @ grad
                flat[j] = original
                assert gk.reshape(-1)[j] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-8)

    def test_body_state_roundtrip(self):
        source = SeededConvEmbedder(seed=1, input_size=6, channels=(3, 2))
        target = SeededConvEmbedder(seed=2, input_size=6, channels=(3, 2))
        target.load_body_state(source.body_state())
        img = _img(9, size=6)
        assert np.array_equal(target.embed(img), source.embed(img))
        with pytest.raises(ShapeError):
            SeededConvEmbedder(input_size=6, channels=(4,)).load_body_state(source.body_state())
        with pytest.raises(ShapeError):
            PixelEmbedder(input_size=6).load_body_state(source.body_state())
        PixelEmbedder(input_size=6).load_body_state({})

    @pytest.mark.parametrize("kwargs", [{"padding": "reflect"}, {"pooling": "max"}, {"channels": ()}])
    def test_invalid_options(self, kwargs):
        with pytest.raises(ValueError):
            SeededConvEmbedder(**kwargs)


class TestOtherProviders:
    def test_patchpool_vjp(self):
        _check_vjp(SeededPatchPoolEmbedder(patch=4, dim=6, input_size=8), _img(4))

    @pytest.mark.parametrize("dy, dx", [(4, 0), (0, 8), (12, 4), (-4, -12)])
    def test_patchpool_is_invariant_to_patch_aligned_shifts(self, dy, dx):
        provider = SeededPatchPoolEmbedder(patch=4, dim=16, input_size=16)
        img = _img(6, size=16)
        assert np.array_equal(provider.embed(cyclic_shift(img, dy, dx)), provider.embed(img))

    @pytest.mark.parametrize("dy, dx", [(1, 0), (0, 1), (2, 3)])
    def test_patchpool_sees_sub_patch_shifts(self, dy, dx):
        provider = SeededPatchPoolEmbedder(patch=4, dim=16, input_size=16)
        img = _img(6, size=16)
        assert not np.allclose(provider.embed(cyclic_shift(img, dy, dx)), provider.embed(img))

    def test_patchpool_patch_must_divide(self):
        with pytest.raises(ValueError):
            SeededPatchPoolEmbedder(patch=3, input_size=8)

    def test_histogram_counts(self):
        e = HistogramEmbedder(bins=4).embed(_img(0))
        assert e.shape == (12,)
        assert e.sum() == pytest.approx(3.0)

    def test_histogram_ignores_pixel_order(self):
        img = _img(5)
        flipped = img[::-1, ::-1]
        provider = HistogramEmbedder()
        assert np.array_equal(provider.embed(img), provider.embed(flipped))

    def test_noise_keyed_by_content(self):
        provider = NoiseEmbedder(dim=5)
        img = _img(0)
        assert np.array_equal(provider.embed(img), provider.embed(img.copy()))
        assert not np.array_equal(provider.embed(img), provider.embed(_img(1)))
        assert not provider.deterministic

    def test_pixel_is_flatten(self):
        img = _img(0, size=4)
        provider = PixelEmbedder()
        assert np.array_equal(provider.embed(img), img.reshape(-1))
        grad = np.arange(48, dtype=float)
        assert np.array_equal(provider.vjp(img, grad), grad.reshape(4, 4, 3))

    def test_pixel_without_size_has_no_dim(self):
        with pytest.raises(CapabilityError):
            PixelEmbedder().dim
        assert PixelEmbedder().metadata()["dim"] is None

    def test_histogram_has_no_gradient(self):
        with pytest.raises(CapabilityError):
            HistogramEmbedder().vjp(_img(0), np.zeros(96))

    def test_embed_sample_applies_transform(self):
        provider = PixelEmbedder()
        img = _img(0)
        spec = TransformSpec("invert", 1)
        assert np.allclose(provider.embed_sample("a", img, spec), 1.0 - img.reshape(-1))

    def test_embed_sample_needs_image(self):
        with pytest.raises(CapabilityError):
            PixelEmbedder().embed_sample("a", None)

    def test_image_digest(self):
        img = _img(0)
        assert image_digest(img) == image_digest(img.copy())
        assert image_digest(img) != image_digest(img.reshape(4, 16, 3))

    def test_embed_all(self):
        images = [_img(i, size=4) for i in range(3)]
        assert embed_all(PixelEmbedder(), images).shape == (3, 48)


class TestLinearHead:
    def test_fits_separable_data(self):
        rng = np.random.default_rng(0)
        x = np.vstack([rng.normal(-2, 0.3, size=(20, 3)), rng.normal(2, 0.3, size=(20, 3))])
        y = [0] * 20 + [1] * 20
        head = LinearHead(2, 3)
        history = head.fit(x, y, epochs=100)
        assert history[-1] < history[0]
        predictions = np.argmax(x @ head.weight.T + head.bias, axis=1)
        assert predictions.tolist() == y

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            LinearHead(1, 3)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            LinearHead(2, 3).fit(np.zeros((4, 2)), [0, 1, 0, 1])

    def test_state_roundtrip(self):
        head = LinearHead(2, 3)
        head.weight[:] = 1.5
        other = LinearHead(2, 3)
        other.load_state(head.state())
        assert np.array_equal(other.weight, head.weight)

    def test_load_state_rejects_wrong_shape(self):
        with pytest.raises(ShapeError):
            LinearHead(2, 3).load_state(LinearHead(3, 3).state())

    def test_classify(self):
        provider = PixelEmbedder(input_size=4)
        with pytest.raises(CapabilityError):
            provider.classify(_img(0, size=4))
        provider.attach_head(3)
        assert provider.has_classifier
        assert provider.classify(_img(0, size=4)).shape == (3,)
        assert provider.metadata()["classifier_head"] == 3


class TestFileStore:
    def _vectors(self):
        return {"a": np.array([0.5, -1.0, 2.0]), "b c": np.array([0.0, 1.25, 3.0])}

    def test_text_roundtrip(self, tmp_path):
        write_file_store(tmp_path / "e.txt", self._vectors())
        store = load_file_store(tmp_path / "e.txt")
        assert store.dim == 3
        assert np.array_equal(store.lookup("b c"), self._vectors()["b c"])

    def test_binary_roundtrip(self, tmp_path):
        write_file_store(tmp_path / "e.bin", self._vectors(), binary=True)
        store = load_file_store(tmp_path / "e.bin")
        assert np.array_equal(store.lookup("a"), self._vectors()["a"])

    def test_bad_header(self, tmp_path):
        (tmp_path / "e.txt").write_text("dimension=3\n")
        with pytest.raises(ParseError) as exc:
            load_file_store(tmp_path / "e.txt")
        assert exc.value.offset == 0

    def test_wrong_row_length(self, tmp_path):
        header = "dim=2 count=1\n"
        (tmp_path / "e.txt").write_text(header + "a\t1.0,2.0,3.0\n")
        with pytest.raises(ParseError) as exc:
            load_file_store(tmp_path / "e.txt")
        assert exc.value.offset == len(header)

    def test_count_mismatch(self, tmp_path):
        (tmp_path / "e.txt").write_text("dim=1 count=2\na\t1.0\n")
        with pytest.raises(ParseError):
            load_file_store(tmp_path / "e.txt")

    def test_duplicate_id(self, tmp_path):
        (tmp_path / "e.txt").write_text("dim=1 count=2\na\t1.0\na\t2.0\n")
        with pytest.raises(DuplicateId):
            load_file_store(tmp_path / "e.txt")

    def test_truncated_binary(self, tmp_path):
        write_file_store(tmp_path / "e.bin", self._vectors(), binary=True)
        data = (tmp_path / "e.bin").read_bytes()
        (tmp_path / "e.bin").write_bytes(data[:-3])
        with pytest.raises(ParseError):
            load_file_store(tmp_path / "e.bin")

    def test_mixed_dimensions(self, tmp_path):
        with pytest.raises(ShapeError):
            write_file_store(tmp_path / "e.txt", {"a": np.zeros(2), "b": np.zeros(3)})

    def test_transformed_lookup(self):
        spec = TransformSpec("rotate", 3, "-")
        store = FileStore({"a": np.zeros(2), "a@rotate:3:-": np.ones(2)}, 2)
        assert np.array_equal(store.embed_sample("a", None, spec), np.ones(2))
        assert np.array_equal(store.embed_sample("a", None, TransformSpec("rotate", 0)), np.zeros(2))
        assert transform_key("a", spec) == "a@rotate:3:-"

    def test_missing_embedding(self):
        with pytest.raises(MissingEmbedding):
            FileStore({}, 2).embed_sample("zzz")

    def test_cannot_embed_images(self):
        with pytest.raises(CapabilityError):
            FileStore({}, 2).embed(_img(0))


class TestBuildProvider:
    def test_variants(self):
        assert isinstance(build_provider({"variant": "conv", "input_size": 8}), SeededConvEmbedder)
        gap = build_provider({"variant": "conv-gap", "input_size": 8})
        assert gap.pooling == "gap" and gap.variant == "conv-gap"
        assert isinstance(build_provider({"variant": "histogram"}), HistogramEmbedder)

    def test_file_variant(self, tmp_path):
        write_file_store(tmp_path / "e.txt", {"a": np.zeros(2)})
        store = build_provider({"variant": "file", "path": str(tmp_path / "e.txt")})
        assert store.metadata()["count"] == 1

    def test_unknown_variant(self):
        with pytest.raises(ConfigError) as exc:
            build_provider({"variant": "resnet"})
        assert exc.value.key == "provider.variant"

    def test_bad_option(self):
        with pytest.raises(ConfigError) as exc:
            build_provider({"variant": "histogram", "depth": 3})
        assert exc.value.key == "provider"
