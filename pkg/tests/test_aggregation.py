"""Alignment and neighborhood-aggregation tests against brute-force oracles."""

import numpy as np
import pytest

from wsad import AggregationConfig, aggregate, align_multiscale, neighborhood_mean, resize_bilinear
from wsad.aggregation import extract_patch_set
from wsad.feature_io import ManifestEntry, write_feature_map


def window_mean_oracle(arr: np.ndarray, p: int) -> np.ndarray:
    """Direct double-loop clipped-window mean (the reference for aggregation)."""
    k = p // 2
    h, w, c = arr.shape
    out = np.zeros((h, w, c), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            win = arr[max(0, i - k) : i + k + 1, max(0, j - k) : j + k + 1]
            out[i, j] = win.reshape(-1, c).astype(np.float64).mean(axis=0)
    return out.astype(np.float32)


def resize_oracle(arr: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Per-pixel bilinear resize with half-pixel centers and edge clamping."""
    ih, iw, c = arr.shape
    out = np.zeros((oh, ow, c), dtype=np.float64)
    for i in range(oh):
        sy = min(max((i + 0.5) * ih / oh - 0.5, 0.0), ih - 1)
        y0, ty = int(np.floor(sy)), sy - int(np.floor(sy))
        y1 = min(y0 + 1, ih - 1)
        for j in range(ow):
            sx = min(max((j + 0.5) * iw / ow - 0.5, 0.0), iw - 1)
            x0, tx = int(np.floor(sx)), sx - int(np.floor(sx))
            x1 = min(x0 + 1, iw - 1)
            a = arr[y0, x0] * (1 - tx) + arr[y0, x1] * tx
            b = arr[y1, x0] * (1 - tx) + arr[y1, x1] * tx
            out[i, j] = a * (1 - ty) + b * ty
    return out.astype(np.float32)


class TestNeighborhoodMean:
    def test_p1_is_identity_bitwise(self):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((5, 7, 3)).astype(np.float32)
        out = neighborhood_mean(arr, 1)
        assert out.tobytes() == arr.tobytes()

    def test_constant_map_stays_constant(self):
        arr = np.full((6, 6, 2), 3.7, dtype=np.float32)
        out = neighborhood_mean(arr, 5)
        assert np.array_equal(out, arr)

    def test_hand_computed_3x3(self):
        # values 1..9 row-major, p=3: center mean 5.0, corner mean of {1,2,4,5}=3.0
        arr = np.arange(1, 10, dtype=np.float32).reshape(3, 3, 1)
        out = neighborhood_mean(arr, 3)
        assert out[1, 1, 0] == 5.0
        assert out[0, 0, 0] == 3.0
        assert out[2, 2, 0] == np.float32((5 + 6 + 8 + 9) / 4)
        np.testing.assert_array_equal(out, window_mean_oracle(arr, 3))

    @pytest.mark.parametrize("p", [1, 3, 5, 7])
    def test_matches_double_loop_oracle(self, p):
        rng = np.random.default_rng(p)
        arr = (10.0 * rng.standard_normal((9, 11, 4))).astype(np.float32)
        out = neighborhood_mean(arr, p)
        expected = window_mean_oracle(arr, p)
        np.testing.assert_allclose(out, expected, rtol=1e-6, atol=1e-6)

    def test_interior_of_linear_ramp_is_preserved(self):
        # symmetric unclipped windows preserve affine fields pointwise,
        # hence also the interior mean
        h, w, p = 12, 10, 5
        k = p // 2
        hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        arr = (0.5 * hh - 1.25 * ww + 3.0)[:, :, None].astype(np.float32)
        out = neighborhood_mean(arr, p)
        interior = (slice(k, h - k), slice(k, w - k))
        np.testing.assert_allclose(out[interior], arr[interior], rtol=1e-5)
        assert np.isclose(
            out[interior].mean(dtype=np.float64),
            arr[interior].mean(dtype=np.float64),
            rtol=1e-5,
        )

    def test_even_patch_size_rejected(self):
        with pytest.raises(ValueError):
            neighborhood_mean(np.zeros((3, 3, 1), dtype=np.float32), 2)


class TestResize:
    def test_same_size_is_bitwise_copy(self):
        rng = np.random.default_rng(1)
        arr = rng.standard_normal((4, 6, 3)).astype(np.float32)
        out = resize_bilinear(arr, 4, 6)
        assert out.tobytes() == arr.tobytes()
        assert out is not arr

    def test_constant_upsample_exact(self):
        arr = np.full((2, 2, 3), -0.625, dtype=np.float32)
        out = resize_bilinear(arr, 4, 4)
        assert np.array_equal(out, np.full((4, 4, 3), -0.625, dtype=np.float32))

    @pytest.mark.parametrize("shape", [(4, 4, 2), (3, 5, 1), (6, 2, 3)])
    @pytest.mark.parametrize("target", [(8, 8), (5, 7), (9, 4)])
    def test_matches_per_pixel_oracle(self, shape, target):
        rng = np.random.default_rng(hash((shape, target)) % 2**32)
        arr = rng.standard_normal(shape).astype(np.float32)
        out = resize_bilinear(arr, *target)
        np.testing.assert_allclose(out, resize_oracle(arr, *target), rtol=1e-5, atol=1e-6)


class TestAlignMultiscale:
    def test_single_layer_passthrough(self):
        rng = np.random.default_rng(2)
        layer = rng.standard_normal((8, 8, 4)).astype(np.float32)
        out = align_multiscale([layer], AggregationConfig())
        assert out.tobytes() == layer.tobytes()

    def test_two_layers_channel_sum(self):
        rng = np.random.default_rng(3)
        big = rng.standard_normal((8, 8, 4)).astype(np.float32)
        small = rng.standard_normal((4, 4, 6)).astype(np.float32)
        out = align_multiscale([big, small], AggregationConfig(layer_indices=(0, 1)))
        assert out.shape == (8, 8, 10)
        np.testing.assert_array_equal(out[:, :, :4], big)
        np.testing.assert_allclose(
            out[:, :, 4:], resize_oracle(small, 8, 8), rtol=1e-5, atol=1e-6
        )

    def test_explicit_target_resolution(self):
        layer = np.ones((4, 4, 2), dtype=np.float32)
        out = align_multiscale(
            [layer], AggregationConfig(target_height=6, target_width=6)
        )
        assert out.shape == (6, 6, 2)

    def test_bad_selection(self):
        layer = np.ones((2, 2, 1), dtype=np.float32)
        with pytest.raises(ValueError):
            align_multiscale([layer], AggregationConfig(layer_indices=(1,)))
        with pytest.raises(ValueError):
            AggregationConfig(layer_indices=())
        with pytest.raises(ValueError):
            align_multiscale([], AggregationConfig())


class TestExtractPatchSet:
    def _write_entry(self, tmp_path, arr, image_id="img"):
        write_feature_map(arr, tmp_path / f"{image_id}.wsfx")
        return ManifestEntry(image_id, "train-normal", 0, f"{image_id}.wsfx")

    def test_patch_count_and_origins(self, tmp_path):
        rng = np.random.default_rng(4)
        arr = rng.standard_normal((8, 8, 3)).astype(np.float32)
        entry = self._write_entry(tmp_path, arr)
        ps = extract_patch_set(entry, AggregationConfig(), tmp_path)
        assert ps.n_patches == 64
        assert ps.channels == 3
        assert ps.origin(0) == ("img", 0, 0)
        assert ps.origin(9) == ("img", 1, 1)
        assert ps.origin(63) == ("img", 7, 7)

    def test_deterministic(self, tmp_path):
        rng = np.random.default_rng(5)
        arr = rng.standard_normal((6, 6, 2)).astype(np.float32)
        entry = self._write_entry(tmp_path, arr)
        a = extract_patch_set(entry, AggregationConfig(), tmp_path)
        b = extract_patch_set(entry, AggregationConfig(), tmp_path)
        assert a.features.tobytes() == b.features.tobytes()

    def test_multi_layer_entry(self, tmp_path):
        rng = np.random.default_rng(6)
        l0 = rng.standard_normal((6, 6, 2)).astype(np.float32)
        l1 = rng.standard_normal((3, 3, 3)).astype(np.float32)
        write_feature_map(l0, tmp_path / "l0.wsfx")
        write_feature_map(l1, tmp_path / "l1.wsfx")
        entry = ManifestEntry("multi", "train-normal", 0, "l0.wsfx;l1.wsfx")
        ps = extract_patch_set(
            entry, AggregationConfig(patch_size=1, layer_indices=(0, 1)), tmp_path
        )
        assert ps.n_patches == 36
        assert ps.channels == 5

    def test_mask_aware_shift_contribution(self, tmp_path):
        # noise-free anomaly map: aggregated patch = base + shift * overlap * u,
        # where overlap is the window-mean of the mask
        from wsad import SynthConfig, generate_synthetic, read_feature_map

        shift = 2.0
        config = SynthConfig(seed=9, n_normal_train=2, n_anomaly_train=1,
                             n_normal_test=0, n_anomaly_test=0,
                             height=10, width=10, channels=6,
                             blob_height=3, blob_width=3,
                             noise_sigma=0.0, shift_magnitude=shift)
        manifest = generate_synthetic(config, tmp_path / "ds")
        entry = manifest.train_anomaly()[0]
        p = 5
        ps = extract_patch_set(entry, AggregationConfig(patch_size=p), manifest.root)
        base = read_feature_map(
            manifest.resolve(manifest.train_normal()[0].feature_path)
        )[0, 0].astype(np.float64)
        mask = read_feature_map(manifest.resolve(entry.mask_path))
        overlap = window_mean_oracle(mask, p)[:, :, 0].astype(np.float64)
        for row in range(ps.n_patches):
            _, h, w = ps.origin(row)
            expected_norm = shift * overlap[h, w]
            got = np.linalg.norm(ps.features[row].astype(np.float64) - base)
            assert abs(got - expected_norm) <= 1e-5 * max(1.0, expected_norm)
