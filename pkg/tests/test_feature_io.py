"""WSFX format, manifest, and synthetic generator tests."""

import json
import struct

import numpy as np
import pytest

from wsad import SynthConfig, generate_synthetic, read_feature_map, write_feature_map
from wsad.feature_io import (
    WSFX_HEADER_SIZE,
    BadMagicError,
    DatasetManifest,
    FeatureFileError,
    ManifestEntry,
    ManifestError,
    SynthConfigError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)


class TestWsfxFormat:
    def test_smallest_map_layout(self, tmp_path):
        path = tmp_path / "one.wsfx"
        write_feature_map(np.zeros((1, 1, 1), dtype=np.float32), path)
        raw = path.read_bytes()
        # magic(4) + version u16 + dtype u8 + reserved u8 + three u32 dims = 20
        assert WSFX_HEADER_SIZE == 20
        assert len(raw) == WSFX_HEADER_SIZE + 4
        magic, version, dtype, reserved, h, w, c = struct.unpack("<4sHBBIII", raw[:20])
        assert magic == b"WSFX"
        assert (version, dtype, reserved) == (1, 0, 0)
        assert (h, w, c) == (1, 1, 1)
        assert raw[20:] == b"\x00\x00\x00\x00"

    def test_2x3x4_payload_and_width_field(self, tmp_path):
        # 2*3*4 values * 4 bytes = 96 payload bytes; width is the u32 at offset 12
        path = tmp_path / "m.wsfx"
        write_feature_map(np.arange(24, dtype=np.float32).reshape(2, 3, 4), path)
        raw = path.read_bytes()
        assert len(raw) - WSFX_HEADER_SIZE == 96
        assert struct.unpack_from("<I", raw, 12)[0] == 3

    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(3)
        for shape in [(1, 1, 1), (2, 3, 4), (7, 5, 16)]:
            arr = rng.standard_normal(shape).astype(np.float32)
            path = tmp_path / "rt.wsfx"
            write_feature_map(arr, path)
            back = read_feature_map(path)
            assert back.shape == arr.shape
            assert back.tobytes() == arr.tobytes()

    def test_layout_is_channel_fastest(self, tmp_path):
        arr = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
        path = tmp_path / "order.wsfx"
        write_feature_map(arr, path)
        payload = np.frombuffer(path.read_bytes()[WSFX_HEADER_SIZE:], dtype="<f4")
        assert payload.tolist() == [0, 1, 2, 3, 4, 5, 6, 7]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.wsfx"
        write_feature_map(np.zeros((1, 1, 1), dtype=np.float32), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            read_feature_map(path)

    def test_bad_version_and_dtype(self, tmp_path):
        path = tmp_path / "v.wsfx"
        write_feature_map(np.zeros((1, 1, 1), dtype=np.float32), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedVersionError):
            read_feature_map(path)
        raw[4] = 1
        raw[6] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedDtypeError):
            read_feature_map(path)

    def test_truncated_payload(self, tmp_path):
        # header declares 2x2x2 (32 payload bytes) but only 28 are present
        path = tmp_path / "t.wsfx"
        write_feature_map(np.zeros((2, 2, 2), dtype=np.float32), path)
        raw = path.read_bytes()
        assert len(raw) == WSFX_HEADER_SIZE + 32
        path.write_bytes(raw[:-4])
        with pytest.raises(TruncatedPayloadError):
            read_feature_map(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "x.wsfx"
        write_feature_map(np.zeros((1, 1, 1), dtype=np.float32), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FeatureFileError):
            read_feature_map(path)

    def test_write_rejects_bad_input(self, tmp_path):
        with pytest.raises(ValueError):
            write_feature_map(np.zeros((2, 2)), tmp_path / "r.wsfx")
        bad = np.zeros((1, 1, 2), dtype=np.float32)
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            write_feature_map(bad, tmp_path / "n.wsfx")

    def test_read_missing_file(self, tmp_path):
        with pytest.raises(FeatureFileError):
            read_feature_map(tmp_path / "absent.wsfx")


class TestManifest:
    def _entries(self):
        return [
            ManifestEntry("n0", "train-normal", 0, "features/n0.wsfx"),
            ManifestEntry("n1", "train-normal", 0, "features/n1.wsfx"),
            ManifestEntry("a0", "train-anomaly", 1, "features/a0.wsfx", "masks/a0.wsfx"),
            ManifestEntry("t0", "test", 0, "features/t0.wsfx"),
            ManifestEntry("t1", "test", 1, "features/t1.wsfx", "masks/t1.wsfx"),
        ]

    def test_save_load_round_trip(self, tmp_path):
        manifest = DatasetManifest(entries=self._entries(), root=tmp_path)
        manifest.save(tmp_path / "manifest.jsonl")
        back = DatasetManifest.load(tmp_path / "manifest.jsonl")
        assert back.entries == manifest.entries
        assert back.root == tmp_path
        assert back.n_normal_train == 2
        assert back.n_anomaly_train == 1
        assert [e.id for e in back.test()] == ["t0", "t1"]

    def test_label_split_semantics_enforced(self):
        with pytest.raises(ManifestError):
            DatasetManifest(entries=[ManifestEntry("x", "train-normal", 1, "x.wsfx")])
        with pytest.raises(ManifestError):
            DatasetManifest(entries=[ManifestEntry("x", "train-anomaly", 0, "x.wsfx")])
        with pytest.raises(ManifestError):
            DatasetManifest(entries=[ManifestEntry("x", "validation", 0, "x.wsfx")])

    def test_many_anomalies_warns_but_loads(self):
        entries = [
            ManifestEntry("n0", "train-normal", 0, "n0.wsfx"),
            ManifestEntry("a0", "train-anomaly", 1, "a0.wsfx"),
            ManifestEntry("a1", "train-anomaly", 1, "a1.wsfx"),
        ]
        with pytest.warns(UserWarning, match="weak supervision"):
            manifest = DatasetManifest(entries=entries)
        assert manifest.n_anomaly_train == 2

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id": "x"}\n')
        with pytest.raises(ManifestError):
            DatasetManifest.load(path)


class TestSyntheticGenerator:
    def test_deterministic_bytes(self, tmp_path):
        config = SynthConfig(
            seed=11, n_normal_train=3, n_anomaly_train=2, n_normal_test=2,
            n_anomaly_test=2, height=6, width=5, channels=4,
            blob_height=2, blob_width=3,
        )
        m1 = generate_synthetic(config, tmp_path / "a")
        m2 = generate_synthetic(config, tmp_path / "b")
        for e1, e2 in zip(m1.entries, m2.entries):
            assert e1.id == e2.id
            b1 = (tmp_path / "a" / e1.feature_path).read_bytes()
            b2 = (tmp_path / "b" / e2.feature_path).read_bytes()
            assert b1 == b2
        assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (
            tmp_path / "b" / "manifest.jsonl"
        ).read_bytes()

    def test_mask_marks_exactly_blob_cells(self, tmp_path):
        config = SynthConfig(seed=0, n_normal_train=5, n_anomaly_train=4,
                             n_normal_test=0, n_anomaly_test=3)
        manifest = generate_synthetic(config, tmp_path)
        anomalies = [e for e in manifest.entries if e.mask_path]
        assert len(anomalies) == 7
        for entry in anomalies:
            mask = read_feature_map(manifest.resolve(entry.mask_path))
            assert mask.shape == (16, 16, 1)
            assert int((mask > 0.5).sum()) == 25

    def test_noise_free_shift_distance(self, tmp_path):
        shift = 3.0
        config = SynthConfig(seed=5, n_normal_train=2, n_anomaly_train=1,
                             n_normal_test=0, n_anomaly_test=0,
                             noise_sigma=0.0, shift_magnitude=shift)
        manifest = generate_synthetic(config, tmp_path)
        normal = read_feature_map(manifest.resolve(manifest.train_normal()[0].feature_path))
        entry = manifest.train_anomaly()[0]
        anomaly = read_feature_map(manifest.resolve(entry.feature_path))
        mask = read_feature_map(manifest.resolve(entry.mask_path))[:, :, 0] > 0.5
        base = normal[0, 0].astype(np.float64)
        for h, w in zip(*np.nonzero(mask)):
            d = np.linalg.norm(anomaly[h, w].astype(np.float64) - base)
            assert abs(d - shift) / shift < 1e-5
        for h, w in zip(*np.nonzero(~mask)):
            assert np.array_equal(anomaly[h, w], normal[0, 0])

    def test_zero_shift_has_no_signal(self, tmp_path):
        from wsad import AggregationConfig, build_bank, build_report, knn_score_image
        from wsad.aggregation import extract_patch_sets
        from wsad.inference import ImageResult

        config = SynthConfig(seed=3, n_normal_train=10, n_anomaly_train=0,
                             n_normal_test=12, n_anomaly_test=12,
                             height=8, width=8, channels=8,
                             blob_height=3, blob_width=3, shift_magnitude=0.0)
        manifest = generate_synthetic(config, tmp_path)
        agg = AggregationConfig(patch_size=1)
        bank = build_bank(manifest, agg)
        results = []
        for entry, ps in zip(manifest.test(),
                             extract_patch_sets(manifest, manifest.test(), agg)):
            _, score = knn_score_image(bank, ps)
            results.append(ImageResult(entry.id, score, entry.label))
        auroc_value = build_report(results).auroc
        assert 0.3 < auroc_value < 0.7

    def test_blob_too_large(self):
        with pytest.raises(SynthConfigError):
            SynthConfig(height=4, width=4, blob_height=5, blob_width=2)

    def test_manifest_schema_fields(self, tmp_path):
        config = SynthConfig(seed=1, n_normal_train=2, n_anomaly_train=1,
                             n_normal_test=1, n_anomaly_test=1)
        generate_synthetic(config, tmp_path)
        lines = (tmp_path / "manifest.jsonl").read_text().strip().splitlines()
        assert len(lines) == 5
        for line in lines:
            obj = json.loads(line)
            assert set(obj) == {"id", "split", "label", "feature_path", "mask_path"}
