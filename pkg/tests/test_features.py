"""Feature file format, manifests, and reference subsampling."""

import json
import struct

import numpy as np
import pytest

import oracles
from kde_ood.features import (
    ChecksumMismatchError,
    DatasetManifest,
    FeatureFormatError,
    InconsistentRowCountError,
    LayerFeatureSet,
    MalformedHeaderError,
    NonFiniteValueError,
    ReferenceSubset,
    feature_file_bytes,
    load_with_manifest,
    manifest_path,
    parse_feature_bytes,
    read_feature_file,
    subsample,
    subsample_indices,
    write_feature_file,
    write_manifest,
)


def _roundtrip(tmp_path, fset):
    path = tmp_path / "data.kdef"
    write_feature_file(fset, path)
    return read_feature_file(path, dataset_name=fset.dataset_name)


class TestRoundTrip:
    def test_single_layer(self, tmp_path):
        fset = LayerFeatureSet("toy", [("conv1", np.array([[1, 2, 3], [4, 5, 6]], np.float32))])
        back = _roundtrip(tmp_path, fset)
        assert back.n_samples == 2
        assert back == fset

    def test_one_by_one(self, tmp_path):
        fset = LayerFeatureSet("dot", [("only", np.array([[0.5]], np.float32))])
        path = tmp_path / "dot.kdef"
        write_feature_file(fset, path)
        # magic + version/count + id header + dims + one f4 + checksum
        assert path.stat().st_size == 4 + 4 + (2 + 4) + 8 + 4 + 8
        assert read_feature_file(path, "dot") == fset

    def test_varying_channel_counts_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        fset = LayerFeatureSet("multi", [
            ("a", rng.normal(size=(6, 3)).astype(np.float32)),
            ("b", rng.normal(size=(6, 9)).astype(np.float32)),
            ("c", rng.normal(size=(6, 1)).astype(np.float32)),
        ])
        first = feature_file_bytes(fset)
        again = feature_file_bytes(parse_feature_bytes(first, "multi"))
        assert first == again

    def test_empty_layer_list_rejected(self):
        with pytest.raises(FeatureFormatError):
            LayerFeatureSet("none", [])

    def test_checksum_matches_independent_fnv(self):
        fset = LayerFeatureSet("sum", [("x", np.eye(3, dtype=np.float32))])
        data = feature_file_bytes(fset)
        stored = struct.unpack("<Q", data[-8:])[0]
        assert stored == oracles.fnv1a64(data[:-8])

    def test_matrices_frozen_but_caller_array_untouched(self):
        mat = np.ones((2, 2), np.float32)
        fset = LayerFeatureSet("frozen", [("x", mat)])
        assert not fset.layer("x").flags.writeable
        assert mat.flags.writeable
        with pytest.raises(ValueError):
            fset.layer("x")[0, 0] = 9.0

    def test_dataset_name_defaults(self, tmp_path):
        fset = LayerFeatureSet("real-name", [("x", np.ones((1, 1), np.float32))])
        path = tmp_path / "stem.kdef"
        write_feature_file(fset, path)
        assert read_feature_file(path).dataset_name == "stem"
        write_manifest(fset, path, "ood")
        assert read_feature_file(path).dataset_name == "real-name"


class TestMalformedFiles:
    def _valid_bytes(self):
        fset = LayerFeatureSet("v", [("conv1", np.arange(6, dtype=np.float32).reshape(2, 3))])
        return feature_file_bytes(fset)

    def _reseal(self, body):
        return body + struct.pack("<Q", oracles.fnv1a64(body))

    def test_bad_magic(self):
        data = self._valid_bytes()
        with pytest.raises(MalformedHeaderError, match="offset 0"):
            parse_feature_bytes(b"XXXX" + data[4:], "v")

    def test_bad_version(self):
        data = bytearray(self._valid_bytes())
        struct.pack_into("<H", data, 4, 99)
        with pytest.raises(MalformedHeaderError, match="version 99"):
            parse_feature_bytes(self._reseal(bytes(data[:-8])), "v")

    def test_flipped_payload_byte(self):
        data = bytearray(self._valid_bytes())
        data[20] ^= 0xFF
        with pytest.raises(ChecksumMismatchError, match="checksum mismatch"):
            parse_feature_bytes(bytes(data), "v")

    def test_truncated_file(self):
        data = self._valid_bytes()
        with pytest.raises(MalformedHeaderError):
            parse_feature_bytes(data[:10], "v")

    def test_nan_payload_names_layer_and_row(self):
        mat = np.arange(6, dtype=np.float32).reshape(2, 3)
        body = b"".join([
            b"KDEF", struct.pack("<HH", 1, 1),
            struct.pack("<H", 5), b"conv9",
            struct.pack("<II", 2, 3),
            mat[0].tobytes(),
            struct.pack("<fff", 1.0, np.nan, 2.0),
        ])
        with pytest.raises(NonFiniteValueError, match="'conv9' row 1"):
            parse_feature_bytes(self._reseal(body), "v")

    def test_inconsistent_row_counts(self):
        a = np.ones((2, 2), np.float32)
        b = np.ones((3, 2), np.float32)
        body = b"".join([
            b"KDEF", struct.pack("<HH", 1, 2),
            struct.pack("<H", 1), b"a", struct.pack("<II", 2, 2), a.tobytes(),
            struct.pack("<H", 1), b"b", struct.pack("<II", 3, 2), b.tobytes(),
        ])
        with pytest.raises(InconsistentRowCountError, match="'b' has 3 rows"):
            parse_feature_bytes(self._reseal(body), "v")

    def test_duplicate_layer_ids(self):
        a = np.ones((1, 1), np.float32)
        body = b"".join([
            b"KDEF", struct.pack("<HH", 1, 2),
            struct.pack("<H", 1), b"a", struct.pack("<II", 1, 1), a.tobytes(),
            struct.pack("<H", 1), b"a", struct.pack("<II", 1, 1), a.tobytes(),
        ])
        with pytest.raises(FeatureFormatError, match="duplicate layer id"):
            parse_feature_bytes(self._reseal(body), "v")


class TestManifest:
    def test_roundtrip(self, tmp_path):
        fset = LayerFeatureSet("cifar", [("x", np.ones((4, 2), np.float32))])
        path = tmp_path / "cifar.kdef"
        write_feature_file(fset, path)
        manifest = write_manifest(fset, path, "in_distribution_train", source_path="/imgs")
        loaded, sidecar = load_with_manifest(path)
        assert loaded == fset
        assert sidecar == manifest
        assert sidecar.n_samples == 4
        assert sidecar.layer_ids == ["x"]

    def test_json_fields(self, tmp_path):
        fset = LayerFeatureSet("d", [("x", np.ones((1, 1), np.float32))])
        path = tmp_path / "d.kdef"
        write_feature_file(fset, path)
        manifest = write_manifest(fset, path, "ood")
        data = json.loads(manifest_path(path).read_text())
        assert set(data) == {"dataset_name", "role", "source_path", "n_samples",
                             "layer_ids", "checksum"}
        assert DatasetManifest.from_json(json.dumps(data)) == manifest

    def test_unknown_role_rejected(self):
        with pytest.raises(ValueError, match="unknown role"):
            DatasetManifest("d", "validation", "", 1, ["x"], 0)

    def test_tampered_file_fails_manifest_check(self, tmp_path):
        fset = LayerFeatureSet("d", [("x", np.ones((2, 2), np.float32))])
        path = tmp_path / "d.kdef"
        write_feature_file(fset, path)
        write_manifest(fset, path, "ood")
        raw = bytearray(path.read_bytes())
        raw[12] ^= 0x01
        body = bytes(raw[:-8])
        path.write_bytes(body + struct.pack("<Q", oracles.fnv1a64(body)))
        with pytest.raises(ChecksumMismatchError):
            load_with_manifest(path)


class TestSubsampling:
    def test_full_draw_is_permutation(self):
        idx = subsample_indices(10, 10, seed=123)
        assert sorted(idx.tolist()) == list(range(10))

    def test_determinism(self):
        a = subsample_indices(10, 3, seed=42)
        b = subsample_indices(10, 3, seed=42)
        assert a.tolist() == b.tolist()
        assert subsample_indices(10, 3, seed=43).tolist() != a.tolist()

    def test_distinct_and_in_range(self):
        idx = subsample_indices(1000, 400, seed=5)
        assert len(set(idx.tolist())) == 400
        assert idx.min() >= 0 and idx.max() < 1000

    def test_prefix_property(self):
        small = subsample_indices(200, 20, seed=9)
        large = subsample_indices(200, 150, seed=9)
        assert large[:20].tolist() == small.tolist()

    def test_bounds(self):
        with pytest.raises(ValueError):
            subsample_indices(5, 6, seed=0)
        with pytest.raises(ValueError):
            subsample_indices(5, 0, seed=0)

    def test_inclusion_frequency_uniform(self):
        # fixed seed sweep, so this is deterministic: every index's inclusion
        # rate must sit within 3 sigma of N/M
        m, n, trials = 40, 8, 4000
        counts = np.zeros(m)
        for seed in range(trials):
            counts[subsample_indices(m, n, seed)] += 1
        rate = counts / trials
        p = n / m
        sigma = np.sqrt(p * (1 - p) / trials)
        assert np.abs(rate - p).max() < 3 * sigma

    def test_subsample_from_manifest(self, tmp_path):
        fset = LayerFeatureSet("d", [("x", np.ones((30, 2), np.float32))])
        path = tmp_path / "d.kdef"
        write_feature_file(fset, path)
        manifest = write_manifest(fset, path, "in_distribution_train")
        subset = subsample(manifest, 12, seed=77)
        assert subset.n == 12
        assert subset.seed == 77
        assert subset.indices.tolist() == subsample_indices(30, 12, 77).tolist()

    def test_reference_subset_rejects_duplicates(self):
        with pytest.raises(ValueError, match="distinct"):
            ReferenceSubset(np.array([1, 1, 2]), seed=0)
