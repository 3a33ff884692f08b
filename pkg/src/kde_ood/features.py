"""Feature file store: binary format, validation, manifests, subsampling.

A feature file holds, for one dataset, the per-layer channel-mean vectors of
every sample. Binary layout (little-endian):

    magic "KDEF" | version u16 = 1 | layer count u16
    per layer: id length u16, id UTF-8 bytes, n_samples u32, n_channels u32,
               payload n_samples*n_channels float32 row-major
    trailer: FNV-1a 64-bit checksum over all preceding bytes

A dataset manifest is a JSON sidecar describing provenance; its ``checksum``
field (hex string, to stay exact in JSON consumers without 64-bit ints) must
equal the feature file's trailing checksum.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend import fnv1a64

MAGIC = b"KDEF"
FORMAT_VERSION = 1

MANIFEST_ROLES = ("in_distribution_train", "in_distribution_test", "perturbed", "ood")


class FeatureFormatError(ValueError):
    """A feature file or feature set violates the format contract."""


class MalformedHeaderError(FeatureFormatError):
    pass


class ChecksumMismatchError(FeatureFormatError):
    pass


class NonFiniteValueError(FeatureFormatError):
    pass


class InconsistentRowCountError(FeatureFormatError):
    pass


@dataclass
class LayerFeatureSet:
    """Per-layer matrices of channel-mean feature vectors for one dataset.

    ``layers`` is an ordered list of ``(layer_id, matrix)`` pairs; matrices
    are float32 with one row per sample. Row counts must agree across layers.
    """

    dataset_name: str
    layers: list[tuple[str, np.ndarray]]

    def __post_init__(self):
        if not self.layers:
            raise FeatureFormatError("a feature set needs at least one layer")
        norm = []
        seen = set()
        n_rows = None
        for layer_id, mat in self.layers:
            if layer_id in seen:
                raise FeatureFormatError(f"duplicate layer id {layer_id!r}")
            seen.add(layer_id)
            # always copy: freezing a view would freeze the caller's array
            mat = np.array(mat, dtype=np.float32, order="C")
            if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
                raise FeatureFormatError(
                    f"layer {layer_id!r}: expected a non-empty 2-D matrix, got shape {mat.shape}"
                )
            if n_rows is None:
                n_rows = mat.shape[0]
            elif mat.shape[0] != n_rows:
                raise InconsistentRowCountError(
                    f"layer {layer_id!r} has {mat.shape[0]} rows, expected {n_rows}"
                )
            bad = ~np.isfinite(mat)
            if bad.any():
                row = int(np.nonzero(bad.any(axis=1))[0][0])
                raise NonFiniteValueError(
                    f"layer {layer_id!r} row {row}: non-finite feature value"
                )
            mat.setflags(write=False)
            norm.append((layer_id, mat))
        self.layers = norm

    @property
    def n_samples(self) -> int:
        return self.layers[0][1].shape[0]

    @property
    def layer_ids(self) -> list[str]:
        return [lid for lid, _ in self.layers]

    def layer(self, layer_id: str) -> np.ndarray:
        for lid, mat in self.layers:
            if lid == layer_id:
                return mat
        raise KeyError(layer_id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LayerFeatureSet):
            return NotImplemented
        return (
            self.dataset_name == other.dataset_name
            and self.layer_ids == other.layer_ids
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for (_, a), (_, b) in zip(self.layers, other.layers)
            )
        )


@dataclass
class DatasetManifest:
    """JSON sidecar describing a feature file's provenance."""

    dataset_name: str
    role: str
    source_path: str
    n_samples: int
    layer_ids: list[str]
    checksum: int  # trailing checksum of the feature file

    def __post_init__(self):
        if self.role not in MANIFEST_ROLES:
            raise FeatureFormatError(
                f"unknown role {self.role!r}; expected one of {MANIFEST_ROLES}"
            )

    def to_json(self) -> str:
        doc = {
            "dataset_name": self.dataset_name,
            "role": self.role,
            "source_path": self.source_path,
            "n_samples": self.n_samples,
            "layer_ids": self.layer_ids,
            "checksum": f"{self.checksum:016x}",
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        return cls(
            dataset_name=doc["dataset_name"],
            role=doc["role"],
            source_path=doc["source_path"],
            n_samples=int(doc["n_samples"]),
            layer_ids=list(doc["layer_ids"]),
            checksum=int(doc["checksum"], 16),
        )


@dataclass
class ReferenceSubset:
    """N distinct training-set indices drawn uniformly without replacement."""

    indices: np.ndarray
    seed: int
    n: int = field(init=False)

    def __post_init__(self):
        self.indices = np.array(self.indices, dtype=np.int64, order="C")
        if len(np.unique(self.indices)) != self.indices.size:
            raise ValueError("reference indices must be distinct")
        self.indices.setflags(write=False)
        self.n = int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReferenceSubset):
            return NotImplemented
        return (self.seed == other.seed
                and self.indices.tobytes() == other.indices.tobytes())


# --- deterministic RNG for subsampling --------------------------------------

_SM64_GAMMA = 0x9E3779B97F4A7C15
_U64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64_stream(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of splitmix64 seeded with ``seed``.

    Output i is mix64(seed + (i+1)*gamma); the mix is the standard splitmix64
    finalizer. Pinned here (rather than delegated to a library generator) so
    subsampling stays reproducible regardless of dependency versions.
    """
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = (np.uint64(seed & _U64) + idx * np.uint64(_SM64_GAMMA)) & np.uint64(_U64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def subsample_indices(m: int, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` distinct indices from [0, m) uniformly without replacement.

    Partial Fisher-Yates over the index array [0..m): step i swaps position i
    with position i + (z_i mod (m - i)), where z_i is the i-th splitmix64
    output for ``seed``. The modulo reduction carries a bias below m/2^64,
    negligible for any realistic m. A prefix property follows: for the same
    (seed, m), smaller n yields a prefix of larger n's indices.
    """
    if n < 1:
        raise ValueError("subset size must be at least 1")
    if n > m:
        raise ValueError(f"subset size {n} exceeds population size {m}")
    z = _splitmix64_stream(seed, n)
    offsets = z % (np.uint64(m) - np.arange(n, dtype=np.uint64))
    arr = np.arange(m, dtype=np.int64)
    for i in range(n):
        j = i + int(offsets[i])
        arr[i], arr[j] = arr[j], arr[i]
    out = arr[:n].copy()
    out.setflags(write=False)
    return out


def subsample(manifest: DatasetManifest, n: int, seed: int) -> ReferenceSubset:
    """Uniform reference subset of the dataset described by ``manifest``."""
    return ReferenceSubset(subsample_indices(manifest.n_samples, n, seed), seed=seed)


# --- binary I/O ---------------------------------------------------------------


def write_feature_file(fset: LayerFeatureSet, path) -> None:
    """Serialize ``fset``; ``read_feature_file`` restores it bit-exactly."""
    payload = feature_file_bytes(fset)
    Path(path).write_bytes(payload)


def feature_file_bytes(fset: LayerFeatureSet) -> bytes:
    if not isinstance(fset, LayerFeatureSet):
        raise FeatureFormatError("expected a LayerFeatureSet")
    parts = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(fset.layers))]
    for layer_id, mat in fset.layers:
        ident = layer_id.encode("utf-8")
        if len(ident) > 0xFFFF:
            raise FeatureFormatError(f"layer id too long: {layer_id!r}")
        parts.append(struct.pack("<H", len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<II", mat.shape[0], mat.shape[1]))
        parts.append(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def read_feature_file(path, dataset_name: str | None = None) -> LayerFeatureSet:
    """Load and validate a feature file.

    ``dataset_name`` defaults to the manifest sidecar's name when one exists
    next to the file, else the file stem (the binary format itself carries no
    dataset name).
    """
    path = Path(path)
    data = path.read_bytes()
    if dataset_name is None:
        mpath = manifest_path(path)
        if mpath.exists():
            dataset_name = DatasetManifest.from_json(mpath.read_text("utf-8")).dataset_name
        else:
            dataset_name = path.stem
    return parse_feature_bytes(data, dataset_name)


def parse_feature_bytes(data: bytes, dataset_name: str) -> LayerFeatureSet:
    if len(data) < 16:
        raise MalformedHeaderError(f"file too short ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise MalformedHeaderError(f"bad magic {data[:4]!r} at offset 0")
    stored = struct.unpack_from("<Q", data, len(data) - 8)[0]
    actual = fnv1a64(data[:-8])
    if stored != actual:
        raise ChecksumMismatchError(
            f"checksum mismatch at offset {len(data) - 8}: "
            f"stored {stored:016x}, computed {actual:016x}"
        )
    version, layer_count = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"unsupported format version {version} at offset 4")
    if layer_count < 1:
        raise MalformedHeaderError("layer count is zero at offset 6")
    off = 8
    end = len(data) - 8
    layers: list[tuple[str, np.ndarray]] = []
    for _ in range(layer_count):
        if off + 2 > end:
            raise MalformedHeaderError(f"truncated layer header at offset {off}")
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + id_len + 8 > end:
            raise MalformedHeaderError(f"truncated layer header at offset {off}")
        try:
            layer_id = data[off : off + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedHeaderError(f"invalid layer id bytes at offset {off}") from exc
        off += id_len
        n_samples, n_channels = struct.unpack_from("<II", data, off)
        off += 8
        if n_samples < 1 or n_channels < 1:
            raise MalformedHeaderError(
                f"layer {layer_id!r}: empty matrix declared at offset {off - 8}"
            )
        nbytes = n_samples * n_channels * 4
        if off + nbytes > end:
            raise MalformedHeaderError(
                f"layer {layer_id!r}: payload overruns file at offset {off}"
            )
        mat = np.frombuffer(data, dtype="<f4", count=n_samples * n_channels, offset=off)
        mat = mat.reshape(n_samples, n_channels)
        off += nbytes
        bad = ~np.isfinite(mat)
        if bad.any():
            row = int(np.nonzero(bad.any(axis=1))[0][0])
            raise NonFiniteValueError(
                f"layer {layer_id!r} row {row}: non-finite value in payload"
            )
        layers.append((layer_id, mat))
    if off != end:
        raise MalformedHeaderError(f"{end - off} trailing bytes before checksum")
    return LayerFeatureSet(dataset_name=dataset_name, layers=layers)


# --- manifests ----------------------------------------------------------------


def manifest_path(feature_path) -> Path:
    return Path(str(feature_path) + ".manifest.json")


def write_manifest(fset: LayerFeatureSet, feature_path, role: str,
                   source_path: str = "") -> DatasetManifest:
    """Write the JSON sidecar for an already-written feature file."""
    data = Path(feature_path).read_bytes()
    checksum = struct.unpack_from("<Q", data, len(data) - 8)[0]
    manifest = DatasetManifest(
        dataset_name=fset.dataset_name,
        role=role,
        source_path=source_path,
        n_samples=fset.n_samples,
        layer_ids=fset.layer_ids,
        checksum=checksum,
    )
    manifest_path(feature_path).write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def load_with_manifest(feature_path) -> tuple[LayerFeatureSet, DatasetManifest]:
    """Load a feature file and verify it against its manifest sidecar."""
    feature_path = Path(feature_path)
    manifest = DatasetManifest.from_json(manifest_path(feature_path).read_text("utf-8"))
    data = feature_path.read_bytes()
    stored = struct.unpack_from("<Q", data, len(data) - 8)[0]
    if stored != manifest.checksum:
        raise ChecksumMismatchError(
            f"manifest checksum {manifest.checksum:016x} does not match "
            f"file checksum {stored:016x}"
        )
    fset = parse_feature_bytes(data, manifest.dataset_name)
    if fset.n_samples != manifest.n_samples:
        raise InconsistentRowCountError(
            f"manifest declares {manifest.n_samples} samples, file has {fset.n_samples}"
        )
    if fset.layer_ids != list(manifest.layer_ids):
        raise FeatureFormatError(
            f"manifest layer ids {manifest.layer_ids} do not match file {fset.layer_ids}"
        )
    return fset, manifest
