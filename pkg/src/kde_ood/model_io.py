"""Binary serialization of fitted pipeline models.

Layout (all integers little-endian):

    magic "KDEM", version u16, section count u16
    per section: 4-byte ASCII tag, payload length u64, payload
        SUBS  reference subset: seed u64, N u32, M u32, N x i64 indices
        LAYR  metric code u8, layer count u16, then per layer:
              id (len u16 + UTF-8), k_used u32, N u32, C u32,
              N*C float64 reference row-major, N float64 bandwidths
        FUSN  present u8; when present: L u16, L x f64 alpha, f64 bias,
              L x f64 means, L x f64 stds, meta length u32 + UTF-8 JSON
        CONF  canonical UTF-8 JSON config snapshot
    trailing u64 FNV-1a checksum over all preceding bytes

JSON blobs are written with sorted keys and no whitespace, so the same
model always produces the same bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import backend
from .errors import ModelFormatError
from .features import ReferenceSubset
from .fusion import FusionModel, TrainConfig
from .kde import DistanceMetric, LayerKdeModel

MODEL_MAGIC = b"KDEM"
MODEL_VERSION = 1

_SECTION_ORDER = (b"SUBS", b"LAYR", b"FUSN", b"CONF")


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"string too long to serialize: {len(raw)} bytes")
    return struct.pack("<H", len(raw)) + raw


def _subs_payload(subset: ReferenceSubset, m_total: int) -> bytes:
    return (
        struct.pack("<QII", subset.seed, subset.n, m_total)
        + np.ascontiguousarray(subset.indices, dtype="<i8").tobytes()
    )


def _layr_payload(layers, metric: DistanceMetric) -> bytes:
    parts = [struct.pack("<BH", metric.code, len(layers))]
    for model in layers:
        parts.append(_pack_str(model.layer_id))
        parts.append(struct.pack("<III", model.k_used, model.n_references,
                                 model.n_channels))
        parts.append(np.ascontiguousarray(model.reference, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(model.bandwidths, dtype="<f8").tobytes())
    return b"".join(parts)


def _fusn_payload(fusion: FusionModel | None, meta: dict | None) -> bytes:
    if fusion is None:
        return struct.pack("<B", 0)
    meta_obj = dict(meta or {})
    cfg = fusion.train_config
    meta_obj["train_config"] = {
        "learning_rate": cfg.learning_rate,
        "max_epochs": cfg.max_epochs,
        "l2_penalty": cfg.l2_penalty,
        "convergence_tol": cfg.convergence_tol,
        "seed": cfg.seed,
        "standardize": cfg.standardize,
    }
    meta_obj["diagnostics"] = {
        "epochs_run": fusion.epochs_run,
        "final_loss": fusion.final_loss,
        "converged": fusion.converged,
        "train_accuracy": fusion.train_accuracy,
    }
    meta_raw = _canonical_json(meta_obj)
    return b"".join([
        struct.pack("<BH", 1, fusion.n_layers),
        np.ascontiguousarray(fusion.alpha, dtype="<f8").tobytes(),
        struct.pack("<d", fusion.bias),
        np.ascontiguousarray(fusion.means, dtype="<f8").tobytes(),
        np.ascontiguousarray(fusion.stds, dtype="<f8").tobytes(),
        struct.pack("<I", len(meta_raw)),
        meta_raw,
    ])


def model_bytes(subset: ReferenceSubset, m_total: int, layers,
                metric: DistanceMetric, fusion: FusionModel | None,
                fusion_meta: dict | None, config_snapshot: dict) -> bytes:
    """Serialize the model parts; see the module docstring for the layout."""
    sections = {
        b"SUBS": _subs_payload(subset, m_total),
        b"LAYR": _layr_payload(layers, metric),
        b"FUSN": _fusn_payload(fusion, fusion_meta),
        b"CONF": _canonical_json(config_snapshot),
    }
    parts = [MODEL_MAGIC, struct.pack("<HH", MODEL_VERSION, len(_SECTION_ORDER))]
    for tag in _SECTION_ORDER:
        payload = sections[tag]
        parts.append(tag)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    body = b"".join(parts)
    return body + struct.pack("<Q", backend.fnv1a64(body))


class _Reader:
    """Cursor over the raw bytes with offset-annotated errors."""

    def __init__(self, data: bytes, label: str):
        self.data = data
        self.pos = 0
        self.label = label

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise ModelFormatError(
                f"{self.label}: truncated at byte {self.pos} "
                f"(needed {count} more bytes)"
            )
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def take_str(self) -> str:
        (length,) = self.unpack("<H")
        raw = self.take(length)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError(
                f"{self.label}: invalid UTF-8 string at byte {self.pos - length}"
            ) from exc

    def take_f64(self, count: int) -> np.ndarray:
        raw = self.take(count * 8)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def done(self):
        if self.pos != len(self.data):
            raise ModelFormatError(
                f"{self.label}: {len(self.data) - self.pos} trailing bytes "
                f"after byte {self.pos}"
            )


def _parse_subs(payload: bytes):
    r = _Reader(payload, "SUBS section")
    seed, n, m_total = r.unpack("<QII")
    raw = r.take(n * 8)
    indices = np.frombuffer(raw, dtype="<i8").astype(np.int64)
    r.done()
    try:
        subset = ReferenceSubset(indices=indices, seed=seed)
    except ValueError as exc:
        raise ModelFormatError(f"SUBS section: {exc}") from exc
    if subset.n != n:
        raise ModelFormatError(
            f"SUBS section: declared {n} indices, payload holds {subset.n}"
        )
    return subset, m_total


def _parse_layr(payload: bytes):
    r = _Reader(payload, "LAYR section")
    metric_code, layer_count = r.unpack("<BH")
    if metric_code not in (backend.METRIC_L1, backend.METRIC_L2):
        raise ModelFormatError(f"LAYR section: unknown metric code {metric_code}")
    metric = DistanceMetric.L1 if metric_code == backend.METRIC_L1 else DistanceMetric.L2
    if layer_count < 1:
        raise ModelFormatError("LAYR section: model must contain at least one layer")
    layers = []
    for _ in range(layer_count):
        layer_id = r.take_str()
        k_used, n, c = r.unpack("<III")
        reference = r.take_f64(n * c).reshape(n, c)
        bandwidths = r.take_f64(n)
        try:
            layers.append(LayerKdeModel(
                layer_id=layer_id,
                reference=reference,
                bandwidths=bandwidths,
                metric=metric,
                k_used=k_used,
            ))
        except ValueError as exc:
            raise ModelFormatError(f"LAYR section, layer {layer_id!r}: {exc}") from exc
    r.done()
    ids = [m.layer_id for m in layers]
    if len(set(ids)) != len(ids):
        raise ModelFormatError("LAYR section: duplicate layer id")
    return layers, metric


def _parse_fusn(payload: bytes):
    r = _Reader(payload, "FUSN section")
    (present,) = r.unpack("<B")
    if present == 0:
        r.done()
        return None, None
    if present != 1:
        raise ModelFormatError(f"FUSN section: invalid presence flag {present}")
    (n_layers,) = r.unpack("<H")
    alpha = r.take_f64(n_layers)
    (bias,) = r.unpack("<d")
    means = r.take_f64(n_layers)
    stds = r.take_f64(n_layers)
    (meta_len,) = r.unpack("<I")
    meta_raw = r.take(meta_len)
    r.done()
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"FUSN section: invalid metadata JSON: {exc}") from exc
    cfg_obj = meta.pop("train_config", {})
    diag = meta.pop("diagnostics", {})
    try:
        config = TrainConfig(**cfg_obj)
        fusion = FusionModel(
            alpha=alpha,
            bias=bias,
            means=means,
            stds=stds,
            train_config=config,
            epochs_run=int(diag.get("epochs_run", 0)),
            final_loss=float(diag.get("final_loss", float("nan"))),
            converged=bool(diag.get("converged", False)),
            train_accuracy=float(diag.get("train_accuracy", float("nan"))),
        )
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"FUSN section: {exc}") from exc
    return fusion, meta


def parse_model_bytes(data: bytes):
    """Parse a serialized model; returns a dict of its parts.

    Raises ModelFormatError on any structural problem, with byte offsets.
    """
    if len(data) < 16:
        raise ModelFormatError(f"not a model file: only {len(data)} bytes")
    if data[:4] != MODEL_MAGIC:
        raise ModelFormatError(
            f"bad magic at byte 0: expected {MODEL_MAGIC!r}, got {data[:4]!r}"
        )
    stored = struct.unpack("<Q", data[-8:])[0]
    computed = backend.fnv1a64(data[:-8])
    if stored != computed:
        raise ModelFormatError(
            f"checksum mismatch: stored {stored:016x}, computed {computed:016x}"
        )
    r = _Reader(data[:-8], "model header")
    r.take(4)  # magic
    version, section_count = r.unpack("<HH")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    sections = {}
    for _ in range(section_count):
        tag = r.take(4)
        (length,) = r.unpack("<Q")
        start = r.pos
        payload = r.take(length)
        if tag in sections:
            raise ModelFormatError(
                f"duplicate section {tag!r} at byte {start - 12}"
            )
        sections[tag] = payload
    r.done()
    for tag in _SECTION_ORDER:
        if tag not in sections:
            raise ModelFormatError(f"missing section {tag!r}")

    subset, m_total = _parse_subs(sections[b"SUBS"])
    layers, metric = _parse_layr(sections[b"LAYR"])
    fusion, fusion_meta = _parse_fusn(sections[b"FUSN"])
    try:
        config_snapshot = json.loads(sections[b"CONF"].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"CONF section: invalid JSON: {exc}") from exc

    for model in layers:
        if model.n_references != subset.n:
            raise ModelFormatError(
                f"layer {model.layer_id!r} has {model.n_references} references "
                f"but the subset holds {subset.n} indices"
            )
    if fusion is not None and fusion.n_layers != len(layers):
        raise ModelFormatError(
            f"fusion covers {fusion.n_layers} layers, model has {len(layers)}"
        )
    return {
        "subset": subset,
        "m_total": m_total,
        "layers": layers,
        "metric": metric,
        "fusion": fusion,
        "fusion_meta": fusion_meta,
        "config_snapshot": config_snapshot,
        "version": version,
    }


def write_model_file(path, subset, m_total, layers, metric, fusion,
                     fusion_meta, config_snapshot):
    data = model_bytes(subset, m_total, layers, metric, fusion, fusion_meta,
                       config_snapshot)
    with open(path, "wb") as fh:
        fh.write(data)


def read_model_file(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_model_bytes(data)
