"""Binary persistence for datasets and model checkpoints.

Layout of both formats:

    8-byte magic | u32 version (LE) | u32 metadata length (LE)
    | metadata: UTF-8 JSON (canonical: sorted keys, no spaces)
    | payload: little-endian float64 values in declared order

Writers are deterministic: the same object always produces the same
bytes. Readers validate magic, version, metadata integrity, and exact
payload length, and raise FormatError subclasses instead of crashing on
corrupt input.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .datasets import Dataset
from .errors import DataError, FormatError, UnsupportedVersionError
from .models import DualEncoderModel, EncoderSpec
from .tensor import Tensor

DATASET_MAGIC = b"PXLDSET1"
CHECKPOINT_MAGIC = b"PXLCKPT1"
FORMAT_VERSION = 1


def _canonical_json(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_blob(path, magic: bytes, meta: dict, payload: np.ndarray) -> None:
    body = _canonical_json(meta)
    raw = np.ascontiguousarray(payload, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(body)))
        fh.write(body)
        fh.write(raw)


def _read_blob(path, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(magic) + 8:
        raise FormatError(f"{path}: file shorter than the fixed header")
    if blob[:8] != magic:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {magic!r}")
    version, meta_len = struct.unpack_from("<II", blob, 8)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, "
                                      f"this reader supports {FORMAT_VERSION}")
    if len(blob) < 16 + meta_len:
        raise FormatError(f"{path}: truncated metadata "
                          f"({len(blob) - 16} of {meta_len} bytes)")
    try:
        meta = json.loads(blob[16:16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: metadata is not valid JSON: {exc}") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{path}: metadata must be a JSON object")
    return meta, blob[16 + meta_len:]


def _payload_array(path, raw: bytes, count: int) -> np.ndarray:
    expected = count * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def save_dataset(dataset: Dataset, path) -> None:
    meta = {
        "schema": "dataset",
        "domain_id": dataset.domain_id,
        "num_classes": int(dataset.num_classes),
        "num_samples": int(dataset.num_samples),
        "input_dim": int(dataset.input_dim),
        "saturation": float(dataset.saturation),
        "labels": [int(v) for v in dataset.labels],
    }
    _write_blob(path, DATASET_MAGIC, meta, dataset.features.reshape(-1))


def load_dataset(path) -> Dataset:
    meta, raw = _read_blob(path, DATASET_MAGIC)
    try:
        n = int(meta["num_samples"])
        dim = int(meta["input_dim"])
        labels = np.asarray(meta["labels"], dtype=np.int64)
        domain_id = str(meta["domain_id"])
        num_classes = int(meta["num_classes"])
        saturation = float(meta.get("saturation", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete dataset metadata: {exc}") from exc
    if labels.shape != (n,):
        raise FormatError(f"{path}: {labels.size} labels for {n} declared samples")
    features = _payload_array(path, raw, n * dim).reshape(n, dim)
    try:
        return Dataset(domain_id=domain_id, features=features, labels=labels,
                       num_classes=num_classes, saturation=saturation)
    except DataError as exc:
        raise FormatError(f"{path}: stored dataset violates invariants: {exc}") from exc


def save_checkpoint(model: DualEncoderModel, path, seed: int = 0) -> None:
    params = model.parameters()
    meta = {
        "schema": "checkpoint",
        "image_spec": {
            "input_dim": model.image_spec.input_dim,
            "hidden_dims": list(model.image_spec.hidden_dims),
            "embed_dim": model.image_spec.embed_dim,
            "activation": model.image_spec.activation,
        },
        "text_spec": {
            "input_dim": model.text_spec.input_dim,
            "hidden_dims": list(model.text_spec.hidden_dims),
            "embed_dim": model.text_spec.embed_dim,
            "activation": model.text_spec.activation,
        },
        "num_classes": int(model.num_classes),
        "temperature": float(model.temperature),
        "seed": int(seed),
        "params": [{"name": name, "shape": list(p.shape)}
                   for name, p in zip(model.param_names(), params)],
    }
    payload = np.concatenate([p.data.reshape(-1) for p in params])
    _write_blob(path, CHECKPOINT_MAGIC, meta, payload)


def load_checkpoint(path) -> DualEncoderModel:
    meta, raw = _read_blob(path, CHECKPOINT_MAGIC)
    try:
        image_spec = EncoderSpec(
            input_dim=int(meta["image_spec"]["input_dim"]),
            hidden_dims=tuple(meta["image_spec"]["hidden_dims"]),
            embed_dim=int(meta["image_spec"]["embed_dim"]),
            activation=str(meta["image_spec"]["activation"]),
        )
        text_spec = EncoderSpec(
            input_dim=int(meta["text_spec"]["input_dim"]),
            hidden_dims=tuple(meta["text_spec"]["hidden_dims"]),
            embed_dim=int(meta["text_spec"]["embed_dim"]),
            activation=str(meta["text_spec"]["activation"]),
        )
        num_classes = int(meta["num_classes"])
        temperature = float(meta["temperature"])
        declared = [(str(p["name"]), tuple(int(s) for s in p["shape"]))
                    for p in meta["params"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete checkpoint metadata: {exc}") from exc

    expected = image_spec.param_count() + text_spec.param_count()
    total = sum(int(np.prod(shape)) for _, shape in declared)
    if total != expected:
        raise FormatError(f"{path}: {total} parameters declared, architecture "
                          f"requires {expected}")
    flat = _payload_array(path, raw, total)

    arrays = []
    offset = 0
    for _, shape in declared:
        size = int(np.prod(shape))
        arrays.append(flat[offset:offset + size].reshape(shape))
        offset += size
    n_image = 2 * len(image_spec.layer_dims())
    model = DualEncoderModel(
        image_spec=image_spec,
        text_spec=text_spec,
        num_classes=num_classes,
        theta=[Tensor(a) for a in arrays[:n_image]],
        phi=[Tensor(a) for a in arrays[n_image:]],
        temperature=temperature,
    )
    if declared != [(n, p.shape) for n, p in zip(model.param_names(), model.parameters())]:
        raise FormatError(f"{path}: parameter names or shapes do not match "
                          f"the declared architecture")
    return model
