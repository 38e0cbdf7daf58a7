"""Named-tensor weight manifests and deterministic seeded initialization."""
from __future__ import annotations

import base64
import json
import zlib

import numpy as np

from .errors import FormatError, ShapeMismatch

# Tensors at or below this element count are stored as inline JSON arrays.
_INLINE_LIMIT = 64


def load_manifest(path) -> dict[str, np.ndarray]:
    """Read a weight manifest: {"tensors": {name: {"shape", "values"}}}.

    Values are either a base64 string of little-endian f32 or a nested JSON
    array for small tensors.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read weight manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or "tensors" not in doc or not isinstance(doc["tensors"], dict):
        raise FormatError(f"weight manifest {path} must contain a 'tensors' object")
    tensors = {}
    for name, entry in doc["tensors"].items():
        if not isinstance(entry, dict) or "shape" not in entry or "values" not in entry:
            raise FormatError(f"tensor {name!r} must carry 'shape' and 'values'")
        shape = tuple(int(s) for s in entry["shape"])
        values = entry["values"]
        if isinstance(values, str):
            raw = base64.b64decode(values.encode("ascii"), validate=True)
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        else:
            arr = np.asarray(values, dtype=np.float64).ravel()
        if arr.size != int(np.prod(shape)):
            raise FormatError(f"tensor {name!r}: {arr.size} values for shape {shape}")
        if not np.isfinite(arr).all():
            raise FormatError(f"tensor {name!r} contains non-finite values")
        tensors[name] = arr.reshape(shape)
    return tensors


def save_manifest(path, tensors: dict[str, np.ndarray]):
    doc = {"tensors": {}}
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.size <= _INLINE_LIMIT:
            values = arr.tolist()
        else:
            values = base64.b64encode(arr.astype("<f4").tobytes()).decode("ascii")
        doc["tensors"][name] = {"shape": list(arr.shape), "values": values}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def seeded_tensor(name: str, shape: tuple[int, ...], seed: int) -> np.ndarray:
    """Deterministic pseudo-random weights for one named tensor.

    The stream is keyed by (seed, crc32(name)) so a tensor's values do not
    depend on the order weights are materialized in.
    """
    rng = np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else int(shape[0])
    scale = 1.0 / np.sqrt(max(fan_in, 1))
    # float32 round-trip keeps seeded and manifest-loaded weights on the
    # same value lattice
    return rng.normal(0.0, scale, size=shape).astype("<f4").astype(np.float64)


def resolve_weights(required: dict[str, tuple[int, ...]], manifest: dict[str, np.ndarray] | None,
                    seed: int) -> dict[str, np.ndarray]:
    """All model tensors, either validated from a manifest or seeded.

    A provided manifest must cover every required name with matching shapes;
    with no manifest every tensor is generated from the seed.
    """
    if manifest is None:
        return {name: seeded_tensor(name, shape, seed) for name, shape in required.items()}
    missing = sorted(set(required) - set(manifest))
    if missing:
        raise ShapeMismatch(f"weight manifest is missing tensors: {', '.join(missing)}")
    out = {}
    for name, shape in required.items():
        arr = manifest[name]
        if tuple(arr.shape) != tuple(shape):
            raise ShapeMismatch(f"tensor {name!r} has shape {arr.shape}, model expects {shape}")
        out[name] = np.asarray(arr, dtype=np.float64)
    return out
