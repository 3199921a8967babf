"""Self-describing on-disk formats.

Image data travels as a pair: a small JSON header and a raw little-endian
float32 payload, pixel-interleaved (row-major height, width, channel). The
header names the payload file, so either path identifies the pair.
Endmembers are plain CSV with a heading row. Trained models are a single
JSON document with base64 tensors, so a checkpoint survives any transport
that preserves text.
"""

import base64
import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamSet, Tensor
from .errors import DataError
from .networks import ModelDims
from .training import TrainConfig

FORMAT_VERSION = 1
ABUNDANCE_SUM_TOL = 0.01


def _stem(path):
    path = os.fspath(path)
    return path[:-5] if path.endswith(".json") else path


def _require(header, key, path):
    if key not in header:
        raise DataError(f"{path}: header is missing {key!r}")
    return header[key]


def save_cube(path, data, kind="reflectance", wavelengths=None, band_names=None):
    """Write (H, W, C) data as `<stem>.json` + `<stem>.f32`."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise DataError(f"cube must be 3-d (height, width, channels), got {data.shape}")
    stem = _stem(path)
    payload = stem + ".f32"
    header = {
        "format_version": FORMAT_VERSION,
        "kind": str(kind),
        "height": int(data.shape[0]),
        "width": int(data.shape[1]),
        "bands": int(data.shape[2]),
        "dtype": "f32",
        "layout": "bip",
        "payload": os.path.basename(payload),
    }
    if wavelengths is not None:
        if len(wavelengths) != data.shape[2]:
            raise DataError(
                f"{len(wavelengths)} wavelengths for {data.shape[2]} bands")
        header["wavelengths"] = [float(w) for w in wavelengths]
    if band_names is not None:
        if len(band_names) != data.shape[2]:
            raise DataError(f"{len(band_names)} names for {data.shape[2]} bands")
        header["band_names"] = [str(b) for b in band_names]
    with open(stem + ".json", "w") as f:
        json.dump(header, f, indent=1)
        f.write("\n")
    data.astype("<f4").tofile(payload)
    return stem + ".json"


def load_cube(path, kind=None):
    """Read a header/payload pair; returns (array, header dict)."""
    stem = _stem(path)
    header_path = stem + ".json"
    try:
        with open(header_path) as f:
            header = json.load(f)
    except FileNotFoundError:
        raise DataError(f"{header_path}: no such file") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{header_path}: not valid JSON ({e})") from None
    version = _require(header, "format_version", header_path)
    if version != FORMAT_VERSION:
        raise DataError(f"{header_path}: format_version {version} unsupported")
    if kind is not None and header.get("kind") != kind:
        raise DataError(
            f"{header_path}: expected kind {kind!r}, found {header.get('kind')!r}")
    h = int(_require(header, "height", header_path))
    w = int(_require(header, "width", header_path))
    d = int(_require(header, "bands", header_path))
    if _require(header, "dtype", header_path) != "f32":
        raise DataError(f"{header_path}: only f32 payloads are supported")
    if _require(header, "layout", header_path) != "bip":
        raise DataError(f"{header_path}: only pixel-interleaved layout is supported")
    payload = os.path.join(os.path.dirname(header_path),
                           _require(header, "payload", header_path))
    want = h * w * d * 4
    try:
        got = os.path.getsize(payload)
    except FileNotFoundError:
        raise DataError(f"{payload}: payload file missing") from None
    if got != want:
        raise DataError(
            f"{payload}: payload is {got} bytes, header implies {want} "
            f"({h}x{w}x{d} float32)")
    data = np.fromfile(payload, dtype="<f4").reshape(h, w, d)
    return data, header


def save_abundance(path, abundances):
    return save_cube(path, abundances, kind="abundance")


def load_abundance(path):
    """Read abundance planes; rows must already be near the simplex and are
    renormalized exactly on the way in."""
    data, header = load_cube(path, kind="abundance")
    rows = data.reshape(-1, data.shape[-1]).astype(np.float64)
    sums = rows.sum(axis=1)
    off = np.abs(sums - 1.0)
    if (off > ABUNDANCE_SUM_TOL).any():
        i = int(np.argmax(off > ABUNDANCE_SUM_TOL))
        raise DataError(
            f"abundance rows must sum to 1 within {ABUNDANCE_SUM_TOL}; "
            f"pixel {i} sums to {sums[i]:.4f}")
    if (rows < 0).any():
        i = int(np.argmax((rows < 0).any(axis=1)))
        raise DataError(f"negative abundance at pixel {i}")
    rows = rows / sums[:, None]
    return rows.reshape(data.shape).astype(np.float32), header


def write_endmembers(path, endmembers, names=None):
    """CSV: one heading row, then one row per band with a column per material."""
    e = np.asarray(endmembers, dtype=np.float64)
    if e.ndim != 2:
        raise DataError(f"endmembers must be (bands, materials), got {e.shape}")
    if names is None:
        names = [f"material_{k}" for k in range(e.shape[1])]
    if len(names) != e.shape[1]:
        raise DataError(f"{len(names)} names for {e.shape[1]} materials")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        for row in e:
            writer.writerow([f"{v:.9g}" for v in row])
    return path


def read_endmembers(path):
    """Returns (endmembers (bands, materials) float64, material names)."""
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            rows = [r for r in reader if r]
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    if len(rows) < 2:
        raise DataError(f"{path}: expected a heading row and at least one band row")
    names = [c.strip() for c in rows[0]]
    k = len(names)
    data = np.empty((len(rows) - 1, k))
    for i, row in enumerate(rows[1:]):
        if len(row) != k:
            raise DataError(
                f"{path}: row {i + 2} has {len(row)} columns, heading has {k}")
        try:
            data[i] = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 2}: {exc}") from None
    if not np.isfinite(data).all():
        raise DataError(f"{path}: non-finite endmember value")
    return data, names


def _encode_array(a):
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": base64.b64encode(
        a.astype("<f4").tobytes()).decode("ascii")}


def _decode_array(obj, name, path):
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad tensor entry for {name!r}: {exc}") from None
    want = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
    if len(raw) != want:
        raise DataError(
            f"{path}: tensor {name!r} has {len(raw)} payload bytes, "
            f"shape {shape} implies {want}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


@dataclass
class Checkpoint:
    params: ParamSet
    dims: ModelDims
    input_bands: int
    config: TrainConfig
    history_rows: list


def save_checkpoint(path, result):
    """Serialize a TrainResult (or Checkpoint) to one JSON document."""
    ps = result.params
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "checkpoint",
        "dims": {
            "bands": result.dims.bands,
            "materials": result.dims.materials,
            "latent": result.dims.latent,
            "components": result.dims.components,
            "noise": result.dims.noise,
        },
        "input_bands": int(result.input_bands),
        "config": result.config.to_dict(),
        "params": {n: _encode_array(t.data) for n, t in sorted(ps.params.items())},
        "buffers": {n: _encode_array(b) for n, b in sorted(ps.buffers.items())},
        "adam": {
            "m": {n: _encode_array(v) for n, v in sorted(ps.adam_m.items())},
            "v": {n: _encode_array(v) for n, v in sorted(ps.adam_v.items())},
            "steps": dict(sorted(ps.adam_steps.items())),
        },
        "history": [dict(r) for r in getattr(
            result, "history_rows", None) or result.history.numeric_rows()],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    return path


def load_checkpoint(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON ({e})") from None
    if _require(doc, "format_version", path) != FORMAT_VERSION:
        raise DataError(f"{path}: format_version {doc['format_version']} unsupported")
    if doc.get("kind") != "checkpoint":
        raise DataError(f"{path}: not a checkpoint document")
    dims = ModelDims(**{k: int(v) for k, v in _require(doc, "dims", path).items()})
    config = TrainConfig.from_dict(_require(doc, "config", path))
    ps = ParamSet()
    for n, obj in _require(doc, "params", path).items():
        ps.params[n] = Tensor(_decode_array(obj, n, path), requires_grad=True)
    for n, obj in doc.get("buffers", {}).items():
        ps.buffers[n] = _decode_array(obj, n, path)
    adam = doc.get("adam", {})
    for n, obj in adam.get("m", {}).items():
        ps.adam_m[n] = _decode_array(obj, n, path)
    for n, obj in adam.get("v", {}).items():
        ps.adam_v[n] = _decode_array(obj, n, path)
    ps.adam_steps = {n: int(v) for n, v in adam.get("steps", {}).items()}
    return Checkpoint(params=ps, dims=dims, input_bands=int(doc["input_bands"]),
                      config=config, history_rows=doc.get("history", []))
