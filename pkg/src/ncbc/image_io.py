"""Image, ROI and configuration files.

Images are stored as a headerless row-major little-endian buffer
(``name.raw``) next to a JSON sidecar (``name.raw.json``) holding
``width``, ``height``, ``dtype`` and ``endianness``.  ``.pgm`` files are
16-bit (or 8-bit) previews whose sidecar records the intensity window so
values can be recovered.  See ``docs/formats.md``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .energy import EnergyWeights
from .errors import ConfigError, FormatError, ValidationError
from .inference import NcbcConfig
from .lattice import CliqueConfig, LatticeDims
from .metrics import Roi

RAW_DTYPES = {"float32": "<f4", "uint8": "u1", "uint16": "<u2"}
MAX_PIXELS = 1 << 28


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def atomic_write(path, data: bytes | str):
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_image(img, path, dtype: str = "float32"):
    path = Path(path)
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError(f"only 2D images can be saved, got shape {img.shape}")
    suffix = path.suffix.lower()
    if suffix == ".raw":
        if dtype not in RAW_DTYPES:
            raise FormatError(f"unsupported dtype {dtype!r}; expected one of {sorted(RAW_DTYPES)}")
        h, w = img.shape
        header = {"width": int(w), "height": int(h), "dtype": dtype, "endianness": "little"}
        payload = np.ascontiguousarray(img.astype(RAW_DTYPES[dtype])).tobytes()
        atomic_write(path, payload)
        atomic_write(sidecar_path(path), _dump_json(header))
    elif suffix == ".pgm":
        _save_pgm(img, path, 65535 if dtype != "uint8" else 255)
    else:
        raise FormatError(f"unrecognised image extension {path.suffix!r} for {path}")


def _save_pgm(img, path, maxval):
    img = np.asarray(img, dtype=float)
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        counts = np.rint((img - lo) / (hi - lo) * maxval)
    else:
        # constant image: everything maps to zero
        counts = np.zeros_like(img)
    h, w = img.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    # PGM stores 16-bit samples most significant byte first
    body = counts.astype(">u2" if maxval > 255 else "u1").tobytes()
    atomic_write(path, header + body)
    atomic_write(sidecar_path(path), _dump_json({"min": lo, "max": hi, "maxval": maxval}))


def load_image(path) -> np.ndarray:
    """Read a ``.raw`` image (in its stored dtype) or a ``.pgm`` preview.

    PGM counts are mapped back to intensities when the sidecar is present.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".raw":
        return _load_raw(path)
    if suffix == ".pgm":
        return _load_pgm(path)
    raise FormatError(f"unrecognised image extension {path.suffix!r} for {path}")


def _read_header(path: Path) -> dict:
    side = sidecar_path(path)
    try:
        text = side.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(f"missing sidecar {side}") from None
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed sidecar {side} at byte {exc.pos}: {exc.msg}") from None
    if not isinstance(header, dict):
        raise FormatError(f"malformed sidecar {side} at byte 0: expected an object")
    expected = {"width", "height", "dtype", "endianness"}
    if set(header) != expected:
        raise FormatError(f"sidecar {side} keys {sorted(header)} != {sorted(expected)}")
    for k in ("width", "height"):
        v = header[k]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise FormatError(f"sidecar {side}: {k} must be a positive integer, got {v!r}")
    if header["dtype"] not in RAW_DTYPES:
        raise FormatError(f"sidecar {side}: unsupported dtype {header['dtype']!r}")
    if header["endianness"] != "little":
        raise FormatError(f"sidecar {side}: endianness must be 'little'")
    if header["width"] * header["height"] > MAX_PIXELS:
        raise FormatError(f"sidecar {side}: dimensions {header['width']}x{header['height']} overflow")
    return header


def _load_raw(path: Path) -> np.ndarray:
    header = _read_header(path)
    w, h = header["width"], header["height"]
    dt = np.dtype(RAW_DTYPES[header["dtype"]])
    data = path.read_bytes()
    need = w * h * dt.itemsize
    if len(data) < need:
        raise FormatError(f"{path}: truncated payload, data ends at byte {len(data)} of {need}")
    if len(data) > need:
        raise FormatError(f"{path}: unexpected trailing data at byte {need}")
    arr = np.frombuffer(data, dtype=dt).reshape(h, w)
    return arr.astype(dt.newbyteorder("="))


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and (chr(data[pos]).isspace() or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end
            pos += 1
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"malformed PGM header at byte {start}")
        tokens.append((data[start:pos], start))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def _load_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0][0] != b"P5":
        raise FormatError(f"{path}: malformed PGM header at byte 0 (magic {tokens[0][0]!r})")
    values = []
    for tok, pos in tokens[1:]:
        if not tok.isdigit():
            raise FormatError(f"{path}: malformed PGM header at byte {pos}")
        values.append(int(tok))
    w, h, maxval = values
    if w < 1 or h < 1 or w * h > MAX_PIXELS:
        raise FormatError(f"{path}: dimensions {w}x{h} overflow at byte {tokens[1][1]}")
    if not 0 < maxval <= 65535:
        raise FormatError(f"{path}: invalid maxval {maxval} at byte {tokens[3][1]}")
    dt = np.dtype(">u2" if maxval > 255 else "u1")
    need = w * h * dt.itemsize
    if len(data) - offset < need:
        raise FormatError(f"{path}: truncated payload, data ends at byte {len(data)} of {offset + need}")
    counts = np.frombuffer(data, dtype=dt, count=w * h, offset=offset).reshape(h, w)
    side = sidecar_path(path)
    if not side.exists():
        return counts.astype(dt.newbyteorder("="))
    scale = json.loads(side.read_text(encoding="utf-8"))
    lo, hi = float(scale["min"]), float(scale["max"])
    return lo + counts.astype(float) / maxval * (hi - lo)


# ---------------------------------------------------------------- ROIs

ROI_KEYS = ("name", "x", "y", "w", "h")


def _roi_from_doc(doc, where: str) -> Roi:
    if not isinstance(doc, dict):
        raise ValidationError(f"{where}: roi must be an object")
    if set(doc) != set(ROI_KEYS):
        raise ValidationError(f"{where}: roi keys {sorted(doc)} != {sorted(ROI_KEYS)}")
    if not isinstance(doc["name"], str) or not doc["name"]:
        raise ValidationError(f"{where}.name: must be a non-empty string")
    for k in ROI_KEYS[1:]:
        v = doc[k]
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(f"{where}.{k}: roi {doc['name']!r} needs an integer, got {v!r}")
    return Roi(**doc)


def parse_rois(doc, dims: LatticeDims | None = None) -> list[Roi]:
    if not isinstance(doc, dict) or set(doc) != {"rois"} or not isinstance(doc["rois"], list):
        raise ValidationError('roi document must be {"rois": [...]}')
    rois, seen = [], set()
    for i, item in enumerate(doc["rois"]):
        roi = _roi_from_doc(item, f"rois[{i}]")
        if roi.name in seen:
            raise ValidationError(f"rois[{i}]: duplicate roi name {roi.name!r}")
        seen.add(roi.name)
        if dims is not None and not roi.fits(dims.shape):
            raise ValidationError(
                f"rois[{i}]: roi {roi.name!r} exceeds image bounds {dims.width}x{dims.height}"
            )
        rois.append(roi)
    return rois


def load_rois(path, dims: LatticeDims | None = None) -> list[Roi]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None
    return parse_rois(doc, dims)


def save_rois(rois, path):
    atomic_write(path, _dump_json({"rois": [r.to_dict() for r in rois]}))


# ---------------------------------------------------------------- config

_FLOAT, _INT, _BOOL, _STR = "float", "int", "bool", "str"

_SCHEMA = {
    "weights": {
        "alpha_u": _FLOAT,
        "alpha_p": "float_list",
        "intensity_sigma": _FLOAT,
        "bias_smooth_weight": _FLOAT,
    },
    "clique": {
        "base_prob": _FLOAT,
        "spatial_sigma": _FLOAT,
        "max_degree": _INT,
        "include_local_4": _BOOL,
        "resample_each_iteration": _BOOL,
    },
    "mu1": _FLOAT,
    "mu2": _FLOAT,
    "rho": _FLOAT,
    "eta": _FLOAT,
    "max_iters": _INT,
    "rel_tol": _FLOAT,
    "bias_init": _STR,
    "lowpass_sigma": "optional_float",
    "seed": _INT,
    "annotations": "object",
}


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _check_type(value, kind, where):
    ok = {
        _FLOAT: lambda v: _is_int(v) or isinstance(v, float),
        _INT: _is_int,
        _BOOL: lambda v: isinstance(v, bool),
        _STR: lambda v: isinstance(v, str),
        "optional_float": lambda v: v is None or _is_int(v) or isinstance(v, float),
        "float_list": lambda v: isinstance(v, list)
        and all(_is_int(x) or isinstance(x, float) for x in v),
        "object": lambda v: isinstance(v, dict),
    }[kind]
    if not ok(value):
        raise ValidationError(f"{where}: expected {kind}, got {value!r}")
    if kind == _FLOAT and not math.isfinite(value):
        raise ValidationError(f"{where}: must be finite, got {value!r}")


def _validated(doc, schema, prefix=""):
    if not isinstance(doc, dict):
        raise ValidationError(f"{prefix or '<root>'}: expected an object")
    out = {}
    for key, value in doc.items():
        where = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            raise ValidationError(f"{where}: unknown key")
        kind = schema[key]
        if isinstance(kind, dict):
            out[key] = _validated(value, kind, where)
        else:
            _check_type(value, kind, where)
            out[key] = value
    return out


def config_from_dict(doc) -> NcbcConfig:
    doc = _validated(doc, _SCHEMA)
    try:
        weights = EnergyWeights(**doc.pop("weights", {}))
    except ConfigError as exc:
        raise ValidationError(f"weights: {exc}") from None
    try:
        clique = CliqueConfig(**doc.pop("clique", {}))
    except ConfigError as exc:
        raise ValidationError(f"clique: {exc}") from None
    try:
        return NcbcConfig(weights=weights, clique=clique, **doc)
    except ConfigError as exc:
        # messages start with the offending field name
        key = str(exc).split(" ", 1)[0]
        raise ValidationError(f"{key}: {exc}") from None


def config_to_dict(cfg: NcbcConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["weights"]["alpha_p"] = list(cfg.weights.alpha_p)
    return doc


def load_config(path) -> NcbcConfig:
    """Parse a JSON config; an empty document yields the defaults."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return NcbcConfig()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None
    return config_from_dict(doc)


def save_config(cfg: NcbcConfig, path):
    atomic_write(path, _dump_json(config_to_dict(cfg)))
