"""File formats: raw datacubes with a JSON header, map exports and run reports.

A cube is stored as a raw little-endian payload at ``path`` with a JSON
header at ``path + ".json"``. The payload is pixel-major: the value for
pixel (h, w) and channel n sits at index ``((h * W) + w) * M + n``.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Datacube, ElementLine, EnergyCalibration
from .exceptions import DataError
from .solvers import AmplitudeMaps

LAYOUT = "pixel-major"
DTYPES = {"f32": np.dtype("<f4"), "u16": np.dtype("<u2")}
HEADER_KEYS = ("height", "width", "channels", "energy_min_ev", "energy_max_ev", "dtype", "layout")
MAP_FORMATS = {"pgm16": ".pgm", "csv": ".csv", "f32raw": ".f32"}
SIDECAR = "maps.json"


class CubeFormatError(DataError):
    """Malformed cube file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, path=None, offset=None):
        self.path = None if path is None else str(path)
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        prefix = f"{path}: " if path is not None else ""
        super().__init__(f"{prefix}{message}{where}")


class PayloadSizeError(CubeFormatError):
    def __init__(self, path, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"payload size mismatch: expected {expected} bytes, found {actual}",
                         path, offset=min(expected, actual))


def atomic_write_bytes(path, data: bytes):
    """Write ``data`` to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def header_path(path):
    return Path(str(path) + ".json")


def _key_offset(raw: bytes, key):
    pos = raw.find(f'"{key}"'.encode())
    return pos if pos >= 0 else None


def read_header(path):
    hp = header_path(path)
    try:
        raw = hp.read_bytes()
    except FileNotFoundError:
        raise CubeFormatError("header file not found", hp) from None
    try:
        header = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise CubeFormatError("header is not UTF-8", hp, exc.start) from None
    except json.JSONDecodeError as exc:
        raise CubeFormatError(f"malformed header JSON ({exc.msg})", hp, exc.pos) from None
    if not isinstance(header, dict):
        raise CubeFormatError("header must be a JSON object", hp, 0)
    for key in HEADER_KEYS:
        if key not in header:
            raise CubeFormatError(f"header missing {key!r}", hp, len(raw))
    for key in ("height", "width", "channels"):
        v = header[key]
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise CubeFormatError(f"{key} must be a positive integer", hp, _key_offset(raw, key))
    for key in ("energy_min_ev", "energy_max_ev"):
        if not isinstance(header[key], (int, float)) or isinstance(header[key], bool):
            raise CubeFormatError(f"{key} must be a number", hp, _key_offset(raw, key))
    if header["dtype"] not in DTYPES:
        raise CubeFormatError(f"unknown dtype {header['dtype']!r} (expected f32 or u16)", hp,
                              _key_offset(raw, "dtype"))
    if header["layout"] != LAYOUT:
        raise CubeFormatError(f"unsupported layout {header['layout']!r}", hp, _key_offset(raw, "layout"))
    if header.get("endianness", "little") != "little":
        raise CubeFormatError("only little-endian payloads are supported", hp, _key_offset(raw, "endianness"))
    return header


def _calibration(header):
    extra = {k: header[k] for k in ("fwhm_c", "fwhm_n") if k in header}
    try:
        return EnergyCalibration(float(header["energy_min_ev"]), float(header["energy_max_ev"]),
                                 int(header["channels"]), **extra)
    except ValueError as exc:
        raise CubeFormatError(f"invalid calibration: {exc}") from None


def read_cube(path) -> Datacube:
    """Load a cube written by :func:`write_cube` (or any tool using the same format)."""
    header = read_header(path)
    cal = _calibration(header)
    h, w, m = header["height"], header["width"], header["channels"]
    dtype = DTYPES[header["dtype"]]
    expected = h * w * m * dtype.itemsize
    try:
        actual = os.path.getsize(path)
    except FileNotFoundError:
        raise CubeFormatError("payload file not found", path) from None
    if actual != expected:
        raise PayloadSizeError(path, expected, actual)
    flat = np.fromfile(path, dtype=dtype, count=h * w * m)
    if header["dtype"] == "f32":
        bad = ~np.isfinite(flat) | (flat < 0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise CubeFormatError("counts must be finite and non-negative", path, i * dtype.itemsize)
    counts = flat.reshape(h, w, m).transpose(2, 0, 1)
    return Datacube(counts, cal)


def write_cube(cube: Datacube, path, dtype="f32"):
    """Write payload and header atomically. ``u16`` needs integral counts <= 65535."""
    if dtype not in DTYPES:
        raise DataError(f"unknown dtype {dtype!r} (expected f32 or u16)")
    m, h, w = cube.shape
    data = cube.counts.transpose(1, 2, 0)
    if dtype == "u16":
        if data.size and (data.max() > 65535 or np.any(data != np.round(data))):
            raise DataError("u16 output needs integer counts in [0, 65535]")
    payload = np.ascontiguousarray(data, dtype=DTYPES[dtype]).tobytes()
    cal = cube.calibration
    header = {
        "height": h,
        "width": w,
        "channels": m,
        "energy_min_ev": cal.energy_min,
        "energy_max_ev": cal.energy_max,
        "dtype": dtype,
        "layout": LAYOUT,
        "endianness": "little",
        "fwhm_c": cal.fwhm_c,
        "fwhm_n": cal.fwhm_n,
    }
    atomic_write_bytes(path, payload)
    atomic_write_text(header_path(path), json.dumps(header, indent=2) + "\n")


# ---------------------------------------------------------------- maps


def _pgm16_bytes(img16):
    h, w = img16.shape
    head = f"P5\n{w} {h}\n65535\n".encode("ascii")
    return head + img16.astype(">u2").tobytes()


def read_pgm16(path):
    """Read a binary 16-bit PGM as a uint16 array."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 65535:
        raise CubeFormatError("not a 16-bit binary PGM", path, 0)
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    body = raw[pos:]
    if len(body) != 2 * w * h:
        raise PayloadSizeError(path, pos + 2 * w * h, len(raw))
    return np.frombuffer(body, dtype=">u2").reshape(h, w).astype(np.uint16)


def quantize16(img):
    img = np.asarray(img, dtype=float)
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    if span <= 0:
        return np.zeros(img.shape, dtype=np.uint16), lo, hi
    q = np.rint((img - lo) / span * 65535.0)
    return np.clip(q, 0, 65535).astype(np.uint16), lo, hi


def dequantize16(img16, lo, hi):
    return lo + np.asarray(img16, dtype=float) / 65535.0 * (hi - lo)


def export_maps(maps: AmplitudeMaps, directory, fmt="pgm16"):
    """Write one file per line map, named ``<Element>_<Line>.<ext>``, plus ``maps.json``.

    ``pgm16`` rescales each map to [0, 65535]; the sidecar keeps each map's
    min/max so values can be restored. ``csv`` and ``f32raw`` are
    unnormalised (``f32raw`` is little-endian, row-major H x W).
    """
    if fmt not in MAP_FORMATS:
        raise DataError(f"unknown map format {fmt!r}; choose from {sorted(MAP_FORMATS)}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = MAP_FORMATS[fmt]
    side = {"format": fmt, "maps": {}}
    written = []
    for ln, img in zip(maps.line_meta, maps.maps):
        name = ln.key + ext
        target = directory / name
        lo, hi = float(img.min()), float(img.max())
        if fmt == "pgm16":
            q, lo, hi = quantize16(img)
            atomic_write_bytes(target, _pgm16_bytes(q))
        elif fmt == "csv":
            lines = [",".join(repr(float(v)) for v in row) for row in img]
            atomic_write_text(target, "\n".join(lines) + "\n")
        else:
            atomic_write_bytes(target, np.ascontiguousarray(img, dtype="<f4").tobytes())
        side["maps"][ln.key] = {
            "file": name, "element": ln.element, "line": ln.line, "energy_ev": ln.energy,
            "height": int(img.shape[0]), "width": int(img.shape[1]), "min": lo, "max": hi,
        }
        written.append(target)
    atomic_write_text(directory / SIDECAR, json.dumps(side, indent=2) + "\n")
    return written


def save_maps(maps: AmplitudeMaps, path):
    """Store maps with their line metadata in one ``.npz`` archive."""
    meta = maps.line_meta
    buf_path = Path(path)
    with tempfile.NamedTemporaryFile(dir=buf_path.parent, suffix=".npz", delete=False) as fh:
        tmp = fh.name
        np.savez(fh, maps=maps.maps,
                 elements=np.array([ln.element for ln in meta]),
                 lines=np.array([ln.line for ln in meta]),
                 energies=np.array([ln.energy for ln in meta], dtype=float))
    os.replace(tmp, buf_path)


def load_maps(path) -> AmplitudeMaps:
    try:
        with np.load(path) as z:
            meta = tuple(ElementLine(str(e), str(q), float(en))
                         for e, q, en in zip(z["elements"], z["lines"], z["energies"]))
            return AmplitudeMaps(np.array(z["maps"], dtype=float), meta)
    except (KeyError, ValueError, OSError) as exc:
        raise DataError(f"{path}: not a maps archive ({exc})") from None


# ---------------------------------------------------------------- reports


@dataclass
class RunReport:
    """Everything needed to audit one deconvolution run."""

    detection: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict)
    cube: dict = field(default_factory=dict)
    maps: list = field(default_factory=list)

    def to_dict(self):
        return {"detection": self.detection, "solver": self.solver, "trace": self.trace,
                "cube": self.cube, "maps": list(self.maps)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False, default=_jsonable)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CubeFormatError(f"malformed report JSON ({exc.msg})", offset=exc.pos) from None
        if not isinstance(d, dict):
            raise DataError("report must be a JSON object")
        unknown = set(d) - {"detection", "solver", "trace", "cube", "maps"}
        if unknown:
            raise DataError(f"unknown report fields {sorted(unknown)}")
        return cls(**d)

    def save(self, path):
        atomic_write_text(path, self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")
