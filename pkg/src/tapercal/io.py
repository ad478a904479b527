"""File codecs: NPY v1.0, uncompressed NPZ, station CSV, PGM quick-looks.

The NPY codec is written by hand against the v1.0 byte layout (magic
``\\x93NUMPY``, version 01 00, little-endian u16 header length, dict
literal header padded to 64-byte alignment, raw little-endian payload)
and enforces a strict subset: version 1.0, C order, ``<f8`` on write and
``<f4``/``<f8`` on read.  Malformed inputs raise typed errors, never
crash.

Georeferencing has no slot in NPY, so it travels in a ``<path>.meta``
sidecar of ``key=value`` lines; NPZ archives embed the same text as a
``meta.txt`` entry.  NPZ entries are stored (method 0) on write; deflate
entries are rejected on read.

PGM (binary P5, 8-bit) stands in for PNG quick-looks: pixel value is
``round(255 * normalized)`` with missing pixels written as 0.
"""

from __future__ import annotations

import ast
import math
import zipfile
from datetime import datetime

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    BadRow,
    BadZip,
    DuplicateEntry,
    InvalidStation,
    NonFiniteValue,
    TruncatedFile,
    UnsupportedCompression,
    UnsupportedDtype,
    UnsupportedVersion,
)
from .grid import GeoTransform, Grid, GridSeries
from .preprocess import NormSpec, normalize
from .stations import Station, StationSet

NPY_MAGIC = b"\x93NUMPY"
STATION_CSV_HEADER = "id,lat,lon,value"


# --- NPY ------------------------------------------------------------------

def encode_npy(array: np.ndarray) -> bytes:
    """Serialize a float array as NPY v1.0 (``<f8``, C order)."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    shape = ", ".join(str(d) for d in arr.shape)
    if arr.ndim == 1:
        shape += ","
    header = f"{{'descr': '<f8', 'fortran_order': False, 'shape': ({shape}), }}"
    base = len(NPY_MAGIC) + 2 + 2  # magic + version + header-length field
    pad = 64 - (base + len(header) + 1) % 64
    header = header + " " * (pad % 64) + "\n"
    out = bytearray()
    out += NPY_MAGIC
    out += b"\x01\x00"
    out += len(header).to_bytes(2, "little")
    out += header.encode("latin1")
    out += arr.tobytes(order="C")
    return bytes(out)


def decode_npy(blob: bytes) -> np.ndarray:
    """Parse an NPY v1.0 stream (``<f4``/``<f8``, C order) to float64."""
    if len(blob) == 0:
        raise TruncatedFile("empty NPY stream")
    if len(blob) < len(NPY_MAGIC):
        raise TruncatedFile("NPY stream shorter than its magic")
    if blob[: len(NPY_MAGIC)] != NPY_MAGIC:
        raise BadMagic(f"not an NPY stream (got {blob[:6]!r})")
    if len(blob) < len(NPY_MAGIC) + 4:
        raise TruncatedFile("NPY stream ends inside the version/header fields")
    major, minor = blob[6], blob[7]
    if (major, minor) != (1, 0):
        raise UnsupportedVersion(f"NPY version {major}.{minor} not supported (need 1.0)")
    hlen = int.from_bytes(blob[8:10], "little")
    if len(blob) < 10 + hlen:
        raise TruncatedFile("NPY stream ends inside the header")
    try:
        header = ast.literal_eval(blob[10 : 10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise BadMagic(f"unparseable NPY header: {exc}") from exc
    if not isinstance(header, dict):
        raise BadMagic("NPY header is not a dict literal")
    descr = header.get("descr")
    if descr not in ("<f4", "<f8"):
        raise UnsupportedDtype(f"dtype {descr!r} not supported (need <f4 or <f8)")
    if header.get("fortran_order") is not False:
        raise UnsupportedDtype("fortran-order arrays are not supported")
    shape = header.get("shape")
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise BadMagic(f"bad NPY shape {shape!r}")
    itemsize = 4 if descr == "<f4" else 8
    count = 1
    for d in shape:
        count *= d
    need = 10 + hlen + count * itemsize
    if len(blob) < need:
        raise TruncatedFile(f"NPY payload truncated: need {need} bytes, have {len(blob)}")
    data = np.frombuffer(blob[10 + hlen : need], dtype=descr).reshape(shape)
    return data.astype(np.float64)


def _meta_lines(grid: Grid) -> list[str]:
    tr = grid.transform
    lines = [
        f"lat_origin={tr.lat_origin!r}",
        f"lon_origin={tr.lon_origin!r}",
        f"dlat={tr.dlat!r}",
        f"dlon={tr.dlon!r}",
        f"missing={grid.missing!r}",
    ]
    if grid.timestamp is not None:
        lines.append(f"timestamp={grid.timestamp.isoformat()}")
    return lines


def _parse_meta(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadHeader(f"bad meta line {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _grid_from_meta(values: np.ndarray, meta: dict[str, str]) -> Grid:
    def f(key: str, default: float) -> float:
        return float(meta[key]) if key in meta else default

    transform = GeoTransform(
        f("lat_origin", 0.0), f("lon_origin", 0.0), f("dlat", -1.0), f("dlon", 1.0)
    )
    timestamp = None
    if "timestamp" in meta:
        timestamp = datetime.fromisoformat(meta["timestamp"])
    missing = float(meta["missing"]) if "missing" in meta else math.nan
    return Grid(values, transform, timestamp, missing)


def write_npy(grid: Grid, path) -> None:
    """NPY payload plus a ``<path>.meta`` sidecar with the geotransform."""
    with open(path, "wb") as fh:
        fh.write(encode_npy(grid.values))
    with open(f"{path}.meta", "w", encoding="utf-8") as fh:
        fh.write("\n".join(_meta_lines(grid)) + "\n")


def read_npy(path) -> Grid:
    """Grid from an NPY file, georeferenced by its sidecar when present.

    Without a sidecar the grid gets a unit geotransform (documented
    fallback for bare arrays).
    """
    with open(path, "rb") as fh:
        values = decode_npy(fh.read())
    if values.ndim != 2:
        raise UnsupportedDtype(f"grid NPY must be 2-D, got ndim={values.ndim}")
    meta: dict[str, str] = {}
    try:
        with open(f"{path}.meta", "r", encoding="utf-8") as fh:
            meta = _parse_meta(fh.read())
    except FileNotFoundError:
        pass
    return _grid_from_meta(values, meta)


# --- NPZ ------------------------------------------------------------------

def write_npz(grids, path) -> None:
    """Named grids in an uncompressed (stored) zip of NPY entries.

    ``grids`` is a mapping or an iterable of (name, grid) pairs; names
    must be unique.
    """
    pairs = list(grids.items()) if isinstance(grids, dict) else list(grids)
    names = [name for name, _ in pairs]
    if len(set(names)) != len(names):
        raise DuplicateEntry("entry names must be unique")
    meta_lines = []
    for name, grid in pairs:
        for line in _meta_lines(grid):
            meta_lines.append(f"{name}.{line}")
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, grid in pairs:
            zf.writestr(f"{name}.npy", encode_npy(grid.values))
        zf.writestr("meta.txt", "\n".join(meta_lines) + "\n")


def read_npz(path) -> dict[str, Grid]:
    """Named grids back from a stored-entry NPZ archive."""
    try:
        zf = zipfile.ZipFile(path, "r")
    except (zipfile.BadZipFile, OSError) as exc:
        raise BadZip(f"not a readable zip archive: {exc}") from exc
    with zf:
        seen: set[str] = set()
        meta: dict[str, str] = {}
        blobs: dict[str, bytes] = {}
        for info in zf.infolist():
            if info.filename in seen:
                raise DuplicateEntry(f"duplicate archive entry {info.filename!r}")
            seen.add(info.filename)
            if info.compress_type != zipfile.ZIP_STORED:
                raise UnsupportedCompression(
                    f"entry {info.filename!r} uses compression method {info.compress_type}"
                )
            if info.filename == "meta.txt":
                meta = _parse_meta(zf.read(info).decode("utf-8"))
            elif info.filename.endswith(".npy"):
                blobs[info.filename[: -len(".npy")]] = zf.read(info)
    out: dict[str, Grid] = {}
    for name, blob in blobs.items():
        values = decode_npy(blob)
        if values.ndim != 2:
            raise UnsupportedDtype(f"grid entry {name!r} must be 2-D")
        prefix = f"{name}."
        sub = {k[len(prefix):]: v for k, v in meta.items() if k.startswith(prefix)}
        out[name] = _grid_from_meta(values, sub)
    return out


def write_series_npz(series: GridSeries, path) -> None:
    """A grid series as frame_NNNNN entries in one stored NPZ."""
    grids = {f"frame_{i:05d}": g for i, g in enumerate(series.grids)}
    write_npz(grids, path)


def read_series_npz(path) -> GridSeries:
    grids = read_npz(path)
    frames = [grids[k] for k in sorted(grids)]
    if not frames:
        raise BadZip("archive holds no frames")
    return GridSeries(tuple(frames))


# --- station CSV ------------------------------------------------------------

def write_station_csv(stations: StationSet, path) -> None:
    """Header ``id,lat,lon,value``; floats at 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(STATION_CSV_HEADER + "\n")
        for s in stations:
            fh.write(f"{s.id},{s.lat:.17g},{s.lon:.17g},{s.value:.17g}\n")


def read_station_csv(path) -> StationSet:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != STATION_CSV_HEADER:
        got = lines[0].strip() if lines else "<empty file>"
        raise BadHeader(f"expected header {STATION_CSV_HEADER!r}, got {got!r}")
    stations: list[Station] = []
    ids: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise BadRow(line_no, f"expected 4 columns, got {len(parts)}")
        sid = parts[0].strip()
        if not sid:
            raise BadRow(line_no, "empty station id")
        if sid in ids:
            raise BadRow(line_no, f"duplicate station id {sid!r}")
        try:
            lat, lon, value = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise BadRow(line_no, f"unparsable number: {exc}") from exc
        try:
            stations.append(Station(sid, lat, lon, value))
        except InvalidStation as exc:
            raise NonFiniteValue(line_no, str(exc)) from exc
        ids.add(sid)
    return StationSet(tuple(stations))


# --- PGM ------------------------------------------------------------------

def encode_pgm(grid: Grid, spec: NormSpec) -> bytes:
    """Binary PGM (P5, 8-bit): round(255 * normalized); missing -> 0."""
    norm = normalize(grid, NormSpec(spec.x_min, spec.x_max, clamp=True))
    mask = grid.missing_mask()
    px = np.floor(255.0 * norm.values + 0.5)
    px = np.where(mask, 0.0, np.clip(px, 0.0, 255.0)).astype(np.uint8)
    header = f"P5\n{grid.cols} {grid.rows}\n255\n".encode("ascii")
    return header + px.tobytes(order="C")


def write_pgm(grid: Grid, spec: NormSpec, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(grid, spec))
