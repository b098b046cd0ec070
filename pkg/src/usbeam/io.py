"""File formats: channel-data cubes, images, phantoms, B-mode export, reports.

Binary formats are little-endian with fixed headers and float32 payloads
(interleaved re/im pairs for complex data); loading and re-saving a file
reproduces it byte for byte.  Text outputs (JSON sidecars, CSV reports)
are emitted with sorted keys and fixed separators so identical inputs
give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import struct

import numpy as np

from .acquisition import RawDataCube
from .classic import RfImage
from .errors import FormatError
from .imaging import BModeImage
from .metrics import RegionSpec
from .phantom import Phantom

__all__ = [
    "save_cube",
    "load_cube",
    "save_image",
    "load_image",
    "save_phantom",
    "load_phantom",
    "save_bmode_pgm",
    "save_regions",
    "load_regions",
    "metrics_csv_text",
    "write_metrics_csv",
    "profile_csv_text",
    "write_profile_csv",
]

_CUBE_MAGIC = b"USCB"
_IMAGE_MAGIC = b"USIM"
_VERSION = 1

# magic, version, M, N, K, flags, layout, dtype, fs, t0
_CUBE_HEADER = struct.Struct("<4s7I2d")
_FLAG_ANALYTIC = 1
_FLAG_COMPENSATED = 2
_LAYOUT_CHANNEL_MAJOR = 0
_DTYPE_F32 = 0
_DTYPE_C64 = 1

# magic, version, kind, scan_kind, K, N, dtype, provenance byte length
_IMAGE_HEADER = struct.Struct("<4s7I")
_IMAGE_KINDS = ("rf", "envelope")
_SCAN_KINDS = ("sector", "linear")


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_cube(cube: RawDataCube, path) -> None:
    """Write a channel-data cube in the binary cube format."""
    flags = 0
    if cube.is_analytic:
        flags |= _FLAG_ANALYTIC
    if cube.is_compensated:
        flags |= _FLAG_COMPENSATED
    if cube.is_analytic:
        payload = np.ascontiguousarray(cube.data, dtype="<c8")
        dtype = _DTYPE_C64
    else:
        payload = np.ascontiguousarray(cube.data, dtype="<f4")
        dtype = _DTYPE_F32
    m, n, k = cube.data.shape
    header = _CUBE_HEADER.pack(
        _CUBE_MAGIC, _VERSION, m, n, k, flags, _LAYOUT_CHANNEL_MAJOR, dtype,
        cube.fs, cube.t0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_cube(path) -> RawDataCube:
    """Read a cube written by :func:`save_cube`; bit-exact round trip."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CUBE_HEADER.size:
        raise FormatError("cube file truncated before header end")
    magic, version, m, n, k, flags, layout, dtype, fs, t0 = _CUBE_HEADER.unpack_from(raw)
    if magic != _CUBE_MAGIC:
        raise FormatError(f"not a cube file (magic {magic!r})")
    if version != _VERSION:
        raise FormatError(f"unsupported cube version {version}")
    if layout != _LAYOUT_CHANNEL_MAJOR:
        raise FormatError(f"unsupported cube layout {layout}")
    if dtype not in (_DTYPE_F32, _DTYPE_C64):
        raise FormatError(f"unsupported cube dtype {dtype}")
    analytic = bool(flags & _FLAG_ANALYTIC)
    if analytic != (dtype == _DTYPE_C64):
        raise FormatError("cube dtype inconsistent with analytic flag")
    np_dtype = np.dtype("<c8") if dtype == _DTYPE_C64 else np.dtype("<f4")
    expected = _CUBE_HEADER.size + m * n * k * np_dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"cube payload size mismatch (got {len(raw)}, want {expected})")
    data = np.frombuffer(raw, dtype=np_dtype, offset=_CUBE_HEADER.size).reshape(m, n, k)
    wide = complex if analytic else float
    return RawDataCube(
        data=data.astype(wide),
        fs=fs,
        t0=t0,
        is_analytic=analytic,
        is_compensated=bool(flags & _FLAG_COMPENSATED),
    )


def save_image(img: RfImage, path) -> None:
    """Write a beamformed image with axes and provenance."""
    kind = _IMAGE_KINDS.index(img.kind)
    scan_kind = _SCAN_KINDS.index(img.scan_kind)
    if img.kind == "rf":
        payload = np.ascontiguousarray(img.data, dtype="<c8")
        dtype = _DTYPE_C64
    else:
        payload = np.ascontiguousarray(img.data, dtype="<f4")
        dtype = _DTYPE_F32
    prov = _json_bytes(img.provenance)
    k, n = img.data.shape
    header = _IMAGE_HEADER.pack(
        _IMAGE_MAGIC, _VERSION, kind, scan_kind, k, n, dtype, len(prov)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(prov)
        fh.write(np.ascontiguousarray(img.scanline_positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(img.depths, dtype="<f8").tobytes())
        fh.write(payload.tobytes())


def load_image(path) -> RfImage:
    """Read an image written by :func:`save_image`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _IMAGE_HEADER.size:
        raise FormatError("image file truncated before header end")
    magic, version, kind, scan_kind, k, n, dtype, prov_len = _IMAGE_HEADER.unpack_from(raw)
    if magic != _IMAGE_MAGIC:
        raise FormatError(f"not an image file (magic {magic!r})")
    if version != _VERSION:
        raise FormatError(f"unsupported image version {version}")
    if kind >= len(_IMAGE_KINDS) or scan_kind >= len(_SCAN_KINDS):
        raise FormatError("unknown image or scan kind")
    np_dtype = np.dtype("<c8") if dtype == _DTYPE_C64 else np.dtype("<f4")
    off = _IMAGE_HEADER.size
    expected = off + prov_len + 8 * (k + n) + k * n * np_dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"image payload size mismatch (got {len(raw)}, want {expected})")
    try:
        provenance = json.loads(raw[off : off + prov_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("image provenance block is not valid JSON") from exc
    off += prov_len
    positions = np.frombuffer(raw, dtype="<f8", count=k, offset=off).copy()
    off += 8 * k
    depths = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    data = np.frombuffer(raw, dtype=np_dtype, offset=off).reshape(k, n)
    wide = complex if dtype == _DTYPE_C64 else float
    return RfImage(
        data=data.astype(wide),
        kind=_IMAGE_KINDS[kind],
        scan_kind=_SCAN_KINDS[scan_kind],
        scanline_positions=positions,
        depths=depths,
        provenance=provenance,
    )


def save_phantom(phantom: Phantom, path) -> None:
    """Write a phantom as a structured text (JSON) scatterer list."""
    records = [
        {"x": float(p[0]), "z": float(p[1]), "amplitude": float(a)}
        for p, a in zip(phantom.positions, phantom.amplitudes)
    ]
    doc = {"name": phantom.name, "seed": int(phantom.seed), "scatterers": records}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_phantom(path) -> Phantom:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError("phantom file is not valid JSON") from exc
    try:
        records = doc["scatterers"]
        positions = np.array([[r["x"], r["z"]] for r in records], dtype=float)
        amplitudes = np.array([r["amplitude"] for r in records], dtype=float)
        return Phantom(
            positions=positions.reshape(-1, 2),
            amplitudes=amplitudes,
            seed=int(doc.get("seed", 0)),
            name=str(doc.get("name", "")),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError("phantom file is missing required fields") from exc


def save_bmode_pgm(bmode: BModeImage, path) -> None:
    """Export a B-mode image as binary PGM plus a JSON metadata sidecar.

    Pixel rows run along depth (image displays upright); dB values are
    mapped linearly so -dynamic_range -> 0 and 0 dB -> 255.  The sidecar
    at ``<path>.json`` carries the grid geometry and provenance.
    """
    dr = bmode.dynamic_range
    levels = np.round((bmode.pixels + dr) / dr * 255.0)
    gray = np.clip(levels, 0, 255).astype(np.uint8).T  # (N, K): depth down
    height, width = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode())
        fh.write(gray.tobytes())
    depths = bmode.depths
    sidecar = {
        "dynamic_range_db": dr,
        "scan_kind": bmode.scan_kind,
        "num_scanlines": int(bmode.pixels.shape[0]),
        "num_depths": int(bmode.pixels.shape[1]),
        "scanline_positions": [float(v) for v in bmode.scanline_positions],
        "depth_start": float(depths[0]),
        "depth_end": float(depths[-1]),
        "provenance": bmode.provenance,
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def save_regions(regions: dict[str, RegionSpec], path) -> None:
    doc = {}
    for name, region in regions.items():
        entry = {"shape": region.shape, "center": [region.center[0], region.center[1]]}
        if region.shape == "disc":
            entry["radius"] = region.radius
        else:
            entry["half_extents"] = list(region.half_extents)
        doc[name] = entry
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def region_from_dict(entry: dict) -> RegionSpec:
    try:
        shape = entry["shape"]
        center = tuple(float(v) for v in entry["center"])
        if shape == "disc":
            return RegionSpec(shape="disc", center=center, radius=float(entry["radius"]))
        return RegionSpec(
            shape="rectangle",
            center=center,
            half_extents=tuple(float(v) for v in entry["half_extents"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid region specification: {entry!r}") from exc


def load_regions(path) -> dict[str, RegionSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError("regions file is not valid JSON") from exc
    if not isinstance(doc, dict):
        raise FormatError("regions file must map names to region specs")
    return {name: region_from_dict(entry) for name, entry in doc.items()}


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            ["" if v is None else repr(v) if isinstance(v, float) else v for v in row]
        )
    return buf.getvalue()


def metrics_csv_text(rows: list[dict], include_time: bool = False) -> str:
    """Metrics report text: one row per method.

    ``include_time`` adds the wall-time column for side-by-side runtime
    tables; without it the text depends only on image content, so rerun
    bytes are identical.
    """
    header = ["method", "cnr", "snr", "rg"] + (["wall_time_s"] if include_time else [])
    out = []
    for row in rows:
        line = [row.get("method", ""), row.get("cnr"), row.get("snr"), row.get("rg")]
        if include_time:
            line.append(row.get("wall_time_s"))
        out.append(line)
    return _csv_text(header, out)


def write_metrics_csv(rows: list[dict], path, include_time: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_csv_text(rows, include_time=include_time))


def profile_csv_text(lateral: np.ndarray, amplitude_db: np.ndarray) -> str:
    """Lateral amplitude profile as (lateral_m, amplitude_db) rows."""
    rows = [[float(x), float(a)] for x, a in zip(lateral, amplitude_db)]
    return _csv_text(["lateral_m", "amplitude_db"], rows)


def write_profile_csv(lateral: np.ndarray, amplitude_db: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(profile_csv_text(lateral, amplitude_db))
