"""File formats: ASCII PLY / XYZ clouds, PGM rasters, FPFH binary matrices."""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import PointCloud

FPFH_MAGIC = b"FPFH"
FPFH_VERSION = 1
_FPFH_HEADER = struct.Struct("<4sIQI")


def _fmt(x):
    return f"{x:.9g}"


def write_ply(path, cloud: PointCloud):
    path = Path(path)
    n = len(cloud)
    lines = ["ply", "format ascii 1.0", f"element vertex {n}",
             "property double x", "property double y", "property double z"]
    if cloud.normals is not None:
        lines += ["property double nx", "property double ny", "property double nz"]
    if cloud.grid_index is not None:
        lines += ["property int row", "property int col"]
    lines.append("end_header")
    body = []
    for i in range(n):
        row = [_fmt(v) for v in cloud.points[i]]
        if cloud.normals is not None:
            row += [_fmt(v) for v in cloud.normals[i]]
        if cloud.grid_index is not None:
            row += [str(int(v)) for v in cloud.grid_index[i]]
        body.append(" ".join(row))
    path.write_text("\n".join(lines + body) + "\n")


def read_ply(path) -> PointCloud:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise FormatError(f"{path}: not a PLY file")
    props, n, i = [], None, 1
    while i < len(text):
        tok = text[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise FormatError(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element" and tok[1] == "vertex":
            if len(tok) < 3 or not tok[2].isdigit():
                raise FormatError(f"{path}: bad vertex count")
            n = int(tok[2])
        elif tok[0] == "property" and n is not None:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            break
    if n is None or props[:3] != ["x", "y", "z"]:
        raise FormatError(f"{path}: missing vertex x/y/z")
    rows = text[i:i + n]
    if len(rows) != n:
        raise FormatError(f"{path}: expected {n} vertices, found {len(rows)}")
    try:
        data = np.array([r.split() for r in rows], dtype=np.float64).reshape(n, len(props))
    except ValueError:
        raise FormatError(f"{path}: malformed vertex rows") from None
    col = {p: k for k, p in enumerate(props)}
    normals = grid = None
    if {"nx", "ny", "nz"} <= col.keys():
        normals = data[:, [col["nx"], col["ny"], col["nz"]]]
    if {"row", "col"} <= col.keys():
        grid = data[:, [col["row"], col["col"]]].astype(np.int64)
    return PointCloud(data[:, :3], normals, grid)


def write_xyz(path, cloud: PointCloud):
    arr = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    Path(path).write_text("".join(" ".join(_fmt(v) for v in row) + "\n" for row in arr))


def read_xyz(path) -> PointCloud:
    try:
        data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError:
        raise FormatError(f"{path}: malformed XYZ rows") from None
    if data.shape[1] not in (3, 6):
        raise FormatError(f"{path}: expected 3 or 6 columns, got {data.shape[1]}")
    return PointCloud(data[:, :3], data[:, 3:6] if data.shape[1] == 6 else None)


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    return read_xyz(path)


def write_cloud(path, cloud: PointCloud):
    if Path(path).suffix.lower() == ".ply":
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)


def write_pgm(path, raster, vmax=None):
    """Binary (P5) 8-bit PGM. Boolean rasters map to {0, 255}."""
    arr = np.asarray(raster)
    if arr.dtype == bool:
        img = arr.astype(np.uint8) * 255
    else:
        arr = arr.astype(np.float64)
        lo = float(np.min(arr)) if arr.size else 0.0
        hi = float(np.max(arr)) if vmax is None else float(vmax)
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        img = np.clip(np.rint((arr - lo) * scale), 0, 255).astype(np.uint8)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise FormatError(f"{path}: truncated PGM header")
        if raw[pos:pos + 1] == b"#":
            pos = raw.find(b"\n", pos) + 1 or len(raw)
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    try:
        cols, rows, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM unsupported")
    pos += 1
    data = np.frombuffer(raw[pos:pos + rows * cols], dtype=np.uint8)
    if data.size != rows * cols:
        raise FormatError(f"{path}: truncated PGM")
    return data.reshape(rows, cols).copy()


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 127


def write_fpfh(path, features):
    feats = np.ascontiguousarray(features, dtype="<f8")
    if feats.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    n, dim = feats.shape
    with open(path, "wb") as fh:
        fh.write(_FPFH_HEADER.pack(FPFH_MAGIC, FPFH_VERSION, n, dim))
        fh.write(feats.tobytes())


def read_fpfh(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _FPFH_HEADER.size:
        raise FormatError(f"{path}: truncated FPFH header")
    magic, version, n, dim = _FPFH_HEADER.unpack_from(raw)
    if magic != FPFH_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FPFH_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = raw[_FPFH_HEADER.size:]
    if len(payload) != n * dim * 8:
        raise FormatError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(n, dim).astype(np.float64)


def write_csv_raster(path, raster):
    np.savetxt(path, np.asarray(raster, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_csv_raster(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
