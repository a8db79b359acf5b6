"""Readers and writers for cloud files (XYZ, PCF1 binary, PLY) and PGM/PPM images."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

PCF_MAGIC = b"PCF1"


class FormatError(ValueError):
    pass


def write_xyz(path, points: np.ndarray) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for x, y, z in np.asarray(points, dtype=np.float64):
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_xyz(path) -> np.ndarray:
    pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if pts.shape[1] != 3:
        raise FormatError(f"{path}: expected 3 columns, got {pts.shape[1]}")
    return pts


def write_pcf(path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(points, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(PCF_MAGIC + struct.pack("<I", len(pts)))
        fh.write(pts.tobytes())


def read_pcf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != PCF_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (count,) = struct.unpack_from("<I", raw, 4)
    if len(raw) != 8 + 12 * count:
        raise FormatError(f"{path}: expected {count} points, file size {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(count, 3).astype(np.float64)


def write_ply(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ply":
        raise FormatError(f"{path}: not a PLY file")
    count = None
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            count = int(line.split()[2])
        if line == "end_header":
            body = lines[i + 1:i + 1 + (count or 0)]
            break
    else:
        raise FormatError(f"{path}: missing end_header")
    pts = np.array([[float(v) for v in row.split()[:3]] for row in body], dtype=np.float64)
    return pts.reshape(-1, 3)


CLOUD_WRITERS = {"xyz": write_xyz, "bin": write_pcf, "ply": write_ply}
CLOUD_READERS = {".xyz": read_xyz, ".bin": read_pcf, ".pcf": read_pcf, ".ply": read_ply}


def read_cloud(path) -> np.ndarray:
    reader = CLOUD_READERS.get(Path(path).suffix.lower())
    if reader is None:
        raise FormatError(f"{path}: unknown cloud format")
    return reader(path)


def write_cloud(path, points: np.ndarray, fmt: str) -> None:
    try:
        CLOUD_WRITERS[fmt](path, points)
    except KeyError:
        raise FormatError(f"unknown cloud format {fmt!r}") from None


def write_pnm(path, image: np.ndarray) -> None:
    """8-bit PGM (1 channel) or PPM (3 channels)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise FormatError(f"cannot write {c}-channel image")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    tag = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(tag + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pnm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tag = raw[:2]
    if tag not in (b"P5", b"P6"):
        raise FormatError(f"{path}: only binary PGM/PPM supported")
    fields, pos = [], 2
    while len(fields) < 3:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(int(raw[pos:end]))
        pos = end
    pos += 1  # single whitespace before the raster
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit rasters supported")
    c = 1 if tag == b"P5" else 3
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * c, offset=pos)
    return data.reshape(h, w, c).astype(np.float64) / 255.0
