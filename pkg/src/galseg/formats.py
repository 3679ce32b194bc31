"""On-disk formats: GALT tensors, binary netpbm rasters and dataset manifests.

GALT layout (all integers little-endian u32)::

    b"GALT" | version=1 | rank | dim_0 ... dim_{rank-1} | float32 payload, row-major
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GALT_MAGIC = b"GALT"
GALT_VERSION = 1


class FormatError(ValueError):
    """A file does not follow the expected byte layout."""


def save_galt(array, path: str | os.PathLike) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    if arr.ndim > 4:
        raise FormatError(f"GALT stores rank <= 4, got rank {arr.ndim}")
    header = GALT_MAGIC + struct.pack(f"<II{arr.ndim}I", GALT_VERSION, arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def load_galt(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 12:
        raise FormatError(f"{path}: header truncated at byte {len(buf)}, need at least 12")
    if buf[:4] != GALT_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at byte 0")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != GALT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if rank > 4:
        raise FormatError(f"{path}: rank {rank} at byte 8 exceeds 4")
    head = 12 + 4 * rank
    if len(buf) < head:
        raise FormatError(f"{path}: dimension table truncated, expected {head} bytes, got {len(buf)}")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero-sized dimension in {dims} at byte 12")
    expected = head + 4 * int(np.prod(dims, dtype=np.int64))
    if len(buf) != expected:
        raise FormatError(f"{path}: payload size mismatch, expected {expected} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=head).reshape(dims).astype(np.float32)


# ---------------------------------------------------------------- netpbm

def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, pos = [], 2
    while len(out) < count:
        if pos >= len(buf):
            raise FormatError(f"raster header truncated at byte {pos}")
        ch = buf[pos:pos + 1]
        if ch == b"#":
            nl = buf.find(b"\n", pos)
            pos = len(buf) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
                pos += 1
            out.append(buf[start:pos])
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"raster header must end with one whitespace byte at byte {pos}")
    return out, pos + 1


def read_raster(path: str | os.PathLike) -> np.ndarray:
    """Raw uint8 pixels of a P5 (HxW) or P6 (HxWx3) file."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic in (b"P2", b"P3", b"P1", b"P4"):
        raise FormatError(f"{path}: netpbm variant {magic.decode()} is not supported (binary P5/P6 only)")
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    (w, h, maxval), pos = _tokens(buf, 3)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported, only 8-bit (255) rasters are read")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    if len(buf) - pos < need:
        raise FormatError(f"{path}: pixel data truncated at byte {len(buf)}, expected {pos + need}")
    px = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return px.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


def load_raster(path: str | os.PathLike) -> np.ndarray:
    """Raster scaled to [0, 1] as HxWx1 (P5) or HxWx3 (P6) float32."""
    px = read_raster(path)
    if px.ndim == 2:
        px = px[:, :, None]
    return px.astype(np.float32) / np.float32(255)


def load_mask(path: str | os.PathLike) -> np.ndarray:
    px = read_raster(path)
    if px.ndim == 3:
        px = px.max(axis=2)
    return (px > 0).astype(np.uint8)


def write_pgm(pixels: np.ndarray, path: str | os.PathLike) -> None:
    px = np.asarray(pixels)
    if px.ndim != 2:
        raise FormatError(f"PGM needs a 2-D raster, got shape {px.shape}")
    h, w = px.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + px.astype(np.uint8).tobytes())


def write_ppm(pixels: np.ndarray, path: str | os.PathLike) -> None:
    px = np.asarray(pixels)
    if px.ndim != 3 or px.shape[2] != 3:
        raise FormatError(f"PPM needs an HxWx3 raster, got shape {px.shape}")
    h, w, _ = px.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + px.astype(np.uint8).tobytes())


# ---------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    modality: str
    image_path: Path
    label_path: Path


def write_manifest(entries, path: str | os.PathLike) -> None:
    """One line per sample: ``<id> <modality> <image-path> <label-path>``; paths relative to the manifest."""
    base = Path(path).parent
    lines = []
    for e in entries:
        img = os.path.relpath(e.image_path, base)
        lab = os.path.relpath(e.label_path, base)
        lines.append(f"{e.sample_id} {e.modality} {img} {lab}\n")
    Path(path).write_text("".join(lines))


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    base = Path(path).parent
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        sid, modality, img, lab = parts
        entries.append(ManifestEntry(sid, modality, base / img, base / lab))
    return entries


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Dispatch on extension: ``.galt`` tensors or ``.pgm``/``.ppm`` rasters."""
    suffix = Path(path).suffix.lower()
    if suffix == ".galt":
        img = load_galt(path)
        return img[:, :, None] if img.ndim == 2 else img
    if suffix in (".pgm", ".ppm", ".pnm"):
        return load_raster(path)
    raise FormatError(f"{path}: unknown image extension {suffix!r}")
