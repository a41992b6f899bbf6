"""File codecs: PFM images, PRTT coefficient textures, PPM exports, sidecars.

All writers are atomic (temp file + rename) so a failed run never leaves a
truncated file behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

PRTT_MAGIC = b"PRTT"
PRTT_VERSION = 1


def _atomic_write(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_pfm(path) -> np.ndarray:
    """Read a color PFM; returns (height, width, 3) float32, top-down rows.

    PFM stores rows bottom-up with the scale header's sign selecting
    endianness; both are normalized away here.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic, rest = data.split(b"\n", 1)
    except ValueError:
        raise ValueError(f"{path}: malformed PFM header") from None
    if magic == b"Pf":
        raise ValueError(f"{path}: color PFM required, got grayscale 'Pf'")
    if magic != b"PF":
        raise ValueError(f"{path}: not a PFM file (magic {magic!r})")
    try:
        dims, rest = rest.split(b"\n", 1)
        scale_line, payload = rest.split(b"\n", 1)
        width, height = (int(x) for x in dims.split())
        scale = float(scale_line)
    except ValueError:
        raise ValueError(f"{path}: malformed PFM header") from None
    if width <= 0 or height <= 0 or scale == 0.0:
        raise ValueError(f"{path}: malformed PFM header")
    count = width * height * 3
    if len(payload) < count * 4:
        raise ValueError(f"{path}: truncated PFM payload "
                         f"({len(payload)} bytes, need {count * 4})")
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(payload[:count * 4], dtype=dtype).reshape(height, width, 3)
    img = img.astype(np.float32)  # native byte order
    if abs(scale) != 1.0:
        img = img * np.float32(abs(scale))
    return np.ascontiguousarray(img[::-1])  # bottom-up on disk -> top-down


def write_pfm(path, image: np.ndarray) -> None:
    """Write (height, width, 3) linear floats as little-endian color PFM."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    header = f"PF\n{w} {h}\n-1.0\n".encode()
    payload = np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()
    _atomic_write(path, header + payload)


def write_ppm(path, image: np.ndarray, gamma: float = 2.2) -> None:
    """8-bit P6 export of a linear image, gamma-encoded for inspection."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    enc = np.clip(img, 0.0, 1.0) ** (1.0 / gamma)
    bytes8 = (enc * 255.0 + 0.5).astype(np.uint8)
    _atomic_write(path, f"P6\n{w} {h}\n255\n".encode() + bytes8.tobytes())


def write_prtt(path, planes: np.ndarray, band: int, channels: int,
               validity: np.ndarray) -> None:
    """Write a coefficient texture.

    planes: (channels * band**2, height, width) float values, channel-major
    (plane index = channel * k + coefficient). validity: (height, width)
    boolean/0-1 mask.
    """
    planes = np.asarray(planes)
    k = band * band
    if planes.ndim != 3 or planes.shape[0] != channels * k:
        raise ValueError(
            f"expected {channels * k} planes, got shape {planes.shape}")
    _, h, w = planes.shape
    valid = np.asarray(validity)
    if valid.shape != (h, w):
        raise ValueError("validity mask shape mismatch")
    header = PRTT_MAGIC + struct.pack("<5I", PRTT_VERSION, w, h, band, channels)
    body = np.ascontiguousarray(planes, dtype="<f4").tobytes()
    mask = np.ascontiguousarray(valid.astype(np.uint8)).tobytes()
    _atomic_write(path, header + body + mask)


def read_prtt(path):
    """Read a coefficient texture; returns (planes, band, channels, validity).

    planes come back as (channels * band**2, height, width) float32 and
    validity as a (height, width) bool array.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24 or data[:4] != PRTT_MAGIC:
        raise ValueError(f"{path}: not a PRTT file")
    version, w, h, band, channels = struct.unpack("<5I", data[4:24])
    if version != PRTT_VERSION:
        raise ValueError(f"{path}: unsupported PRTT version {version}")
    k = band * band
    count = channels * k * h * w
    need = 24 + count * 4 + h * w
    if len(data) < need:
        raise ValueError(f"{path}: truncated PRTT payload "
                         f"({len(data)} bytes, need {need})")
    planes = np.frombuffer(data[24:24 + count * 4], dtype="<f4")
    planes = planes.reshape(channels * k, h, w).astype(np.float32)
    validity = np.frombuffer(data[24 + count * 4:need], dtype=np.uint8)
    return planes, band, channels, validity.reshape(h, w).astype(bool)


def sidecar_path(prtt_path) -> str:
    base, _ = os.path.splitext(str(prtt_path))
    return base + ".json"


def write_sidecar(prtt_path, metadata: dict) -> None:
    _atomic_write(sidecar_path(prtt_path),
                  (json.dumps(metadata, indent=2, sort_keys=True) + "\n").encode())


def read_sidecar(prtt_path) -> dict:
    with open(sidecar_path(prtt_path)) as fh:
        return json.load(fh)
