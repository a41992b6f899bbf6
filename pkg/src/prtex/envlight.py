"""Environment lighting: lat-long radiance maps and their SH projections.

The mapping places +z at the top row (v = 0): theta = pi * v, phi = 2*pi * u,
direction = (sin t cos p, sin t sin p, cos t). Maps are immutable after
construction and safe for concurrent reads.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import sh, texio


@dataclass(frozen=True)
class EnvMap:
    """Linear RGB radiance on a lat-long grid; width == 2 * height."""

    values: np.ndarray  # (height, width, 3) float32

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) radiance grid, got {v.shape}")
        h, w = v.shape[:2]
        if w != 2 * h:
            raise ValueError(f"lat-long map needs width == 2*height, got {w}x{h}")
        if not np.all(np.isfinite(v)):
            raise ValueError("radiance values must be finite")
        if v.min() < 0:
            raise ValueError("radiance values must be >= 0")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SHLight:
    """One SHVector per color channel, equal bands."""

    red: sh.SHVector
    green: sh.SHVector
    blue: sh.SHVector

    def __post_init__(self):
        if not (self.red.band == self.green.band == self.blue.band):
            raise ValueError("SHLight channel bands must match")

    @property
    def band(self) -> int:
        return self.red.band

    @property
    def channels(self) -> tuple[sh.SHVector, sh.SHVector, sh.SHVector]:
        return (self.red, self.green, self.blue)

    def coeffs_rgb(self) -> np.ndarray:
        """(k, 3) coefficient matrix, channels in columns."""
        return np.column_stack([self.red.coeffs, self.green.coeffs,
                                self.blue.coeffs])

    def scaled(self, factor: float) -> "SHLight":
        return SHLight(self.red * factor, self.green * factor,
                       self.blue * factor)


def light_from_coeffs(coeffs: np.ndarray, band: int) -> SHLight:
    """Build an SHLight from a (k, 3) coefficient matrix."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != (band * band, 3):
        raise ValueError(f"expected ({band * band}, 3) coefficients, got {c.shape}")
    return SHLight(sh.SHVector(band, c[:, 0]), sh.SHVector(band, c[:, 1]),
                   sh.SHVector(band, c[:, 2]))


def light_hash(light: SHLight) -> str:
    """Stable identity of a light: sha256 over its coefficient bytes."""
    digest = hashlib.sha256()
    digest.update(str(light.band).encode())
    for channel in light.channels:
        digest.update(np.ascontiguousarray(channel.coeffs, dtype="<f8").tobytes())
    return digest.hexdigest()


def load_pfm(path) -> EnvMap:
    """Read a color PFM file as an environment map."""
    return EnvMap(texio.read_pfm(path))


def save_pfm(env: EnvMap, path) -> None:
    texio.write_pfm(path, env.values)


def texel_directions(width: int, height: int) -> np.ndarray:
    """Unit directions at texel centers, shape (height, width, 3)."""
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    theta = math.pi * v
    phi = 2.0 * math.pi * u
    st, ct = np.sin(theta), np.cos(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    out = np.empty((height, width, 3))
    out[:, :, 0] = st[:, None] * cp[None, :]
    out[:, :, 1] = st[:, None] * sp[None, :]
    out[:, :, 2] = ct[:, None]
    return out


def solid_angles(width: int, height: int) -> np.ndarray:
    """Per-texel solid angle (2*pi/w) * (pi/h) * sin(theta), shape (h, w)."""
    v = (np.arange(height) + 0.5) / height
    sin_t = np.sin(math.pi * v)
    return np.broadcast_to(
        (2.0 * math.pi / width) * (math.pi / height) * sin_t[:, None],
        (height, width)).copy()


def sample(env: EnvMap, dirs: np.ndarray) -> np.ndarray:
    """Bilinear radiance lookup; dirs (n, 3) unit -> (n, 3) RGB.

    u wraps around the seam; v clamps at the poles.
    """
    d = np.asarray(dirs, dtype=np.float64)
    squeeze = d.ndim == 1
    if squeeze:
        d = d[None, :]
    w, h = env.width, env.height
    phi = np.arctan2(d[:, 1], d[:, 0]) % (2.0 * math.pi)
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    x = phi / (2.0 * math.pi) * w - 0.5
    y = theta / math.pi * h - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    c0 = x0 % w
    c1 = (x0 + 1) % w
    r0 = np.clip(y0, 0, h - 1)
    r1 = np.clip(y0 + 1, 0, h - 1)
    vals = env.values.astype(np.float64)
    top = vals[r0, c0] * (1 - fx) + vals[r0, c1] * fx
    bot = vals[r1, c0] * (1 - fx) + vals[r1, c1] * fx
    out = top * (1 - fy) + bot * fy
    return out[0] if squeeze else out


def project_light(env: EnvMap, band: int) -> SHLight:
    """Project the map to SH per channel with solid-angle weights."""
    dirs = texel_directions(env.width, env.height).reshape(-1, 3)
    weights = solid_angles(env.width, env.height).reshape(-1)
    basis = sh.eval_basis_batch(dirs, band)
    coeffs = basis.T @ (weights[:, None] * env.values.reshape(-1, 3))
    return light_from_coeffs(coeffs, band)


def synthesize_bandlimited(light: SHLight, width: int,
                           height: int) -> tuple[EnvMap, int]:
    """Evaluate the light's reconstruction at every texel.

    Negative reconstructions are clamped to zero; returns the map and the
    number of clamped texel-channels.
    """
    if width != 2 * height:
        raise ValueError(f"lat-long map needs width == 2*height, got {width}x{height}")
    dirs = texel_directions(width, height).reshape(-1, 3)
    basis = sh.eval_basis_batch(dirs, light.band)
    values = basis @ light.coeffs_rgb()
    clamped = int(np.count_nonzero(values < 0))
    values = np.maximum(values, 0.0).reshape(height, width, 3)
    return EnvMap(values.astype(np.float32)), clamped
