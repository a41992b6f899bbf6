"""Transfer-texture baking: UV-space G-buffers, dilation, and MC projection.

A bake rasterizes one texture set's triangles by their UV coordinates into
a G-buffer of surface points, then projects visibility * clamped cosine
onto the SH basis per texel with stratified uniform-sphere sampling. Texel
estimates are independent and use per-texel RNG substreams keyed by
(seed, texel index), so results are bitwise reproducible under any
batching or thread count.

Texel (row, col) covers the UV rectangle centered at
u = (col + 0.5)/width, v = (row + 0.5)/height.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import sh, texio
from .geom import BVH, Mesh

MIN_SAMPLES = 64
DEFAULT_DILATION = 3

# 8-neighborhood in scan order: smallest row first, then smallest column,
# so ties between equally near sources resolve deterministically
_NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1),
                     (1, -1), (1, 0), (1, 1))


@dataclass
class GBuffer:
    """Per-texel interpolated surface attributes in UV space."""

    positions: np.ndarray   # (h, w, 3) float64
    normals: np.ndarray     # (h, w, 3) float64, unit where valid
    object_ids: np.ndarray  # (h, w) int32, -1 where invalid
    validity: np.ndarray    # (h, w) bool

    def __post_init__(self):
        h, w = self.validity.shape
        if self.positions.shape != (h, w, 3) or self.normals.shape != (h, w, 3):
            raise ValueError("G-buffer attribute shape mismatch")
        if self.object_ids.shape != (h, w):
            raise ValueError("G-buffer attribute shape mismatch")
        if self.validity.any():
            lens = np.linalg.norm(self.normals[self.validity], axis=1)
            if np.abs(lens - 1.0).max() > 1e-4:
                raise ValueError("valid G-buffer normals must be unit length")

    @property
    def width(self) -> int:
        return self.validity.shape[1]

    @property
    def height(self) -> int:
        return self.validity.shape[0]


@dataclass
class TransferTexture:
    """Planar SH coefficient texture (channel-major planes) with validity.

    Plane index = channel * band**2 + coefficient. Invalid texels hold the
    zero vector everywhere.
    """

    band: int
    channels: int
    planes: np.ndarray    # (channels * band**2, h, w) float32
    validity: np.ndarray  # (h, w) bool

    def __post_init__(self):
        k = self.band * self.band
        if self.planes.ndim != 3 or self.planes.shape[0] != self.channels * k:
            raise ValueError(
                f"expected {self.channels * k} planes, got {self.planes.shape}")
        if self.validity.shape != self.planes.shape[1:]:
            raise ValueError("validity mask shape mismatch")
        if not np.all(np.isfinite(self.planes)):
            raise ValueError("transfer coefficients must be finite")
        if np.any(self.planes[:, ~self.validity] != 0.0):
            raise ValueError("invalid texels must hold exactly zero")

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    def save(self, path) -> None:
        texio.write_prtt(path, self.planes, self.band, self.channels,
                         self.validity)

    @classmethod
    def load(cls, path) -> "TransferTexture":
        planes, band, channels, validity = texio.read_prtt(path)
        return cls(band, channels, planes, validity)


@dataclass
class VertexTransfer:
    """Per-vertex SH transfer, one coefficient block per mesh."""

    band: int
    coeffs: list[np.ndarray]  # per mesh: (vertex count, band**2) float64

    def __post_init__(self):
        k = self.band * self.band
        for block in self.coeffs:
            if block.ndim != 2 or block.shape[1] != k:
                raise ValueError(f"expected (n, {k}) blocks, got {block.shape}")

    @property
    def vertex_count(self) -> int:
        return sum(len(c) for c in self.coeffs)


def _tangent_frame(dp1, dp2, duv1, duv2):
    """Unit tangent/bitangent of a triangle from its UV mapping, or None."""
    det = duv1[0] * duv2[1] - duv1[1] * duv2[0]
    if abs(det) < 1e-14:
        return None
    r = 1.0 / det
    t = (dp1 * duv2[1] - dp2 * duv1[1]) * r
    b = (dp2 * duv1[0] - dp1 * duv2[0]) * r
    tn = np.linalg.norm(t)
    bn = np.linalg.norm(b)
    if tn < 1e-14 or bn < 1e-14:
        return None
    return t / tn, b / bn


def rasterize_gbuffer(meshes: list[Mesh], width: int, height: int,
                      use_normal_map: bool = False,
                      normal_map: np.ndarray | None = None) -> GBuffer:
    """Rasterize one texture set's triangles by UV into a G-buffer.

    A texel is valid iff its center lies inside some triangle's UV
    footprint; attributes are barycentrically interpolated. With
    use_normal_map, the stored normal is the tangent-space map value
    (nearest-texel lookup, decode 2*rgb - 1) rotated into the local frame;
    a map texel encoding (0, 0, 1) reproduces the geometric path bitwise.
    Overlapping claims from different faces with differing attributes get a
    counted warning; the last writer wins.
    """
    if use_normal_map and normal_map is None:
        raise ValueError("use_normal_map requires a normal_map image")
    for mesh in meshes:
        if mesh.uvs.size and (mesh.uvs.min() < 0.0 or mesh.uvs.max() > 1.0):
            raise ValueError(f"mesh '{mesh.name}' has UVs outside [0, 1]^2")

    positions = np.zeros((height, width, 3))
    normals = np.zeros((height, width, 3))
    object_ids = np.full((height, width), -1, dtype=np.int32)
    validity = np.zeros((height, width), dtype=bool)
    owner = np.full((height, width), -1, dtype=np.int64)
    overlapped = np.zeros((height, width), dtype=bool)

    if use_normal_map:
        nm = np.asarray(normal_map, dtype=np.float64)
        if nm.ndim != 3 or nm.shape[2] != 3:
            raise ValueError("normal map must be an (h, w, 3) image")

    global_face = 0
    for mesh in meshes:
        uvf = mesh.uvs[mesh.faces]
        posf = mesh.positions[mesh.faces]
        nrmf = mesh.normals[mesh.faces]
        for t in range(mesh.triangle_count):
            a, b, c = uvf[t]
            e1 = b - a
            e2 = c - a
            det = e1[0] * e2[1] - e1[1] * e2[0]
            if abs(det) < 1e-14:
                global_face += 1
                continue
            lo_c = max(0, int(math.floor(min(a[0], b[0], c[0]) * width - 0.5)))
            hi_c = min(width - 1, int(math.ceil(max(a[0], b[0], c[0]) * width - 0.5)))
            lo_r = max(0, int(math.floor(min(a[1], b[1], c[1]) * height - 0.5)))
            hi_r = min(height - 1, int(math.ceil(max(a[1], b[1], c[1]) * height - 0.5)))
            if hi_c < lo_c or hi_r < lo_r:
                global_face += 1
                continue
            cols = np.arange(lo_c, hi_c + 1)
            rows = np.arange(lo_r, hi_r + 1)
            uc = (cols + 0.5) / width
            vc = (rows + 0.5) / height
            pu = np.broadcast_to(uc[None, :], (len(rows), len(cols)))
            pv = np.broadcast_to(vc[:, None], (len(rows), len(cols)))
            du = pu - a[0]
            dv = pv - a[1]
            inv = 1.0 / det
            w1 = (du * e2[1] - dv * e2[0]) * inv
            w2 = (e1[0] * dv - e1[1] * du) * inv
            w0 = 1.0 - w1 - w2
            inside = (w0 >= -1e-10) & (w1 >= -1e-10) & (w2 >= -1e-10)
            if not inside.any():
                global_face += 1
                continue
            rr, cc = np.nonzero(inside)
            r_idx = rows[rr]
            c_idx = cols[cc]
            bary = np.column_stack([w0[rr, cc], w1[rr, cc], w2[rr, cc]])
            pos = bary @ posf[t]
            nrm_raw = bary @ nrmf[t]
            if use_normal_map:
                frame = _tangent_frame(posf[t, 1] - posf[t, 0],
                                       posf[t, 2] - posf[t, 0], e1, e2)
                mh, mw = nm.shape[:2]
                mr = np.clip((pv[rr, cc] * mh).astype(np.int64), 0, mh - 1)
                mc = np.clip((pu[rr, cc] * mw).astype(np.int64), 0, mw - 1)
                ts = 2.0 * nm[mr, mc] - 1.0
                if frame is None:
                    nrm = ts[:, 2:3] * nrm_raw
                else:
                    tangent, bitangent = frame
                    nrm = (ts[:, 0:1] * tangent + ts[:, 1:2] * bitangent
                           + ts[:, 2:3] * nrm_raw)
            else:
                nrm = nrm_raw
            nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)

            prev_valid = validity[r_idx, c_idx]
            if prev_valid.any():
                other = owner[r_idx, c_idx] != global_face
                differs = ((np.abs(positions[r_idx, c_idx] - pos).max(axis=1) > 1e-9)
                           | (np.abs(normals[r_idx, c_idx] - nrm).max(axis=1) > 1e-9))
                overlapped[r_idx[prev_valid & other & differs],
                           c_idx[prev_valid & other & differs]] = True
            positions[r_idx, c_idx] = pos
            normals[r_idx, c_idx] = nrm
            object_ids[r_idx, c_idx] = mesh.object_id
            owner[r_idx, c_idx] = global_face
            validity[r_idx, c_idx] = True
            global_face += 1

    count = int(overlapped.sum())
    if count:
        warnings.warn(f"{count} texel(s) claimed by overlapping UV islands "
                      "with differing attributes; last writer wins",
                      stacklevel=2)
    return GBuffer(positions, normals, object_ids, validity)


def _dilate_once(validity, arrays):
    """One 8-neighborhood dilation pass over (h, w, ...) arrays."""
    h, w = validity.shape
    pad_valid = np.zeros((h + 2, w + 2), dtype=bool)
    pad_valid[1:-1, 1:-1] = validity
    source = np.full((h, w), -1, dtype=np.int8)
    for o, (dr, dc) in enumerate(_NEIGHBOR_OFFSETS):
        shifted = pad_valid[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        take = (source < 0) & ~validity & shifted
        source[take] = o
    fill = source >= 0
    out_arrays = [a.copy() for a in arrays]
    for o, (dr, dc) in enumerate(_NEIGHBOR_OFFSETS):
        mask = source == o
        if not mask.any():
            continue
        rows, cols = np.nonzero(mask)
        for a, out in zip(arrays, out_arrays):
            out[rows, cols] = a[rows + dr, cols + dc]
    return validity | fill, out_arrays


def dilate(texture, radius: int):
    """Flood invalid texels from their nearest valid 8-neighbors.

    Applied iteratively ``radius`` times; within one pass the source texel
    is the first valid neighbor in scan order (smallest row, then column).
    Returns a new object of the same type; valid texels are unchanged.
    """
    if radius < 0:
        raise ValueError("dilation radius must be >= 0")
    if isinstance(texture, GBuffer):
        validity = texture.validity
        arrays = [texture.positions, texture.normals, texture.object_ids]
        for _ in range(radius):
            if validity.all():
                break
            validity, arrays = _dilate_once(validity, arrays)
        return GBuffer(arrays[0].copy(), arrays[1].copy(), arrays[2].copy(),
                       validity.copy())
    if isinstance(texture, TransferTexture):
        validity = texture.validity
        # planes are (p, h, w); dilation shifts rows/cols, so move the plane
        # axis last
        stack = np.moveaxis(texture.planes, 0, -1)
        arrays = [stack]
        for _ in range(radius):
            if validity.all():
                break
            validity, arrays = _dilate_once(validity, arrays)
        planes = np.ascontiguousarray(np.moveaxis(arrays[0], -1, 0),
                                      dtype=np.float32)
        return TransferTexture(texture.band, texture.channels, planes,
                               validity.copy())
    raise TypeError(f"cannot dilate {type(texture).__name__}")


def stratification_grid(n: int) -> tuple[int, int]:
    """Stratum counts (n_u, n_v) with n_u * n_v == n and n_v ~ sqrt(n)."""
    nv = math.isqrt(n)
    while n % nv:
        nv -= 1
    return n // nv, nv


def stratified_sphere(rng, n: int) -> np.ndarray:
    """n jittered-stratum uniform directions on the sphere, (n, 3).

    Strata form an n_u x n_v grid over (phi, cos theta); one uniform jitter
    per stratum. The RNG is consumed exactly once with shape (n, 2).
    """
    nu, nv = stratification_grid(n)
    jitter = rng.random((n, 2))
    iu = np.tile(np.arange(nu), nv)
    iv = np.repeat(np.arange(nv), nu)
    u = (iu + jitter[:, 0]) / nu
    v = (iv + jitter[:, 1]) / nv
    z = 1.0 - 2.0 * v
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * u
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _texel_chunks(indices, samples):
    """Split texel index array into chunks of bounded ray count."""
    per = max(1, (1 << 18) // samples)
    for start in range(0, len(indices), per):
        yield indices[start:start + per]


def bake_transfer(gbuffer: GBuffer, bvh: BVH, band: int,
                  samples_per_texel: int, seed: int,
                  dilation_radius: int = DEFAULT_DILATION) -> TransferTexture:
    """Project visibility * clamped cosine onto SH per valid texel.

    Estimator per texel with point p, normal n:
    coeffs_i = (4 pi / N) * sum_s V(p, w_s) * max(w_s . n, 0) * y_i(w_s)
    over N stratified uniform-sphere directions w_s; V by occlusion rays
    offset by the scene ray epsilon. Per-texel RNG substream (seed, texel
    flat index) makes the bake bitwise deterministic. The result is dilated
    before return.
    """
    if samples_per_texel < MIN_SAMPLES:
        raise ValueError(f"samples_per_texel must be >= {MIN_SAMPLES}, "
                         f"got {samples_per_texel}")
    h, w = gbuffer.validity.shape
    k = band * band
    planes = np.zeros((k, h, w), dtype=np.float32)
    flat_valid = np.nonzero(gbuffer.validity.reshape(-1))[0]
    positions = gbuffer.positions.reshape(-1, 3)
    normals = gbuffer.normals.reshape(-1, 3)
    scale = 4.0 * math.pi / samples_per_texel

    for chunk in _texel_chunks(flat_valid, samples_per_texel):
        coeffs = _estimate_transfer(positions[chunk], normals[chunk], bvh,
                                    band, samples_per_texel, seed, chunk)
        rows, cols = np.divmod(chunk, w)
        planes[:, rows, cols] = (scale * coeffs).T.astype(np.float32)

    tex = TransferTexture(band, 1, planes, gbuffer.validity.copy())
    return dilate(tex, dilation_radius)


def _estimate_transfer(points, normals, bvh, band, samples, seed, substream_ids):
    """Raw per-point estimate sums: sum_s V * cos * y_i(w_s), (n, k)."""
    n = len(points)
    dirs = np.empty((n, samples, 3))
    for row, sid in enumerate(substream_ids):
        rng = np.random.default_rng((seed, int(sid)))
        dirs[row] = stratified_sphere(rng, samples)
    cos = np.einsum("nsj,nj->ns", dirs, normals)
    sel = cos > 0.0
    flat_sel = sel.reshape(-1)
    origins = np.repeat(points, samples, axis=0)[flat_sel]
    occluded = bvh.occluded_batch(origins, dirs.reshape(-1, 3)[flat_sel])
    weight = np.zeros(n * samples)
    weight[flat_sel] = np.where(occluded, 0.0, cos.reshape(-1)[flat_sel])
    basis = sh.eval_basis_batch(dirs.reshape(-1, 3), band)
    return np.einsum("ns,nsk->nk", weight.reshape(n, samples),
                     basis.reshape(n, samples, -1))


def bake_vertex_transfer(meshes: list[Mesh], bvh: BVH, band: int,
                         samples_per_vertex: int, seed: int) -> VertexTransfer:
    """Same estimator as bake_transfer, evaluated at mesh vertices.

    Vertex substreams are keyed by (seed, global vertex index) with meshes
    concatenated in order.
    """
    if samples_per_vertex < MIN_SAMPLES:
        raise ValueError(f"samples_per_vertex must be >= {MIN_SAMPLES}, "
                         f"got {samples_per_vertex}")
    scale = 4.0 * math.pi / samples_per_vertex
    blocks = []
    offset = 0
    for mesh in meshes:
        ids = offset + np.arange(len(mesh.positions))
        block = np.empty((len(mesh.positions), band * band))
        for chunk in _texel_chunks(np.arange(len(mesh.positions)),
                                   samples_per_vertex):
            block[chunk] = scale * _estimate_transfer(
                mesh.positions[chunk], mesh.normals[chunk], bvh, band,
                samples_per_vertex, seed, ids[chunk])
        blocks.append(block)
        offset += len(mesh.positions)
    return VertexTransfer(band, blocks)
