"""Image synthesis from baked transfer data.

Fragment mode fetches SH transfer per pixel from textures; vertex mode
shades mesh vertices and interpolates colors. Both support two shading
paths with identical output: TP contracts the tripling tensor per shade,
TPFL applies the precomputed fixed-light product matrix.

Shading at a point with transfer T, light L, and a Phong material:
per channel, L^p = project(T * L) via TP or TPFL; color =
diffuse/pi * 2*sqrt(pi) * L^p_0
+ specular * reconstruct(convolve_phong(L^p, s), reflect(w_o, n)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sh
from .baker import TransferTexture, VertexTransfer
from .envlight import EnvMap, SHLight, sample as env_sample
from .geom import BVH, Mesh

TWO_SQRT_PI = 2.0 * math.sqrt(math.pi)

# textured Phong exponents are snapped to this table so convolution scales
# are computed 64 times, not per pixel
EXPONENT_TABLE = np.logspace(0.0, 4.0, 64)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; one ray per pixel through the pixel center."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_degrees: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=np.float64))
        if not (0.0 < self.fov_degrees < 180.0):
            raise ValueError(f"FOV must be in (0, 180), got {self.fov_degrees}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        forward = self.look_at - self.position
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValueError("look_at must differ from position")
        cross = np.cross(forward / norm, self.up)
        if np.linalg.norm(cross) < 1e-9:
            raise ValueError("up vector is parallel to the view direction")

    def basis(self):
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        right = right / np.linalg.norm(right)
        up = np.cross(right, forward)
        return forward, right, up

    def ray_directions(self, supersample: int = 1) -> np.ndarray:
        """Unit directions for every (sub)pixel, row-major, shape (n, 3)."""
        forward, right, up = self.basis()
        w = self.width * supersample
        h = self.height * supersample
        tan_half = math.tan(math.radians(self.fov_degrees) * 0.5)
        aspect = self.width / self.height
        xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * tan_half * aspect
        ys = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * tan_half
        dirs = (forward[None, None, :]
                + xs[None, :, None] * right[None, None, :]
                + ys[:, None, None] * up[None, None, :])
        dirs = dirs / np.linalg.norm(dirs, axis=2, keepdims=True)
        return dirs.reshape(-1, 3)


@dataclass(frozen=True)
class Material:
    """Phong material; albedos and exponent may be scalars or textures.

    Textured fields are (h, w, 3) images (exponent: (h, w)) sampled at the
    surface UV. The optional normal map perturbs the shading normal used
    for the reflection direction, matching the baker's G-buffer convention.
    """

    diffuse: np.ndarray          # (3,) or (h, w, 3)
    specular: np.ndarray         # (3,)
    exponent: float | np.ndarray  # scalar or (h, w)
    normal_map: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "diffuse",
                           np.asarray(self.diffuse, dtype=np.float64))
        object.__setattr__(self, "specular",
                           np.asarray(self.specular, dtype=np.float64))
        if self.diffuse.ndim not in (1, 3):
            raise ValueError("diffuse albedo must be (3,) or an (h, w, 3) texture")
        if self.diffuse.min() < 0.0 or self.diffuse.max() > 1.0:
            raise ValueError("albedo values must lie in [0, 1]")
        if self.specular.shape != (3,):
            raise ValueError("specular albedo must be (3,)")
        if self.specular.min() < 0.0 or self.specular.max() > 1.0:
            raise ValueError("albedo values must lie in [0, 1]")
        if isinstance(self.exponent, np.ndarray) and self.exponent.ndim == 2:
            if self.exponent.min() < 1.0:
                raise ValueError("Phong exponent must be >= 1")
        else:
            object.__setattr__(self, "exponent", float(self.exponent))
            if self.exponent < 1.0:
                raise ValueError("Phong exponent must be >= 1")

    def diffuse_at(self, uvs: np.ndarray) -> np.ndarray:
        if self.diffuse.ndim == 1:
            return np.broadcast_to(self.diffuse, (len(uvs), 3))
        return _nearest_texels(self.diffuse, uvs)

    def exponent_at(self, uvs: np.ndarray) -> np.ndarray:
        if not isinstance(self.exponent, np.ndarray):
            return np.full(len(uvs), self.exponent)
        return _nearest_texels(self.exponent[:, :, None], uvs)[:, 0]


@dataclass
class Image:
    """Linear RGB image."""

    pixels: np.ndarray  # (h, w, 3) float64

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("image values must be finite")
        self.pixels = p

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class RenderStats:
    """Instrumentation: cost model counters and clamp reporting."""

    shade_count: int = 0
    covered_pixels: int = 0
    total_pixels: int = 0
    clamped_pixels: int = 0
    transfer_misses: int = 0

    @property
    def clamp_rate(self) -> float:
        return self.clamped_pixels / max(1, self.total_pixels)


@dataclass
class Scene:
    """Meshes with aligned materials plus the shared BVH."""

    meshes: list[Mesh]
    materials: list[Material]
    bvh: BVH

    def __post_init__(self):
        if len(self.meshes) != len(self.materials):
            raise ValueError("one material per mesh required")


def make_scene(meshes: list[Mesh], materials: list[Material]) -> Scene:
    from .geom import build_bvh
    return Scene(list(meshes), list(materials), build_bvh(meshes))


def reflect(view_out: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Mirror the outgoing view direction about the normal, batched."""
    d = np.sum(view_out * normals, axis=-1, keepdims=True)
    return 2.0 * d * normals - view_out


def _nearest_texels(image: np.ndarray, uvs: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    cols = np.clip((uvs[:, 0] * w).astype(np.int64), 0, w - 1)
    rows = np.clip((uvs[:, 1] * h).astype(np.int64), 0, h - 1)
    return image[rows, cols]


def fetch_bilinear(tex: TransferTexture, uvs: np.ndarray) -> np.ndarray:
    """Bilinearly interpolate coefficient vectors at UVs, (n, planes).

    Filtering is linear in the coefficients, so it commutes with SH
    reconstruction. Coordinates clamp at the atlas edge (no wrap).
    """
    u = np.asarray(uvs, dtype=np.float64)
    h, w = tex.height, tex.width
    x = u[:, 0] * w - 0.5
    y = u[:, 1] * h - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[None, :]
    fy = (y - y0)[None, :]
    c0 = np.clip(x0, 0, w - 1)
    c1 = np.clip(x0 + 1, 0, w - 1)
    r0 = np.clip(y0, 0, h - 1)
    r1 = np.clip(y0 + 1, 0, h - 1)
    planes = tex.planes.astype(np.float64)
    top = planes[:, r0, c0] * (1 - fx) + planes[:, r0, c1] * fx
    bot = planes[:, r1, c0] * (1 - fx) + planes[:, r1, c1] * fx
    return (top * (1 - fy) + bot * fy).T


def texel_is_valid(tex: TransferTexture, uvs: np.ndarray) -> np.ndarray:
    """Validity of the nearest texel per UV, (n,) bool."""
    u = np.asarray(uvs, dtype=np.float64)
    cols = np.clip((u[:, 0] * tex.width).astype(np.int64), 0, tex.width - 1)
    rows = np.clip((u[:, 1] * tex.height).astype(np.int64), 0, tex.height - 1)
    return tex.validity[rows, cols]


def _tp_prepared(tau: sh.TriplingTensor):
    """Entry arrays sorted by output index k, with segment boundaries."""
    order = np.argsort(tau.k, kind="stable")
    i = tau.i[order]
    j = tau.j[order]
    v = tau.values[order]
    kk = tau.k[order]
    starts = np.nonzero(np.r_[True, np.diff(kk) != 0])[0]
    out_k = kk[starts]
    return i, j, v, starts, out_k


def product_batch(transfers: np.ndarray, light_coeffs: np.ndarray,
                  mode: str, tau: sh.TriplingTensor,
                  matrix: np.ndarray | None = None) -> np.ndarray:
    """SH product of each transfer row with one light channel, (n, k).

    mode 'tp' contracts the sparse tensor per row; mode 'tpfl' multiplies by
    the fixed-light matrix (pass ``matrix`` to reuse a precomputed one).
    """
    n, k = transfers.shape
    if mode == "tpfl":
        if matrix is None:
            matrix = sh.product_matrix(
                sh.SHVector(tau.band, light_coeffs), tau).data
        return transfers @ matrix
    if mode != "tp":
        raise ValueError(f"unknown product mode {mode!r}")
    i, j, v, starts, out_k = _tp_prepared(tau)
    out = np.zeros((n, k))
    step = max(1, (1 << 22) // max(1, len(v)))
    factors = v * light_coeffs[j]
    for s in range(0, n, step):
        block = transfers[s:s + step]
        contrib = block[:, i] * factors[None, :]
        out[s:s + step, out_k] = np.add.reduceat(contrib, starts, axis=1)
    return out


def _exponent_scales(exponents: np.ndarray, band: int,
                     quantize: bool) -> np.ndarray:
    """Per-row convolution scale vectors, (n, k)."""
    if not quantize:
        uniq = np.unique(exponents)
    else:
        idx = np.clip(np.rint(
            np.log10(np.maximum(exponents, 1.0)) / 4.0 * 63.0), 0, 63).astype(int)
        exponents = EXPONENT_TABLE[idx]
        uniq = np.unique(exponents)
    k = band * band
    out = np.empty((len(exponents), k))
    for s in uniq:
        out[exponents == s] = sh.convolution_scale(float(s), band)
    return out


def shade_batch(transfers: np.ndarray, light: SHLight, diffuse: np.ndarray,
                specular: np.ndarray, exponents: np.ndarray,
                normals: np.ndarray, view_out: np.ndarray, mode: str,
                tau: sh.TriplingTensor,
                matrices: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
                quantize_exponents: bool = False):
    """Shade n points; returns (colors (n, 3), clamped_count).

    transfers may be (n, k) scalar transfer applied to all channels, or
    (n, 3, k) per-channel SH (the one-bounce radiance path, where the
    "light product" is already baked in and only the BRDF is applied).
    """
    band = tau.band
    k = band * band
    n = len(transfers)
    per_channel_input = transfers.ndim == 3
    light_rgb = light.coeffs_rgb() if light is not None else None

    refl = reflect(view_out, normals)
    basis_r = sh.eval_basis_batch(refl, band)
    scales = _exponent_scales(exponents, band, quantize_exponents)

    colors = np.empty((n, 3))
    for c in range(3):
        if per_channel_input:
            lp = transfers[:, c, :]
        else:
            lp = product_batch(
                transfers, light_rgb[:, c], mode, tau,
                matrix=None if matrices is None else matrices[c])
        diffuse_term = diffuse[:, c] / math.pi * TWO_SQRT_PI * lp[:, 0]
        glossy = np.sum(basis_r * (lp * scales), axis=1)
        colors[:, c] = diffuse_term + specular[:, c] * glossy
    clamped = int(np.count_nonzero(np.any(colors < 0.0, axis=1)))
    return np.maximum(colors, 0.0), clamped


def shade_point(transfer: sh.SHVector, light: SHLight, material: Material,
                normal: np.ndarray, view_out: np.ndarray, mode: str,
                tau: sh.TriplingTensor) -> np.ndarray:
    """Shade a single surface point; the n=1 case of shade_batch."""
    if transfer.band != light.band or transfer.band != tau.band:
        raise ValueError("band mismatch between transfer, light, and tensor")
    if isinstance(material.diffuse, np.ndarray) and material.diffuse.ndim == 3:
        raise ValueError("shade_point needs constant material values")
    colors, _ = shade_batch(
        transfer.coeffs[None, :], light,
        np.asarray(material.diffuse, dtype=np.float64)[None, :],
        material.specular[None, :], np.array([float(material.exponent)]),
        np.asarray(normal, dtype=np.float64)[None, :],
        np.asarray(view_out, dtype=np.float64)[None, :], mode, tau)
    return colors[0]


def _shading_normals(scene: Scene, mesh_idx: int, tri_rows, bary, geom_normals):
    """Per-hit shading normal; applies the mesh material's normal map."""
    material = scene.materials[mesh_idx]
    mesh = scene.meshes[mesh_idx]
    if material.normal_map is None:
        return geom_normals / np.linalg.norm(geom_normals, axis=1, keepdims=True)
    from .baker import _tangent_frame
    nm = np.asarray(material.normal_map, dtype=np.float64)
    mh, mw = nm.shape[:2]
    out = np.empty_like(geom_normals)
    faces = mesh.faces[tri_rows]
    uvs = np.einsum("nj,njk->nk", bary, mesh.uvs[faces])
    mr = np.clip((uvs[:, 1] * mh).astype(np.int64), 0, mh - 1)
    mc = np.clip((uvs[:, 0] * mw).astype(np.int64), 0, mw - 1)
    ts = 2.0 * nm[mr, mc] - 1.0
    for row in range(len(tri_rows)):
        f = faces[row]
        p = mesh.positions[f]
        t = mesh.uvs[f]
        frame = _tangent_frame(p[1] - p[0], p[2] - p[0],
                               t[1] - t[0], t[2] - t[0])
        if frame is None:
            out[row] = ts[row, 2] * geom_normals[row]
        else:
            tangent, bitangent = frame
            out[row] = (ts[row, 0] * tangent + ts[row, 1] * bitangent
                        + ts[row, 2] * geom_normals[row])
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def render_fragment(scene: Scene, camera: Camera,
                    textures: dict[str, TransferTexture], light: SHLight,
                    mode: str, tau: sh.TriplingTensor,
                    env: EnvMap | None = None,
                    indirect: dict[str, TransferTexture] | None = None,
                    indirect_meta: dict[str, dict] | None = None,
                    supersample: int = 1, include_direct: bool = True):
    """Per-pixel transfer fetch and shade; returns (Image, RenderStats).

    ``textures`` maps texture-set names to scalar transfer textures. When
    ``indirect`` (one-bounce radiance per set) is given, each texture's
    sidecar metadata must carry the active light's hash. With
    ``include_direct=False`` only the indirect term is rendered (black
    background), which is what the one-bounce reference estimates.
    """
    from .envlight import light_hash as hash_of
    if indirect is not None:
        active = hash_of(light)
        for name, tex in indirect.items():
            meta = (indirect_meta or {}).get(name)
            if meta is None or meta.get("light_hash") != active:
                raise ValueError(
                    f"indirect texture '{name}' baked for a different light")
            if tex.band != tau.band:
                raise ValueError("indirect texture band mismatch")

    ss = max(1, int(supersample))
    dirs = camera.ray_directions(ss)
    n = len(dirs)
    origins = np.broadcast_to(camera.position, (n, 3))
    t, tri, bu, bv = scene.bvh.intersect_batch(origins, dirs)
    hit = tri >= 0

    pixels = np.zeros((n, 3))
    if include_direct and env is not None and (~hit).any():
        pixels[~hit] = env_sample(env, dirs[~hit])

    stats = RenderStats(total_pixels=camera.width * camera.height)
    matrices = None
    if mode == "tpfl":
        rgb = light.coeffs_rgb()
        matrices = tuple(
            sh.product_matrix(sh.SHVector(tau.band, rgb[:, c]), tau).data
            for c in range(3))

    hit_rows = np.nonzero(hit)[0]
    mesh_of_hit = scene.bvh.tri_mesh[tri[hit_rows]]
    for mesh_idx in np.unique(mesh_of_hit):
        rows = hit_rows[mesh_of_hit == mesh_idx]
        mesh = scene.meshes[mesh_idx]
        material = scene.materials[mesh_idx]
        tex = textures[mesh.texture_set]
        if tex.band != tau.band:
            raise ValueError("transfer texture band mismatch")
        tri_rows = scene.bvh.tri_face[tri[rows]]
        faces = mesh.faces[tri_rows]
        w0 = 1.0 - bu[rows] - bv[rows]
        bary = np.column_stack([w0, bu[rows], bv[rows]])
        uvs = np.einsum("nj,njk->nk", bary, mesh.uvs[faces])
        geom_n = np.einsum("nj,njk->nk", bary, mesh.normals[faces])
        normals = _shading_normals(scene, int(mesh_idx), tri_rows, bary, geom_n)
        transfers = fetch_bilinear(tex, uvs)
        view_out = -dirs[rows]
        diffuse = material.diffuse_at(uvs)
        specular = np.broadcast_to(material.specular, (len(rows), 3))
        exponents = material.exponent_at(uvs)
        quantize = isinstance(material.exponent, np.ndarray)
        if include_direct:
            colors, clamped = shade_batch(
                transfers, light, diffuse, specular, exponents, normals,
                view_out, mode, tau, matrices=matrices,
                quantize_exponents=quantize)
            stats.clamped_pixels += clamped
        else:
            colors = np.zeros((len(rows), 3))
        stats.shade_count += len(rows)

        if indirect is not None and mesh.texture_set in indirect:
            itex = indirect[mesh.texture_set]
            k = tau.band * tau.band
            fetched = fetch_bilinear(itex, uvs).reshape(len(rows), 3, k)
            icolors, iclamped = shade_batch(
                fetched, None, diffuse, specular, exponents, normals,
                view_out, mode, tau, quantize_exponents=quantize)
            colors = colors + icolors
        pixels[rows] = colors

    stats.covered_pixels = int(hit.sum())
    h, w = camera.height, camera.width
    img = pixels.reshape(h * ss, w * ss, 3)
    if ss > 1:
        img = img.reshape(h, ss, w, ss, 3).mean(axis=(1, 3))
        stats.covered_pixels = int(
            hit.reshape(h, ss, w, ss).any(axis=(1, 3)).sum())
    return Image(img), stats


def render_vertex(scene: Scene, camera: Camera, transfer: VertexTransfer,
                  light: SHLight, mode: str, tau: sh.TriplingTensor,
                  env: EnvMap | None = None):
    """Shade every vertex once, interpolate colors per pixel.

    Returns (Image, RenderStats); shade_count equals the total vertex count
    regardless of image coverage.
    """
    matrices = None
    if mode == "tpfl":
        rgb = light.coeffs_rgb()
        matrices = tuple(
            sh.product_matrix(sh.SHVector(tau.band, rgb[:, c]), tau).data
            for c in range(3))

    vertex_colors = []
    stats = RenderStats(total_pixels=camera.width * camera.height)
    for mesh, material, block in zip(scene.meshes, scene.materials,
                                     transfer.coeffs):
        view_out = camera.position[None, :] - mesh.positions
        view_out = view_out / np.linalg.norm(view_out, axis=1, keepdims=True)
        diffuse = material.diffuse_at(mesh.uvs)
        specular = np.broadcast_to(material.specular, (len(block), 3))
        exponents = material.exponent_at(mesh.uvs)
        colors, clamped = shade_batch(
            block, light, diffuse, specular, exponents, mesh.normals,
            view_out, mode, tau, matrices=matrices,
            quantize_exponents=isinstance(material.exponent, np.ndarray))
        vertex_colors.append(colors)
        stats.shade_count += len(block)
        stats.clamped_pixels += clamped

    dirs = camera.ray_directions()
    n = len(dirs)
    origins = np.broadcast_to(camera.position, (n, 3))
    t, tri, bu, bv = scene.bvh.intersect_batch(origins, dirs)
    hit = tri >= 0
    pixels = np.zeros((n, 3))
    if env is not None and (~hit).any():
        pixels[~hit] = env_sample(env, dirs[~hit])
    hit_rows = np.nonzero(hit)[0]
    mesh_of_hit = scene.bvh.tri_mesh[tri[hit_rows]]
    for mesh_idx in np.unique(mesh_of_hit):
        rows = hit_rows[mesh_of_hit == mesh_idx]
        mesh = scene.meshes[mesh_idx]
        faces = mesh.faces[scene.bvh.tri_face[tri[rows]]]
        w0 = 1.0 - bu[rows] - bv[rows]
        bary = np.column_stack([w0, bu[rows], bv[rows]])
        pixels[rows] = np.einsum("nj,njc->nc", bary,
                                 vertex_colors[mesh_idx][faces])
    stats.covered_pixels = int(hit.sum())
    return Image(pixels.reshape(camera.height, camera.width, 3)), stats
