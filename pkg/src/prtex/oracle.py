"""Reference implementations the fast paths are validated against.

Monte Carlo direct and one-bounce renderers integrate the rendering
integral with uniform-hemisphere sampling, independent of the SH machinery
and of the baker's stratified sampler. Quadrature projection of SH products
checks the tripling-tensor contraction through plain numerical integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sh
from .envlight import EnvMap, sample as env_sample
from .render import Camera, Image, Scene, reflect

TWO_PI = 2.0 * math.pi

# pixels per batch; each pixel spawns spp secondary rays
_CHUNK_RAYS = 1 << 21


@dataclass(frozen=True)
class ImageMetrics:
    """Error summary between a test image and a reference."""

    rmse: float
    rel_rmse: float
    max_abs: float


def _orthonormal_frames(normals: np.ndarray):
    """Tangent/bitangent per normal, (m, 3) each."""
    a = np.where(np.abs(normals[:, 0:1]) < 0.9,
                 np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    t = np.cross(a, normals)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    b = np.cross(normals, t)
    return t, b


def _hemisphere_dirs(u: np.ndarray, normals, t, b):
    """Uniform hemisphere directions from (m, s, 2) uniforms, (m, s, 3)."""
    z = u[..., 0]
    phi = TWO_PI * u[..., 1]
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    return (x[..., None] * t[:, None, :] + y[..., None] * b[:, None, :]
            + z[..., None] * normals[:, None, :]), z


def _phong_brdf(wi: np.ndarray, refl: np.ndarray, diffuse: np.ndarray,
                specular: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    """Diffuse-plus-Phong BRDF value per (sample, channel)."""
    d = np.maximum(np.sum(wi * refl, axis=-1), 0.0)
    lobe = (exponents + 1.0) / TWO_PI * d ** exponents
    return diffuse / math.pi + specular * lobe[..., None]


def _primary_hits(scene: Scene, camera: Camera):
    dirs = camera.ray_directions()
    origins = np.broadcast_to(camera.position, (len(dirs), 3))
    t, tri, bu, bv = scene.bvh.intersect_batch(origins, dirs)
    return dirs, t, tri, bu, bv


def _hit_attributes(scene: Scene, rows, tri, bu, bv, dirs):
    """Geometry and material data for the given hit pixel rows."""
    mesh_of_hit = scene.bvh.tri_mesh[tri[rows]]
    m = len(rows)
    positions = np.empty((m, 3))
    normals = np.empty((m, 3))
    diffuse = np.empty((m, 3))
    specular = np.empty((m, 3))
    exponents = np.empty(m)
    for mesh_idx in np.unique(mesh_of_hit):
        pick = np.nonzero(mesh_of_hit == mesh_idx)[0]
        sel = rows[pick]
        mesh = scene.meshes[mesh_idx]
        material = scene.materials[mesh_idx]
        faces = mesh.faces[scene.bvh.tri_face[tri[sel]]]
        w0 = 1.0 - bu[sel] - bv[sel]
        bary = np.column_stack([w0, bu[sel], bv[sel]])
        positions[pick] = np.einsum("nj,njk->nk", bary, mesh.positions[faces])
        nrm = np.einsum("nj,njk->nk", bary, mesh.normals[faces])
        normals[pick] = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        uvs = np.einsum("nj,njk->nk", bary, mesh.uvs[faces])
        diffuse[pick] = material.diffuse_at(uvs)
        specular[pick] = material.specular
        exponents[pick] = material.exponent_at(uvs)
    return positions, normals, diffuse, specular, exponents


def mc_direct(scene: Scene, camera: Camera, env: EnvMap, spp: int,
              seed: int) -> Image:
    """Direct-light reference render.

    Per covered pixel, spp uniform-hemisphere samples about the shading
    normal: contribution L(w_i) * brdf * V * cos * 2*pi. Background pixels
    take the environment color, matching the fast renderer. Deterministic
    per (seed, pixel index).
    """
    if spp < 1:
        raise ValueError("spp must be >= 1")
    dirs, t, tri, bu, bv = _primary_hits(scene, camera)
    n = len(dirs)
    pixels = np.zeros((n, 3))
    miss = tri < 0
    if miss.any():
        pixels[miss] = env_sample(env, dirs[miss])

    hit_rows = np.nonzero(~miss)[0]
    t_min = scene.bvh.ray_epsilon
    step = max(1, _CHUNK_RAYS // spp)
    for start in range(0, len(hit_rows), step):
        rows = hit_rows[start:start + step]
        m = len(rows)
        p, nrm, kd, ks, s = _hit_attributes(scene, rows, tri, bu, bv, dirs)
        view_out = -dirs[rows]
        refl = reflect(view_out, nrm)

        u = np.empty((m, spp, 2))
        for row in range(m):
            rng = np.random.default_rng((seed, int(rows[row])))
            u[row] = rng.random((spp, 2))
        tg, bg = _orthonormal_frames(nrm)
        wi, cos = _hemisphere_dirs(u, nrm, tg, bg)

        flat_wi = wi.reshape(-1, 3)
        flat_p = np.repeat(p, spp, axis=0)
        vis = ~scene.bvh.occluded_batch(flat_p, flat_wi, t_min=t_min)
        light = env_sample(env, flat_wi).reshape(m, spp, 3)
        brdf = _phong_brdf(wi, refl[:, None, :], kd[:, None, :],
                           ks[:, None, :], s[:, None])
        w = vis.reshape(m, spp) * cos * TWO_PI
        pixels[rows] = (light * brdf * w[..., None]).mean(axis=1)
    return Image(pixels.reshape(camera.height, camera.width, 3))


def mc_one_bounce(scene: Scene, camera: Camera, env: EnvMap, spp: int,
                  seed: int) -> Image:
    """One-bounce indirect reference render; direct light excluded.

    Each hemisphere sample from the primary hit that strikes geometry at q
    estimates the direct radiance leaving q toward the primary point with a
    single light sample, then weights it by the primary BRDF and cosine.
    Background pixels are black (the indirect term has no environment part).
    """
    if spp < 1:
        raise ValueError("spp must be >= 1")
    dirs, t, tri, bu, bv = _primary_hits(scene, camera)
    n = len(dirs)
    pixels = np.zeros((n, 3))
    hit_rows = np.nonzero(tri >= 0)[0]
    t_min = scene.bvh.ray_epsilon
    step = max(1, _CHUNK_RAYS // (2 * spp))
    for start in range(0, len(hit_rows), step):
        rows = hit_rows[start:start + step]
        m = len(rows)
        p, nrm, kd, ks, s = _hit_attributes(scene, rows, tri, bu, bv, dirs)
        view_out = -dirs[rows]
        refl = reflect(view_out, nrm)

        u = np.empty((m, spp, 4))
        for row in range(m):
            rng = np.random.default_rng((seed, int(rows[row])))
            u[row] = rng.random((spp, 4))
        tg, bg = _orthonormal_frames(nrm)
        wi, cos_p = _hemisphere_dirs(u[..., :2], nrm, tg, bg)

        flat_wi = wi.reshape(-1, 3)
        flat_p = np.repeat(p, spp, axis=0)
        t2, tri2, bu2, bv2 = scene.bvh.intersect_batch(flat_p, flat_wi,
                                                       t_min=t_min)
        sec = np.nonzero(tri2 >= 0)[0]
        radiance = np.zeros((m * spp, 3))
        if len(sec):
            q, nq, kdq, ksq, sq = _hit_attributes(
                scene, sec, tri2, bu2, bv2, flat_wi)
            toward_p = -flat_wi[sec]
            refl_q = reflect(toward_p, nq)
            uq = u.reshape(m * spp, 4)[sec, 2:]
            tq, bq = _orthonormal_frames(nq)
            wq, cos_q = _hemisphere_dirs(uq[:, None, :], nq, tq, bq)
            wq = wq[:, 0, :]
            cos_q = cos_q[:, 0]
            vis_q = ~scene.bvh.occluded_batch(q, wq, t_min=t_min)
            light = env_sample(env, wq)
            brdf_q = _phong_brdf(wq, refl_q, kdq, ksq, sq)
            radiance[sec] = light * brdf_q * (vis_q * cos_q * TWO_PI)[:, None]

        brdf_p = _phong_brdf(wi, refl[:, None, :], kd[:, None, :],
                             ks[:, None, :], s[:, None])
        w = cos_p * TWO_PI
        contrib = radiance.reshape(m, spp, 3) * brdf_p * w[..., None]
        pixels[rows] = contrib.mean(axis=1)
    return Image(pixels.reshape(camera.height, camera.width, 3))


def quadrature_project_product(a: sh.SHVector, b: sh.SHVector) -> sh.SHVector:
    """Project the pointwise product of two band-limited functions.

    Integrates y_k * a~ * b~ with a rule exact for degree 3*(band-1),
    giving a tensor-free check of triple_product.
    """
    if a.band != b.band:
        raise ValueError(f"band mismatch: {a.band} vs {b.band}")
    rule = sh.default_rule(a.band, factors=3)
    basis = sh.eval_basis_batch(rule.dirs, a.band)
    fa = basis @ a.coeffs
    fb = basis @ b.coeffs
    return sh.SHVector(a.band, basis.T @ (rule.weights * fa * fb))


def image_metrics(test: Image, reference: Image,
                  mask: np.ndarray | None = None) -> ImageMetrics:
    """RMSE, relative RMSE, and max abs error between two images.

    relRMSE divides by the mean reference luminance (channel average).
    ``mask`` (h, w) restricts the comparison, e.g. to geometry-covered
    pixels.
    """
    if test.pixels.shape != reference.pixels.shape:
        raise ValueError(
            f"dimension mismatch: {test.pixels.shape} vs "
            f"{reference.pixels.shape}")
    a = test.pixels
    b = reference.pixels
    if mask is not None:
        if mask.shape != a.shape[:2]:
            raise ValueError("mask dimensions do not match the images")
        a = a[mask]
        b = b[mask]
    diff = a - b
    rmse = float(np.sqrt(np.mean(diff * diff)))
    mean_lum = float(np.mean(b))
    rel = rmse / mean_lum if mean_lum > 0 else math.inf if rmse > 0 else 0.0
    return ImageMetrics(rmse=rmse, rel_rmse=rel,
                        max_abs=float(np.max(np.abs(diff))) if diff.size
                        else 0.0)
