"""One-bounce inter-reflection baking.

Each valid texel p casts stratified sphere samples; samples that hit other
geometry at q are shaded there from the zero-bounce transfer textures (view
direction q toward p), and the resulting indirect radiance is projected to
cosine-weighted SH stored in a three-channel radiance texture. Misses
contribute nothing, so only the (1 - V) part of the hemisphere integrates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import render as render_mod
from . import sh, texio
from .baker import (GBuffer, TransferTexture, _texel_chunks, dilate,
                    stratified_sphere, MIN_SAMPLES, DEFAULT_DILATION)
from .envlight import SHLight, light_hash
from .geom import Hit

FOUR_PI = 4.0 * math.pi

# radiance textures reuse the transfer-texture container with RGB channels
RadianceTexture = TransferTexture


@dataclass
class BounceStats:
    """Counters from a one-bounce bake."""

    texel_count: int = 0
    secondary_hits: int = 0
    invalid_texel_misses: int = 0


def shade_from_transfer(t0: TransferTexture, hit: Hit, light: SHLight,
                        material: render_mod.Material, view_out: np.ndarray,
                        mode: str, tau: sh.TriplingTensor,
                        stats: BounceStats | None = None) -> np.ndarray:
    """Radiance leaving the hit point toward ``view_out``.

    Fetches the scalar transfer at hit.uv and defers to the renderer's
    shade_point, so both paths produce bitwise-identical values. A hit whose
    nearest texel is invalid returns black and bumps the miss counter.
    """
    uv = np.asarray(hit.uv, dtype=np.float64)[None, :]
    if not bool(render_mod.texel_is_valid(t0, uv)[0]):
        if stats is not None:
            stats.invalid_texel_misses += 1
        return np.zeros(3)
    coeffs = render_mod.fetch_bilinear(t0, uv)[0]
    transfer = sh.SHVector(t0.band, coeffs)
    return render_mod.shade_point(transfer, light, material, hit.normal,
                                  view_out, mode, tau)


def bake_one_bounce(gbuffer: GBuffer, scene: render_mod.Scene,
                    t0: dict[str, TransferTexture], light: SHLight,
                    band: int, samples_per_texel: int, seed: int,
                    dilation: int = DEFAULT_DILATION,
                    mode: str = "tpfl"):
    """Bake the one-bounce radiance texture; returns (texture, stats).

    The estimator per valid texel p with normal n over N sphere samples:
    coeffs_i = (4*pi/N) * sum over secondary hits of r_s * max(w_s.n, 0)
    * y_i(w_s), per channel, where r_s shades the secondary point q from the
    zero-bounce textures with view direction q -> p.
    """
    if samples_per_texel < MIN_SAMPLES:
        raise ValueError(
            f"samples_per_texel must be >= {MIN_SAMPLES}, "
            f"got {samples_per_texel}")
    for name, tex in t0.items():
        if tex.band != band:
            raise ValueError(
                f"transfer texture '{name}' band {tex.band} does not match "
                f"requested band {band}")
        if (tex.width, tex.height) != (gbuffer.width, gbuffer.height):
            raise ValueError(
                f"transfer texture '{name}' resolution "
                f"{tex.width}x{tex.height} does not match G-buffer "
                f"{gbuffer.width}x{gbuffer.height}")
    tau = sh.compute_tripling_tensor(band)

    k = band * band
    h, w = gbuffer.height, gbuffer.width
    planes = np.zeros((3 * k, h, w), dtype=np.float32)
    stats = BounceStats()

    rgb = light.coeffs_rgb()
    matrices = None
    if mode == "tpfl":
        matrices = tuple(
            sh.product_matrix(sh.SHVector(band, rgb[:, c]), tau).data
            for c in range(3))

    flat_valid = np.nonzero(gbuffer.validity.reshape(-1))[0]
    stats.texel_count = len(flat_valid)
    scale = FOUR_PI / samples_per_texel

    for chunk in _texel_chunks(flat_valid, samples_per_texel):
        rows, cols = np.divmod(chunk, w)
        m = len(chunk)
        p = gbuffer.positions[rows, cols]
        n = gbuffer.normals[rows, cols]

        dirs = np.empty((m, samples_per_texel, 3))
        for row in range(m):
            rng = np.random.default_rng((seed, int(chunk[row])))
            dirs[row] = stratified_sphere(rng, samples_per_texel)

        cosw = np.einsum("msk,mk->ms", dirs, n)
        sel = cosw > 0.0
        ridx, sidx = np.nonzero(sel)
        if len(ridx) == 0:
            continue
        origins = p[ridx]
        ray_dirs = dirs[ridx, sidx]
        t, tri, bu, bv = scene.bvh.intersect_batch(origins, ray_dirs)
        hitmask = tri >= 0
        stats.secondary_hits += int(hitmask.sum())
        if not hitmask.any():
            continue

        hrows = np.nonzero(hitmask)[0]
        radiance = np.zeros((len(hrows), 3))
        mesh_of_hit = scene.bvh.tri_mesh[tri[hrows]]
        for mesh_idx in np.unique(mesh_of_hit):
            pick = np.nonzero(mesh_of_hit == mesh_idx)[0]
            hsel = hrows[pick]
            mesh = scene.meshes[mesh_idx]
            material = scene.materials[mesh_idx]
            tex = t0[mesh.texture_set]
            faces = mesh.faces[scene.bvh.tri_face[tri[hsel]]]
            w0 = 1.0 - bu[hsel] - bv[hsel]
            bary = np.column_stack([w0, bu[hsel], bv[hsel]])
            uvs = np.einsum("nj,njk->nk", bary, mesh.uvs[faces])
            normals = np.einsum("nj,njk->nk", bary, mesh.normals[faces])
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)

            valid_q = render_mod.texel_is_valid(tex, uvs)
            stats.invalid_texel_misses += int(np.count_nonzero(~valid_q))
            if not valid_q.any():
                continue
            qrows = hsel[valid_q]
            transfers = render_mod.fetch_bilinear(tex, uvs[valid_q])
            view_out = -ray_dirs[qrows]
            diffuse = material.diffuse_at(uvs[valid_q])
            specular = np.broadcast_to(material.specular, (len(qrows), 3))
            exponents = material.exponent_at(uvs[valid_q])
            colors, _ = render_mod.shade_batch(
                transfers, light, diffuse, specular, exponents,
                normals[valid_q], view_out, mode, tau, matrices=matrices,
                quantize_exponents=isinstance(material.exponent, np.ndarray))
            radiance[pick[valid_q]] = colors

        basis = sh.eval_basis_batch(ray_dirs[hrows], band)
        weight = cosw[ridx[hrows], sidx[hrows]]
        texel_of_hit = ridx[hrows]
        for c in range(3):
            wr = radiance[:, c] * weight
            for i in range(k):
                acc = np.bincount(texel_of_hit, weights=basis[:, i] * wr,
                                  minlength=m)
                planes[c * k + i, rows, cols] += (scale * acc).astype(
                    np.float32)

    tex = TransferTexture(band=band, channels=3, planes=planes,
                          validity=gbuffer.validity.copy())
    if dilation > 0:
        tex = dilate(tex, dilation)
    return tex, stats


def brdf_description(scene: render_mod.Scene) -> str:
    """Canonical human-readable summary of the scene's materials."""
    parts = []
    for mesh, mat in zip(scene.meshes, scene.materials):
        kd = ("texture" if mat.diffuse.ndim == 3
              else np.array2string(mat.diffuse, precision=6))
        s = ("texture" if isinstance(mat.exponent, np.ndarray)
             else f"{mat.exponent:g}")
        ks = np.array2string(mat.specular, precision=6)
        parts.append(f"{mesh.name}: phong kd={kd} ks={ks} s={s}")
    return "; ".join(parts)


def save_radiance(path, tex: RadianceTexture, light: SHLight,
                  description: str, bounce_index: int = 1) -> None:
    """Write the texture plus its JSON sidecar recording the baked light."""
    tex.save(path)
    texio.write_sidecar(texio.sidecar_path(path), {
        "light_hash": light_hash(light),
        "brdf_description": description,
        "bounce_index": bounce_index,
    })


def load_radiance(path):
    """Read a radiance texture and its sidecar; returns (texture, metadata)."""
    tex = TransferTexture.load(path)
    meta = texio.read_sidecar(texio.sidecar_path(path))
    return tex, meta
