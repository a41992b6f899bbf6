"""Shared scene builders for the test suite."""

from __future__ import annotations

import numpy as np

from prtex import envlight, geom, render


def quad_mesh(name, corners, uvmap, normal, texture_set="main", object_id=0):
    """Two-triangle quad from 4 corners (fan order)."""
    pos = np.asarray(corners, dtype=np.float64)
    uv = np.asarray(uvmap, dtype=np.float64)
    nrm = np.tile(np.asarray(normal, dtype=np.float64), (4, 1))
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return geom.Mesh(positions=pos, normals=nrm, uvs=uv, faces=faces,
                     name=name, object_id=object_id, texture_set=texture_set)


def full_uv_quad(z=0.0, half=1.0, texture_set="main", name="quad"):
    """Quad over [-half, half]^2 at height z with UVs spanning [0, 1]^2."""
    h = half
    return quad_mesh(name,
                     [[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]],
                     [[0, 0], [1, 0], [1, 1], [0, 1]], [0, 0, 1],
                     texture_set=texture_set)


def plane_grid(n, name="plane", texture_set="scene",
               uv_rect=(0.02, 0.02, 0.46, 0.96), z=0.0, object_id=0):
    """n x n quad grid over [-1, 1]^2 at height z, UVs affine into uv_rect.

    Every tessellation level of the same uv_rect maps positions to UVs
    identically, which is what fragment-mode tessellation independence
    needs.
    """
    u0, v0, du, dv = uv_rect
    xs = np.linspace(-1.0, 1.0, n + 1)
    pos = np.empty(((n + 1) * (n + 1), 3))
    uv = np.empty(((n + 1) * (n + 1), 2))
    idx = 0
    for j in range(n + 1):
        for i in range(n + 1):
            pos[idx] = (xs[i], xs[j], z)
            uv[idx] = (u0 + du * (xs[i] + 1) / 2, v0 + dv * (xs[j] + 1) / 2)
            idx += 1
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = a + 1
            c = a + n + 2
            d = a + n + 1
            faces.append([a, b, c])
            faces.append([a, c, d])
    normals = np.tile([0.0, 0.0, 1.0], (len(pos), 1))
    return geom.Mesh(positions=pos, normals=normals, uvs=uv,
                     faces=np.asarray(faces, dtype=np.int64), name=name,
                     object_id=object_id, texture_set=texture_set)


def floating_occluder(half=0.35, z=0.6, texture_set="scene", object_id=1):
    """Small horizontal quad casting a shadow on the ground plane."""
    return quad_mesh("occluder",
                     [[-half, -half, z], [half, -half, z],
                      [half, half, z], [-half, half, z]],
                     [[0.52, 0.02], [0.98, 0.02], [0.98, 0.48], [0.52, 0.48]],
                     [0, 0, 1], texture_set=texture_set, object_id=object_id)


def _island(cx, cy):
    u0, v0 = cx / 3 + 0.02, cy / 2 + 0.02
    u1, v1 = (cx + 1) / 3 - 0.02, (cy + 1) / 2 - 0.02
    return [[u0, v0], [u1, v0], [u1, v1], [u0, v1]]


def open_box_meshes(texture_set="box"):
    """Five inward-facing faces of [-1, 1]^3; the y = -1 side is open."""
    spec = [
        ("floor", [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1]],
         [0, 0, 1], _island(0, 0)),
        ("ceiling", [[-1, -1, 1], [-1, 1, 1], [1, 1, 1], [1, -1, 1]],
         [0, 0, -1], _island(1, 0)),
        ("left", [[-1, -1, -1], [-1, 1, -1], [-1, 1, 1], [-1, -1, 1]],
         [1, 0, 0], _island(2, 0)),
        ("right", [[1, -1, -1], [1, -1, 1], [1, 1, 1], [1, 1, -1]],
         [-1, 0, 0], _island(0, 1)),
        ("back", [[-1, 1, -1], [1, 1, -1], [1, 1, 1], [-1, 1, 1]],
         [0, -1, 0], _island(1, 1)),
    ]
    return [quad_mesh(name, pos, uv, nrm, texture_set=texture_set,
                      object_id=i)
            for i, (name, pos, nrm, uv) in enumerate(spec)]


def closed_box_meshes(texture_set="box"):
    meshes = open_box_meshes(texture_set)
    meshes.append(quad_mesh(
        "front", [[-1, -1, -1], [-1, -1, 1], [1, -1, 1], [1, -1, -1]],
        _island(2, 1), [0, 1, 0], texture_set=texture_set, object_id=5))
    return meshes


def positive_light(band, seed, dc=(1.3, 1.2, 1.1), amp=0.07,
                   env_width=256):
    """Random band-limited light with a dominant DC term.

    Synthesizes the lat-long image (clamping any negative lobes) and
    re-projects, so the returned (env, light) pair is self-consistent.
    """
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=(band * band, 3)) * amp
    coeffs[0] = dc
    light0 = envlight.light_from_coeffs(coeffs, band)
    env, _ = envlight.synthesize_bandlimited(light0, env_width,
                                             env_width // 2)
    return env, envlight.project_light(env, band)


def dc_light(band, rgb=(1.0, 1.0, 1.0)):
    """Light with only the DC coefficient set."""
    coeffs = np.zeros((band * band, 3))
    coeffs[0] = rgb
    return envlight.light_from_coeffs(coeffs, band)


def diffuse_material(rgb=(0.8, 0.8, 0.8)):
    return render.Material(diffuse=rgb, specular=[0, 0, 0], exponent=1.0)


def glossy_material(kd=(0.4, 0.4, 0.4), ks=(0.4, 0.4, 0.4), exponent=32.0):
    return render.Material(diffuse=kd, specular=ks, exponent=exponent)
