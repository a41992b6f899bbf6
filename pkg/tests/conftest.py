"""Session-scoped fixtures for expensive shared bakes."""

from __future__ import annotations

import numpy as np
import pytest

from prtex import baker, interreflect, render, sh

from helpers import (diffuse_material, floating_occluder, open_box_meshes,
                     plane_grid, positive_light)


@pytest.fixture(scope="session")
def plane_occluder_bundle():
    """Coarse ground plane plus floating occluder, baked at modest quality.

    Returns a dict with the scene, shared transfer texture (one atlas for
    both meshes), light, environment, and bake parameters.
    """
    band = 5
    plane = plane_grid(1)
    occ = floating_occluder()
    mat = diffuse_material((0.85, 0.8, 0.75))
    scene = render.make_scene([plane, occ], [mat, mat])
    env, light = positive_light(band, seed=9)
    gbuffer = baker.rasterize_gbuffer([plane, occ], 64, 64)
    texture = baker.bake_transfer(gbuffer, scene.bvh, band, 1024, seed=31)
    return {
        "band": band, "scene": scene, "plane": plane, "occluder": occ,
        "material": mat, "env": env, "light": light, "gbuffer": gbuffer,
        "texture": texture, "samples": 1024, "seed": 31,
        "tau": sh.compute_tripling_tensor(band),
    }


@pytest.fixture(scope="session")
def box_bundle():
    """Open five-face box with zero-bounce and one-bounce bakes."""
    band = 4
    meshes = open_box_meshes()
    mats = [diffuse_material((0.75, 0.65, 0.55)) for _ in meshes]
    scene = render.make_scene(meshes, mats)
    env, light = positive_light(band, seed=5, dc=(1.3, 1.2, 1.1), amp=0.06)
    gbuffer = baker.rasterize_gbuffer(meshes, 96, 96)
    t0 = baker.bake_transfer(gbuffer, scene.bvh, band, 512, seed=21)
    t1, stats = interreflect.bake_one_bounce(
        gbuffer, scene, {"box": t0}, light, band, 512, seed=22)
    return {
        "band": band, "scene": scene, "meshes": meshes, "env": env,
        "light": light, "gbuffer": gbuffer, "t0": t0, "t1": t1,
        "t1_stats": stats, "samples": 512, "seed": 22,
        "tau": sh.compute_tripling_tensor(band),
    }
