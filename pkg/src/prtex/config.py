"""Scene configuration: one JSON file describes meshes, materials, the
environment light, bake settings, and the camera.

Paths inside a config are resolved relative to the config file. Loading
validates referenced files up front; load -> serialize -> load is a fixed
point.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import envlight, geom, render, texio

MIN_RESOLUTION = 64
MAX_RESOLUTION = 4096
MIN_BAND = 1
MAX_BAND = 6

_DEFAULT_ENV_WIDTH = 512


@dataclass(frozen=True)
class MaterialConfig:
    diffuse: tuple[float, float, float] = (0.8, 0.8, 0.8)
    specular: tuple[float, float, float] = (0.0, 0.0, 0.0)
    exponent: float = 1.0
    diffuse_texture: str | None = None
    exponent_texture: str | None = None
    normal_map: str | None = None

    def to_dict(self) -> dict:
        return {
            "diffuse": list(self.diffuse),
            "specular": list(self.specular),
            "exponent": self.exponent,
            "diffuse_texture": self.diffuse_texture,
            "exponent_texture": self.exponent_texture,
            "normal_map": self.normal_map,
        }


@dataclass(frozen=True)
class MeshConfig:
    obj: str
    texture_set: str
    material: MaterialConfig = field(default_factory=MaterialConfig)

    def to_dict(self) -> dict:
        return {"obj": self.obj, "texture_set": self.texture_set,
                "material": self.material.to_dict()}


@dataclass(frozen=True)
class EnvironmentConfig:
    """Either a PFM lat-long image or explicit SH coefficients.

    SH lights are synthesized to a band-limited (negative-clamped) lat-long
    image when an actual environment map is needed (reference renders,
    background pixels).
    """

    pfm: str | None = None
    band: int | None = None
    coeffs: tuple | None = None  # (k, 3) nested lists when band is set
    width: int = _DEFAULT_ENV_WIDTH

    def to_dict(self) -> dict:
        out: dict = {"width": self.width}
        if self.pfm is not None:
            out["pfm"] = self.pfm
        else:
            out["band"] = self.band
            out["coeffs"] = [list(row) for row in self.coeffs]
        return out


@dataclass(frozen=True)
class BakeConfig:
    resolution: int = 256
    band: int = 5
    samples: int = 4096
    seed: int = 1
    dilation: int = 3

    def to_dict(self) -> dict:
        return {"resolution": self.resolution, "band": self.band,
                "samples": self.samples, "seed": self.seed,
                "dilation": self.dilation}


@dataclass(frozen=True)
class CameraConfig:
    position: tuple[float, float, float] = (0.0, -3.0, 2.0)
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    fov_degrees: float = 55.0
    width: int = 256
    height: int = 256

    def to_dict(self) -> dict:
        return {"position": list(self.position),
                "look_at": list(self.look_at), "up": list(self.up),
                "fov_degrees": self.fov_degrees,
                "width": self.width, "height": self.height}

    def to_camera(self) -> render.Camera:
        return render.Camera(position=self.position, look_at=self.look_at,
                             up=self.up, fov_degrees=self.fov_degrees,
                             width=self.width, height=self.height)


@dataclass(frozen=True)
class SceneConfig:
    meshes: tuple[MeshConfig, ...]
    environment: EnvironmentConfig
    bake: BakeConfig = field(default_factory=BakeConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    base_dir: str = "."

    def to_dict(self) -> dict:
        return {"meshes": [m.to_dict() for m in self.meshes],
                "environment": self.environment.to_dict(),
                "bake": self.bake.to_dict(),
                "camera": self.camera.to_dict()}

    def resolve(self, path: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def texture_sets(self) -> list[str]:
        seen: list[str] = []
        for m in self.meshes:
            if m.texture_set not in seen:
                seen.append(m.texture_set)
        return seen


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)


def _check_file(base_dir: str, path: str, what: str) -> None:
    full = os.path.normpath(os.path.join(base_dir, path))
    _require(os.path.isfile(full), f"{what} does not exist: {full}")


def _triple(value, what) -> tuple[float, float, float]:
    v = [float(x) for x in value]
    _require(len(v) == 3, f"{what} must have 3 components")
    return tuple(v)


def load_config(path) -> SceneConfig:
    """Parse and validate a scene JSON file."""
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return config_from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def config_from_dict(raw: dict, base_dir: str = ".") -> SceneConfig:
    _require(isinstance(raw.get("meshes"), list) and raw["meshes"],
             "config needs a non-empty 'meshes' list")
    meshes = []
    for entry in raw["meshes"]:
        _require("obj" in entry, "mesh entry needs an 'obj' path")
        _require("texture_set" in entry, "mesh entry needs a 'texture_set'")
        _check_file(base_dir, entry["obj"], "mesh file")
        mat_raw = entry.get("material", {})
        for key in ("diffuse_texture", "exponent_texture", "normal_map"):
            if mat_raw.get(key):
                _check_file(base_dir, mat_raw[key], key.replace("_", " "))
        material = MaterialConfig(
            diffuse=_triple(mat_raw.get("diffuse", (0.8, 0.8, 0.8)),
                            "diffuse"),
            specular=_triple(mat_raw.get("specular", (0.0, 0.0, 0.0)),
                             "specular"),
            exponent=float(mat_raw.get("exponent", 1.0)),
            diffuse_texture=mat_raw.get("diffuse_texture") or None,
            exponent_texture=mat_raw.get("exponent_texture") or None,
            normal_map=mat_raw.get("normal_map") or None)
        meshes.append(MeshConfig(obj=entry["obj"],
                                 texture_set=entry["texture_set"],
                                 material=material))

    env_raw = raw.get("environment", {})
    width = int(env_raw.get("width", _DEFAULT_ENV_WIDTH))
    _require(width >= 4 and width % 2 == 0,
             "environment width must be an even integer >= 4")
    if "pfm" in env_raw:
        _check_file(base_dir, env_raw["pfm"], "environment map")
        environment = EnvironmentConfig(pfm=env_raw["pfm"], width=width)
    else:
        _require("band" in env_raw and "coeffs" in env_raw,
                 "environment needs either 'pfm' or 'band' + 'coeffs'")
        band = int(env_raw["band"])
        _require(MIN_BAND <= band <= MAX_BAND,
                 f"environment band must be in [{MIN_BAND}, {MAX_BAND}]")
        coeffs = tuple(tuple(float(x) for x in row)
                       for row in env_raw["coeffs"])
        _require(len(coeffs) == band * band and
                 all(len(row) == 3 for row in coeffs),
                 "environment coeffs must be a (band^2, 3) array")
        environment = EnvironmentConfig(band=band, coeffs=coeffs, width=width)

    bake_raw = raw.get("bake", {})
    bake = BakeConfig(resolution=int(bake_raw.get("resolution", 256)),
                      band=int(bake_raw.get("band", 5)),
                      samples=int(bake_raw.get("samples", 4096)),
                      seed=int(bake_raw.get("seed", 1)),
                      dilation=int(bake_raw.get("dilation", 3)))
    r = bake.resolution
    _require(MIN_RESOLUTION <= r <= MAX_RESOLUTION and (r & (r - 1)) == 0,
             f"bake resolution must be a power of two in "
             f"[{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {r}")
    _require(MIN_BAND <= bake.band <= MAX_BAND,
             f"bake band must be in [{MIN_BAND}, {MAX_BAND}], got {bake.band}")
    _require(bake.samples >= 1, "bake samples must be positive")
    _require(bake.dilation >= 0, "bake dilation must be nonnegative")

    cam_raw = raw.get("camera", {})
    camera = CameraConfig(
        position=_triple(cam_raw.get("position", (0.0, -3.0, 2.0)),
                         "camera position"),
        look_at=_triple(cam_raw.get("look_at", (0.0, 0.0, 0.0)),
                        "camera look_at"),
        up=_triple(cam_raw.get("up", (0.0, 0.0, 1.0)), "camera up"),
        fov_degrees=float(cam_raw.get("fov_degrees", 55.0)),
        width=int(cam_raw.get("width", 256)),
        height=int(cam_raw.get("height", 256)))
    _require(0.0 < camera.fov_degrees < 180.0, "camera FOV must be in (0, 180)")
    _require(camera.width >= 1 and camera.height >= 1,
             "camera image dimensions must be positive")

    return SceneConfig(meshes=tuple(meshes), environment=environment,
                       bake=bake, camera=camera, base_dir=base_dir)


def save_config(cfg: SceneConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def _load_texture(cfg: SceneConfig, path: str) -> np.ndarray:
    return texio.read_pfm(cfg.resolve(path)).astype(np.float64)


def build_materials(cfg: SceneConfig) -> list[render.Material]:
    """One render Material per mesh entry (textures loaded from disk)."""
    out = []
    for entry in cfg.meshes:
        mc = entry.material
        diffuse = (_load_texture(cfg, mc.diffuse_texture)
                   if mc.diffuse_texture else np.asarray(mc.diffuse))
        exponent = (_load_texture(cfg, mc.exponent_texture)[:, :, 0]
                    if mc.exponent_texture else mc.exponent)
        normal_map = (_load_texture(cfg, mc.normal_map)
                      if mc.normal_map else None)
        out.append(render.Material(diffuse=diffuse,
                                   specular=np.asarray(mc.specular),
                                   exponent=exponent, normal_map=normal_map))
    return out


def build_scene(cfg: SceneConfig):
    """Load every mesh entry and assemble the renderable scene.

    Returns (scene, entry_index per mesh): an OBJ file may contain several
    objects; each inherits its entry's texture set and material, and
    object ids are reassigned globally in load order.
    """
    meshes: list[geom.Mesh] = []
    materials: list[render.Material] = []
    entry_of_mesh: list[int] = []
    mats = build_materials(cfg)
    next_id = 0
    for idx, entry in enumerate(cfg.meshes):
        for mesh in geom.load_obj(cfg.resolve(entry.obj)):
            meshes.append(geom.Mesh(
                positions=mesh.positions, normals=mesh.normals,
                uvs=mesh.uvs, faces=mesh.faces, name=mesh.name,
                object_id=next_id, texture_set=entry.texture_set))
            materials.append(mats[idx])
            entry_of_mesh.append(idx)
            next_id += 1
    return render.Scene(meshes, materials, geom.build_bvh(meshes)), entry_of_mesh


def build_environment(cfg: SceneConfig):
    """Returns (EnvMap, SHLight) for the configured environment.

    A PFM environment is projected at the bake band; an SH environment is
    synthesized to a lat-long image (negatives clamped) and the light
    re-projected from that image so renders and references see the same
    incident light.
    """
    ec = cfg.environment
    if ec.pfm is not None:
        env = envlight.load_pfm(cfg.resolve(ec.pfm))
        light = envlight.project_light(env, cfg.bake.band)
        return env, light
    coeffs = np.asarray(ec.coeffs, dtype=np.float64)
    light0 = envlight.light_from_coeffs(coeffs, ec.band)
    env, _ = envlight.synthesize_bandlimited(light0, ec.width, ec.width // 2)
    light = envlight.project_light(env, cfg.bake.band)
    return env, light


@dataclass(frozen=True)
class MemoryReport:
    """Storage cost of the configured scene under four schemes.

    Texture rows follow w*h*k*4 (scalar SH per texel) and w*h*k^2*4
    (full product matrix per texel); vertex rows follow nverts*k*4 and
    nverts*k^2*4. Vertex counts come from the loaded meshes, so comparisons
    against published figures are approximate.
    """

    resolution: int
    band: int
    texture_sets: tuple[str, ...]
    texture_scalar_bytes: int
    texture_matrix_bytes: int
    vertex_counts: tuple[tuple[str, int], ...]
    vertex_vector_bytes: int
    vertex_matrix_bytes: int


def memory_report(cfg: SceneConfig) -> MemoryReport:
    k = cfg.bake.band ** 2
    r = cfg.bake.resolution
    sets = cfg.texture_sets
    per_tex_scalar = r * r * k * 4
    per_tex_matrix = r * r * k * k * 4
    counts = []
    total_verts = 0
    for entry in cfg.meshes:
        n = sum(len(m.positions) for m in geom.load_obj(cfg.resolve(entry.obj)))
        counts.append((entry.obj, n))
        total_verts += n
    return MemoryReport(
        resolution=r, band=cfg.bake.band, texture_sets=tuple(sets),
        texture_scalar_bytes=per_tex_scalar * len(sets),
        texture_matrix_bytes=per_tex_matrix * len(sets),
        vertex_counts=tuple(counts),
        vertex_vector_bytes=total_verts * k * 4,
        vertex_matrix_bytes=total_verts * k * k * 4)


def texture_bytes(resolution: int, band: int, matrix: bool = False) -> int:
    """Bytes for one square texture: w*h*k*4, or w*h*k^2*4 for matrices."""
    k = band * band
    per = k * k if matrix else k
    return resolution * resolution * per * 4
