"""Mesh ingestion, BVH acceleration structure, and ray queries.

The BVH is a deterministic median-split tree flattened to arrays; traversal
kernels are numba-compiled and run over batches of rays so bakes and
reference renders stay CPU-feasible. Meshes and the BVH are immutable after
build and safe for concurrent read-only queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

LEAF_SIZE = 4
RAY_EPSILON_SCALE = 1e-4  # t_min = scale * scene bounding-box diagonal
INF = np.inf


@dataclass
class Mesh:
    """Indexed triangle mesh with per-vertex normals and UVs."""

    positions: np.ndarray  # (nv, 3) float64
    normals: np.ndarray    # (nv, 3) float64, unit
    uvs: np.ndarray        # (nv, 2) float64 in [0, 1]^2
    faces: np.ndarray      # (nt, 3) int32
    name: str = "mesh"
    object_id: int = 0
    texture_set: str = "default"

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.uvs = np.ascontiguousarray(self.uvs, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        nv = len(self.positions)
        if self.normals.shape != (nv, 3) or self.uvs.shape != (nv, 2):
            raise ValueError("positions, normals and uvs must share a vertex count")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= nv):
            raise ValueError("face index out of range")
        lens = np.linalg.norm(self.normals, axis=1)
        if nv and np.abs(lens - 1.0).max() > 1e-4:
            raise ValueError("vertex normals must be unit length")

    @property
    def triangle_count(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = INF

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(float(d @ d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not (0.0 <= self.t_min < self.t_max):
            raise ValueError("require 0 <= t_min < t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    t: float
    object_id: int
    triangle_id: int
    barycentrics: tuple[float, float, float]
    position: np.ndarray
    normal: np.ndarray
    uv: np.ndarray


def load_obj(path) -> list[Mesh]:
    """Parse a Wavefront OBJ into one Mesh per object/group.

    Faces must reference positions, UVs and normals (v/vt/vn); quads and
    larger polygons are fan-triangulated. Corners are deduplicated on the
    (v, vt, vn) index triple per mesh.
    """
    positions, uvs, normals = [], [], []
    meshes: list[Mesh] = []
    current_name = "default"
    corner_map: dict[tuple[int, int, int], int] = {}
    verts: list[tuple[int, int, int]] = []
    faces: list[tuple[int, int, int]] = []

    def flush():
        nonlocal corner_map, verts, faces
        if faces:
            p = np.array([positions[v[0]] for v in verts])
            t = np.array([uvs[v[1]] for v in verts])
            n = np.array([normals[v[2]] for v in verts])
            lens = np.linalg.norm(n, axis=1, keepdims=True)
            meshes.append(Mesh(p, n / lens, t, np.array(faces, dtype=np.int32),
                               name=current_name))
        corner_map, verts, faces = {}, [], []

    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    positions.append([float(x) for x in parts[1:4]])
                elif tag == "vt":
                    uvs.append([float(x) for x in parts[1:3]])
                elif tag == "vn":
                    normals.append([float(x) for x in parts[1:4]])
                elif tag in ("o", "g"):
                    flush()
                    current_name = parts[1] if len(parts) > 1 else "default"
                elif tag == "f":
                    corners = []
                    for spec in parts[1:]:
                        fields = spec.split("/")
                        if len(fields) < 2 or not fields[1]:
                            raise ValueError(f"face '{line}' missing UV (vt) index")
                        if len(fields) < 3 or not fields[2]:
                            raise ValueError(f"face '{line}' missing normal (vn) index")
                        vi, ti, ni = (int(fields[0]), int(fields[1]), int(fields[2]))
                        if vi < 0 or ti < 0 or ni < 0:
                            raise ValueError("negative OBJ indices are unsupported")
                        if vi > len(positions) or ti > len(uvs) or ni > len(normals):
                            raise ValueError(
                                f"face '{line}' references an undefined vertex record"
                            )
                        key = (vi - 1, ti - 1, ni - 1)
                        idx = corner_map.get(key)
                        if idx is None:
                            idx = len(verts)
                            corner_map[key] = idx
                            verts.append(key)
                        corners.append(idx)
                    for c in range(1, len(corners) - 1):
                        faces.append((corners[0], corners[c], corners[c + 1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    flush()
    if not meshes:
        raise ValueError(f"{path}: no faces found")
    return meshes


def save_obj(path, meshes: list[Mesh]) -> None:
    """Write meshes back out as v/vt/vn/f records (test fixtures mostly)."""
    with open(path, "w") as fh:
        base = 1
        for mesh in meshes:
            fh.write(f"o {mesh.name}\n")
            for p in mesh.positions:
                fh.write(f"v {p[0]} {p[1]} {p[2]}\n")
            for t in mesh.uvs:
                fh.write(f"vt {t[0]} {t[1]}\n")
            for n in mesh.normals:
                fh.write(f"vn {n[0]} {n[1]} {n[2]}\n")
            for f in mesh.faces:
                fh.write("f " + " ".join(f"{v + base}/{v + base}/{v + base}"
                                         for v in f) + "\n")
            base += len(mesh.positions)


# A parallel-to-slab ray never produces 0 * inf this way; HUGE is large
# enough that the slab constraint is vacuous whenever the origin lies
# strictly inside the slab.
_HUGE = 1e30


@njit(cache=True, parallel=True)
def _intersect_kernel(node_min, node_max, node_left, node_right, node_start,
                      node_count, tri_order, v0, e1, e2, origins, dirs,
                      t_min, t_max, out_t, out_tri, out_u, out_v):
    for r in prange(len(origins)):
        stack = np.empty(64, dtype=np.int32)
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else _HUGE
        iy = 1.0 / dy if dy != 0.0 else _HUGE
        iz = 1.0 / dz if dz != 0.0 else _HUGE
        best_t = t_max
        best_tri = -1
        best_u = 0.0
        best_v = 0.0
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            # slab test
            tx1 = (node_min[node, 0] - ox) * ix
            tx2 = (node_max[node, 0] - ox) * ix
            tlo = min(tx1, tx2)
            thi = max(tx1, tx2)
            ty1 = (node_min[node, 1] - oy) * iy
            ty2 = (node_max[node, 1] - oy) * iy
            tlo = max(tlo, min(ty1, ty2))
            thi = min(thi, max(ty1, ty2))
            tz1 = (node_min[node, 2] - oz) * iz
            tz2 = (node_max[node, 2] - oz) * iz
            tlo = max(tlo, min(tz1, tz2))
            thi = min(thi, max(tz1, tz2))
            if tlo > thi or tlo > best_t or thi < t_min:
                continue
            if node_left[node] < 0:
                start = node_start[node]
                for s in range(start, start + node_count[node]):
                    tri = tri_order[s]
                    # Moller-Trumbore, double sided
                    px = dy * e2[tri, 2] - dz * e2[tri, 1]
                    py = dz * e2[tri, 0] - dx * e2[tri, 2]
                    pz = dx * e2[tri, 1] - dy * e2[tri, 0]
                    det = e1[tri, 0] * px + e1[tri, 1] * py + e1[tri, 2] * pz
                    if abs(det) < 1e-14:
                        continue
                    inv = 1.0 / det
                    sx = ox - v0[tri, 0]
                    sy = oy - v0[tri, 1]
                    sz = oz - v0[tri, 2]
                    u = (sx * px + sy * py + sz * pz) * inv
                    if u < 0.0 or u > 1.0:
                        continue
                    qx = sy * e1[tri, 2] - sz * e1[tri, 1]
                    qy = sz * e1[tri, 0] - sx * e1[tri, 2]
                    qz = sx * e1[tri, 1] - sy * e1[tri, 0]
                    v = (dx * qx + dy * qy + dz * qz) * inv
                    if v < 0.0 or u + v > 1.0:
                        continue
                    t = (e2[tri, 0] * qx + e2[tri, 1] * qy + e2[tri, 2] * qz) * inv
                    if t_min < t < best_t:
                        best_t = t
                        best_tri = tri
                        best_u = u
                        best_v = v
            else:
                stack[top] = node_left[node]
                top += 1
                stack[top] = node_right[node]
                top += 1
        out_t[r] = best_t
        out_tri[r] = best_tri
        out_u[r] = best_u
        out_v[r] = best_v


@njit(cache=True, parallel=True)
def _occluded_kernel(node_min, node_max, node_left, node_right, node_start,
                     node_count, tri_order, v0, e1, e2, origins, dirs,
                     t_min, t_max, out):
    for r in prange(len(origins)):
        stack = np.empty(64, dtype=np.int32)
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else _HUGE
        iy = 1.0 / dy if dy != 0.0 else _HUGE
        iz = 1.0 / dz if dz != 0.0 else _HUGE
        hit = False
        stack[0] = 0
        top = 1
        while top > 0 and not hit:
            top -= 1
            node = stack[top]
            tx1 = (node_min[node, 0] - ox) * ix
            tx2 = (node_max[node, 0] - ox) * ix
            tlo = min(tx1, tx2)
            thi = max(tx1, tx2)
            ty1 = (node_min[node, 1] - oy) * iy
            ty2 = (node_max[node, 1] - oy) * iy
            tlo = max(tlo, min(ty1, ty2))
            thi = min(thi, max(ty1, ty2))
            tz1 = (node_min[node, 2] - oz) * iz
            tz2 = (node_max[node, 2] - oz) * iz
            tlo = max(tlo, min(tz1, tz2))
            thi = min(thi, max(tz1, tz2))
            if tlo > thi or tlo > t_max or thi < t_min:
                continue
            if node_left[node] < 0:
                start = node_start[node]
                for s in range(start, start + node_count[node]):
                    tri = tri_order[s]
                    px = dy * e2[tri, 2] - dz * e2[tri, 1]
                    py = dz * e2[tri, 0] - dx * e2[tri, 2]
                    pz = dx * e2[tri, 1] - dy * e2[tri, 0]
                    det = e1[tri, 0] * px + e1[tri, 1] * py + e1[tri, 2] * pz
                    if abs(det) < 1e-14:
                        continue
                    inv = 1.0 / det
                    sx = ox - v0[tri, 0]
                    sy = oy - v0[tri, 1]
                    sz = oz - v0[tri, 2]
                    u = (sx * px + sy * py + sz * pz) * inv
                    if u < 0.0 or u > 1.0:
                        continue
                    qx = sy * e1[tri, 2] - sz * e1[tri, 1]
                    qy = sz * e1[tri, 0] - sx * e1[tri, 2]
                    qz = sx * e1[tri, 1] - sy * e1[tri, 0]
                    v = (dx * qx + dy * qy + dz * qz) * inv
                    if v < 0.0 or u + v > 1.0:
                        continue
                    t = (e2[tri, 0] * qx + e2[tri, 1] * qy + e2[tri, 2] * qz) * inv
                    if t_min < t < t_max:
                        hit = True
                        break
            else:
                stack[top] = node_left[node]
                top += 1
                stack[top] = node_right[node]
                top += 1
        out[r] = hit


@dataclass
class BVH:
    """Flattened median-split BVH over the world-space triangles of a scene.

    Per-triangle arrays are concatenated over all meshes; ``tri_mesh`` and
    ``tri_face`` map a global triangle id back to its mesh and face row.
    """

    meshes: list[Mesh]
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    tri_order: np.ndarray
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    tri_mesh: np.ndarray
    tri_face: np.ndarray
    scene_diagonal: float = field(default=0.0)

    @property
    def ray_epsilon(self) -> float:
        return RAY_EPSILON_SCALE * self.scene_diagonal

    def intersect_batch(self, origins, dirs, t_min=None, t_max=INF):
        """Nearest-hit query for a batch of rays.

        Returns (t, tri, u, v); tri is -1 on miss, (u, v) are the
        barycentric weights of the triangle's second and third vertices.
        """
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        n = len(origins)
        out_t = np.empty(n)
        out_tri = np.empty(n, dtype=np.int64)
        out_u = np.empty(n)
        out_v = np.empty(n)
        if t_min is None:
            t_min = self.ray_epsilon
        _intersect_kernel(self.node_min, self.node_max, self.node_left,
                          self.node_right, self.node_start, self.node_count,
                          self.tri_order, self.v0, self.e1, self.e2,
                          origins, dirs, float(t_min), float(t_max),
                          out_t, out_tri, out_u, out_v)
        return out_t, out_tri, out_u, out_v

    def occluded_batch(self, origins, dirs, t_min=None, t_max=INF):
        """Any-hit query for a batch of rays; returns a boolean array."""
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        out = np.empty(len(origins), dtype=np.bool_)
        if t_min is None:
            t_min = self.ray_epsilon
        _occluded_kernel(self.node_min, self.node_max, self.node_left,
                         self.node_right, self.node_start, self.node_count,
                         self.tri_order, self.v0, self.e1, self.e2,
                         origins, dirs, float(t_min), float(t_max), out)
        return out

    def hit_from_query(self, origin, direction, t, tri, u, v) -> Hit:
        """Assemble a Hit with barycentrically interpolated attributes."""
        mesh = self.meshes[self.tri_mesh[tri]]
        face = mesh.faces[self.tri_face[tri]]
        w = 1.0 - u - v
        bary = np.array([w, u, v])
        normal = bary @ mesh.normals[face]
        normal = normal / np.linalg.norm(normal)
        uv = bary @ mesh.uvs[face]
        position = np.asarray(origin) + t * np.asarray(direction)
        return Hit(t=float(t), object_id=mesh.object_id,
                   triangle_id=int(self.tri_face[tri]),
                   barycentrics=(float(w), float(u), float(v)),
                   position=position, normal=normal, uv=uv)


def build_bvh(meshes: list[Mesh]) -> BVH:
    """Build a median-split BVH (longest axis, leaf size <= 4)."""
    total = sum(m.triangle_count for m in meshes)
    if total == 0:
        raise ValueError("cannot build a BVH over an empty scene")
    v0 = np.empty((total, 3))
    v1 = np.empty((total, 3))
    v2 = np.empty((total, 3))
    tri_mesh = np.empty(total, dtype=np.int32)
    tri_face = np.empty(total, dtype=np.int32)
    at = 0
    for mi, mesh in enumerate(meshes):
        nt = mesh.triangle_count
        tri = mesh.positions[mesh.faces]
        v0[at:at + nt] = tri[:, 0]
        v1[at:at + nt] = tri[:, 1]
        v2[at:at + nt] = tri[:, 2]
        tri_mesh[at:at + nt] = mi
        tri_face[at:at + nt] = np.arange(nt)
        at += nt

    lo = np.minimum(np.minimum(v0, v1), v2)
    hi = np.maximum(np.maximum(v0, v1), v2)
    centroids = (lo + hi) * 0.5

    node_min, node_max = [], []
    node_left, node_right = [], []
    node_start, node_count = [], []
    order = np.arange(total, dtype=np.int32)

    def make_node(idx):
        node = len(node_min)
        node_min.append(lo[idx].min(axis=0))
        node_max.append(hi[idx].max(axis=0))
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(0)
        node_count.append(0)
        return node

    # iterative split; children claim contiguous ranges of `order`
    flat: list[np.int32] = []
    stack = [(make_node(order), order)]
    while stack:
        node, idx = stack.pop()
        if len(idx) <= LEAF_SIZE:
            node_start[node] = len(flat)
            node_count[node] = len(idx)
            flat.extend(idx)
            continue
        extent = hi[idx].max(axis=0) - lo[idx].min(axis=0)
        axis = int(np.argmax(extent))
        split = np.argsort(centroids[idx, axis], kind="stable")
        half = len(idx) // 2
        left_idx = idx[split[:half]]
        right_idx = idx[split[half:]]
        node_left[node] = make_node(left_idx)
        node_right[node] = make_node(right_idx)
        stack.append((node_right[node], right_idx))
        stack.append((node_left[node], left_idx))

    scene_lo = lo.min(axis=0)
    scene_hi = hi.max(axis=0)
    return BVH(meshes=list(meshes),
               node_min=np.array(node_min), node_max=np.array(node_max),
               node_left=np.array(node_left, dtype=np.int32),
               node_right=np.array(node_right, dtype=np.int32),
               node_start=np.array(node_start, dtype=np.int32),
               node_count=np.array(node_count, dtype=np.int32),
               tri_order=np.array(flat, dtype=np.int32),
               v0=v0, e1=v1 - v0, e2=v2 - v0,
               tri_mesh=tri_mesh, tri_face=tri_face,
               scene_diagonal=float(np.linalg.norm(scene_hi - scene_lo)))


def intersect(bvh: BVH, ray: Ray) -> Hit | None:
    """Nearest hit along a single ray, or None."""
    t, tri, u, v = bvh.intersect_batch(ray.origin[None, :], ray.direction[None, :],
                                       t_min=ray.t_min, t_max=ray.t_max)
    if tri[0] < 0:
        return None
    return bvh.hit_from_query(ray.origin, ray.direction, t[0], tri[0], u[0], v[0])


def occluded(bvh: BVH, ray: Ray) -> bool:
    """True iff any triangle lies in (t_min, t_max) along the ray."""
    return bool(bvh.occluded_batch(ray.origin[None, :], ray.direction[None, :],
                                   t_min=ray.t_min, t_max=ray.t_max)[0])
