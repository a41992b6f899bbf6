"""Command-line front-end: bake, bake-indirect, render, reference,
compare, mem-report, tensor, bench.

Every command exits nonzero on error; texture writes are atomic, so a
failed run leaves no partial PRTT files behind.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np
from numba import njit

from . import config as config_mod
from . import envlight, interreflect, oracle, render, sh, texio
from .baker import (TransferTexture, bake_transfer, bake_vertex_transfer,
                    rasterize_gbuffer)


def _set_threads(args) -> None:
    n = args.threads
    if n is None:
        env = os.environ.get("PRTT_THREADS")
        n = int(env) if env else None
    if n is not None:
        import numba
        numba.set_num_threads(max(1, n))


def _stage(label: str, start: float) -> float:
    now = time.perf_counter()
    print(f"  {label}: {now - start:.2f}s")
    return now


def _set_gbuffers(cfg, scene, entry_of_mesh):
    """Rasterize one G-buffer per texture set; returns {set: gbuffer}."""
    out = {}
    r = cfg.bake.resolution
    mats = [cfg.meshes[i].material for i in entry_of_mesh]
    for set_name in cfg.texture_sets:
        rows = [i for i, m in enumerate(scene.meshes)
                if m.texture_set == set_name]
        meshes = [scene.meshes[i] for i in rows]
        maps = {mats[i].normal_map for i in rows}
        if len(maps) > 1:
            raise ValueError(
                f"texture set '{set_name}' mixes normal maps: meshes in one "
                "set must share a single normal map (or none)")
        nm_path = maps.pop()
        nm = (texio.read_pfm(cfg.resolve(nm_path)).astype(np.float64)
              if nm_path else None)
        out[set_name] = rasterize_gbuffer(meshes, r, r,
                                          use_normal_map=nm is not None,
                                          normal_map=nm)
    return out


def _t0_path(directory: str, set_name: str) -> str:
    return os.path.join(directory, f"{set_name}.prtt")


def _t1_path(directory: str, set_name: str) -> str:
    return os.path.join(directory, f"{set_name}.bounce1.prtt")


def cmd_bake(args) -> int:
    cfg = config_mod.load_config(args.config)
    scene, entry_of_mesh = config_mod.build_scene(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    for set_name, gb in _set_gbuffers(cfg, scene, entry_of_mesh).items():
        print(f"[bake] texture set '{set_name}' "
              f"({int(gb.validity.sum())} valid texels at "
              f"{cfg.bake.resolution}^2)")
        t = time.perf_counter()
        t = _stage("gbuffer", t)
        tex = bake_transfer(gb, scene.bvh, cfg.bake.band, cfg.bake.samples,
                            cfg.bake.seed, dilation_radius=cfg.bake.dilation)
        t = _stage(f"transfer ({cfg.bake.samples} spt + dilation "
                   f"{cfg.bake.dilation})", t)
        path = _t0_path(args.out_dir, set_name)
        tex.save(path)
        _stage(f"write {path}", t)
    return 0


def cmd_bake_indirect(args) -> int:
    cfg = config_mod.load_config(args.config)
    scene, entry_of_mesh = config_mod.build_scene(cfg)
    env, light = config_mod.build_environment(cfg)
    t0 = {}
    for set_name in cfg.texture_sets:
        path = _t0_path(args.t0_dir, set_name)
        if not os.path.isfile(path):
            raise FileNotFoundError(
                f"missing zero-bounce texture for set '{set_name}': {path}")
        t0[set_name] = TransferTexture.load(path)
    os.makedirs(args.out_dir, exist_ok=True)
    description = interreflect.brdf_description(scene)
    for set_name, gb in _set_gbuffers(cfg, scene, entry_of_mesh).items():
        print(f"[bake-indirect] texture set '{set_name}'")
        t = time.perf_counter()
        tex, stats = interreflect.bake_one_bounce(
            gb, scene, t0, light, cfg.bake.band, cfg.bake.samples,
            cfg.bake.seed, dilation=cfg.bake.dilation)
        t = _stage(f"one bounce ({stats.texel_count} texels, "
                   f"{stats.secondary_hits} secondary hits, "
                   f"{stats.invalid_texel_misses} invalid-texel misses)", t)
        path = _t1_path(args.out_dir, set_name)
        interreflect.save_radiance(path, tex, light, description)
        _stage(f"write {path}", t)
    return 0


def cmd_render(args) -> int:
    cfg = config_mod.load_config(args.config)
    scene, entry_of_mesh = config_mod.build_scene(cfg)
    env, light = config_mod.build_environment(cfg)
    camera = cfg.camera.to_camera()
    tau = sh.compute_tripling_tensor(cfg.bake.band)

    t = time.perf_counter()
    if args.mode == "fragment":
        textures = {}
        for set_name in cfg.texture_sets:
            path = _t0_path(args.t0_dir, set_name)
            if not os.path.isfile(path):
                raise FileNotFoundError(
                    f"missing transfer texture for set '{set_name}': {path}")
            textures[set_name] = TransferTexture.load(path)
        indirect = indirect_meta = None
        if args.with_indirect:
            indirect, indirect_meta = {}, {}
            t1_dir = args.t1_dir or args.t0_dir
            for set_name in cfg.texture_sets:
                path = _t1_path(t1_dir, set_name)
                if not os.path.isfile(path):
                    raise FileNotFoundError(
                        f"missing one-bounce texture for set "
                        f"'{set_name}': {path}")
                tex, meta = interreflect.load_radiance(path)
                indirect[set_name] = tex
                indirect_meta[set_name] = meta
        img, stats = render.render_fragment(
            scene, camera, textures, light, args.method, tau, env=env,
            indirect=indirect, indirect_meta=indirect_meta,
            supersample=args.supersample)
        print(f"[render] fragment/{args.method}: {stats.shade_count} shades "
              f"for {stats.covered_pixels} covered pixels "
              f"(of {stats.total_pixels})")
    else:
        print("[render] baking vertex transfer on demand "
              f"({cfg.bake.samples} samples/vertex)")
        vt = bake_vertex_transfer(scene.meshes, scene.bvh, cfg.bake.band,
                                  cfg.bake.samples, cfg.bake.seed)
        img, stats = render.render_vertex(scene, camera, vt, light,
                                          args.method, tau, env=env)
        print(f"[render] vertex/{args.method}: {stats.shade_count} shades "
              f"(vertex count), {stats.covered_pixels} covered pixels")
    print(f"[render] clamp rate {stats.clamp_rate:.4%}, "
          f"{time.perf_counter() - t:.2f}s")

    base, _ = os.path.splitext(args.out)
    texio.write_pfm(base + ".pfm", img.pixels.astype(np.float32))
    texio.write_ppm(base + ".ppm", img.pixels)
    print(f"[render] wrote {base}.pfm and {base}.ppm")
    return 0


def cmd_reference(args) -> int:
    cfg = config_mod.load_config(args.config)
    scene, _ = config_mod.build_scene(cfg)
    env, _ = config_mod.build_environment(cfg)
    camera = cfg.camera.to_camera()
    t = time.perf_counter()
    if args.kind == "direct":
        img = oracle.mc_direct(scene, camera, env, args.spp, args.seed)
    else:
        img = oracle.mc_one_bounce(scene, camera, env, args.spp, args.seed)
    print(f"[reference] {args.kind} at {args.spp} spp: "
          f"{time.perf_counter() - t:.1f}s")
    base, _ = os.path.splitext(args.out)
    texio.write_pfm(base + ".pfm", img.pixels.astype(np.float32))
    texio.write_ppm(base + ".ppm", img.pixels)
    print(f"[reference] wrote {base}.pfm and {base}.ppm")
    return 0


def cmd_compare(args) -> int:
    a = render.Image(texio.read_pfm(args.image_a))
    b = render.Image(texio.read_pfm(args.image_b))
    m = oracle.image_metrics(a, b)
    if args.json:
        print(json.dumps({"rmse": m.rmse, "rel_rmse": m.rel_rmse,
                          "max_abs": m.max_abs}, indent=2, sort_keys=True))
    else:
        print(f"rmse     {m.rmse:.6g}")
        print(f"relRMSE  {m.rel_rmse:.6g}")
        print(f"maxabs   {m.max_abs:.6g}")
    return 0


def cmd_mem_report(args) -> int:
    cfg = config_mod.load_config(args.config)
    rep = config_mod.memory_report(cfg)
    k = rep.band * rep.band
    print(f"resolution {rep.resolution}^2, band {rep.band} (k = {k})")
    print(f"texture sets: {len(rep.texture_sets)} "
          f"({', '.join(rep.texture_sets)})")
    print(f"  scalar SH texture  (w*h*k*4):   "
          f"{rep.texture_scalar_bytes:>14,} bytes")
    print(f"  matrix texture     (w*h*k^2*4): "
          f"{rep.texture_matrix_bytes:>14,} bytes")
    print("vertex schemes (approximate; vertex counts from loaded meshes):")
    for name, count in rep.vertex_counts:
        print(f"  {name}: {count:,} vertices")
    print(f"  vertex k-vectors   (n*k*4):     "
          f"{rep.vertex_vector_bytes:>14,} bytes")
    print(f"  vertex k*k matrices (n*k^2*4):  "
          f"{rep.vertex_matrix_bytes:>14,} bytes")
    return 0


def cmd_tensor(args) -> int:
    tau = sh.compute_tripling_tensor(args.band)
    order = np.lexsort((tau.k, tau.j, tau.i))
    lines = [f"{tau.i[e]} {tau.j[e]} {tau.k[e]} {tau.values[e]:.9g}"
             for e in order]
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        print(f"wrote {len(lines)} entries to {args.out}")
    else:
        print(text)
    return 0


@njit(cache=True)
def _bench_tp(ti, tj, tk, tv, transfers, lights, out, shades):
    # wrap counters instead of modulo: the per-shade bookkeeping must stay
    # far below the k-dependent work or small bands measure overhead
    k = out.shape[0]
    acc = 0.0
    nt = transfers.shape[0]
    nl = lights.shape[0]
    it = 0
    il = 0
    for r in range(shades):
        t = transfers[it]
        l = lights[il]
        it += 1
        if it == nt:
            it = 0
        il += 1
        if il == nl:
            il = 0
        for x in range(k):
            out[x] = 0.0
        for e in range(tv.shape[0]):
            out[tk[e]] += tv[e] * t[ti[e]] * l[tj[e]]
        acc += out[0]
    return acc


_TPFL_KERNELS: dict[int, object] = {}


def _tpfl_kernel(k: int):
    """Per-k TPFL kernel; k is a closure constant so the k*k loop unrolls.

    With a runtime trip count the small bands time loop bookkeeping instead
    of the matrix product, which flattens the measured scaling.
    """
    if k in _TPFL_KERNELS:
        return _TPFL_KERNELS[k]

    @njit
    def kern(matrix_rows, transfers, out, shades):
        acc = 0.0
        nt = transfers.shape[0]
        it = 0
        for r in range(shades):
            t = transfers[it]
            it += 1
            if it == nt:
                it = 0
            for x in range(k):
                row = matrix_rows[x]
                s = 0.0
                for y in range(k):
                    s += t[y] * row[y]
                out[x] = s
            acc += out[0]
        return acc

    _TPFL_KERNELS[k] = kern
    return kern


def run_bench(bands, shades: int, seed: int = 0):
    """Time TP and TPFL per-shade kernels; returns (rows, tpfl_slope).

    Each row is a dict with band, k, nnz, and mean ns/shade for both paths
    over ``shades`` evaluations of random inputs (pooled and cycled). The
    slope is the log-log regression of TPFL time against k.
    """
    rng = np.random.default_rng(seed)
    rows = []
    pool = 4096
    for band in bands:
        k = band * band
        tau = sh.compute_tripling_tensor(band)
        transfers = rng.normal(size=(pool, k))
        lights = rng.normal(size=(pool + 1, k))
        light = sh.SHVector(band, rng.normal(size=k))
        matrix_rows = np.ascontiguousarray(sh.product_matrix(light, tau).data.T)
        out = np.zeros(k)
        tpfl = _tpfl_kernel(k)

        warm = max(1000, shades // 100)
        _bench_tp(tau.i, tau.j, tau.k, tau.values, transfers, lights, out,
                  warm)
        tpfl(matrix_rows, transfers, out, warm)

        t0 = time.perf_counter()
        _bench_tp(tau.i, tau.j, tau.k, tau.values, transfers, lights, out,
                  shades)
        tp_ns = (time.perf_counter() - t0) / shades * 1e9

        # min over repetitions: scheduler noise only ever adds time, and
        # the log-log slope is sensitive to jitter on the smallest bands
        tpfl_ns = math.inf
        for _ in range(3):
            t0 = time.perf_counter()
            tpfl(matrix_rows, transfers, out, shades)
            tpfl_ns = min(tpfl_ns,
                          (time.perf_counter() - t0) / shades * 1e9)

        rows.append({"band": band, "k": k, "nnz": len(tau.values),
                     "tp_ns": tp_ns, "tpfl_ns": tpfl_ns,
                     "ratio": tp_ns / tpfl_ns})
    ks = np.log([r["k"] for r in rows])
    ts = np.log([r["tpfl_ns"] for r in rows])
    slope = float(np.polyfit(ks, ts, 1)[0]) if len(rows) > 1 else float("nan")
    return rows, slope


def cmd_bench(args) -> int:
    bands = list(range(args.min_band, args.max_band + 1))
    if not all(2 <= b <= 6 for b in bands):
        raise ValueError("bench bands must lie in [2, 6]")
    rows, slope = run_bench(bands, args.shades)
    print(f"{'band':>4} {'k':>4} {'nnz':>6} {'TP ns':>10} {'TPFL ns':>10} "
          f"{'TP/TPFL':>8}")
    for r in rows:
        print(f"{r['band']:>4} {r['k']:>4} {r['nnz']:>6} "
              f"{r['tp_ns']:>10.1f} {r['tpfl_ns']:>10.1f} "
              f"{r['ratio']:>8.2f}")
    print(f"TPFL log-log slope vs k: {slope:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="prtex",
        description="Radiance-transfer texture baking and rendering.")
    p.add_argument("--threads", type=int, default=None,
                   help="worker thread cap (default: PRTT_THREADS or all)")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bake", help="bake transfer textures per texture set")
    b.add_argument("config")
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_bake)

    bi = sub.add_parser("bake-indirect",
                        help="bake one-bounce radiance textures")
    bi.add_argument("config")
    bi.add_argument("--t0-dir", required=True,
                    help="directory holding the zero-bounce textures")
    bi.add_argument("--out-dir", required=True)
    bi.set_defaults(func=cmd_bake_indirect)

    r = sub.add_parser("render", help="render from baked data")
    r.add_argument("config")
    r.add_argument("--mode", choices=("fragment", "vertex"),
                   default="fragment")
    r.add_argument("--method", choices=("tp", "tpfl"), default="tpfl")
    r.add_argument("--t0-dir", default=".",
                   help="directory holding transfer textures (fragment mode)")
    r.add_argument("--with-indirect", action="store_true")
    r.add_argument("--t1-dir", default=None,
                   help="directory holding one-bounce textures "
                        "(default: --t0-dir)")
    r.add_argument("--supersample", type=int, default=1)
    r.add_argument("--out", required=True,
                   help="output basename (.pfm and .ppm written)")
    r.set_defaults(func=cmd_render)

    ref = sub.add_parser("reference", help="Monte Carlo reference render")
    ref.add_argument("config")
    ref.add_argument("--kind", choices=("direct", "one-bounce"),
                     default="direct")
    ref.add_argument("--spp", type=int, default=1024)
    ref.add_argument("--seed", type=int, default=0)
    ref.add_argument("--out", required=True)
    ref.set_defaults(func=cmd_reference)

    c = sub.add_parser("compare", help="image error metrics (PFM inputs)")
    c.add_argument("image_a")
    c.add_argument("image_b")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("mem-report", help="storage cost table")
    m.add_argument("config")
    m.set_defaults(func=cmd_mem_report)

    t = sub.add_parser("tensor", help="print nonzero tripling entries")
    t.add_argument("--band", type=int, required=True)
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_tensor)

    be = sub.add_parser("bench", help="TP vs TPFL per-shade timing")
    be.add_argument("--min-band", type=int, default=2)
    be.add_argument("--max-band", type=int, default=6)
    be.add_argument("--shades", type=int, default=1_000_000)
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
