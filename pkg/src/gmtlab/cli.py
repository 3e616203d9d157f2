"""Batch experiment harness: deterministic runs, CSV/JSON artifacts.

Every command reads a scene or cloud, runs one module's checks, writes its
artifacts under --out, and exits 0 on pass, 2 on a check failure (with a
machine-readable witness file), 1 on errors.  All floats are serialized at 17
significant digits and all randomness flows from the --seed flag, so a rerun
with the same configuration reproduces identical bytes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import (boundary_cubes, counterexample, geometry, harmonic, sawtooth,
               scenes, whitney)
from .geometry import BallSpec


class CheckFailure(Exception):
    def __init__(self, message: str, witness: dict):
        super().__init__(message)
        self.witness = witness


def _canon(obj):
    """Normalize a report tree for byte-stable JSON emission."""
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.17g}")
    if isinstance(obj, np.ndarray):
        return [_canon(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_canon(obj), indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", ".") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split(",") if t != ""])


def _walk_config(args) -> harmonic.WalkConfig:
    return harmonic.WalkConfig(
        epsilon=getattr(args, "epsilon", None),
        max_steps=getattr(args, "max_steps", 20_000),
        walkers=getattr(args, "walkers", 100_000),
        seed=getattr(args, "seed", 0),
        step_shrink=getattr(args, "gamma", 0.0))


def _target_predicate(spec: str, dim: int):
    """Boundary-target DSL: all | disc:R | ball:c1,..,cd,r | annulus:r1,r2."""
    kind, _, rest = spec.partition(":")
    if kind == "all":
        return lambda pts: np.ones(len(pts), dtype=bool), 0.0
    if kind == "disc":
        r = float(rest)
        return (lambda pts: np.linalg.norm(pts[:, :-1], axis=1) <= r), r
    if kind == "annulus":
        r1, r2 = (float(t) for t in rest.split(","))
        def pred(pts):
            d = np.linalg.norm(pts[:, :-1], axis=1)
            return (d >= r1) & (d <= r2)
        return pred, r2
    if kind == "ball":
        vals = _floats(rest)
        if len(vals) != dim + 1:
            raise ValueError("ball target needs dim center values plus radius")
        c, r = vals[:-1], float(vals[-1])
        return (lambda pts: np.linalg.norm(pts - c, axis=1) <= r), r
    raise ValueError(f"unknown target spec {spec!r}")


def _load_cloud(args) -> geometry.BoundaryCloud:
    if getattr(args, "cloud", None):
        return geometry.load_cloud(args.cloud)
    if getattr(args, "scene", None):
        oracle = scenes.load_scene(args.scene)
        spacing = getattr(args, "spacing", None) or 0.05
        return geometry.cloud_from_oracle(oracle, spacing)
    raise ValueError("provide --cloud FILE or --scene FILE")


# ---------------------------------------------------------------------------
# commands


def cmd_whitney(args) -> int:
    out = _out_dir(args)
    oracle = scenes.load_scene(args.scene)
    W = whitney.whitney_decompose(oracle, (args.n_min, args.n_max))
    rep = whitney.verify_whitney_properties(W, lam=args.lam,
                                            samples_per_cube=args.samples,
                                            tol=args.tol)
    W.to_csv(out / "whitney_cubes.csv")
    payload = {
        "scene": str(args.scene), "n_min": args.n_min, "n_max": args.n_max,
        "n_cubes": rep.n_cubes, "level_counts": rep.level_counts,
        "prop1_lower": rep.prop1_lower, "prop1_upper": rep.prop1_upper,
        "prop2_lower": rep.prop2_lower, "prop2_upper": rep.prop2_upper,
        "adjacency_max_ratio": rep.adjacency_max_ratio,
        "far_touch_pairs": rep.far_touch_pairs,
        "overlap_max": rep.overlap_max,
        "overlap_max_wide": rep.overlap_max_wide,
        "overlap_budget": 3 * 2 ** W.dim,
        "maximality_ok": rep.maximality_ok,
        "window_top_cubes": rep.window_top_cubes,
        "undecided": rep.undecided_count,
    }
    _write_json(out / "whitney_report.json", payload)
    ok = (rep.prop1_ok and rep.prop2_ok and rep.adjacency_ok
          and rep.maximality_ok and rep.overlap_max <= 3 * 2 ** W.dim)
    if not ok:
        raise CheckFailure("whitney properties violated", payload)
    return 0


def cmd_cubes(args) -> int:
    out = _out_dir(args)
    cloud = _load_cloud(args)
    tree = boundary_cubes.build_metric_cubes(cloud, args.c0)
    rep = boundary_cubes.verify_cube_axioms(tree)
    payload = {"c0": args.c0, "n_points": len(cloud.points),
               "n_cubes": rep.n_cubes, "n_levels": rep.n_levels,
               "violations": rep.violations}
    _write_json(out / "cubes_report.json", payload)
    if rep.violations:
        raise CheckFailure("cube axioms violated", payload)
    return 0


def cmd_beta(args) -> int:
    out = _out_dir(args)
    cloud = _load_cloud(args)
    tree = boundary_cubes.build_metric_cubes(cloud, args.c0)
    records = []
    for cube in tree.cubes():
        if len(cube.members) < 2:
            continue
        records.append(boundary_cubes.bbeta(tree, cube, M=args.m,
                                            budget=args.budget,
                                            threshold=args.threshold))
    boundary_cubes.beta_records_to_csv(records, out / "beta.csv")
    vals = [r.value for r in records]
    _write_json(out / "beta_report.json",
                {"c0": args.c0, "M": args.m, "count": len(records),
                 "max": max(vals) if vals else 0.0,
                 "min": min(vals) if vals else 0.0})
    return 0


def cmd_carleson(args) -> int:
    out = _out_dir(args)
    cloud = _load_cloud(args)
    tree = boundary_cubes.build_metric_cubes(cloud, args.c0)
    root = tree.root()
    e_idx = np.arange(len(cloud.points))
    dense = boundary_cubes.dense_subset(tree, e_idx, root)
    flat_family = []
    for cube in tree.cubes():
        if len(cube.members) < 2:
            continue
        rec = boundary_cubes.bbeta(tree, cube, M=args.m, budget=args.budget,
                                   threshold=args.threshold)
        if rec.value >= args.threshold:
            flat_family.append(cube)
    stray = boundary_cubes.stray_point_family(tree, dense.e_prime, args.m,
                                              args.delta)
    family = {c.key for c in flat_family} | {c.key for c in stray}
    family = [tree.cube_at(*k) for k in sorted(family)]
    levels = sorted(tree.levels)[: args.top_levels]
    constants = []
    for k in levels:
        tops = [c for c in tree.cubes() if c.level == k]
        rep = boundary_cubes.carleson_check(tree, family, tops)
        constants.append(rep.max_ratio)
    payload = {"c0": args.c0, "threshold": args.threshold, "M": args.m,
               "delta": args.delta, "family_size": len(family),
               "top_levels": levels, "constants": constants}
    _write_json(out / "carleson_report.json", payload)
    if any(b > a + 1e-12 for a, b in zip(constants, constants[1:])):
        raise CheckFailure("packing constant grew under finer tops", payload)
    return 0


def cmd_dense_subset(args) -> int:
    out = _out_dir(args)
    cloud = _load_cloud(args)
    tree = boundary_cubes.build_metric_cubes(cloud, args.c0)
    root = tree.root()
    rng = np.random.Generator(np.random.Philox(key=args.seed))
    n = len(cloud.points)
    take = max(1, int(args.e_fraction * n))
    e_idx = np.sort(rng.choice(n, size=take, replace=False))
    res = boundary_cubes.dense_subset(tree, e_idx, root)
    mu_e = len(e_idx)
    mu_e_prime = len(res.e_prime)
    payload = {"c0": args.c0, "count_e": res.count_e,
               "count_top": res.count_top,
               "e_prime": mu_e_prime, "stopping": len(res.stopping),
               "density_constant": res.density_constant,
               "half_mass_ok": 2 * mu_e_prime >= mu_e}
    _write_json(out / "dense_subset_report.json", payload)
    if not payload["half_mass_ok"]:
        raise CheckFailure("dense subset lost more than half the mass", payload)
    return 0


def cmd_sawtooth(args) -> int:
    out = _out_dir(args)
    oracle = scenes.load_scene(args.scene)
    x0 = _floats(args.x0)
    spacing = args.spacing or args.r0 / 16.0
    bpts = oracle.boundary_points(spacing)
    e_pts = bpts[np.linalg.norm(bpts - x0, axis=1) <= args.r0]
    W = whitney.whitney_decompose(oracle, (args.n_min, args.n_max))
    G = whitney.whitney_graph(W)
    params = sawtooth.SawtoothParams(x0=tuple(x0), r0=args.r0,
                                     C0=args.c0_box, C_tilde=args.c_tilde)
    S = sawtooth.build_sawtooth(W, G, e_pts, params)
    tol = 4.0 * spacing
    trace = sawtooth.boundary_trace_check(S, tol)
    reach = S.boundary_reach_counts()
    payload = {"scene": str(args.scene), "x0": list(x0), "r0": args.r0,
               "core": len(S.core), "augmented": len(S.augmented),
               "boundary_core": len(S.boundary_core),
               "boundary_aug": len(S.boundary_aug),
               "trace_tol": tol,
               "max_e_to_boundary": trace.max_e_to_boundary,
               "max_boundary_to_e": trace.max_boundary_to_e,
               "containment": trace.c_minus,
               "multiplicity_max": int(reach.max()) if len(reach) else 0}
    _write_json(out / "sawtooth_report.json", payload)
    S.to_json(out / "sawtooth_cubes.json")
    if not trace.ok:
        raise CheckFailure("boundary trace inclusions failed", payload)
    return 0


def cmd_wos(args) -> int:
    out = _out_dir(args)
    oracle = scenes.load_scene(args.scene)
    pole = _floats(args.pole)
    target, radius = _target_predicate(args.target, oracle.dim)
    cfg = _walk_config(args)
    est = harmonic.harmonic_measure(oracle, pole, target, cfg)
    harmonic.estimates_to_csv(
        [(Path(args.scene).stem, args.pole, args.target, radius, est)],
        out / "wos.csv")
    payload = {"scene": str(args.scene), "pole": list(map(float, pole)),
               "target": args.target, "walkers": cfg.walkers,
               "seed": cfg.seed, "hit_fraction": est.hit_fraction,
               "ci95": est.ci95, "nonterminated": est.nonterminated,
               "mean_steps": est.mean_steps, "flagged": est.flagged}
    _write_json(out / "wos_report.json", payload)
    if est.flagged:
        raise CheckFailure("more than 1% of walkers failed to terminate",
                           payload)
    return 0


def cmd_bourgain(args) -> int:
    out = _out_dir(args)
    oracle = scenes.load_scene(args.scene)
    ball = BallSpec(_floats(args.center), args.radius)
    cfg = _walk_config(args)
    rep = harmonic.bourgain_check(oracle, ball, args.s, cfg, c0=args.c0)
    payload = {"scene": str(args.scene), "center": list(ball.center),
               "radius": ball.radius, "s": args.s, "c0": args.c0,
               "content_ratio": rep.content_ratio,
               "skipped": rep.skipped, "applicable": rep.applicable,
               "hit_fraction": rep.estimate.hit_fraction if rep.estimate else None,
               "ci95": rep.estimate.ci95 if rep.estimate else None,
               "passed": rep.passed}
    _write_json(out / "bourgain_report.json", payload)
    if not rep.passed:
        raise CheckFailure("exit mass fell below the lower bound", payload)
    return 0


def cmd_doubling(args) -> int:
    out = _out_dir(args)
    oracle = scenes.load_scene(args.scene)
    pole = _floats(args.pole)
    center = _floats(args.center)
    balls = [BallSpec(center, float(r)) for r in _floats(args.radii)]
    cfg = _walk_config(args)
    rep = harmonic.doubling_probe(oracle, balls, pole, cfg, bound=args.bound)
    payload = {"scene": str(args.scene), "pole": list(map(float, pole)),
               "bound": args.bound, "rows": rep.rows,
               "passed": rep.passed()}
    _write_json(out / "doubling_report.json", payload)
    if not rep.passed():
        raise CheckFailure("doubling ratio exceeded the bound", payload)
    return 0


def cmd_counterexample(args) -> int:
    out = _out_dir(args)
    params = counterexample.CantorParams(d=args.d, s=args.s, depth=args.depth)
    scaling = counterexample.surface_scaling_check(
        params, range(args.n_min, args.n_max + 1))
    counterexample.scaling_to_csv(scaling, out / "cantor_scaling.csv")
    window = counterexample.WindowSpec(
        levels=tuple(int(v) for v in _floats(args.levels)))
    decay = counterexample.window_decay_report(params, window)
    counterexample.decay_to_csv(decay, out / "cantor_decay.csv")
    oracle = counterexample.assemble_counterexample(params, window)
    scenes.save_scene(oracle, out / "cantor_scene.json")
    band = max(scaling.ratios) / min(scaling.ratios)
    payload = {"d": args.d, "s": args.s, "depth": args.depth,
               "scaling_rows": [list(r) for r in scaling.rows],
               "ratio_band": band,
               "decay_slope": decay.slope, "decay_predicted": decay.predicted,
               "decay_relative_error": decay.relative_error,
               "cells": oracle.cell_count(), "faces": oracle.face_count()}
    _write_json(out / "counterexample_report.json", payload)
    if band > 1.3 / 0.7 + 1e-12 or decay.relative_error > 0.2:
        raise CheckFailure("area scaling left the allowed band", payload)
    return 0


def cmd_density_scan(args) -> int:
    out = _out_dir(args)
    oracle = scenes.load_scene(args.scene)
    x = _floats(args.x)
    radii = _floats(args.radii)
    cfg = _walk_config(args)
    scan = harmonic.density_ratio_scan(oracle, x, radii, cfg)
    lines = ["radius,flat_fraction,ci95,in_ball,w0_fraction,underpowered"]
    for i, r in enumerate(scan.radii):
        lines.append(f"{r:.17g},{scan.flat_fractions[i]:.17g},"
                     f"{scan.ci95s[i]:.17g},{scan.in_ball_counts[i]},"
                     f"{scan.w0_fractions[i]:.17g},{int(scan.underpowered[i])}")
    (out / "density_scan.csv").write_text("\n".join(lines) + "\n")
    pairs = len(scan.radii) - 1
    need = max(1, pairs - 1)
    payload = {"scene": str(args.scene), "x": list(map(float, x)),
               "radii": list(scan.radii),
               "flat_fractions": scan.flat_fractions,
               "ci95": scan.ci95s, "in_ball": scan.in_ball_counts,
               "w0_fractions": scan.w0_fractions,
               "underpowered": [bool(u) for u in scan.underpowered],
               "separated_decreases": scan.ci_separated_decreases(),
               "required": need}
    _write_json(out / "density_scan_report.json", payload)
    if any(scan.underpowered):
        raise CheckFailure("a radius collected fewer than 100 walks", payload)
    if scan.ci_separated_decreases() < need:
        raise CheckFailure("flat fraction failed to decrease", payload)
    return 0


def cmd_verify_all(args) -> int:
    out = _out_dir(args)
    oracle = scenes.load_scene(args.scene)
    W = whitney.whitney_decompose(oracle, (args.n_min, args.n_max))
    rep = whitney.verify_whitney_properties(W)
    spacing = args.spacing or 2.0 ** (-args.n_max) / 4.0
    cloud = geometry.cloud_from_oracle(oracle, spacing)
    tree = boundary_cubes.build_metric_cubes(cloud, 0.5)
    axioms = boundary_cubes.verify_cube_axioms(tree)
    payload = {"scene": str(args.scene),
               "whitney": {"n_cubes": rep.n_cubes,
                           "prop1_ok": rep.prop1_ok, "prop2_ok": rep.prop2_ok,
                           "adjacency_ok": rep.adjacency_ok,
                           "maximality_ok": rep.maximality_ok},
               "cubes": {"n_cubes": axioms.n_cubes,
                         "violations": axioms.violations}}
    _write_json(out / "verify_all_report.json", payload)
    ok = (rep.prop1_ok and rep.prop2_ok and rep.adjacency_ok
          and rep.maximality_ok and not axioms.violations)
    if not ok:
        raise CheckFailure("verification failed", payload)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_walk_flags(p):
    p.add_argument("--walkers", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=20_000)
    p.add_argument("--gamma", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmtlab",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("whitney", help="decompose a scene and verify cube properties")
    p.add_argument("--scene", required=True)
    p.add_argument("--n-min", dest="n_min", type=int, default=-5)
    p.add_argument("--n-max", dest="n_max", type=int, default=1)
    p.add_argument("--lam", type=float, default=1.05)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_whitney)

    p = sub.add_parser("cubes", help="build metric cubes on a cloud and verify axioms")
    p.add_argument("--cloud")
    p.add_argument("--scene")
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("--c0", type=float, default=0.5)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_cubes)

    p = sub.add_parser("beta", help="flatness numbers for every cube of a cloud")
    p.add_argument("--cloud")
    p.add_argument("--scene")
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("--c0", type=float, default=0.5)
    p.add_argument("--m", type=float, default=3.0)
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_beta)

    p = sub.add_parser("carleson", help="packing constants of the non-flat family")
    p.add_argument("--cloud")
    p.add_argument("--scene")
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("--c0", type=float, default=0.5)
    p.add_argument("--m", type=float, default=3.0)
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--top-levels", dest="top_levels", type=int, default=3)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_carleson)

    p = sub.add_parser("dense-subset", help="stopping-time dense subset of a cloud")
    p.add_argument("--cloud")
    p.add_argument("--scene")
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("--c0", type=float, default=0.5)
    p.add_argument("--e-fraction", dest="e_fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_dense_subset)

    p = sub.add_parser("sawtooth", help="carve a sub-domain near a boundary patch")
    p.add_argument("--scene", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--r0", type=float, required=True)
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("--n-min", dest="n_min", type=int, default=-6)
    p.add_argument("--n-max", dest="n_max", type=int, default=1)
    p.add_argument("--c0-box", dest="c0_box", type=float, default=12.0)
    p.add_argument("--c-tilde", dest="c_tilde", type=float, default=10.0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_sawtooth)

    p = sub.add_parser("wos", help="walk-on-spheres exit mass of a boundary target")
    p.add_argument("--scene", required=True)
    p.add_argument("--pole", required=True)
    p.add_argument("--target", required=True)
    _add_walk_flags(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_wos)

    p = sub.add_parser("bourgain", help="exit-mass lower bound on a boundary ball")
    p.add_argument("--scene", required=True)
    p.add_argument("--center", required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--c0", type=float, default=0.3)
    _add_walk_flags(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_bourgain)

    p = sub.add_parser("doubling", help="exit-mass doubling ratios of boundary balls")
    p.add_argument("--scene", required=True)
    p.add_argument("--pole", required=True)
    p.add_argument("--center", required=True)
    p.add_argument("--radii", required=True)
    p.add_argument("--bound", type=float, default=10.0)
    _add_walk_flags(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_doubling)

    p = sub.add_parser("counterexample", help="build the fractal complement scene")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--s", type=float, default=1.5)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--n-min", dest="n_min", type=int, default=1)
    p.add_argument("--n-max", dest="n_max", type=int, default=6)
    p.add_argument("--levels", default="1,2,3,4")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("density-scan", help="flat-part exit fraction across radii")
    p.add_argument("--scene", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--radii", required=True)
    _add_walk_flags(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_density_scan)

    p = sub.add_parser("verify-all", help="whitney + cube-axiom verification")
    p.add_argument("--scene", required=True)
    p.add_argument("--n-min", dest="n_min", type=int, default=-4)
    p.add_argument("--n-max", dest="n_max", type=int, default=1)
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_verify_all)

    return ap


def main(argv=None) -> int:
    threads = os.environ.get("GMT_LAB_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except CheckFailure as exc:
        out = _out_dir(args)
        _write_json(out / f"{args.command.replace('-', '_')}_witness.json",
                    exc.witness)
        print(f"CHECK FAILED: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
