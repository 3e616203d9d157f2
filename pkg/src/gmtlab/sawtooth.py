"""Sub-domains carved from a cube decomposition around a boundary patch.

Given a domain's cube decomposition and a marked boundary set E, select the
cubes whose dilation meets E below a top scale ("core"), close the selection
under short paths in the touching-cubes graph ("augmented"), and take the
interior of the union of slightly dilated member cubes.  The resulting
sub-domain touches the original boundary exactly along the closure of E; this
module also verifies that trace property, hunts exterior balls through both
the flat-cube reflection route and the complement-prism route, and bounds the
sub-domain's boundary measure by the nearby boundary mass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import boundary_cubes, geometry, scenes
from .geometry import BallSpec, NoWitness, corkscrew_point
from .whitney import DyadicCube, WhitneyDecomposition, WhitneyGraph


class EmptyCore(Exception):
    """No cube was selected — the marked set is too sparse for the window."""


class ReflectionInside(Exception):
    """The reflected ball met the domain: a flatness/density premise failed."""

    def __init__(self, message, record=None, corkscrew=None):
        super().__init__(message)
        self.record = record
        self.corkscrew = corkscrew


def default_dilation(dim: int) -> float:
    """Cube dilation factor safely inside the admissible window."""
    return 1.0 + 1.0 / (8.0 * math.sqrt(dim))


class _DyadicUnionOracle(scenes.BoxUnionOracle):
    """Box union whose boxes are same-factor dilates of dyadic cubes.

    Membership goes through per-level integer-anchor tables instead of a scan
    over all boxes: a point can only lie in the dilate of a cube whose anchor
    falls in a width-lam window around the point's own cell, so each level
    contributes at most 2^dim exact-key lookups.
    """

    def __init__(self, boxes, lam):
        super().__init__(boxes)
        self._lam = float(lam)
        # recover (level, anchor) from the stored boxes — the base constructor
        # sorts and dedups them, so input-order metadata would be misaligned
        side = (self.boxes[:, 1, 0] - self.boxes[:, 0, 0]) / self._lam
        levels = np.round(np.log2(side)).astype(np.int64)
        s = 2.0 ** levels.astype(float)
        anchors = np.round(self.boxes[:, 0, :] / s[:, None]
                           - 0.5 + self._lam / 2.0).astype(np.int64)
        self._tables = {}
        for n in np.unique(levels):
            rows = np.nonzero(levels == n)[0]
            a = anchors[rows]
            lo = a.min(axis=0)
            ext = (a.max(axis=0) - lo + 1).astype(np.int64)
            keys = self._encode(a, lo, ext)
            order = np.argsort(keys)
            self._tables[int(n)] = (keys[order], rows[order], lo, ext)

    @staticmethod
    def _encode(a, lo, ext):
        key = np.zeros(len(a), dtype=np.int64)
        rel = a - lo
        for j in range(a.shape[1]):
            key = key * ext[j] + rel[:, j]
        return key

    def member(self, pts):
        pts = scenes.as_points(pts)
        inside = np.zeros(len(pts), dtype=bool)
        halfw = self._lam / 2.0
        dim = pts.shape[1]
        for n, (keys, rows, lo, ext) in self._tables.items():
            s = 2.0 ** n
            u = pts / s - 0.5
            lo_a = np.ceil(u - halfw - 1e-12).astype(np.int64)
            hi_a = np.floor(u + halfw + 1e-12).astype(np.int64)
            for bits in range(1 << dim):
                cand = lo_a.copy()
                for j in range(dim):
                    if bits >> j & 1:
                        cand[:, j] = hi_a[:, j]
                ok = (np.all((cand >= lo) & (cand - lo < ext), axis=1)
                      & ~inside)
                if not ok.any():
                    continue
                key = self._encode(cand[ok], lo, ext)
                pos = np.searchsorted(keys, key)
                pos_c = np.minimum(pos, len(keys) - 1)
                found = keys[pos_c] == key
                if not found.any():
                    continue
                pi = np.nonzero(ok)[0][found]
                bi = rows[pos_c[found]]
                hit = np.all((pts[pi] >= self.boxes[bi, 0])
                             & (pts[pi] <= self.boxes[bi, 1]), axis=1)
                inside[pi[hit]] = True
        return inside


@dataclass(frozen=True)
class SawtoothParams:
    x0: tuple
    r0: float
    C0: float = 12.0
    C_tilde: float = 10.0
    lam: float | None = None

    def __post_init__(self):
        if self.C0 < 1.0 or self.C_tilde < 0.0:
            raise ValueError("C0 must be >= 1 and C_tilde >= 0")

    def dilation(self, dim: int) -> float:
        return self.lam if self.lam is not None else default_dilation(dim)


class SawtoothDomain:
    """Core/augmented cube selections plus the derived box-union oracle."""

    def __init__(self, W: WhitneyDecomposition, G: WhitneyGraph,
                 params: SawtoothParams, e_points: np.ndarray,
                 core: np.ndarray, augmented: np.ndarray, lam: float):
        self.W = W
        self.G = G
        self.params = params
        self.e_points = e_points
        self.core = core                    # sorted graph ids
        self.augmented = augmented          # sorted graph ids
        self.lam = lam
        self.boundary_core = self._boundary_of(core)
        self.boundary_aug = self._boundary_of(augmented)
        self.oracle = _DyadicUnionOracle(self.dilated_boxes(augmented), lam)

    def _boundary_of(self, gids: np.ndarray) -> np.ndarray:
        mask = np.zeros(self.G.n, dtype=bool)
        mask[gids] = True
        owner = np.repeat(np.arange(self.G.n), np.diff(self.G.indptr))
        escape = mask[owner] & ~mask[self.G.indices]
        return np.unique(owner[escape])

    def dilated_boxes(self, gids: np.ndarray) -> np.ndarray:
        ctr = 0.5 * (self.G.lo[gids] + self.G.hi[gids])
        half = 0.5 * self.lam * self.G.side[gids]
        return np.stack([ctr - half[:, None], ctr + half[:, None]], axis=1)

    def cubes_of(self, gids) -> list[DyadicCube]:
        return [self.G.cube_of(int(g)) for g in gids]

    def boundary_reach_counts(self) -> np.ndarray:
        """For each boundary cube of the augmented set: how many core-boundary
        cubes lie within the path-closure distance used to augment."""
        max_hops = max(int(self.params.C_tilde) - 1, 0)
        bc = np.zeros(self.G.n, dtype=bool)
        bc[self.boundary_core] = True
        counts = np.empty(len(self.boundary_aug), dtype=np.int64)
        for i, g in enumerate(self.boundary_aug):
            dist, _ = self.G.bfs_tree(int(g), max_hops=max_hops)
            counts[i] = int(np.count_nonzero(bc & (dist >= 0)))
        return counts

    def to_json(self, path) -> None:
        def rows(gids):
            return [[int(self.G.level[g])] + [int(a) for a in self.G.anchor[g]]
                    for g in gids]
        out = {
            "dilation": self.lam,
            "params": {"x0": list(self.params.x0), "r0": self.params.r0,
                       "C0": self.params.C0, "C_tilde": self.params.C_tilde},
            "core": rows(self.core),
            "augmented": rows(self.augmented),
            "boundary_core": rows(self.boundary_core),
            "boundary_augmented": rows(self.boundary_aug),
        }
        Path(path).write_text(json.dumps(out))


def build_sawtooth(W: WhitneyDecomposition, G: WhitneyGraph, E,
                   params: SawtoothParams) -> SawtoothDomain:
    """Select cubes whose C0-dilation meets E (below scale r0), then close the
    selection under touching-cube paths of vertex length <= C_tilde.

    Path closure enumerates, by depth-limited search from every selected
    cube, exactly the selected pairs at path distance <= C_tilde, and adds the
    vertices of one deterministic shortest path per pair.
    """
    e_pts = np.asarray(E.points if hasattr(E, "points") else E, dtype=float)
    if e_pts.ndim != 2 or len(e_pts) == 0:
        raise ValueError("E must be a nonempty (m, dim) point set")
    lam = params.dilation(W.dim)
    et = cKDTree(e_pts)
    n = G.n
    core_mask = np.zeros(n, dtype=bool)
    centers = 0.5 * (G.lo + G.hi)
    for l in sorted(set(G.level.tolist())):
        s = 2.0 ** l
        if s > params.r0 * (1 + 1e-12):
            continue
        sel = np.nonzero(G.level == l)[0]
        half = params.C0 * s / 2.0
        lists = et.query_ball_point(centers[sel], r=half * math.sqrt(W.dim))
        for gid, cand in zip(sel, lists):
            if cand and np.any(
                    np.max(np.abs(e_pts[cand] - centers[gid]), axis=1)
                    <= half * (1 + 1e-12)):
                core_mask[gid] = True
    core = np.nonzero(core_mask)[0]
    if len(core) == 0:
        raise EmptyCore("no cube selected: marked set too sparse for window")

    aug_mask = core_mask.copy()
    max_hops = int(params.C_tilde) - 1
    if max_hops >= 1:
        for s_gid in core:
            dist, parent = G.bfs_tree(int(s_gid), max_hops=max_hops)
            reached = core[(dist[core] > 0) & (core > s_gid)]
            for t in reached:
                g = int(t)
                while g != s_gid:
                    aug_mask[g] = True
                    g = int(parent[g])
    augmented = np.nonzero(aug_mask)[0]
    return SawtoothDomain(W, G, params, e_pts, core, augmented, lam)


# ---------------------------------------------------------------------------
# boundary trace


@dataclass(frozen=True)
class TraceReport:
    tol: float
    max_e_to_boundary: float        # sup over E of dist to the sub-boundary
    max_boundary_to_e: float        # sup over near-floor samples of dist to E
    n_boundary_samples: int
    n_near_samples: int
    c_minus: float                  # containment/diameter constant achieved

    @property
    def ok(self) -> bool:
        return (self.max_e_to_boundary <= self.tol
                and self.max_boundary_to_e <= self.tol)


def boundary_trace_check(S: SawtoothDomain, tol: float,
                         sample_spacing: float | None = None) -> TraceReport:
    """Two-sided trace verification at tolerance tol.

    (a) every marked point lies within tol of the sub-domain boundary;
    (b) every sampled sub-domain boundary point that actually touches the
        original boundary (within the sampling resolution — the sharp
        statement concerns the exact intersection, so the touch gate is the
        resolution, not tol) lies within tol of the marked set;
    plus the containment constant: sub-domain inside B(x0, c*r0) and boundary
    diameter at least r0/c, with the achieved c reported.
    """
    e_pts = S.e_points
    d_e = np.abs(S.oracle.sd(e_pts))
    spacing = sample_spacing if sample_spacing is not None else tol / 4.0
    samples = S.oracle.boundary_points(spacing)
    near = samples[np.abs(S.W.oracle.sd(samples)) < spacing]
    if len(near):
        dd, _ = cKDTree(e_pts).query(near)
        d_b = float(dd.max())
    else:
        d_b = math.inf
    x0 = np.asarray(S.params.x0, dtype=float)
    reach = float(np.linalg.norm(samples - x0, axis=1).max()) if len(samples) else 0.0
    lo = samples.min(axis=0)
    hi = samples.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    c_minus = max(reach / S.params.r0,
                  S.params.r0 / diam if diam > 0 else math.inf)
    return TraceReport(tol, float(d_e.max()), d_b, len(samples), len(near),
                       c_minus)


# ---------------------------------------------------------------------------
# exterior balls


def exterior_ball_from_flat_cube(tree: boundary_cubes.CubeTree,
                                 cube: boundary_cubes.MetricCube,
                                 record: boundary_cubes.BetaRecord,
                                 oracle: scenes.SceneOracle,
                                 probe_pitch_divisor: int = 64) -> BallSpec:
    """Reflect half the interior corkscrew ball across the flat plane.

    Takes a cube certified flat (record) and the ambient-domain oracle; finds
    an interior corkscrew ball for the cube's ball, reflects its half-radius
    copy across the record's plane translated through the cube center, and
    certifies by signed-distance probing (pitch side/probe_pitch_divisor)
    that the reflected ball misses the domain closure.
    """
    x = cube.center(tree.cloud)
    ell = cube.side
    cert = corkscrew_point(oracle, x, ell, side="interior")
    r_in = cert.witness.radius
    u = np.asarray(record.plane_normal, dtype=float)
    u = u / np.linalg.norm(u)
    c = cert.witness.center
    c_ref = c - 2.0 * float((c - x) @ u) * u
    r_ref = r_in / 2.0
    overshoot = np.linalg.norm(c_ref - x) + r_ref - ell
    if overshoot > 1e-9 * ell:
        raise ReflectionInside(
            f"reflected ball leaves the cube ball by {overshoot:.3g}",
            record=record, corkscrew=cert)
    pitch = ell / probe_pitch_divisor
    ticks = [np.arange(c_ref[k] - r_ref, c_ref[k] + r_ref + 0.5 * pitch, pitch)
             for k in range(tree.cloud.dim)]
    probes = np.stack(np.meshgrid(*ticks, indexing="ij"), axis=-1).reshape(-1, tree.cloud.dim)
    probes = probes[np.linalg.norm(probes - c_ref, axis=1) <= r_ref]
    probes = np.concatenate([probes, c_ref[None, :]])
    sd = oracle.sd(probes)
    if float(sd.min()) <= 0.0:
        raise ReflectionInside(
            f"reflected ball meets the domain (min sd {sd.min():.3g})",
            record=record, corkscrew=cert)
    return BallSpec(c_ref, r_ref)


def _trim_prism(plo, phi, boxes):
    """Carve boxes out of a prism by face trims; None when not prism-shaped."""
    plo = plo.copy()
    phi = phi.copy()
    for _ in range(len(boxes) + 8):
        if np.any(phi - plo <= 0):
            return None, "covered"
        ov = np.all(boxes[:, 0] < phi, axis=1) & np.all(boxes[:, 1] > plo, axis=1)
        idx = np.nonzero(ov)[0]
        if len(idx) == 0:
            return (plo, phi), None
        trimmed = False
        best_loss = None
        best_cut = None
        for i in idx:
            blo, bhi = boxes[i]
            covers = (blo <= plo + 1e-15) & (bhi >= phi - 1e-15)
            if covers.all():
                return None, "covered"
            for k in np.nonzero(~covers)[0]:
                if not np.all(covers | (np.arange(len(plo)) == k)):
                    continue
                ext = phi - plo
                if blo[k] <= plo[k] and bhi[k] < phi[k]:
                    loss = (bhi[k] - plo[k]) / ext[k]
                    cut = (k, "lo", bhi[k])
                elif bhi[k] >= phi[k] and blo[k] > plo[k]:
                    loss = (phi[k] - blo[k]) / ext[k]
                    cut = (k, "hi", blo[k])
                else:
                    continue        # box strictly interior along k: not a trim
                if best_loss is None or loss < best_loss:
                    best_loss, best_cut = loss, cut
        if best_cut is None:
            return None, "non_prism"
        k, side, v = best_cut
        if side == "lo":
            plo[k] = v
        else:
            phi[k] = v
        trimmed = True
    return None, "non_prism"


def far_prism_ball(S: SawtoothDomain, x, r: float):
    """Exterior ball from the rectangular remainder of the containing cube.

    The decomposition cube holding x, minus the dilated member cubes, is
    expected to be a rectangular prism; its inscribed ball (clipped to
    B(x, r), radius capped by the derived oracle's signed distance at the
    center) is an exterior ball for the sub-domain.  Returns (ball, note).
    """
    x = np.asarray(x, dtype=float)
    R = S.W.locate(x)
    if R is None:
        return None, "no containing cube"
    aug_mask = np.zeros(S.G.n, dtype=bool)
    aug_mask[S.augmented] = True
    try:
        gid = S.G.id_of(R)
        if aug_mask[gid]:
            return None, "inside dilated union"
    except KeyError:
        pass
    h = r / math.sqrt(S.W.dim)
    plo = np.maximum(R.lo, x - h)
    phi = np.minimum(R.hi, x + h)
    if np.any(phi - plo <= 0):
        return None, "degenerate clip"
    prism, note = _trim_prism(plo, phi, S.oracle.boxes)
    if prism is None:
        return None, note
    plo, phi = prism
    center = 0.5 * (plo + phi)
    rad = float((phi - plo).min() / 2.0)
    rad = min(rad, float(S.oracle.sd(center)))
    rad = min(rad, r - float(np.linalg.norm(center - x)))
    if rad <= 0:
        return None, "no room"
    return BallSpec(center, rad), None


@dataclass(frozen=True)
class ExteriorReport:
    rows: list                      # per (x, r) outcome dicts
    worst_generic: float
    worst_near: float
    worst_far: float
    skipped_scales: list
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def exterior_corkscrew_check(S: SawtoothDomain, scales, sample_count: int,
                             tree: boundary_cubes.CubeTree | None = None,
                             e_prime=None, bad=None,
                             flat_eps: float = 0.25, M: float = 3.0,
                             packing_constant: float = 4.0,
                             density_constant: float = 4.0,
                             beta_budget: int = 40) -> ExteriorReport:
    """Exterior-ball search on the sub-domain boundary across scales.

    Every sampled point gets the generic coarse-to-fine ball search; points
    close to the retained marked set (< r/2) additionally route through a
    good flat cube and the reflection construction, while far points use the
    complement-prism construction.  Constants are reported per branch.
    """
    bp = S.oracle.boundary_points(min(scales) / 4.0)
    stride = max(1, len(bp) // max(sample_count, 1))
    samples = bp[::stride][:sample_count]
    lo = bp.min(axis=0)
    hi = bp.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    ref_pts = np.asarray(e_prime if e_prime is not None else S.e_points, float)
    if tree is not None and e_prime is not None and ref_pts.ndim == 1:
        ref_pts = tree.cloud.points[np.asarray(e_prime, dtype=int)]
    ref_tree = cKDTree(ref_pts)

    rows = []
    failures = []
    skipped = []
    worst_g = worst_n = worst_f = 0.0
    for r in scales:
        if r > diam:
            skipped.append(float(r))
            continue
        for x in samples:
            row = {"x": tuple(map(float, x)), "r": float(r)}
            try:
                cert = corkscrew_point(S.oracle, x, r, side="exterior")
                row["generic"] = cert.constant
                worst_g = max(worst_g, cert.constant)
            except NoWitness as e:
                row["generic"] = None
                failures.append({"x": row["x"], "r": float(r),
                                 "branch": "generic", "error": str(e)})
            d_e = float(ref_tree.query(x)[0])
            near = d_e < r / 2.0
            row["branch"] = "near" if near else "far"
            if near and tree is not None:
                try:
                    c_near = _near_flat_constant(
                        S, tree, e_prime, bad, x, r, flat_eps, M,
                        packing_constant, density_constant, beta_budget)
                    row["branch_constant"] = c_near
                    worst_n = max(worst_n, c_near)
                except (ReflectionInside, NoWitness,
                        boundary_cubes.NotFound) as e:
                    row["branch_constant"] = None
                    failures.append({"x": row["x"], "r": float(r),
                                     "branch": "near", "error": str(e)})
            elif not near:
                ball, note = far_prism_ball(S, x, r)
                if ball is not None:
                    c_far = r / ball.radius
                    row["branch_constant"] = c_far
                    worst_f = max(worst_f, c_far)
                else:
                    row["branch_constant"] = None
                    row["note"] = note
            rows.append(row)
    return ExteriorReport(rows, worst_g, worst_n, worst_f, skipped, failures)


def _near_flat_constant(S, tree, e_prime, bad, x, r, flat_eps, M,
                        packing_constant, density_constant, beta_budget):
    """Route a near point through a good flat cube to a reflected ball."""
    lvls = tree.level_ids
    sides = np.array([tree.side(l) for l in lvls])
    l_star = lvls[int(np.argmin(np.abs(sides - r / 4.0)))]
    cands = tree.levels[l_star]
    ctrs = np.stack([c.center(tree.cloud) for c in cands])
    cube = cands[int(np.argmin(np.linalg.norm(ctrs - x, axis=1)))]
    if bad is None:
        bad = lambda c: False
    good = boundary_cubes.good_cube_below(
        tree, cube, bad, e_prime if e_prime is not None
        else np.arange(len(tree.cloud)), packing_constant, density_constant)
    record = boundary_cubes.bbeta(tree, good, M=M, budget=beta_budget,
                                  threshold=flat_eps)
    if record.value >= flat_eps:
        raise ReflectionInside(
            f"good cube not flat enough ({record.value:.3g} >= {flat_eps})",
            record=record)
    ball = exterior_ball_from_flat_cube(tree, good, record, S.W.oracle)
    return r / ball.radius


# ---------------------------------------------------------------------------
# boundary measure


@dataclass(frozen=True)
class MeasureReport:
    sum_side_powers: float          # sum of side^d over the boundary cubes
    boundary_area: float            # exact face area of the derived oracle
    mass_proxy: float               # h^d * #cloud within the comparison ball
    ratio_sum: float
    ratio_area: float
    witness_misses: int
    witness_multiplicity: int
    comparison_radius: float

    @property
    def ok(self) -> bool:
        return self.witness_misses == 0


def boundary_measure_bound(S: SawtoothDomain, cloud: geometry.BoundaryCloud,
                           tree: boundary_cubes.CubeTree | None = None,
                           A: float = 4.0) -> MeasureReport:
    """Compare boundary-cube side sums and exact face area to local mass.

    Also assigns to every boundary cube a witness: the coarsest metric cube
    inside its C0-dilation whose tripled ball misses the marked set; the
    maximal number of boundary cubes sharing one witness is reported.
    """
    d = S.W.dim - 1
    sides = S.G.side[S.boundary_aug]
    sum_ell = float((sides ** d).sum())
    area = S.oracle.boundary_area()
    x0 = np.asarray(S.params.x0, dtype=float)
    rr = A * S.params.r0
    inside = np.linalg.norm(cloud.points - x0, axis=1) <= rr
    mass = float(cloud.spacing ** d * np.count_nonzero(inside))
    if tree is None:
        tree = boundary_cubes.build_metric_cubes(cloud, 0.5)
    e_tree = cKDTree(S.e_points)
    level_centers = {
        l: np.stack([c.center(cloud) for c in tree.levels[l]])
        for l in tree.level_ids}
    pts = cloud.points
    usage: dict = {}
    misses = 0
    for g in S.boundary_aug:
        ctr = 0.5 * (S.G.lo[g] + S.G.hi[g])
        half = S.params.C0 * S.G.side[g] / 2.0
        found = None
        for l in tree.level_ids:
            ctrs = level_centers[l]
            in_box = np.all(np.abs(ctrs - ctr) <= half, axis=1)
            for ci in np.nonzero(in_box)[0]:
                cand = tree.levels[l][ci]
                mem = pts[cand.members]
                if np.any(np.abs(mem - ctr) > half):
                    continue
                if float(e_tree.query(ctrs[ci])[0]) >= 3.0 * cand.side:
                    found = cand
                    break
            if found is not None:
                break
        if found is None:
            misses += 1
        else:
            usage[found.key] = usage.get(found.key, 0) + 1
    mult = max(usage.values()) if usage else 0
    return MeasureReport(sum_ell, area, mass,
                         sum_ell / mass if mass else math.inf,
                         area / mass if mass else math.inf,
                         misses, mult, rr)
