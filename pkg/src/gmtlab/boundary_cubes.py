"""Nested net-based cubes on point clouds, flatness numbers, packing checks.

A point cloud is organized into a hierarchy of "cubes": per-level partitions
induced by nested greedy nets, each cube sandwiched between two comparable
balls around its center.  On top of the hierarchy sit bilateral flatness
numbers (distance of the local cloud to a best-fit plane plus distance of the
plane back to the cloud), Carleson-type packing checks for cube families, and
the stopping-time construction extracting a dense subset of a marked point
set together with a search for nearby non-degenerate cubes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import BoundaryCloud, farthest_point_net, lex_order

SIDE_FACTOR = 5.0        # ell(cube) = SIDE_FACTOR * c0^level
SANDWICH_C1 = 1.0 / 500.0


class InvalidRatio(ValueError):
    """Net ratio outside the admissible interval (0, 1/2]."""


class EmptyCube(ValueError):
    """No cloud points in the requested dilated ball."""


class ZeroMass(ValueError):
    """Marked set carries no measure."""


class NotFound(RuntimeError):
    """No admissible descendant located within the predicted depth."""


@dataclass(eq=False)
class MetricCube:
    level: int
    center_id: int
    side: float
    members: np.ndarray                 # sorted cloud indices
    parent: "MetricCube | None" = None
    children: list = field(default_factory=list)

    @property
    def key(self):
        return (self.level, self.center_id)

    def center(self, cloud: BoundaryCloud) -> np.ndarray:
        return cloud.points[self.center_id]

    def __repr__(self):
        return (f"MetricCube(level={self.level}, center={self.center_id}, "
                f"n={len(self.members)})")


class CubeTree:
    """Levels of cubes partitioning a cloud, with parent/child links.

    mu(cube) = spacing^mu_exponent * #members is the discrete surface-measure
    proxy; all density comparisons reduce to exact integer-count inequalities.
    """

    def __init__(self, cloud: BoundaryCloud, c0: float,
                 levels: dict, mu_exponent: int):
        self.cloud = cloud
        self.c0 = float(c0)
        self.levels = levels            # level -> [MetricCube] in center order
        self.mu_exponent = int(mu_exponent)
        self._by_key = {c.key: c for cubes in levels.values() for c in cubes}

    @property
    def level_ids(self) -> list[int]:
        return sorted(self.levels)

    def root(self) -> MetricCube:
        top = self.levels[self.level_ids[0]]
        if len(top) != 1:
            raise AssertionError("top level is not a single root")
        return top[0]

    def cube_at(self, level: int, center_id: int) -> MetricCube:
        return self._by_key[(level, center_id)]

    def cubes(self):
        for l in self.level_ids:
            yield from self.levels[l]

    def n_cubes(self) -> int:
        return sum(len(v) for v in self.levels.values())

    def subtree(self, cube: MetricCube):
        stack = [cube]
        while stack:
            c = stack.pop()
            yield c
            stack.extend(reversed(c.children))

    def mu(self, cube: MetricCube) -> float:
        return self.cloud.spacing ** self.mu_exponent * len(cube.members)

    def side(self, level: int) -> float:
        return SIDE_FACTOR * self.c0 ** level

    def to_json(self, path) -> None:
        out = {
            "c0": self.c0,
            "mu_exponent": self.mu_exponent,
            "spacing": self.cloud.spacing,
            "levels": {
                str(l): [
                    {"center_id": int(c.center_id), "side": c.side,
                     "members": [int(m) for m in c.members]}
                    for c in cubes
                ] for l, cubes in sorted(self.levels.items())
            },
        }
        Path(path).write_text(json.dumps(out, indent=1))


def _nearest_center(centers: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of the nearest center per query; near-ties (1e-12 relative) go to
    the smallest index, so pre-ordering centers fixes the tie-break rule."""
    tree = cKDTree(centers)
    m = len(centers)
    k = min(m, 8)
    while True:
        d, idx = tree.query(queries, k=k)
        if k == 1:
            return np.asarray(idx, dtype=int).reshape(-1)
        tie = d <= d[:, :1] * (1.0 + 1e-12)
        cand = np.where(tie, idx, m)
        best = cand.min(axis=1)
        saturated = tie[:, -1] & (k < m)
        if not np.any(saturated):
            return best
        k = min(m, k * 2)


def build_metric_cubes(cloud: BoundaryCloud, c0: float,
                       mu_exponent: int | None = None) -> CubeTree:
    """Nested nets -> hierarchical assignment -> per-level cube partitions.

    Level-n net radius is c0^n; nets are nested by seeding each net with the
    previous one.  Each cloud point joins the cube of its nearest finest-level
    net point (near-ties to the lexicographically smaller center), and each
    finer center is assigned to its nearest coarser net point, so cubes refine
    across levels and every center belongs to its own cube.
    """
    if not (0.0 < c0 <= 0.5):
        raise InvalidRatio(f"net ratio {c0} outside (0, 1/2]")
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    if mu_exponent is None:
        mu_exponent = cloud.dim - 1
    pts = cloud.points
    npts = len(pts)
    rank = np.empty(npts, dtype=int)
    rank[lex_order(pts)] = np.arange(npts)

    diam = cloud.diameter()
    if diam <= 0.0:
        n_start = 0
    else:
        n_start = int(math.floor(math.log(diam) / math.log(c0)))
    nets = []                       # [(level, center ids in lex-rank order)]
    prev = None
    n = n_start
    while True:
        r = c0 ** n
        net = farthest_point_net(pts, r, seed_idx=prev)
        prev = net
        net = net[np.argsort(rank[net])]
        nets.append((n, net))
        done = len(net) == npts or r <= cloud.spacing
        if (done and len(nets) >= 2) or len(nets) >= 64:
            break
        n += 1

    # per-point center id at the finest level
    _, finest = nets[-1]
    assign = {nets[-1][0]: finest[_nearest_center(pts[finest], pts)]}
    # parent center id for every center of each finer net
    parent_center = {}
    for (ln, net), (lf, fine) in zip(nets[:-1], nets[1:]):
        pc = np.full(npts, -1, dtype=int)
        pc[fine] = net[_nearest_center(pts[net], pts[fine])]
        parent_center[lf] = pc
    for i in range(len(nets) - 2, -1, -1):
        ln, _ = nets[i]
        lf, _ = nets[i + 1]
        assign[ln] = parent_center[lf][assign[lf]]

    levels: dict[int, list[MetricCube]] = {}
    for ln, net in nets:
        a = assign[ln]
        order = np.argsort(a, kind="stable")
        sorted_a = a[order]
        cuts = np.nonzero(np.diff(sorted_a))[0] + 1
        groups = np.split(order, cuts)
        by_center = {int(a[g[0]]): np.sort(g) for g in groups}
        side = SIDE_FACTOR * c0 ** ln
        cubes = [MetricCube(ln, int(c), side, by_center[int(c)]) for c in net]
        levels[ln] = cubes
    tree = CubeTree(cloud, c0, levels, mu_exponent)
    # link children to parents
    lvls = tree.level_ids
    for coarse, fine in zip(lvls[:-1], lvls[1:]):
        pc = parent_center[fine]
        for cube in levels[fine]:
            par = tree.cube_at(coarse, int(pc[cube.center_id]))
            cube.parent = par
            par.children.append(cube)
    return tree


# ---------------------------------------------------------------------------
# axiom verification


@dataclass(frozen=True)
class CubeAxiomReport:
    n_cubes: int
    n_levels: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_cube_axioms(tree: CubeTree) -> CubeAxiomReport:
    """Exactly re-check the partition, nesting, and ball-sandwich guarantees.

    Covering/disjointness and nesting are exact set comparisons on member
    indices; the sandwich check verifies every member lies within side of the
    center and every cloud point within SANDWICH_C1*side belongs to the cube.
    """
    cloud = tree.cloud
    pts = cloud.points
    npts = len(pts)
    kd = cloud.tree()
    bad = []
    for l in tree.level_ids:
        cubes = tree.levels[l]
        allm = np.concatenate([c.members for c in cubes]) if cubes else np.zeros(0, int)
        if len(allm) != npts or len(np.unique(allm)) != npts:
            bad.append({"kind": "partition", "level": l,
                        "detail": f"covers {len(np.unique(allm))}/{npts}"})
        for c in cubes:
            d = np.linalg.norm(pts[c.members] - pts[c.center_id], axis=1)
            if len(d) and d.max() > c.side * (1 + 1e-12):
                bad.append({"kind": "outer_ball", "level": l,
                            "center_id": c.center_id,
                            "detail": f"member at {d.max():.6g} > side {c.side:.6g}"})
            inner = kd.query_ball_point(pts[c.center_id], SANDWICH_C1 * c.side)
            if not np.isin(np.asarray(inner, int), c.members).all():
                bad.append({"kind": "inner_ball", "level": l,
                            "center_id": c.center_id,
                            "detail": "cloud point inside c1-ball missing"})
            if c.parent is not None and not np.isin(c.members, c.parent.members).all():
                bad.append({"kind": "nesting", "level": l,
                            "center_id": c.center_id,
                            "detail": "member escapes parent"})
    return CubeAxiomReport(tree.n_cubes(), len(tree.levels), bad)


# ---------------------------------------------------------------------------
# bilateral flatness numbers


@dataclass(frozen=True)
class BetaRecord:
    level: int
    center_id: int
    ell: float
    M: float
    plane_point: tuple
    plane_normal: tuple
    value: float
    cloud_to_plane: float
    plane_to_cloud: float
    search_budget: int
    pitch_divisor: int


def _plane_span(normal: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the plane orthogonal to a unit normal."""
    dim = len(normal)
    u, s, vt = np.linalg.svd(normal.reshape(1, -1))
    return vt[1:]


def beta_value(cloud: BoundaryCloud, center: np.ndarray, ell: float, M: float,
               plane_point, plane_normal, pitch_divisor: int = 32,
               kd: cKDTree | None = None, local=None):
    """Two-sided flatness of the cloud near a center against one plane.

    First term: max distance of cloud points in the M*ell ball to the plane.
    Second term: max distance back to the cloud from a grid sample (pitch
    ell/pitch_divisor) of the plane patch inside the same ball, keeping only
    samples the cloud covers laterally (some nearby point projects onto the
    plane within 1.5 spacings) — the cloud is a finite window onto the
    surface, so plane points beyond that window say nothing about flatness,
    and the lateral rule keeps the window aligned with the plane rather than
    with the coordinate axes.  Both terms are normalized by ell and summed.
    """
    p0 = np.asarray(plane_point, dtype=float)
    u = np.asarray(plane_normal, dtype=float)
    u = u / np.linalg.norm(u)
    kd = kd or cloud.tree()
    if local is None:
        local = cloud.points[kd.query_ball_point(center, M * ell)]
    if len(local) == 0:
        raise EmptyCube("no cloud points in the dilated ball")
    t1 = float(np.abs((local - p0) @ u).max()) / ell
    # plane patch sample: grid around the projection of the center
    c_proj = center - ((center - p0) @ u) * u
    basis = _plane_span(u)
    pitch = ell / pitch_divisor
    half = M * ell
    ticks = np.arange(-half, half + 0.5 * pitch, pitch)
    grids = np.meshgrid(*([ticks] * len(basis)), indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    sample = c_proj[None, :] + coords @ basis
    keep = np.linalg.norm(sample - center, axis=1) <= M * ell
    sample = sample[keep]
    if len(sample):
        lat_cloud = (local - p0) @ basis.T
        lat_samp = (sample - p0) @ basis.T
        covered = cKDTree(lat_cloud).query(lat_samp)[0] <= 1.5 * cloud.spacing
        sample = sample[covered]
    if len(sample):
        d, _ = kd.query(sample)
        t2 = float(np.max(d)) / ell
    else:
        t2 = 0.0
    return t1 + t2, t1, t2


def bbeta(tree: CubeTree, cube: MetricCube, M: float = 3.0,
          budget: int = 120, threshold: float | None = None,
          search_pitch_divisor: int = 8,
          pitch_divisor: int = 32) -> BetaRecord:
    """Best-plane flatness via principal-component init + coordinate descent.

    The returned value never exceeds the initialization value (the search
    keeps the best of both, each evaluated at the pinned final pitch), so it
    is always a certified upper bound for the plane-infimum.  If threshold is
    given and the initialization already scores below it, the descent is
    skipped — useful when only the comparison against threshold matters.
    """
    if M < 1.0:
        raise ValueError("dilation factor must be >= 1")
    cloud = tree.cloud
    center = cube.center(cloud)
    ell = cube.side
    kd = cloud.tree()
    idx = kd.query_ball_point(center, M * ell)
    if len(idx) == 0:
        raise EmptyCube(f"cube {cube.key}: empty {M}*ball")
    local = cloud.points[np.asarray(idx, int)]

    ctr = local.mean(axis=0)
    cov = np.cov(local.T) if len(local) > 1 else np.eye(cloud.dim)
    w, v = np.linalg.eigh(np.atleast_2d(cov))
    u0 = v[:, 0]
    o0 = float(ctr @ u0)

    def final(u, o):
        return beta_value(cloud, center, ell, M, o * u, u,
                          pitch_divisor=pitch_divisor, kd=kd, local=local)

    def coarse(u, o):
        return beta_value(cloud, center, ell, M, o * u, u,
                          pitch_divisor=search_pitch_divisor, kd=kd,
                          local=local)[0]

    init_val, init_t1, init_t2 = final(u0, o0)
    if threshold is not None and init_val <= threshold:
        return BetaRecord(cube.level, cube.center_id, ell, M,
                          tuple(o0 * u0), tuple(u0), init_val, init_t1,
                          init_t2, 0, pitch_divisor)

    u, o = u0, o0
    best = coarse(u, o)
    used = 1
    theta = 0.4
    step = 0.25 * ell
    while used < budget and (theta > 1e-4 or step > 1e-6 * ell):
        improved = False
        for tangent in _plane_span(u):
            for sgn in (1.0, -1.0):
                if used >= budget:
                    break
                cand = u * math.cos(theta) + sgn * tangent * math.sin(theta)
                cand /= np.linalg.norm(cand)
                val = coarse(cand, o)
                used += 1
                if val < best - 1e-15:
                    u, best, improved = cand, val, True
        for sgn in (1.0, -1.0):
            if used >= budget:
                break
            val = coarse(u, o + sgn * step)
            used += 1
            if val < best - 1e-15:
                o, best, improved = o + sgn * step, val, True
        if not improved:
            theta *= 0.5
            step *= 0.5
    sea_val, sea_t1, sea_t2 = final(u, o)
    if sea_val < init_val:
        return BetaRecord(cube.level, cube.center_id, ell, M, tuple(o * u),
                          tuple(u), sea_val, sea_t1, sea_t2, used,
                          pitch_divisor)
    return BetaRecord(cube.level, cube.center_id, ell, M, tuple(o0 * u0),
                      tuple(u0), init_val, init_t1, init_t2, used,
                      pitch_divisor)


def beta_records_to_csv(records, path) -> None:
    rows = ["level,center_id,ell,M,value"]
    for r in records:
        rows.append(f"{r.level},{r.center_id},{r.ell:.17g},{r.M:.17g},"
                    f"{r.value:.17g}")
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# packing checks


@dataclass(frozen=True)
class CarlesonReport:
    ratios: list
    max_ratio: float
    witness: tuple | None           # (level, center_id) of the extremal top

    @property
    def ok(self):
        return all(r >= 0.0 for r in self.ratios)


def carleson_check(tree: CubeTree, family, tops) -> CarlesonReport:
    """Packing ratio of a cube family below each top cube.

    family is a predicate on cubes; the ratio for a top is the mu-sum of
    family members in its subtree (top included) divided by mu(top).
    """
    ratios = []
    witness = None
    worst = -1.0
    for top in tops:
        total = sum(tree.mu(c) for c in tree.subtree(top) if family(c))
        r = total / tree.mu(top)
        ratios.append(r)
        if r > worst:
            worst, witness = r, top.key
    return CarlesonReport(ratios, max(ratios) if ratios else 0.0, witness)


def stray_point_family(tree: CubeTree, e_idx, M: float, delta: float):
    """Predicate: cube meets the marked set yet some cloud point of its
    M-dilated ball sits at distance >= delta*side from the marked set."""
    cloud = tree.cloud
    e_idx = np.asarray(e_idx, dtype=int)
    mask = np.zeros(len(cloud), dtype=bool)
    mask[e_idx] = True
    e_tree = cKDTree(cloud.points[e_idx])
    kd = cloud.tree()

    def pred(cube: MetricCube) -> bool:
        if not mask[cube.members].any():
            return False
        near = kd.query_ball_point(cube.center(cloud), M * cube.side)
        d, _ = e_tree.query(cloud.points[np.asarray(near, int)])
        return bool(np.any(d >= delta * cube.side - 1e-12))

    return pred


# ---------------------------------------------------------------------------
# dense subsets and good cubes


@dataclass(frozen=True)
class DenseSubsetResult:
    e_prime: np.ndarray             # surviving point indices (sorted)
    stopping: list                  # pruned maximal sparse cubes
    density_constant: float         # C0 = 1/delta
    count_e: int
    count_top: int


def dense_subset(tree: CubeTree, e_idx, top: MetricCube) -> DenseSubsetResult:
    """Stopping-time pruning of sparse cubes below a top cube.

    With delta = count(E)/(2*count(top)), prune the maximal cubes strictly
    below the top that meet E with count(cube & E)/count(cube) <= delta; the
    survivors E' keep at least half the count of E, and every cube meeting E'
    has E-density > delta.  All comparisons are exact integer
    cross-multiplications.
    """
    e_idx = np.unique(np.asarray(e_idx, dtype=int))
    mask = np.zeros(len(tree.cloud), dtype=bool)
    mask[e_idx] = True
    if not mask[top.members].sum():
        raise ZeroMass("marked set has no members in the top cube")
    if not np.isin(e_idx, top.members).all():
        raise ValueError("marked set must be contained in the top cube")
    c_e = len(e_idx)
    c_top = len(top.members)

    stopping = []

    def visit(c: MetricCube):
        ce = int(mask[c.members].sum())
        if ce == 0:
            return
        if 2 * ce * c_top <= c_e * len(c.members):
            stopping.append(c)
            return
        for ch in c.children:
            visit(ch)

    for ch in top.children:
        visit(ch)
    if stopping:
        removed = np.concatenate([c.members for c in stopping])
        keep = ~np.isin(e_idx, removed)
        e_prime = e_idx[keep]
    else:
        e_prime = e_idx
    return DenseSubsetResult(e_prime, stopping, 2.0 * c_top / c_e, c_e, c_top)


def good_cube_below(tree: CubeTree, cube: MetricCube, bad, e_prime,
                    packing_constant: float,
                    density_constant: float) -> MetricCube:
    """Largest descendant meeting the retained set that avoids the bad family.

    Level-order search down to depth floor(packing*density)+1; if nothing
    admissible shows up within that depth the packing hypothesis failed
    empirically and the error reports the observed counts.
    """
    mask = np.zeros(len(tree.cloud), dtype=bool)
    mask[np.asarray(e_prime, dtype=int)] = True
    depth_bound = int(packing_constant * density_constant) + 1
    frontier = [cube]
    examined = 0
    meets = 0
    for depth in range(depth_bound + 1):
        for c in frontier:
            if mask[c.members].any():
                meets += 1
                examined += 1
                if not bad(c):
                    return c
        frontier = [ch for c in frontier for ch in c.children]
        if not frontier:
            break
    raise NotFound(
        f"no good cube within depth {depth_bound} below {cube.key}: "
        f"{examined} cubes examined, {meets} met the retained set")
