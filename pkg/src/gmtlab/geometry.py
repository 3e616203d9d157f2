"""Boundary point clouds and quantitative geometry certificates.

This module owns the discrete side of the toolkit: finite clouds standing in
for a boundary patch (with an attached surface-measure proxy), greedy nets and
covers, corkscrew-ball search, uniformity (cigar-curve) certificates, and the
Ahlfors-regularity / Hausdorff-content estimators used by the checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from . import scenes


class NoWitness(Exception):
    """No corkscrew ball of admissible radius was found."""


class NoPath(Exception):
    """The endpoints are not connected at the working resolution."""


# ---------------------------------------------------------------------------
# boundary clouds


@dataclass(frozen=True)
class BoundaryCloud:
    """Finite h-dense sample of a boundary patch with per-point weights.

    weights default to h^d (d = boundary dimension), the empirical proxy for
    d-dimensional surface measure: mu(A) = sum of weights of cloud points in A.
    """

    points: np.ndarray            # (n, dim)
    spacing: float                # h
    weights: np.ndarray           # (n,)

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 0:
            w = np.full(len(self.points), float(w))
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def diameter(self):
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def tree(self) -> cKDTree:
        return cKDTree(self.points)


def make_cloud(points, spacing, surface_dim=None, weights=None) -> BoundaryCloud:
    points = np.asarray(points, dtype=float)
    if weights is None:
        if surface_dim is None:
            surface_dim = points.shape[1] - 1
        weights = float(spacing) ** surface_dim
    return BoundaryCloud(points, float(spacing), weights)


def cloud_from_oracle(oracle: scenes.SceneOracle, spacing: float,
                      surface_dim=None) -> BoundaryCloud:
    pts = oracle.boundary_points(spacing)
    return make_cloud(pts, spacing, surface_dim=surface_dim)


def save_cloud(cloud: BoundaryCloud, path) -> None:
    dim = cloud.dim
    header = ",".join(f"x{i}" for i in range(dim)) + ",weight"
    data = np.column_stack([cloud.points, cloud.weights])
    rows = [header]
    rows += [",".join(format(v, ".17g") for v in row) for row in data]
    rows.append(f"# spacing={cloud.spacing:.17g}")
    Path(path).write_text("\n".join(rows) + "\n")


def load_cloud(path) -> BoundaryCloud:
    lines = Path(path).read_text().strip().splitlines()
    spacing = None
    if lines[-1].startswith("# spacing="):
        spacing = float(lines[-1].split("=", 1)[1])
        lines = lines[:-1]
    body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    points, weights = body[:, :-1], body[:, -1]
    if spacing is None:
        # fall back to the nearest-neighbor scale
        d, _ = cKDTree(points).query(points, k=2)
        spacing = float(np.median(d[:, 1]))
    return BoundaryCloud(points, spacing, weights)


# ---------------------------------------------------------------------------
# greedy nets and enclosing balls


def lex_order(points: np.ndarray) -> np.ndarray:
    """Indices sorting points lexicographically (x0 first)."""
    return np.lexsort(points.T[::-1])


def farthest_point_net(points: np.ndarray, radius: float,
                       seed_idx=None) -> np.ndarray:
    """Greedy farthest-point net: centers pairwise > radius apart, covering
    every point within radius.  Deterministic: starts at the lexicographically
    smallest point, distance ties broken by lexicographic rank.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=int)
    rank = np.empty(n, dtype=int)
    rank[lex_order(points)] = np.arange(n)
    if seed_idx is None or len(seed_idx) == 0:
        first = int(np.argmin(rank))
        chosen = [first]
        dist = np.linalg.norm(points - points[first], axis=1)
    else:
        chosen = list(map(int, seed_idx))
        dist = np.full(n, np.inf)
        for c in chosen:
            dist = np.minimum(dist, np.linalg.norm(points - points[c], axis=1))
    while True:
        dmax = dist.max()
        if dmax <= radius:
            break
        cand = np.nonzero(dist >= dmax - 1e-12 * max(radius, dmax))[0]
        nxt = int(cand[np.argmin(rank[cand])])
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.asarray(chosen, dtype=int)


def enclosing_ball(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Small enclosing ball: Ritter's two-pass start plus shrink iterations."""
    points = np.asarray(points, dtype=float)
    p0 = points[lex_order(points)[0]]
    q = points[np.argmax(np.linalg.norm(points - p0, axis=1))]
    p = points[np.argmax(np.linalg.norm(points - q, axis=1))]
    c = 0.5 * (p + q)
    r = 0.5 * float(np.linalg.norm(p - q))
    for _ in range(2):
        d = np.linalg.norm(points - c, axis=1)
        i = int(np.argmax(d))
        if d[i] > r + 1e-15:
            r2 = 0.5 * (r + d[i])
            c = c + (points[i] - c) * ((d[i] - r2) / d[i])
            r = r2
    # shrink: walk the center toward the farthest point with decaying steps
    for step in 2.0 ** -np.arange(1, 30):
        d = np.linalg.norm(points - c, axis=1)
        i = int(np.argmax(d))
        trial = c + step * (points[i] - c)
        if np.linalg.norm(points - trial, axis=1).max() < d[i]:
            c = trial
    r = float(np.linalg.norm(points - c, axis=1).max())
    return c, r


# ---------------------------------------------------------------------------
# Hausdorff content and Ahlfors regularity


def hausdorff_content(points, s: float, scale: float):
    """Greedy upper bound for the s-content at scale delta.

    Covers the point set by balls of radii <= scale built from farthest-point
    nets at dyadic radii (balls shrunk to their assigned points), plus the
    single enclosing ball when admissible; returns (estimate, cover) where the
    cover is a list of (center, radius) pairs realizing the estimate.
    """
    spacing = None
    if isinstance(points, BoundaryCloud):
        spacing = points.spacing
        points = points.points
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    if len(points) == 0:
        return 0.0, []
    if scale <= 0:
        raise ValueError("scale must be positive")
    best = math.inf
    best_cover = None
    # The sample stands in for a continuum patch: net balls are shrunk to
    # their assigned points and then inflated by half the sample spacing so
    # they cover the patch, not just the sample (a finite sample alone has
    # zero content in the fine limit), and the radius ladder stops at the
    # spacing since finer nets only repeat the inflation floor.  A cloud's
    # declared spacing wins over the inferred one so that thinning a cloud at
    # fixed resolution can only lower the estimate.
    if spacing is None and len(points) > 1:
        nn = cKDTree(points).query(points, k=2)[0][:, 1]
        spacing = float(np.median(nn))
    if spacing is not None and len(points) > 1:
        inflate = 0.5 * spacing
        floor_r = max(2.0 * inflate, scale * 2.0 ** -20)
    else:
        inflate = 0.0
        floor_r = scale * 2.0 ** -20
    r = float(scale)
    while r >= floor_r:
        idx = farthest_point_net(points, r)
        centers = points[idx]
        # shrink each ball to the points it actually covers
        d = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2) \
            if len(points) * len(idx) <= 4_000_000 else None
        if d is None:
            assign_d, assign_i = cKDTree(centers).query(points)
        else:
            assign_i = np.argmin(d, axis=1)
            assign_d = d[np.arange(len(points)), assign_i]
        radii = np.zeros(len(idx))
        np.maximum.at(radii, assign_i, assign_d)
        radii = np.minimum(radii + inflate, float(scale))
        total = float(np.sum(radii ** s))
        if total < best:
            best = total
            best_cover = [(centers[k].copy(), float(radii[k])) for k in range(len(idx))]
        r /= 2.0
    c, rad = enclosing_ball(points)
    if rad <= scale and rad ** s < best:
        best = rad ** s
        best_cover = [(c, rad)]
    return best, best_cover


@dataclass(frozen=True)
class AdrReport:
    s: float
    scales: tuple
    lower: float            # min of proxy(B(x,r))/r^s over samples
    upper: float            # max of the same ratio
    lower_floor: float
    per_scale: tuple        # ((r, min_ratio, max_ratio), ...)

    @property
    def lower_ok(self):
        return self.lower >= self.lower_floor


def adr_check(cloud: BoundaryCloud, s: float, scales,
              lower_floor: float = 0.05, center_budget: int = 512) -> AdrReport:
    """Empirical Ahlfors-regularity ratios h^s * #(cloud in B(x,r)) / r^s.

    Centers are cloud points (deterministic lexicographic subsample up to
    center_budget); reports the extreme ratios per scale and overall, and
    whether the lower bound clears the configured floor.
    """
    pts = cloud.points
    tree = cloud.tree()
    order = lex_order(pts)
    if len(order) > center_budget:
        sel = order[np.linspace(0, len(order) - 1, center_budget).astype(int)]
    else:
        sel = order
    centers = pts[sel]
    h = cloud.spacing
    rows = []
    lo_all, hi_all = math.inf, -math.inf
    for r in scales:
        counts = tree.query_ball_point(centers, float(r), return_length=True)
        ratios = (h ** s) * counts / float(r) ** s
        lo, hi = float(ratios.min()), float(ratios.max())
        rows.append((float(r), lo, hi))
        lo_all, hi_all = min(lo_all, lo), max(hi_all, hi)
    return AdrReport(s=float(s), scales=tuple(float(r) for r in scales),
                     lower=lo_all, upper=hi_all, lower_floor=lower_floor,
                     per_scale=tuple(rows))


# ---------------------------------------------------------------------------
# corkscrew balls


@dataclass(frozen=True)
class BallSpec:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))


@dataclass(frozen=True)
class CorkscrewCertificate:
    x: np.ndarray               # boundary query point
    r: float                    # query scale
    side: str                   # "interior" | "exterior"
    witness: BallSpec
    constant: float             # r / witness.radius
    probes: int                 # signed-distance evaluations spent
    verified: bool              # post-hoc ball probing at pitch r/(16C) clean


def _clearance(oracle, pts, side):
    sd = oracle.sd(pts)
    return -sd if side == "interior" else sd


def corkscrew_point(oracle: scenes.SceneOracle, x, r: float,
                    side: str = "interior",
                    probe_budget: int = 8192) -> CorkscrewCertificate:
    """Search B(x, r) for the largest ball on the requested side of the domain.

    Deterministic coarse-to-fine search: 8-per-axis grid over the bounding cube
    of B(x,r), two refinement rounds around the best 8 cells, then a local
    simplex polish.  The certified radius at a candidate z is
    min(clearance(z), r - |z - x|), which is exact for a 1-Lipschitz signed
    distance.  Raises NoWitness when nothing of radius >= r/64 is found.
    """
    if side not in ("interior", "exterior"):
        raise ValueError("side must be 'interior' or 'exterior'")
    x = np.asarray(x, dtype=float)
    dim = oracle.dim
    probes = 0

    def score(pts):
        nonlocal probes
        pts = np.atleast_2d(pts)
        probes += len(pts)
        clear = _clearance(oracle, pts, side)
        room = r - np.linalg.norm(pts - x, axis=1)
        return np.minimum(clear, room)

    per_axis = 8
    while per_axis ** dim > max(probe_budget // 4, 64) and per_axis > 2:
        per_axis -= 2
    cell = 2.0 * r / per_axis
    axes = [x[k] - r + cell * (np.arange(per_axis) + 0.5) for k in range(dim)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    vals = score(grid)
    best_z = grid[int(np.argmax(vals))]
    best_v = float(vals.max())

    top = grid[np.argsort(vals)[::-1][:8]]
    size = cell
    for _ in range(2):
        size /= per_axis
        sub_off = np.stack(np.meshgrid(
            *[(np.arange(per_axis) + 0.5) * size for _ in range(dim)],
            indexing="ij"), axis=-1).reshape(-1, dim)
        cand = (top[:, None, :] - per_axis * size / 2 + sub_off[None, :, :]).reshape(-1, dim)
        vals = score(cand)
        order = np.argsort(vals)[::-1]
        if vals[order[0]] > best_v:
            best_v = float(vals[order[0]])
            best_z = cand[order[0]]
        top = cand[order[:8]]

    if probes < probe_budget:
        res = minimize(lambda z: -score(z[None, :])[0], best_z,
                       method="Nelder-Mead",
                       options={"maxfev": max(probe_budget - probes, 32),
                                "xatol": 1e-12 * r, "fatol": 1e-12 * r})
        if -res.fun > best_v:
            best_v = float(-res.fun)
            best_z = np.asarray(res.x)

    if best_v < r / 64:
        raise NoWitness(
            f"no {side} ball of radius >= r/64 inside B(x, {r:g}) "
            f"(best certified radius {best_v:.3g})")

    rho = best_v
    witness = BallSpec(best_z, rho)
    verified = _verify_witness(oracle, witness, x, r, side, pitch=rho / 16.0)
    return CorkscrewCertificate(x=x, r=float(r), side=side, witness=witness,
                                constant=float(r / rho), probes=probes,
                                verified=verified)


def _verify_witness(oracle, witness: BallSpec, x, r, side, pitch):
    z, rho = witness.center, witness.radius
    dim = z.size
    n = min(int(math.ceil(2 * rho / pitch)) + 1, 25)
    axes = [np.linspace(z[k] - rho, z[k] + rho, n) for k in range(dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    pts = pts[np.linalg.norm(pts - z, axis=1) <= rho]
    inside_query = np.all(np.linalg.norm(pts - x, axis=1) <= r + 1e-12)
    clear = _clearance(oracle, pts, side)
    return bool(inside_query and np.all(clear > -oracle.tau_sd))


# ---------------------------------------------------------------------------
# uniformity (cigar curve) certificates


@dataclass(frozen=True)
class UniformityCertificate:
    polyline: np.ndarray        # (m, dim) vertices, first = x, last = y
    length: float
    straight: float             # |x - y|
    length_ratio: float
    clearance_ratio: float      # max over samples of dist(z,{x,y})/dist(z,boundary)
    constant: float             # max(length_ratio, clearance_ratio, 1)
    level_range: tuple


def _polyline_constant(oracle, poly, samples_per_seg=8):
    x, y = poly[0], poly[-1]
    segs = np.diff(poly, axis=0)
    seg_len = np.linalg.norm(segs, axis=1)
    length = float(seg_len.sum())
    straight = float(np.linalg.norm(y - x))
    t = (np.arange(samples_per_seg) + 0.5) / samples_per_seg
    pts = (poly[:-1, None, :] + t[None, :, None] * segs[:, None, :]).reshape(-1, poly.shape[1])
    pts = np.vstack([poly, pts])
    clear = np.maximum(-oracle.sd(pts), 1e-300)
    dend = np.minimum(np.linalg.norm(pts - x, axis=1), np.linalg.norm(pts - y, axis=1))
    ratio = float(np.max(dend / clear))
    return length, straight, ratio


def _shortcut(oracle, poly, step, budget):
    """Greedy smoothing: replace vertex runs by straight segments that keep
    a strictly interior, well-cleared corridor."""
    poly = [np.asarray(p, float) for p in poly]
    used = 0
    i = 0
    out = [poly[0]]
    while i < len(poly) - 1 and used < budget:
        j = len(poly) - 1
        while j > i + 1:
            a, b = poly[i], poly[j]
            n = max(2, int(np.linalg.norm(b - a) / step) + 1)
            t = np.linspace(0.0, 1.0, n)[:, None]
            pts = a + t * (b - a)
            used += n
            if np.all(oracle.sd(pts) < -step / 4):
                break
            j -= 1
        out.append(poly[j])
        i = j
    if i < len(poly) - 1:
        out.extend(poly[i + 1:])
    return np.asarray(out)


def uniformity_certificate(oracle: scenes.SceneOracle, x, y,
                           path_budget: int = 200_000,
                           level_range=None) -> UniformityCertificate:
    """Certify a cigar curve from x to y through the domain.

    The curve is found as a shortest path in the Whitney adjacency graph of
    the domain (cube centers), then smoothed by straight-line shortcuts; the
    reported constant is the max of length/|x-y| and the worst ratio
    dist(z, {x,y}) / dist(z, boundary) along the sampled curve.
    """
    from . import whitney

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.linalg.norm(x - y) < 1e-15:
        poly = np.stack([x, y])
        return UniformityCertificate(poly, 0.0, 0.0, 1.0, 0.0, 1.0, (0, 0))

    cx, cy = -oracle.sd1(x), -oracle.sd1(y)
    if min(cx, cy) <= oracle.tau_sd:
        raise NoPath("endpoints must be interior points")

    box = oracle.bounding_box.copy()
    pad = max(cx, cy)
    box[0] = np.minimum(box[0], np.minimum(x, y) - pad)
    box[1] = np.maximum(box[1], np.maximum(x, y) + pad)
    if level_range is None:
        span = float((box[1] - box[0]).max())
        n_max = int(math.ceil(math.log2(span))) - 1
        fine = min(cx, cy, float(np.linalg.norm(x - y))) / (8.0 * math.sqrt(oracle.dim))
        n_min = max(int(math.floor(math.log2(fine))), n_max - 14)
        level_range = (n_min, n_max)

    W = whitney.whitney_decompose(oracle, level_range, box=box)
    G = whitney.whitney_graph(W)
    qx = W.locate(x)
    qy = W.locate(y)
    if qx is None or qy is None:
        raise NoPath("no Whitney cube contains an endpoint at this resolution")
    path, _ = whitney.whitney_path(G, qx, qy)
    centers = [q.center for q in path]
    poly = np.vstack([x[None, :], np.asarray(centers), y[None, :]])
    step = 2.0 ** level_range[0]
    poly = _shortcut(oracle, poly, step, path_budget)
    length, straight, ratio = _polyline_constant(oracle, poly)
    return UniformityCertificate(
        polyline=poly, length=length, straight=straight,
        length_ratio=length / straight, clearance_ratio=ratio,
        constant=max(length / straight, ratio, 1.0),
        level_range=tuple(level_range))
