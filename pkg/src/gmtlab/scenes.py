"""Domain oracles: scene descriptions backed by signed distance functions.

Every domain Ω ⊂ R^dim is an open set presented through a 1-Lipschitz signed
distance ``sd`` (negative inside, positive outside, zero on the boundary) plus
a bounding box that marks the window of interest.  Oracles also answer *box
queries*: given an axis-aligned box, decide whether it is entirely inside Ω,
entirely misses Ω, or certifiably touches the complement.  For the primitive
scenes those answers are exact (corner/interval extrema); generic CSG falls
back to Lipschitz probing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

# box classification labels
INSIDE = 0     # certified: box ⊆ Ω
OUTSIDE = 1    # certified: box ∩ Ω = ∅
BOUNDARY = 2   # certified: box ∩ Ω^c ≠ ∅ (box may still contain interior points)
UNKNOWN = 3    # no certificate within budget

_EXACT_TOL = 1e-9


def as_points(x) -> np.ndarray:
    """Normalize input to an (n, dim) float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    return a


def box_point_distance(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Euclidean distance from points (n,dim) to closed boxes (m,2-part)."""
    gap = np.maximum(lo - points, 0.0) + np.maximum(points - hi, 0.0)
    return np.sqrt((gap * gap).sum(axis=-1))


def box_point_depth(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Depth of points inside a box: min face distance, 0 outside."""
    inner = np.minimum(points - lo, hi - points)
    return np.maximum(inner.min(axis=-1), 0.0)


class SceneOracle:
    """Base domain oracle.  Subclasses fill in sd / classify_boxes / sampling."""

    scene_type = "abstract"
    dim: int
    tau_sd: float = _EXACT_TOL

    def __init__(self, dim, bounding_box):
        self.dim = int(dim)
        self.bounding_box = np.asarray(bounding_box, dtype=float).reshape(2, self.dim)

    # -- signed distance ---------------------------------------------------
    def sd(self, pts) -> np.ndarray:
        raise NotImplementedError

    def sd1(self, p) -> float:
        return float(self.sd(as_points(p))[0])

    def contains(self, pts) -> np.ndarray:
        return self.sd(pts) < 0.0

    # -- box queries --------------------------------------------------------
    def classify_boxes(self, lo, hi) -> np.ndarray:
        """Classify boxes (m,dim)+(m,dim) as INSIDE / OUTSIDE / BOUNDARY / UNKNOWN."""
        return _classify_by_probes(self, np.asarray(lo, float), np.asarray(hi, float))

    # -- boundary sampling ---------------------------------------------------
    def boundary_points(self, spacing: float) -> np.ndarray:
        """Near-uniform points on ∂Ω inside the bounding box, pitch ≈ spacing."""
        raise NotImplementedError

    # -- serialization --------------------------------------------------------
    def params(self) -> dict:
        raise NotImplementedError

    def to_scene(self) -> dict:
        return {"dimension": self.dim, "type": self.scene_type, "params": self.params()}


def _probe_fractions(g: int) -> np.ndarray:
    # grid including the corners, g points per axis
    return np.linspace(0.0, 1.0, g)


def _classify_by_probes(oracle: SceneOracle, lo: np.ndarray, hi: np.ndarray,
                        grids=(2, 3, 5, 9)) -> np.ndarray:
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    m, dim = lo.shape
    out = np.full(m, UNKNOWN, dtype=np.int8)
    active = np.arange(m)
    for g in grids:
        if active.size == 0:
            break
        fr = _probe_fractions(g)
        mesh = np.stack(np.meshgrid(*([fr] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        a_lo, a_hi = lo[active], hi[active]
        side = a_hi - a_lo
        pts = a_lo[:, None, :] + mesh[None, :, :] * side[:, None, :]
        vals = oracle.sd(pts.reshape(-1, dim)).reshape(len(active), -1)
        vmax = vals.max(axis=1)
        vmin = vals.min(axis=1)
        # cover radius of the probe grid inside each box
        cover = 0.5 * np.linalg.norm(side / max(g - 1, 1), axis=1)
        lab = np.full(len(active), UNKNOWN, dtype=np.int8)
        lab[vmax >= 0.0] = BOUNDARY
        lab[vmin - cover > 0.0] = OUTSIDE
        lab[(vmax + cover < 0.0) & (lab == UNKNOWN)] = INSIDE
        out[active] = lab
        active = active[lab == UNKNOWN]
    return out


# ---------------------------------------------------------------------------
# primitives


class HalfSpaceOracle(SceneOracle):
    """Ω = { x : n·x > offset } with |n| = 1."""

    scene_type = "halfspace"

    def __init__(self, normal, offset=0.0, box=None, dim=None):
        normal = np.asarray(normal, dtype=float)
        if dim is None:
            dim = normal.size
        normal = normal / np.linalg.norm(normal)
        if box is None:
            box = np.stack([-np.ones(dim), np.ones(dim)])
            box += normal * (offset + 1.0)
        super().__init__(dim, box)
        self.normal = normal
        self.offset = float(offset)

    def sd(self, pts):
        pts = np.asarray(pts, dtype=float)
        return self.offset - pts @ self.normal

    def _extrema(self, lo, hi):
        # min, max of n·x over each box
        n = self.normal
        a = lo * n
        b = hi * n
        mn = np.minimum(a, b).sum(axis=-1)
        mx = np.maximum(a, b).sum(axis=-1)
        return mn, mx

    def classify_boxes(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        mn, mx = self._extrema(lo, hi)
        sup_sd = self.offset - mn
        inf_sd = self.offset - mx
        out = np.full(lo.shape[0], BOUNDARY, dtype=np.int8)
        out[sup_sd < 0.0] = INSIDE
        out[inf_sd >= 0.0] = OUTSIDE
        return out

    def boundary_points(self, spacing):
        basis = _plane_basis(self.normal)
        anchor = self.normal * self.offset
        return _plane_grid(anchor, basis, self.bounding_box, spacing)

    def params(self):
        return {
            "normal": self.normal.tolist(),
            "offset": self.offset,
            "box": self.bounding_box.tolist(),
        }


class BallOracle(SceneOracle):
    """Ω = open ball B(center, radius)."""

    scene_type = "ball"

    def __init__(self, center, radius, box=None):
        center = np.asarray(center, dtype=float)
        if box is None:
            box = np.stack([center - 1.25 * radius, center + 1.25 * radius])
        super().__init__(center.size, box)
        self.center = center
        self.radius = float(radius)

    def sd(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.linalg.norm(pts - self.center, axis=-1) - self.radius

    def classify_boxes(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        c = self.center
        # farthest corner from the center (|x-c| is convex: max at a corner)
        far = np.maximum(np.abs(lo - c), np.abs(hi - c))
        sup_sd = np.linalg.norm(far, axis=-1) - self.radius
        inf_sd = box_point_distance(c[None, :], lo, hi) - self.radius
        out = np.full(lo.shape[0], BOUNDARY, dtype=np.int8)
        out[sup_sd < 0.0] = INSIDE
        out[inf_sd >= 0.0] = OUTSIDE
        return out

    def boundary_points(self, spacing):
        n = max(16, int(4.0 * math.pi * self.radius ** 2 / spacing ** 2))
        if self.dim != 3:
            raise NotImplementedError("ball sampler implemented for R^3")
        i = np.arange(n)
        z = 1.0 - 2.0 * (i + 0.5) / n
        phi = i * math.pi * (3.0 - math.sqrt(5.0))
        r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        return self.center + self.radius * pts

    def params(self):
        return {
            "center": self.center.tolist(),
            "radius": self.radius,
            "box": self.bounding_box.tolist(),
        }


class SlabOracle(SceneOracle):
    """Ω = { x : lo < x[axis] < hi }."""

    scene_type = "slab"

    def __init__(self, axis, lo, hi, box=None, dim=3):
        if box is None:
            box = np.stack([-np.ones(dim), np.ones(dim)])
            box[0, axis] = lo - (hi - lo)
            box[1, axis] = hi + (hi - lo)
        super().__init__(dim, box)
        self.axis = int(axis)
        self.lo = float(lo)
        self.hi = float(hi)

    def sd(self, pts):
        pts = np.asarray(pts, dtype=float)
        t = pts[..., self.axis]
        return np.maximum(self.lo - t, t - self.hi)

    def classify_boxes(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        a, b = lo[:, self.axis], hi[:, self.axis]
        sup_sd = np.maximum(self.lo - a, b - self.hi)
        mid = np.clip(0.5 * (self.lo + self.hi), a, b)
        inf_sd = np.maximum(self.lo - mid, mid - self.hi)
        out = np.full(lo.shape[0], BOUNDARY, dtype=np.int8)
        out[sup_sd < 0.0] = INSIDE
        out[inf_sd >= 0.0] = OUTSIDE
        return out

    def boundary_points(self, spacing):
        e = np.zeros(self.dim)
        e[self.axis] = 1.0
        basis = _plane_basis(e)
        pts = []
        for v in (self.lo, self.hi):
            pts.append(_plane_grid(e * v, basis, self.bounding_box, spacing))
        return np.concatenate(pts, axis=0)

    def params(self):
        return {
            "axis": self.axis,
            "lo": self.lo,
            "hi": self.hi,
            "box": self.bounding_box.tolist(),
        }


class LipschitzGraphOracle(SceneOracle):
    """Region above a piecewise-linear profile: Ω = { x : x[v_axis] > φ(x[u_axis]) }.

    The profile φ interpolates ``verts`` (strictly increasing in u) and extends
    flat beyond both ends, so the boundary is a genuine Lipschitz graph whose
    distance can be computed exactly from the segment list.
    """

    scene_type = "lipschitz_graph"

    def __init__(self, verts, u_axis=0, v_axis=None, box=None, dim=3):
        verts = np.asarray(verts, dtype=float).reshape(-1, 2)
        if v_axis is None:
            v_axis = dim - 1
        if box is None:
            u0, u1 = verts[0, 0], verts[-1, 0]
            vmax = verts[:, 1].max()
            vmin = verts[:, 1].min()
            box = np.stack([-np.ones(dim), np.ones(dim)])
            box[:, u_axis] = (u0, u1)
            box[:, v_axis] = (vmin - 0.1 * (u1 - u0), vmax + (u1 - u0))
        super().__init__(dim, box)
        if np.any(np.diff(verts[:, 0]) <= 0):
            raise ValueError("profile vertices must be strictly increasing in u")
        self.u_axis = int(u_axis)
        self.v_axis = int(v_axis)
        self.verts = verts
        # extended polyline for distance queries: flat rays beyond both ends
        span = verts[-1, 0] - verts[0, 0]
        big = 1e6 * max(span, 1.0)
        ext = np.vstack([
            [verts[0, 0] - big, verts[0, 1]],
            verts,
            [verts[-1, 0] + big, verts[-1, 1]],
        ])
        self._seg_a = ext[:-1]
        self._seg_b = ext[1:]
        slopes = np.diff(verts[:, 1]) / np.diff(verts[:, 0])
        self.lipschitz_constant = float(np.abs(slopes).max()) if len(slopes) else 0.0

    def profile(self, u):
        return np.interp(u, self.verts[:, 0], self.verts[:, 1])

    def _segment_distance(self, u, v):
        p = np.stack([u, v], axis=-1)[..., None, :]          # (..., 1, 2)
        a, b = self._seg_a, self._seg_b                      # (m, 2)
        ab = b - a
        t = ((p - a) * ab).sum(-1) / (ab * ab).sum(-1)
        t = np.clip(t, 0.0, 1.0)
        proj = a + t[..., None] * ab
        d = np.linalg.norm(p - proj, axis=-1)
        return d.min(axis=-1)

    def sd(self, pts):
        pts = np.asarray(pts, dtype=float)
        u = pts[..., self.u_axis]
        v = pts[..., self.v_axis]
        dist = self._segment_distance(u, v)
        return np.where(v > self.profile(u), -dist, dist)

    def _profile_range(self, ulo, uhi):
        """Exact (min, max) of φ over [ulo, uhi] for arrays of intervals."""
        vu = self.verts[:, 0]
        vv = self.verts[:, 1]
        plo = self.profile(ulo)
        phi_ = self.profile(uhi)
        mn = np.minimum(plo, phi_)
        mx = np.maximum(plo, phi_)
        # vertices interior to each interval can push the extrema past the endpoints
        i0 = np.searchsorted(vu, ulo, side="right")
        i1 = np.searchsorted(vu, uhi, side="left")
        has = i1 > i0
        if np.any(has):
            seg_min = np.array([vv[a:b].min() if b > a else np.inf for a, b in zip(i0, i1)])
            seg_max = np.array([vv[a:b].max() if b > a else -np.inf for a, b in zip(i0, i1)])
            mn = np.where(has, np.minimum(mn, seg_min), mn)
            mx = np.where(has, np.maximum(mx, seg_max), mx)
        return mn, mx

    def classify_boxes(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        pmin, pmax = self._profile_range(lo[:, self.u_axis], hi[:, self.u_axis])
        vlo = lo[:, self.v_axis]
        vhi = hi[:, self.v_axis]
        out = np.full(lo.shape[0], BOUNDARY, dtype=np.int8)
        out[vlo > pmax] = INSIDE
        out[vhi <= pmin] = OUTSIDE
        return out

    def boundary_points(self, spacing):
        pts = []
        blo, bhi = self.bounding_box
        w_axes = [i for i in range(self.dim) if i not in (self.u_axis, self.v_axis)]
        w_grids = [np.arange(blo[i] + spacing / 2, bhi[i], spacing) for i in w_axes]
        for a, b in zip(self._seg_a[1:-1], self._seg_b[1:-1]):
            seg_len = np.linalg.norm(b - a)
            k = max(1, int(round(seg_len / spacing)))
            t = (np.arange(k) + 0.5) / k
            uv = a + t[:, None] * (b - a)
            mesh = [uv[:, 0], uv[:, 1]]
            grids = np.meshgrid(np.arange(len(uv)), *w_grids, indexing="ij")
            n = grids[0].size
            out = np.zeros((n, self.dim))
            out[:, self.u_axis] = uv[grids[0].ravel(), 0]
            out[:, self.v_axis] = uv[grids[0].ravel(), 1]
            for ax, g in zip(w_axes, grids[1:]):
                out[:, ax] = g.ravel()
            pts.append(out)
        pts = np.concatenate(pts, axis=0)
        keep = np.all((pts >= blo - 1e-12) & (pts <= bhi + 1e-12), axis=1)
        return pts[keep]

    def params(self):
        return {
            "verts": self.verts.tolist(),
            "u_axis": self.u_axis,
            "v_axis": self.v_axis,
            "box": self.bounding_box.tolist(),
        }


def sawtooth_profile(slope, period, n_teeth, u0=0.0, v0=0.0):
    """Vertex list for a triangle-wave profile of given slope and period."""
    us = u0 + period / 2.0 * np.arange(2 * n_teeth + 1)
    vs = v0 + slope * period / 2.0 * (np.arange(2 * n_teeth + 1) % 2)
    return np.stack([us, vs], axis=1)


# ---------------------------------------------------------------------------
# CSG composition


class CSGOracle(SceneOracle):
    """Boolean combination of child oracles (min = union, max = intersection)."""

    scene_type = "csg"

    def __init__(self, op, children, box=None):
        if op not in ("union", "intersect", "complement"):
            raise ValueError(f"unknown CSG op {op!r}")
        if op == "complement" and len(children) != 1:
            raise ValueError("complement takes exactly one child")
        dim = children[0].dim
        if box is None:
            boxes = np.stack([c.bounding_box for c in children])
            box = np.stack([boxes[:, 0].min(axis=0), boxes[:, 1].max(axis=0)])
        super().__init__(dim, box)
        self.op = op
        self.children = list(children)
        self.tau_sd = max(c.tau_sd for c in children)
        if op in ("union", "complement"):
            # |sd| is a lower bound for the true clearance on one side
            self.tau_sd = max(self.tau_sd, 1e-7)

    def sd(self, pts):
        vals = np.stack([c.sd(pts) for c in self.children])
        if self.op == "union":
            return vals.min(axis=0)
        if self.op == "intersect":
            return vals.max(axis=0)
        return -vals[0]

    def classify_boxes(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        labs = np.stack([c.classify_boxes(lo, hi) for c in self.children])
        m = lo.shape[0]
        if self.op == "intersect":
            out = np.full(m, UNKNOWN, dtype=np.int8)
            out[np.any((labs == BOUNDARY) | (labs == OUTSIDE), axis=0)] = BOUNDARY
            out[np.any(labs == OUTSIDE, axis=0)] = OUTSIDE
            out[np.all(labs == INSIDE, axis=0)] = INSIDE
            und = out == UNKNOWN
            if np.any(und):
                out[und] = _classify_by_probes(self, lo[und], hi[und])
            return out
        if self.op == "union":
            out = np.full(m, UNKNOWN, dtype=np.int8)
            out[np.all(labs == OUTSIDE, axis=0)] = OUTSIDE
            out[np.any(labs == INSIDE, axis=0)] = INSIDE
            und = out == UNKNOWN
            if np.any(und):
                out[und] = _classify_by_probes(self, lo[und], hi[und])
            return out
        # complement: only probe-based certificates are safe at the boundary
        return _classify_by_probes(self, lo, hi)

    def boundary_points(self, spacing):
        pts = []
        for c in self.children:
            p = c.boundary_points(spacing)
            keep = np.abs(self.sd(p)) <= max(self.tau_sd, 1e-9) + 1e-12
            pts.append(p[keep])
        if not pts:
            return np.zeros((0, self.dim))
        return np.concatenate(pts, axis=0)

    def params(self):
        return {
            "op": self.op,
            "children": [c.to_scene() for c in self.children],
            "box": self.bounding_box.tolist(),
        }


# ---------------------------------------------------------------------------
# finite unions of axis-aligned boxes with exact boundary fragments


@dataclass(frozen=True)
class FaceFragments:
    """Exact free boundary of a box union, stored as degenerate boxes."""

    lo: np.ndarray          # (m, dim)
    hi: np.ndarray          # (m, dim)
    axis: np.ndarray        # (m,) flat axis of each fragment
    area: np.ndarray        # (m,)

    def __len__(self):
        return len(self.axis)

    def centers(self):
        return 0.5 * (self.lo + self.hi)

    def radii(self):
        return 0.5 * np.linalg.norm(self.hi - self.lo, axis=1)


def _subtract_intervals(lo, hi, cuts):
    """[lo,hi] minus a union of open intervals; returns kept [a,b] pieces."""
    pieces = []
    cur = lo
    for a, b in sorted(cuts):
        a = max(a, lo)
        b = min(b, hi)
        if b <= cur:
            continue
        if a > cur:
            pieces.append((cur, min(a, hi)))
        cur = max(cur, b)
        if cur >= hi:
            break
    if cur < hi:
        pieces.append((cur, hi))
    return [(a, b) for a, b in pieces if b > a]


def _face_free_rects(face_lo, face_hi, occluders):
    """Decompose face \\ ∪ open occluder rects into closed rectangles.

    face_lo/face_hi are length-k vectors (k = 1 or 2 in-plane coordinates);
    occluders is a list of (lo, hi) pairs of the same length.
    """
    k = len(face_lo)
    if k == 0:
        return [] if occluders else [((), ())]
    if k == 1:
        cuts = [(o[0][0], o[1][0]) for o in occluders]
        return [((a,), (b,)) for a, b in _subtract_intervals(face_lo[0], face_hi[0], cuts)]
    # k == 2: sweep along the first in-plane axis
    xs = {face_lo[0], face_hi[0]}
    for o in occluders:
        xs.add(min(max(o[0][0], face_lo[0]), face_hi[0]))
        xs.add(min(max(o[1][0], face_lo[0]), face_hi[0]))
    xs = sorted(xs)
    rects = []
    for x0, x1 in zip(xs[:-1], xs[1:]):
        if x1 <= x0:
            continue
        cuts = [(o[0][1], o[1][1]) for o in occluders if o[0][0] <= x0 and o[1][0] >= x1]
        for a, b in _subtract_intervals(face_lo[1], face_hi[1], cuts):
            rects.append(((x0, a), (x1, b)))
    return rects


def build_face_fragments(boxes: np.ndarray, split_target: float | None = None) -> FaceFragments:
    """Exact ∂(∪ boxes) as a list of axis-aligned rectangles.

    boxes: (n, 2, dim).  A face point is on the union boundary iff it is not
    interior to any other box; abutting and overlapping boxes occlude each
    other's faces, which is what keeps internal seams out of the result.
    """
    boxes = np.asarray(boxes, dtype=float)
    n, _, dim = boxes.shape
    if dim > 3:
        raise NotImplementedError("fragments implemented for dim <= 3")
    all_lo = boxes[:, 0]
    all_hi = boxes[:, 1]
    frag_lo, frag_hi, frag_axis = [], [], []
    for i in range(n):
        blo, bhi = boxes[i]
        # only boxes touching box i can occlude any of its faces
        near = np.nonzero(np.all((all_lo <= bhi) & (all_hi >= blo), axis=1))[0]
        near = near[near != i]
        for axis in range(dim):
            oth = [a for a in range(dim) if a != axis]
            for side, v in ((0, blo[axis]), (1, bhi[axis])):
                occl = []
                covered = False
                for j in near:
                    jlo, jhi = boxes[j]
                    straddles = jlo[axis] < v < jhi[axis]
                    abuts = (jlo[axis] == v) if side == 1 else (jhi[axis] == v)
                    if not (straddles or abuts):
                        continue
                    clo = np.maximum(jlo[oth], blo[oth])
                    chi = np.minimum(jhi[oth], bhi[oth])
                    if np.all(chi > clo - 1e-300):
                        if np.all(clo <= blo[oth]) and np.all(chi >= bhi[oth]):
                            covered = True
                            break
                        occl.append((clo, chi))
                if covered:
                    continue
                for rlo, rhi in _face_free_rects(blo[oth], bhi[oth], occl):
                    flo = np.empty(dim)
                    fhi = np.empty(dim)
                    flo[axis] = fhi[axis] = v
                    flo[oth] = rlo
                    fhi[oth] = rhi
                    frag_lo.append(flo)
                    frag_hi.append(fhi)
                    frag_axis.append(axis)
    if not frag_lo:
        lo = np.zeros((0, dim))
        return FaceFragments(lo, lo.copy(), np.zeros(0, int), np.zeros(0))
    lo = np.array(frag_lo)
    hi = np.array(frag_hi)
    ax = np.array(frag_axis)
    if split_target and split_target > 0:
        lo, hi, ax = _split_fragments(lo, hi, ax, split_target)
    ext = hi - lo
    area = np.where(ext == 0.0, 1.0, ext).prod(axis=1)
    return FaceFragments(lo, hi, ax, area)


def _split_fragments(lo, hi, ax, target):
    out_lo, out_hi, out_ax = [], [], []
    for flo, fhi, a in zip(lo, hi, ax):
        ext = fhi - flo
        counts = np.maximum(1, np.ceil(ext / target).astype(int))
        ranges = [np.linspace(flo[k], fhi[k], counts[k] + 1) for k in range(len(flo))]
        idx = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"),
                       axis=-1).reshape(-1, len(flo))
        for ii in idx:
            out_lo.append([ranges[k][ii[k]] for k in range(len(flo))])
            out_hi.append([ranges[k][ii[k] + 1] for k in range(len(flo))])
            out_ax.append(a)
    return np.array(out_lo), np.array(out_hi), np.array(out_ax)


class BoxUnionOracle(SceneOracle):
    """Ω = interior of a finite union of closed axis-aligned boxes.

    The boundary is precomputed exactly as face fragments, so sd is the true
    signed distance (sign from closed-box membership, magnitude from the
    nearest fragment, certified through a KD-tree with bounded fragment radii).
    """

    scene_type = "cube_union"

    def __init__(self, boxes, box=None, split_target=None):
        boxes = np.asarray(boxes, dtype=float)
        if boxes.ndim != 3 or boxes.shape[1] != 2:
            raise ValueError("boxes must have shape (n, 2, dim)")
        boxes = np.unique(boxes.reshape(len(boxes), -1), axis=0).reshape(-1, 2, boxes.shape[2])
        dim = boxes.shape[2]
        if box is None:
            pad = 0.25 * (boxes[:, 1] - boxes[:, 0]).max()
            box = np.stack([boxes[:, 0].min(axis=0) - pad, boxes[:, 1].max(axis=0) + pad])
        super().__init__(dim, box)
        self.boxes = boxes
        if split_target is None:
            sides = (boxes[:, 1] - boxes[:, 0]).ravel()
            split_target = 2.0 * float(np.median(sides))
        self.fragments = build_face_fragments(boxes, split_target=split_target)
        self._ftree = cKDTree(self.fragments.centers()) if len(self.fragments) else None
        self._frad = self.fragments.radii()
        self._frad_max = float(self._frad.max()) if len(self.fragments) else 0.0

    # -- membership --------------------------------------------------------
    def member(self, pts):
        pts = as_points(pts)
        inside = np.zeros(len(pts), dtype=bool)
        todo = np.arange(len(pts))
        for blo, bhi in self.boxes:
            if todo.size == 0:
                break
            hit = np.all((pts[todo] >= blo) & (pts[todo] <= bhi), axis=1)
            inside[todo[hit]] = True
            todo = todo[~hit]
        return inside

    def boundary_distance(self, pts):
        pts = as_points(pts)
        if self._ftree is None:
            return np.full(len(pts), np.inf)
        out = np.empty(len(pts))
        k = min(16, len(self.fragments))
        todo = np.arange(len(pts))
        while todo.size:
            dc, ic = self._ftree.query(pts[todo], k=k)
            if k == 1:
                dc = dc[:, None]
                ic = ic[:, None]
            cand = box_point_distance(pts[todo][:, None, :],
                                      self.fragments.lo[ic], self.fragments.hi[ic])
            best = cand.min(axis=1)
            if k >= len(self.fragments):
                out[todo] = best
                break
            certified = best <= dc[:, -1] - self._frad_max
            out[todo[certified]] = best[certified]
            todo = todo[~certified]
            k = min(4 * k, len(self.fragments))
        return out

    def sd(self, pts):
        shape = np.asarray(pts, dtype=float).shape[:-1]
        p = as_points(pts)
        d = self.boundary_distance(p)
        s = np.where(self.member(p), -1.0, 1.0)
        return (s * d).reshape(shape)

    def classify_boxes(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        m = lo.shape[0]
        touches = np.zeros(m, dtype=bool)
        if self._ftree is not None:
            centers = 0.5 * (lo + hi)
            box_rad = 0.5 * np.linalg.norm(hi - lo, axis=1)
            k = min(32, len(self.fragments))
            todo = np.arange(m)
            while todo.size:
                dc, ic = self._ftree.query(centers[todo], k=k)
                if k == 1:
                    dc, ic = dc[:, None], ic[:, None]
                ov = np.all((self.fragments.lo[ic] <= hi[todo][:, None, :]) &
                            (self.fragments.hi[ic] >= lo[todo][:, None, :]), axis=2)
                hit = np.any(ov, axis=1)
                touches[todo[hit]] = True
                if k >= len(self.fragments):
                    break
                # fragments beyond the kth can still reach boxes whose
                # circumradius + max fragment radius exceeds the kth distance
                settled = hit | (dc[:, -1] > box_rad[todo] + self._frad_max)
                todo = todo[~settled]
                k = min(4 * k, len(self.fragments))
        inside = self.member(0.5 * (lo + hi))
        return np.where(touches, BOUNDARY,
                        np.where(inside, INSIDE, OUTSIDE)).astype(np.int8)

    def boundary_points(self, spacing):
        pts = []
        f = self.fragments
        for flo, fhi in zip(f.lo, f.hi):
            ext = fhi - flo
            counts = np.maximum(1, np.round(ext / spacing).astype(int))
            grids = [flo[k] + (np.arange(counts[k]) + 0.5) * ext[k] / counts[k]
                     if ext[k] > 0 else np.array([flo[k]]) for k in range(self.dim)]
            mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, self.dim)
            pts.append(mesh)
        if not pts:
            return np.zeros((0, self.dim))
        return np.concatenate(pts, axis=0)

    def boundary_area(self):
        return float(self.fragments.area.sum())

    def params(self):
        return {"boxes": self.boxes.tolist(), "box": self.bounding_box.tolist()}


# ---------------------------------------------------------------------------
# plane helpers


def _plane_basis(normal):
    normal = np.asarray(normal, dtype=float)
    dim = normal.size
    basis = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        v = e - (e @ normal) * normal
        for b in basis:
            v -= (v @ b) * b
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            basis.append(v / nv)
        if len(basis) == dim - 1:
            break
    return np.stack(basis)


def _plane_grid(anchor, basis, bbox, spacing):
    blo, bhi = bbox
    # project the bounding box corners onto the plane coordinates
    dim = anchor.size
    corners = np.stack(np.meshgrid(*[(blo[i], bhi[i]) for i in range(dim)],
                                   indexing="ij"), axis=-1).reshape(-1, dim)
    uv = (corners - anchor) @ basis.T
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    grids = [np.arange(lo[k] + spacing / 2, hi[k], spacing) for k in range(len(basis))]
    if any(len(g) == 0 for g in grids):
        return np.zeros((0, dim))
    mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(basis))
    pts = anchor + mesh @ basis
    keep = np.all((pts >= blo - 1e-9) & (pts <= bhi + 1e-9), axis=1)
    return pts[keep]


# ---------------------------------------------------------------------------
# scene (de)serialization


def load_scene(source) -> SceneOracle:
    """Build an oracle from a scene dict, JSON string, or file path."""
    if isinstance(source, (str, Path)):
        p = Path(source)
        data = json.loads(p.read_text()) if p.exists() else json.loads(str(source))
    else:
        data = source
    dim = int(data["dimension"])
    typ = data["type"]
    prm = data.get("params", {})
    box = prm.get("box")
    if typ == "halfspace":
        return HalfSpaceOracle(prm["normal"], prm.get("offset", 0.0), box=box, dim=dim)
    if typ == "ball":
        return BallOracle(prm["center"], prm["radius"], box=box)
    if typ == "slab":
        return SlabOracle(prm["axis"], prm["lo"], prm["hi"], box=box, dim=dim)
    if typ == "lipschitz_graph":
        return LipschitzGraphOracle(prm["verts"], prm.get("u_axis", 0),
                                    prm.get("v_axis"), box=box, dim=dim)
    if typ == "cube_union":
        return BoxUnionOracle(prm["boxes"], box=box)
    if typ == "csg":
        children = [load_scene(c) for c in prm["children"]]
        return CSGOracle(prm["op"], children, box=box)
    if typ == "cantor_complement":
        from . import counterexample
        return counterexample.oracle_from_params(prm, dim=dim)
    raise ValueError(f"unknown scene type {typ!r}")


def save_scene(oracle: SceneOracle, path) -> None:
    Path(path).write_text(json.dumps(oracle.to_scene(), indent=2, sort_keys=True) + "\n")
