"""Corner self-similar sets, their grid thickenings, and half-space domains
with copies of those thickenings removed from a window of interior cubes.

The generator places scaled copies of a cube at a subset of its corners; the
scale rho is tied to the prescribed content exponent s by N = (1/rho)^s.  A
thickening at width t is the union of closed grid cells of side t whose
interiors meet the limit set, which keeps every cell count and surface area
an exactly computable integer/dyadic quantity.  Removing affine copies of
these thickenings from the standard interior cubes of the upper half-space
produces a domain whose boundary mixes a flat floor with fractal pieces at
every scale of the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import geometry, scenes
from .geometry import BoundaryCloud
from .scenes import BOUNDARY, INSIDE, OUTSIDE, SceneOracle


class BudgetExceeded(Exception):
    """Construction would require more cells/cubes than the configured cap."""


def _default_generator(ambient: int) -> np.ndarray:
    g = np.stack(np.meshgrid(*([np.array([0, 1])] * ambient),
                             indexing="ij"), axis=-1).reshape(-1, ambient)
    return g[np.lexsort(g.T[::-1])]


@dataclass(frozen=True)
class CantorParams:
    """Corner construction in R^(d+1) with content exponent s in (d-1, d)."""

    d: int
    s: float
    depth: int = 4
    budget: int = 1_000_000
    generator: np.ndarray | None = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError("d must be an integer >= 2")
        if not (self.d - 1 < self.s < self.d):
            raise ValueError("s must lie strictly between d-1 and d")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        gen = self.generator
        if gen is None:
            gen = _default_generator(self.ambient)
        gen = np.asarray(gen, dtype=np.int64)
        if gen.ndim != 2 or gen.shape[1] != self.ambient:
            raise ValueError("generator must have shape (N, d+1)")
        if not np.all((gen == 0) | (gen == 1)):
            raise ValueError("generator rows must be corners in {0,1}^(d+1)")
        if len(np.unique(gen, axis=0)) != len(gen):
            raise ValueError("generator corners must be distinct")
        if len(gen) == 1:
            raise ValueError("a single-corner generator has no content")
        object.__setattr__(self, "generator", gen)
        # dimension identity: N = (1/rho)^s must hold to 1e-12
        if abs(math.log(self.N) / math.log(1.0 / self.rho) - self.s) > 1e-12:
            raise ValueError("N, rho, s violate the dimension identity")
        if not (0.0 < self.rho < 0.5):
            raise ValueError("contraction must leave a positive gap (rho < 1/2)")

    @property
    def ambient(self) -> int:
        return self.d + 1

    @property
    def N(self) -> int:
        return len(self.generator)

    @property
    def rho(self) -> float:
        return self.N ** (-1.0 / self.s)

    @property
    def gap(self) -> float:
        """Separation between sibling copies relative to the parent side."""
        return 1.0 - 2.0 * self.rho


def generation_cubes(params: CantorParams, n: int):
    """Origins and side of the n-th generation construction cubes."""
    if params.N ** n > params.budget:
        raise BudgetExceeded(f"{params.N}^{n} cubes exceed budget {params.budget}")
    origins = np.zeros((1, params.ambient))
    side = 1.0
    shift = params.generator.astype(float)
    for _ in range(n):
        origins = (origins[:, None, :] + shift[None, :, :] * (side * (1.0 - params.rho)))
        origins = origins.reshape(-1, params.ambient)
        side *= params.rho
    return origins, side


def _corner_points(params: CantorParams, m: int) -> np.ndarray:
    """All corners of the generation-m cubes (these lie on the limit set)."""
    origins, side = generation_cubes(params, m)
    corners = _default_generator(params.ambient).astype(float)
    pts = origins[:, None, :] + corners[None, :, :] * side
    return np.unique(pts.reshape(-1, params.ambient), axis=0)


def thickened_cells(params: CantorParams, t: float) -> np.ndarray:
    """Integer grid cells (side t) whose interiors meet the limit set.

    Works from corner points of increasingly deep generations: corner sets
    are nested, so the detected cell set grows monotonically; iteration stops
    once it is stable and the generation side has dropped well below t.
    Exact for dyadic contractions, where construction corners land on grid
    lines only in the degenerate on-face cases the interior test discards.
    """
    if not (0 < t <= 1):
        raise ValueError("thickness t must lie in (0, 1]")
    found = None
    m = max(1, int(math.ceil(math.log(t) / math.log(params.rho))))
    while True:
        pts = _corner_points(params, m)
        scaled = pts / t
        cells = np.floor(scaled).astype(np.int64)
        frac = scaled - cells
        # strictly interior corners only; on-line coordinates prove nothing
        inner = np.all((frac > 1e-12) & (frac < 1.0 - 1e-12), axis=1)
        cur = np.unique(cells[inner], axis=0)
        side = params.rho ** m
        if found is not None and len(cur) == len(found) \
                and np.array_equal(cur, found) and side <= t / 4.0:
            return cur
        found = cur
        m += 1
        if params.N ** m * (2 ** params.ambient) > 8 * params.budget:
            raise BudgetExceeded("interior-cell detection exceeded the budget")


def cells_to_boxes(cells: np.ndarray, t: float) -> np.ndarray:
    lo = cells.astype(float) * t
    return np.stack([lo, lo + t], axis=1)


def _cell_keys(cells: np.ndarray, extent: int) -> np.ndarray:
    keys = np.zeros(len(cells), dtype=np.int64)
    for a in range(cells.shape[1]):
        keys = keys * extent + cells[:, a]
    return keys


def boundary_faces_of_cells(cells: np.ndarray):
    """Faces of the cell-union boundary, per axis and orientation.

    A face of an occupied cell survives exactly when the neighbouring cell is
    empty; equal cells make this an exact boundary description with no
    occlusion analysis.  Returns a list of (axis, sign, cells) triples.
    """
    if len(cells) == 0:
        return []
    lo = cells.min(axis=0)
    shifted = cells - lo
    extent = int(shifted.max()) + 3
    keys = np.sort(_cell_keys(shifted + 1, extent))
    out = []
    ambient = cells.shape[1]
    for a in range(ambient):
        for sign in (-1, 1):
            nb = shifted.copy()
            nb[:, a] += sign
            nk = _cell_keys(nb + 1, extent)
            pos = np.searchsorted(keys, nk)
            pos = np.clip(pos, 0, len(keys) - 1)
            missing = keys[pos] != nk
            if np.any(missing):
                out.append((a, sign, cells[missing]))
    return out


def surface_area_of_cells(cells: np.ndarray, t: float) -> float:
    """Exact surface area of a union of closed grid cells of side t."""
    faces = boundary_faces_of_cells(cells)
    n_faces = sum(len(c) for _, _, c in faces)
    return n_faces * t ** (cells.shape[1] - 1)


@dataclass(frozen=True)
class ThickenedSet:
    t: float
    cells: np.ndarray

    @property
    def count(self) -> int:
        return len(self.cells)

    @property
    def boxes(self) -> np.ndarray:
        return cells_to_boxes(self.cells, self.t)

    def area(self) -> float:
        return surface_area_of_cells(self.cells, self.t)


@dataclass(frozen=True)
class CantorBuild:
    params: CantorParams
    thickened: ThickenedSet
    cloud: BoundaryCloud
    oracle: scenes.BoxUnionOracle


def build_cantor_set(params: CantorParams,
                     cloud_spacing: float | None = None) -> CantorBuild:
    """Thicken the limit set at the depth-generation width and wrap it in a
    box-union oracle plus a boundary sample cloud."""
    t = params.rho ** params.depth
    cells = thickened_cells(params, t)
    if len(cells) > params.budget:
        raise BudgetExceeded(f"{len(cells)} cells exceed budget {params.budget}")
    thick = ThickenedSet(t, cells)
    oracle = scenes.BoxUnionOracle(thick.boxes)
    spacing = cloud_spacing if cloud_spacing is not None else t / 2.0
    cloud = geometry.cloud_from_oracle(oracle, spacing,
                                       surface_dim=params.ambient - 1)
    return CantorBuild(params, thick, cloud, oracle)


# ---------------------------------------------------------------------------
# surface-area scaling of the thickenings


@dataclass(frozen=True)
class ScalingReport:
    rows: tuple          # (n, cell_count, area, ratio)
    exponent: float      # areas are compared against 2^(-n * exponent)

    @property
    def ratios(self):
        return [r[3] for r in self.rows]

    def spread(self) -> float:
        vals = self.ratios
        return max(vals) / min(vals)


def surface_scaling_check(params: CantorParams, n_range) -> ScalingReport:
    """Exact areas of the dyadic thickenings E_{2^-n} against the predicted
    power law; the ratio column should stay within a constant band."""
    expo = params.d - params.s
    rows = []
    for n in n_range:
        t = 2.0 ** (-int(n))
        cells = thickened_cells(params, t)
        area = surface_area_of_cells(cells, t)
        rows.append((int(n), len(cells), area, area / 2.0 ** (-n * expo)))
    return ScalingReport(tuple(rows), expo)


def scaling_to_csv(report: ScalingReport, path) -> None:
    lines = ["n,area,ratio"]
    for n, _, area, ratio in report.rows:
        lines.append(f"{n},{area:.17g},{ratio:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# interior cubes of the upper half-space and the assembled domain


@dataclass(frozen=True)
class WindowSpec:
    """Which interior cubes of the half-space carry a pasted copy."""

    levels: tuple = (1, 2, 3, 4)
    lateral: tuple = None       # ((lo, hi), ...) per floor axis

    def resolved_lateral(self, d: int):
        if self.lateral is None:
            return tuple((0.0, 1.0) for _ in range(d))
        lat = tuple((float(a), float(b)) for a, b in self.lateral)
        if len(lat) != d:
            raise ValueError("lateral extent must list one interval per floor axis")
        return lat

    def to_json(self, d: int) -> dict:
        return {"levels": list(self.levels),
                "lateral": [list(iv) for iv in self.resolved_lateral(d)]}

    @staticmethod
    def from_json(data: dict) -> "WindowSpec":
        return WindowSpec(levels=tuple(int(n) for n in data["levels"]),
                          lateral=tuple(tuple(iv) for iv in data["lateral"]))


def halfspace_interior_cubes(level: int, lateral) -> np.ndarray:
    """Integer lateral anchors of the standard side-2^-level interior cubes
    of the upper half-space whose lateral footprint fits the window.

    A cube of side w at lateral anchor j occupies [j*w, (j+1)*w]^d at heights
    [w, 2w], so its distance to the floor equals its side length.
    """
    w = 2.0 ** (-level)
    grids = []
    for a, b in lateral:
        j0 = int(math.ceil(a / w - 1e-12))
        j1 = int(math.floor(b / w + 1e-12)) - 1
        if j1 < j0:
            return np.zeros((0, len(lateral)), dtype=np.int64)
        grids.append(np.arange(j0, j1 + 1, dtype=np.int64))
    mesh = np.meshgrid(*grids, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, len(lateral))


class CantorComplementOracle(SceneOracle):
    """Upper half-space with thickened-set copies removed from window cubes.

    Every pasted cell of level n lives on the global dyadic grid of side
    2^(-2n-1), so membership is an integer-key lookup and the exact boundary
    is the set of faces between occupied and empty cells; the signed distance
    is certified through a KD-tree over those faces.
    """

    scene_type = "cantor_complement"

    def __init__(self, params: CantorParams, window: WindowSpec | None = None,
                 box=None):
        window = window or WindowSpec()
        d = params.d
        lateral = window.resolved_lateral(d)
        self.params_obj = params
        self.window = window
        ambient = params.ambient
        top = 2.0 ** (1 - min(window.levels)) if window.levels else 2.0
        if box is None:
            lo = [iv[0] - 0.25 for iv in lateral] + [-0.25]
            hi = [iv[1] + 0.25 for iv in lateral] + [top + 0.25]
            box = [lo, hi]
        super().__init__(ambient, box)
        self.tau_sd = 1e-9

        self._levels = {}
        self._face_groups = []
        face_lo, face_hi = [], []
        for n in sorted(set(int(v) for v in window.levels)):
            w = 2.0 ** (-n)
            g = 2.0 ** (-2 * n - 1)           # world grid of the pasted cells
            anchors = halfspace_interior_cubes(n, lateral)
            if len(anchors) == 0:
                continue
            unit_cells = thickened_cells(params, w)
            # cube anchor (j*w lateral, w height) plus the w/4 inset of the
            # concentric half-size copy, all integer multiples of g
            base = np.empty((len(anchors), ambient), dtype=np.int64)
            base[:, :d] = anchors * (2 ** (n + 1)) + 2 ** (n - 1)
            base[:, d] = 2 ** (n + 1) + 2 ** (n - 1)
            cells = (base[:, None, :] + unit_cells[None, :, :]).reshape(-1, ambient)
            if len(cells) * len(self._levels) > 64 * params.budget:
                raise BudgetExceeded("window holds more cells than the budget")
            lo_cells = cells.min(axis=0)
            extent = int((cells - lo_cells).max()) + 3
            keys = np.sort(_cell_keys(cells - lo_cells + 1, extent))
            zlo = float(cells[:, d].min()) * g
            zhi = float(cells[:, d].max() + 1) * g
            self._levels[n] = {"g": g, "keys": keys, "lo": lo_cells,
                               "extent": extent, "z": (zlo, zhi),
                               "count": len(cells)}
            lvl_lo, lvl_hi = [], []
            for axis, sign, fcells in boundary_faces_of_cells(cells):
                flo = fcells.astype(float) * g
                fhi = flo + g
                if sign > 0:
                    flo[:, axis] += g
                fhi[:, axis] = flo[:, axis]
                lvl_lo.append(flo)
                lvl_hi.append(fhi)
            flo = np.concatenate(lvl_lo)
            fhi = np.concatenate(lvl_hi)
            face_lo.append(flo)
            face_hi.append(fhi)
            # one tree per paste level: faces in a level share a size, so a
            # tight certification radius holds and queries stay shallow
            self._face_groups.append({
                "lo": flo, "hi": fhi, "n": len(flo),
                "tree": cKDTree(0.5 * (flo + fhi)),
                "frad": float(np.linalg.norm(fhi - flo, axis=1).max()) / 2.0,
                "blo": flo.min(axis=0), "bhi": fhi.max(axis=0)})
        if face_lo:
            self._face_lo = np.concatenate(face_lo)
            self._face_hi = np.concatenate(face_hi)
        else:
            self._face_lo = np.zeros((0, ambient))
            self._face_hi = np.zeros((0, ambient))

    # -- membership in the removed set --------------------------------------
    def pasted_member(self, pts) -> np.ndarray:
        pts = scenes.as_points(pts)
        out = np.zeros(len(pts), dtype=bool)
        d = self.params_obj.d
        for lv in self._levels.values():
            zlo, zhi = lv["z"]
            sel = (pts[:, d] >= zlo) & (pts[:, d] <= zhi)
            if not np.any(sel):
                continue
            cells = np.floor(pts[sel] / lv["g"]).astype(np.int64)
            rel = cells - lv["lo"] + 1
            ok = np.all((rel >= 0) & (rel < lv["extent"]), axis=1)
            keys = _cell_keys(np.clip(rel, 0, lv["extent"] - 1), lv["extent"])
            pos = np.clip(np.searchsorted(lv["keys"], keys), 0,
                          len(lv["keys"]) - 1)
            out[np.flatnonzero(sel)] = ok & (lv["keys"][pos] == keys)
        return out

    def pasted_boundary_distance(self, pts, cap=None) -> np.ndarray:
        """Distance to the union of pasted faces, exact per-level KD search.

        Each level's faces share one size, so a candidate set is certified
        once the k-th center distance clears the level's half-diagonal; a
        bounding-box lower bound skips levels that cannot beat the running
        minimum.  With `cap`, entries are exact wherever the true distance is
        below their cap and otherwise only guaranteed to be >= it, which lets
        callers that compare against the cap (signed distance against the
        floor height) drop every query the comparison decides anyway.
        """
        pts = scenes.as_points(pts)
        best = np.full(len(pts), np.inf)
        if len(pts) == 0 or not self._face_groups:
            return best
        capv = np.full(len(pts), np.inf) if cap is None \
            else np.asarray(cap, dtype=float)
        lbs = np.stack([scenes.box_point_distance(pts, grp["blo"], grp["bhi"])
                        for grp in self._face_groups])
        rank = np.argsort(lbs, axis=0)
        for r in range(len(self._face_groups)):
            for gi, grp in enumerate(self._face_groups):
                todo = np.flatnonzero((rank[r] == gi) & (lbs[gi] < best)
                                      & (lbs[gi] < capv))
                k = min(8, grp["n"])
                while todo.size:
                    dc, ic = grp["tree"].query(pts[todo], k=k)
                    if k == 1:
                        dc, ic = dc[:, None], ic[:, None]
                    cand = scenes.box_point_distance(pts[todo][:, None, :],
                                                     grp["lo"][ic],
                                                     grp["hi"][ic])
                    val = cand.min(axis=1)
                    if k >= grp["n"]:
                        best[todo] = np.minimum(best[todo], val)
                        break
                    exact = val <= dc[:, -1] - grp["frad"]
                    hit = todo[exact]
                    best[hit] = np.minimum(best[hit], val[exact])
                    # the level's unseen faces sit at >= dc[-1] - frad; once
                    # that clears min(best, cap) the level cannot matter
                    beaten = dc[:, -1] - grp["frad"] >= \
                        np.minimum(best[todo], capv[todo])
                    todo = todo[~(exact | beaten)]
                    k = min(4 * k, grp["n"])
        return best

    def pasted_distance(self, pts) -> np.ndarray:
        """Unsigned distance to the removed set (zero inside it)."""
        d = self.pasted_boundary_distance(pts)
        d[self.pasted_member(pts)] = 0.0
        return d

    # -- signed distance ------------------------------------------------------
    def sd(self, pts):
        shape = np.asarray(pts, dtype=float).shape[:-1]
        p = scenes.as_points(pts)
        member = self.pasted_member(p)
        z = p[:, -1]
        # outside the pasted set the face distance only matters below the
        # floor height, so cap the search there; inside it must be exact
        face = self.pasted_boundary_distance(p, cap=np.where(member, np.inf, z))
        signed_b = np.where(member, -face, face)
        vals = np.maximum(-z, -signed_b)
        return vals.reshape(shape)

    # -- exact box classification ---------------------------------------------
    def classify_boxes(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        m = lo.shape[0]
        touches = np.zeros(m, dtype=bool)
        centers = 0.5 * (lo + hi)
        box_rad = 0.5 * np.linalg.norm(hi - lo, axis=1)
        for grp in self._face_groups:
            gap = np.maximum(np.maximum(grp["blo"] - hi, lo - grp["bhi"]), 0.0)
            todo = np.flatnonzero(~touches
                                  & (np.linalg.norm(gap, axis=1) <= 0.0))
            k = min(32, grp["n"])
            while todo.size:
                dc, ic = grp["tree"].query(centers[todo], k=k)
                if k == 1:
                    dc, ic = dc[:, None], ic[:, None]
                ov = np.all((grp["lo"][ic] <= hi[todo][:, None, :]) &
                            (grp["hi"][ic] >= lo[todo][:, None, :]), axis=2)
                hit = np.any(ov, axis=1)
                touches[todo[hit]] = True
                if k >= grp["n"]:
                    break
                settled = hit | (dc[:, -1] > box_rad[todo] + grp["frad"])
                todo = todo[~settled]
                k = min(4 * k, grp["n"])
        inside_b = self.pasted_member(0.5 * (lo + hi))
        zlo, zhi = lo[:, -1], hi[:, -1]
        out = np.full(m, BOUNDARY, dtype=np.int8)
        clear = ~touches
        out[clear & ~inside_b & (zlo > 0)] = INSIDE
        out[clear & inside_b] = OUTSIDE
        out[zhi < 0] = OUTSIDE
        return out

    # -- boundary sampling ------------------------------------------------------
    def boundary_points(self, spacing: float) -> np.ndarray:
        blo, bhi = self.bounding_box
        axes = [np.arange(blo[a] + spacing / 2, bhi[a], spacing)
                for a in range(self.dim - 1)]
        mesh = np.meshgrid(*axes, indexing="ij")
        floor = np.stack([g.ravel() for g in mesh] +
                         [np.zeros(mesh[0].size)], axis=1)
        pts = [floor]
        for flo, fhi in ((self._face_lo, self._face_hi),):
            if len(flo) == 0:
                continue
            ext = fhi - flo
            per = np.maximum(1, np.round(ext.max(axis=0) / spacing).astype(int))
            offs = [(np.arange(per[a]) + 0.5) / per[a] for a in range(self.dim)]
            mesh = np.stack(np.meshgrid(*offs, indexing="ij"),
                            axis=-1).reshape(-1, self.dim)
            grid = flo[:, None, :] + mesh[None, :, :] * ext[:, None, :]
            pts.append(grid.reshape(-1, self.dim))
        return np.concatenate(pts, axis=0)

    def boundary_area(self) -> float:
        """Floor area inside the bounding box plus all pasted face areas."""
        blo, bhi = self.bounding_box
        floor = float(np.prod(bhi[:-1] - blo[:-1]))
        ext = self._face_hi - self._face_lo
        ext = np.where(ext == 0.0, 1.0, ext)
        return floor + float(np.prod(ext, axis=1).sum())

    # -- helpers for scanning probes ---------------------------------------------
    def largest_halfspace_cube(self, x, r: float):
        """(lo, hi) of the biggest window-level interior cube inside B(x, r)."""
        x = np.asarray(x, dtype=float)
        d = self.params_obj.d
        lateral = self.window.resolved_lateral(d)
        for n in sorted(set(int(v) for v in self.window.levels)):
            w = 2.0 ** (-n)
            anchors = halfspace_interior_cubes(n, lateral)
            if len(anchors) == 0:
                continue
            lo = np.empty((len(anchors), self.dim))
            lo[:, :d] = anchors * w
            lo[:, d] = w
            hi = lo + w
            far = np.maximum(np.abs(lo - x), np.abs(hi - x))
            fits = np.linalg.norm(far, axis=1) <= r
            if np.any(fits):
                i = int(np.flatnonzero(fits)[0])
                return lo[i], hi[i]
        return None

    def cell_count(self) -> int:
        return sum(lv["count"] for lv in self._levels.values())

    def face_count(self) -> int:
        return len(self._face_lo)

    def params(self) -> dict:
        return {"d": self.params_obj.d,
                "s": self.params_obj.s,
                "depth": self.params_obj.depth,
                "window": self.window.to_json(self.params_obj.d),
                "box": self.bounding_box.tolist()}


def assemble_counterexample(params: CantorParams,
                            window: WindowSpec | None = None,
                            box=None) -> CantorComplementOracle:
    return CantorComplementOracle(params, window, box=box)


def oracle_from_params(prm: dict, dim: int | None = None) -> CantorComplementOracle:
    params = CantorParams(d=int(prm["d"]), s=float(prm["s"]),
                          depth=int(prm.get("depth", 4)))
    if dim is not None and dim != params.ambient:
        raise ValueError("scene dimension disagrees with d + 1")
    window = WindowSpec.from_json(prm["window"]) if "window" in prm else None
    return CantorComplementOracle(params, window, box=prm.get("box"))


# ---------------------------------------------------------------------------
# per-level decay of the pasted surface areas


@dataclass(frozen=True)
class DecayReport:
    rows: tuple              # (level, cube_count, area_per_cube, level_sum)
    slope: float             # fitted log2(area_per_cube) per level
    predicted: float         # -(2d - s)

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.predicted) / abs(self.predicted)


def window_decay_report(params: CantorParams,
                        window: WindowSpec | None = None) -> DecayReport:
    """Per-cube pasted surface area by level and its fitted decay rate.

    Each level-n copy is the thickening at width 2^-n scaled by 2^-n/2, so
    its area is (2^-n/2)^d * area(E_{2^-n}); the per-level geometric decay
    works out to 2^-(2d-s) up to the bounded alternation of the area ratios.
    """
    window = window or WindowSpec()
    d = params.d
    lateral = window.resolved_lateral(d)
    rows = []
    for n in sorted(set(int(v) for v in window.levels)):
        w = 2.0 ** (-n)
        count = len(halfspace_interior_cubes(n, lateral))
        cells = thickened_cells(params, w)
        unit_area = surface_area_of_cells(cells, w)
        area = (w / 2.0) ** d * unit_area
        rows.append((n, count, area, count * area))
    ns = np.array([r[0] for r in rows], dtype=float)
    vals = np.log2([r[2] for r in rows])
    slope = float(np.polyfit(ns, vals, 1)[0]) if len(rows) > 1 else 0.0
    return DecayReport(tuple(rows), slope, -(2 * params.d - params.s))


def decay_to_csv(report: DecayReport, path) -> None:
    lines = ["n,area,ratio"]
    prev = None
    for n, _, area, _ in report.rows:
        ratio = area / prev if prev is not None else float("nan")
        lines.append(f"{n},{area:.17g},{ratio:.17g}")
        prev = area
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# regularity probes on the assembled boundary


@dataclass(frozen=True)
class RegularityProbe:
    reports: dict            # exponent -> AdrReport
    spacing: float

    def spread(self, exponent: float) -> float:
        rep = self.reports[exponent]
        return rep.upper / rep.lower if rep.lower > 0 else math.inf


def uniformity_and_rectifiability_probe(build: CantorBuild,
                                        exponents=None,
                                        scales=None,
                                        lower_floor: float = 0.25) -> RegularityProbe:
    """Density ratios of the thickened-set cloud at competing exponents.

    Counting mass at the content exponent s keeps the ratios in a flat band
    across scales above the thickening width, while reading the same cloud at
    the flat dimension d makes the ratio decay like (t/r)^(d-s): the lower
    bound survives at s and fails at d.
    """
    params = build.params
    cloud = build.cloud
    if exponents is None:
        exponents = (float(params.d), float(params.s))
    if scales is None:
        t = build.thickened.t
        top = cloud.diameter() / 2.0
        scales = []
        r = 2.0 * t
        while r <= top:
            scales.append(r)
            r *= 2.0
        scales = tuple(scales) or (top,)
    reports = {e: geometry.adr_check(cloud, e, scales, lower_floor=lower_floor)
               for e in exponents}
    return RegularityProbe(reports, float(cloud.spacing))
