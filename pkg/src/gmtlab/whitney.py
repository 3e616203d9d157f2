"""Dyadic cubes and interior cube decompositions of open sets.

A domain is tiled by maximal dyadic cubes Q whose tripled concentric cube 3Q
stays inside the domain; side lengths are then comparable to the distance to
the complement.  This module builds the (window-truncated) decomposition from
a domain oracle, assembles the touching-cubes adjacency graph with its path
metric, verifies the defining distance/overlap properties, and probes how the
graph distance grows with normalized Euclidean distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scenes
from .scenes import BOUNDARY, INSIDE, OUTSIDE, UNKNOWN


class Disconnected(Exception):
    """No path between the requested cubes in the truncated graph."""


_FIELD_BITS = 21
_FIELD_OFF = 1 << 20


def _encode(anchors: np.ndarray) -> np.ndarray:
    """Pack small integer anchor vectors into sortable int64 keys."""
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.ndim == 1:
        anchors = anchors[None, :]
    if np.any(np.abs(anchors) >= _FIELD_OFF):
        raise OverflowError("anchor out of encodable range")
    key = np.zeros(len(anchors), dtype=np.int64)
    for k in range(anchors.shape[1]):
        key = (key << _FIELD_BITS) | (anchors[:, k] + _FIELD_OFF)
    return key


@dataclass(frozen=True, order=True)
class DyadicCube:
    level: int
    anchor: tuple

    @property
    def side(self) -> float:
        return 2.0 ** self.level

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.anchor, dtype=float) * self.side

    @property
    def hi(self) -> np.ndarray:
        return (np.asarray(self.anchor, dtype=float) + 1.0) * self.side

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.anchor, dtype=float) + 0.5) * self.side

    def dilated(self, factor: float) -> tuple[np.ndarray, np.ndarray]:
        c = self.center
        h = 0.5 * factor * self.side
        return c - h, c + h

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level + 1,
                          tuple(int(a) // 2 for a in self.anchor))


class WhitneyDecomposition:
    """Accepted cubes per level, plus the undecided remainder at the floor.

    levels maps level -> lexicographically sorted (m, dim) int anchor arrays.
    Cubes accepted at the top of the window have unexamined parents; their
    count is in window_top and they are excluded from maximality re-probing.
    """

    def __init__(self, oracle, level_range, box, levels, undecided):
        self.oracle = oracle
        self.level_range = (int(level_range[0]), int(level_range[1]))
        self.box = np.asarray(box, dtype=float)
        self.levels = levels
        self.undecided = undecided
        self.dim = oracle.dim
        self._enc = {l: _encode(a) for l, a in levels.items()}
        self.window_top = len(levels.get(self.level_range[1], ()))

    @property
    def n_cubes(self) -> int:
        return sum(len(a) for a in self.levels.values())

    def level_counts(self) -> dict:
        return {l: len(a) for l, a in sorted(self.levels.items())}

    def undecided_count(self) -> int:
        return sum(len(a) for a in self.undecided.values())

    def iter_levels(self):
        """(level, anchors) in global cube order: level ascending."""
        for l in sorted(self.levels):
            yield l, self.levels[l]

    def cubes(self) -> list[DyadicCube]:
        out = []
        for l, anchors in self.iter_levels():
            out.extend(DyadicCube(l, tuple(map(int, a))) for a in anchors)
        return out

    def global_arrays(self):
        """Flat arrays (level, anchors, lo, hi, side) in global cube order."""
        levs, anchs = [], []
        for l, a in self.iter_levels():
            levs.append(np.full(len(a), l, dtype=np.int32))
            anchs.append(a)
        if not levs:
            z = np.zeros((0, self.dim))
            return (np.zeros(0, np.int32), np.zeros((0, self.dim), np.int64),
                    z, z, np.zeros(0))
        lev = np.concatenate(levs)
        anc = np.concatenate(anchs)
        side = 2.0 ** lev.astype(float)
        lo = anc * side[:, None]
        hi = lo + side[:, None]
        return lev, anc, lo, hi, side

    def contains_cube(self, cube: DyadicCube) -> bool:
        enc = self._enc.get(cube.level)
        if enc is None:
            return False
        key = _encode(np.asarray([cube.anchor]))[0]
        i = np.searchsorted(enc, key)
        return bool(i < len(enc) and enc[i] == key)

    def locate(self, x) -> DyadicCube | None:
        """The accepted cube whose closed box contains x, if any."""
        x = np.asarray(x, dtype=float)
        for l in sorted(self.levels):
            s = 2.0 ** l
            base = np.floor(x / s).astype(np.int64)
            # points on a face belong to both closed neighbors: try the shifts
            shifts = [np.zeros(self.dim, np.int64)]
            on_face = np.isclose(x / s, np.round(x / s), atol=1e-12)
            for k in np.nonzero(on_face)[0]:
                ek = np.zeros(self.dim, np.int64)
                ek[k] = -1
                shifts += [sh + ek for sh in list(shifts)]
            for sh in shifts:
                c = DyadicCube(l, tuple(map(int, base + sh)))
                if self.contains_cube(c):
                    return c
        return None

    def to_csv(self, path) -> None:
        rows = ["level," + ",".join(f"anchor{i}" for i in range(self.dim))]
        for l, anchors in self.iter_levels():
            rows += [f"{l}," + ",".join(str(int(v)) for v in a) for a in anchors]
        Path(path).write_text("\n".join(rows) + "\n")


def _child_offsets(dim: int) -> np.ndarray:
    bits = np.arange(2 ** dim)
    return np.stack([(bits >> k) & 1 for k in range(dim - 1, -1, -1)], axis=1).astype(np.int64)


def whitney_decompose(oracle: scenes.SceneOracle, level_range,
                      box=None) -> WhitneyDecomposition:
    """Top-down decomposition over the dyadic grid restricted to a box.

    A cube is accepted when the oracle certifies 3Q inside the domain, pruned
    when Q itself certifiably misses the domain, and otherwise subdivided;
    whatever is still unresolved at the bottom level is reported as undecided
    rather than guessed.
    """
    n_min, n_max = int(level_range[0]), int(level_range[1])
    if n_min > n_max:
        raise ValueError("level_range must satisfy n_min <= n_max")
    if box is None:
        box = oracle.bounding_box
    box = np.asarray(box, dtype=float)
    dim = oracle.dim
    s_top = 2.0 ** n_max
    lo_i = np.floor(box[0] / s_top).astype(np.int64)
    hi_i = np.ceil(box[1] / s_top).astype(np.int64)
    hi_i = np.maximum(hi_i, lo_i + 1)
    axes = [np.arange(lo_i[k], hi_i[k]) for k in range(dim)]
    cur = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    kids = _child_offsets(dim)

    levels: dict[int, np.ndarray] = {}
    undecided: dict[int, np.ndarray] = {}
    for l in range(n_max, n_min - 1, -1):
        if len(cur) == 0:
            break
        s = 2.0 ** l
        lo = cur * s
        hi = lo + s
        lab3 = oracle.classify_boxes(lo - s, hi + s)
        acc = lab3 == INSIDE
        if np.any(acc):
            a = cur[acc]
            order = np.argsort(_encode(a))
            levels[l] = a[order]
        rest = cur[~acc]
        if len(rest):
            labq = oracle.classify_boxes(rest * s, rest * s + s)
            rest = rest[labq != OUTSIDE]
        if l == n_min:
            if len(rest):
                order = np.argsort(_encode(rest))
                undecided[l] = rest[order]
            break
        cur = (rest[:, None, :] * 2 + kids[None, :, :]).reshape(-1, dim)
    return WhitneyDecomposition(oracle, (n_min, n_max), box, levels, undecided)


# ---------------------------------------------------------------------------
# adjacency graph


class WhitneyGraph:
    """Touching-cubes graph in CSR form over the global cube order."""

    def __init__(self, W: WhitneyDecomposition):
        self.W = W
        lev, anc, lo, hi, side = W.global_arrays()
        self.level = lev
        self.anchor = anc
        self.lo = lo
        self.hi = hi
        self.side = side
        self.n = len(lev)
        self._base = {}
        self._enc = {}
        pos = 0
        for l, a in W.iter_levels():
            self._base[l] = pos
            self._enc[l] = _encode(a)
            pos += len(a)
        pairs = self._build_edges()
        self.edges = pairs
        both = np.concatenate([pairs, pairs[:, ::-1]]) if len(pairs) else pairs.reshape(0, 2)
        if len(both):
            order = np.lexsort((both[:, 1], both[:, 0]))
            both = both[order]
            counts = np.bincount(both[:, 0], minlength=self.n)
            self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            self.indices = both[:, 1].astype(np.int64)
        else:
            self.indptr = np.zeros(self.n + 1, dtype=np.int64)
            self.indices = np.zeros(0, dtype=np.int64)

    # -- construction -------------------------------------------------------
    def _candidates_coarse(self, a: np.ndarray, delta: int):
        """Per-axis coarse anchor bounds for boxes touching fine cube [a, a+1]."""
        m = 1 << delta
        c_min = -((-a) // m) - 1
        c_max = (a + 1) // m
        return c_min, c_max

    def _match_level(self, l_fine, l_coarse, out):
        a = self.W.levels[l_fine]
        delta = l_coarse - l_fine
        c_min, c_max = self._candidates_coarse(a, delta)
        enc_c = self._enc[l_coarse]
        base_f = self._base[l_fine]
        base_c = self._base[l_coarse]
        dim = a.shape[1]
        for bits in _child_offsets(dim):
            cand = np.where(bits.astype(bool), c_max, c_min)
            key = _encode(cand)
            pos = np.searchsorted(enc_c, key)
            pos_c = np.minimum(pos, len(enc_c) - 1)
            hit = (len(enc_c) > 0) & (enc_c[pos_c] == key)
            if np.any(hit):
                i = base_f + np.nonzero(hit)[0]
                j = base_c + pos[hit]
                out.append(np.stack([i, j], axis=1))

    def _build_edges(self) -> np.ndarray:
        out = []
        lvls = sorted(self.W.levels)
        for l in lvls:
            a = self.W.levels[l]
            enc = self._enc[l]
            base = self._base[l]
            dim = a.shape[1]
            offs = np.stack(np.meshgrid(*([[-1, 0, 1]] * dim), indexing="ij"),
                            axis=-1).reshape(-1, dim)
            offs = offs[np.any(offs != 0, axis=1)]
            for off in offs:
                key = _encode(a + off)
                pos = np.searchsorted(enc, key)
                pos_c = np.minimum(pos, len(enc) - 1)
                hit = enc[pos_c] == key
                if np.any(hit):
                    i = base + np.nonzero(hit)[0]
                    j = base + pos[hit]
                    out.append(np.stack([i, j], axis=1))
        for l in lvls:
            for delta in (1, 2):
                if l + delta in self.W.levels:
                    self._match_level(l, l + delta, out)
        if not out:
            return np.zeros((0, 2), dtype=np.int64)
        e = np.concatenate(out)
        e = e[e[:, 0] < e[:, 1]]
        e = np.unique(e, axis=0)
        return e

    def far_touch_pairs(self) -> int:
        """Count touching pairs more than two levels apart (should be zero)."""
        total = 0
        lvls = sorted(self.W.levels)
        for i, l in enumerate(lvls):
            for L in lvls[i + 1:]:
                if L - l < 3:
                    continue
                out = []
                self._match_level(l, L, out)
                total += sum(len(p) for p in out)
        return total

    # -- queries -------------------------------------------------------------
    def id_of(self, cube: DyadicCube) -> int:
        enc = self._enc.get(cube.level)
        if enc is None:
            raise KeyError(f"no cubes at level {cube.level}")
        key = _encode(np.asarray([cube.anchor]))[0]
        i = np.searchsorted(enc, key)
        if i >= len(enc) or enc[i] != key:
            raise KeyError(f"cube {cube} not in decomposition")
        return self._base[cube.level] + int(i)

    def cube_of(self, gid: int) -> DyadicCube:
        return DyadicCube(int(self.level[gid]), tuple(map(int, self.anchor[gid])))

    def neighbors(self, gid: int) -> np.ndarray:
        return self.indices[self.indptr[gid]:self.indptr[gid + 1]]

    def _expand(self, frontier: np.ndarray):
        starts = self.indptr[frontier]
        cnt = (self.indptr[frontier + 1] - starts).astype(np.int64)
        total = int(cnt.sum())
        if total == 0:
            return (np.zeros(0, np.int64),) * 2
        shift = np.repeat(np.cumsum(cnt) - cnt, cnt)
        flat = np.arange(total) - shift + np.repeat(starts, cnt)
        return self.indices[flat], np.repeat(frontier, cnt)

    def bfs_distances(self, src: int) -> np.ndarray:
        dist = np.full(self.n, -1, dtype=np.int32)
        dist[src] = 0
        frontier = np.asarray([src], dtype=np.int64)
        d = 0
        while frontier.size:
            d += 1
            nbrs, _ = self._expand(frontier)
            nbrs = np.unique(nbrs)
            nbrs = nbrs[dist[nbrs] < 0]
            dist[nbrs] = d
            frontier = nbrs
        return dist

    def bfs_tree(self, src: int, max_hops: int | None = None):
        """(dist, parent) arrays of a BFS from src, optionally depth-limited.

        Unreached vertices get dist -1 / parent -1; ties on discovery go to
        the smallest-id parent, matching the path extractor's convention.
        """
        dist = np.full(self.n, -1, dtype=np.int32)
        parent = np.full(self.n, -1, dtype=np.int64)
        dist[src] = 0
        parent[src] = src
        frontier = np.asarray([src], dtype=np.int64)
        d = 0
        while frontier.size and (max_hops is None or d < max_hops):
            d += 1
            nbrs, pars = self._expand(frontier)
            fresh = dist[nbrs] < 0
            nbrs, pars = nbrs[fresh], pars[fresh]
            if len(nbrs) == 0:
                break
            order = np.lexsort((pars, nbrs))
            nbrs, pars = nbrs[order], pars[order]
            first = np.concatenate([[True], nbrs[1:] != nbrs[:-1]])
            nbrs, pars = nbrs[first], pars[first]
            dist[nbrs] = d
            parent[nbrs] = pars
            frontier = nbrs
        return dist, parent

    def to_csv(self, path) -> None:
        dim = self.W.dim
        cols = ["level_q"] + [f"anchor{i}_q" for i in range(dim)]
        cols += ["level_r"] + [f"anchor{i}_r" for i in range(dim)]
        rows = [",".join(cols)]
        for i, j in self.edges:
            q, r = self.cube_of(int(i)), self.cube_of(int(j))
            rows.append(",".join(map(str, (q.level, *q.anchor, r.level, *r.anchor))))
        Path(path).write_text("\n".join(rows) + "\n")


def whitney_graph(W: WhitneyDecomposition) -> WhitneyGraph:
    return WhitneyGraph(W)


def whitney_path(G: WhitneyGraph, Q: DyadicCube, R: DyadicCube):
    """Shortest touching-cubes path and its vertex-count distance.

    The distance convention counts vertices: d(Q,Q) = 1 and adjacent cubes are
    at distance 2.  Ties are broken toward lexicographically smaller cubes.
    """
    s = G.id_of(Q)
    t = G.id_of(R)
    if s == t:
        return [Q], 1
    parent = np.full(G.n, -1, dtype=np.int64)
    parent[s] = s
    frontier = np.asarray([s], dtype=np.int64)
    found = False
    while frontier.size and not found:
        nbrs, pars = G._expand(frontier)
        fresh = parent[nbrs] < 0
        nbrs, pars = nbrs[fresh], pars[fresh]
        if len(nbrs) == 0:
            break
        order = np.lexsort((pars, nbrs))
        nbrs, pars = nbrs[order], pars[order]
        first = np.concatenate([[True], nbrs[1:] != nbrs[:-1]])
        nbrs, pars = nbrs[first], pars[first]
        parent[nbrs] = pars
        found = parent[t] >= 0
        frontier = nbrs
    if parent[t] < 0:
        raise Disconnected("cubes lie in different components of the truncated graph")
    path = [t]
    while path[-1] != s:
        path.append(int(parent[path[-1]]))
    cubes = [G.cube_of(g) for g in reversed(path)]
    return cubes, len(cubes)


# ---------------------------------------------------------------------------
# property verification


def _halton(n: int, dim: int, skip: int = 20) -> np.ndarray:
    primes = [2, 3, 5, 7, 11][:dim]
    out = np.empty((n, dim))
    for k, b in enumerate(primes):
        idx = np.arange(skip, skip + n)
        f = np.zeros(n)
        denom = 1.0
        i = idx.copy()
        while np.any(i > 0):
            denom *= b
            f += (i % b) / denom
            i //= b
        out[:, k] = f
    return out


def _sample_template(dim: int, count: int) -> np.ndarray:
    corners = _child_offsets(dim).astype(float)
    pieces = [corners[: min(len(corners), count)]]
    have = len(pieces[0])
    if have < count:
        pieces.append(np.full((1, dim), 0.5))
        have += 1
    if have < count:
        pieces.append(_halton(count - have, dim))
    return np.concatenate(pieces)[:count]


@dataclass(frozen=True)
class WhitneyReport:
    n_cubes: int
    level_counts: dict
    lam: float
    samples_per_cube: int
    prop1_lower: float          # min over samples of dist/ell  (needs >= 1)
    prop1_upper: float          # max over samples of dist/(4 diam)  (needs <= 1)
    prop2_lower: float          # min of dist / ((1 - sqrt(dim)(lam-1)/2) ell)
    prop2_upper: float          # max of dist / ((4 + (lam-1)/2) diam)
    adjacency_max_ratio: float
    far_touch_pairs: int
    overlap_max: int            # max #(lam*Q dilates over a point)
    overlap_max_wide: int       # same for the 2*lam*Q dilates
    maximality_ok: bool
    window_top_cubes: int
    undecided_count: int
    tol: float

    @property
    def prop1_ok(self):
        return self.prop1_lower >= 1.0 - self.tol and self.prop1_upper <= 1.0 + self.tol

    @property
    def prop2_ok(self):
        return self.prop2_lower >= 1.0 - self.tol and self.prop2_upper <= 1.0 + self.tol

    @property
    def adjacency_ok(self):
        return self.adjacency_max_ratio <= 4.0 and self.far_touch_pairs == 0


def _distance_margins(oracle, lo, side, tmpl, dilate=1.0, chunk=50_000):
    """Worst-case dist(x, complement)/bound ratios over per-cube samples."""
    dim = lo.shape[1]
    lo_r = math.inf
    hi_r = -math.inf
    for a in range(0, len(lo), chunk):
        b = min(a + chunk, len(lo))
        s = side[a:b, None, None]
        base = lo[a:b, None, :]
        if dilate == 1.0:
            pts = base + tmpl[None, :, :] * s
        else:
            ctr = base + 0.5 * s
            pts = ctr + (tmpl[None, :, :] - 0.5) * (dilate * s)
        dist = -oracle.sd(pts.reshape(-1, dim)).reshape(b - a, -1)
        ell = side[a:b, None]
        diam = ell * math.sqrt(dim)
        lo_r = min(lo_r, float((dist / ell).min()))
        hi_r = max(hi_r, float((dist / (4.0 * diam)).max()))
    return lo_r, hi_r


def _overlap_counts_full(W: WhitneyDecomposition, pts: np.ndarray,
                         factor: float) -> np.ndarray:
    """#(dilates factor*Q containing each point), exact integer lookups.

    A level-l cube with anchor a has factor*Q = {x : |x/s - 0.5 - a|_inf <=
    factor/2} with s = 2^l, so the covering anchors lie in a small integer
    window that is enumerated directly and matched against the accepted set.
    """
    counts = np.zeros(len(pts), dtype=np.int32)
    dim = W.dim
    half = factor / 2.0
    reach = int(math.floor(half + 0.5))         # |anchor - round(u)| bound
    rng = list(range(-reach, reach + 1))
    offs = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"),
                    axis=-1).reshape(-1, dim).astype(np.int64)
    for l, anchors in W.iter_levels():
        s = 2.0 ** l
        enc = _encode(anchors)
        u = pts / s - 0.5
        base = np.round(u).astype(np.int64)
        for off in offs:
            cand = base + off
            ok = np.all(np.abs(u - cand) <= half + 1e-12, axis=1)
            if not np.any(ok):
                continue
            key = _encode(cand[ok])
            pos = np.searchsorted(enc, key)
            pos_c = np.minimum(pos, len(enc) - 1)
            hit = (len(enc) > 0) & (enc[pos_c] == key)
            idx = np.nonzero(ok)[0][hit]
            counts[idx] += 1
    return counts


def verify_whitney_properties(W: WhitneyDecomposition, lam: float = 1.05,
                              samples_per_cube: int = 20,
                              overlap_budget: int = 2_000_000,
                              tol: float = 1e-9) -> WhitneyReport:
    """Re-derive the decomposition's guarantees directly from the oracle.

    Checks the two-sided distance bounds on each cube (and its lam-dilate),
    the touching-neighbor side ratios, the bounded overlap of the lam and
    2*lam dilates, and re-probes maximality of every accepted cube below the
    window top.  All bounds are evaluated with the oracle's signed distance,
    so for scenes with exact distance the comparisons are exact up to tol.
    """
    oracle = W.oracle
    lev, anc, lo, hi, side = W.global_arrays()
    n = len(lev)
    if n == 0:
        return WhitneyReport(0, {}, lam, samples_per_cube, math.inf, -math.inf,
                             math.inf, -math.inf, 0.0, 0, 0, 0, True, 0,
                             W.undecided_count(), tol)
    tmpl = _sample_template(W.dim, samples_per_cube)
    p1_lo, p1_hi = _distance_margins(oracle, lo, side, tmpl, dilate=1.0)
    dim = W.dim
    c2_lo = 1.0 - math.sqrt(dim) * (lam - 1.0) / 2.0
    c2_hi = 4.0 + (lam - 1.0) / 2.0
    q_lo, q_hi = _distance_margins(oracle, lo, side, tmpl, dilate=lam)
    p2_lo = q_lo / c2_lo
    p2_hi = q_hi * 4.0 / c2_hi

    G = whitney_graph(W)
    if len(G.edges):
        dl = np.abs(G.level[G.edges[:, 0]] - G.level[G.edges[:, 1]])
        adj_ratio = float(2.0 ** dl.max())
    else:
        adj_ratio = 1.0
    far = G.far_touch_pairs()

    # overlap of the lam and 2*lam dilates, at cube centers and corners
    ctr = lo + 0.5 * side[:, None]
    corner_bits = _child_offsets(dim).astype(float)
    corners = (lo[:, None, :] + corner_bits[None, :, :] * side[:, None, None]).reshape(-1, dim)
    pts = np.concatenate([ctr, corners])
    scale = 2.0 ** W.level_range[0]
    keys = np.round(pts / scale * 4.0).astype(np.int64)
    _, uniq = np.unique(_encode_rows(keys), return_index=True)
    pts = pts[np.sort(uniq)]
    if len(pts) > overlap_budget:
        stride = int(math.ceil(len(pts) / overlap_budget))
        pts = pts[::stride]
    overlap = int(_overlap_counts_full(W, pts, lam).max()) if len(pts) else 0
    overlap_wide = int(_overlap_counts_full(W, pts, 2.0 * lam).max()) if len(pts) else 0

    # maximality: every accepted cube's parent must fail the 3Q test
    max_ok = True
    top = W.level_range[1]
    for l, anchors in W.iter_levels():
        if l >= top or len(anchors) == 0:
            continue
        pa = np.unique(anchors // 2, axis=0)
        s = 2.0 ** (l + 1)
        plo = pa * s
        lab = oracle.classify_boxes(plo - s, plo + 2 * s)
        if np.any(lab == INSIDE):
            max_ok = False
    return WhitneyReport(
        n_cubes=n, level_counts=W.level_counts(), lam=lam,
        samples_per_cube=samples_per_cube,
        prop1_lower=p1_lo, prop1_upper=p1_hi,
        prop2_lower=p2_lo, prop2_upper=p2_hi,
        adjacency_max_ratio=adj_ratio, far_touch_pairs=far,
        overlap_max=overlap, overlap_max_wide=overlap_wide, maximality_ok=max_ok,
        window_top_cubes=W.window_top, undecided_count=W.undecided_count(),
        tol=tol)


def _encode_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64)
    key = np.zeros(len(rows), dtype=np.int64)
    for k in range(rows.shape[1]):
        key = key * 1_000_003 + (rows[:, k] + 500_000)
    return key


# ---------------------------------------------------------------------------
# growth probe for the path metric


@dataclass(frozen=True)
class UniformityProbe:
    t_bins: np.ndarray          # upper edges of dyadic t bins
    n_hat: np.ndarray           # max vertex-distance among pairs with t <= edge
    pair_counts: np.ndarray
    log_slope: float            # a in N(t) ~ a*log2(t) + b
    log_intercept: float
    sources: int
    unreachable_pairs: int


def uniformity_probe(W: WhitneyDecomposition, G: WhitneyGraph,
                     pair_samples: int = 2_000_000,
                     t_max: float = 64.0) -> UniformityProbe:
    """Sampled growth curve of graph distance vs normalized cube distance.

    BFS from a deterministic spread of source cubes; every (source, target)
    pair contributes its vertex-count distance to the dyadic bin of
    t = dist(Q,R)/min(ell(Q), ell(R)).  The returned curve is the running max
    (monotone in t), with a log-linear fit over bins that hold data.
    """
    n = G.n
    if n == 0:
        raise ValueError("empty decomposition")
    n_src = max(2, min(n, pair_samples // max(n, 1)))
    src_ids = np.unique(np.linspace(0, n - 1, n_src).astype(int))
    n_bins = int(math.ceil(math.log2(t_max))) + 1
    edges = 2.0 ** np.arange(n_bins)           # 1, 2, 4, ..., t_max
    best = np.zeros(n_bins, dtype=np.int64)
    cnt = np.zeros(n_bins, dtype=np.int64)
    unreachable = 0
    for sid in src_ids:
        dist = G.bfs_distances(int(sid))
        gap = np.maximum(G.lo - G.hi[sid], 0.0) + np.maximum(G.lo[sid] - G.hi, 0.0)
        euclid = np.sqrt((gap * gap).sum(axis=1))
        t = euclid / np.minimum(G.side, G.side[sid])
        reach = dist >= 0
        unreachable += int((~reach).sum())
        t = np.maximum(t[reach], 1.0)
        dvals = dist[reach] + 1
        bins = np.ceil(np.log2(t) - 1e-12).astype(int)
        keep = bins < n_bins
        np.maximum.at(best, bins[keep], dvals[keep])
        np.add.at(cnt, bins[keep], 1)
    n_hat = np.maximum.accumulate(best)
    have = cnt > 0
    if have.sum() >= 2:
        xs = np.log2(edges[have])
        a, b = np.polyfit(xs, n_hat[have].astype(float), 1)
    else:
        a, b = 0.0, float(n_hat.max(initial=0))
    return UniformityProbe(t_bins=edges, n_hat=n_hat, pair_counts=cnt,
                           log_slope=float(a), log_intercept=float(b),
                           sources=len(src_ids), unreachable_pairs=unreachable)
