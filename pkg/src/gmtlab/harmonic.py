"""Walk-on-spheres estimation of exit distributions and boundary-mass probes.

Walkers jump along maximal inscribed spheres (radius scaled by 1-step_shrink)
until they enter an epsilon shell of the boundary, then project to the
boundary along the distance gradient.  Randomness is counter-based: walkers
are laned into fixed blocks of 1024, each block drawing from its own keyed
stream with one (1024, dim) normal matrix per step, so estimates are
bit-identical for a given seed under any execution schedule, and a single
replayed walker consumes exactly the rows its block position dictates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import geometry, scenes
from .geometry import BallSpec

_Z95 = 1.959963984540054
BLOCK = 1024


class NonTerminated(Exception):
    """Walker exceeded max_steps before entering the capture shell."""


@dataclass(frozen=True)
class WalkConfig:
    epsilon: float | None = None       # capture shell; default 1e-4 * diameter
    max_steps: int = 20_000
    walkers: int = 100_000
    seed: int = 0
    step_shrink: float = 0.0           # gamma: step radius = (1-gamma)*dist

    def __post_init__(self):
        if self.walkers < 1:
            raise ValueError("walkers must be >= 1")
        if not (0.0 <= self.step_shrink < 1.0):
            raise ValueError("step_shrink must lie in [0, 1)")


@dataclass(frozen=True)
class HarmonicEstimate:
    pole: tuple
    hit_fraction: float
    ci95: float
    nonterminated: int
    mean_steps: float
    walkers: int
    terminated: int
    flagged: bool                      # > 1% of walkers failed to terminate


def wilson_interval(hits: int, n: int) -> tuple[float, float]:
    """(center, half-width) of the 95% Wilson score interval."""
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    z2 = _Z95 * _Z95
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = _Z95 * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    return center, half


def resolve_epsilon(oracle: scenes.SceneOracle, cfg: WalkConfig) -> float:
    if cfg.epsilon is not None:
        return float(cfg.epsilon)
    lo, hi = oracle.bounding_box
    return 1e-4 * float(np.linalg.norm(hi - lo))


def _block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) + block))


def _project_to_boundary(oracle, pts, eps):
    """Shift capture-shell points onto the zero level set along the distance
    gradient, estimated by central differences at pitch eps/8."""
    if len(pts) == 0:
        return pts
    dim = pts.shape[1]
    delta = eps / 8.0
    sd0 = oracle.sd(pts)
    grad = np.empty_like(pts)
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = delta
        grad[:, k] = (oracle.sd(pts + e) - oracle.sd(pts - e)) / (2 * delta)
    norms = np.linalg.norm(grad, axis=1)
    norms[norms == 0] = 1.0
    return pts - (sd0 / norms)[:, None] * grad


def _simulate_block(oracle, x0, cfg, eps, block, active_mask):
    """One block of walkers from x0; returns (terminals, done, steps).

    active_mask selects which lanes are real; every step draws the full
    (BLOCK, dim) matrix so lane streams are schedule-independent.  Lanes that
    never capture within max_steps come back with done=False.
    """
    gen = _block_generator(cfg.seed, block)
    dim = oracle.dim
    y = np.tile(np.asarray(x0, dtype=float), (BLOCK, 1))
    alive = active_mask.copy()
    done = np.zeros(BLOCK, dtype=bool)
    steps = np.zeros(BLOCK, dtype=np.int64)
    dist = np.empty(BLOCK)
    dist[alive] = -oracle.sd(y[alive])
    captured = alive & (dist < eps)
    done |= captured
    alive &= ~captured
    t = 0
    scale = 1.0 - cfg.step_shrink
    while alive.any() and t < cfg.max_steps:
        normals = gen.standard_normal((BLOCK, dim))
        idx = np.nonzero(alive)[0]
        u = normals[idx]
        u /= np.linalg.norm(u, axis=1)[:, None]
        y[idx] += (scale * np.maximum(dist[idx], 0.0))[:, None] * u
        dist[idx] = -oracle.sd(y[idx])
        steps[idx] += 1
        cap = dist[idx] < eps
        done[idx[cap]] = True
        alive[idx[cap]] = False
        t += 1
    return y, done, steps


def wos_exit(oracle: scenes.SceneOracle, x, cfg: WalkConfig,
             stream: int = 0) -> np.ndarray:
    """Terminal boundary point of walker `stream`; raises NonTerminated.

    Identical to the corresponding walker of a batch run: the walker's lane
    reads the same rows of its block's stream either way.
    """
    eps = resolve_epsilon(oracle, cfg)
    block, lane = divmod(int(stream), BLOCK)
    mask = np.zeros(BLOCK, dtype=bool)
    mask[lane] = True
    y, done, _ = _simulate_block(oracle, x, cfg, eps, block, mask)
    if not done[lane]:
        raise NonTerminated(f"walker {stream} alive after {cfg.max_steps} steps")
    return _project_to_boundary(oracle, y[lane][None, :], eps)[0]


def _run_walkers(oracle, pole, cfg: WalkConfig):
    """All walkers' projected terminals plus termination bookkeeping."""
    eps = resolve_epsilon(oracle, cfg)
    pole = np.asarray(pole, dtype=float)
    if float(oracle.sd(pole[None, :])[0]) >= 0:
        raise ValueError("pole must lie inside the domain")
    terminals = []
    steps_all = []
    nonterm = 0
    n_blocks = (cfg.walkers + BLOCK - 1) // BLOCK
    for b in range(n_blocks):
        lanes = min(BLOCK, cfg.walkers - b * BLOCK)
        mask = np.zeros(BLOCK, dtype=bool)
        mask[:lanes] = True
        y, done, steps = _simulate_block(oracle, pole, cfg, eps, b, mask)
        ok = done & mask
        nonterm += int(np.count_nonzero(mask & ~done))
        terminals.append(y[ok])
        steps_all.append(steps[ok])
    pts = np.concatenate(terminals) if terminals else np.zeros((0, oracle.dim))
    pts = _project_to_boundary(oracle, pts, eps)
    steps = np.concatenate(steps_all) if steps_all else np.zeros(0)
    return pts, int(nonterm), float(steps.mean()) if len(steps) else 0.0


def harmonic_measure(oracle: scenes.SceneOracle, pole, target,
                     cfg: WalkConfig) -> HarmonicEstimate:
    """Exit-distribution mass of a boundary target from a fixed pole.

    target is a predicate mapping (m, dim) points to booleans.  Fractions are
    over terminated walkers only; runs with more than 1% non-terminating
    walkers carry flagged=True.
    """
    pts, nonterm, mean_steps = _run_walkers(oracle, pole, cfg)
    n = len(pts)
    hits = int(np.count_nonzero(target(pts))) if n else 0
    _, half = wilson_interval(hits, n)
    return HarmonicEstimate(
        pole=tuple(map(float, np.asarray(pole, dtype=float))),
        hit_fraction=hits / n if n else 0.0,
        ci95=half,
        nonterminated=nonterm,
        mean_steps=mean_steps,
        walkers=cfg.walkers,
        terminated=n,
        flagged=nonterm > 0.01 * cfg.walkers)


def estimates_to_csv(rows, path) -> None:
    """rows: iterables (scene, pole, target, radius, estimate)."""
    out = ["scene,pole,target,radius,walkers,hit_fraction,ci95,nonterminated"]
    for scene, pole, target, radius, est in rows:
        pole_s = ";".join(format(v, ".17g") for v in est.pole)
        out.append(f"{scene},{pole_s},{target},{radius:.17g},{est.walkers},"
                   f"{est.hit_fraction:.17g},{est.ci95:.17g},{est.nonterminated}")
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# analytic oracles


def halfspace_disc_mass(height: float, disc_radius: float) -> float:
    """Exit probability through a concentric floor disc for a pole on the
    axis at the given height above the floor (3D upper half-space)."""
    return 1.0 - height / math.sqrt(height * height + disc_radius * disc_radius)


def ball_cap_fraction(cos_angle: float) -> float:
    """Solid-angle fraction of a spherical cap seen from the ball center."""
    return (1.0 - cos_angle) / 2.0


# ---------------------------------------------------------------------------
# lower bound / doubling / density probes


@dataclass(frozen=True)
class BourgainReport:
    ball: BallSpec
    content_ratio: float
    estimate: HarmonicEstimate | None
    c0: float
    regularity_floor: float
    skipped: bool

    @property
    def applicable(self) -> bool:
        return not self.skipped and self.content_ratio >= self.regularity_floor

    @property
    def passed(self) -> bool:
        if self.skipped:
            return True
        if not self.applicable:
            return True
        return self.estimate.hit_fraction > self.c0


def bourgain_check(oracle: scenes.SceneOracle, ball: BallSpec, s: float,
                   cfg: WalkConfig, c0: float = 0.3,
                   regularity_floor: float = 0.05,
                   cloud_spacing: float | None = None) -> BourgainReport:
    """Harmonic-measure lower bound on a boundary ball with regular content.

    Measures the scale-s content proxy of the boundary inside the ball; when
    it clears the regularity floor, the exit mass of the ball from the ball's
    interior corkscrew point must exceed c0.
    """
    eps = resolve_epsilon(oracle, cfg)
    if ball.radius < 8 * eps:
        return BourgainReport(ball, 0.0, None, c0, regularity_floor, True)
    spacing = cloud_spacing or ball.radius / 64.0
    bpts = oracle.boundary_points(spacing)
    inside = bpts[np.linalg.norm(bpts - ball.center, axis=1) <= ball.radius]
    if len(inside) == 0:
        return BourgainReport(ball, 0.0, None, c0, regularity_floor, True)
    content, _ = geometry.hausdorff_content(inside, s, scale=ball.radius)
    ratio = content / ball.radius ** s
    cert = geometry.corkscrew_point(oracle, ball.center, ball.radius,
                                    side="interior")
    pole = cert.witness.center

    def target(pts):
        return np.linalg.norm(pts - ball.center, axis=1) <= ball.radius

    est = harmonic_measure(oracle, pole, target, cfg)
    return BourgainReport(ball, float(ratio), est, c0, regularity_floor, False)


@dataclass(frozen=True)
class DoublingReport:
    rows: list
    bound: float

    @property
    def ratios(self):
        return [r["ratio"] for r in self.rows if r["ratio"] is not None]

    def passed(self) -> bool:
        judged = [r for r in self.rows if not r["underpowered"]]
        return all(r["ratio"] <= self.bound for r in judged)


def doubling_probe(oracle: scenes.SceneOracle, balls, pole, cfg: WalkConfig,
                   bound: float = 10.0) -> DoublingReport:
    """Exit-mass ratios of doubled boundary balls from one fixed pole.

    One batch of walks serves every ball; balls whose single-ball mass falls
    below 10 hits are flagged underpowered and excluded from the verdict.
    """
    pts, nonterm, _ = _run_walkers(oracle, pole, cfg)
    n = len(pts)
    rows = []
    for ball in balls:
        d = np.linalg.norm(pts - ball.center, axis=1)
        k1 = int(np.count_nonzero(d <= ball.radius))
        k2 = int(np.count_nonzero(d <= 2 * ball.radius))
        under = k1 < 10
        if k1 > 0:
            p1, h1 = k1 / n, wilson_interval(k1, n)[1]
            p2, h2 = k2 / n, wilson_interval(k2, n)[1]
            ratio = p2 / p1
            ci = ratio * math.sqrt((h1 / p1) ** 2 + (h2 / max(p2, 1e-300)) ** 2)
        else:
            ratio, ci = None, None
        rows.append({"center": tuple(map(float, ball.center)),
                     "radius": float(ball.radius),
                     "hits_1": k1, "hits_2": k2,
                     "ratio": ratio, "ci": ci, "underpowered": under})
    return DoublingReport(rows, bound)


@dataclass(frozen=True)
class DensityScanReport:
    """Per-radius flat-part exit fractions around one boundary point.

    The trend methods count decreases toward growing radius: each doubling
    of the ball pulls one more absorbing pasted layer into range, which
    starves the flat floor, while a ball below the finest layer sees no
    pasted material at all and its flat fraction is 1.
    """

    radii: list
    flat_fractions: list
    ci95s: list
    in_ball_counts: list
    w0_fractions: list
    underpowered: list

    def _by_growing_radius(self):
        order = np.argsort(self.radii)
        return ([self.flat_fractions[i] for i in order],
                [self.ci95s[i] for i in order])

    def consecutive_decreases(self) -> int:
        vals, _ = self._by_growing_radius()
        return sum(1 for a, b in zip(vals, vals[1:]) if b < a)

    def ci_separated_decreases(self) -> int:
        vals, cis = self._by_growing_radius()
        return sum(1 for (a, ca), (b, cb)
                   in zip(zip(vals, cis), zip(vals[1:], cis[1:]))
                   if b + cb < a - ca)


def density_ratio_scan(oracle, x, radii, cfg: WalkConfig,
                       pole=None) -> DensityScanReport:
    """Flat-part exit fraction inside shrinking boundary balls.

    Terminal points are attributed with the scene's structured distances: a
    terminal is flat when it sits within the capture shell of the hyperplane
    but not of any pasted piece.  Each radius gets its own independent run
    (seed offset), its Wilson interval, and the exit fraction of the floor
    shadow of the largest half-space cube inside the ball.  Unless a fixed
    pole is supplied, each radius is probed from its own pole at height r
    over x — the scale of the largest interior cube the ball contains — so
    every ball is read from a matched interior vantage and keeps useful hit
    counts; a fixed far pole starves small balls exponentially because every
    pasted layer between pole and ball absorbs most walkers.
    """
    x = np.asarray(x, dtype=float)
    radii = [float(r) for r in radii]
    eps = resolve_epsilon(oracle, cfg)
    for r in radii:
        if r < 8 * eps:
            raise ValueError(f"radius {r} below the resolution guard 8*eps")
    flats, cis, counts, w0s, unders = [], [], [], [], []
    for i, r in enumerate(radii):
        if pole is None:
            p = x.copy()
            p[-1] += r
        else:
            p = np.asarray(pole, dtype=float)
        sub = replace(cfg, seed=cfg.seed + 7919 * (i + 1))
        pts, nonterm, _ = _run_walkers(oracle, p, sub)
        d = np.linalg.norm(pts - x, axis=1)
        in_ball = d <= r
        n_in = int(np.count_nonzero(in_ball))
        sel = pts[in_ball]
        flat = (np.abs(sel[:, -1]) < eps) & (oracle.pasted_distance(sel) >= eps)
        k = int(np.count_nonzero(flat))
        _, half = wilson_interval(k, max(n_in, 1))
        flats.append(k / n_in if n_in else 0.0)
        cis.append(half)
        counts.append(n_in)
        unders.append(n_in < 100)
        w0 = oracle.largest_halfspace_cube(x, r)
        if w0 is not None:
            w_lo, w_hi = w0
            shadow = np.all((sel[:, :-1] >= w_lo[:-1]) &
                            (sel[:, :-1] <= w_hi[:-1]), axis=1)
            w0s.append(int(np.count_nonzero(shadow & flat)) / n_in if n_in else 0.0)
        else:
            w0s.append(0.0)
    return DensityScanReport(radii, flats, cis, counts, w0s, unders)
