from __future__ import annotations

import numpy as np
import pytest

from gmtlab import geometry, scenes


def grid_plane_points(h: float, extent: float = 1.0, z: float = 0.0,
                      origin=(0.0, 0.0)) -> np.ndarray:
    """Regular h-grid on a horizontal square patch of the given extent."""
    ticks = np.arange(0.0, extent + h / 2, h)
    xx, yy = np.meshgrid(origin[0] + ticks, origin[1] + ticks, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, float(z))], axis=1)


def flat_square_cloud(h: float = 1.0 / 32.0, extent: float = 1.0):
    return geometry.make_cloud(grid_plane_points(h, extent), spacing=h,
                               surface_dim=2)


def two_plane_cloud(h: float, extent: float, separation: float):
    lower = grid_plane_points(h, extent, z=0.0, origin=(-extent / 2, -extent / 2))
    upper = lower + np.array([0.0, 0.0, separation])
    return geometry.make_cloud(np.vstack([lower, upper]), spacing=h,
                               surface_dim=2)


def lipschitz_graph_scene(slope: float = 0.5, period: float = 0.25,
                          n_teeth: int = 8):
    verts = scenes.sawtooth_profile(slope=slope, period=period, n_teeth=n_teeth)
    return scenes.LipschitzGraphOracle(verts)


def neck_union(width: float) -> scenes.CSGOracle:
    """Two unit discs bridged by a horizontal bar of the given width."""
    left = scenes.BallOracle((-1.5, 0), 1.0)
    right = scenes.BallOracle((1.5, 0), 1.0)
    bar = scenes.BoxUnionOracle(
        np.array([[[-1.5, -width / 2], [1.5, width / 2]]]))
    return scenes.CSGOracle("union", [left, right, bar])


@pytest.fixture(scope="session")
def halfspace():
    return scenes.HalfSpaceOracle((0.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def unit_ball():
    return scenes.BallOracle((0.0, 0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def thin_slab():
    return scenes.SlabOracle(axis=2, lo=0.0, hi=0.1)
