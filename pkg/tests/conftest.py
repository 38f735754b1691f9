import math

import numpy as np
import pytest

from bioloc.geometry import NetworkGeometry, Pose
from bioloc.grid_map import OccupancyGrid


@pytest.fixture
def default_geom():
    # 10 m x 10 m extent at 0.1 m / 10 degree cells
    return NetworkGeometry(k_xy=0.1, k_theta=math.pi / 18, n_xy=100, n_theta=36)


@pytest.fixture
def small_geom():
    return NetworkGeometry(k_xy=0.1, k_theta=2 * math.pi / 8, n_xy=8, n_theta=8)


def square_room(size_m=6.0, resolution=0.1, wall_cells=2):
    """Closed rectangular room centered on the origin."""
    n = round(size_m / resolution)
    cells = np.zeros((n, n))
    cells[:wall_cells, :] = 1.0
    cells[-wall_cells:, :] = 1.0
    cells[:, :wall_cells] = 1.0
    cells[:, -wall_cells:] = 1.0
    origin = Pose(-size_m / 2, -size_m / 2, 0.0)
    return OccupancyGrid(n, n, resolution, origin, cells)


@pytest.fixture
def room():
    return square_room()
