import numpy as np
import pytest

from rbfim.services.pc_model import FeaturedCloud, PointCloud, write_ply


def sphere_positions(n: int, radius: float = 400.0, center: float = 512.0) -> np.ndarray:
    """Evenly spread points on a sphere (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0 ** 0.5) * i
    unit = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    return center + radius * unit


def sphere_cloud(n: int = 1500, radius: float = 400.0, colors: bool = True) -> PointCloud:
    pos = sphere_positions(n, radius)
    if not colors:
        return PointCloud(positions=pos)
    unit = (pos - 512.0) / radius
    rgb = np.column_stack([120 + 60 * unit[:, 0], 120 + 50 * unit[:, 1], 120 + 40 * unit[:, 2]])
    return PointCloud(positions=pos, colors=np.rint(rgb).astype(np.uint8))


def plane_grid(side: int = 20, spacing: float = 10.0, z: float = 0.0) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(side) * spacing, np.arange(side) * spacing, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel(), np.full(side * side, z)])


def featured_sphere(n: int = 1500, feature=None) -> FeaturedCloud:
    """Sphere already in the normalized frame, with a smooth scalar feature."""
    pos = sphere_positions(n, radius=500.0, center=512.0)
    if feature is None:
        feature = 100.0 + 40.0 * np.sin(pos[:, 0] / 200.0) + 0.05 * pos[:, 2]
    return FeaturedCloud(positions=pos, features=feature)


@pytest.fixture
def sphere():
    return sphere_cloud()


@pytest.fixture
def ply_writer(tmp_path):
    """Write a cloud under tmp_path and return the file path as a string."""

    def write(name: str, cloud: PointCloud, binary: bool = True) -> str:
        path = tmp_path / name
        write_ply(path, cloud, binary=binary)
        return str(path)

    return write
