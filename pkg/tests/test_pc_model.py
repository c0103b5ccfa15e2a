import numpy as np
import pytest
from plyfile import PlyData, PlyElement

from rbfim.core.errors import (
    DegenerateGeometryError,
    InputError,
    MissingColorsError,
    PlyFormatError,
)
from rbfim.models.schemas import FeatureKind
from rbfim.services.pc_model import (
    FeaturedCloud,
    NormParams,
    PointCloud,
    extract_feature,
    load_ply,
    merge_duplicates,
    normalize_pair,
    rgb_to_ycbcr,
    surface_variation,
)
from tests.conftest import plane_grid, sphere_cloud


def _write_text(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


ASCII_HEADER = "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\n" \
               "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"


class TestLoadPly:
    def test_ascii_with_colors(self, tmp_path):
        body = "0 0 0 255 0 0\n1.5 2 3 0 255 0\n-4 5 6.25 0 0 255\n"
        path = _write_text(tmp_path, "a.ply", ASCII_HEADER.format(n=3) + body)

        cloud = load_ply(path)

        assert cloud.count == 3
        np.testing.assert_allclose(cloud.positions[2], [-4.0, 5.0, 6.25])
        np.testing.assert_array_equal(cloud.colors[1], [0, 255, 0])

    def test_binary_written_file_reads_back(self, ply_writer, sphere):
        path = ply_writer("s.ply", sphere, binary=True)
        cloud = load_ply(path)
        np.testing.assert_array_equal(cloud.positions, sphere.positions)
        np.testing.assert_array_equal(cloud.colors, sphere.colors)

    def test_geometry_only(self, ply_writer):
        path = ply_writer("g.ply", PointCloud(positions=plane_grid(4)), binary=False)
        cloud = load_ply(path)
        assert not cloud.has_colors
        assert cloud.count == 16

    def test_missing_file_names_the_path(self, tmp_path):
        with pytest.raises(InputError, match="missing.ply"):
            load_ply(tmp_path / "missing.ply")

    def test_malformed_header(self, tmp_path):
        text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nthis is not a header line\nend_header\n0\n"
        path = _write_text(tmp_path, "bad.ply", text)
        with pytest.raises(PlyFormatError, match="bad.ply"):
            load_ply(path)

    def test_big_endian_rejected(self, tmp_path):
        arr = np.array([(0.0, 1.0, 2.0)], dtype=[("x", "f4"), ("y", "f4"), ("z", "f4")])
        path = tmp_path / "be.ply"
        PlyData([PlyElement.describe(arr, "vertex")], text=False, byte_order=">").write(str(path))
        with pytest.raises(PlyFormatError, match="big_endian"):
            load_ply(path)

    def test_zero_vertices(self, tmp_path):
        path = _write_text(tmp_path, "empty.ply", ASCII_HEADER.format(n=0))
        with pytest.raises(PlyFormatError, match="zero vertices"):
            load_ply(path)

    def test_truncated_body(self, tmp_path):
        path = _write_text(tmp_path, "short.ply", ASCII_HEADER.format(n=3) + "0 0 0 1 2 3\n")
        with pytest.raises(PlyFormatError):
            load_ply(path)

    def test_integer_coordinates_rejected(self, tmp_path):
        text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nend_header\n1 2 3\n"
        path = _write_text(tmp_path, "int.ply", text)
        with pytest.raises(PlyFormatError, match="float"):
            load_ply(path)


class TestPointCloud:
    def test_arrays_are_read_only(self, sphere):
        with pytest.raises(ValueError):
            sphere.positions[0, 0] = 1.0

    def test_color_range_checked(self):
        with pytest.raises(InputError):
            PointCloud(positions=np.zeros((1, 3)), colors=np.array([[0, 0, 300]]))

    def test_color_count_checked(self):
        with pytest.raises(InputError):
            PointCloud(positions=np.zeros((2, 3)), colors=np.zeros((1, 3)))


class TestColor:
    def test_gray_has_neutral_chroma(self):
        ycc = rgb_to_ycbcr(np.array([[100, 100, 100], [255, 255, 255]]))
        np.testing.assert_allclose(ycc, [[100, 128, 128], [255, 128, 128]], atol=1e-9)

    def test_luma_weights(self):
        ycc = rgb_to_ycbcr(np.array([[255, 0, 0], [0, 255, 0], [0, 0, 255]]))
        np.testing.assert_allclose(ycc[:, 0], [0.2126 * 255, 0.7152 * 255, 0.0722 * 255], atol=1e-9)


class TestNormalization:
    def test_distorted_point_outside_box_not_clamped(self):
        corners = np.array([[0, 0, 0], [500, 500, 500]], dtype=float)
        original = PointCloud(positions=corners)
        distorted = PointCloud(positions=np.array([[600.0, 0.0, 0.0]]))

        _, norm_d, params = normalize_pair(original, distorted)

        assert params.l_max == 500.0
        np.testing.assert_allclose(norm_d.positions[0], [1228.8, 0, 0])

    def test_original_fills_the_frame(self, sphere):
        norm_o, _, _ = normalize_pair(sphere, sphere)
        assert norm_o.positions.min() >= -1e-6
        assert norm_o.positions.max() <= 1024 + 1e-6
        extent = norm_o.positions.max(axis=0) - norm_o.positions.min(axis=0)
        assert extent.max() == pytest.approx(1024.0)

    def test_degenerate_box(self):
        with pytest.raises(DegenerateGeometryError):
            NormParams.from_cloud(PointCloud(positions=np.ones((4, 3))))

    def test_luma_attached(self, sphere):
        norm_o, _, _ = normalize_pair(sphere, sphere, FeatureKind.luminance())
        np.testing.assert_allclose(norm_o.features, rgb_to_ycbcr(sphere.colors)[:, 0])


class TestFeatures:
    def test_color_feature_needs_colors(self):
        with pytest.raises(MissingColorsError):
            extract_feature(sphere_cloud(100, colors=False), FeatureKind.chroma_u())

    def test_plane_has_zero_surface_variation(self):
        assert np.max(surface_variation(plane_grid(10), 8)) < 1e-12

    def test_curvature_in_range(self):
        values = extract_feature(sphere_cloud(400, colors=False), FeatureKind.curvature(12))
        assert values.shape == (400,)
        assert np.all(values >= 0) and np.all(values <= 255 / 3 + 1e-9)

    def test_curvature_k_must_be_at_least_three(self):
        with pytest.raises(ValueError):
            FeatureKind.curvature(2)


def test_merge_duplicates_averages_and_keeps_first_order():
    cloud = FeaturedCloud(
        positions=np.array([[5, 0, 0], [1, 0, 0], [5, 0, 0], [1, 0, 0], [2, 2, 2]], dtype=float),
        features=np.array([10.0, 20.0, 30.0, 40.0, 7.0]),
    )
    merged = merge_duplicates(cloud)
    np.testing.assert_array_equal(merged.positions, [[5, 0, 0], [1, 0, 0], [2, 2, 2]])
    np.testing.assert_allclose(merged.features, [20.0, 30.0, 7.0])


def test_merge_duplicates_no_op_without_duplicates():
    cloud = FeaturedCloud(positions=np.eye(3), features=np.arange(3.0))
    assert merge_duplicates(cloud) is cloud
