import math

import numpy as np
import pytest

from rbfim.core.errors import InsufficientPointsError, MissingColorsError, NumericError
from rbfim.models.schemas import FeatureKind, KernelKind, RBFIMConfig
from rbfim.services.baseline_metrics import synth_distort
from rbfim.services.bench_harness import compute_correlations
from rbfim.services.pc_model import FeaturedCloud, PointCloud, extract_feature
from rbfim.services.rbfim_metric import compute_rbfim, grid_pool, quality_from_distortion, select_reference
from tests.conftest import sphere_cloud, sphere_positions


class TestGridPool:
    def test_hand_computed(self):
        pts = np.array([[10, 10, 10], [20, 20, 20], [600, 600, 600]], dtype=float)
        d, cells, m_r = grid_pool(pts, [1.0, 3.0, 5.0], [2.0, 2.0, 9.0], grid_scale=2)
        assert m_r == 2
        assert d == pytest.approx(2.0)
        assert [c.cell for c in cells] == [0, 7]
        assert cells[0].count == 2 and cells[0].mean_o == pytest.approx(2.0)

    def test_boundary_and_outside_points_clip(self):
        pts = np.array([[1024, 1024, 1024], [-5, 0, 0], [2000, 0, 0]], dtype=float)
        _, cells, m_r = grid_pool(pts, np.zeros(3), np.zeros(3), grid_scale=4)
        assert [c.cell for c in cells] == [0, 48, 63]
        assert m_r == 3

    def test_single_cell_grid(self):
        d, _, m_r = grid_pool(np.random.default_rng(0).uniform(0, 1024, (20, 3)), np.zeros(20), np.full(20, 3.0), 1)
        assert (d, m_r) == (3.0, 1)

    def test_empty_rejected(self):
        with pytest.raises(InsufficientPointsError):
            grid_pool(np.empty((0, 3)), [], [], 16)


class TestQuality:
    def test_zero_distortion_hits_cap(self):
        assert quality_from_distortion(0.0) == 100.0

    def test_shift_of_eight(self):
        assert quality_from_distortion(8.0) == pytest.approx(20 * math.log10(255 / 8))
        assert quality_from_distortion(8.0) == pytest.approx(30.07, abs=0.01)

    def test_cap_applies_to_tiny_distortion(self):
        assert quality_from_distortion(1e-9, q_cap=60.0) == 60.0

    def test_negative_rejected(self):
        with pytest.raises(NumericError):
            quality_from_distortion(-1.0)


class TestSelectReference:
    def test_full_fraction_is_identity(self):
        cloud = FeaturedCloud(positions=np.zeros((5, 3)), features=np.zeros(5))
        np.testing.assert_array_equal(select_reference(cloud), np.arange(5))

    def test_seeded_sample(self):
        cloud = FeaturedCloud(positions=np.zeros((101, 3)), features=np.zeros(101))
        a = select_reference(cloud, 0.25, seed=7)
        assert a.size == 26
        assert np.all(np.diff(a) > 0)
        np.testing.assert_array_equal(a, select_reference(cloud, 0.25, seed=7))


@pytest.fixture(scope="module")
def original():
    return sphere_cloud(1500)


def test_identity_pair_is_perfect(original):
    report = compute_rbfim(original, original)
    assert report.d_rbfim <= 1e-6
    assert report.q_rbfim == 100.0
    assert report.n_reference == original.count
    assert set(report.timings) == {"normalize", "partition", "solve", "evaluate", "pool"}
    assert report.fallbacks["outside_support"] == 0


def test_constant_luma_shift_of_eight():
    pos = sphere_positions(1000)
    original = PointCloud(positions=pos, colors=np.full((1000, 3), 128, dtype=np.uint8))
    distorted = PointCloud(positions=pos, colors=np.full((1000, 3), 120, dtype=np.uint8))

    report = compute_rbfim(original, distorted)

    assert report.d_rbfim == pytest.approx(8.0, abs=1e-6)
    assert report.q_rbfim == pytest.approx(30.07, abs=0.01)


def test_luma_noise_is_monotonic(original):
    d = [compute_rbfim(original, synth_distort(original, luma_sigma=s, seed=3)).d_rbfim for s in (2, 4, 8, 16)]
    assert all(a < b for a, b in zip(d, d[1:]))


def test_field_is_built_on_the_distorted_cloud(original):
    other = synth_distort(sphere_cloud(900), luma_sigma=4, seed=1)
    forward = compute_rbfim(original, other)
    backward = compute_rbfim(other, original)
    assert forward.n_distorted == 900
    assert backward.n_distorted == original.count
    assert forward.d_rbfim != backward.d_rbfim


def test_worker_count_is_irrelevant(original):
    noisy = synth_distort(original, luma_sigma=6, seed=2)
    serial = compute_rbfim(original, noisy, RBFIMConfig(workers=1))
    parallel = compute_rbfim(original, noisy, RBFIMConfig(workers=4))
    assert serial.d_rbfim == parallel.d_rbfim
    assert serial.n_subdomains == parallel.n_subdomains


def test_reference_fraction_is_reproducible(original):
    noisy = synth_distort(original, luma_sigma=6, seed=2)
    cfg = RBFIMConfig(ref_fraction=0.3, rng_seed=11)
    a = compute_rbfim(original, noisy, cfg)
    assert a.n_reference == math.ceil(0.3 * original.count)
    assert a.d_rbfim == compute_rbfim(original, noisy, cfg).d_rbfim


def test_original_side_field_keeps_identity(original):
    report = compute_rbfim(original, original, RBFIMConfig(field_side="original"))
    assert report.d_rbfim <= 1e-6


def test_other_kernels_and_curvature(original):
    noisy = synth_distort(original, luma_sigma=6, seed=2)
    tps = compute_rbfim(original, noisy, RBFIMConfig(kernel=KernelKind.THIN_PLATE_SPLINE))
    assert tps.config.kernel is KernelKind.THIN_PLATE_SPLINE
    assert tps.d_rbfim > 0

    geometry_only = sphere_cloud(1500, colors=False)
    curv = compute_rbfim(geometry_only, geometry_only, RBFIMConfig(feature=FeatureKind.curvature(12)))
    assert curv.d_rbfim <= 1e-6


def test_luma_needs_colors():
    bare = sphere_cloud(300, colors=False)
    with pytest.raises(MissingColorsError):
        compute_rbfim(bare, bare)


def test_too_few_distinct_points():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 1, 0]], dtype=float)
    cloud = PointCloud(positions=pts, colors=np.full((4, 3), 100, dtype=np.uint8))
    with pytest.raises(InsufficientPointsError):
        compute_rbfim(cloud, cloud)




@pytest.mark.parametrize("kind", list(KernelKind))
def test_identity_pair_for_every_kernel(original, kind):
    report = compute_rbfim(original, original, RBFIMConfig(kernel=kind))
    assert report.d_rbfim <= 1e-6
    assert report.q_rbfim == 100.0


def test_distorted_cloud_outside_the_root_still_scores():
    original = sphere_cloud(300)
    moved = PointCloud(positions=original.positions + 5000.0, colors=original.colors)

    report = compute_rbfim(original, moved)

    assert report.n_subdomains >= 1
    assert report.fallbacks["outside_support"] == report.n_reference
    assert math.isfinite(report.d_rbfim)


def test_point_order_is_irrelevant(original):
    noisy = synth_distort(original, luma_sigma=6, seed=2)
    rng = np.random.default_rng(17)
    p_o, p_d = rng.permutation(original.count), rng.permutation(noisy.count)
    shuffled_o = PointCloud(positions=original.positions[p_o], colors=original.colors[p_o])
    shuffled_d = PointCloud(positions=noisy.positions[p_d], colors=noisy.colors[p_d])

    a = compute_rbfim(original, noisy)
    b = compute_rbfim(shuffled_o, shuffled_d)

    assert b.n_subdomains == a.n_subdomains
    assert b.d_rbfim == pytest.approx(a.d_rbfim, rel=1e-6, abs=1e-6)


def test_single_cell_is_difference_of_means(original):
    noisy = synth_distort(original, luma_sigma=6, seed=4)
    report = compute_rbfim(original, noisy, RBFIMConfig(grid_scale=1))

    assert report.m_r == 1
    cell = report.per_cell[0]
    assert cell.count == original.count
    assert cell.mean_o == pytest.approx(extract_feature(original, FeatureKind.luminance()).mean(), abs=1e-9)
    assert report.d_rbfim == pytest.approx(abs(cell.mean_d - cell.mean_o), abs=1e-12)


def test_geometry_quantization_is_monotonic(original):
    d = [compute_rbfim(original, synth_distort(original, quant_step=q)).d_rbfim for q in (4, 16, 64)]
    assert all(a < b for a, b in zip(d, d[1:]))


@pytest.mark.slow
def test_luma_noise_is_monotonic_at_scale():
    big = sphere_cloud(50_000)
    d = [compute_rbfim(big, synth_distort(big, luma_sigma=s, seed=5)).d_rbfim for s in (2, 4, 8, 16)]
    assert all(a < b for a, b in zip(d, d[1:]))


@pytest.mark.slow
def test_geometry_quantization_is_monotonic_at_scale():
    big = sphere_cloud(50_000)
    steps = (1, 2, 4, 8)
    reports = [compute_rbfim(big, synth_distort(big, quant_step=q)) for q in steps]

    d = [r.d_rbfim for r in reports]
    assert all(a < b for a, b in zip(d, d[1:]))
    corr = compute_correlations([r.q_rbfim for r in reports], [-float(q) for q in steps], mapping=False)
    assert corr.srocc == pytest.approx(1.0)
