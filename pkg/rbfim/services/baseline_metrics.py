"""Classic single-feature metrics: point-to-point, point-to-plane and color MSE/PSNR.

Every metric is computed in both directions (A -> B nearest neighbours and
B -> A) and symmetrized by taking the larger MSE.
"""

import math
from typing import Optional, Tuple

import numpy as np

from rbfim.core.config import get_settings
from rbfim.core.errors import InsufficientPointsError, MissingColorsError
from rbfim.models.schemas import BaselineReport, DirectionalValue, FeatureKind, FeatureName
from rbfim.services.pc_model import FeaturedCloud, PointCloud, normalize_pair, rgb_to_ycbcr
from rbfim.services.spatial_index import SpatialIndex, build_index
from rbfim.utils.metrics import metrics_collector

GEOMETRY_PEAK = 1023.0
COLOR_PEAK = 255.0

_CHANNEL = {FeatureName.LUMINANCE: 0, FeatureName.CHROMA_U: 1, FeatureName.CHROMA_V: 2}


def _psnr(mse: float, numerator: float, cap: Optional[float] = None) -> float:
    cap = get_settings().psnr_cap if cap is None else cap
    if mse <= 0:
        return float(cap)
    return float(min(cap, 10.0 * math.log10(numerator / mse)))


def geometry_psnr(mse: float, cap: Optional[float] = None) -> float:
    return _psnr(mse, 3.0 * GEOMETRY_PEAK ** 2, cap)


def color_psnr(mse: float, cap: Optional[float] = None) -> float:
    return _psnr(mse, COLOR_PEAK ** 2, cap)


def _require_points(*clouds: FeaturedCloud):
    for c in clouds:
        if c.count == 0:
            raise InsufficientPointsError("baseline metrics need non-empty clouds")


def _p2po_direction(src: FeaturedCloud, dst_index: SpatialIndex) -> float:
    _, dist = dst_index.nearest_many(src.positions)
    return float(np.mean(dist ** 2))


def p2po(a: FeaturedCloud, b: FeaturedCloud) -> Tuple[float, float]:
    mse, _ = p2po_directional(a, b)
    return mse, geometry_psnr(mse)


def p2po_directional(a: FeaturedCloud, b: FeaturedCloud) -> Tuple[float, DirectionalValue]:
    _require_points(a, b)
    d1 = _p2po_direction(a, build_index(b.positions))
    d2 = _p2po_direction(b, build_index(a.positions))
    return max(d1, d2), DirectionalValue(d1=d1, d2=d2)


def estimate_normals(positions: np.ndarray, k: int, index: Optional[SpatialIndex] = None) -> np.ndarray:
    """Unit normals from the smallest-eigenvalue eigenvector of each k-NN covariance."""
    index = index or build_index(positions)
    ids, _ = index.knn(positions, k)
    nbrs = index.points[ids]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def _p2pl_direction(src: FeaturedCloud, ref: FeaturedCloud, ref_index: SpatialIndex, normals: np.ndarray) -> float:
    ids, _ = ref_index.nearest_many(src.positions)
    err = src.positions - ref.positions[ids]
    proj = np.einsum("ij,ij->i", err, normals[ids])
    return float(np.mean(proj ** 2))


def p2pl_directional(a: FeaturedCloud, b: FeaturedCloud, k: Optional[int] = None) -> Tuple[float, DirectionalValue]:
    k = k or get_settings().normal_k
    _require_points(a, b)
    for side, c in (("A", a), ("B", b)):
        if c.count <= k:
            raise InsufficientPointsError(f"normal estimation with k={k} needs more than {k} points on side {side}")
    a_index, b_index = build_index(a.positions), build_index(b.positions)
    d1 = _p2pl_direction(a, b, b_index, estimate_normals(b.positions, k, b_index))
    d2 = _p2pl_direction(b, a, a_index, estimate_normals(a.positions, k, a_index))
    return max(d1, d2), DirectionalValue(d1=d1, d2=d2)


def p2pl(a: FeaturedCloud, b: FeaturedCloud, k: Optional[int] = None) -> Tuple[float, float]:
    mse, _ = p2pl_directional(a, b, k)
    return mse, geometry_psnr(mse)


def _channel_values(cloud: FeaturedCloud, channel: FeatureName) -> np.ndarray:
    if cloud.colors is None:
        raise MissingColorsError(f"color metric '{channel.value}' needs RGB colors on both clouds")
    return rgb_to_ycbcr(cloud.colors)[:, _CHANNEL[channel]]


def color_mse_directional(a: FeaturedCloud, b: FeaturedCloud, channel) -> Tuple[float, DirectionalValue]:
    if isinstance(channel, FeatureKind):
        channel = channel.name
    if channel not in _CHANNEL:
        raise ValueError(f"'{channel.value}' is not a color channel")
    _require_points(a, b)
    va, vb = _channel_values(a, channel), _channel_values(b, channel)
    ids_ab, _ = build_index(b.positions).nearest_many(a.positions)
    ids_ba, _ = build_index(a.positions).nearest_many(b.positions)
    d1 = float(np.mean((va - vb[ids_ab]) ** 2))
    d2 = float(np.mean((vb - va[ids_ba]) ** 2))
    return max(d1, d2), DirectionalValue(d1=d1, d2=d2)


def color_mse(a: FeaturedCloud, b: FeaturedCloud, channel=FeatureName.LUMINANCE) -> Tuple[float, float]:
    mse, _ = color_mse_directional(a, b, channel)
    return mse, color_psnr(mse)


def compute_baselines(original: PointCloud, distorted: PointCloud, k: Optional[int] = None) -> BaselineReport:
    """All single-feature columns for one pair, in the original's normalized frame."""
    a, b, _ = normalize_pair(original, distorted)
    with metrics_collector.stage("baselines"):
        mse_po, dir_po = p2po_directional(a, b)
        values = {"mse_p2po": mse_po, "psnr_p2po": geometry_psnr(mse_po)}
        directions = {"p2po": dir_po}

        k = k or get_settings().normal_k
        if a.count > k and b.count > k:
            mse_pl, dir_pl = p2pl_directional(a, b, k)
            values.update(mse_p2pl=mse_pl, psnr_p2pl=geometry_psnr(mse_pl))
            directions["p2pl"] = dir_pl

        if original.has_colors and distorted.has_colors:
            for suffix, channel in (("y", FeatureName.LUMINANCE), ("u", FeatureName.CHROMA_U), ("v", FeatureName.CHROMA_V)):
                mse_c, dir_c = color_mse_directional(a, b, channel)
                values[f"mse_{suffix}"] = mse_c
                values[f"psnr_{suffix}"] = color_psnr(mse_c)
                directions[suffix] = dir_c

    metrics_collector.record_pair("baselines")
    return BaselineReport(**values, directions=directions)


def synth_distort(cloud: PointCloud, quant_step: float = 0.0, luma_sigma: float = 0.0, seed: int = 0) -> PointCloud:
    """Codec stand-in: lattice quantization with duplicate merging plus luminance noise.

    Positions snap to multiples of `quant_step` (input units); points landing on
    the same lattice site merge into one with averaged color.  Noise of std
    `luma_sigma` is added equally to R, G and B, which shifts BT.709 luma by the
    same amount and leaves chroma unchanged before rounding.
    """
    if quant_step < 0 or luma_sigma < 0:
        raise ValueError("quant_step and luma_sigma must be non-negative")
    positions = cloud.positions
    colors = cloud.colors.astype(np.float64) if cloud.has_colors else None

    if quant_step > 0:
        snapped = np.round(positions / quant_step) * quant_step
        uniq, first, inverse, counts = np.unique(
            snapped, axis=0, return_index=True, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        order = np.argsort(first, kind="stable")
        positions = uniq[order]
        if colors is not None:
            sums = np.column_stack([np.bincount(inverse, weights=colors[:, c], minlength=uniq.shape[0]) for c in range(3)])
            colors = (sums / counts[:, None])[order]

    if colors is not None:
        if luma_sigma > 0:
            rng = np.random.default_rng(seed)
            colors = colors + rng.normal(0.0, luma_sigma, size=(colors.shape[0], 1))
        colors = np.clip(np.rint(colors), 0, 255).astype(np.uint8)

    return PointCloud(positions=positions, colors=colors)
