"""Point-cloud data model, PLY I/O, feature extraction and pairwise normalization."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError, PlyParseError

from rbfim.core.errors import (
    DegenerateGeometryError,
    InputError,
    InsufficientPointsError,
    MissingColorsError,
    PlyFormatError,
)
from rbfim.core.logging import logger
from rbfim.models.schemas import FeatureKind, FeatureName
from rbfim.services.spatial_index import build_index

NORMALIZED_EXTENT = 1024.0

# ITU-R BT.709, full range
_KR, _KG, _KB = 0.2126, 0.7152, 0.0722
_CB_DIV, _CR_DIV = 1.8556, 1.5748

_FLOAT_TYPES = {"f4", "f8"}


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True).reshape(-1, 3)
        object.__setattr__(self, "positions", _frozen(pos))
        if self.colors is not None:
            raw = np.asarray(self.colors)
            if raw.size and (raw.min() < 0 or raw.max() > 255):
                raise InputError("color channels must lie in [0, 255]")
            cols = np.array(raw, dtype=np.uint8, copy=True).reshape(-1, 3)
            if cols.shape[0] != pos.shape[0]:
                raise InputError(f"{cols.shape[0]} colors for {pos.shape[0]} points")
            object.__setattr__(self, "colors", _frozen(cols))

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    @property
    def has_colors(self) -> bool:
        return self.colors is not None


@dataclass(frozen=True)
class NormParams:
    p_min: np.ndarray
    l_max: float

    @classmethod
    def from_cloud(cls, cloud: PointCloud) -> "NormParams":
        if cloud.count == 0:
            raise InsufficientPointsError("cannot normalize an empty cloud")
        p_min = cloud.positions.min(axis=0)
        edges = cloud.positions.max(axis=0) - p_min
        l_max = float(edges.max())
        if not l_max > 0:
            raise DegenerateGeometryError("bounding box is degenerate (all points identical)")
        return cls(p_min=_frozen(p_min.copy()), l_max=l_max)

    def apply(self, positions: np.ndarray) -> np.ndarray:
        return NORMALIZED_EXTENT * (np.asarray(positions, dtype=np.float64) - self.p_min) / self.l_max


@dataclass(frozen=True)
class FeaturedCloud:
    positions: np.ndarray
    features: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True).reshape(-1, 3)
        feat = np.array(self.features, dtype=np.float64, copy=True).reshape(-1)
        if feat.shape[0] != pos.shape[0]:
            raise InputError(f"{feat.shape[0]} features for {pos.shape[0]} points")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "features", _frozen(feat))
        if self.colors is not None:
            object.__setattr__(self, "colors", _frozen(np.array(self.colors, dtype=np.uint8, copy=True)))

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def load_ply(path: Union[str, Path]) -> PointCloud:
    """Read the vertex element of an ascii or binary_little_endian PLY file."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")

    try:
        ply = PlyData.read(str(path))
    except PlyHeaderParseError as e:
        raise PlyFormatError(path, f"malformed header: {e}", line=getattr(e, "line", None)) from e
    except PlyElementParseError as e:
        raise PlyFormatError(path, f"truncated or corrupt body: {e}") from e
    except (PlyParseError, ValueError, EOFError) as e:
        raise PlyFormatError(path, str(e)) from e

    if not ply.text and ply.byte_order == ">":
        raise PlyFormatError(path, "unsupported format binary_big_endian")

    try:
        vertex = ply["vertex"]
    except KeyError:
        raise PlyFormatError(path, "no vertex element")

    props = {p.name: p for p in vertex.properties}
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise PlyFormatError(path, f"vertex property '{axis}' missing")
        if getattr(props[axis], "val_dtype", "")[-2:] not in _FLOAT_TYPES:
            raise PlyFormatError(path, f"vertex property '{axis}' must be float or double")

    data = vertex.data
    if vertex.count == 0:
        raise PlyFormatError(path, "zero vertices")
    if len(data) != vertex.count:
        raise PlyFormatError(path, f"truncated body: header declares {vertex.count} vertices, read {len(data)}")

    positions = np.column_stack([np.asarray(data[a], dtype=np.float64) for a in ("x", "y", "z")])

    colors = None
    if all(c in props for c in ("red", "green", "blue")):
        for c in ("red", "green", "blue"):
            if props[c].val_dtype[-2:] != "u1":
                raise PlyFormatError(path, f"vertex property '{c}' must be uchar")
        colors = np.column_stack([np.asarray(data[c], dtype=np.uint8) for c in ("red", "green", "blue")])

    if not np.all(np.isfinite(positions)):
        raise PlyFormatError(path, "non-finite vertex coordinates")

    logger.debug(f"Loaded {vertex.count} points from {path} (colors={'yes' if colors is not None else 'no'})")
    return PointCloud(positions=positions, colors=colors)


def write_ply(path: Union[str, Path], cloud: PointCloud, binary: bool = True) -> None:
    """Write x,y,z (double) and optional red,green,blue (uchar) vertices."""
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.has_colors:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    arr = np.empty(cloud.count, dtype=fields)
    for i, axis in enumerate("xyz"):
        arr[axis] = cloud.positions[:, i]
    if cloud.has_colors:
        for i, c in enumerate(("red", "green", "blue")):
            arr[c] = cloud.colors[:, i]
    PlyData([PlyElement.describe(arr, "vertex")], text=not binary, byte_order="<").write(str(path))


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def rgb_to_ycbcr(colors: np.ndarray) -> np.ndarray:
    """BT.709 full-range conversion; returns (N, 3) float Y, Cb, Cr in [0, 255]."""
    rgb = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    y = _KR * r + _KG * g + _KB * b
    cb = (b - y) / _CB_DIV + 128.0
    cr = (r - y) / _CR_DIV + 128.0
    return np.clip(np.column_stack([y, cb, cr]), 0.0, 255.0)


def surface_variation(positions: np.ndarray, k: int) -> np.ndarray:
    """lambda_min / (lambda_0 + lambda_1 + lambda_2) of each point's k-NN covariance."""
    index = build_index(positions)
    ids, _ = index.knn(positions, k)
    nbrs = index.points[ids]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    total = eig.sum(axis=1)
    out = np.zeros(len(positions))
    nz = total > 0
    out[nz] = eig[nz, 0] / total[nz]
    return out


def extract_feature(cloud: PointCloud, kind: FeatureKind) -> np.ndarray:
    if kind.name.needs_colors:
        if not cloud.has_colors:
            raise MissingColorsError(f"feature '{kind.name.value}' needs RGB colors")
        channel = {FeatureName.LUMINANCE: 0, FeatureName.CHROMA_U: 1, FeatureName.CHROMA_V: 2}[kind.name]
        return rgb_to_ycbcr(cloud.colors)[:, channel]

    if cloud.count <= kind.k:
        raise InsufficientPointsError(f"curvature with k={kind.k} needs more than {kind.k} points, got {cloud.count}")
    return 255.0 * surface_variation(cloud.positions, kind.k)


def merge_duplicates(cloud: FeaturedCloud) -> FeaturedCloud:
    """Collapse exactly coincident positions, averaging their features."""
    uniq, first, inverse, counts = np.unique(
        cloud.positions, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    if uniq.shape[0] == cloud.count:
        return cloud
    inverse = inverse.reshape(-1)
    sums = np.bincount(inverse, weights=cloud.features, minlength=uniq.shape[0])
    means = sums / counts
    # keep first-occurrence order
    order = np.argsort(first, kind="stable")
    colors = cloud.colors[first[order]] if cloud.colors is not None else None
    logger.debug(f"Merged {cloud.count - uniq.shape[0]} duplicate positions")
    return FeaturedCloud(positions=uniq[order], features=means[order], colors=colors)


def normalize_pair(
    original: PointCloud,
    distorted: PointCloud,
    kind: Optional[FeatureKind] = None,
) -> Tuple[FeaturedCloud, FeaturedCloud, NormParams]:
    """Map both clouds into the original's [0, 1024] frame and attach features.

    ``kind=None`` attaches zero features, for geometry-only consumers.
    """
    if original.count == 0 or distorted.count == 0:
        raise InsufficientPointsError("both clouds must contain at least one point")
    params = NormParams.from_cloud(original)

    def featured(cloud: PointCloud) -> FeaturedCloud:
        feats = extract_feature(cloud, kind) if kind is not None else np.zeros(cloud.count)
        return FeaturedCloud(positions=params.apply(cloud.positions), features=feats, colors=cloud.colors)

    return featured(original), featured(distorted), params
