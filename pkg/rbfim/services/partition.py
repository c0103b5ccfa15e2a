"""Adaptive octree decomposition of a normalized cloud into overlapping subdomains."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from rbfim.core.logging import logger
from rbfim.models.schemas import PartitionConfig
from rbfim.services.pc_model import NORMALIZED_EXTENT, FeaturedCloud
from rbfim.services.spatial_index import SpatialIndex, build_index

# Smallest member count a local interpolant can be solved with
MIN_SOLVE_SIZE = 5


@dataclass(frozen=True)
class Subdomain:
    center: np.ndarray
    radius: float
    member_ids: np.ndarray
    level: int
    cell: Tuple[int, int, int]
    taubin_eps: Optional[float] = None
    undersized: bool = False
    oversized: bool = False
    extended: bool = False

    @property
    def size(self) -> int:
        return int(self.member_ids.size)

    @property
    def sort_key(self) -> Tuple[int, int, int, int]:
        return (self.level, *self.cell)


@dataclass(frozen=True)
class SubdomainSet:
    subdomains: Tuple[Subdomain, ...]
    n_merged: int = 0

    def __len__(self) -> int:
        return len(self.subdomains)

    def __iter__(self):
        return iter(self.subdomains)

    def __getitem__(self, i) -> Subdomain:
        return self.subdomains[i]

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.subdomains]).reshape(-1, 3)

    @property
    def radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.subdomains], dtype=np.float64)

    @property
    def n_undersized(self) -> int:
        return sum(1 for s in self.subdomains if s.undersized)

    @property
    def n_extended(self) -> int:
        return sum(1 for s in self.subdomains if s.extended)

    def coverage(self, n_points: int) -> np.ndarray:
        """How many subdomains contain each point id."""
        counts = np.zeros(n_points, dtype=np.int64)
        for s in self.subdomains:
            counts[s.member_ids] += 1
        return counts


def taubin_error(points, radius: float = 1.0) -> float:
    """Max point-to-plane distance to the least-squares plane, divided by `radius`.

    With a unit-normal plane G the gradient norm is 1, so |G|/|grad G| is the
    plain plane distance.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 3:
        return 0.0
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / pts.shape[0]
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    return float(np.max(np.abs(centered @ normal)) / radius)


class _Decomposer:
    def __init__(
        self,
        cloud: FeaturedCloud,
        index: SpatialIndex,
        cfg: PartitionConfig,
        origin: Optional[np.ndarray] = None,
        extent: float = NORMALIZED_EXTENT,
    ):
        self.cloud = cloud
        self.index = index
        self.cfg = cfg
        self.origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
        self.extent = float(extent)

    def cell_geometry(self, level: int, cell: Tuple[int, int, int]) -> Tuple[np.ndarray, float]:
        edge = self.extent / (2 ** level)
        center = self.origin + (np.asarray(cell, dtype=np.float64) + 0.5) * edge
        # center-to-corner: the ball circumscribes the cell
        return center, edge * np.sqrt(3.0) / 2.0

    @staticmethod
    def children(level: int, cell: Tuple[int, int, int]) -> List[Tuple[int, Tuple[int, int, int]]]:
        i, j, k = cell
        return [
            (level + 1, (2 * i + (o & 1), 2 * j + ((o >> 1) & 1), 2 * k + ((o >> 2) & 1)))
            for o in range(8)
        ]

    def visit(self, level: int, cell: Tuple[int, int, int]) -> List[Subdomain]:
        cfg = self.cfg
        center, radius = self.cell_geometry(level, cell)
        ids = self.index.within_radius(center, radius)
        n = ids.size
        if n == 0:
            return []

        def accept(**flags) -> List[Subdomain]:
            return [Subdomain(center=center, radius=float(radius), member_ids=ids, level=level, cell=cell, **flags)]

        if n > cfg.t_max:
            if level >= cfg.max_level:
                return accept(oversized=True)
            if level < cfg.min_forced_level:
                return self.subdivide(level, cell)
            eps = taubin_error(self.index.points[ids], radius)
            if eps > cfg.eps0:
                return self.subdivide(level, cell)
            return accept(taubin_eps=eps)

        if n < cfg.t_min:
            return [self.grow(center, radius, ids, level, cell)]

        return accept()

    def subdivide(self, level: int, cell: Tuple[int, int, int]) -> List[Subdomain]:
        out: List[Subdomain] = []
        for child_level, child in self.children(level, cell):
            out.extend(self.visit(child_level, child))
        return out

    def grow(self, center: np.ndarray, radius: float, ids: np.ndarray, level: int, cell) -> Subdomain:
        """Adjust the radius until the member count enters [t_min, t_max]."""
        cfg = self.cfg
        r_lo, r_hi = radius, None  # largest radius known too small, smallest known too large
        r = radius
        over: Optional[Tuple[float, np.ndarray]] = None
        n = ids.size

        for _ in range(cfg.max_adjust_iters):
            if n < cfg.t_min:
                r_next = r * cfg.growth_factor
                if r_hi is not None and r_next >= r_hi:
                    r_next = np.sqrt(r_lo * r_hi)
            else:
                r_next = r * cfg.shrink_factor
                if r_next <= r_lo:
                    r_next = np.sqrt(r_lo * r_hi)
            r = float(r_next)
            ids = self.index.within_radius(center, r)
            n = ids.size
            if cfg.t_min <= n <= cfg.t_max:
                return Subdomain(center=center, radius=r, member_ids=ids, level=level, cell=cell)
            if n < cfg.t_min:
                r_lo = max(r_lo, r)
            else:
                r_hi = r if r_hi is None else min(r_hi, r)
                if over is None or n < over[1].size:
                    over = (r, ids)

        if over is not None:
            return Subdomain(center=center, radius=over[0], member_ids=over[1], level=level, cell=cell, oversized=True)
        return Subdomain(center=center, radius=r, member_ids=ids, level=level, cell=cell, undersized=True)


def _repair_coverage(subs: List[Subdomain], index: SpatialIndex) -> List[Subdomain]:
    """Stretch the nearest-center subdomain over any point no subdomain holds."""
    covered = np.zeros(index.size, dtype=bool)
    for s in subs:
        covered[s.member_ids] = True
    missing = np.flatnonzero(~covered)
    if missing.size == 0:
        return subs

    center_index = build_index(np.array([s.center for s in subs]))
    owner, dist = center_index.nearest_many(index.points[missing])
    needed = {}
    for k, d in zip(owner.tolist(), dist.tolist()):
        needed[k] = max(needed.get(k, 0.0), d)

    out = list(subs)
    for k, d in sorted(needed.items()):
        s = out[k]
        radius = max(s.radius, d * (1.0 + 1e-9) + 1e-12)
        out[k] = replace(s, radius=radius, member_ids=index.within_radius(s.center, radius), extended=True)
    logger.warning(f"Coverage repair extended {len(needed)} subdomains for {missing.size} uncovered points")
    return out


def _run_octree(worker: _Decomposer, workers: int) -> List[Subdomain]:
    cfg = worker.cfg
    root = (0, (0, 0, 0))
    center, radius = worker.cell_geometry(*root)
    n_root = worker.index.count_within(center, radius)

    if workers > 1 and n_root > cfg.t_max and cfg.min_forced_level > 0:
        # level 0 always subdivides here; fan the octants out
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: worker.visit(*c), worker.children(*root)))
        return [s for part in parts for s in part]
    return worker.visit(*root)


def decompose(
    cloud: FeaturedCloud,
    index: SpatialIndex,
    cfg: Optional[PartitionConfig] = None,
    workers: int = 1,
) -> SubdomainSet:
    """Octree-decompose `cloud` (already indexed by `index`) over the [0, 1024]^3 root.

    A cloud lying wholly outside the root ball is decomposed over its own
    bounding cube instead.
    """
    cfg = cfg or PartitionConfig()
    subs = _run_octree(_Decomposer(cloud, index, cfg), workers)

    if not subs and index.size > 0:
        pts = index.points
        lo = pts.min(axis=0)
        extent = float(np.max(pts.max(axis=0) - lo))
        logger.warning(f"No points inside the normalized root; decomposing over the cloud's own bounding cube (edge {extent:.6g})")
        subs = _run_octree(_Decomposer(cloud, index, cfg, origin=lo, extent=extent if extent > 0 else 1.0), workers)

    subs.sort(key=lambda s: s.sort_key)
    if subs:
        subs = _repair_coverage(subs, index)

    result = SubdomainSet(subdomains=tuple(subs))
    logger.debug(
        f"Decomposed {index.size} points into {len(result)} subdomains "
        f"({result.n_undersized} undersized, {result.n_extended} extended)"
    )
    return result


def merge_small(subset: SubdomainSet, index: SpatialIndex, min_size: int = MIN_SOLVE_SIZE) -> SubdomainSet:
    """Fold subdomains with fewer than `min_size` members into their nearest-center neighbour.

    The neighbour's radius grows until it contains every member of the folded
    subdomain, so coverage is preserved.
    """
    subs: List[Optional[Subdomain]] = list(subset.subdomains)
    merged = 0
    for i, s in enumerate(subs):
        if s is None or s.size >= min_size:
            continue
        others = [j for j, t in enumerate(subs) if t is not None and j != i]
        if not others:
            break
        centers = np.array([subs[j].center for j in others])
        d = np.linalg.norm(centers - s.center, axis=1)
        j = others[int(np.argmin(d))]
        target = subs[j]
        reach = float(np.max(np.linalg.norm(index.points[s.member_ids] - target.center, axis=1)))
        radius = max(target.radius, reach * (1.0 + 1e-9) + 1e-12)
        subs[j] = replace(
            target,
            radius=radius,
            member_ids=index.within_radius(target.center, radius),
            extended=target.extended or radius > target.radius,
        )
        subs[i] = None
        merged += 1

    if merged:
        logger.warning(f"Merged {merged} subdomains smaller than {min_size} members into neighbours")
    kept: Sequence[Subdomain] = tuple(s for s in subs if s is not None)
    return SubdomainSet(subdomains=tuple(kept), n_merged=subset.n_merged + merged)
