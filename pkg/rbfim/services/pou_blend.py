"""Partition-of-unity blending of local interpolants into a global feature field."""

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np

from rbfim.core.logging import logger
from rbfim.models.schemas import KernelKind
from rbfim.services.partition import Subdomain, SubdomainSet
from rbfim.services.pc_model import FeaturedCloud
from rbfim.services.rbf_core import LocalRBF, solve_local
from rbfim.services.spatial_index import SpatialIndex, build_index

# Weight used when a query coincides with a subdomain center
CENTER_WEIGHT = 1e18
CENTER_DIST = 1e-9

_CHUNK = 256


@dataclass(frozen=True)
class GlobalFeatureField:
    subdomains: SubdomainSet
    locals: Tuple[LocalRBF, ...]
    center_index: SpatialIndex
    max_radius: float

    def __post_init__(self):
        if len(self.locals) != len(self.subdomains):
            raise ValueError("one local interpolant per subdomain is required")
        if len(self.locals) == 0:
            raise ValueError("field needs at least one subdomain")

    @property
    def solver_counts(self) -> Dict[str, int]:
        counts = Counter(rbf.solver for rbf in self.locals)
        return {k: counts.get(k, 0) for k in ("lu", "ridge", "lstsq")}


def _weights(d: np.ndarray, radius: float) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    w = np.zeros_like(d)
    inside = d < radius
    center = inside & (d <= CENTER_DIST)
    regular = inside & ~center
    dr = d[regular]
    w[regular] = ((radius - dr) / (radius * dr)) ** 2
    w[center] = CENTER_WEIGHT
    return w


def blend_weight(p, sub: Subdomain) -> float:
    d = float(np.linalg.norm(np.asarray(p, dtype=np.float64) - sub.center))
    return float(_weights(np.array([d]), sub.radius)[0])


def _candidates(field: GlobalFeatureField, p: np.ndarray) -> List[Tuple[int, float]]:
    """(subdomain index, w_k) for every subdomain whose support holds p, ascending index."""
    ids = field.center_index.within_radius(p, field.max_radius * (1.0 + 1e-12))
    out = []
    for k in ids.tolist():
        w = blend_weight(p, field.subdomains[k])
        if w > 0.0:
            out.append((k, w))
    return out


def blend_coefficients(field: GlobalFeatureField, p) -> Tuple[np.ndarray, np.ndarray]:
    """Subdomain ids and Lambda_k(p) = w_k / sum w; empty when p is outside every support."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    cands = _candidates(field, p)
    if not cands:
        return np.empty(0, dtype=np.int64), np.empty(0)
    ids = np.array([k for k, _ in cands], dtype=np.int64)
    w = np.array([w for _, w in cands])
    return ids, w / w.sum()


def eval_global(field: GlobalFeatureField, p) -> float:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    total = 0.0
    acc = 0.0
    for k, w in _candidates(field, p):
        acc += w * float(field.locals[k].evaluate(p)[0])
        total += w
    if total > 0.0:
        return acc / total
    k, _ = field.center_index.nearest(p)
    return float(field.locals[k].evaluate(p)[0])


def _contributions(field: GlobalFeatureField, q_index: SpatialIndex, ks: Iterable[int]):
    out = []
    for k in ks:
        sub = field.subdomains[k]
        ids = q_index.within_radius(sub.center, sub.radius)
        if ids.size == 0:
            continue
        pts = q_index.points[ids]
        w = _weights(np.linalg.norm(pts - sub.center, axis=1), sub.radius)
        out.append((ids, w, field.locals[k].evaluate(pts)))
    return out


def eval_global_many(field: GlobalFeatureField, points, workers: int = 1) -> Tuple[np.ndarray, int]:
    """Evaluate the field at every row of `points`.

    Contributions are accumulated in ascending subdomain order whatever the
    worker count, so the result does not depend on scheduling.  Returns the
    values and the number of queries that needed the nearest-center fallback.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    q = pts.shape[0]
    if q == 0:
        return np.empty(0), 0
    q_index = build_index(pts)
    num = np.zeros(q)
    den = np.zeros(q)

    m = len(field.subdomains)
    chunks = [range(s, min(s + _CHUNK, m)) for s in range(0, m, _CHUNK)]

    def accumulate(parts):
        for ids, w, f in parts:
            num[ids] += w * f
            den[ids] += w

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for parts in pool.map(lambda ks: _contributions(field, q_index, ks), chunks):
                accumulate(parts)
    else:
        for ks in chunks:
            accumulate(_contributions(field, q_index, ks))

    out = np.empty(q)
    covered = den > 0.0
    out[covered] = num[covered] / den[covered]

    outside = np.flatnonzero(~covered)
    if outside.size:
        owners, _ = field.center_index.nearest_many(pts[outside])
        for k in np.unique(owners).tolist():
            sel = outside[owners == k]
            out[sel] = field.locals[k].evaluate(pts[sel])
    return out, int(outside.size)


def build_field(
    cloud: FeaturedCloud,
    subset: SubdomainSet,
    kind: KernelKind = KernelKind.GAUSSIAN,
    workers: int = 1,
) -> GlobalFeatureField:
    """Solve one local interpolant per subdomain and index the centers."""
    subs = list(subset.subdomains)
    if workers > 1 and len(subs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            locals_ = tuple(pool.map(lambda s: solve_local(s, cloud, kind), subs))
    else:
        locals_ = tuple(solve_local(s, cloud, kind) for s in subs)

    field = GlobalFeatureField(
        subdomains=subset,
        locals=locals_,
        center_index=build_index(subset.centers),
        max_radius=float(subset.radii.max()),
    )
    counts = field.solver_counts
    if counts["ridge"] or counts["lstsq"]:
        logger.warning(
            f"{counts['ridge']} ridge and {counts['lstsq']} least-squares fallbacks "
            f"among {len(subs)} local solves"
        )
    return field
