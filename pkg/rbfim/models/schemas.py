from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional, Dict, Any, Literal
from datetime import datetime, timezone
from enum import Enum


class KernelKind(str, Enum):
    """Basis function kernels; values are the CLI spellings."""

    GAUSSIAN = "gaussian"
    TRIHARMONIC = "triharmonic"
    MULTIQUADRIC = "multiquadric"
    INVERSE_MULTIQUADRIC = "inv-multiquadric"
    THIN_PLATE_SPLINE = "thin-plate"
    MULTIVARIATE_SPLINE = "multivariate-spline"


class FeatureName(str, Enum):
    LUMINANCE = "luma"
    CHROMA_U = "cb"
    CHROMA_V = "cr"
    CURVATURE = "curvature"

    @property
    def needs_colors(self) -> bool:
        return self is not FeatureName.CURVATURE


class FeatureKind(BaseModel):
    """Per-point scalar feature; `k` only matters for curvature."""

    model_config = ConfigDict(frozen=True)

    name: FeatureName = FeatureName.LUMINANCE
    k: int = Field(default=12, description="Neighbour count for curvature")

    @model_validator(mode="after")
    def curvature_needs_neighbours(self):
        if self.name is FeatureName.CURVATURE and self.k < 3:
            raise ValueError("curvature requires k >= 3")
        return self

    @classmethod
    def luminance(cls) -> "FeatureKind":
        return cls(name=FeatureName.LUMINANCE)

    @classmethod
    def chroma_u(cls) -> "FeatureKind":
        return cls(name=FeatureName.CHROMA_U)

    @classmethod
    def chroma_v(cls) -> "FeatureKind":
        return cls(name=FeatureName.CHROMA_V)

    @classmethod
    def curvature(cls, k: int = 12) -> "FeatureKind":
        return cls(name=FeatureName.CURVATURE, k=k)


class PartitionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_min: int = Field(default=20, ge=1, description="Minimum points per subdomain")
    t_max: int = Field(default=40, ge=2, description="Maximum points per subdomain")
    eps0: float = Field(default=0.01, ge=0, description="Taubin error threshold")
    min_forced_level: int = Field(default=4, ge=0, description="Levels subdivided without an error test")
    growth_factor: float = Field(default=1.1, gt=1.0)
    shrink_factor: float = Field(default=0.9, gt=0.0, lt=1.0)
    max_adjust_iters: int = Field(default=64, ge=1)
    max_level: int = Field(default=21, ge=1, description="Recursion depth bound")

    @model_validator(mode="after")
    def window_is_ordered(self):
        if self.t_min >= self.t_max:
            raise ValueError("t_min must be smaller than t_max")
        return self


class RBFIMConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kernel: KernelKind = KernelKind.GAUSSIAN
    partition: PartitionConfig = Field(default_factory=PartitionConfig)
    grid_scale: int = Field(default=16, ge=1, description="Pooling grid cells per axis (L)")
    ref_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    rng_seed: int = 0
    feature: FeatureKind = Field(default_factory=FeatureKind)
    q_cap: float = Field(default=100.0, gt=0.0)
    field_side: Literal["distorted", "original"] = Field(
        default="distorted",
        description="Cloud the feature field is built on; the other cloud supplies reference points",
    )
    workers: int = Field(default=0, ge=0, description="0 = use Settings.threads")


class CellMean(BaseModel):
    cell: int
    count: int
    mean_o: float
    mean_d: float


class MetricReport(BaseModel):
    d_rbfim: float = Field(..., ge=0.0)
    q_rbfim: float
    m_r: int = Field(..., ge=1)
    per_cell: List[CellMean]
    n_subdomains: int
    n_reference: int
    n_original: int
    n_distorted: int
    n_undersized: int = 0
    n_merged: int = 0
    n_extended: int = 0
    fallbacks: Dict[str, int] = Field(default_factory=dict)
    timings: Dict[str, float] = Field(default_factory=dict)
    config: RBFIMConfig


class DirectionalValue(BaseModel):
    d1: float = Field(..., description="A to B")
    d2: float = Field(..., description="B to A")


class BaselineReport(BaseModel):
    mse_p2po: float
    psnr_p2po: float
    mse_p2pl: Optional[float] = None
    psnr_p2pl: Optional[float] = None
    mse_y: Optional[float] = None
    mse_u: Optional[float] = None
    mse_v: Optional[float] = None
    psnr_y: Optional[float] = None
    psnr_u: Optional[float] = None
    psnr_v: Optional[float] = None
    directions: Dict[str, DirectionalValue] = Field(default_factory=dict)

    def scores(self) -> Dict[str, float]:
        """Flat metric-name -> value mapping, skipping metrics that were not computed."""
        names = (
            "mse_p2po", "psnr_p2po", "mse_p2pl", "psnr_p2pl",
            "mse_y", "mse_u", "mse_v", "psnr_y", "psnr_u", "psnr_v",
        )
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}


class CorrelationStats(BaseModel):
    plcc: float
    srocc: float
    krocc: float
    rmse: float
    beta: List[float] = Field(default_factory=list, description="Logistic parameters b1..b4")
    n: int
    degenerate: bool = False
    note: Optional[str] = None


class ManifestRow(BaseModel):
    ref_path: str
    dist_path: str
    mos: float
    tag: str = ""

    @field_validator("mos")
    @classmethod
    def mos_is_finite(cls, v):
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("mos must be finite")
        return v


class Manifest(BaseModel):
    rows: List[ManifestRow]
    scale: Literal["five-point", "percentage"] = "five-point"
    source: Optional[str] = None


class RowResult(BaseModel):
    index: int
    ref_path: str
    dist_path: str
    mos: float
    tag: str = ""
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None
    scores: Dict[str, float] = Field(default_factory=dict)
    timings: Dict[str, float] = Field(default_factory=dict)


class BenchmarkResult(BaseModel):
    metrics: List[str]
    rows: List[RowResult]
    stats: Dict[str, CorrelationStats]
    stats_by_tag: Dict[str, Dict[str, CorrelationStats]] = Field(default_factory=dict)
    stats_rank: Dict[str, Dict[str, float]] = Field(
        default_factory=dict,
        description="metric -> statistic -> mean rank over tags (1 = best)",
    )
    comparisons: Dict[str, Dict[str, Dict[str, str]]] = Field(
        default_factory=dict,
        description="statistic -> row metric -> column metric -> '>' | '<' | '='",
    )
    created: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


class CompareRequest(BaseModel):
    ref_path: str = Field(..., description="Original (reference) PLY on the server host")
    dist_path: str = Field(..., description="Distorted PLY on the server host")
    config: RBFIMConfig = Field(default_factory=RBFIMConfig)
    with_baselines: bool = False


class CompareResponse(BaseModel):
    report: MetricReport
    baselines: Optional[BaselineReport] = None


class ErrorResponse(BaseModel):
    error: Dict[str, Any]


class HealthResponse(BaseModel):
    status: Literal["healthy", "unhealthy"]
    version: str
    threads: int
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    details: Optional[Dict[str, Any]] = None
