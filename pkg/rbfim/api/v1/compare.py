import asyncio

from fastapi import APIRouter

from rbfim.core.logging import logger
from rbfim.models.schemas import CompareRequest, CompareResponse, ErrorResponse
from rbfim.services.baseline_metrics import compute_baselines
from rbfim.services.pc_model import load_ply
from rbfim.services.rbfim_metric import compute_rbfim


router = APIRouter()


def _compare(request: CompareRequest) -> CompareResponse:
    original = load_ply(request.ref_path)
    distorted = load_ply(request.dist_path)
    report = compute_rbfim(original, distorted, request.config)
    baselines = compute_baselines(original, distorted) if request.with_baselines else None
    return CompareResponse(report=report, baselines=baselines)


@router.post(
    "/compare",
    response_model=CompareResponse,
    responses={
        400: {"model": ErrorResponse, "description": "Unreadable or unusable input clouds"},
        500: {"model": ErrorResponse, "description": "Internal numeric failure"},
    },
    summary="Score a distorted point cloud",
    description="""
    Compute the RBFIM distortion and quality of `dist_path` against `ref_path`.

    Both paths are read on the server host. Set `with_baselines` to also get
    point-to-point, point-to-plane and per-channel color MSE/PSNR.
    """
)
async def compare(request: CompareRequest):
    logger.info(f"Compare request: {request.ref_path} vs {request.dist_path}")
    # CPU-bound; keep the event loop free
    return await asyncio.to_thread(_compare, request)
