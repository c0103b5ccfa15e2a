from fastapi import APIRouter, Response
import psutil

from rbfim.models.schemas import HealthResponse
from rbfim.utils.metrics import metrics_collector
from rbfim.core.config import get_settings
from rbfim.core.logging import logger


router = APIRouter()
settings = get_settings()


@router.get(
    "/health",
    response_model=HealthResponse,
    summary="Health check",
    description="""
    Check the health status of the quality service.

    Returns the service version, the worker thread count used for
    metric computation and a snapshot of process/system resources.
    """
)
async def health_check():
    try:
        memory = psutil.virtual_memory()
        details = {
            "memory_usage_percent": memory.percent,
            "cpu_usage_percent": psutil.cpu_percent(interval=None),
            **metrics_collector.get_metrics_summary(),
        }
        return HealthResponse(
            status="healthy",
            version=settings.app_version,
            threads=settings.resolved_threads(),
            details=details,
        )
    except Exception as e:
        logger.error(f"Health check failed: {str(e)}")
        return HealthResponse(
            status="unhealthy",
            version=settings.app_version,
            threads=0,
            details={"error": str(e)},
        )


@router.get(
    "/metrics/prometheus",
    response_class=Response,
    summary="Get metrics (Prometheus)",
    description="Stage durations, solve fallbacks and scored pairs in Prometheus exposition format."
)
async def get_prometheus_metrics():
    if not settings.enable_metrics:
        return Response(content="Metrics disabled", status_code=404)

    return Response(
        content=metrics_collector.get_prometheus_metrics(),
        media_type="text/plain; version=0.0.4"
    )
