from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from contextlib import asynccontextmanager

from rbfim.core.config import get_settings
from rbfim.core.errors import ConfigError, InputError, NumericError, RBFIMError
from rbfim.core.logging import logger
from rbfim.api.v1 import compare, health
from rbfim.models.schemas import ErrorResponse


settings = get_settings()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Manage application lifecycle"""
    logger.info(f"Starting {settings.app_name} v{settings.app_version}")
    logger.info(f"Worker threads per request: {settings.resolved_threads()}")
    logger.info(f"Debug mode: {settings.debug}")
    yield
    logger.info("Shutting down application")


app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="""
    # RBFIM Point Cloud Quality Service

    Full-reference point cloud quality assessment over HTTP.

    ## Quick Start
    1. Place the original and distorted PLY files where the server can read them
    2. `POST /v1/compare` with their paths
    3. Optionally set `with_baselines` for p2po / p2pl / color PSNR

    ## Monitoring
    - Prometheus scrape target: `/metrics/prometheus`
    """,
    license_info={
        "name": "MIT License",
        "url": "https://opensource.org/licenses/MIT",
    },
    docs_url="/docs",
    redoc_url="/redoc",
    openapi_url="/openapi.json",
    lifespan=lifespan
)


app.include_router(
    compare.router,
    prefix="/v1",
    tags=["Quality Assessment"]
)

app.include_router(
    health.router,
    prefix="",
    tags=["Health & Monitoring"]
)


@app.get("/")
async def root():
    """Root endpoint"""
    return {
        "name": settings.app_name,
        "version": settings.app_version,
        "status": "running",
        "endpoints": {
            "compare": "/v1/compare",
            "health": "/health",
            "metrics": "/metrics/prometheus",
            "docs": "/docs",
        }
    }


def _error(status_code: int, exc: RBFIMError, kind: str) -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content=ErrorResponse(
            error={
                "message": str(exc),
                "type": kind,
                "code": exc.code
            }
        ).model_dump()
    )


@app.exception_handler(InputError)
async def input_error_handler(request: Request, exc: InputError):
    logger.warning(f"Rejected {request.url.path}: {exc}")
    return _error(400, exc, "invalid_input")


@app.exception_handler(ConfigError)
async def config_error_handler(request: Request, exc: ConfigError):
    return _error(422, exc, "invalid_config")


@app.exception_handler(NumericError)
async def numeric_error_handler(request: Request, exc: NumericError):
    logger.error(f"Numeric failure on {request.url.path}: {exc}")
    return _error(500, exc, "numeric_failure")


@app.exception_handler(404)
async def not_found_handler(request: Request, exc):
    """Handle 404 errors"""
    return JSONResponse(
        status_code=404,
        content=ErrorResponse(
            error={
                "message": f"Path {request.url.path} not found",
                "type": "not_found",
                "code": "resource_not_found"
            }
        ).model_dump()
    )
