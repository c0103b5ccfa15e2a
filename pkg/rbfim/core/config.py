from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional
from functools import lru_cache

import psutil


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="RBFIM_",
        env_file=".env",
        extra="ignore",
        case_sensitive=False,
    )

    app_name: str = "RBFIM Point Cloud Quality Toolkit"
    app_version: str = "1.0.0"
    debug: bool = False

    # Service surface
    host: str = "127.0.0.1"
    port: int = 8000

    # Parallelism (0 = all logical cores)
    threads: int = 0

    # Quality mapping caps (dB)
    q_cap: float = 100.0
    psnr_cap: float = 100.0

    # Neighbourhood size for normal estimation in point-to-plane
    normal_k: int = 12

    # Logging
    log_level: str = "INFO"
    log_format: str = "json"
    log_file: Optional[str] = None

    # Monitoring
    enable_metrics: bool = True
    metrics_file: Optional[str] = None

    def resolved_threads(self, requested: Optional[int] = None) -> int:
        """Worker count for a run; `requested` overrides the setting when > 0."""
        value = requested if requested else self.threads
        if value and value > 0:
            return value
        return psutil.cpu_count(logical=True) or 1


@lru_cache()
def get_settings() -> Settings:
    return Settings()
