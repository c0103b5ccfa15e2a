from prometheus_client import Counter, Histogram, Gauge, generate_latest, write_to_textfile, REGISTRY
from contextlib import contextmanager
from typing import Dict, Any, Iterator, Optional
import threading
import time

import psutil

from rbfim.core.config import get_settings
from rbfim.core.logging import logger


# Metrics
stage_duration = Histogram(
    'rbfim_stage_duration_seconds',
    'Wall-clock time per pipeline stage',
    ['stage'],
    buckets=[0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 60.0, float('inf')]
)

subdomain_count = Histogram(
    'rbfim_subdomains',
    'Number of subdomains per feature field',
    buckets=[1, 10, 100, 500, 1000, 5000, 10000, 50000, float('inf')]
)

solve_fallbacks_total = Counter(
    'rbfim_solve_fallbacks_total',
    'Local solves that needed a stabilised fallback',
    ['kind']  # ridge, lstsq
)

pairs_computed_total = Counter(
    'rbfim_pairs_computed_total',
    'Cloud pairs scored',
    ['metric']
)

benchmark_rows_total = Counter(
    'rbfim_benchmark_rows_total',
    'Benchmark manifest rows processed',
    ['status']  # ok, failed
)

memory_usage_bytes = Gauge(
    'rbfim_memory_usage_bytes',
    'Process memory usage in bytes',
    ['type']  # rss, vms
)


class MetricsCollector:
    def __init__(self):
        self.settings = get_settings()
        self._start_time = time.time()
        self._lock = threading.Lock()
        self._pairs = 0
        self._failed_rows = 0

    @contextmanager
    def stage(self, name: str, timings: Optional[Dict[str, float]] = None) -> Iterator[None]:
        """Time a pipeline stage into the histogram and, optionally, a report dict."""
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            if self.settings.enable_metrics:
                stage_duration.labels(stage=name).observe(elapsed)
            if timings is not None:
                timings[name] = timings.get(name, 0.0) + elapsed
            logger.debug(f"stage {name} took {elapsed:.4f}s")

    def record_field(self, n_subdomains: int, fallbacks: Dict[str, int]):
        if not self.settings.enable_metrics:
            return
        subdomain_count.observe(n_subdomains)
        for kind in ("ridge", "lstsq"):
            if fallbacks.get(kind):
                solve_fallbacks_total.labels(kind=kind).inc(fallbacks[kind])

    def record_pair(self, metric: str):
        with self._lock:
            self._pairs += 1
        if self.settings.enable_metrics:
            pairs_computed_total.labels(metric=metric).inc()

    def record_row(self, ok: bool):
        with self._lock:
            if not ok:
                self._failed_rows += 1
        if self.settings.enable_metrics:
            benchmark_rows_total.labels(status="ok" if ok else "failed").inc()

    def update_memory_metrics(self) -> Dict[str, float]:
        """Snapshot process memory (MB) and mirror it into the gauges."""
        info = psutil.Process().memory_info()
        memory_usage_bytes.labels(type='rss').set(info.rss)
        memory_usage_bytes.labels(type='vms').set(info.vms)
        return {"rss_mb": info.rss / (1024 ** 2), "vms_mb": info.vms / (1024 ** 2)}

    def get_metrics_summary(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "uptime_seconds": time.time() - self._start_time,
                "pairs_computed": self._pairs,
                "rows_failed": self._failed_rows,
                **self.update_memory_metrics(),
            }

    def get_prometheus_metrics(self) -> str:
        self.update_memory_metrics()
        return generate_latest().decode('utf-8')

    def write_textfile(self, path: str):
        """Dump the registry in text exposition format (node-exporter textfile style)."""
        self.update_memory_metrics()
        write_to_textfile(path, REGISTRY)
        logger.info(f"Wrote metrics to {path}")


metrics_collector = MetricsCollector()
