"""Benchmark harness: manifest ingestion, batch scoring and correlation against MOS."""

import csv
import math
import threading
import time
import warnings
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.optimize import minimize
from scipy.special import expit
from tqdm import tqdm

from rbfim.core.config import get_settings
from rbfim.core.errors import DegenerateStatisticsError, InputError, ManifestError, RBFIMError
from rbfim.core.logging import logger
from rbfim.models.schemas import (
    BenchmarkResult,
    CorrelationStats,
    Manifest,
    ManifestRow,
    RBFIMConfig,
    RowResult,
)
from rbfim.services.baseline_metrics import compute_baselines
from rbfim.services.pc_model import PointCloud, load_ply
from rbfim.services.rbfim_metric import compute_rbfim
from rbfim.utils.metrics import metrics_collector

METRICS = (
    "rbfim", "d_rbfim",
    "p2po", "psnr_p2po",
    "p2pl", "psnr_p2pl",
    "mse_y", "mse_u", "mse_v",
    "psnr_y", "psnr_u", "psnr_v",
)
# "rbfim" scores quality (dB, higher is better); "d_rbfim" is the raw pooled distortion
_RBFIM_FIELD = {"rbfim": "q_rbfim", "d_rbfim": "d_rbfim"}
# Report field backing each baseline metric name
_BASELINE_FIELD = {"p2po": "mse_p2po", "p2pl": "mse_p2pl"}

STATISTICS = ("plcc", "srocc", "krocc", "rmse")

LOGISTIC_MAXITER = 2000


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_manifest(path: Union[str, Path], scale: str = "five-point") -> Manifest:
    """Parse a CSV manifest (ref_path,dist_path,mos[,tag]); '#' lines are comments.

    Relative paths resolve against the manifest's directory.  With
    ``scale="percentage"`` MOS values are divided by 20.
    """
    path = Path(path)
    if scale not in ("five-point", "percentage"):
        raise ManifestError(path, f"unknown MOS scale '{scale}'")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ManifestError(path, f"cannot read manifest: {e}") from e

    numbered = [(i, line) for i, line in enumerate(text.splitlines(), start=1)
                if line.strip() and not line.lstrip().startswith("#")]
    if not numbered:
        raise ManifestError(path, "empty manifest")

    reader = csv.reader([line for _, line in numbered])
    header = [h.strip() for h in next(reader)]
    for required in ("ref_path", "dist_path", "mos"):
        if required not in header:
            raise ManifestError(path, f"header lacks '{required}'", numbered[0][0])
    col = {name: header.index(name) for name in header}

    base = path.parent
    rows: List[ManifestRow] = []
    for (line_no, _), fields in zip(numbered[1:], reader):
        if len(fields) < 3:
            raise ManifestError(path, "expected at least ref_path,dist_path,mos", line_no)
        try:
            mos = float(fields[col["mos"]])
        except ValueError:
            raise ManifestError(path, f"mos '{fields[col['mos']]}' is not a number", line_no)
        if not math.isfinite(mos):
            raise ManifestError(path, "mos must be finite", line_no)
        if scale == "percentage":
            mos /= 20.0

        def resolve(p: str) -> str:
            p = Path(p.strip())
            return str(p if p.is_absolute() else base / p)

        tag = fields[col["tag"]].strip() if "tag" in col and col["tag"] < len(fields) else ""
        rows.append(ManifestRow(
            ref_path=resolve(fields[col["ref_path"]]),
            dist_path=resolve(fields[col["dist_path"]]),
            mos=mos,
            tag=tag,
        ))

    if not rows:
        raise ManifestError(path, "manifest has a header but no rows")
    return Manifest(rows=rows, scale=scale, source=str(path))


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def logistic(x, beta) -> np.ndarray:
    """Four-parameter monotonic logistic b1 * (0.5 - 1 / (1 + exp(b2 (x - b3)))) + b4."""
    b1, b2, b3, b4 = beta
    return b1 * (0.5 - expit(-b2 * (np.asarray(x, dtype=np.float64) - b3))) + b4


def _validate_pair(pred, mos) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(mos, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DegenerateStatisticsError(f"length mismatch: {x.size} predictions, {y.size} MOS values")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateStatisticsError("non-finite predictions or MOS values")
    return x, y


def fit_logistic(pred, mos) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares logistic mapping of predictions onto the MOS scale."""
    x, y = _validate_pair(pred, mos)
    if x.size == 0:
        raise DegenerateStatisticsError("nothing to fit")
    if np.ptp(x) == 0:
        beta = np.array([0.0, 0.0, float(x.mean()), float(y.mean())])
        return beta, np.full_like(y, y.mean())

    sd = float(x.std())
    sign = 1.0
    if np.ptp(y) > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = stats.pearsonr(x, y)[0]
        sign = -1.0 if r < 0 else 1.0

    slope, intercept = np.polyfit(x, y, 1)
    b2_lin = 1e-3 / sd
    starts = [
        np.array([sign * max(np.ptp(y), 1e-12), 1.0 / sd, x.mean(), y.mean()]),
        np.array([4.0 * slope / b2_lin, b2_lin, x.mean(), intercept + slope * x.mean()]),
    ]

    def sse(beta):
        return float(np.sum((logistic(x, beta) - y) ** 2))

    best_beta, best_sse = None, np.inf
    for start in starts:
        res = minimize(
            sse,
            start,
            method="Nelder-Mead",
            options={"maxiter": LOGISTIC_MAXITER, "maxfev": 5 * LOGISTIC_MAXITER, "xatol": 1e-12, "fatol": 1e-16},
        )
        if res.fun < best_sse:
            best_beta, best_sse = np.asarray(res.x), float(res.fun)
    return best_beta, logistic(x, best_beta)


def compute_correlations(pred, mos, mapping: bool = True) -> CorrelationStats:
    """PLCC/SROCC/KROCC/RMSE of predictions against MOS.

    Rank statistics use the raw predictions; PLCC and RMSE use the logistic
    mapping unless ``mapping=False``.
    """
    x, y = _validate_pair(pred, mos)
    if x.size < 3:
        raise DegenerateStatisticsError(f"need at least 3 samples, got {x.size}")
    if np.ptp(y) == 0:
        raise DegenerateStatisticsError("MOS values are all identical")

    if np.ptp(x) == 0:
        return CorrelationStats(
            plcc=float("nan"), srocc=float("nan"), krocc=float("nan"),
            rmse=float(np.sqrt(np.mean((y - y.mean()) ** 2))),
            beta=[0.0, 0.0, float(x[0]), float(y.mean())], n=int(x.size),
            degenerate=True, note="constant predictions",
        )

    srocc = float(stats.spearmanr(x, y)[0])
    krocc = float(stats.kendalltau(x, y)[0])
    if mapping:
        beta, mapped = fit_logistic(x, y)
        beta_list = [float(b) for b in beta]
    else:
        mapped, beta_list = x, []

    if np.ptp(mapped) == 0:
        plcc = float("nan")
    else:
        plcc = float(stats.pearsonr(mapped, y)[0])
    rmse = float(np.sqrt(np.mean((mapped - y) ** 2)))
    return CorrelationStats(plcc=plcc, srocc=srocc, krocc=krocc, rmse=rmse, beta=beta_list, n=int(x.size))


def _degenerate(n: int, note: str) -> CorrelationStats:
    nan = float("nan")
    return CorrelationStats(plcc=nan, srocc=nan, krocc=nan, rmse=nan, n=n, degenerate=True, note=note)


def _stats_for(rows: Sequence[RowResult], metric: str) -> CorrelationStats:
    pairs = [(r.scores[metric], r.mos) for r in rows if r.status == "ok" and metric in r.scores]
    pred = [p for p, _ in pairs]
    mos = [m for _, m in pairs]
    try:
        return compute_correlations(pred, mos)
    except DegenerateStatisticsError as e:
        return _degenerate(len(pairs), str(e))


def compare_metrics(stats_by_metric: Dict[str, CorrelationStats]) -> Dict[str, Dict[str, Dict[str, str]]]:
    """'>' where the row metric beats the column metric on a statistic, '<' where it loses."""
    out: Dict[str, Dict[str, Dict[str, str]]] = {}
    names = list(stats_by_metric)
    for stat in STATISTICS:
        table: Dict[str, Dict[str, str]] = {}
        for a in names:
            table[a] = {}
            for b in names:
                if a == b:
                    continue
                va = getattr(stats_by_metric[a], stat)
                vb = getattr(stats_by_metric[b], stat)
                if math.isnan(va) or math.isnan(vb):
                    table[a][b] = "="
                    continue
                # correlations: larger magnitude wins; rmse: smaller wins
                sa, sb = (abs(va), abs(vb)) if stat != "rmse" else (-va, -vb)
                table[a][b] = ">" if sa > sb else "<" if sa < sb else "="
        out[stat] = table
    return out


def rank_metrics(stats_by_tag: Dict[str, Dict[str, CorrelationStats]]) -> Dict[str, Dict[str, float]]:
    """Mean rank of every metric per statistic across tags.

    Within a tag, correlations rank by magnitude (largest first) and RMSE by
    value (smallest first); ties share the average rank and undefined values
    rank last.
    """
    if not stats_by_tag:
        return {}
    metrics = list(next(iter(stats_by_tag.values())))
    totals = {m: {s: 0.0 for s in STATISTICS} for m in metrics}
    for block in stats_by_tag.values():
        for stat in STATISTICS:
            values = np.array([getattr(block[m], stat) for m in metrics], dtype=np.float64)
            keys = values if stat == "rmse" else -np.abs(values)
            keys = np.where(np.isnan(keys), np.inf, keys)
            for m, r in zip(metrics, stats.rankdata(keys, method="average")):
                totals[m][stat] += float(r)
    n_tags = len(stats_by_tag)
    return {m: {s: totals[m][s] / n_tags for s in STATISTICS} for m in metrics}


# ---------------------------------------------------------------------------
# Batch execution
# ---------------------------------------------------------------------------

class CloudCache:
    """Small LRU of loaded clouds; reference clouds repeat across manifest rows."""

    def __init__(self, max_size: int = 8):
        self.max_size = max_size
        self._cache: "OrderedDict[str, PointCloud]" = OrderedDict()
        self._lock = threading.Lock()

    def get(self, path: str) -> PointCloud:
        with self._lock:
            if path in self._cache:
                self._cache.move_to_end(path)
                return self._cache[path]
        cloud = load_ply(path)
        with self._lock:
            self._cache[path] = cloud
            self._cache.move_to_end(path)
            while len(self._cache) > self.max_size:
                self._cache.popitem(last=False)
        return cloud


def score_pair(ref: PointCloud, dist: PointCloud, metrics: Sequence[str], cfg: RBFIMConfig) -> Tuple[Dict[str, float], Dict[str, float]]:
    scores: Dict[str, float] = {}
    timings: Dict[str, float] = {}
    rbfim_wanted = [m for m in metrics if m in _RBFIM_FIELD]
    if rbfim_wanted:
        start = time.perf_counter()
        metric_report = compute_rbfim(ref, dist, cfg)
        timings["rbfim"] = time.perf_counter() - start
        for m in rbfim_wanted:
            scores[m] = float(getattr(metric_report, _RBFIM_FIELD[m]))

    wanted = [m for m in metrics if m not in _RBFIM_FIELD]
    if wanted:
        start = time.perf_counter()
        report = compute_baselines(ref, dist).scores()
        timings["baselines"] = time.perf_counter() - start
        for m in wanted:
            field = _BASELINE_FIELD.get(m, m)
            if field not in report:
                raise InputError(f"metric '{m}' could not be computed for this pair (colors or points missing)")
            scores[m] = report[field]
    return scores, timings


def run_benchmark(
    manifest: Manifest,
    metrics: Optional[Sequence[str]] = None,
    cfg: Optional[RBFIMConfig] = None,
    workers: Optional[int] = None,
    progress: bool = False,
) -> BenchmarkResult:
    metrics = list(metrics or METRICS)
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise InputError(f"unknown metrics: {', '.join(unknown)}")
    if not manifest.rows:
        raise ManifestError(manifest.source or "<manifest>", "empty manifest")

    cfg = cfg or RBFIMConfig()
    workers = get_settings().resolved_threads(workers)
    workers = max(1, min(workers, len(manifest.rows)))
    if workers > 1:
        # rows already run in parallel
        cfg = cfg.model_copy(update={"workers": 1})

    cache = CloudCache()

    def evaluate(item: Tuple[int, ManifestRow]) -> RowResult:
        i, row = item
        result = RowResult(index=i, ref_path=row.ref_path, dist_path=row.dist_path, mos=row.mos, tag=row.tag)
        try:
            ref = cache.get(row.ref_path)
            dist = load_ply(row.dist_path)
            result.scores, result.timings = score_pair(ref, dist, metrics, cfg)
            metrics_collector.record_row(True)
        except RBFIMError as e:
            result.status, result.error = "failed", str(e)
            metrics_collector.record_row(False)
            logger.error(f"Row {i} failed: {e}", extra={"row": i})
        except Exception as e:
            result.status, result.error = "failed", f"{type(e).__name__}: {e}"
            metrics_collector.record_row(False)
            logger.exception(f"Row {i} failed unexpectedly", extra={"row": i})
        return result

    items = list(enumerate(manifest.rows))
    with tqdm(total=len(items), desc="benchmark", unit="pair", disable=not progress) as bar:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = []
                for r in pool.map(evaluate, items):
                    rows.append(r)
                    bar.update(1)
        else:
            rows = []
            for item in items:
                rows.append(evaluate(item))
                bar.update(1)

    overall = {m: _stats_for(rows, m) for m in metrics}
    by_tag: Dict[str, Dict[str, CorrelationStats]] = {}
    tags = sorted({r.tag for r in rows if r.tag})
    for tag in tags:
        tagged = [r for r in rows if r.tag == tag]
        by_tag[tag] = {m: _stats_for(tagged, m) for m in metrics}

    failed = sum(1 for r in rows if r.status == "failed")
    logger.info(f"Benchmark finished: {len(rows) - failed} rows scored, {failed} failed, metrics={metrics}")
    return BenchmarkResult(
        metrics=metrics,
        rows=rows,
        stats=overall,
        stats_by_tag=by_tag,
        stats_rank=rank_metrics(by_tag),
        comparisons=compare_metrics(overall) if len(metrics) >= 2 else {},
    )


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def write_results(result: BenchmarkResult, path: Union[str, Path]) -> None:
    Path(path).write_text(result.model_dump_json(indent=2), encoding="utf-8")


def _fmt(v: Optional[float], width: int = 10) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-".rjust(width)
    return f"{v:{width}.4f}"


def format_stats(stats_by_metric: Dict[str, CorrelationStats], title: str = "ALL") -> str:
    name_w = max([len("metric")] + [len(m) for m in stats_by_metric]) + 2
    lines = [f"[{title}]", "metric".ljust(name_w) + "".join(s.upper().rjust(10) for s in STATISTICS) + "n".rjust(6)]
    for m, s in stats_by_metric.items():
        flag = "  (degenerate)" if s.degenerate else ""
        lines.append(m.ljust(name_w) + "".join(_fmt(getattr(s, st)) for st in STATISTICS) + str(s.n).rjust(6) + flag)
    return "\n".join(lines)


def format_table(result: BenchmarkResult) -> str:
    """Human-readable per-row scores followed by the statistics blocks."""
    metrics = result.metrics
    lines = ["#".rjust(4) + "  " + "status".ljust(8) + "mos".rjust(10) + "".join(m.rjust(12) for m in metrics)]
    for r in result.rows:
        cells = "".join(_fmt(r.scores.get(m), 12) for m in metrics)
        lines.append(str(r.index).rjust(4) + "  " + r.status.ljust(8) + _fmt(r.mos) + cells)
        if r.error:
            lines.append("      " + r.error)
    lines.append("")
    lines.append(format_stats(result.stats))
    for tag, block in result.stats_by_tag.items():
        lines.append("")
        lines.append(format_stats(block, title=tag))
    if result.stats_rank:
        name_w = max([len("metric")] + [len(m) for m in result.stats_rank]) + 2
        lines.append("")
        lines.append(f"[MEAN RANK over {len(result.stats_by_tag)} tags]")
        lines.append("metric".ljust(name_w) + "".join(s.upper().rjust(10) for s in STATISTICS))
        for m, ranks in result.stats_rank.items():
            lines.append(m.ljust(name_w) + "".join(f"{ranks[s]:10.2f}" for s in STATISTICS))
    return "\n".join(lines)
