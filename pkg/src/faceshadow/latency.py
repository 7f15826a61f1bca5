"""Per-stage latency statistics, budget verdicts, and CPU-load experiments.

Percentiles use the nearest-rank estimator (the ceil(q*n)-th order statistic),
so a reported tail value is always an element of the observed multiset.  The
standard deviation is the population form.  Durations come from the monotonic
clock; wall time appears only inside wire messages.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ValidationError

STAGES = ("preprocess", "control_gen", "transmit", "total")
LOAD_TAGS = ("idle", "load50", "load90", "custom")


@dataclass(frozen=True)
class LatencyRecord:
    frame_seq: int
    stage: str
    duration: float           # seconds
    load_tag: str = "idle"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"unknown stage {self.stage!r}")
        if self.load_tag not in LOAD_TAGS:
            raise ValidationError(f"unknown load tag {self.load_tag!r}")
        if not math.isfinite(self.duration) or self.duration < 0:
            raise ValidationError(f"duration must be finite and >= 0, got {self.duration}")


@dataclass(frozen=True)
class LatencySummary:
    mean: float
    std: float
    p95: float
    p99: float
    max: float
    count: int
    partial: bool = False     # set when a run ended early

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError("summary needs at least one sample")
        if self.std < 0:
            raise ValidationError("std must be non-negative")
        if not self.p95 <= self.p99 <= self.max:
            raise ValidationError("percentile ordering violated (p95 <= p99 <= max)")

    def as_dict(self) -> dict:
        return {
            "mean": self.mean, "std": self.std, "p95": self.p95,
            "p99": self.p99, "max": self.max, "count": self.count,
            "partial": self.partial,
        }


@dataclass(frozen=True)
class StageBudget:
    preprocess: float = 0.0149
    control_gen: float = 0.0350
    transmit: float = 0.0001
    total: float = 0.0500

    def __post_init__(self):
        parts = self.preprocess + self.control_gen + self.transmit
        if abs(parts - self.total) > 1e-9:
            raise ConfigError(
                f"stage budgets sum to {parts}, expected total {self.total}"
            )

    def for_stage(self, stage: str) -> float:
        if stage not in STAGES:
            raise ValidationError(f"unknown stage {stage!r}")
        return getattr(self, stage)


def nearest_rank(sorted_samples: np.ndarray, q: float) -> float:
    """ceil(q*n)-th order statistic of an ascending array."""
    n = sorted_samples.size
    rank = max(1, math.ceil(q * n))
    return float(sorted_samples[rank - 1])


def summarize(samples, partial: bool = False) -> LatencySummary:
    """Mean, population std, nearest-rank P95/P99 and max of raw durations."""
    arr = np.asarray(list(samples), dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("cannot summarize an empty sample set")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("samples must be finite")
    ordered = np.sort(arr)
    return LatencySummary(
        mean=float(arr.mean()),
        std=float(arr.std()),  # population form
        p95=nearest_rank(ordered, 0.95),
        p99=nearest_rank(ordered, 0.99),
        max=float(ordered[-1]),
        count=int(arr.size),
        partial=partial,
    )


@dataclass(frozen=True)
class BudgetVerdict:
    stage: str
    budget: float
    passed: bool
    mean_margin: float   # budget - observed mean; negative when over budget
    p95_margin: float

    def as_dict(self) -> dict:
        return {
            "stage": self.stage, "budget": self.budget, "passed": self.passed,
            "mean_margin": self.mean_margin, "p95_margin": self.p95_margin,
        }


def check_budget(summary: LatencySummary, budget: StageBudget, stage: str) -> BudgetVerdict:
    """Pass iff both the mean and the P95 fit inside the stage budget."""
    limit = budget.for_stage(stage)
    mean_margin = limit - summary.mean
    p95_margin = limit - summary.p95
    return BudgetVerdict(
        stage=stage,
        budget=limit,
        passed=mean_margin >= 0 and p95_margin >= 0,
        mean_margin=mean_margin,
        p95_margin=p95_margin,
    )


# ---------------------------------------------------------------------------
# CPU load generation

def _spin_forever() -> None:  # pragma: no cover - runs in a child process
    x = 1.0
    while True:
        x = x * 1.0000001 + 1e-9


def resolve_load(load_level) -> tuple[int, str]:
    """Map a load level to (busy-spin worker count, record tag).

    Accepts 'idle', '50', '90', 'N-workers', or a bare integer count.
    """
    ncpu = os.cpu_count() or 1
    if isinstance(load_level, int):
        return load_level, "custom"
    level = str(load_level).strip().lower()
    if level == "idle":
        return 0, "idle"
    if level in ("50", "load50", "50%"):
        return max(1, math.ceil(0.5 * ncpu)), "load50"
    if level in ("90", "load90", "90%"):
        return max(1, math.ceil(0.9 * ncpu)), "load90"
    if level.endswith("-workers"):
        try:
            return int(level.split("-")[0]), "custom"
        except ValueError as exc:
            raise ConfigError(f"bad load level {load_level!r}") from exc
    raise ConfigError(f"bad load level {load_level!r}")


class LoadGenerator:
    """Context manager keeping N busy-spin worker processes alive."""

    def __init__(self, workers: int):
        if workers < 0:
            raise ConfigError("worker count must be >= 0")
        self.workers = workers
        self._procs: list[multiprocessing.Process] = []

    def __enter__(self) -> "LoadGenerator":
        for _ in range(self.workers):
            proc = multiprocessing.Process(target=_spin_forever, daemon=True)
            proc.start()
            self._procs.append(proc)
        return self

    def __exit__(self, *exc) -> None:
        for proc in self._procs:
            proc.terminate()
        for proc in self._procs:
            proc.join(timeout=5.0)
        self._procs.clear()


def run_load_experiment(
    pipeline_config, load_level, duration_s: float, repeats: int = 3
) -> list[LatencySummary]:
    """Run the toy pipeline under synthetic CPU load; one E2E summary per repeat.

    A repeat that dies mid-run contributes a summary marked partial (when any
    samples were collected at all).
    """
    from . import pipeline  # late import: the pipeline depends on this module

    workers, tag = resolve_load(load_level)
    summaries: list[LatencySummary] = []
    for _ in range(max(1, repeats)):
        cfg = replace(pipeline_config, duration_s=duration_s, load_tag=tag)
        with LoadGenerator(workers):
            report = pipeline.run_session(cfg)
        totals = [rec.duration for rec in report.records["total"]]
        if not totals:
            if report.partial:
                raise RuntimeError(f"pipeline produced no samples: {report.error}")
            continue
        summaries.append(summarize(totals, partial=report.partial))
    return summaries


def bench_report(
    pipeline_config,
    load_level,
    duration_s: float,
    repeats: int = 3,
    budget: StageBudget | None = None,
) -> dict:
    """Full benchmark report: per-condition E2E rows plus per-stage budget rows."""
    from . import pipeline  # late import: the pipeline depends on this module

    workers, tag = resolve_load(load_level)
    budget = budget if budget is not None else StageBudget()
    session_reports = []
    for _ in range(max(1, repeats)):
        cfg = replace(pipeline_config, duration_s=duration_s, load_tag=tag)
        with LoadGenerator(workers):
            session_reports.append(pipeline.run_session(cfg))

    pooled: dict[str, list[float]] = {stage: [] for stage in STAGES}
    per_repeat = []
    drops: dict[str, int] = {}
    for rep in session_reports:
        for stage in STAGES:
            pooled[stage].extend(r.duration for r in rep.records[stage])
        totals = [r.duration for r in rep.records["total"]]
        if totals:
            per_repeat.append(summarize(totals, partial=rep.partial).as_dict())
        for name, n in rep.drops.items():
            drops[name] = drops.get(name, 0) + n

    latency_row = summarize(pooled["total"]).as_dict() if pooled["total"] else None
    stages_row = {}
    verdicts = {}
    for stage in STAGES:
        if not pooled[stage]:
            continue
        s = summarize(pooled[stage])
        stages_row[stage] = {
            "budget": budget.for_stage(stage),
            "mean": s.mean, "p95": s.p95, "max": s.max,
        }
        verdicts[stage] = check_budget(s, budget, stage).as_dict()

    return {
        "condition": tag,
        "workers": workers,
        "duration_s": duration_s,
        "repeats": len(session_reports),
        "latency": latency_row,
        "per_repeat": per_repeat,
        "stages": stages_row,
        "budget_verdicts": verdicts,
        "drops": drops,
        "partial": any(rep.partial for rep in session_reports),
    }
