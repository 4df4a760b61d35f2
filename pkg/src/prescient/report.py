"""Benchmark harness and statistics: trial matrices, A12, relative medians.

A benchmark run executes N repeated campaigns per (target, scheduler) cell,
each with a derived RNG seed, and collects the campaign statistics into a
trial matrix.  The statistics layer computes Vargha-Delaney A12 effect
sizes between schedulers and relative-median coverage tables (per target,
the median final coverage of each scheduler normalized so the best
scheduler scores 100, then averaged across targets).  Checkpoints are
execution counts, never wall time, so results reproduce across machines.

Plotting is a thin layer that renders the stored series to standalone SVG;
no statistics live there.
"""

from __future__ import annotations

import csv
import math
import os
import statistics
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from multiprocessing import get_context

from .config import CampaignConfig
from .engine import CampaignStats, run_campaign
from .instrument import run_pass
from .interp import link
from .ir import parse_module
from .reach import build_index
from .cfgstore import CfgDump, validate_dump
from .targets import TargetSpec


@dataclass
class A12Result:
    value: float


def a12(sample_a, sample_b) -> A12Result:
    """Vargha-Delaney effect size: P(a > b) + 0.5 P(a = b) over all pairs.

    Computed by ranking rather than pair enumeration; ties counted half.
    """
    if not sample_a or not sample_b:
        raise ValueError("a12 requires two non-empty samples")
    sb = sorted(sample_b)
    wins = 0.0
    for x in sample_a:
        lo = bisect_left(sb, x)
        hi = bisect_right(sb, x)
        wins += lo + 0.5 * (hi - lo)
    return A12Result(wins / (len(sample_a) * len(sb)))


@dataclass
class TrialMatrix:
    targets: list[str]
    schedulers: list[str]
    trials: int
    budget: dict[str, int]
    # (target, scheduler, trial) -> stats; missing cells were failures.
    cells: dict[tuple[str, str, int], CampaignStats] = field(default_factory=dict)
    failures: list[tuple[str, str, int, str]] = field(default_factory=list)

    def sample(self, target: str, scheduler: str, metric) -> list:
        out = []
        for trial in range(self.trials):
            stats = self.cells.get((target, scheduler, trial))
            if stats is not None:
                out.append(metric(stats))
        return out

    def final_coverage_sample(self, target: str, scheduler: str) -> list[int]:
        return self.sample(target, scheduler, lambda s: s.final_coverage())


def relative_median_table(matrix: TrialMatrix, checkpoints: list[int]) -> dict:
    """Relative median coverage per scheduler, averaged over targets.

    For each checkpoint and target: median coverage per scheduler, scaled so
    the best scheduler on that target scores 100; schedulers are then
    averaged across targets.  Returns {checkpoint: {"per_target": {...},
    "summary": {scheduler: mean}}}.
    """
    out: dict = {}
    for cp in checkpoints:
        per_target: dict[str, dict[str, float]] = {}
        for target in matrix.targets:
            medians = {}
            for sched in matrix.schedulers:
                values = matrix.sample(target, sched, lambda s: s.coverage_at(cp))
                if values:
                    medians[sched] = statistics.median(values)
            best = max(medians.values(), default=0.0)
            per_target[target] = {
                s: (100.0 * m / best if best > 0 else 100.0)
                for s, m in medians.items()
            }
        summary = {}
        for sched in matrix.schedulers:
            ratios = [
                per_target[t][sched] for t in matrix.targets if sched in per_target[t]
            ]
            if ratios:
                summary[sched] = sum(ratios) / len(ratios)
        out[cp] = {"per_target": per_target, "summary": summary}
    return out


def executions_to_fraction(
    stats: CampaignStats, coverable: int, fraction: float, budget: int
) -> int:
    """Executions needed to reach the coverage fraction; censored at 2x budget."""
    target = max(1, math.ceil(coverable * fraction - 1e-9))
    execs = stats.executions_to_coverage(target)
    return execs if execs is not None else 2 * budget


def build_target(spec: TargetSpec):
    """Parse, instrument (in-memory dump) and link one target spec."""
    dump = CfgDump()
    modules = []
    store = _MemStore(dump)
    for src in spec.sources:
        mod = parse_module(src)
        run_pass(mod, store)
        modules.append(mod)
    validate_dump(store.dump)
    index = build_index(store.dump)
    program = link(modules)
    return program, index, store.dump


class _MemStore:
    """In-process stand-in for CfgStore, for benchmark workers and tests."""

    def __init__(self, dump: CfgDump):
        self.dump = dump

    def fetch(self):
        return self.dump, _MemGuard()

    def update(self, dump, guard):
        self.dump = dump
        guard.release()


class _MemGuard:
    released = False

    def release(self):
        self.released = True


def _run_cell(args):
    target_name, sources, seeds, entry, scheduler, trial, seed, budget, extra = args
    spec = TargetSpec(
        name=target_name,
        sources=list(sources),
        seeds=[bytes(s) for s in seeds],
        budget=budget,
        coverable=0,
        entry=entry,
        interesting_extra=list(extra),
    )
    program, index, _ = build_target(spec)
    config = CampaignConfig(
        scheduler=scheduler,
        budget=budget,
        rng_seed=seed,
        interesting_extra=list(extra),
    )
    stats = run_campaign(program, index, spec.seeds, config)
    return (target_name, scheduler, trial), stats


def run_benchmark(
    suite: list[TargetSpec],
    schedulers: list[str],
    trials: int,
    base_seed: int = 0,
    budget_override: int | None = None,
    processes: int | None = None,
) -> TrialMatrix:
    """Run every (target, scheduler, trial) campaign cell, in a process pool.

    Per-trial RNG seeds derive as base_seed + trial index, so a rerun with
    the same base seed reproduces the matrix exactly.  A failing cell is
    recorded and skipped rather than aborting the run.
    """
    matrix = TrialMatrix(
        targets=[t.name for t in suite],
        schedulers=list(schedulers),
        trials=trials,
        budget={t.name: budget_override or t.budget for t in suite},
    )
    jobs = []
    for spec in suite:
        budget = budget_override or spec.budget
        for sched in schedulers:
            for trial in range(trials):
                jobs.append(
                    (
                        spec.name,
                        tuple(spec.sources),
                        tuple(spec.seeds),
                        spec.entry,
                        sched,
                        trial,
                        base_seed + trial,
                        budget,
                        tuple(spec.interesting_extra),
                    )
                )
    nproc = processes if processes is not None else min(os.cpu_count() or 1, len(jobs))
    if nproc <= 1:
        results = map(_try_cell, jobs)
        for key, stats, err in results:
            if err is None:
                matrix.cells[key] = stats
            else:
                matrix.failures.append((*key, err))
    else:
        ctx = get_context("fork" if os.name == "posix" else "spawn")
        with ctx.Pool(nproc) as pool:
            for key, stats, err in pool.imap_unordered(_try_cell, jobs):
                if err is None:
                    matrix.cells[key] = stats
                else:
                    matrix.failures.append((*key, err))
    return matrix


def _try_cell(args):
    key = (args[0], args[4], args[5])
    try:
        key, stats = _run_cell(args)
        return key, stats, None
    except Exception as exc:  # cell failures must not kill the run
        return key, None, f"{type(exc).__name__}: {exc}"


# -- output files -------------------------------------------------------------


def write_matrix_csv(matrix: TrialMatrix, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["target", "scheduler", "trial", "executions", "final_coverage", "crashes"]
        )
        for (target, sched, trial), stats in sorted(matrix.cells.items()):
            w.writerow(
                [
                    target,
                    sched,
                    trial,
                    stats.executions,
                    stats.final_coverage(),
                    len(stats.crashes),
                ]
            )


def write_a12_csv(matrix: TrialMatrix, path: str, baseline: str | None = None) -> None:
    """A12 of final coverage for every scheduler pair, per target."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "scheduler_a", "scheduler_b", "a12_final_coverage"])
        for target in matrix.targets:
            for sa in matrix.schedulers:
                for sb in matrix.schedulers:
                    if sa == sb or (baseline is not None and sb != baseline):
                        continue
                    xs = matrix.final_coverage_sample(target, sa)
                    ys = matrix.final_coverage_sample(target, sb)
                    if xs and ys:
                        w.writerow([target, sa, sb, f"{a12(xs, ys).value:.4f}"])


def write_relative_csv(matrix: TrialMatrix, checkpoints: list[int], path: str) -> None:
    table = relative_median_table(matrix, checkpoints)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["checkpoint", "scheduler", "relative_median_coverage"])
        for cp in checkpoints:
            for sched, value in sorted(table[cp]["summary"].items()):
                w.writerow([cp, sched, f"{value:.2f}"])


def plot_coverage(matrix: TrialMatrix, target: str, path: str, points: int = 50) -> None:
    """Median coverage growth (with quartile band) per scheduler, as SVG."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    budget = matrix.budget[target]
    xs = [int(budget * i / points) for i in range(1, points + 1)]
    fig, ax = plt.subplots(figsize=(7, 4))
    for sched in matrix.schedulers:
        rows = []
        for trial in range(matrix.trials):
            stats = matrix.cells.get((target, sched, trial))
            if stats is not None:
                rows.append([stats.coverage_at(x) for x in xs])
        if not rows:
            continue
        med = [statistics.median(col) for col in zip(*rows)]
        q1 = [sorted(col)[len(col) // 4] for col in zip(*rows)]
        q3 = [sorted(col)[(3 * len(col)) // 4] for col in zip(*rows)]
        ax.plot(xs, med, label=sched)
        ax.fill_between(xs, q1, q3, alpha=0.2)
    ax.set_xlabel("executions")
    ax.set_ylabel("covered blocks")
    ax.set_title(target)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
