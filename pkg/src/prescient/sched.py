"""Corpus schedulers: reachability-weighted selection plus baselines.

The weighted scheduler scores each corpus entry from its reachable
uncovered blocks: every (block, depth) pair contributes the product of an
inverse-depth factor and an inverse-frequency factor, where the frequency
counts how many corpus entries can reach that same pair; the sum is scaled
by the inverse of the entry's execution time.  Ablation variants drop the
depth factor, then also the frequency factor, or count only depth-1
neighbours.  Selection samples proportionally to score.

Scores go stale whenever new coverage lands (the global covered set feeds
every reachability search), so a dirty flag requests a full recomputation.
Recomputation is throttled: after each run, it may not run again until ten
times its own duration has elapsed (the cooldown period).  Entries admitted
while scores are stale receive the arithmetic mean of the existing scores
so they are immediately selectable.

Baselines: uniform random selection, and a simplified power schedule that
restricts choice to a favored subset (a greedy cover of all covered blocks
by the fastest, shortest entries) weighted by two to the power of the
times-selected count, capped.

All schedulers draw time from an injected clock so campaigns and tests are
deterministic.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .reach import CfgIndex, calc_reachable_blocks

VARIANTS = (
    "direct_neighbours",
    "reachable",
    "reachable_rarity",
    "reachable_rarity_depth",
)

# Config-file scheduler names to internal variants.
SCHEDULER_NAMES = {
    "prescient": "reachable_rarity_depth",
    "prescient_reachable_rarity": "reachable_rarity",
    "prescient_reachable": "reachable",
    "prescient_direct": "direct_neighbours",
    "random": "random",
    "power": "power_schedule",
}

POWER_ENERGY_CAP = 10


class SchedError(Exception):
    pass


class WorkClock:
    """Deterministic virtual clock: time passes only when work is charged.

    The engine charges interpreter steps per execution and the scheduler
    charges its own bookkeeping, so the cooldown logic sees recomputation
    cost on the same axis as execution cost, without wall-clock jitter.
    """

    def __init__(self):
        self._now = 0.0

    def now(self) -> float:
        return self._now

    def charge(self, units: float) -> None:
        self._now += units


@dataclass
class ScoreState:
    scores: dict[int, float] = field(default_factory=dict)
    last_recompute_duration: float = 0.0
    cooldown_until: float = 0.0
    dirty: bool = False


def build_rarity_table(results) -> Counter:
    """Count, over all inputs' reachability results, each (key, depth) pair."""
    table: Counter = Counter()
    for entries in results:
        for pair in entries:
            table[pair] += 1
    return table


def compute_score(rarity, result, exec_time: float, variant: str) -> float:
    """Score one input from its reachability result.

    ``rarity`` must cover every entry of ``result`` (it was built from a pass
    over the same corpus).
    """
    if variant not in VARIANTS:
        raise SchedError(f"unknown scheduler variant {variant!r}")
    if exec_time <= 0:
        raise SchedError("exec_time must be positive")
    total = 0.0
    for key, depth in result:
        freq = rarity.get((key, depth))
        if not freq:
            raise SchedError(f"entry {(key, depth)!r} missing from rarity table")
        if variant == "direct_neighbours":
            if depth == 1:
                total += 1.0
        elif variant == "reachable":
            total += 1.0
        elif variant == "reachable_rarity":
            total += 1.0 / freq
        else:
            total += (1.0 / depth) * (1.0 / freq)
    return total / exec_time


def weighted_pick(entries, weights, rng):
    """Sample proportionally to weight; uniform when all weights are zero."""
    total = math.fsum(weights)
    if total <= 0.0:
        return entries[rng.randrange(len(entries))]
    x = rng.random() * total
    acc = 0.0
    for entry, w in zip(entries, weights):
        acc += w
        if x < acc:
            return entry
    return entries[-1]


class PrescientScheduler:
    """Reachability-weighted corpus scheduler with cooldown throttling."""

    def __init__(
        self,
        index: CfgIndex,
        clock: WorkClock,
        variant: str = "reachable_rarity_depth",
        cooldown_multiplier: float = 10.0,
    ):
        if variant not in VARIANTS:
            raise SchedError(f"unknown scheduler variant {variant!r}")
        self.index = index
        self.clock = clock
        self.variant = variant
        self.cooldown_multiplier = cooldown_multiplier
        self.state = ScoreState()
        self.rarity: Counter = Counter()
        self.recompute_log: list[tuple[float, float]] = []  # (start, end) times

    def compute_all_scores(self, corpus, global_indices) -> None:
        """Recompute the rarity table and every entry's score.

        Two passes over the corpus (count pair frequencies, then score), with
        the duration recorded and the cooldown window armed.
        """
        start = self.clock.now()
        results = {}
        for entry in corpus:
            if entry.covered:
                result = calc_reachable_blocks(self.index, entry.covered, global_indices)
            else:
                result = []
            results[entry.id] = result
            self.clock.charge(1 + len(entry.covered) + len(result))
        self.rarity = build_rarity_table(results.values())
        scores = {}
        for entry in corpus:
            scores[entry.id] = compute_score(
                self.rarity, results[entry.id], max(entry.exec_time, 1), self.variant
            )
            self.clock.charge(1)
        end = self.clock.now()
        self.state.scores = scores
        self.state.last_recompute_duration = end - start
        self.state.cooldown_until = end + self.cooldown_multiplier * (end - start)
        self.state.dirty = False
        self.recompute_log.append((start, end))

    def on_new_coverage(self, entry, corpus) -> None:
        """Mark scores stale and give the new entry the mean existing score."""
        self.state.dirty = True
        others = [s for eid, s in self.state.scores.items() if eid != entry.id]
        self.state.scores[entry.id] = (sum(others) / len(others)) if others else 1.0

    def select_next(self, corpus, global_indices, rng):
        if not corpus:
            raise SchedError("cannot select from an empty corpus")
        if self.state.dirty and self.clock.now() >= self.state.cooldown_until:
            self.compute_all_scores(corpus, global_indices)
        weights = [self.state.scores.get(e.id, 0.0) for e in corpus]
        return weighted_pick(corpus, weights, rng)


class RandomScheduler:
    """Uniform random baseline."""

    def __init__(self, clock: WorkClock | None = None):
        self.clock = clock

    def compute_all_scores(self, corpus, global_indices) -> None:
        pass

    def on_new_coverage(self, entry, corpus) -> None:
        pass

    def select_next(self, corpus, global_indices, rng):
        if not corpus:
            raise SchedError("cannot select from an empty corpus")
        return corpus[rng.randrange(len(corpus))]


def favored_subset(corpus) -> set[int]:
    """Greedy cover of all covered blocks by the fastest, shortest entries.

    Entries are taken in ascending execution_time * input_length order until
    every block covered by the corpus is represented.
    """
    ranked = sorted(corpus, key=lambda e: (e.exec_time * max(len(e.data), 1), e.id))
    need = set()
    for e in corpus:
        need |= e.covered
    favored: set[int] = set()
    for e in ranked:
        if not need:
            break
        if e.covered & need:
            favored.add(e.id)
            need -= e.covered
    return favored


class PowerScheduler:
    """Simplified power-schedule baseline.

    Selection is restricted to the favored subset; each favored entry is
    weighted by 2**min(times_selected, cap), so repeatedly selected entries
    accumulate energy in the shape of the FAST schedule.
    """

    def __init__(self, clock: WorkClock | None = None, energy_cap: int = POWER_ENERGY_CAP):
        self.clock = clock
        self.energy_cap = energy_cap
        self._favored: set[int] = set()
        self._stale = True

    def compute_all_scores(self, corpus, global_indices) -> None:
        self._favored = favored_subset(corpus)
        self._stale = False

    def on_new_coverage(self, entry, corpus) -> None:
        self._stale = True

    def select_next(self, corpus, global_indices, rng):
        if not corpus:
            raise SchedError("cannot select from an empty corpus")
        if self._stale:
            self.compute_all_scores(corpus, global_indices)
        pool = [e for e in corpus if e.id in self._favored] or list(corpus)
        weights = [float(1 << min(e.selected_count, self.energy_cap)) for e in pool]
        return weighted_pick(pool, weights, rng)


def make_scheduler(name: str, index: CfgIndex | None, clock: WorkClock, cooldown_multiplier: float = 10.0):
    """Build a scheduler from a config-file name (see SCHEDULER_NAMES)."""
    variant = SCHEDULER_NAMES.get(name)
    if variant is None:
        raise SchedError(f"unknown scheduler {name!r}")
    if variant == "random":
        return RandomScheduler(clock)
    if variant == "power_schedule":
        return PowerScheduler(clock)
    if index is None:
        raise SchedError(f"scheduler {name!r} needs a CFG index")
    return PrescientScheduler(index, clock, variant, cooldown_multiplier)
