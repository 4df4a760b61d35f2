"""Fuzzing campaign loop: mutation, execution, coverage feedback, corpus.

One campaign owns all mutable state and is fully deterministic for a fixed
RNG seed: time is a virtual work clock (interpreter steps plus scheduler
bookkeeping), so cooldown behaviour and therefore selection order replay
exactly.  Inputs join the corpus only when their execution covers at least
one previously unseen coverage index.  Crashing inputs are recorded and
deduplicated by a hash of their covered-index set but never join the
corpus; timed-out inputs are discarded.
"""

from __future__ import annotations

import csv
import hashlib
import os
import random
from dataclasses import dataclass, field

from .config import CampaignConfig
from .interp import LinkedProgram, execute
from .reach import CfgIndex
from .sched import WorkClock, make_scheduler


@dataclass
class CorpusEntry:
    id: int
    data: bytes
    exec_time: int
    covered: frozenset[int]
    discovered_at: int
    selected_count: int = 0


@dataclass
class CrashRecord:
    found_at: int
    data: bytes
    coverage_hash: str


@dataclass
class CampaignStats:
    executions: int = 0
    coverage_series: list[tuple[int, int]] = field(default_factory=list)
    corpus_series: list[tuple[int, int]] = field(default_factory=list)
    admissions: list[tuple[int, int, tuple[int, ...]]] = field(default_factory=list)
    crashes: list[CrashRecord] = field(default_factory=list)
    timeouts: int = 0

    def final_coverage(self) -> int:
        return self.coverage_series[-1][1] if self.coverage_series else 0

    def coverage_at(self, executions: int) -> int:
        """Covered-index count after the given number of executions."""
        best = 0
        for execs, cov in self.coverage_series:
            if execs > executions:
                break
            best = cov
        return best

    def executions_to_coverage(self, target: int) -> int | None:
        """First execution count at which coverage reached ``target``."""
        for execs, cov in self.coverage_series:
            if cov >= target:
                return execs
        return None

    def first_crash_at(self) -> int | None:
        return self.crashes[0].found_at if self.crashes else None


def coverage_hash(indices) -> str:
    payload = ",".join(str(i) for i in sorted(indices))
    return hashlib.sha1(payload.encode("ascii")).hexdigest()


class Mutator:
    """Stacked havoc mutator over a weighted operator set."""

    def __init__(self, config: CampaignConfig):
        self.weights = dict(config.mutator_weights)
        self.table = config.interesting_table()
        self.stack_max = config.mutation_stack_max
        self.max_len = config.max_input_len
        self._ops = [name for name, w in sorted(self.weights.items()) if w > 0]
        self._cum = []
        acc = 0.0
        for name in self._ops:
            acc += self.weights[name]
            self._cum.append(acc)
        self._total = acc
        # Width choices per table value: every width the value fits in,
        # signed or unsigned.
        self._widths: dict[int, tuple[int, ...]] = {}
        for v in self.table:
            self._widths[v] = tuple(
                w
                for w in (1, 2, 4, 8)
                if -(1 << (8 * w - 1)) <= v < (1 << (8 * w))
            )
        self.op_counts = {name: 0 for name in self._ops}

    def _pick_op(self, rng: random.Random) -> str:
        x = rng.random() * self._total
        for name, acc in zip(self._ops, self._cum):
            if x < acc:
                return name
        return self._ops[-1]

    def mutate(self, data: bytes, rng: random.Random, corpus) -> bytes:
        out = bytearray(data)
        for _ in range(rng.randint(1, self.stack_max)):
            op = self._pick_op(rng)
            self.op_counts[op] += 1
            out = self._apply(op, out, rng, corpus)
        return bytes(out[: self.max_len])

    def _apply(self, op: str, data: bytearray, rng: random.Random, corpus) -> bytearray:
        n = len(data)
        if op == "bit_flip":
            if n:
                i = rng.randrange(n * 8)
                data[i >> 3] ^= 1 << (i & 7)
        elif op == "byte_flip":
            if n:
                data[rng.randrange(n)] ^= 0xFF
        elif op == "arith":
            if n:
                width = rng.choice((1, 2, 4))
                if width > n:
                    width = 1
                offset = rng.randrange(n - width + 1)
                big = rng.random() < 0.5 and width > 1
                delta = rng.randint(1, 35) * (1 if rng.random() < 0.5 else -1)
                order = "big" if big else "little"
                word = int.from_bytes(data[offset : offset + width], order)
                word = (word + delta) % (1 << (8 * width))
                data[offset : offset + width] = word.to_bytes(width, order)
        elif op == "interesting":
            value = self.table[rng.randrange(len(self.table))]
            width = rng.choice(self._widths[value])
            raw = (value % (1 << (8 * width))).to_bytes(width, "little")
            if rng.random() < 0.5:
                raw = raw[::-1]
            if n >= width and rng.random() < 0.8:
                offset = rng.randrange(n - width + 1)
                data[offset : offset + width] = raw
            else:
                offset = rng.randrange(n + 1)
                data[offset:offset] = raw
        elif op == "delete":
            if n:
                length = rng.randint(1, min(n, 16))
                offset = rng.randrange(n - length + 1)
                del data[offset : offset + length]
        elif op == "duplicate":
            if n:
                length = rng.randint(1, min(n, 16))
                offset = rng.randrange(n - length + 1)
                chunk = data[offset : offset + length]
                at = rng.randrange(n + 1)
                data[at:at] = chunk
        elif op == "splice":
            if corpus:
                other = corpus[rng.randrange(len(corpus))].data
                i = rng.randint(0, n)
                j = rng.randint(0, len(other))
                data = bytearray(data[:i] + other[j:])
        return data


class Campaign:
    """Mutable campaign state; ``run_campaign`` is the usual entry point."""

    def __init__(
        self,
        program: LinkedProgram,
        index: CfgIndex,
        config: CampaignConfig,
    ):
        config.validate()
        self.program = program
        self.index = index
        self.config = config
        self.rng = random.Random(config.rng_seed)
        self.clock = WorkClock()
        self.scheduler = make_scheduler(
            config.scheduler, index, self.clock, config.cooldown_multiplier
        )
        self.mutator = Mutator(config)
        self.corpus: list[CorpusEntry] = []
        self.global_covered: set[int] = set()
        self.stats = CampaignStats()
        self._crash_hashes: set[str] = set()
        self._next_id = 0
        self._multi_defs = any(len(d) > 1 for d in index.definitions.values())
        self._stats_writer = None
        self._stats_file = None
        if config.stats_path:
            self._stats_file = open(config.stats_path, "w", newline="", encoding="utf-8")
            self._stats_writer = csv.writer(self._stats_file)
            self._stats_writer.writerow(["executions", "covered", "corpus_size", "crashes"])

    # -- event plumbing ------------------------------------------------------

    def _emit_stats_row(self):
        self.stats.coverage_series.append((self.stats.executions, len(self.global_covered)))
        self.stats.corpus_series.append((self.stats.executions, len(self.corpus)))
        if self._stats_writer:
            self._stats_writer.writerow(
                [
                    self.stats.executions,
                    len(self.global_covered),
                    len(self.corpus),
                    len(self.stats.crashes),
                ]
            )

    def _record_crash(self, data: bytes, covered):
        h = coverage_hash(covered)
        if h in self._crash_hashes:
            return
        self._crash_hashes.add(h)
        rec = CrashRecord(found_at=self.stats.executions, data=bytes(data), coverage_hash=h)
        self.stats.crashes.append(rec)
        if self.config.crashes_dir:
            os.makedirs(self.config.crashes_dir, exist_ok=True)
            path = os.path.join(self.config.crashes_dir, f"crash-{h[:16]}")
            with open(path, "wb") as fh:
                fh.write(rec.data)
        self._emit_stats_row()

    def process_input(self, data: bytes) -> None:
        """Execute one input and apply the coverage-feedback admission rule."""
        trace = execute(self.program, data, fuel=self.config.fuel)
        self.stats.executions += 1
        self.clock.charge(max(trace.steps, 1))
        if trace.crashed:
            self._record_crash(data, trace.covered_indices)
            return
        if trace.timed_out:
            self.stats.timeouts += 1
            return
        new = trace.covered_indices - self.global_covered
        if not new:
            return
        if self._multi_defs:
            # Promotion rebuilds the reachability caches; the on_new_coverage
            # call below marks the scores stale, so nothing else to do here.
            covered_uids = self.index.uids_for_indices(trace.covered_indices)
            self.index.promote_for_coverage(covered_uids)
        entry = CorpusEntry(
            id=self._next_id,
            data=bytes(data),
            exec_time=max(trace.steps, 1),
            covered=frozenset(trace.covered_indices),
            discovered_at=self.stats.executions,
        )
        self._next_id += 1
        self.corpus.append(entry)
        self.global_covered |= new
        self.scheduler.on_new_coverage(entry, self.corpus)
        self.stats.admissions.append(
            (self.stats.executions, entry.id, tuple(sorted(new)))
        )
        self._emit_stats_row()
        if self.config.corpus_dir:
            os.makedirs(self.config.corpus_dir, exist_ok=True)
            with open(os.path.join(self.config.corpus_dir, f"id-{entry.id:06d}"), "wb") as fh:
                fh.write(entry.data)

    def run(self, seeds: list[bytes]) -> CampaignStats:
        for seed in seeds or [b""]:
            self.process_input(seed)
        budget = self.config.budget
        while self.stats.executions < budget:
            if self.config.stop_on_crash and self.stats.crashes:
                break
            if not self.corpus:
                # Nothing admitted yet (every seed crashed or timed out):
                # keep probing from the empty input.
                data = self.mutator.mutate(b"", self.rng, self.corpus)
            else:
                entry = self.scheduler.select_next(self.corpus, self.global_covered, self.rng)
                entry.selected_count += 1
                data = self.mutator.mutate(entry.data, self.rng, self.corpus)
            self.process_input(data)
        self._emit_stats_row()
        if self.config.corpus_dir:
            self._write_corpus_index()
        if self._stats_file:
            self._stats_file.close()
            self._stats_file = None
        return self.stats

    def _write_corpus_index(self):
        path = os.path.join(self.config.corpus_dir, "index.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "file", "exec_time", "discovered_at", "covered_count"])
            for e in self.corpus:
                w.writerow(
                    [e.id, f"id-{e.id:06d}", e.exec_time, e.discovered_at, len(e.covered)]
                )


def run_campaign(
    program: LinkedProgram,
    index: CfgIndex,
    seeds: list[bytes],
    config: CampaignConfig,
) -> CampaignStats:
    """Run one deterministic fuzzing campaign and return its statistics."""
    return Campaign(program, index, config).run(seeds)
