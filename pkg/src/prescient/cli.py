"""Command-line entry point wiring the subcommands together.

Subcommands: ``instrument`` (pass + CFG dump), ``fuzz`` (campaign),
``reach`` (debug reachability query), ``cfg dump`` (pretty-print a dump),
``bench`` (trial matrix over a target suite), ``report`` (statistics from a
stored matrix is folded into bench outputs), and ``targets`` (write the
built-in suite to disk).  Exit codes: 0 success, 1 usage error, 2 runtime
error.  A found crash is a finding, not a failure: ``fuzz`` still exits 0.
Set PRESCIENT_LOG to a level name to change log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import cfgstore
from .config import ConfigError, load_config
from .engine import run_campaign
from .instrument import apply_dump_annotations, run_pass
from .interp import link
from .ir import parse_module
from .reach import build_index, calc_reachable_blocks
from .sched import SCHEDULER_NAMES

log = logging.getLogger("prescient")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="prescient", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("instrument", help="instrument MiniIR modules into a CFG dump")
    p.add_argument("modules", nargs="+", metavar="in.mir")
    p.add_argument("--cfg-out", required=True)
    p.add_argument("--instr-out", help="instrumentation sidecar (default <cfg-out>.instr.json)")

    p = sub.add_parser("fuzz", help="run one fuzzing campaign")
    p.add_argument("--target", action="append", required=True, metavar="t.mir",
                   help="module source, repeatable, in instrumentation order")
    p.add_argument("--cfg", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int, dest="rng_seed")
    p.add_argument("--scheduler", choices=sorted(SCHEDULER_NAMES))
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seeds-dir", help="directory of seed input files")
    p.add_argument("--corpus-dir")
    p.add_argument("--crashes-dir")
    p.add_argument("--stats-out", dest="stats_path")
    p.add_argument("--constant", action="append", default=[],
                   help="extra interesting constant (repeatable, hex ok)")
    p.add_argument("--stop-on-crash", action="store_true", default=None)

    p = sub.add_parser("reach", help="query reachable uncovered blocks")
    p.add_argument("--cfg", required=True)
    p.add_argument("--covered", required=True,
                   help="comma-separated coverage indices covered by the corpus")
    p.add_argument("--input-covered", required=True,
                   help="comma-separated coverage indices covered by the input")

    p = sub.add_parser("cfg", help="CFG dump inspection")
    cfg_sub = p.add_subparsers(dest="cfg_command")
    d = cfg_sub.add_parser("dump", help="pretty-print a CFG dump")
    d.add_argument("file")
    d.add_argument("--json", action="store_true")

    p = sub.add_parser("bench", help="run the benchmark matrix")
    p.add_argument("--suite", help="directory of targets (default: built-in suite)")
    p.add_argument("--schedulers", default="prescient,random,power")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--budget", type=float, help="override per-target budgets")
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--processes", type=int)

    p = sub.add_parser("targets", help="write the built-in suite as .mir files")
    p.add_argument("--out", required=True)

    return parser


def _parse_index_list(text: str) -> list[int]:
    return [int(v.strip(), 0) for v in text.split(",") if v.strip()]


def _cmd_instrument(args) -> int:
    store = cfgstore.CfgStore(args.cfg_out)
    sidecar = {"modules": []}
    for path in args.modules:
        with open(path, "r", encoding="utf-8") as fh:
            module = parse_module(fh.read())
        prog = run_pass(module, store)
        sidecar["modules"].append(
            {
                "path": path,
                "checksum": prog.module_checksum,
                "first_uid": prog.first_uid,
                "first_cov_index": prog.first_cov_index,
                "coverage_map_size": prog.coverage_map_size,
                "blocks": {
                    f"{fn}:{lbl}": ci for (fn, lbl), ci in sorted(prog.table.items())
                },
            }
        )
        log.info("instrumented %s: %d new indices", path, prog.coverage_map_size)
    out = args.instr_out or args.cfg_out + ".instr.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return 0


def _cmd_fuzz(args) -> int:
    overrides = {
        "budget": args.budget,
        "rng_seed": args.rng_seed,
        "scheduler": args.scheduler,
        "corpus_dir": args.corpus_dir,
        "crashes_dir": args.crashes_dir,
        "stats_path": args.stats_path,
        "stop_on_crash": args.stop_on_crash,
        "cfg_path": args.cfg,
    }
    config = load_config(args.config, overrides)
    if args.constant:
        config.interesting_extra = list(config.interesting_extra) + [
            int(v, 0) for v in args.constant
        ]
    dump, guard = cfgstore.fetch(args.cfg)
    guard.release()
    modules = []
    for path in args.target:
        with open(path, "r", encoding="utf-8") as fh:
            modules.append(parse_module(fh.read()))
    apply_dump_annotations(modules, dump)
    index = build_index(dump)
    program = link(modules)
    seeds = []
    if args.seeds_dir:
        for name in sorted(os.listdir(args.seeds_dir)):
            with open(os.path.join(args.seeds_dir, name), "rb") as fh:
                seeds.append(fh.read())
    stats = run_campaign(program, index, seeds, config)
    log.info(
        "campaign done: %d executions, %d covered, %d corpus entries, %d crashes",
        stats.executions,
        stats.final_coverage(),
        len(stats.admissions),
        len(stats.crashes),
    )
    if not config.stats_path:
        print("executions,covered,corpus_size,crashes")
        for (execs, cov), (_, size) in zip(stats.coverage_series, stats.corpus_series):
            print(f"{execs},{cov},{size},{sum(1 for c in stats.crashes if c.found_at <= execs)}")
    return 0


def _cmd_reach(args) -> int:
    dump, guard = cfgstore.fetch(args.cfg)
    guard.release()
    index = build_index(dump)
    result = calc_reachable_blocks(
        index,
        _parse_index_list(args.input_covered),
        _parse_index_list(args.covered),
    )
    for key, depth in result:
        if isinstance(key, tuple):
            print(f"indirect:{key[0]} {depth}")
        else:
            print(f"{key} {depth}")
    return 0


def _cmd_cfg(args) -> int:
    if args.cfg_command != "dump":
        raise UsageError("expected: cfg dump <file>")
    dump, guard = cfgstore.fetch(args.file)
    guard.release()
    doc = cfgstore.dump_to_json_dict(dump)
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"latest_block_uid: {doc['latest_block_uid']}")
        print(f"latest_coverage_map_index: {doc['latest_coverage_map_index']}")
        print(f"modules: {len(doc['module_checksums'])}")
        for name, defs in doc["functions"].items():
            for i, blocks in enumerate(defs):
                inst = sum(1 for b in blocks if b["coverage_map_index"] is not None)
                print(f"  fn {name} (definition {i}): {len(blocks)} blocks, {inst} instrumented")
    return 0


def _load_suite_dir(path: str):
    from .targets import TargetSpec

    suite = []
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if os.path.isdir(full):
            sources = []
            for fname in sorted(os.listdir(full)):
                if fname.endswith(".mir"):
                    with open(os.path.join(full, fname), "r", encoding="utf-8") as fh:
                        sources.append(fh.read())
            if sources:
                suite.append(TargetSpec(name, sources, [b""], 20_000, coverable=0))
        elif name.endswith(".mir"):
            with open(full, "r", encoding="utf-8") as fh:
                suite.append(TargetSpec(name[:-4], [fh.read()], [b""], 20_000, coverable=0))
    if not suite:
        raise UsageError(f"no .mir targets found under {path}")
    return suite


def _cmd_bench(args) -> int:
    from . import report
    from .targets import build_suite

    suite = _load_suite_dir(args.suite) if args.suite else build_suite()
    schedulers = [s.strip() for s in args.schedulers.split(",") if s.strip()]
    for s in schedulers:
        if s not in SCHEDULER_NAMES:
            raise UsageError(f"unknown scheduler {s!r}")
    os.makedirs(args.out, exist_ok=True)
    budget = int(args.budget) if args.budget else None
    matrix = report.run_benchmark(
        suite, schedulers, args.trials, args.base_seed, budget, args.processes
    )
    report.write_matrix_csv(matrix, os.path.join(args.out, "matrix.csv"))
    report.write_a12_csv(matrix, os.path.join(args.out, "a12.csv"))
    checkpoints = sorted({max(1, b // 2) for b in matrix.budget.values()} | set(matrix.budget.values()))
    report.write_relative_csv(matrix, checkpoints, os.path.join(args.out, "relative.csv"))
    for target in matrix.targets:
        report.plot_coverage(
            matrix, target, os.path.join(args.out, f"coverage_{target}.svg")
        )
    for failure in matrix.failures:
        log.warning("cell failed: %s", failure)
    log.info("benchmark written to %s", args.out)
    return 0


def _cmd_targets(args) -> int:
    from .targets import build_suite, example_target

    os.makedirs(args.out, exist_ok=True)
    for spec in build_suite() + [example_target()]:
        if len(spec.sources) == 1:
            with open(os.path.join(args.out, f"{spec.name}.mir"), "w", encoding="utf-8") as fh:
                fh.write(spec.sources[0])
        else:
            tdir = os.path.join(args.out, spec.name)
            os.makedirs(tdir, exist_ok=True)
            for i, src in enumerate(spec.sources):
                with open(os.path.join(tdir, f"{i:02d}.mir"), "w", encoding="utf-8") as fh:
                    fh.write(src)
    return 0


_COMMANDS = {
    "instrument": _cmd_instrument,
    "fuzz": _cmd_fuzz,
    "reach": _cmd_reach,
    "cfg": _cmd_cfg,
    "bench": _cmd_bench,
    "targets": _cmd_targets,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("PRESCIENT_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
