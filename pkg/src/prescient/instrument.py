"""Instrumentation pass: assign block uids and coverage-map indices.

The pass walks every function and block of a module, gives each block a
globally unique id (continuing the counter stored in the CFG dump, so
separately instrumented modules never collide), decides which blocks need a
coverage callback, records direct-call names and indirect-call counts, and
appends everything to the dump under the store's lock.

Coverage minimisation: a block is left uninstrumented exactly when its
execution is inferable from its unique successor.  Concretely, block B is
skipped iff B has exactly one successor S (S != B) and B is the only
predecessor of S; then B runs iff S runs, so instrumenting S is enough.
This is a conservative restriction of the general rule (skip blocks whose
hit condition is equivalent to a dominating or post-dominating instrumented
block); ``check_skip_soundness`` validates the equivalence via the dominator
and post-dominator sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

from .cfgstore import BasicBlockInfo, CfgDump, CfgStore
from .ir import IrBlock, IrFunction, IrModule


class PassError(Exception):
    pass


@dataclass
class InstrumentedProgram:
    """Summary of one pass run: which blocks got which coverage index."""

    module_checksum: str
    coverage_map_size: int
    first_uid: int
    first_cov_index: int
    # (function name, block label) -> coverage index; uninstrumented blocks
    # are absent.
    table: dict[tuple[str, str], int] = field(default_factory=dict)


def _cfg_maps(function: IrFunction):
    succs = {b.label: b.successor_labels() for b in function.blocks}
    preds: dict[str, list[str]] = {b.label: [] for b in function.blocks}
    for lbl, out in succs.items():
        for s in out:
            preds[s].append(lbl)
    return succs, preds


def needs_instrumenting(block: IrBlock, function: IrFunction) -> bool:
    """True when the block must carry a coverage callback.

    False exactly for blocks whose unique successor has the block as its
    unique predecessor (the successor's callback determines both).
    """
    succs, preds = _cfg_maps(function)
    return _needs_instrumenting(block.label, succs, preds)


def _needs_instrumenting(label: str, succs, preds) -> bool:
    out = succs[label]
    if len(out) != 1:
        return True
    s = out[0]
    if s == label:
        return True
    return preds[s] != [label]


def dominator_sets(function: IrFunction) -> dict[str, set[str]]:
    """Iterative dataflow dominators: label -> set of dominating labels."""
    succs, preds = _cfg_maps(function)
    entry = function.blocks[0].label
    labels = [b.label for b in function.blocks]
    dom = {lbl: set(labels) for lbl in labels}
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for lbl in labels:
            if lbl == entry:
                continue
            ps = [dom[p] for p in preds[lbl]]
            new = {lbl} | (reduce(set.intersection, ps) if ps else set())
            if new != dom[lbl]:
                dom[lbl] = new
                changed = True
    return dom


def postdominator_sets(function: IrFunction) -> dict[str, set[str]]:
    """Post-dominators over the reversed CFG, with return and abort blocks
    (and any block without successors) acting as exits."""
    succs, _ = _cfg_maps(function)
    labels = [b.label for b in function.blocks]
    exits = [lbl for lbl in labels if not succs[lbl]]
    pdom = {lbl: set(labels) for lbl in labels}
    for e in exits:
        pdom[e] = {e}
    changed = True
    while changed:
        changed = False
        for lbl in labels:
            if lbl in exits:
                continue
            ss = [pdom[s] for s in succs[lbl]]
            new = {lbl} | (reduce(set.intersection, ss) if ss else set())
            if new != pdom[lbl]:
                pdom[lbl] = new
                changed = True
    return pdom


def check_skip_soundness(function: IrFunction) -> None:
    """Assert every skipped block is hit-equivalent to its successor.

    For a skipped block B with successor S: S must post-dominate B and B must
    dominate S, so B runs iff S runs on every complete path.
    """
    succs, preds = _cfg_maps(function)
    dom = dominator_sets(function)
    pdom = postdominator_sets(function)
    for blk in function.blocks:
        if _needs_instrumenting(blk.label, succs, preds):
            continue
        s = succs[blk.label][0]
        if s not in pdom[blk.label] or blk.label not in dom[s]:
            raise PassError(
                f"unsound skip of block {blk.label!r} in {function.name!r}"
            )


def run_pass(module: IrModule, store: CfgStore) -> InstrumentedProgram:
    """Instrument one module and append its block info to the CFG dump.

    Annotates the module's blocks in place (``uid`` and ``cov_index``) and
    persists the new counters and per-function block lists atomically.  A
    module whose checksum is already present in the dump is rejected, since
    re-running the pass would hand out fresh uids for the same code.
    """
    dump, guard = store.fetch()
    try:
        checksum = module.checksum
        if checksum in dump.module_checksums:
            raise PassError(
                f"module with checksum {checksum[:12]}... already instrumented; "
                "clear the CFG dump to rebuild"
            )
        uid = dump.latest_block_uid
        cov = dump.latest_coverage_map_index
        prog = InstrumentedProgram(
            module_checksum=checksum,
            coverage_map_size=0,
            first_uid=uid,
            first_cov_index=cov,
        )
        for fn in module.functions:
            succs, preds = _cfg_maps(fn)
            uid_of: dict[str, int] = {}
            # First sweep: uids and coverage indices (forward branch targets
            # get their uids before the successor sweep).
            for blk in fn.blocks:
                blk.uid = uid
                uid_of[blk.label] = uid
                uid += 1
                if _needs_instrumenting(blk.label, succs, preds):
                    blk.cov_index = cov
                    prog.table[(fn.name, blk.label)] = cov
                    cov += 1
                else:
                    blk.cov_index = None
            # Second sweep: successor uids, calls, indirect-call counts.
            infos = []
            for blk in fn.blocks:
                infos.append(
                    BasicBlockInfo(
                        uid=blk.uid,
                        coverage_map_index=blk.cov_index,
                        called_funcs=blk.called_function_names(),
                        successor_uids=[uid_of[l] for l in blk.successor_labels()],
                        num_indirect_calls=blk.indirect_call_count(),
                    )
                )
            dump.functions.setdefault(fn.name, []).append(infos)
        prog.coverage_map_size = cov - dump.latest_coverage_map_index
        dump.latest_block_uid = uid
        dump.latest_coverage_map_index = cov
        dump.module_checksums.append(checksum)
        store.update(dump, guard)
        return prog
    except Exception:
        if not guard.released:
            guard.release()
        raise


def apply_dump_annotations(modules: list[IrModule], dump: CfgDump) -> None:
    """Re-annotate parsed modules with uids and coverage indices from a dump.

    Modules must be given in the order they were instrumented: the k-th
    definition of a function name in the dump corresponds to the k-th module
    (in order) that defines that name.  Checksums are verified first.
    """
    for mod in modules:
        if mod.checksum not in dump.module_checksums:
            raise PassError(
                "module source does not match any checksum in the CFG dump"
            )
    seen: dict[str, int] = {}
    for mod in modules:
        for fn in mod.functions:
            defs = dump.functions.get(fn.name)
            k = seen.get(fn.name, 0)
            seen[fn.name] = k + 1
            if defs is None or k >= len(defs):
                raise PassError(f"no dump record for definition {k} of {fn.name!r}")
            infos = defs[k]
            if len(infos) != len(fn.blocks):
                raise PassError(f"block count mismatch for {fn.name!r}")
            for blk, info in zip(fn.blocks, infos):
                blk.uid = info.uid
                blk.cov_index = info.coverage_map_index
