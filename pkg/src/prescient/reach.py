"""CFG reconstruction and reachable-uncovered-block computation.

The index rebuilds the program graph from a CFG dump and precomputes two
caches so the per-input reachability search never touches uninstrumented
blocks at query time:

  * per function: the instrumented blocks directly reachable from its entry
    (used whenever a call edge is followed), and
  * per instrumented block: the instrumented blocks reachable without
    crossing another instrumented block, walking through uninstrumented
    blocks and into the entries of directly called functions.

Blocks live in an array indexed by uid.  A function name may carry several
definitions (the pass runs per module, so unlinked duplicates are kept);
the first definition in the list is presumed live, and
``resolve_definition`` promotes another one when coverage feedback proves
the presumption wrong, invalidating the caches.

Indirect calls are approximated as discovering one new block per call site:
a block containing at least one indirect call contributes a synthetic
pseudo-block key ``(uid, "indirect")`` one step beyond wherever the block is
reached.  Pseudo-blocks are never covered and have no successors.

``calc_reachable_blocks`` is a breadth-first search over instrumented
blocks: seeded with every block the input covered at depth 0, with every
block covered by the whole corpus marked visited, expanding through the
successor cache.  Entries come out deduplicated at their minimal depth, in
visit order, and never at depth 0.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .cfgstore import CfgDump, validate_dump

# A reachability entry key: a block uid, or (uid, "indirect") for the
# pseudo-block attributed to an indirect call site.
PseudoKey = tuple[int, str]
ReachKey = "int | PseudoKey"
ReachabilityResult = "list[tuple[int | PseudoKey, int]]"


class CfgIndexError(Exception):
    pass


class InconsistentBuildError(Exception):
    """Coverage feedback refers to indices the dump does not define."""


@dataclass
class _BlockRec:
    uid: int
    cov_index: int | None
    successor_uids: tuple[int, ...]
    called_funcs: tuple[str, ...]
    has_indirect: bool
    fn_name: str
    def_pos: int


class CfgIndex:
    """Uid-indexed view of a dump plus the traversal caches."""

    def __init__(self, dump: CfgDump):
        self.dump = dump
        self.blocks: list[_BlockRec | None] = [None] * dump.latest_block_uid
        self.definitions: dict[str, list[tuple[int, ...]]] = {}
        self.entry_uid: dict[tuple[str, int], int] = {}
        self.uid_by_cov_index: dict[int, int] = {}
        self.unresolved_calls: set[str] = set()
        for name, defs in dump.functions.items():
            self.definitions[name] = []
            for pos, blocks in enumerate(defs):
                self.definitions[name].append(tuple(b.uid for b in blocks))
                self.entry_uid[(name, pos)] = blocks[0].uid
                for b in blocks:
                    if not (0 <= b.uid < dump.latest_block_uid):
                        raise CfgIndexError(f"uid {b.uid} out of range")
                    self.blocks[b.uid] = _BlockRec(
                        uid=b.uid,
                        cov_index=b.coverage_map_index,
                        successor_uids=tuple(b.successor_uids),
                        called_funcs=tuple(b.called_funcs),
                        has_indirect=b.num_indirect_calls > 0,
                        fn_name=name,
                        def_pos=pos,
                    )
                    if b.coverage_map_index is not None:
                        self.uid_by_cov_index[b.coverage_map_index] = b.uid
        for rec in self.blocks:
            if rec is None:
                continue
            for s in rec.successor_uids:
                if not (0 <= s < len(self.blocks)) or self.blocks[s] is None:
                    raise CfgIndexError(f"dangling successor uid {s}")
            for f in rec.called_funcs:
                if f not in self.definitions:
                    self.unresolved_calls.add(f)
        # Caches, rebuilt whenever a definition is promoted.
        self._entry_cache: dict[str, tuple[tuple[int, ...], tuple[PseudoKey, ...]]] = {}
        self._succ_cache: dict[int, tuple[tuple[int, ...], tuple[PseudoKey, ...]]] = {}
        self.epoch = 0
        self._build_caches()

    # -- cache construction -------------------------------------------------

    def active_entry_uid(self, fn_name: str) -> int:
        return self.entry_uid[(fn_name, self._active_pos(fn_name))]

    def _active_pos(self, fn_name: str) -> int:
        # definitions[name] is reordered on promotion; position 0 is live.
        return self._def_order[fn_name][0]

    def _frontier_from(
        self, seed_uids, seed_fns, use_entry_cache: bool
    ) -> tuple[tuple[int, ...], tuple[PseudoKey, ...]]:
        """Instrumented blocks (and indirect keys) reachable through
        uninstrumented blocks from the given raw seeds."""
        found: list[int] = []
        pseudos: list[PseudoKey] = []
        seen_uids: set[int] = set()
        seen_pseudo: set[PseudoKey] = set()
        seen_fns: set[str] = set()
        stack: list[int] = []

        def emit_pseudo(key: PseudoKey):
            if key not in seen_pseudo:
                seen_pseudo.add(key)
                pseudos.append(key)

        def push_fn(name: str):
            if name in seen_fns or name in self.unresolved_calls:
                return
            seen_fns.add(name)
            if use_entry_cache:
                cached_uids, cached_pseudos = self._entry_cache[name]
                for u in cached_uids:
                    if u not in seen_uids:
                        seen_uids.add(u)
                        found.append(u)
                for p in cached_pseudos:
                    emit_pseudo(p)
            else:
                visit(self.active_entry_uid(name))

        def visit(u: int):
            if u in seen_uids:
                return
            seen_uids.add(u)
            rec = self.blocks[u]
            if rec.cov_index is not None:
                found.append(u)
                return
            if rec.has_indirect:
                emit_pseudo((u, "indirect"))
            stack.append(u)

        for u in seed_uids:
            visit(u)
        for f in seed_fns:
            push_fn(f)
        while stack:
            rec = self.blocks[stack.pop()]
            for s in rec.successor_uids:
                visit(s)
            for f in rec.called_funcs:
                push_fn(f)
        return tuple(found), tuple(pseudos)

    def _build_caches(self) -> None:
        self._def_order = {
            name: list(range(len(defs))) for name, defs in self.definitions.items()
        }
        self._rebuild()

    def _rebuild(self) -> None:
        self._entry_cache.clear()
        self._succ_cache.clear()
        # Entry caches first (flat traversal, so recursive call chains
        # terminate on the visited set); successor caches then reuse them
        # instead of re-walking callees at every call site.
        for name in self.definitions:
            self._entry_cache[name] = self._frontier_from(
                [self.active_entry_uid(name)], [], use_entry_cache=False
            )
        for rec in self.blocks:
            if rec is None or rec.cov_index is None:
                continue
            succs, pseudos = self._frontier_from(
                rec.successor_uids, rec.called_funcs, use_entry_cache=True
            )
            if rec.has_indirect:
                pseudos = ((rec.uid, "indirect"),) + pseudos
            self._succ_cache[rec.uid] = (succs, pseudos)

    def instrumented_successors(self, uid: int) -> tuple[tuple[int, ...], tuple[PseudoKey, ...]]:
        return self._succ_cache[uid]

    def function_entry_reachable(self, fn_name: str) -> tuple[tuple[int, ...], tuple[PseudoKey, ...]]:
        return self._entry_cache[fn_name]

    # -- definition promotion -----------------------------------------------

    def definition_of_uid(self, uid: int) -> tuple[str, int]:
        rec = self.blocks[uid]
        if rec is None:
            raise CfgIndexError(f"unknown uid {uid}")
        return rec.fn_name, rec.def_pos

    def promote_for_coverage(self, covered_uids) -> bool:
        """Promote any definition proven live by the covered uids.

        Returns True when a promotion happened (caches were rebuilt).
        """
        changed = False
        for uid in covered_uids:
            rec = self.blocks[uid]
            if rec is None:
                continue
            order = self._def_order[rec.fn_name]
            if len(order) > 1 and order[0] != rec.def_pos:
                resolve_definition(self, rec.fn_name, [uid])
                changed = True
        return changed

    def uids_for_indices(self, indices) -> list[int]:
        out = []
        for ci in indices:
            uid = self.uid_by_cov_index.get(ci)
            if uid is None:
                raise InconsistentBuildError(
                    f"coverage index {ci} not present in the CFG dump"
                )
            out.append(uid)
        return out


def build_index(dump: CfgDump) -> CfgIndex:
    """Validate a dump and build the uid-indexed graph with caches."""
    validate_dump(dump)
    return CfgIndex(dump)


def calc_reachable_blocks(
    index: CfgIndex,
    per_input_indices,
    global_indices,
) -> list[tuple[int | PseudoKey, int]]:
    """Reachable uncovered blocks for one input, with minimal BFS depths.

    ``per_input_indices`` and ``global_indices`` are coverage-map index sets
    (the input's own coverage and the whole corpus's).  Returns
    ``[(key, depth), ...]`` in visit order; keys are block uids or indirect
    pseudo keys, each at the smallest depth at which it can be reached, never
    at depth 0, and never already covered.
    """
    seeds = index.uids_for_indices(per_input_indices)
    visited = set(index.uids_for_indices(global_indices))
    visited.update(seeds)
    seen_pseudo: set[PseudoKey] = set()
    result: list[tuple[int | PseudoKey, int]] = []
    queue = deque((u, 0) for u in sorted(seeds))
    while queue:
        uid, depth = queue.popleft()
        succs, pseudos = index.instrumented_successors(uid)
        for s in succs:
            if s not in visited:
                visited.add(s)
                result.append((s, depth + 1))
                queue.append((s, depth + 1))
        for p in pseudos:
            if p not in seen_pseudo:
                seen_pseudo.add(p)
                result.append((p, depth + 1))
    return result


def resolve_definition(index: CfgIndex, function_name: str, observed_covered_uids) -> None:
    """Promote the definition that coverage feedback proves live.

    ``observed_covered_uids`` are block uids seen covered at runtime.  When
    one of them belongs to a definition that is not currently first, that
    definition moves to the front and the caches are rebuilt.
    """
    order = index._def_order.get(function_name)
    if not order or len(order) < 2:
        return
    for uid in observed_covered_uids:
        rec = index.blocks[uid]
        if rec is None or rec.fn_name != function_name:
            continue
        if order[0] != rec.def_pos:
            order.remove(rec.def_pos)
            order.insert(0, rec.def_pos)
            index.epoch += 1
            index._rebuild()
        return
