"""Deterministic MiniIR interpreter with block-entry coverage callbacks.

Modules are linked into a LinkedProgram: function names resolve to the
definition in the *last* module that defines them (later modules shadow
earlier ones, like symbol interposition at link time), and indirect-call
tables concatenate in module order.  The CFG dump produced at instrument
time instead assumes the *first* definition is live, which is exactly the
mismatch the reachability layer resolves from coverage feedback at runtime.

Execution is fuel-bounded and fully deterministic: same program, same input,
same trace.  Reading past the end of the input yields 0 and sets a flag.
Division or modulo by zero yields 0.  ``abort`` and indirect calls through
invalid table indices crash; running out of fuel marks the trace timed out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import IrModule

_U64 = 1 << 64
_I64_MAX = (1 << 63) - 1

# Lowered opcode numbers.  Binary operators are lowered to dedicated opcodes
# so the hot loop dispatches on a single int.
_ASSIGN = 0
_INPUT_READ = 1
_INPUT_BYTE = 2
_CALL = 3
_ICALL = 4
_BIN_BASE = 10
_BINOP_CODES = {
    "+": 10, "-": 11, "*": 12, "/": 13, "%": 14,
    "&": 15, "|": 16, "^": 17, "<<": 18, ">>": 19,
    "==": 20, "!=": 21, "<": 22, "<=": 23, ">": 24, ">=": 25,
}

_T_GOTO = 0
_T_BR = 1
_T_SWITCH = 2
_T_RETURN = 3
_T_ABORT = 4


class LinkError(Exception):
    pass


class ChecksumMismatch(Exception):
    """Instrumentation data does not belong to this set of modules."""


@dataclass
class ExecutionTrace:
    covered_indices: set[int]
    crashed: bool
    steps: int
    exit_value: int
    timed_out: bool = False
    input_exhausted: bool = False
    # Only populated in record_path mode: (function name, block label) pairs
    # for every block entered, instrumented or not.
    block_path: list[tuple[str, str]] | None = None


@dataclass
class _RtBlock:
    key: tuple[str, str]          # (function name, label), for path recording
    cov_index: int                # -1 when uninstrumented
    instrs: list[tuple]
    terminator: tuple


@dataclass
class _RtFunction:
    name: str
    nslots: int
    nparams: int
    blocks: list[_RtBlock]


@dataclass
class LinkedProgram:
    modules: list[IrModule]
    functions: dict[str, _RtFunction]
    table: list[_RtFunction | None]
    entry: str
    checksums: list[str] = field(default_factory=list)


def _operand(enc: tuple, slots: dict[str, int]):
    """Lower an operand to (slot, const): slot is None for constants."""
    kind, v = enc
    if kind == "const":
        return (None, _wrap(v))
    if v not in slots:
        slots[v] = len(slots)
    return (slots[v], 0)


def _wrap(v: int) -> int:
    v &= _U64 - 1
    return v - _U64 if v > _I64_MAX else v


def _compile_function(fn) -> _RtFunction:
    slots: dict[str, int] = {}
    for p in fn.params:
        slots[p] = len(slots)
    label_to_idx = {b.label: i for i, b in enumerate(fn.blocks)}
    rt_blocks = []
    for blk in fn.blocks:
        instrs = []
        for ins in blk.instrs:
            kind = ins[0]
            if kind == "assign":
                src = _operand(ins[2], slots)
                if ins[1] not in slots:
                    slots[ins[1]] = len(slots)
                instrs.append((_ASSIGN, slots[ins[1]], src))
            elif kind == "binop":
                a = _operand(ins[3], slots)
                b = _operand(ins[4], slots)
                if ins[1] not in slots:
                    slots[ins[1]] = len(slots)
                instrs.append((_BINOP_CODES[ins[2]], slots[ins[1]], a, b))
            elif kind == "input_read":
                if ins[1] not in slots:
                    slots[ins[1]] = len(slots)
                instrs.append((_INPUT_READ, slots[ins[1]]))
            elif kind == "input_byte":
                k = _operand(ins[2], slots)
                if ins[1] not in slots:
                    slots[ins[1]] = len(slots)
                instrs.append((_INPUT_BYTE, slots[ins[1]], k))
            elif kind == "call":
                args = [_operand(a, slots) for a in ins[3]]
                dest = None
                if ins[1] is not None:
                    if ins[1] not in slots:
                        slots[ins[1]] = len(slots)
                    dest = slots[ins[1]]
                instrs.append((_CALL, dest, ins[2], args))
            elif kind == "icall":
                target = _operand(ins[2], slots)
                args = [_operand(a, slots) for a in ins[3]]
                dest = None
                if ins[1] is not None:
                    if ins[1] not in slots:
                        slots[ins[1]] = len(slots)
                    dest = slots[ins[1]]
                instrs.append((_ICALL, dest, target, args))
            else:
                raise LinkError(f"unknown instruction kind {kind!r}")
        t = blk.terminator
        kind = t[0]
        if kind == "goto":
            term = (_T_GOTO, label_to_idx[t[1]])
        elif kind == "br":
            term = (_T_BR, _operand(t[1], slots), label_to_idx[t[2]], label_to_idx[t[3]])
        elif kind == "switch":
            cases = {v: label_to_idx[lbl] for v, lbl in t[2]}
            term = (_T_SWITCH, _operand(t[1], slots), cases, label_to_idx[t[3]])
        elif kind == "return":
            term = (_T_RETURN, _operand(t[1], slots))
        else:
            term = (_T_ABORT,)
        cov = -1 if blk.cov_index is None else blk.cov_index
        rt_blocks.append(_RtBlock((fn.name, blk.label), cov, instrs, term))
    return _RtFunction(fn.name, len(slots), len(fn.params), rt_blocks)


def link(modules: list[IrModule]) -> LinkedProgram:
    """Link modules into an executable program.

    Block instrumentation annotations (cov_index) present on the IR are baked
    into the runtime blocks, so run the instrumentation pass before linking
    when coverage output is wanted.
    """
    if not modules:
        raise LinkError("no modules to link")
    functions: dict[str, _RtFunction] = {}
    for mod in modules:
        for fn in mod.functions:
            functions[fn.name] = _compile_function(fn)
    table: list[_RtFunction | None] = []
    for mod in modules:
        for name in mod.table:
            table.append(functions.get(name))
    entry = modules[0].entry_function
    return LinkedProgram(
        modules=list(modules),
        functions=functions,
        table=table,
        entry=entry,
        checksums=[m.checksum for m in modules],
    )


def execute(
    program: LinkedProgram,
    input_bytes: bytes,
    fuel: int = 100_000,
    record_path: bool = False,
) -> ExecutionTrace:
    """Run the linked program on one input, collecting block coverage.

    Every instruction and terminator costs one unit of fuel; entering a block
    costs nothing.  The trace's ``steps`` is the fuel actually consumed.
    """
    covered: set[int] = set()
    path: list[tuple[str, str]] | None = [] if record_path else None
    inlen = len(input_bytes)
    cursor = 0
    exhausted = False
    steps = 0
    table = program.table

    entry_fn = program.functions[program.entry]
    regs = [0] * entry_fn.nslots
    # Call stack of (function, block, resume instr index, regs, return slot).
    frames: list[tuple[_RtFunction, _RtBlock, int, list[int], int | None]] = []
    fn = entry_fn
    block = fn.blocks[0]
    ii = 0
    entered = True

    while True:
        if entered:
            entered = False
            if block.cov_index >= 0:
                covered.add(block.cov_index)
            if path is not None:
                path.append(block.key)
        instrs = block.instrs
        ninstr = len(instrs)
        advanced = False
        while ii < ninstr:
            if steps >= fuel:
                return ExecutionTrace(covered, False, steps, 0, True, exhausted, path)
            steps += 1
            ins = instrs[ii]
            op = ins[0]
            if op >= _BIN_BASE:
                sa, ca = ins[2]
                a = ca if sa is None else regs[sa]
                sb, cb = ins[3]
                b = cb if sb is None else regs[sb]
                if op == 10:
                    r = a + b
                elif op == 11:
                    r = a - b
                elif op == 12:
                    r = a * b
                elif op == 13:
                    # C-style truncating division; divide by zero yields 0.
                    r = (-(-a // b) if (a < 0) != (b < 0) else a // b) if b else 0
                elif op == 14:
                    r = (abs(a) % abs(b)) * (1 if a >= 0 else -1) if b else 0
                elif op == 15:
                    r = a & b
                elif op == 16:
                    r = a | b
                elif op == 17:
                    r = a ^ b
                elif op == 18:
                    r = a << (b & 63)
                elif op == 19:
                    r = a >> (b & 63)
                elif op == 20:
                    r = 1 if a == b else 0
                elif op == 21:
                    r = 1 if a != b else 0
                elif op == 22:
                    r = 1 if a < b else 0
                elif op == 23:
                    r = 1 if a <= b else 0
                elif op == 24:
                    r = 1 if a > b else 0
                else:
                    r = 1 if a >= b else 0
                if not (-9223372036854775808 <= r <= _I64_MAX):
                    r = _wrap(r)
                regs[ins[1]] = r
            elif op == _ASSIGN:
                s, c = ins[2]
                regs[ins[1]] = c if s is None else regs[s]
            elif op == _INPUT_READ:
                if cursor < inlen:
                    regs[ins[1]] = input_bytes[cursor]
                    cursor += 1
                else:
                    regs[ins[1]] = 0
                    exhausted = True
            elif op == _INPUT_BYTE:
                s, c = ins[2]
                k = c if s is None else regs[s]
                if 0 <= k < inlen:
                    regs[ins[1]] = input_bytes[k]
                else:
                    regs[ins[1]] = 0
                    exhausted = True
            else:  # _CALL or _ICALL
                if op == _CALL:
                    callee = program.functions.get(ins[2])
                    if callee is None:
                        # Unresolved external call: returns 0, like a stub.
                        if ins[1] is not None:
                            regs[ins[1]] = 0
                        ii += 1
                        continue
                else:
                    s, c = ins[2]
                    idx = c if s is None else regs[s]
                    callee = table[idx] if 0 <= idx < len(table) else None
                    if callee is None:
                        return ExecutionTrace(covered, True, steps, 0, False, exhausted, path)
                newregs = [0] * callee.nslots
                for i, (s, c) in enumerate(ins[3][: callee.nparams]):
                    newregs[i] = c if s is None else regs[s]
                frames.append((fn, block, ii + 1, regs, ins[1]))
                fn = callee
                regs = newregs
                block = fn.blocks[0]
                ii = 0
                entered = True
                advanced = True
                break
            ii += 1
        if advanced:
            continue

        # Terminator.
        if steps >= fuel:
            return ExecutionTrace(covered, False, steps, 0, True, exhausted, path)
        steps += 1
        t = block.terminator
        tk = t[0]
        if tk == _T_GOTO:
            block = fn.blocks[t[1]]
            ii = 0
            entered = True
        elif tk == _T_BR:
            s, c = t[1]
            v = c if s is None else regs[s]
            block = fn.blocks[t[2] if v else t[3]]
            ii = 0
            entered = True
        elif tk == _T_SWITCH:
            s, c = t[1]
            v = c if s is None else regs[s]
            block = fn.blocks[t[2].get(v, t[3])]
            ii = 0
            entered = True
        elif tk == _T_RETURN:
            s, c = t[1]
            v = c if s is None else regs[s]
            if not frames:
                return ExecutionTrace(covered, False, steps, v, False, exhausted, path)
            fn, block, ii, regs, dest = frames.pop()  # type: ignore[assignment]
            if dest is not None:
                regs[dest] = v
        else:  # abort
            return ExecutionTrace(covered, True, steps, 0, False, exhausted, path)
