"""MiniIR: a small integer-only IR of functions, basic blocks and explicit input reads.

Text grammar (tokens are whitespace separated; comments run from ``#`` or
``//`` to the end of the line):

    module      := item*
    item        := table | function
    table       := "table" name+
    function    := "fn" name "(" [name ("," name)*] ")" "{" block+ "}"
    block       := label ":" instr* terminator
    instr       := name "=" rhs
                 | "call" name "(" args ")"
                 | "icall" operand "(" args ")"
    rhs         := operand
                 | operand binop operand
                 | "input_read" "(" ")"
                 | "input_byte" "(" operand ")"
                 | "call" name "(" args ")"
                 | "icall" operand "(" args ")"
    terminator  := "goto" label
                 | "br" operand label label
                 | "switch" operand ("case" int "->" label)* "default" label
                 | "return" operand
                 | "abort"
    operand     := name | int            # decimal or 0x hex, optional leading -
    binop       := + - * / % & | ^ << >> == != < <= > >=

All values are 64-bit signed integers with wrapping arithmetic.  Comparisons
yield 0 or 1.  ``input_read()`` pops the next input byte, ``input_byte(k)``
reads the byte at offset ``k``; reads past the end of the input yield 0.
``br`` takes the first label when its operand is nonzero.  ``table``
declares names eligible as indirect-call targets; ``icall v(...)`` calls the
``v``-th table entry (out-of-range indices crash the program).

A block is a straight-line instruction list closed by exactly one
terminator.  A call may appear anywhere in the instruction list, so a block
ending ``call f(...); goto L`` is legal.  The first block of a function is
its entry; the first function of a module is the module entry.

Instructions are plain tuples (kept cheap for the interpreter):

    ("assign", dest, operand)
    ("binop", dest, op, a, b)
    ("input_read", dest)
    ("input_byte", dest, operand)
    ("call", dest_or_None, func_name, [operands])
    ("icall", dest_or_None, operand, [operands])

Terminators:

    ("goto", label)
    ("br", operand, label, label)
    ("switch", operand, [(value, label), ...], default_label)
    ("return", operand)
    ("abort",)

Operands are ("const", value) or ("var", name).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

BINOPS = {
    "+", "-", "*", "/", "%", "&", "|", "^", "<<", ">>",
    "==", "!=", "<", "<=", ">", ">=",
}

KEYWORDS = {
    "fn", "table", "goto", "br", "switch", "case", "default", "return",
    "abort", "call", "icall", "input_read", "input_byte",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*|//[^\n]*)
  | (?P<num>-?0[xX][0-9a-fA-F]+|-?\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|<<|>>|==|!=|<=|>=|[-+*/%&|^<>=(){}:,])
    """,
    re.VERBOSE,
)


class ParseError(Exception):
    """Syntax or structural error in MiniIR source, with line/column info."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


@dataclass
class IrBlock:
    label: str
    instrs: list[tuple] = field(default_factory=list)
    terminator: tuple = ("abort",)
    # Filled in by the instrumentation pass.
    uid: int | None = None
    cov_index: int | None = None

    def successor_labels(self) -> list[str]:
        """Branch targets of the terminator, deduplicated, in source order."""
        t = self.terminator
        kind = t[0]
        if kind == "goto":
            return [t[1]]
        if kind == "br":
            out = [t[2]]
            if t[3] != t[2]:
                out.append(t[3])
            return out
        if kind == "switch":
            out: list[str] = []
            for _, lbl in t[2]:
                if lbl not in out:
                    out.append(lbl)
            if t[3] not in out:
                out.append(t[3])
            return out
        return []

    def called_function_names(self) -> list[str]:
        """Names of directly called functions, in instruction order."""
        return [ins[2] for ins in self.instrs if ins[0] == "call"]

    def indirect_call_count(self) -> int:
        return sum(1 for ins in self.instrs if ins[0] == "icall")


@dataclass
class IrFunction:
    name: str
    params: list[str]
    blocks: list[IrBlock]

    @property
    def entry(self) -> IrBlock:
        return self.blocks[0]

    def block_by_label(self, label: str) -> IrBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)


@dataclass
class IrModule:
    functions: list[IrFunction]
    table: list[str] = field(default_factory=list)
    source: str = ""

    @property
    def entry_function(self) -> str:
        return self.functions[0].name

    @property
    def checksum(self) -> str:
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()

    def function_by_name(self, name: str) -> IrFunction:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)


def _tokenize(src: str) -> list[tuple[str, str, int, int]]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", line, col)
        text = m.group(0)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append((kind, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    tokens.append(("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        if tok[0] != "eof":
            self.pos += 1
        return tok

    def error(self, message: str, tok=None):
        tok = tok or self.peek()
        raise ParseError(message, tok[2], tok[3])

    def expect(self, text: str):
        tok = self.next()
        if tok[1] != text:
            self.error(f"expected {text!r}, found {tok[1]!r}", tok)
        return tok

    def expect_name(self) -> str:
        tok = self.next()
        if tok[0] != "name" or tok[1] in KEYWORDS:
            self.error(f"expected identifier, found {tok[1]!r}", tok)
        return tok[1]

    def expect_int(self) -> int:
        tok = self.next()
        if tok[0] != "num":
            self.error(f"expected integer, found {tok[1]!r}", tok)
        return int(tok[1], 0)

    def operand(self) -> tuple:
        tok = self.next()
        if tok[0] == "num":
            return ("const", int(tok[1], 0))
        if tok[0] == "name" and tok[1] not in KEYWORDS:
            return ("var", tok[1])
        self.error(f"expected operand, found {tok[1]!r}", tok)

    def args(self) -> list[tuple]:
        self.expect("(")
        out = []
        if self.peek()[1] != ")":
            out.append(self.operand())
            while self.peek()[1] == ",":
                self.next()
                out.append(self.operand())
        self.expect(")")
        return out

    def module(self) -> IrModule:
        functions: list[IrFunction] = []
        table: list[str] = []
        seen = set()
        while True:
            tok = self.peek()
            if tok[0] == "eof":
                break
            if tok[1] == "table":
                self.next()
                table.append(self.expect_name())
                while self.peek()[0] == "name" and self.peek()[1] not in KEYWORDS:
                    table.append(self.expect_name())
            elif tok[1] == "fn":
                fn = self.function()
                if fn.name in seen:
                    self.error(f"duplicate function {fn.name!r} in module", tok)
                seen.add(fn.name)
                functions.append(fn)
            else:
                self.error(f"expected 'fn' or 'table', found {tok[1]!r}", tok)
        if not functions:
            raise ParseError("module defines no functions", 1, 1)
        return IrModule(functions=functions, table=table)

    def function(self) -> IrFunction:
        self.expect("fn")
        name = self.expect_name()
        self.expect("(")
        params = []
        if self.peek()[1] != ")":
            params.append(self.expect_name())
            while self.peek()[1] == ",":
                self.next()
                params.append(self.expect_name())
        self.expect(")")
        self.expect("{")
        blocks = []
        labels = set()
        while self.peek()[1] != "}":
            blk = self.block()
            if blk.label in labels:
                self.error(f"duplicate label {blk.label!r}")
            labels.add(blk.label)
            blocks.append(blk)
        self.expect("}")
        if not blocks:
            raise ParseError(f"function {name!r} has no blocks", 1, 1)
        fn = IrFunction(name=name, params=params, blocks=blocks)
        for blk in blocks:
            for lbl in blk.successor_labels():
                if lbl not in labels:
                    raise ParseError(
                        f"branch to undefined label {lbl!r} in function {name!r}", 1, 1
                    )
        return fn

    def block(self) -> IrBlock:
        label = self.expect_name()
        self.expect(":")
        blk = IrBlock(label=label)
        while True:
            tok = self.peek()
            if tok[1] in ("goto", "br", "switch", "return", "abort"):
                blk.terminator = self.terminator()
                return blk
            if tok[1] == "}" or tok[0] == "eof":
                self.error(f"block {label!r} has no terminator", tok)
            blk.instrs.append(self.instruction())

    def instruction(self) -> tuple:
        tok = self.peek()
        if tok[1] == "call":
            self.next()
            return ("call", None, self.expect_name(), self.args())
        if tok[1] == "icall":
            self.next()
            return ("icall", None, self.operand(), self.args())
        dest = self.expect_name()
        self.expect("=")
        return self.rhs(dest)

    def rhs(self, dest: str) -> tuple:
        tok = self.peek()
        if tok[1] == "input_read":
            self.next()
            self.expect("(")
            self.expect(")")
            return ("input_read", dest)
        if tok[1] == "input_byte":
            self.next()
            self.expect("(")
            k = self.operand()
            self.expect(")")
            return ("input_byte", dest, k)
        if tok[1] == "call":
            self.next()
            return ("call", dest, self.expect_name(), self.args())
        if tok[1] == "icall":
            self.next()
            return ("icall", dest, self.operand(), self.args())
        a = self.operand()
        if self.peek()[1] in BINOPS:
            op = self.next()[1]
            b = self.operand()
            return ("binop", dest, op, a, b)
        return ("assign", dest, a)

    def terminator(self) -> tuple:
        tok = self.next()
        kw = tok[1]
        if kw == "goto":
            return ("goto", self.expect_name())
        if kw == "br":
            return ("br", self.operand(), self.expect_name(), self.expect_name())
        if kw == "switch":
            scrut = self.operand()
            cases = []
            while self.peek()[1] == "case":
                self.next()
                value = self.expect_int()
                self.expect("->")
                cases.append((value, self.expect_name()))
            self.expect("default")
            return ("switch", scrut, cases, self.expect_name())
        if kw == "return":
            return ("return", self.operand())
        if kw == "abort":
            return ("abort",)
        self.error(f"expected terminator, found {kw!r}", tok)


def parse_module(source_text: str) -> IrModule:
    """Parse MiniIR text into a structurally validated module.

    Raises ParseError (with line/column) on syntax errors, duplicate labels
    within a function, branches to undefined labels, or duplicate function
    names within one module.
    """
    module = _Parser(source_text).module()
    module.source = source_text
    return module
