"""Built-in MiniIR fuzz targets: the worked example and a benchmark suite.

``example_program`` is the three-int demo function: a five-way selector on
the first input byte, a hard xor-against-constant check guarding a switch,
and an abort hidden behind one switch case.  Input layout: byte 0 is the
selector int, bytes 1..4 the little-endian second int, byte 5 the switch
int.  Its CFG has 15 blocks labelled A..P (no I); the straight-line blocks
M (the fall-through arm body) and O (the return join) are inferable and
stay uninstrumented.

The benchmark suite holds small targets with distinct scheduling character:
ladders of sequential byte gates (progress concentrates on the deepest
entry), rarity traps (many corpus paths border one unreachable-ish block
while a single path borders a findable one), a gated switch with a crash
case, and a call web with indirect calls and a duplicate function
definition resolved only at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass, field

EXAMPLE_PROGRAM = """
# Three ints decoded from the input: in1 = byte 0, in2 = LE32 at 1..4,
# in3 = byte 5.  Five-way range selector on in1; the 8..15 arm hides a
# xor check guarding a switch whose case 3 aborts.
fn example() {
  A:
    in1 = input_read()
    b1 = input_read()
    b2 = input_read()
    b3 = input_read()
    b4 = input_read()
    in3 = input_read()
    t = b2 << 8
    in2 = b1 | t
    t = b3 << 16
    in2 = in2 | t
    t = b4 << 24
    in2 = in2 | t
    c1 = in1 > 15
    c2 = in1 < 2
    c3 = in1 < 4
    c4 = in1 < 8
    sel = 4 - c4
    n = 1 - c3
    sel = sel * n
    t = 2 * c3
    sel = sel + t
    n = 1 - c2
    sel = sel * n
    sel = sel + c2
    n = 1 - c1
    sel = sel * n
    switch sel case 0 -> B case 1 -> C case 2 -> D case 3 -> E default M
  B:
    res = 1
    goto O
  C:
    res = 2
    goto O
  D:
    res = 3
    goto O
  E:
    res = 4
    goto O
  F:
    x = in1 ^ in2
    c = x == 0xDEADBEEF
    br c G O
  G:
    switch in3 case 0 -> H case 1 -> J case 2 -> K case 3 -> L default N
  H:
    res = 6
    goto O
  J:
    res = 7
    goto O
  K:
    res = 8
    goto O
  L:
    abort
  M:
    res = 5
    goto F
  N:
    res = 9
    goto O
  O:
    goto P
  P:
    return res
}
"""

# Seeds covering each top-level selector arm of the example (in1 values
# 20, 0, 2, 4 and 8), with in2 and in3 zero.
EXAMPLE_SEEDS = [
    bytes([20, 0, 0, 0, 0, 0]),
    bytes([0, 0, 0, 0, 0, 0]),
    bytes([2, 0, 0, 0, 0, 0]),
    bytes([4, 0, 0, 0, 0, 0]),
    bytes([8, 0, 0, 0, 0, 0]),
]


def ladder(rungs: int) -> str:
    """Sequential byte gates; rung k advances only when byte k matches.

    Gate values are single bit patterns, so each is one bit flip (or an
    interesting-byte overwrite) away from a zero byte.
    """
    lines = ["fn main() {"]
    for k in range(rungs):
        key = 1 << ((3 * k + 1) % 8)
        nxt = f"r{k + 1}" if k + 1 < rungs else "top"
        lines += [
            f"  r{k}:",
            "    b = input_read()",
            f"    c = b == {key}",
            f"    br c {nxt} x{k}",
            f"  x{k}:",
            f"    return {k}",
        ]
    lines += ["  top:", f"    return {100 + rungs}", "}"]
    return "\n".join(lines)


def rarity_trap(siblings: int, rare_key: int) -> str:
    """Many sibling paths border one hard block; a lone path borders an easy one.

    The crowded side fans out over ``siblings`` arms that all rejoin in
    front of a two-mutation gate (byte == 77).  The lone side guards its
    bonus block with a single-mutation gate (byte == rare_key, one
    wrapping arithmetic step from zero).
    """
    lines = [
        "fn main() {",
        "  A:",
        "    b0 = input_read()",
        "    b1 = input_read()",
        "    b2 = input_read()",
        "    c = b0 < 128",
        "    br c B C",
        "  B:",
        f"    s = b0 % {siblings}",
        "    switch s "
        + " ".join(f"case {i} -> D{i}" for i in range(siblings))
        + " default D0",
    ]
    for i in range(siblings):
        lines += [f"  D{i}:", f"    t = {i}", "    goto G"]
    lines += [
        "  G:",
        "    c = b1 == 77",
        "    br c J H",
        "  H:",
        "    goto L",
        "  J:",
        "    r = 1",
        "    goto L",
        "  C:",
        f"    c = b2 == {rare_key}",
        "    br c N M",
        "  M:",
        "    r = 2",
        "    goto L",
        "  N:",
        "    r = 3",
        "    goto L",
        "  L:",
        "    return 0",
        "}",
    ]
    return "\n".join(lines)


GATED_SWITCH = """
# Two-byte xor gate in front of a switch; case 9 crashes.
fn main() {
  A:
    b0 = input_read()
    b1 = input_read()
    b2 = input_read()
    x = b0 ^ b1
    c = x == 64
    br c G X
  X:
    return 0
  G:
    switch b2 case 0 -> H case 1 -> J case 7 -> K case 9 -> L default N
  H:
    return 1
  J:
    return 2
  K:
    return 3
  L:
    abort
  N:
    return 4
}
"""

CALL_WEB_MAIN = """
# Selector dispatches to direct calls and an indirect call; every callee
# can return the magic value that unlocks the bonus block.
table f g h
fn main() {
  A:
    b0 = input_read()
    b1 = input_read()
    s = b0 % 3
    r = 0
    switch s case 0 -> CF case 1 -> CG default CH
  CF:
    r = call f(b1)
    goto E
  CG:
    r = call g(b1)
    goto E
  CH:
    t = b0 % 3
    r = icall t(b1)
    goto E
  E:
    c = r == 7
    br c W Z
  W:
    return 99
  Z:
    return r
}
fn f(x) {
  f0:
    c = x > 100
    br c f1 f2
  f1:
    return 7
  f2:
    return 1
}
fn g(x) {
  g0:
    c = x == 50
    br c g1 g2
  g1:
    return 7
  g2:
    return 2
}
fn h(x) {
  h0:
    c = x == 9
    br c h1 h2
  h1:
    return 7
  h2:
    return 3
}
"""

# Second module shadowing g: the linker picks this definition, while the
# CFG dump presumes the first one until coverage proves otherwise.
CALL_WEB_SHADOW = """
fn g(x) {
  gg0:
    c = x == 25
    br c gg1 gg2
  gg1:
    return 7
  gg2:
    return 4
}
"""


@dataclass
class TargetSpec:
    name: str
    sources: list[str]
    seeds: list[bytes]
    budget: int
    # Coverage indices reachable by non-crashing runs (abort blocks and
    # shadowed dead definitions never count), for coverage thresholds.
    coverable: int
    entry: str = "main"
    interesting_extra: list[int] = field(default_factory=list)


def example_target(budget: int = 500_000) -> TargetSpec:
    # 13 instrumented blocks; L only covers on crashing runs: coverable 12.
    return TargetSpec(
        name="example",
        sources=[EXAMPLE_PROGRAM],
        seeds=list(EXAMPLE_SEEDS),
        budget=budget,
        coverable=12,
        entry="example",
        interesting_extra=[0xDEADBEEF],
    )


def build_suite() -> list[TargetSpec]:
    """The six-target benchmark suite at desk scale."""
    l6 = ladder(6)
    l10 = ladder(10)
    return [
        TargetSpec("ladder_shallow", [l6], [bytes(16)], 15_000, coverable=13),
        TargetSpec("ladder_deep", [l10], [bytes(16)], 40_000, coverable=21),
        TargetSpec(
            "rarity_trap",
            [rarity_trap(6, 230)],
            [bytes([0, 0, 0]), bytes([128, 0, 0])],
            15_000,
            coverable=14,
        ),
        TargetSpec(
            "rarity_trap_wide",
            [rarity_trap(10, 202)],
            [bytes([0, 0, 0]), bytes([128, 0, 0])],
            20_000,
            coverable=18,
        ),
        TargetSpec(
            "gated_switch",
            [GATED_SWITCH],
            [bytes(3)],
            20_000,
            coverable=7,
        ),
        TargetSpec(
            "call_web",
            [CALL_WEB_MAIN, CALL_WEB_SHADOW],
            [bytes([0, 0]), bytes([1, 0]), bytes([2, 0])],
            15_000,
            coverable=16,
        ),
    ]


def suite_target(name: str) -> TargetSpec:
    for spec in build_suite():
        if spec.name == name:
            return spec
    raise KeyError(name)
