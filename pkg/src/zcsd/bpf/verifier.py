"""Structural verifier.

This is not a range analyzer: it proves the program only uses known opcodes,
registers and helpers, keeps every jump inside the program, never writes the
frame pointer and can always reach an ``exit``.  Memory safety is left to the
interpreter's per-access bounds checks.
"""

from collections import deque
from dataclasses import dataclass, field

from .isa import (ALU_OPS, CLS_ALU, CLS_ALU64, FRAME_REG, NUM_REGS, OP_CALL,
                  OP_EXIT, OP_JA, OP_LDDW, SRC_X, SUPPORTED_OPCODES, is_jump,
                  writes_dst)

UNKNOWN_OPCODE = "unknown opcode"
BAD_REGISTER = "invalid register"
JUMP_OUT_OF_BOUNDS = "jump out of bounds"
JUMP_INTO_WIDE = "jump into wide immediate"
UNKNOWN_HELPER = "unknown helper"
WRITE_R10 = "write to r10"
DIV_BY_ZERO = "division by zero"
FALLS_OFF_END = "falls off end"
NO_EXIT = "no exit"
CANNOT_REACH_EXIT = "cannot reach exit"


@dataclass(frozen=True)
class Violation:
    index: int
    kind: str
    detail: str = ""

    def __str__(self):
        return f"insn {self.index}: {self.kind}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class VerifyReport:
    violations: tuple = field(default=())

    @property
    def passed(self):
        return not self.violations

    def __bool__(self):
        return self.passed

    def kinds(self):
        return {v.kind for v in self.violations}

    def __str__(self):
        if self.passed:
            return "pass"
        return "; ".join(str(v) for v in self.violations)


def _successors(i, insn, n):
    """Control-flow successors; values outside [0, n) mean leaving the program."""
    op = insn.opcode
    if op == OP_EXIT:
        return []
    if op == OP_LDDW:
        return [i + 2]
    if op == OP_JA:
        return [i + 1 + insn.offset]
    if is_jump(op):
        return [i + 1, i + 1 + insn.offset]
    return [i + 1]


def verify(program, config):
    helpers = config.helper_table if config is not None else {}
    insns = program.instructions
    n = len(insns)
    second = program.wide_second_slots()
    out = []

    if n == 0:
        return VerifyReport((Violation(0, NO_EXIT, "empty program"),))

    well_formed = [True] * n
    for i, insn in enumerate(insns):
        if i in second:
            continue
        op = insn.opcode
        if op not in SUPPORTED_OPCODES:
            out.append(Violation(i, UNKNOWN_OPCODE, f"{op:#04x}"))
            well_formed[i] = False
            continue
        if insn.dst >= NUM_REGS or insn.src >= NUM_REGS:
            out.append(Violation(i, BAD_REGISTER, f"dst=r{insn.dst} src=r{insn.src}"))
        if writes_dst(op) and insn.dst == FRAME_REG:
            out.append(Violation(i, WRITE_R10))
        cls = op & 0x07
        if cls in (CLS_ALU, CLS_ALU64) and not op & SRC_X \
                and op & 0xF0 in (ALU_OPS["div"], ALU_OPS["mod"]) and insn.imm == 0:
            out.append(Violation(i, DIV_BY_ZERO))
        if op == OP_CALL and insn.imm not in helpers:
            out.append(Violation(i, UNKNOWN_HELPER, f"helper {insn.imm}"))
        if op == OP_JA or is_jump(op):
            t = i + 1 + insn.offset
            if not 0 <= t < n:
                out.append(Violation(i, JUMP_OUT_OF_BOUNDS, f"target {t}"))
                well_formed[i] = False
            elif t in second:
                out.append(Violation(i, JUMP_INTO_WIDE, f"target {t}"))
                well_formed[i] = False

    # Reverse reachability from every exit over the static CFG, both branch
    # outcomes taken as possible.
    preds = [[] for _ in range(n)]
    exits = []
    for i, insn in enumerate(insns):
        if i in second or not well_formed[i]:
            continue
        if insn.opcode == OP_EXIT:
            exits.append(i)
        for s in _successors(i, insn, n):
            if 0 <= s < n:
                preds[s].append(i)
            else:
                # bad jump targets were excluded above, so this is a fall-through
                out.append(Violation(i, FALLS_OFF_END))

    if not exits:
        out.append(Violation(n - 1, NO_EXIT))
    else:
        seen = set(exits)
        todo = deque(exits)
        while todo:
            j = todo.popleft()
            for p in preds[j]:
                if p not in seen:
                    seen.add(p)
                    todo.append(p)
        for i in range(n):
            if i not in second and well_formed[i] and i not in seen:
                out.append(Violation(i, CANNOT_REACH_EXIT))

    out.sort(key=lambda v: v.index)
    return VerifyReport(tuple(out))
