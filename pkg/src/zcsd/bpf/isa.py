"""Instruction set, 8-byte slot encoding and a tiny assembler.

Slot layout (little-endian)::

    byte 0     opcode
    byte 1     dst (low nibble) | src (high nibble)
    bytes 2-3  offset, signed 16-bit
    bytes 4-7  imm, signed 32-bit

``LDDW`` spans two slots; the second slot carries the upper 32 bits of the
immediate in its ``imm`` field and has opcode 0.
"""

import struct
from typing import NamedTuple

# instruction classes
CLS_LD = 0x00
CLS_LDX = 0x01
CLS_ST = 0x02
CLS_STX = 0x03
CLS_ALU = 0x04
CLS_JMP = 0x05
CLS_ALU64 = 0x07

# operand source
SRC_K = 0x00
SRC_X = 0x08

# memory sizes / modes
SZ_W = 0x00
SZ_H = 0x08
SZ_B = 0x10
SZ_DW = 0x18
MODE_IMM = 0x00
MODE_MEM = 0x60

SIZE_BYTES = {SZ_B: 1, SZ_H: 2, SZ_W: 4, SZ_DW: 8}

ALU_OPS = {
    "add": 0x00, "sub": 0x10, "mul": 0x20, "div": 0x30, "or": 0x40,
    "and": 0x50, "lsh": 0x60, "rsh": 0x70, "neg": 0x80, "mod": 0x90,
    "xor": 0xa0, "mov": 0xb0, "arsh": 0xc0,
}
JMP_OPS = {
    "ja": 0x00, "jeq": 0x10, "jgt": 0x20, "jge": 0x30, "jset": 0x40,
    "jne": 0x50, "jsgt": 0x60, "jsge": 0x70, "call": 0x80, "exit": 0x90,
    "jlt": 0xa0, "jle": 0xb0, "jslt": 0xc0, "jsle": 0xd0,
}
SIZES = {"b": SZ_B, "h": SZ_H, "w": SZ_W, "dw": SZ_DW}

OP_LDDW = CLS_LD | MODE_IMM | SZ_DW
OP_JA = CLS_JMP | JMP_OPS["ja"]
OP_CALL = CLS_JMP | JMP_OPS["call"]
OP_EXIT = CLS_JMP | JMP_OPS["exit"]

NUM_REGS = 11
FRAME_REG = 10


def _supported():
    ops = set()
    for cls in (CLS_ALU, CLS_ALU64):
        for name, code in ALU_OPS.items():
            ops.add(cls | code | SRC_K)
            if name != "neg":
                ops.add(cls | code | SRC_X)
    for name, code in JMP_OPS.items():
        if name in ("ja", "call", "exit"):
            ops.add(CLS_JMP | code)
        else:
            ops.add(CLS_JMP | code | SRC_K)
            ops.add(CLS_JMP | code | SRC_X)
    for sz in SIZE_BYTES:
        ops.add(CLS_LDX | MODE_MEM | sz)
        ops.add(CLS_STX | MODE_MEM | sz)
        ops.add(CLS_ST | MODE_MEM | sz)
    ops.add(OP_LDDW)
    return frozenset(ops)


SUPPORTED_OPCODES = _supported()

_SLOT = struct.Struct("<BBhi")


class Instruction(NamedTuple):
    opcode: int
    dst: int = 0
    src: int = 0
    offset: int = 0
    imm: int = 0

    @property
    def cls(self):
        return self.opcode & 0x07

    def encode(self):
        return _SLOT.pack(self.opcode & 0xFF, (self.dst & 0xF) | ((self.src & 0xF) << 4),
                          self.offset, self.imm)

    @classmethod
    def from_bytes(cls, slot):
        opcode, regs, off, imm = _SLOT.unpack(slot)
        return cls(opcode, regs & 0xF, regs >> 4, off, imm)


def encode(instructions):
    return b"".join(insn.encode() for insn in instructions)


def writes_dst(opcode):
    """True if the instruction stores a result into its dst register."""
    cls = opcode & 0x07
    return cls in (CLS_ALU, CLS_ALU64, CLS_LDX) or opcode == OP_LDDW


def is_jump(opcode):
    return opcode & 0x07 == CLS_JMP and opcode not in (OP_CALL, OP_EXIT)


def _s32(v):
    v &= 0xFFFFFFFF
    return v - (1 << 32) if v & 0x80000000 else v


# -- assembler helpers ------------------------------------------------------
# Each returns a list of Instruction so programs read as ``[*mov64(0, 1), *exit_()]``
# or are concatenated with ``sum(..., [])``.

def alu64(op, dst, src=None, imm=0):
    code = ALU_OPS[op]
    if src is None:
        return [Instruction(CLS_ALU64 | code | SRC_K, dst, 0, 0, _s32(imm))]
    return [Instruction(CLS_ALU64 | code | SRC_X, dst, src, 0, 0)]


def alu32(op, dst, src=None, imm=0):
    code = ALU_OPS[op]
    if src is None:
        return [Instruction(CLS_ALU | code | SRC_K, dst, 0, 0, _s32(imm))]
    return [Instruction(CLS_ALU | code | SRC_X, dst, src, 0, 0)]


def mov64(dst, imm=0, src=None):
    return alu64("mov", dst, src, imm)


def lddw(dst, value):
    value &= (1 << 64) - 1
    return [Instruction(OP_LDDW, dst, 0, 0, _s32(value)),
            Instruction(0, 0, 0, 0, _s32(value >> 32))]


def ldx(size, dst, src, off=0):
    return [Instruction(CLS_LDX | MODE_MEM | SIZES[size], dst, src, off, 0)]


def stx(size, dst, src, off=0):
    return [Instruction(CLS_STX | MODE_MEM | SIZES[size], dst, src, off, 0)]


def st(size, dst, imm, off=0):
    return [Instruction(CLS_ST | MODE_MEM | SIZES[size], dst, 0, off, _s32(imm))]


def jmp(op, dst, off, src=None, imm=0):
    code = JMP_OPS[op]
    if src is None:
        return [Instruction(CLS_JMP | code | SRC_K, dst, 0, off, _s32(imm))]
    return [Instruction(CLS_JMP | code | SRC_X, dst, src, off, 0)]


def ja(off):
    return [Instruction(OP_JA, 0, 0, off, 0)]


def call(helper_id):
    return [Instruction(OP_CALL, 0, 0, 0, helper_id)]


def exit_():
    return [Instruction(OP_EXIT)]


class _Pending(NamedTuple):
    insn: Instruction
    target: str


class Assembler:
    """Instruction list builder with symbolic jump labels."""

    def __init__(self):
        self._items = []
        self._labels = {}

    def __len__(self):
        return len(self._items)

    def label(self, name):
        if name in self._labels:
            raise ValueError(f"duplicate label {name!r}")
        self._labels[name] = len(self)
        return self

    def emit(self, *groups):
        for group in groups:
            self._items.extend(group)
        return self

    def jump(self, op, dst, target, src=None, imm=0):
        if op == "ja":
            insn = ja(0)[0]
        else:
            insn = jmp(op, dst, 0, src, imm)[0]
        self._items.append(_Pending(insn, target))
        return self

    def assemble(self):
        out = []
        for item in self._items:
            if isinstance(item, _Pending):
                insn, target = item
                if target not in self._labels:
                    raise ValueError(f"undefined label {target!r}")
                insn = insn._replace(offset=self._labels[target] - len(out) - 1)
                out.append(insn)
            else:
                out.append(item)
        return out
