from dataclasses import dataclass, field

from .isa import OP_CALL, OP_LDDW, Instruction, encode as _encode

_SLOT_SIZE = 8


class VmError(Exception):
    pass


class DecodeError(VmError, ValueError):
    pass


class TruncatedProgram(DecodeError):
    pass


class MalformedWideImm(DecodeError):
    pass


@dataclass(frozen=True)
class Program:
    instructions: tuple
    declared_helper_ids: frozenset = field(default=frozenset())

    def __len__(self):
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    @classmethod
    def from_instructions(cls, instructions):
        insns = tuple(Instruction(*i) for i in instructions)
        helpers = frozenset(i.imm for i in insns if i.opcode == OP_CALL)
        return cls(insns, helpers)

    def encode(self):
        return _encode(self.instructions)

    def wide_second_slots(self):
        """Indices of the second halves of LDDW pairs."""
        out = set()
        i = 0
        n = len(self.instructions)
        while i < n:
            if self.instructions[i].opcode == OP_LDDW:
                out.add(i + 1)
                i += 2
            else:
                i += 1
        return out


def decode(data):
    """Split raw bytecode into instructions; exact inverse of ``encode``."""
    data = bytes(data)
    if not data:
        raise TruncatedProgram("empty program")
    if len(data) % _SLOT_SIZE:
        raise TruncatedProgram(f"program length {len(data)} is not a multiple of 8")
    insns = [Instruction.from_bytes(data[i:i + _SLOT_SIZE])
             for i in range(0, len(data), _SLOT_SIZE)]
    i = 0
    while i < len(insns):
        if insns[i].opcode == OP_LDDW:
            if i + 1 >= len(insns):
                raise MalformedWideImm(f"wide load at {i} has no second slot")
            if insns[i + 1].opcode != 0:
                raise MalformedWideImm(
                    f"wide load at {i} followed by opcode {insns[i + 1].opcode:#04x}")
            i += 2
        else:
            i += 1
    return Program.from_instructions(insns)


def encode(program):
    if isinstance(program, Program):
        return program.encode()
    return _encode(program)
