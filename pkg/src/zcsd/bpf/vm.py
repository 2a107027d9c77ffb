"""Bounds-checked bytecode interpreter.

The dispatch loop is compiled with numba and runs until the program exits,
faults, or reaches a ``call``; helper calls are serviced in Python and the loop
resumes at the next slot.  Every load and store is checked against the two
regions a program can see, the stack and the shared region, so a program
cannot touch any other memory.

Program-visible address space::

    STACK_BASE  .. STACK_BASE + stack_size     stack (r10 = top)
    SHARED_BASE .. SHARED_BASE + shared_size   shared region
"""

import functools
import types
from dataclasses import dataclass, field

import numba
import numpy as np

from .program import VmError

__all__ = [
    "VmConfig", "ExecContext", "execute",
    "VmFault", "BudgetExceeded", "MemFault", "DivByZero", "HelperFault",
    "UnknownOpcode", "JumpOutOfBounds", "UnknownHelper", "RegisterFault",
    "STACK_BASE", "SHARED_BASE",
]

STACK_BASE = 0x1_0000_0000
SHARED_BASE = 0x2_0000_0000
GUARD_SIZE = 64
CANARY = 0xA5
U64 = (1 << 64) - 1


class VmFault(VmError):
    def __init__(self, msg, pc=None):
        super().__init__(msg if pc is None else f"{msg} at insn {pc}")
        self.pc = pc


class BudgetExceeded(VmFault):
    pass


class MemFault(VmFault):
    pass


class DivByZero(VmFault):
    pass


class HelperFault(VmFault):
    """A helper binding failed; ``cause`` names the underlying error."""

    def __init__(self, msg, cause=None, pc=None):
        super().__init__(msg, pc)
        self.cause = cause


class UnknownOpcode(VmFault):
    pass


class JumpOutOfBounds(VmFault):
    pass


class UnknownHelper(VmFault):
    pass


class RegisterFault(VmFault):
    pass


@dataclass(frozen=True)
class VmConfig:
    max_instructions: int = 1 << 20
    stack_size: int = 512
    helper_table: types.MappingProxyType = field(default_factory=dict)

    def __post_init__(self):
        if self.max_instructions <= 0:
            raise ValueError("max_instructions must be > 0")
        if self.stack_size <= 0:
            raise ValueError("stack_size must be > 0")
        if self.stack_size > SHARED_BASE - STACK_BASE:
            raise ValueError("stack_size too large")
        object.__setattr__(self, "helper_table", types.MappingProxyType(dict(self.helper_table)))

    def with_budget(self, max_instructions):
        return VmConfig(max_instructions, self.stack_size, self.helper_table)


def _guarded(size):
    buf = np.full(size + 2 * GUARD_SIZE, CANARY, dtype=np.uint8)
    region = buf[GUARD_SIZE:GUARD_SIZE + size]
    region[:] = 0
    return buf, region


class ExecContext:
    """Registers, sandbox memory and counters for a single run.

    Both regions are carved out of larger buffers whose edges hold canary
    bytes, so escapes past either end are detectable with
    ``canaries_intact``.
    """

    def __init__(self, stack_size=512, shared_size=0):
        self.regs = np.zeros(11, dtype=np.int64)
        self._stack_buf, self.stack = _guarded(stack_size)
        self._shared_buf, self.shared = _guarded(shared_size)
        self.stack_base = STACK_BASE
        self.shared_base = SHARED_BASE
        self.regs[10] = STACK_BASE + stack_size
        self.instructions_executed = 0
        self.helper_calls = 0

    @property
    def frame_pointer(self):
        return self.stack_base + len(self.stack)

    def region(self, addr, size):
        """Writable view of ``size`` bytes at program address ``addr``."""
        addr &= U64
        if size < 0:
            raise MemFault(f"negative access size {size}")
        for base, mem in ((self.stack_base, self.stack), (self.shared_base, self.shared)):
            off = addr - base
            if 0 <= off and off + size <= len(mem):
                return mem[off:off + size]
        raise MemFault(f"access of {size} bytes at {addr:#x} outside sandbox")

    def load(self, addr, size):
        return self.region(addr, size).tobytes()

    def store(self, addr, data):
        self.region(addr, len(data))[:] = np.frombuffer(bytes(data), dtype=np.uint8)

    def canaries_intact(self):
        g = GUARD_SIZE
        return all((buf[:g] == CANARY).all() and (buf[-g:] == CANARY).all()
                   for buf in (self._stack_buf, self._shared_buf))


# -- compiled core ----------------------------------------------------------

ST_EXIT = 0
ST_CALL = 1
ST_BUDGET = 2
ST_MEMFAULT = 3
ST_DIVZERO = 4
ST_BADOP = 5
ST_BADPC = 6
ST_BADREG = 7
ST_R10 = 8

_M32 = 0xFFFFFFFF


@numba.njit(cache=True, inline="always")
def _offset(addr, size, base, length):
    off = addr - base
    if off < 0 or off > length - size:
        return -1
    return off


@numba.njit(cache=True, inline="always")
def _load(mem, off, size):
    v = np.int64(0)
    for k in range(size):
        v |= np.int64(mem[off + k]) << (8 * k)
    return v


@numba.njit(cache=True, inline="always")
def _store(mem, off, size, v):
    for k in range(size):
        mem[off + k] = (v >> (8 * k)) & 0xFF


@numba.njit(cache=True)
def _run(op, dst, src, off, imm, regs, pc, stack, stack_base, shared, shared_base,
         budget, executed):
    n = op.shape[0]
    slen = stack.shape[0]
    shlen = shared.shape[0]
    while True:
        if pc < 0 or pc >= n:
            return ST_BADPC, pc, executed
        if executed >= budget:
            return ST_BUDGET, pc, executed
        executed += 1
        o = op[pc]
        d = dst[pc]
        s = src[pc]
        if d > 10 or s > 10:
            return ST_BADREG, pc, executed
        cls = o & 0x07
        code = o & 0xF0

        if cls == 0x07 or cls == 0x04:
            if d == 10:
                return ST_R10, pc, executed
            a = regs[d]
            if o & 0x08:
                b = regs[s]
            else:
                b = imm[pc]
            if cls == 0x07:
                if code == 0x00:
                    r = a + b
                elif code == 0x10:
                    r = a - b
                elif code == 0x20:
                    r = a * b
                elif code == 0x30:
                    if b == 0:
                        return ST_DIVZERO, pc, executed
                    r = np.int64(np.uint64(a) // np.uint64(b))
                elif code == 0x40:
                    r = a | b
                elif code == 0x50:
                    r = a & b
                elif code == 0x60:
                    r = a << (b & 63)
                elif code == 0x70:
                    r = np.int64(np.uint64(a) >> np.uint64(b & 63))
                elif code == 0x80:
                    if o & 0x08:
                        return ST_BADOP, pc, executed
                    r = -a
                elif code == 0x90:
                    if b == 0:
                        return ST_DIVZERO, pc, executed
                    r = np.int64(np.uint64(a) % np.uint64(b))
                elif code == 0xa0:
                    r = a ^ b
                elif code == 0xb0:
                    r = b
                elif code == 0xc0:
                    r = a >> (b & 63)
                else:
                    return ST_BADOP, pc, executed
            else:
                ua = a & _M32
                ub = b & _M32
                if code == 0x00:
                    r = (ua + ub) & _M32
                elif code == 0x10:
                    r = (ua - ub) & _M32
                elif code == 0x20:
                    r = (ua * ub) & _M32
                elif code == 0x30:
                    if ub == 0:
                        return ST_DIVZERO, pc, executed
                    r = ua // ub
                elif code == 0x40:
                    r = ua | ub
                elif code == 0x50:
                    r = ua & ub
                elif code == 0x60:
                    r = (ua << (ub & 31)) & _M32
                elif code == 0x70:
                    r = ua >> (ub & 31)
                elif code == 0x80:
                    if o & 0x08:
                        return ST_BADOP, pc, executed
                    r = (-ua) & _M32
                elif code == 0x90:
                    if ub == 0:
                        return ST_DIVZERO, pc, executed
                    r = ua % ub
                elif code == 0xa0:
                    r = ua ^ ub
                elif code == 0xb0:
                    r = ub
                elif code == 0xc0:
                    sa = (ua ^ 0x80000000) - 0x80000000
                    r = (sa >> (ub & 31)) & _M32
                else:
                    return ST_BADOP, pc, executed
            regs[d] = r
            pc += 1

        elif cls == 0x05:
            if o == 0x05:
                pc += 1 + off[pc]
                continue
            if o == 0x85:
                return ST_CALL, pc, executed
            if o == 0x95:
                return ST_EXIT, pc, executed
            a = regs[d]
            if o & 0x08:
                b = regs[s]
            else:
                b = imm[pc]
            if code == 0x10:
                t = a == b
            elif code == 0x50:
                t = a != b
            elif code == 0x20:
                t = np.uint64(a) > np.uint64(b)
            elif code == 0x30:
                t = np.uint64(a) >= np.uint64(b)
            elif code == 0xa0:
                t = np.uint64(a) < np.uint64(b)
            elif code == 0xb0:
                t = np.uint64(a) <= np.uint64(b)
            elif code == 0x60:
                t = a > b
            elif code == 0x70:
                t = a >= b
            elif code == 0xc0:
                t = a < b
            elif code == 0xd0:
                t = a <= b
            elif code == 0x40:
                t = (a & b) != 0
            else:
                return ST_BADOP, pc, executed
            if t:
                pc += 1 + off[pc]
            else:
                pc += 1

        elif cls == 0x01 or cls == 0x02 or cls == 0x03:
            if o & 0xE0 != 0x60:
                return ST_BADOP, pc, executed
            sz = o & 0x18
            if sz == 0x18:
                size = 8
            elif sz == 0x00:
                size = 4
            elif sz == 0x08:
                size = 2
            else:
                size = 1
            if cls == 0x01:
                if d == 10:
                    return ST_R10, pc, executed
                addr = regs[s] + off[pc]
            else:
                addr = regs[d] + off[pc]
            mo = _offset(addr, size, stack_base, slen)
            if mo >= 0:
                mem = stack
            else:
                mo = _offset(addr, size, shared_base, shlen)
                if mo < 0:
                    return ST_MEMFAULT, pc, executed
                mem = shared
            if cls == 0x01:
                regs[d] = _load(mem, mo, size)
            elif cls == 0x03:
                _store(mem, mo, size, regs[s])
            else:
                _store(mem, mo, size, imm[pc])
            pc += 1

        elif o == 0x18:
            if d == 10:
                return ST_R10, pc, executed
            regs[d] = imm[pc]
            pc += 2

        else:
            return ST_BADOP, pc, executed


@functools.lru_cache(maxsize=256)
def _lower(program):
    """Flatten a program into parallel arrays; LDDW immediates are pre-joined."""
    insns = program.instructions
    n = len(insns)
    op = np.empty(n, dtype=np.uint8)
    dst = np.empty(n, dtype=np.uint8)
    src = np.empty(n, dtype=np.uint8)
    off = np.empty(n, dtype=np.int64)
    imm = np.empty(n, dtype=np.int64)
    for i, insn in enumerate(insns):
        op[i], dst[i], src[i], off[i], imm[i] = insn
    for i in range(n - 1):
        if op[i] == 0x18:
            lo = int(imm[i]) & 0xFFFFFFFF
            hi = int(imm[i + 1]) & 0xFFFFFFFF
            v = lo | (hi << 32)
            imm[i] = v - (1 << 64) if v >> 63 else v
    for a in (op, dst, src, off, imm):
        a.flags.writeable = False
    return op, dst, src, off, imm


def _u64(v):
    return int(v) & U64


def _s64(v):
    v &= U64
    return v - (1 << 64) if v >> 63 else v


def execute(program, config, context):
    """Run ``program`` to ``exit`` and return r0 as an unsigned 64-bit int.

    ``context`` is mutated: registers, memory and counters reflect the run
    even when it ends in a fault.
    """
    op, dst, src, off, imm = _lower(program)
    ctx = context
    regs = ctx.regs
    regs[10] = ctx.frame_pointer
    helpers = config.helper_table
    budget = config.max_instructions
    pc = 0
    while True:
        status, pc, executed = _run(op, dst, src, off, imm, regs, pc,
                                    ctx.stack, ctx.stack_base, ctx.shared, ctx.shared_base,
                                    budget, ctx.instructions_executed)
        ctx.instructions_executed = int(executed)
        if status == ST_EXIT:
            return _u64(regs[0])
        if status == ST_CALL:
            hid = int(imm[pc])
            helper = helpers.get(hid)
            if helper is None:
                raise UnknownHelper(f"call to unbound helper {hid}", pc)
            ctx.helper_calls += 1
            args = [_u64(regs[i]) for i in range(1, 6)]
            try:
                ret = helper(ctx, *args)
            except VmFault as e:
                if e.pc is None:
                    e.pc = pc
                    e.args = (f"{e.args[0]} at insn {pc}",)
                raise
            regs[0] = _s64(ret or 0)
            pc += 1
            continue
        raise _fault(status, pc, program, regs, budget)


def _fault(status, pc, program, regs, budget):
    if status == ST_BUDGET:
        return BudgetExceeded(f"instruction budget of {budget} exhausted", pc)
    if status == ST_MEMFAULT:
        insn = program.instructions[pc]
        base = insn.src if insn.cls == 0x01 else insn.dst
        addr = _u64(int(regs[base]) + insn.offset)
        return MemFault(f"out-of-bounds access at {addr:#x}", pc)
    if status == ST_DIVZERO:
        return DivByZero("division by zero", pc)
    if status == ST_BADOP:
        return UnknownOpcode(f"unknown opcode {program.instructions[pc].opcode:#04x}", pc)
    if status == ST_BADPC:
        return JumpOutOfBounds(f"control left the program (pc={pc})")
    if status == ST_BADREG:
        return RegisterFault("invalid register index", pc)
    if status == ST_R10:
        return RegisterFault("write to read-only frame pointer r10", pc)
    return VmFault(f"unexpected interpreter status {status}", pc)


def warmup():
    """Compile (or load from cache) the interpreter core."""
    from .isa import exit_
    from .program import Program
    execute(Program.from_instructions(exit_()), VmConfig(max_instructions=1), ExecContext(8, 8))
