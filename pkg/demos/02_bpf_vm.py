"""
Assembling, verifying and running bytecode
==========================================

The assembler emits standard eBPF slots.  The verifier checks the
program's structure before anything runs, and the interpreter enforces
memory bounds and an instruction budget at run time.
"""

from zcsd.bpf import ExecContext, Program, VmConfig, execute, verify
from zcsd.bpf.isa import Assembler, alu64, exit_, jmp, mov64

# sum 1..100 with a backward jump
a = Assembler()
a.emit(mov64(0, 0))
a.emit(mov64(1, 1))
a.label("loop")
a.emit(alu64("add", 0, src=1))
a.emit(alu64("add", 1, imm=1))
a.jump("jle", 1, "loop", imm=100)
a.emit(exit_())
program = Program.from_instructions(a.assemble())

config = VmConfig(max_instructions=10_000)
print("verifier:", verify(program, config))

ctx = ExecContext()
print("r0 =", execute(program, config, ctx))
print("instructions executed:", ctx.instructions_executed)

# a program without EXIT is turned away with a reason
bad = Program.from_instructions(mov64(0, 1))
print("verifier on a program without exit:", verify(bad, config))

# the budget stops runaway loops even when the structure is fine
spin = Program.from_instructions([*mov64(1, 1), *jmp("jne", 1, -1, imm=0), *exit_()])
try:
    execute(spin, VmConfig(max_instructions=1000), ExecContext())
except Exception as e:
    print(type(e).__name__, e)
