"""BPF-style bytecode: encoding, verification and a sandboxed interpreter."""

from .isa import Instruction, Assembler, SUPPORTED_OPCODES, encode
from .program import (Program, decode, VmError, DecodeError, TruncatedProgram,
                      MalformedWideImm)
from .verifier import verify, VerifyReport, Violation
from .vm import (VmConfig, ExecContext, execute, VmFault, BudgetExceeded, MemFault,
                 DivByZero, HelperFault, UnknownOpcode, JumpOutOfBounds, UnknownHelper,
                 RegisterFault, STACK_BASE, SHARED_BASE)

__all__ = [
    "Instruction", "Assembler", "SUPPORTED_OPCODES", "encode",
    "Program", "decode", "VmError", "DecodeError", "TruncatedProgram", "MalformedWideImm",
    "verify", "VerifyReport", "Violation",
    "VmConfig", "ExecContext", "execute", "VmFault", "BudgetExceeded", "MemFault",
    "DivByZero", "HelperFault", "UnknownOpcode", "JumpOutOfBounds", "UnknownHelper",
    "RegisterFault", "STACK_BASE", "SHARED_BASE",
]
