"""ZBPF program images and the integer-filter program builder.

Image layout (little-endian)::

    offset      size     field
    0           4        magic b"ZBPF"
    4           2        version (1)
    6           2        flags (reserved, 0)
    8           4        insn_count
    12          8*n      code, one 8-byte slot per instruction
    12+8*n      32       SHA-256 over bytes [0, 12+8*n)
"""

import hashlib
import struct
from dataclasses import dataclass

from .bpf import DecodeError, Program, decode
from .bpf.isa import Assembler, alu64, call, exit_, encode, jmp, ldx, lddw, mov64, stx

MAGIC = b"ZBPF"
VERSION = 1
HEADER = struct.Struct("<4sHHI")
DIGEST_SIZE = 32

# helper ABI shared with the engine
HELPER_RETURN_DATA = 1
HELPER_READ = 2
HELPER_GET_LBA_SIZE = 3
HELPER_GET_MEM_INFO = 4

# upper bound for an instruction budget; keeps counters inside int64
MAX_BUDGET = 1 << 62


class ImageError(ValueError):
    pass


class BadMagic(ImageError):
    pass


class UnsupportedVersion(ImageError):
    pass


class DigestMismatch(ImageError):
    pass


class TruncatedImage(ImageError):
    pass


class EmptyProgram(ImageError):
    pass


class ProgramTooLarge(ImageError):
    pass


@dataclass(frozen=True)
class ProgramImage:
    magic: bytes
    version: int
    flags: int
    insn_count: int
    code: bytes
    digest: bytes

    def to_bytes(self):
        return HEADER.pack(self.magic, self.version, self.flags, self.insn_count) \
            + self.code + self.digest

    def __bytes__(self):
        return self.to_bytes()

    @property
    def program(self):
        return decode(self.code)

    @property
    def image_digest(self):
        """SHA-256 of the whole image, the key native kernels are registered under."""
        return hashlib.sha256(self.to_bytes()).digest()


def encode_image(instructions):
    if isinstance(instructions, Program):
        instructions = instructions.instructions
    instructions = list(instructions)
    if not instructions:
        raise EmptyProgram("cannot package an empty program")
    code = encode(instructions)
    header = HEADER.pack(MAGIC, VERSION, 0, len(instructions))
    return header + code + hashlib.sha256(header + code).digest()


def decode_image(data):
    """Parse and integrity-check an image.

    Checks run in the order magic, length, digest, version, so any damage to
    the header fields that the digest covers reports as ``DigestMismatch``.
    """
    data = bytes(data)
    if len(data) < HEADER.size:
        raise TruncatedImage(f"image of {len(data)} bytes is shorter than its header")
    magic, version, flags, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    expected = HEADER.size + 8 * count + DIGEST_SIZE
    if count < 1 or len(data) != expected:
        raise TruncatedImage(
            f"image length {len(data)} does not match insn_count {count} (want {expected})")
    body = data[:-DIGEST_SIZE]
    digest = data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise DigestMismatch("stored digest does not match image contents")
    if version != VERSION:
        raise UnsupportedVersion(f"image version {version}, expected {VERSION}")
    if flags != 0:
        raise UnsupportedVersion(f"reserved flags set: {flags:#06x}")
    return ProgramImage(magic, version, flags, count, data[HEADER.size:-DIGEST_SIZE], digest)


def read_image(path):
    with open(path, "rb") as f:
        return decode_image(f.read())


def write_image(path, image):
    with open(path, "wb") as f:
        f.write(bytes(image))


# -- integer filter ----------------------------------------------------------

# Executed-instruction cost of the filter program, by section.
_FILTER_SETUP = 12
_FILTER_PER_PAGE = 12
_FILTER_PER_INT = 5
_FILTER_TAIL = 7


def filter_budget(page_count, block_size=4096):
    """Upper bound on instructions the filter program executes."""
    ints = max(1, block_size // 4)
    return _FILTER_SETUP + page_count * (_FILTER_PER_PAGE + _FILTER_PER_INT * ints) + _FILTER_TAIL


def _filter_instructions(threshold, start_lba, page_count):
    # r6 lba, r7 count, r8 shared base, r9 page size; end lba at [r10-16]
    a = Assembler()
    a.emit(call(HELPER_GET_LBA_SIZE), mov64(9, src=0))
    a.emit(mov64(1, src=10), alu64("add", 1, imm=-8), call(HELPER_GET_MEM_INFO))
    a.emit(mov64(8, src=0), ldx("dw", 1, 10, -8))
    a.jump("jge", 1, "setup", src=9)
    a.emit(mov64(0, 1), exit_())
    a.label("setup")
    a.emit(lddw(6, start_lba), lddw(1, start_lba + page_count), stx("dw", 10, 1, -16))
    a.emit(mov64(7, 0))
    a.label("page")
    a.emit(mov64(1, src=6), mov64(2, 0), mov64(3, src=9), mov64(4, src=8),
           call(HELPER_READ))
    a.emit(lddw(4, threshold), mov64(1, src=8), mov64(2, src=8), alu64("add", 2, src=9))
    a.label("scan")
    a.emit(ldx("w", 3, 1, 0))
    a.emit(jmp("jle", 3, 1, src=4))
    a.emit(alu64("add", 7, imm=1))
    a.emit(alu64("add", 1, imm=4))
    a.jump("jlt", 1, "scan", src=2)
    a.emit(alu64("add", 6, imm=1), ldx("dw", 1, 10, -16))
    a.jump("jlt", 6, "page", src=1)
    a.emit(stx("dw", 10, 7, -24), mov64(1, src=10), alu64("add", 1, imm=-24),
           mov64(2, 8), call(HELPER_RETURN_DATA))
    a.emit(mov64(0, 0), exit_())
    return a.assemble()


def build_filter_program(threshold, start_lba, page_count, block_size=4096,
                         max_instructions=MAX_BUDGET):
    """Bytecode counting little-endian u32 values strictly greater than ``threshold``
    over ``page_count`` pages starting at ``start_lba``; returns the 8-byte count.

    The output is a pure function of the arguments, so the image digest is
    stable and can key a native kernel.
    """
    if not 0 <= threshold <= 0xFFFFFFFF:
        raise ValueError(f"threshold {threshold} is not a 32-bit unsigned value")
    if page_count < 1:
        raise ValueError("page_count must be >= 1")
    if start_lba < 0 or start_lba + page_count > (1 << 64) - 1:
        raise ValueError("lba range does not fit in 64 bits")
    if filter_budget(page_count, block_size) > max_instructions:
        raise ProgramTooLarge(
            f"{page_count} pages need {filter_budget(page_count, block_size)} instructions, "
            f"limit is {max_instructions}")
    return decode_image(encode_image(_filter_instructions(threshold, start_lba, page_count)))


def filter_params(image):
    """Recover ``(threshold, start_lba, page_count)`` from a filter image, or None.

    The image matches only if rebuilding from the recovered constants gives
    byte-identical code.
    """
    if not isinstance(image, ProgramImage):
        image = decode_image(image)
    try:
        prog = image.program
        template = _filter_instructions(0, 0, 1)
        if len(prog) != len(template):
            return None

        def wide(i):
            lo, hi = prog.instructions[i].imm, prog.instructions[i + 1].imm
            return (lo & 0xFFFFFFFF) | ((hi & 0xFFFFFFFF) << 32)

        slots = [i for i, insn in enumerate(template) if insn.opcode == 0x18]
        start, end, threshold = wide(slots[0]), wide(slots[1]), wide(slots[2])
        params = (threshold, start, end - start)
        if params[2] < 1 or threshold > 0xFFFFFFFF:
            return None
        if encode(_filter_instructions(*params)) != image.code:
            return None
        return params
    except DecodeError:
        return None
