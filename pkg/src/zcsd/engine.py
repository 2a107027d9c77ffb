"""Device-side offload engine.

``CsdEngine`` couples a ``ZnsDevice`` with the bytecode VM.  Programs reach
the device only through four numbered helpers (the stable ABI):

    id  name              arguments (r1..r4)            r0
    1   bpf_return_data   ptr, size                     0
    2   bpf_read          lba, offset, limit, dest_ptr  0
    3   bpf_get_lba_size  -                             block size
    4   bpf_get_mem_info  size_out_ptr                  shared region base

``bpf_get_mem_info`` writes the shared region length as a u64 through the
pointer in r1.

Native kernels stand in for JIT-compiled code: a host function registered
under the SHA-256 of a program image runs instead of the interpreter, but it
still goes through the same helper operations and accounting.
"""

import enum
import hashlib
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import zns
from .bpf import (DecodeError, ExecContext, HelperFault, MemFault, VmConfig, VmFault,
                  execute, verify)
from .bpf.vm import _lower
from .image import (HELPER_GET_LBA_SIZE, HELPER_GET_MEM_INFO, HELPER_READ,
                    HELPER_RETURN_DATA, MAX_BUDGET, ImageError, decode_image)

RESULT_CAP = 1 << 20
DEFAULT_SHARED_SIZE = 64 * 1024
READ_LIMIT_MAX = 0xFFFF


class CsdError(Exception):
    pass


class ParseError(CsdError):
    pass


class VerifyFailed(CsdError):
    def __init__(self, report):
        super().__init__(f"program rejected by verifier: {report}")
        self.report = report


class ExecFault(CsdError):
    def __init__(self, fault):
        super().__init__(f"offload faulted: {fault}")
        self.fault = fault


class NoNativeKernel(CsdError):
    pass


class NoResult(CsdError):
    pass


class DuplicateDigest(CsdError):
    pass


class ExecMode(enum.Enum):
    INTERPRETED = "interp"
    NATIVE_KERNEL = "native"


@dataclass
class Stats:
    phase_us: dict = field(default_factory=dict)
    instructions_executed: int = 0
    helper_calls: int = 0
    bytes_read_device: int = 0
    bytes_to_host: int = 0

    @property
    def data_movement_saved(self):
        return max(0, self.bytes_read_device - self.bytes_to_host)

    def copy(self):
        return Stats(dict(self.phase_us), self.instructions_executed, self.helper_calls,
                     self.bytes_read_device, self.bytes_to_host)

    def to_dict(self):
        return {
            "phase_us": dict(self.phase_us),
            "instructions_executed": self.instructions_executed,
            "helper_calls": self.helper_calls,
            "bytes_read_device": self.bytes_read_device,
            "bytes_to_host": self.bytes_to_host,
            "data_movement_saved": self.data_movement_saved,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d["phase_us"]), d["instructions_executed"], d["helper_calls"],
                   d["bytes_read_device"], d["bytes_to_host"])


class _Timer:
    def __init__(self, stats, name):
        self.stats = stats
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter_ns()

    def __exit__(self, *exc):
        self.stats.phase_us[self.name] = (time.perf_counter_ns() - self.t0) / 1000.0


class NativeApi:
    """Helper operations as seen by a native kernel.

    Memory is handed out as numpy views of the shared region; kernels index
    them directly, without the interpreter's per-access checks.
    """

    def __init__(self, engine, ctx):
        self._engine = engine
        self._ctx = ctx

    def get_lba_size(self):
        self._engine._stats.helper_calls += 1
        return self._engine.device.block_size

    def get_mem_info(self):
        self._engine._stats.helper_calls += 1
        return self._ctx.shared, len(self._ctx.shared)

    def read(self, lba, offset, limit, dest):
        self._engine._stats.helper_calls += 1
        if limit == 0:
            return
        if len(dest) < limit:
            raise HelperFault(f"destination of {len(dest)} bytes cannot take {limit}",
                              cause="MemFault")
        self._engine._device_read(lba, offset, limit, dest[:limit])

    def return_data(self, data):
        self._engine._stats.helper_calls += 1
        self._engine._append_result(np.frombuffer(bytes(data), dtype=np.uint8))


class CsdEngine:
    def __init__(self, device, shared_region_size=DEFAULT_SHARED_SIZE,
                 max_instructions=MAX_BUDGET, stack_size=512):
        if shared_region_size < device.block_size:
            raise ValueError(
                f"shared region of {shared_region_size} bytes cannot hold a "
                f"{device.block_size}-byte page")
        self.device = device
        self.shared_region_size = shared_region_size
        self.vm_config = VmConfig(max_instructions, stack_size, {
            HELPER_RETURN_DATA: self._h_return_data,
            HELPER_READ: self._h_read,
            HELPER_GET_LBA_SIZE: self._h_get_lba_size,
            HELPER_GET_MEM_INFO: self._h_get_mem_info,
        })
        self.native_kernels = {}
        self.result_buffer = bytearray()
        self._has_result = False
        self._stats = Stats()
        self._lock = threading.Lock()

    # -- accounting core shared by both execution modes ------------------

    def _device_read(self, lba, offset, limit, dest):
        if limit > READ_LIMIT_MAX:
            raise HelperFault(f"read limit {limit} exceeds {READ_LIMIT_MAX}", cause="OutOfRange")
        try:
            self.device.readinto(lba, offset, dest)
        except zns.UnwrittenRead as e:
            raise HelperFault(str(e), cause="UnwrittenRead") from e
        except zns.OutOfRange as e:
            raise HelperFault(str(e), cause="OutOfRange") from e
        self._stats.bytes_read_device += limit

    def _append_result(self, view):
        if len(self.result_buffer) + len(view) > RESULT_CAP:
            raise HelperFault(f"result buffer would exceed {RESULT_CAP} bytes",
                              cause="ResultTooLarge")
        self.result_buffer += view.tobytes()
        self._stats.bytes_to_host += len(view)

    # -- VM helper bindings ----------------------------------------------

    def _h_return_data(self, ctx, ptr, size, *_):
        if size:
            self._append_result(ctx.region(ptr, size))
        return 0

    def _h_read(self, ctx, lba, offset, limit, dest, *_):
        if limit == 0:
            return 0
        if limit > READ_LIMIT_MAX:
            raise HelperFault(f"read limit {limit} exceeds {READ_LIMIT_MAX}", cause="OutOfRange")
        try:
            view = ctx.region(dest, limit)
        except MemFault as e:
            raise HelperFault(str(e), cause="MemFault") from e
        self._device_read(lba, offset, limit, view)
        return 0

    def _h_get_lba_size(self, ctx, *_):
        return self.device.block_size

    def _h_get_mem_info(self, ctx, size_ptr, *_):
        ctx.store(size_ptr, struct.pack("<Q", len(ctx.shared)))
        return ctx.shared_base

    # -- host-facing commands --------------------------------------------

    def register_native_kernel(self, image_digest, kernel):
        if len(image_digest) != 32:
            raise ValueError("image digest must be 32 bytes (SHA-256)")
        digest = bytes(image_digest)
        if digest in self.native_kernels:
            raise DuplicateDigest(f"a kernel is already registered for {digest.hex()}")
        self.native_kernels[digest] = kernel

    def nvm_cmd_bpf_run(self, program_image, mode=ExecMode.INTERPRETED):
        """Run an offload synchronously and return the result size in bytes."""
        mode = ExecMode(mode)
        with self._lock:
            self.result_buffer = bytearray()
            self._has_result = False
            stats = self._stats = Stats()
            raw = bytes(program_image)

            with _Timer(stats, "parse"):
                try:
                    program = decode_image(raw).program
                except (ImageError, DecodeError) as e:
                    raise ParseError(str(e)) from e

            with _Timer(stats, "verify"):
                report = verify(program, self.vm_config)
            if not report.passed:
                raise VerifyFailed(report)

            with _Timer(stats, "load"):
                if mode is ExecMode.NATIVE_KERNEL:
                    kernel = self.native_kernels.get(hashlib.sha256(raw).digest())
                    if kernel is None:
                        raise NoNativeKernel("no native kernel registered for this image")
                else:
                    _lower(program)
                ctx = ExecContext(self.vm_config.stack_size, self.shared_region_size)

            try:
                with _Timer(stats, "execute"):
                    if mode is ExecMode.NATIVE_KERNEL:
                        kernel(NativeApi(self, ctx))
                    else:
                        try:
                            execute(program, self.vm_config, ctx)
                        finally:
                            stats.instructions_executed = ctx.instructions_executed
                            stats.helper_calls = ctx.helper_calls
            except VmFault as e:
                self.result_buffer = bytearray()
                raise ExecFault(e) from e
            self._has_result = True
            return len(self.result_buffer)

    def nvm_cmd_bpf_result(self):
        with self._lock:
            if not self._has_result:
                raise NoResult("no completed offload run")
            return bytes(self.result_buffer)

    def stats_snapshot(self):
        with self._lock:
            return self._stats.copy()


# Functional spellings matching the command names.

def nvm_cmd_bpf_run(engine, program_image, mode=ExecMode.INTERPRETED):
    return engine.nvm_cmd_bpf_run(program_image, mode)


def nvm_cmd_bpf_result(engine):
    return engine.nvm_cmd_bpf_result()


def register_native_kernel(engine, image_digest, kernel):
    engine.register_native_kernel(image_digest, kernel)


def stats_snapshot(engine):
    return engine.stats_snapshot()
