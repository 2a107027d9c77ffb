import struct

import numpy as np
import pytest

from zcsd import zns
from zcsd.bench import fill_zone_random, host_filter_count
from zcsd.bpf import HelperFault, MemFault, SHARED_BASE
from zcsd.bpf.isa import alu64, call, exit_, jmp, lddw, mov64, st, stx
from zcsd.engine import (CsdEngine, DuplicateDigest, ExecFault, ExecMode, NoNativeKernel,
                         NoResult, ParseError, Stats, VerifyFailed)
from zcsd.image import build_filter_program, encode_image, filter_budget
from zcsd.kernels import filter_kernel, register_filter, register_known

INTERP, NATIVE = ExecMode.INTERPRETED, ExecMode.NATIVE_KERNEL


def image(*groups):
    return encode_image(sum((list(g) for g in groups), []))


@pytest.fixture
def device():
    # 2 zones of 32 pages, zone 0 full of random data
    dev = zns.create_device(zns.DeviceGeometry(4096, 4096 * 32, 2))
    fill_zone_random(dev, 0, seed=11)
    return dev


@pytest.fixture
def engine(device):
    return CsdEngine(device, shared_region_size=8192)


def const_zone(value, pages=8):
    dev = zns.create_device(zns.DeviceGeometry(4096, 4096 * pages, 1))
    dev.zone_append(0, np.full(pages * 1024, value, dtype="<u4").tobytes())
    return dev


def run_filter(dev, threshold, mode=INTERP, shared=8192):
    eng = CsdEngine(dev, shared, max_instructions=filter_budget(dev.geometry.blocks_per_zone))
    raw = register_filter(eng, threshold, 0, dev.geometry.blocks_per_zone)
    assert eng.nvm_cmd_bpf_run(raw, mode) == 8
    return struct.unpack("<Q", eng.nvm_cmd_bpf_result())[0], eng.stats_snapshot()


# -- run / result -----------------------------------------------------------

def test_exit_program_returns_nothing(engine):
    assert engine.nvm_cmd_bpf_run(image(exit_()), INTERP) == 0
    assert engine.nvm_cmd_bpf_result() == b""


def test_result_before_run(engine):
    with pytest.raises(NoResult):
        engine.nvm_cmd_bpf_result()


def test_result_is_idempotent(device):
    count, _ = run_filter(device, 1 << 31)
    eng = CsdEngine(device, 8192)
    raw = register_filter(eng, 1 << 31, 0, 32)
    eng.nvm_cmd_bpf_run(raw, INTERP)
    first = eng.nvm_cmd_bpf_result()
    assert first == eng.nvm_cmd_bpf_result()
    assert struct.unpack("<Q", first)[0] == count


def test_parse_error(engine):
    with pytest.raises(ParseError):
        engine.nvm_cmd_bpf_run(b"garbage", INTERP)


def test_verify_failed(engine):
    with pytest.raises(VerifyFailed) as ei:
        engine.nvm_cmd_bpf_run(image(mov64(0, 1)), INTERP)
    assert not ei.value.report.passed


def test_no_native_kernel(engine):
    with pytest.raises(NoNativeKernel):
        engine.nvm_cmd_bpf_run(image(exit_()), NATIVE)


def test_duplicate_digest(engine):
    raw = register_filter(engine, 5, 0, 4)
    with pytest.raises(DuplicateDigest):
        register_filter(engine, 5, 0, 4)
    assert register_known(engine, raw)


def test_register_known_rejects_foreign_image(engine):
    assert not register_known(engine, image(exit_()))


# -- helpers ----------------------------------------------------------------

def test_return_data_from_shared(engine):
    raw = image(mov64(1, src=10), alu64("add", 1, imm=-8), call(4),
                st("dw", 0, -0x01020304, 0), mov64(1, src=0), mov64(2, 8), call(1),
                mov64(0, 0), exit_())
    assert engine.nvm_cmd_bpf_run(raw, INTERP) == 8
    assert engine.nvm_cmd_bpf_result() == struct.pack("<q", -0x01020304)
    assert engine.stats_snapshot().bytes_to_host == 8


def test_return_data_zero_size(engine):
    raw = image(lddw(1, 0), mov64(2, 0), call(1), exit_())
    assert engine.nvm_cmd_bpf_run(raw, INTERP) == 0


def test_return_data_straddling_shared(engine):
    raw = image(lddw(1, SHARED_BASE + 8192 - 4), mov64(2, 8), call(1), exit_())
    with pytest.raises(ExecFault) as ei:
        engine.nvm_cmd_bpf_run(raw, INTERP)
    assert isinstance(ei.value.fault, MemFault)
    with pytest.raises(NoResult):
        engine.nvm_cmd_bpf_result()


def test_results_concatenate_in_call_order(engine):
    raw = image(st("b", 10, 0xAA, -1), st("b", 10, 0xBB, -2),
                mov64(1, src=10), alu64("add", 1, imm=-1), mov64(2, 1), call(1),
                mov64(1, src=10), alu64("add", 1, imm=-2), mov64(2, 2), call(1), exit_())
    assert engine.nvm_cmd_bpf_run(raw, INTERP) == 3
    assert engine.nvm_cmd_bpf_result() == b"\xaa\xbb\xaa"


def test_result_cap(device):
    eng = CsdEngine(device, 8192)
    # return the same 4 KiB page 257 times: 1 MiB + 4 KiB
    raw = image(mov64(6, 0), lddw(1, SHARED_BASE), mov64(2, 4096), call(1),
                alu64("add", 6, imm=1), jmp("jlt", 6, -6, imm=257), exit_())
    with pytest.raises(ExecFault) as ei:
        eng.nvm_cmd_bpf_run(raw, INTERP)
    assert ei.value.fault.cause == "ResultTooLarge"
    assert eng.result_buffer == bytearray()


def test_read_page_into_shared(engine, device):
    raw = image(lddw(4, SHARED_BASE), mov64(1, 0), mov64(2, 0), mov64(3, 4096), call(2),
                lddw(1, SHARED_BASE), mov64(2, 4096), call(1), exit_())
    engine.nvm_cmd_bpf_run(raw, INTERP)
    assert engine.nvm_cmd_bpf_result() == device.read(0, 0, 4096)
    s = engine.stats_snapshot()
    assert s.bytes_read_device == 4096 and s.bytes_to_host == 4096
    assert s.data_movement_saved == 0


def test_read_zero_limit(engine):
    raw = image(mov64(1, 0), mov64(2, 0), mov64(3, 0), mov64(4, 0), call(2), exit_())
    engine.nvm_cmd_bpf_run(raw, INTERP)
    assert engine.stats_snapshot().bytes_read_device == 0


@pytest.mark.parametrize("lba,off,limit,dest,cause", [
    (32, 0, 4096, SHARED_BASE, "UnwrittenRead"),
    (9999, 0, 16, SHARED_BASE, "OutOfRange"),
    (0, 4090, 16, SHARED_BASE, "OutOfRange"),
    (0, 0, 4096, SHARED_BASE + 8000, "MemFault"),
    (0, 0, 1 << 16, SHARED_BASE, "OutOfRange"),
])
def test_read_errors(engine, lba, off, limit, dest, cause):
    raw = image(lddw(1, lba), lddw(2, off), lddw(3, limit), lddw(4, dest), call(2), exit_())
    with pytest.raises(ExecFault) as ei:
        engine.nvm_cmd_bpf_run(raw, INTERP)
    assert isinstance(ei.value.fault, HelperFault)
    assert ei.value.fault.cause == cause


@pytest.mark.parametrize("bs", [512, 4096])
def test_get_lba_size(bs):
    dev = zns.create_device(zns.DeviceGeometry(bs, bs * 4, 1))
    eng = CsdEngine(dev, 8192)
    raw = image(call(3), mov64(6, src=0), call(3), stx("dw", 10, 6, -8), stx("dw", 10, 0, -16),
                mov64(1, src=10), alu64("add", 1, imm=-16), mov64(2, 16), call(1), exit_())
    eng.nvm_cmd_bpf_run(raw, INTERP)
    a, b = struct.unpack("<QQ", eng.nvm_cmd_bpf_result())
    assert a == b == bs


def test_get_mem_info(device):
    eng = CsdEngine(device, 65536)
    raw = image(mov64(1, src=10), alu64("add", 1, imm=-8), call(4), mov64(6, src=0),
                mov64(1, src=10), alu64("add", 1, imm=-16), call(4), stx("dw", 10, 6, -24),
                stx("dw", 10, 0, -32), stx("dw", 6, 6, 0),
                mov64(1, src=10), alu64("add", 1, imm=-32), mov64(2, 32), call(1), exit_())
    eng.nvm_cmd_bpf_run(raw, INTERP)
    base2, base1, size2, size1 = struct.unpack("<QQQQ", eng.nvm_cmd_bpf_result())
    assert size1 == size2 == 65536
    assert base1 == base2 == SHARED_BASE


def test_get_mem_info_bad_slot(engine):
    raw = image(mov64(1, 8), call(4), exit_())
    with pytest.raises(ExecFault) as ei:
        engine.nvm_cmd_bpf_run(raw, INTERP)
    assert isinstance(ei.value.fault, MemFault)


def test_shared_region_must_hold_a_page(device):
    with pytest.raises(ValueError):
        CsdEngine(device, 1024)


# -- stats ------------------------------------------------------------------

def test_stats_before_run(engine):
    s = engine.stats_snapshot()
    assert (s.instructions_executed, s.helper_calls, s.bytes_read_device, s.bytes_to_host,
            s.data_movement_saved) == (0, 0, 0, 0, 0)


def test_stats_snapshot_is_a_copy(engine):
    s = engine.stats_snapshot()
    s.bytes_read_device = 99
    assert engine.stats_snapshot().bytes_read_device == 0


def test_stats_round_trip():
    s = Stats({"execute": 1.5}, 10, 3, 4096, 8)
    assert Stats.from_dict(s.to_dict()) == s
    assert s.to_dict()["data_movement_saved"] == 4088
    assert Stats(bytes_read_device=4, bytes_to_host=10).data_movement_saved == 0


def test_filter_stats_16mib():
    dev = zns.create_device(zns.DeviceGeometry(4096, 16 * 1024 * 1024, 1))
    fill_zone_random(dev, 0, seed=5)
    count, s = run_filter(dev, 1 << 31)
    assert count == host_filter_count(dev, 0, 1 << 31)
    assert s.bytes_read_device == 16777216
    assert s.bytes_to_host == 8
    assert s.data_movement_saved == 16777208
    assert s.helper_calls >= dev.geometry.blocks_per_zone
    assert set(s.phase_us) == {"parse", "verify", "load", "execute"}


# -- filter semantics and cross-mode equivalence ----------------------------

@pytest.mark.parametrize("mode", [INTERP, NATIVE])
@pytest.mark.parametrize("threshold", [0, 7, 1 << 31, 0xFFFFFFFF])
def test_filter_all_zero(mode, threshold):
    assert run_filter(const_zone(0), threshold, mode)[0] == 0


@pytest.mark.parametrize("mode", [INTERP, NATIVE])
def test_filter_all_ones(mode):
    dev = const_zone(0xFFFFFFFF)
    assert run_filter(dev, 1 << 31, mode)[0] == dev.geometry.zone_size // 4


@pytest.mark.parametrize("mode", [INTERP, NATIVE])
def test_filter_strictly_greater(mode):
    dev = const_zone(1000)
    assert run_filter(dev, 1000, mode)[0] == 0
    assert run_filter(dev, 999, mode)[0] == dev.geometry.zone_size // 4


def test_modes_agree(device):
    threshold = 1 << 31
    a, sa = run_filter(device, threshold, INTERP)
    b, sb = run_filter(device, threshold, NATIVE)
    data = np.frombuffer(device.zone_view(0).tobytes(), dtype="<u4")
    assert a == b == int((data > threshold).sum())
    assert sb.instructions_executed == 0
    assert sa.instructions_executed > 0
    assert sa.bytes_read_device == sb.bytes_read_device
    assert sa.bytes_to_host == sb.bytes_to_host == 8
    assert sa.helper_calls == sb.helper_calls


def test_instruction_count_matches_budget_when_all_exceed():
    dev = const_zone(0xFFFFFFFF, pages=4)
    _, s = run_filter(dev, 0)
    assert s.instructions_executed == filter_budget(4)


def test_filter_subrange(device):
    eng = CsdEngine(device, 8192)
    raw = register_filter(eng, 1 << 31, 5, 3)
    for mode in (INTERP, NATIVE):
        eng.nvm_cmd_bpf_run(raw, mode)
        got = struct.unpack("<Q", eng.nvm_cmd_bpf_result())[0]
        pages = np.frombuffer(b"".join(device.read(l, 0, 4096) for l in range(5, 8)), "<u4")
        assert got == int((pages > (1 << 31)).sum())


def test_filter_past_write_pointer_faults(device):
    eng = CsdEngine(device, 8192)
    raw = register_filter(eng, 0, 30, 4)
    for mode in (INTERP, NATIVE):
        with pytest.raises(ExecFault) as ei:
            eng.nvm_cmd_bpf_run(raw, mode)
        assert ei.value.fault.cause == "UnwrittenRead"
        assert eng.result_buffer == bytearray()


def test_fault_leaves_device_unmodified(device):
    before = device.zone_report()
    snapshot = device.zone_view(0).tobytes()
    eng = CsdEngine(device, 8192)
    with pytest.raises(ExecFault):
        eng.nvm_cmd_bpf_run(image(lddw(1, 1 << 40), stx("dw", 1, 0, 0), exit_()), INTERP)
    assert device.zone_report() == before
    assert device.zone_view(0).tobytes() == snapshot


def test_native_kernel_small_shared_region():
    dev = const_zone(1, pages=2)
    kernel = filter_kernel(0, 0, 2)
    eng = CsdEngine(dev, 4096)
    raw = build_filter_program(0, 0, 2)
    eng.register_native_kernel(raw.image_digest, kernel)
    assert eng.nvm_cmd_bpf_run(raw.to_bytes(), NATIVE) == 8
    assert struct.unpack("<Q", eng.nvm_cmd_bpf_result())[0] == 2048
