"""
Offloading a filter to the device
=================================

The same filter runs three ways: on the host after copying every page,
in the on-device interpreter, and as a registered native kernel.  The
offloaded runs return 8 bytes instead of the zone.
"""

import struct

from zcsd import zns
from zcsd.bench import fill_zone_random, host_filter_count
from zcsd.engine import CsdEngine, ExecMode, Stats
from zcsd.image import build_filter_program
from zcsd.kernels import filter_kernel

geometry = zns.DeviceGeometry(block_size=4096, zone_size=4 << 20, zone_count=1)
dev = zns.create_device(geometry)
fill_zone_random(dev, 0, seed=42)

threshold = 1 << 31
pages = geometry.blocks_per_zone

host_stats = Stats()
print("host count:", host_filter_count(dev, 0, threshold, host_stats))
print("  bytes to host:", host_stats.bytes_to_host)

image = build_filter_program(threshold, 0, pages)
print(f"filter image: {image.insn_count} instructions, digest {image.image_digest.hex()[:16]}...")

engine = CsdEngine(dev)
engine.register_native_kernel(image.image_digest, filter_kernel(threshold, 0, pages))
for mode in (ExecMode.INTERPRETED, ExecMode.NATIVE_KERNEL):
    engine.nvm_cmd_bpf_run(image.to_bytes(), mode)
    count, = struct.unpack("<Q", engine.nvm_cmd_bpf_result())
    s = engine.stats_snapshot()
    print(f"{mode.value} count: {count}")
    print(f"  instructions {s.instructions_executed}, bytes to host {s.bytes_to_host}, "
          f"saved {s.data_movement_saved}")
    print("  phases (us):", {k: round(v) for k, v in s.phase_us.items()})
