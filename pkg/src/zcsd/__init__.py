"""Zoned computational storage device simulator.

``zns``     emulated ZNS SSD
``bpf``     bytecode encoding, verifier and sandboxed interpreter
``engine``  device-side offload engine (helper ABI, native kernels, stats)
``image``   ZBPF program images and the filter program builder
``bench``   three-scenario integer-filter benchmark
"""

from .zns import DeviceGeometry, ZnsDevice, create_device, open_device
from .engine import CsdEngine, ExecMode, Stats
from .image import build_filter_program, decode_image, encode_image
from .bench import BenchConfig, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "DeviceGeometry", "ZnsDevice", "create_device", "open_device",
    "CsdEngine", "ExecMode", "Stats",
    "build_filter_program", "decode_image", "encode_image",
    "BenchConfig", "run_benchmark",
]
