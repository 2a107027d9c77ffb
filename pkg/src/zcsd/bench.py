"""Integer-filter benchmark: Host vs Interpreted vs NativeKernel.

Each scenario and repetition goes through the same three timed phases:

* ``init``   reset every zone and zero the device
* ``fill``   fill zone 0 with seeded random u32 values
* ``filter`` count values above the threshold, on the host or offloaded

Random data comes from SplitMix64.  Output ``k`` (``k = 1, 2, ...``) is the
standard SplitMix64 finalizer applied to ``seed + k * 0x9E3779B97F4A7C15``
(mod 2**64); the zone's bytes are the little-endian serialization of
consecutive outputs, so each 64-bit output yields two u32 values, low half
first.
"""

import csv
import enum
import io
import json
import struct
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import zns
from .bpf import vm
from .engine import DEFAULT_SHARED_SIZE, CsdEngine, ExecMode, Stats
from .image import build_filter_program, filter_budget
from .kernels import filter_kernel

GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
FILL_CHUNK = 4 << 20
PHASES = ("init", "fill", "filter")
CSV_COLUMNS = ("scenario", "run", "phase", "micros", "count", "instructions_executed",
               "bytes_read_device", "bytes_to_host")


class ZoneNotEmpty(zns.ZnsError):
    pass


class BenchError(RuntimeError):
    pass


class Scenario(enum.Enum):
    HOST = "host"
    INTERPRETED = "interp"
    NATIVE_KERNEL = "native"


def splitmix64(seed, start, count):
    """Outputs ``start+1 .. start+count`` of the SplitMix64 stream for ``seed``."""
    k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + k * np.uint64(GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def random_bytes(seed, offset, length):
    """Bytes ``[offset, offset+length)`` of the fill stream; ``offset`` must be 8-aligned."""
    assert offset % 8 == 0
    words = splitmix64(seed, offset // 8, (length + 7) // 8)
    return words.astype("<u8").view(np.uint8)[:length]


def fill_zone_random(device, zone_id, seed):
    """Fill an empty zone with the seeded u32 stream; returns bytes written."""
    if not 0 <= zone_id < device.geometry.zone_count:
        raise zns.BadZoneId(f"zone {zone_id} does not exist")
    desc = device.zone_report()[zone_id]
    if desc.state is not zns.ZoneState.EMPTY:
        raise ZoneNotEmpty(f"zone {zone_id} is {desc.state.name}, expected EMPTY")
    zone_size = device.geometry.zone_size
    chunk = max(device.block_size, FILL_CHUNK - FILL_CHUNK % device.block_size)
    for off in range(0, zone_size, chunk):
        n = min(chunk, zone_size - off)
        device.zone_append(zone_id, random_bytes(seed, off, n))
    return zone_size


def host_filter_count(device, zone_id, threshold, stats=None):
    """Read the zone page by page to the host and count u32 values > threshold."""
    g = device.geometry
    desc = device.zone_report()[zone_id]
    usable = g.block_size - g.block_size % 4
    count = 0
    for lba in range(desc.start_lba, desc.start_lba + desc.write_pointer):
        page = device.read(lba, 0, g.block_size)
        count += int(np.count_nonzero(np.frombuffer(page, dtype="<u4", count=usable // 4)
                                      > threshold))
        if stats is not None:
            stats.bytes_read_device += len(page)
            stats.bytes_to_host += len(page)
    return count


@dataclass
class BenchConfig:
    geometry: zns.DeviceGeometry = field(default_factory=zns.DeviceGeometry)
    seed: int = 42
    threshold: int = 1 << 31
    runs: int = 5
    scenarios: tuple = (Scenario.HOST, Scenario.INTERPRETED, Scenario.NATIVE_KERNEL)
    output_format: str = "csv"
    shared_region_size: int = DEFAULT_SHARED_SIZE

    def __post_init__(self):
        self.scenarios = tuple(Scenario(s) for s in self.scenarios)
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not 0 <= self.threshold <= 0xFFFFFFFF:
            raise ValueError("threshold must be a 32-bit unsigned value")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned value")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")

    def to_dict(self):
        return {
            "geometry": asdict(self.geometry),
            "seed": self.seed,
            "threshold": self.threshold,
            "runs": self.runs,
            "scenarios": [s.value for s in self.scenarios],
            "output_format": self.output_format,
            "shared_region_size": self.shared_region_size,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["geometry"] = zns.DeviceGeometry(**d["geometry"])
        d["scenarios"] = tuple(d["scenarios"])
        return cls(**d)


@dataclass
class RunRecord:
    scenario: Scenario
    run: int
    phases_us: dict
    count: int
    stats: Stats

    def to_dict(self):
        return {"scenario": self.scenario.value, "run": self.run,
                "phases_us": dict(self.phases_us), "count": self.count,
                "stats": self.stats.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Scenario(d["scenario"]), d["run"], dict(d["phases_us"]), d["count"],
                   Stats.from_dict(d["stats"]))


@dataclass
class PhaseSummary:
    mean: float
    min: float
    max: float


@dataclass
class BenchReport:
    config: BenchConfig
    runs: list
    summary: dict = None

    def __post_init__(self):
        if self.summary is None:
            self.summary = summarize(self.runs)

    def counts(self):
        return [r.count for r in self.runs]

    def records(self, scenario):
        scenario = Scenario(scenario)
        return [r for r in self.runs if r.scenario is scenario]

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "runs": [r.to_dict() for r in self.runs],
            "summary": {s: {p: asdict(ps) for p, ps in phases.items()}
                        for s, phases in self.summary.items()},
        }

    @classmethod
    def from_dict(cls, d):
        summary = {s: {p: PhaseSummary(**ps) for p, ps in phases.items()}
                   for s, phases in d["summary"].items()}
        return cls(BenchConfig.from_dict(d["config"]),
                   [RunRecord.from_dict(r) for r in d["runs"]], summary)


def summarize(runs):
    out = {}
    for r in runs:
        out.setdefault(r.scenario.value, {p: [] for p in PHASES})
        for p in PHASES:
            out[r.scenario.value][p].append(r.phases_us[p])
    return {s: {p: PhaseSummary(sum(v) / len(v), min(v), max(v)) for p, v in phases.items()}
            for s, phases in out.items()}


def _offload(device, config, image, mode):
    engine = CsdEngine(device, config.shared_region_size,
                       max_instructions=filter_budget(device.geometry.blocks_per_zone,
                                                      device.block_size))
    if mode is ExecMode.NATIVE_KERNEL:
        engine.register_native_kernel(image.image_digest,
                                      filter_kernel(config.threshold, 0,
                                                    device.geometry.blocks_per_zone))
    engine.nvm_cmd_bpf_run(image.to_bytes(), mode)
    result = engine.nvm_cmd_bpf_result()
    if len(result) != 8:
        raise BenchError(f"filter returned {len(result)} bytes, expected 8")
    return struct.unpack("<Q", result)[0], engine.stats_snapshot()


def run_benchmark(config):
    g = config.geometry
    image = build_filter_program(config.threshold, 0, g.blocks_per_zone, g.block_size)
    if Scenario.INTERPRETED in config.scenarios:
        vm.warmup()

    # One backing store for the whole benchmark; each run's init phase
    # resets and zeroes it, so no run pays first-touch page faults.
    device = zns.create_device(g)
    device.format()
    records = []
    for scenario in config.scenarios:
        for run in range(config.runs):
            phases = {}
            phase = "init"
            try:
                t0 = time.perf_counter_ns()
                device.format()
                t1 = time.perf_counter_ns()
                phase = "fill"
                fill_zone_random(device, 0, config.seed)
                t2 = time.perf_counter_ns()
                phase = "filter"
                if scenario is Scenario.HOST:
                    stats = Stats()
                    count = host_filter_count(device, 0, config.threshold, stats)
                else:
                    mode = ExecMode.INTERPRETED if scenario is Scenario.INTERPRETED \
                        else ExecMode.NATIVE_KERNEL
                    count, stats = _offload(device, config, image, mode)
                t3 = time.perf_counter_ns()
            except Exception as e:
                raise BenchError(
                    f"scenario {scenario.value} run {run} phase {phase}: {e}") from e
            phases = {"init": (t1 - t0) / 1000.0, "fill": (t2 - t1) / 1000.0,
                      "filter": (t3 - t2) / 1000.0}
            records.append(RunRecord(scenario, run, phases, count, stats))
    return BenchReport(config, records)


def _csv_rows(report):
    for r in report.runs:
        for p in PHASES:
            yield (r.scenario.value, r.run, p, f"{r.phases_us[p]:.3f}", r.count,
                   r.stats.instructions_executed, r.stats.bytes_read_device,
                   r.stats.bytes_to_host)


def format_report(report, fmt):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(_csv_rows(report))
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown report format {fmt!r} (expected csv or json)")


def emit_report(report, fmt, destination):
    """Write the report to a path, a text file object, or ``"-"`` for stdout."""
    text = format_report(report, fmt)
    if destination in (None, "-"):
        sys.stdout.write(text)
    elif hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", newline="") as f:
            f.write(text)


def load_report(path):
    with open(path) as f:
        return BenchReport.from_dict(json.load(f))
