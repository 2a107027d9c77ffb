"""``zcsd`` command line.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import json
import struct
import sys

from . import bench, zns
from .engine import CsdEngine, CsdError, ExecMode
from .image import ImageError, build_filter_program, filter_budget, write_image
from .kernels import register_known


def _geometry_flags(p):
    p.add_argument("--block-size", type=int, default=4096)
    p.add_argument("--zone-size", type=int, default=16 * 1024 * 1024)
    p.add_argument("--zones", type=int, default=4)


def _geometry(args):
    return zns.DeviceGeometry(args.block_size, args.zone_size, args.zones)


def _scenarios(text):
    try:
        return tuple(bench.Scenario(s.strip()) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"invalid scenario list {text!r} (choose from host, interp, native)")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError(f"{text} is not a 64-bit unsigned value")
    return v


def _u32(text):
    v = int(text, 0)
    if not 0 <= v <= 0xFFFFFFFF:
        raise argparse.ArgumentTypeError(f"{text} is not a 32-bit unsigned value")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="zcsd", description="Zoned computational storage simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run the integer-filter benchmark")
    _geometry_flags(p)
    p.add_argument("--seed", type=_u64, default=42)
    p.add_argument("--threshold", type=_u32, default=1 << 31)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--scenarios", type=_scenarios, default="host,interp,native")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--shared-size", type=int, default=64 * 1024)
    p.add_argument("--out", default="-")

    p = sub.add_parser("run", help="offload a .zbpf image against a device image")
    p.add_argument("--image", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--mode", choices=("interp", "native"), default="interp")
    p.add_argument("--shared-size", type=int, default=64 * 1024)
    p.add_argument("--max-instructions", type=int, default=None)

    p = sub.add_parser("device", help="manage device image files")
    dsub = p.add_subparsers(dest="action", required=True)
    d = dsub.add_parser("create")
    d.add_argument("--device", required=True)
    _geometry_flags(d)
    d = dsub.add_parser("report")
    d.add_argument("--device", required=True)
    d = dsub.add_parser("fill", help="fill an empty zone with the seeded random stream")
    d.add_argument("--device", required=True)
    d.add_argument("--zone", type=int, default=0)
    d.add_argument("--seed", type=_u64, default=42)
    d = dsub.add_parser("reset")
    d.add_argument("--device", required=True)
    d.add_argument("--zone", type=int, required=True)

    p = sub.add_parser("image", help="build program images")
    isub = p.add_subparsers(dest="action", required=True)
    i = isub.add_parser("build-filter")
    i.add_argument("--threshold", type=_u32, default=1 << 31)
    i.add_argument("--start-lba", type=_u64, default=0)
    i.add_argument("--pages", type=_u64, required=True)
    i.add_argument("--out", required=True)
    return parser


def cmd_bench(args, out):
    config = bench.BenchConfig(_geometry(args), args.seed, args.threshold, args.runs,
                               args.scenarios, args.format, args.shared_size)
    report = bench.run_benchmark(config)
    bench.emit_report(report, args.format, out if args.out == "-" else args.out)


def cmd_run(args, out):
    with open(args.image, "rb") as f:
        raw = f.read()
    with zns.open_device(args.device) as dev:
        budget = args.max_instructions
        if budget is None:
            budget = filter_budget(dev.geometry.total_blocks, dev.block_size)
        engine = CsdEngine(dev, args.shared_size, max_instructions=budget)
        mode = ExecMode(args.mode)
        if mode is ExecMode.NATIVE_KERNEL and not register_known(engine, raw):
            raise CsdError("no native kernel is available for this image")
        size = engine.nvm_cmd_bpf_run(raw, mode)
        result = engine.nvm_cmd_bpf_result()
        stats = engine.stats_snapshot()
    doc = {"result_size": size, "result_hex": result.hex(), "stats": stats.to_dict()}
    if size == 8:
        doc["result_u64"] = struct.unpack("<Q", result)[0]
    json.dump(doc, out, indent=2, sort_keys=True)
    out.write("\n")


def cmd_device(args, out):
    if args.action == "create":
        zns.create_device(_geometry(args), args.device).close()
        return
    with zns.open_device(args.device) as dev:
        if args.action == "fill":
            bench.fill_zone_random(dev, args.zone, args.seed)
        elif args.action == "reset":
            dev.zone_reset(args.zone)
        else:
            g = dev.geometry
            out.write(f"block_size={g.block_size} zone_size={g.zone_size} "
                      f"zone_count={g.zone_count}\n")
            out.write("zone state  write_pointer start_lba\n")
            for z in dev.zone_report():
                out.write(f"{z.zone_id:4d} {z.state.name:<5s} {z.write_pointer:13d} "
                          f"{z.start_lba:9d}\n")


def cmd_image(args, out):
    image = build_filter_program(args.threshold, args.start_lba, args.pages)
    write_image(args.out, image)
    out.write(f"{args.out}: {image.insn_count} instructions, "
              f"digest {image.image_digest.hex()}\n")


COMMANDS = {"bench": cmd_bench, "run": cmd_run, "device": cmd_device, "image": cmd_image}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args, out)
    except (zns.ZnsError, CsdError, ImageError, bench.BenchError, OSError, ValueError) as e:
        print(f"zcsd: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
