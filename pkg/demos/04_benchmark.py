"""
The filter benchmark
====================

Every scenario runs init, fill and filter five times; the summary keeps
mean, min and max per phase.
"""

import sys

from zcsd.bench import BenchConfig, emit_report, run_benchmark

report = run_benchmark(BenchConfig(runs=5))
print("counts:", sorted(set(report.counts())))

for scenario, phases in report.summary.items():
    row = "  ".join(f"{p} {s.mean / 1000:8.2f} ms [{s.min / 1000:.2f}, {s.max / 1000:.2f}]"
                    for p, s in phases.items())
    print(f"{scenario:7s} {row}")

s = report.summary
print("interp/native filter ratio: %.1f" % (s["interp"]["filter"].mean / s["native"]["filter"].mean))

# the same data as CSV, one row per scenario, run and phase
emit_report(report, "csv", sys.stdout)
