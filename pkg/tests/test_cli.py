import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from zcsd import zns
from zcsd.cli import main

GEOM = ["--block-size", "4096", "--zone-size", str(4096 * 8), "--zones", "2"]


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


@pytest.fixture
def device_file(tmp_path):
    path = str(tmp_path / "dev.img")
    assert run("device", "create", "--device", path, *GEOM)[0] == 0
    return path


def test_device_create_and_report(device_file):
    code, text = run("device", "report", "--device", device_file)
    assert code == 0
    assert "zone_size=32768" in text
    assert text.count("EMPTY") == 2


def test_device_fill_and_reset(device_file):
    assert run("device", "fill", "--device", device_file, "--zone", "1", "--seed", "9")[0] == 0
    text = run("device", "report", "--device", device_file)[1]
    assert "FULL" in text
    assert run("device", "fill", "--device", device_file, "--zone", "1")[0] == 1
    assert run("device", "reset", "--device", device_file, "--zone", "1")[0] == 0
    assert run("device", "report", "--device", device_file)[1].count("EMPTY") == 2


def test_report_missing_device(tmp_path):
    assert run("device", "report", "--device", str(tmp_path / "nope"))[0] == 1


def test_image_build_filter(tmp_path):
    path = tmp_path / "f.zbpf"
    code, text = run("image", "build-filter", "--threshold", "10", "--start-lba", "0",
                     "--pages", "8", "--out", str(path))
    assert code == 0
    assert path.read_bytes()[:4] == b"ZBPF"
    assert "digest" in text


@pytest.mark.parametrize("mode", ["interp", "native"])
def test_run_filter(device_file, tmp_path, mode):
    run("device", "fill", "--device", device_file, "--seed", "4")
    img = str(tmp_path / "f.zbpf")
    run("image", "build-filter", "--threshold", str(1 << 31), "--pages", "8", "--out", img)
    code, text = run("run", "--image", img, "--device", device_file, "--mode", mode)
    assert code == 0
    doc = json.loads(text)
    with zns.open_device(device_file) as dev:
        data = np.frombuffer(dev.zone_view(0).tobytes(), dtype="<u4")
    assert doc["result_u64"] == int((data > (1 << 31)).sum())
    assert doc["stats"]["bytes_to_host"] == 8
    assert doc["stats"]["data_movement_saved"] == 4096 * 8 - 8


def test_run_unwritten_zone_is_runtime_error(device_file, tmp_path):
    img = str(tmp_path / "f.zbpf")
    run("image", "build-filter", "--pages", "8", "--out", img)
    assert run("run", "--image", img, "--device", device_file)[0] == 1


def test_run_corrupt_image(device_file, tmp_path):
    img = tmp_path / "bad.zbpf"
    img.write_bytes(b"ZBPF" + bytes(60))
    assert run("run", "--image", str(img), "--device", device_file)[0] == 1


def test_bench_csv(tmp_path):
    out = tmp_path / "r.csv"
    code, _ = run("bench", *GEOM, "--runs", "2", "--scenarios", "host,native",
                  "--out", str(out))
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 2 * 2 * 3
    assert len({r["count"] for r in rows}) == 1


def test_bench_json_stdout():
    code, text = run("bench", *GEOM, "--runs", "1", "--format", "json")
    assert code == 0
    doc = json.loads(text)
    assert set(doc["summary"]) == {"host", "interp", "native"}


@pytest.mark.parametrize("argv", [
    ["bench", "--format", "xml"],
    ["bench", "--scenarios", "host,gpu"],
    ["bench", "--threshold", str(1 << 32)],
    ["image", "build-filter", "--out", "x"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as ei:
        main(argv, io.StringIO())
    assert ei.value.code == 2


def test_invalid_geometry_is_runtime_error(tmp_path):
    code, _ = run("device", "create", "--device", str(tmp_path / "d"), "--block-size", "1000")
    assert code == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "zcsd", "bench", "--format", "xml"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
