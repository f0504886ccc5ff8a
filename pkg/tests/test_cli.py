"""Unit tests for the module cli."""
import csv
import io
import json
import math

import numpy as np
import pytest

from rllgbp.cli import (CAPACITY_COLUMNS, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_OK, EXIT_PARTIAL,
                        format_grid, main, parse_grids, parse_range)
from rllgbp.constraint_model import is_admissible, parse_spec


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def csv_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.mark.parametrize("text, expected", [
    ("2..6", [2, 3, 4, 5, 6]),
    ("2..20:6", [2, 8, 14, 20]),
    ("4,6,8", [4, 6, 8]),
    ("2..4,10", [2, 3, 4, 10]),
    ("7", [7]),
])
def test_parse_range(text, expected):
    assert parse_range(text) == expected


def test_parse_snr_range():
    assert parse_range("-10..10:2", float) == [float(v) for v in range(-10, 11, 2)]


@pytest.mark.parametrize("text", ["", "2..6:0", "a..b"])
def test_parse_range_errors(text):
    with pytest.raises(ValueError):
        parse_range(text)


def test_capacity_sweep(capsys):
    code, out = run(capsys, "capacity", "--constraint", "1,inf", "--size", "2..20")
    assert code == EXIT_OK
    rows = csv_rows(out)
    assert len(rows) == 19 and list(rows[0]) == CAPACITY_COLUMNS
    caps = [float(r["capacity_bits"]) for r in rows]
    assert caps[0] == pytest.approx(math.log2(7) / 4, abs=1e-12)
    assert all(a > b for a, b in zip(caps, caps[1:]))
    assert 0.59 < caps[-1] < 0.62
    assert all(r["converged"] == "True" for r in rows)
    assert float(rows[0]["lower_bound"]) == pytest.approx(caps[0] * (2 / 3) ** 2)


def test_capacity_is_byte_reproducible(capsys):
    argv = ["capacity", "--constraint", "1,inf,2,4", "--size", "5,7"]
    outs = []
    for _ in range(2):
        _, out = run(capsys, *argv)
        rows = csv_rows(out)
        for r in rows:
            r.pop("seconds")
        outs.append(rows)
    assert outs[0] == outs[1]
    assert outs[0][0]["lower_bound"] == ""


def test_capacity_json_round_trip(capsys):
    code, out = run(capsys, "capacity", "--constraint", "2,inf", "--size", "6", "--format", "json")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["meta"]["gbp"]["damping"] == 0.5
    assert doc["rows"][0]["m"] == "6" and isinstance(doc["rows"][0]["capacity_bits"], float)


def test_capacity_to_file(tmp_path, capsys):
    path = tmp_path / "cap.csv"
    code, out = run(capsys, "capacity", "--constraint", "1,inf", "--size", "3", "--out", str(path))
    assert code == EXIT_OK and out == ""
    assert csv_rows(path.read_text())[0]["m"] == "3"


def test_rectangular_and_3d_sizes(capsys):
    code, out = run(capsys, "capacity", "--constraint", "1,inf", "--size", "3x5")
    assert code == EXIT_OK and csv_rows(out)[0]["m"] == "3x5"
    code, out = run(capsys, "capacity", "--constraint", "1,inf,1,inf,1,inf", "--size", "3")
    assert code == EXIT_OK and float(csv_rows(out)[0]["capacity_bits"]) > 0


def test_strict_non_convergence(capsys):
    code, _ = run(capsys, "capacity", "--constraint", "1,inf", "--size", "12", "--max-iter", "2",
                  "--strict")
    assert code == EXIT_NONCONVERGED
    code, out = run(capsys, "capacity", "--constraint", "1,inf", "--size", "12", "--max-iter", "2")
    assert code == EXIT_OK and csv_rows(out)[0]["converged"] == "False"


@pytest.mark.parametrize("argv", [
    ["capacity", "--constraint", "1,x", "--size", "4"],
    ["capacity", "--constraint", "1,inf", "--size", "0"],
    ["capacity", "--constraint", "1,inf", "--size", "4", "--damping", "1.5"],
    ["capacity", "--constraint", "1,inf", "--size", "4", "--method", "two-way"],
    ["inforate", "--constraint", "1,inf", "--size", "4", "--snr", "0", "--samples", "-1"],
])
def test_config_errors(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == EXIT_CONFIG


def test_shape_mismatch_is_config_error(capsys):
    code, _ = run(capsys, "capacity", "--constraint", "1,inf", "--size", "3x3x3")
    assert code == EXIT_CONFIG


def test_failed_point_is_recorded(capsys):
    code, out = run(capsys, "count", "--constraint", "1,inf", "--size", "3,6", "--method", "brute")
    rows = csv_rows(out)
    assert code == EXIT_PARTIAL
    assert rows[0]["count"] == "63" and rows[1]["error"]


def test_count(capsys):
    code, out = run(capsys, "count", "--constraint", "1,inf", "--size", "1..3,8")
    rows = csv_rows(out)
    assert code == EXIT_OK
    assert [r["count"] for r in rows] == ["2", "7", "63", "660647962955"]
    assert float(rows[1]["log2_count"]) == pytest.approx(math.log2(7))


def test_inforate(capsys):
    code, out = run(capsys, "inforate", "--constraint", "1,inf", "--size", "4", "--snr", "0,8",
                    "--samples", "20", "--seed", "3")
    rows = csv_rows(out)
    assert code == EXIT_OK and len(rows) == 2
    assert float(rows[0]["rate_bits"]) < float(rows[1]["rate_bits"])
    assert rows[0]["L"] == "20"


def test_inforate_rejects_3d(capsys):
    code, _ = run(capsys, "inforate", "--constraint", "1,inf,1,inf,1,inf", "--size", "3",
                  "--snr", "0", "--samples", "2")
    assert code == EXIT_CONFIG


def test_sample_and_validate_round_trip(capsys, tmp_path, monkeypatch):
    code, out = run(capsys, "sample", "--constraint", "1,inf,2,4", "--size", "6", "--samples", "5",
                    "--seed", "2")
    grids = parse_grids(out)
    assert code == EXIT_OK and len(grids) == 5
    assert all(g.shape == (6, 6) and is_admissible(g, parse_spec("1,inf,2,4")) for g in grids)
    path = tmp_path / "grids.txt"
    path.write_text(out + "\n101\n000\n")
    code, report = run(capsys, "validate", "--constraint", "1,inf,2,4", str(path))
    lines = report.splitlines()
    assert code == EXIT_PARTIAL and len(lines) == 6
    assert lines[0].endswith("admissible") and lines[-1].endswith("inadmissible")
    monkeypatch.setattr("sys.stdin", io.StringIO(out))
    code, _ = run(capsys, "validate", "--constraint", "1,inf,2,4")
    assert code == EXIT_OK


def test_grid_text_format():
    x = np.array([[[0, 1], [0, 0]], [[1, 0], [0, 1]]])
    back = parse_grids(format_grid(x) + "\n\n" + format_grid(x[0]))
    assert np.array_equal(back[0], x) and np.array_equal(back[1], x[0])
    with pytest.raises(ValueError):
        parse_grids("012\n")
    with pytest.raises(ValueError):
        parse_grids("01\n0\n")


def test_regions(capsys):
    code, out = run(capsys, "regions", "--constraint", "1,inf", "--size", "3,4x3")
    doc = json.loads(out)
    assert code == EXIT_OK
    first, second = doc["graphs"]
    assert first["regions"] == 9 and first["validation"]["passed"]
    assert second["by_extent"]["1x1"]["counting_numbers"] == {"1": 2}
