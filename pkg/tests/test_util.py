import json
import math

from neocod.util import IssueLog, round_half_up, sha256_file


def test_round_half_up_ties():
    assert round_half_up(0.25, 1) == 0.3
    assert round_half_up(0.35, 1) == 0.4
    assert round_half_up(2.5) == 3.0
    assert round_half_up(-2.5) == -3.0
    assert round_half_up(-0.25, 1) == -0.3


def test_round_half_up_regular():
    assert round_half_up(1.2345, 2) == 1.23
    assert round_half_up(1.2355, 2) == 1.24
    assert round_half_up(986.94, 1) == 986.9


def test_round_half_up_nan_passthrough():
    assert math.isnan(round_half_up(float("nan"), 2))


def test_sha256_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"abc")
    digest = sha256_file(p)
    assert digest == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_issue_log_roundtrip(tmp_path):
    log = IssueLog()
    log.add("warning", "missing_value", "NMR missing", unit_id="AAA", year=2000)
    log.add("error", "bad_row", "negative deaths")
    assert log.count() == 2
    assert log.count("error") == 1
    out = tmp_path / "issues.ndjson"
    log.write(out)
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert lines[0]["unit_id"] == "AAA"
    assert lines[1]["severity"] == "error"
