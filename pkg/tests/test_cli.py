import csv
import subprocess
import sys

import pytest

from fedchain.cli import load_config, main

SMALL = """\
seed = 3
[round]
client_count = 4
global_rounds = 3
cosigners = 3   # a small committee
[model]
layer_widths = 8,32,4
[data]
n = 400
validation_n = 200
"""

TRANSFER = SMALL + """\
[source.round]
global_rounds = 2
[transfer]
seeds = 0,1
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_load_config_sections_and_comments(cfg):
    raw = load_config(cfg)
    assert raw["seed"] == "3" and raw["round.cosigners"] == "3" and raw["model.layer_widths"] == "8,32,4"


def test_run_fl_outputs(cfg, tmp_path):
    out = tmp_path / "o"
    assert main(["run-fl", "--config", str(cfg), "--out", str(out), "--deterministic"]) == 0
    table = rows(out / "rounds.csv")
    assert [int(r["version"]) for r in table] == [1, 2, 3]
    assert "round_ms" in table[0]
    assert (out / "global_weights.f32").stat().st_size == 4 * (8 * 32 + 32 + 32 * 4 + 4)
    assert main(["audit", "--ledger", str(out / "ledger.log"), "--network", "1"]) == 0


def test_run_fl_deterministic_bitwise(cfg, tmp_path):
    for name in ("a", "b"):
        assert main(["run-fl", "--config", str(cfg), "--out", str(tmp_path / name), "--deterministic",
                     "--no-timing"]) == 0
    for f in ("rounds.csv", "global_weights.f32"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert "round_ms" not in (tmp_path / "a" / "rounds.csv").read_text()


def test_audit_detects_damage(cfg, tmp_path):
    out = tmp_path / "o"
    main(["run-fl", "--config", str(cfg), "--out", str(out), "--deterministic"])
    log = out / "ledger.log"
    data = bytearray(log.read_bytes())
    data[len(data) // 2] ^= 0xFF
    bad = tmp_path / "bad.log"
    bad.write_bytes(bytes(data))
    assert main(["audit", "--ledger", str(bad)]) in (1, 2)
    assert main(["audit", "--ledger", str(tmp_path / "missing.log")]) == 2


@pytest.mark.parametrize("flags,code,stage", [
    ([], 0, "ok"),
    (["--tamper", "payload"], 1, "BadAggregate"),
    (["--tamper", "metrics"], 1, "BadAggregate"),
    (["--tamper", "metrics", "--collude-majority"], 1, "Irreproducible"),
])
def test_transfer_exit_codes(tmp_path, flags, code, stage):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TRANSFER)
    out = tmp_path / "o"
    assert main(["transfer", "--config", str(cfg), "--out", str(out), "--deterministic"] + flags) == code
    (row,) = rows(out / "transfer.csv")
    assert row["stage"] == stage
    assert row["outcome"] == ("committed" if code == 0 else "rejected")


def test_transfer_learn_rows(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TRANSFER)
    out = tmp_path / "o"
    assert main(["transfer-learn", "--config", str(cfg), "--out", str(out), "--deterministic"]) == 0
    table = rows(out / "transfer_learn.csv")
    assert len(table) == 2 * 2 * 2
    assert {(r["target"], r["mode"]) for r in table} == {
        (t, m) for t in ("same", "augmented") for m in ("transferred", "scratch")}


def test_keygen_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["keygen", "--count", "3", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    a = rows(tmp_path / "a" / "keys.csv")
    assert len(a) == 3 and a == rows(tmp_path / "b" / "keys.csv")
    assert len(bytes.fromhex(a[0]["pubkey_hex"])) == 48 and len(bytes.fromhex(a[0]["pop_hex"])) == 96


def test_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDCHAIN_OUT", str(tmp_path / "env"))
    assert main(["keygen", "--count", "1"]) == 0
    assert (tmp_path / "env" / "keys.csv").exists()


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("model.layer_widths = 5,8,4\ndata.d = 8\n")
    assert main(["run-fl", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text("round.client_count = many\n")
    assert main(["run-fl", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "fedchain.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("run-fl", "bench-overhead", "transfer", "transfer-learn", "keygen", "audit", "rounds.csv"):
        assert name in res.stdout
