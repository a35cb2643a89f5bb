import csv
import io
import json
import subprocess
import sys

import pytest

from secmarket import cli
from secmarket.errors import ConfigError
from secmarket.harness import (
    METRIC_FIELDS,
    ExperimentConfig,
    derive_seed,
    dump_config,
    load_config,
    parse_config,
    parse_values,
    run_session,
    sweep,
    write_outputs,
)

SMOKE = ExperimentConfig(iterations=2, MOPreEp=5)


@pytest.fixture(scope="module")
def smoke_result():
    return run_session(SMOKE)


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_config_parse_and_dump_roundtrip(tmp_path):
    cfg = parse_config("R = 6\nmu = 0.1  # comment\nm = auto\narch = 64,10\n\n")
    assert (cfg.R, cfg.mu, cfg.m, cfg.arch_list) == (6, 0.1, None, [64, 10])
    path = tmp_path / "c.txt"
    path.write_text(dump_config(cfg))
    assert load_config(str(path)) == cfg
    assert load_config("smoke").iterations == 2
    for bad in ("R 6", "nope = 1", "R = six"):
        with pytest.raises(ConfigError):
            parse_config(bad)


def test_config_validation():
    for bad in (dict(PL=4), dict(Frag=0.0), dict(DONum=2), dict(adversary_kind="x"), dict(DOEp=1)):
        with pytest.raises(ConfigError):
            run_session(SMOKE.replace(**bad))


def test_derived_seeds_are_label_specific():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert len({derive_seed(1, "a"), derive_seed(1, "b"), derive_seed(2, "a"), derive_seed(1, "a", 0)}) == 4


def test_session_rows(smoke_result):
    rows = smoke_result.rows
    assert [r.iteration for r in rows] == [0, 1, 2]
    assert rows[0].status == "pretrain"
    assert all(r.status == "ok" for r in rows[1:])
    for r in rows[1:]:
        assert r.p_prime_size == r.m == 1
        assert r.gas_aggregate == r.p_size * 4 * 2778
        assert 0.0 <= r.accuracy <= 1.0


def test_paid_addresses_come_from_accepted_rounds(smoke_result):
    events = [json.loads(e) for e in smoke_result.events]
    for row in smoke_result.rows[1:]:
        accepted = {int(r) for r in row.accepted_rounds.split(";")}
        roster = {e["caller"] for e in events
                  if e["iteration"] == row.iteration and e["method"] == "register"
                  and e["ok"] and e["round"] in accepted}
        assert set(row.paid.split(";")) == roster
        assert row.payout_per_do == 1000 // (row.m * 4)


def test_mo_only_baseline_never_deploys():
    res = run_session(SMOKE.replace(PL=0))
    assert [r.status for r in res.rows[1:]] == ["mo_only", "mo_only"]
    assert res.events == [] and res.public_fraction == 0.0


def test_inadmissible_m_labels_failure_row():
    res = run_session(SMOKE.replace(m=3))
    assert res.rows[-1].status.startswith("failed:ConfigError")
    assert len(res.rows) == 2


def test_dropouts_fail_rounds():
    res = run_session(SMOKE.replace(adversary_kind="drop_out", adversary_rate=0.25, iterations=1))
    assert res.rows[1].rounds_failed > 0


def test_write_outputs_and_determinism(tmp_path, smoke_result):
    a = write_outputs(smoke_result, tmp_path / "a")
    b = write_outputs(run_session(SMOKE), tmp_path / "b")
    for name in ("metrics.csv", "events.log", "summary.json", "config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    header = (a / "metrics.csv").read_text().splitlines()[0].split(",")
    assert header == METRIC_FIELDS
    assert (a / "timings.csv").exists()


def test_sweep_csv(tmp_path):
    out = tmp_path / "s.csv"
    text = sweep(SMOKE.replace(iterations=1), "attack_rate", "0,0.25", out)
    rows = rows_of(out.read_text())
    assert text == out.read_text()
    assert [(r["param"], r["value"], r["iteration"]) for r in rows] == [
        ("adversary_rate", "0.0", "0"), ("adversary_rate", "0.0", "1"),
        ("adversary_rate", "0.25", "0"), ("adversary_rate", "0.25", "1")]
    with pytest.raises(ConfigError):
        sweep(SMOKE, "bogus", "1,2")
    assert parse_values("R", "2,4") == [2, 4]


def test_cli_run_and_sweep(tmp_path, capsys):
    assert cli.main(["run", "--config", "smoke", "--seed", "3", "--out", str(tmp_path / "r")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["seed"] == 3 and summary["iterations"] == 2
    assert (tmp_path / "r" / "metrics.csv").exists()
    cfg = tmp_path / "c.txt"
    cfg.write_text("iterations = 1\nMOPreEp = 2\n")
    assert cli.main(["sweep", "--config", str(cfg), "--param", "R", "--values", "4,8"]) == 0
    assert len(rows_of(capsys.readouterr().out)) == 4


def test_cli_verify_and_gas(capsys):
    assert cli.main(["verify-recovery", "--trials", "20"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert cli.main(["gas-report", "--R", "4,8", "--N", "2,4", "--dim", "8"]) == 0
    rows = rows_of(capsys.readouterr().out)
    assert len(rows) == 4 and rows[0]["ModelAggregate"] == str(4 * 2 * 8)


def test_cli_reports_errors(capsys):
    assert cli.main(["sweep", "--config", "smoke", "--param", "nope", "--values", "1"]) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "secmarket.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gas-report" in out.stdout
