import csv
import subprocess
import sys

import pytest

from audit_arena.cli import defaults_text, main, parse_config, parse_config_text, run_harness
from audit_arena.engine import CostModel
from audit_arena.errors import ConfigError


def test_empty_config_gives_defaults():
    cfg = parse_config_text("")
    assert cfg.preset == "nodrop" and cfg.experiment["harness"] == "rq1"
    assert cfg.costs == CostModel()
    assert cfg.setup().machine(1, cfg.seed).n_cores == 1


def test_print_defaults_round_trips():
    assert parse_config_text(defaults_text()) == parse_config_text("")


def test_comments_and_inline_comments():
    cfg = parse_config_text("# hi\n[collector]\npreset = sysdig  # the classic\n")
    assert cfg.preset == "sysdig"


@pytest.mark.parametrize("text, needle", [
    ("[collector]\npreset = sysdg\n", "sysdig, audit"),
    ("[machine]\ncorez = 2\n", "corez"),
    ("[machine]\ncores = two\n", "cores"),
    ("[nope]\n", "[nope]"),
    ("[workload.x]\nkind = blimp\n", "super_producer"),
    ("[experiment]\nharness = workload\n", "workload"),
    ("no section header\n", "malformed"),
])
def test_config_errors_name_the_problem(text, needle):
    with pytest.raises(ConfigError) as e:
        parse_config_text(text)
    assert needle in str(e.value)


def test_unknown_key_error_lists_section_and_valid_keys():
    with pytest.raises(ConfigError) as e:
        parse_config_text("[costs]\nconsume = 3\n")
    msg = str(e.value)
    assert "[costs]" in msg and "consume_cost" in msg


def test_32_core_sysdig_run():
    cfg = parse_config_text("[machine]\ncores = 32\n[collector]\npreset = sysdig\n"
                            "[experiment]\nrates = 2000\nduration = 1\n")
    assert cfg.setup().machine(2, 0).n_cores == 32
    res, line = run_harness(cfg)
    assert res.preset == "sysdig" and res.rows[0][3] == 0
    assert line.startswith("dropped 0 of")


def test_missing_config_file_exits_1(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.ini")]) == 1
    assert "not found" in capsys.readouterr().err


def test_bad_flag_exits_1(capsys):
    assert main(["rq1", "--preset", "sysdg"]) == 1
    assert main(["frobnicate"]) == 1


def test_rq1_nodrop_seed_7_all_zero(tmp_path, capsys):
    assert main(["rq1", "--preset", "nodrop", "--seed", "7", "--out", str(tmp_path)]) == 0
    path = tmp_path / "rq1_nodrop_7.csv"
    rows = list(csv.DictReader(path.open(encoding="utf-8")))
    assert len(rows) == 12
    assert all(float(r["drop_fraction"]) == 0 for r in rows)


def test_pdos_prints_success_line(tmp_path, capsys):
    cfg = tmp_path / "p.ini"
    cfg.write_text("[experiment]\ntrials = 10\n", encoding="utf-8")
    assert main(["pdos", "--preset", "sysdig", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    line = out.strip().splitlines()[-1]
    assert line.startswith("success ") and line.endswith("/10")
    assert (tmp_path / "pdos_sysdig_0.csv").exists()


def test_seed_determines_output_bytes(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[collector]\npreset = sysdig\n[experiment]\nharness = pdos\ntrials = 4\n", encoding="utf-8")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(a)]) == 0
    assert main(["run", str(cfg), "--out", str(b)]) == 0
    assert (a / "pdos_sysdig_0.csv").read_bytes() == (b / "pdos_sysdig_0.csv").read_bytes()


def test_workload_config(tmp_path, capsys):
    cfg = tmp_path / "w.ini"
    cfg.write_text("""
[machine]
cores = 2
seed = 3
[collector]
preset = sysdig
[experiment]
duration = 1
[workload.burner]
kind = super_producer
processes = 1
rate = 2000
cores = 0
[workload.web]
kind = server
request_cost = 100
cores = 0
""", encoding="utf-8")
    assert parse_config(cfg).experiment["harness"] == "workload"
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    rows = {r["workload"]: r for r in csv.DictReader((tmp_path / "workload_sysdig_3.csv").open())}
    assert set(rows) == {"burner", "web"}
    assert int(rows["web"]["events"]) == 0
    assert int(rows["burner"]["events"]) > 0


def test_env_var_sets_output_dir(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[collector]\npreset = sysdig\n[experiment]\nrates = 1000\nduration = 0.5\n", encoding="utf-8")
    env = {"AUDIT_ARENA_OUT": str(tmp_path / "env"), "PATH": ""}
    subprocess.run([sys.executable, "-m", "audit_arena.cli", "run", str(cfg)], check=True, env=env,
                   capture_output=True)
    assert (tmp_path / "env" / "rq1_sysdig_0.csv").exists()


def test_calibrate_subcommand(capsys):
    assert main(["calibrate", "audit-1pct"]) == 0
    out = capsys.readouterr().out
    assert "[costs]" in out and "transport_cost = " in out
    assert main(["calibrate", "lttng-1core"]) == 0
    assert "no change" in capsys.readouterr().out
