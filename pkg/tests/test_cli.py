import json
import logging

import pytest

from mabuchi_action_lab.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VIOLATION,
    load_config,
    main,
)
from mabuchi_action_lab.core.errors import ConfigError


@pytest.fixture(autouse=True)
def restore_root_logging():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


CONFIG = """
name = "cli-test"

[grid]
n = 8

[fixture]
preset = "constants"

[geodesic]
time_steps = 4
epsilon_initial = 0.5
continuation_tol = 1e-3
{geodesic_extra}

[verification]
suites = ["monotone_limits"]
sequence_length = 3
{verification_extra}

[output]
directory = "{directory}"
"""


def write_config(tmp_path, name="run.toml", geodesic_extra="", verification_extra=""):
    out = tmp_path / "out"
    path = tmp_path / name
    path.write_text(
        CONFIG.format(
            directory=out,
            geodesic_extra=geodesic_extra,
            verification_extra=verification_extra,
        )
    )
    return path, out


def test_rearrange_three_rows(tmp_path):
    table = tmp_path / "in.csv"
    table.write_text("value,weight\n1,0.5\n3,0.3\n2,0.2\n")
    out = tmp_path / "out.csv"
    assert main(["rearrange", "--in", str(table), "--out", str(out)]) == EXIT_OK
    assert out.read_text() == "breakpoint,level\n0.3,3.0\n0.5,2.0\n1.0,1.0\n"


@pytest.mark.parametrize(
    "body", ["1,0.5\n2,0\n", "1,0.5\n2,abc\n", "1,0.5,7\n", "value,weight\n"]
)
def test_rearrange_rejects_bad_tables(tmp_path, body):
    table = tmp_path / "in.csv"
    table.write_text(body)
    out = tmp_path / "out.csv"
    assert main(["rearrange", "--in", str(table), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_solve_writes_the_path_and_sidecar(tmp_path):
    config, out = write_config(tmp_path, geodesic_extra="epsilon = 0.3")
    assert main(["solve", "--config", str(config)]) == EXIT_OK
    rows = (out / "path.csv").read_text().splitlines()
    assert rows[0] == "t,i,j,u"
    assert len(rows) == 1 + 5 * 64
    assert rows[1] == "0,0,0,0"
    sidecar = json.loads((out / "path.json").read_text())
    assert sidecar["N"] == 8
    assert sidecar["epsilon"] == 0.3
    assert sidecar["continuation"] == []
    assert sidecar["timing"] is None
    residual = (out / "hcma_residual.csv").read_text().splitlines()
    assert residual[0] == "t,i,j,c"
    assert len(residual) == 1 + 3 * 64


def test_solve_is_byte_reproducible(tmp_path):
    config, out = write_config(tmp_path)
    assert main(["solve", "--config", str(config)]) == EXIT_OK
    first = (out / "path.csv").read_bytes()
    sidecar = (out / "path.json").read_bytes()
    assert main(["solve", "--config", str(config)]) == EXIT_OK
    assert (out / "path.csv").read_bytes() == first
    assert (out / "path.json").read_bytes() == sidecar
    assert json.loads(sidecar)["continuation"]


def test_output_dir_flag_overrides_the_config(tmp_path):
    config, _ = write_config(tmp_path, geodesic_extra="epsilon = 0.3")
    elsewhere = tmp_path / "elsewhere"
    code = main(["solve", "--config", str(config), "--output-dir", str(elsewhere)])
    assert code == EXIT_OK
    assert (elsewhere / "path.csv").exists()


def test_verify_emits_one_record_per_check(tmp_path, capsys):
    config, out = write_config(tmp_path)
    assert main(["verify", "--config", str(config)]) == EXIT_OK
    lines = (out / "verify.jsonl").read_text().splitlines()
    assert capsys.readouterr().out.splitlines() == lines
    records = [json.loads(line) for line in lines]
    assert [r["check"] for r in records] == [
        "geodesic_monotonicity",
        "geodesic_monotonicity:increasing",
    ]
    assert records[0]["pass"] is True and records[0]["control"] is None
    assert records[1]["control"] == "expected-fail: observed-fail"
    assert {r["N"] for r in records} == {8}
    assert len({r["config_hash"] for r in records}) == 1


def test_suite_flag_is_part_of_the_config_hash(tmp_path, capsys):
    config, _ = write_config(tmp_path)
    assert main(["verify", "--config", str(config)]) == EXIT_OK
    plain = json.loads(capsys.readouterr().out.splitlines()[0])["config_hash"]

    other = tmp_path / "other.toml"
    text = config.read_text()
    other.write_text(text.replace('["monotone_limits"]', '["noether"]'))
    code = main(["verify", "--config", str(other), "--suite", "monotone_limits"])
    assert code == EXIT_OK
    overridden = json.loads(capsys.readouterr().out.splitlines()[0])["config_hash"]
    assert overridden == plain
    assert plain == load_config(config).config_hash()
    assert plain != load_config(other).config_hash()


def test_verify_reports_a_violation(tmp_path):
    config, _ = write_config(tmp_path, verification_extra="tolerance = 1e-12")
    code = main(["verify", "--config", str(config), "--suite", "noether"])
    assert code == EXIT_VIOLATION


def test_unknown_suite_is_a_config_error(tmp_path):
    config, _ = write_config(tmp_path)
    assert main(["verify", "--config", str(config), "--suite", "bogus"]) == EXIT_CONFIG


def test_toml_syntax_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[grid\nn = 8\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert "line 1" in str(info.value)
    assert main(["solve", "--config", str(path)]) == EXIT_CONFIG


@pytest.mark.parametrize(
    "body, field",
    [
        ("[grid]\nn = 7\n", "grid.n"),
        ("[geodesic]\nT = -1.0\n", "geodesic.T"),
        ("[verification]\ncount = 0\n", "verification.count"),
        ("[grid]\nsize = 8\n", "grid.size"),
    ],
)
def test_validation_errors_name_the_field(tmp_path, body, field):
    path = tmp_path / "bad.toml"
    path.write_text(body)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == field


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_json_diagnostics_go_to_stderr(tmp_path, capsys):
    table = tmp_path / "in.csv"
    table.write_text("2,1\n")
    out = tmp_path / "out.csv"
    argv = ["--log-format", "json", "rearrange", "--in", str(table), "--out", str(out)]
    assert main(argv) == EXIT_OK
    captured = capsys.readouterr()
    assert captured.out == ""
    events = [json.loads(line) for line in captured.err.splitlines()]
    assert any(e["event"].startswith("[rearrange]") for e in events)
    assert all(e["level"] for e in events)
