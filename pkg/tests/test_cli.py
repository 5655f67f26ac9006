import json
from pathlib import Path

import pytest

from pruw.cli import main
from pruw.config import load_config, parse_config
from pruw.params import InvalidParams

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_parse_config_requires_schema_and_core_keys():
    with pytest.raises(InvalidParams) as exc:
        parse_config({"N": 6})
    text = " ".join(exc.value.violations)
    assert "schema_version" in text and "M is required" in text
    with pytest.raises(InvalidParams, match="unknown keys"):
        parse_config({"schema_version": 1, "N": 6, "M": 2, "P": 5, "q": 2053, "r": 0.4, "colour": 1})
    with pytest.raises(InvalidParams, match="schema_version"):
        parse_config({"schema_version": 2, "N": 6, "M": 2, "P": 5, "q": 2053, "r": 0.4})


def test_config_fraction_forms_agree():
    a = parse_config({"schema_version": 1, "N": 6, "M": 2, "P": 5, "q": 2053, "r": 0.4})
    b = parse_config({"schema_version": 1, "N": 6, "M": 2, "P": 5, "q": 2053, "r": "2/5"})
    assert a.r == b.r and a.params() == b.params()


def test_bad_config_lists_violations():
    with pytest.raises(InvalidParams) as exc:
        load_config(CONFIGS / "bad_n.yaml").params()
    assert any("N must equal 4ℓ+2" in v for v in exc.value.violations)


def test_run_writes_artifacts(tmp_path, capsys):
    assert main(["run", "--config", str(CONFIGS / "golden.yaml"), "--out", str(tmp_path), "--dump-setup"]) == 0
    for name in ("transcript.jsonl", "costs.csv", "verification.csv", "setup.json"):
        assert (tmp_path / name).exists()
    first = json.loads((tmp_path / "transcript.jsonl").read_text().splitlines()[0])
    assert first["kind"] == "v_tilde"
    assert "verification ok" in capsys.readouterr().out


def test_run_bad_config_exit_code(tmp_path, capsys):
    assert main(["run", "--config", str(CONFIGS / "bad_n.yaml"), "--out", str(tmp_path)]) == 2
    assert "N must equal 4ℓ+2" in capsys.readouterr().err


def test_verify_round_trip(tmp_path, capsys):
    cfg = str(CONFIGS / "demo.yaml")
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
    t = str(tmp_path / "transcript.jsonl")
    assert main(["verify", "--config", cfg, "--transcript", t]) == 0
    assert main(["verify", "--config", cfg, "--transcript", t, "--seed", "8"]) == 1
    assert "differs" in capsys.readouterr().err


def test_costs_table(tmp_path, capsys):
    out = tmp_path / "c.csv"
    assert main(["costs", "--config", str(CONFIGS / "exact_costs.yaml"), "--r-grid", "0,1",
                 "--r-prime-grid", "1", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("r,r_prime,C_R,C_W")
    r1 = rows[2].split(",")
    # r = r' = 1 at N=6, P=q: C_R = (4 + 4/6*2)/(2/3) = 8, C_W = 8*... = 12
    assert float(r1[2]) == pytest.approx(8) and float(r1[3]) == pytest.approx(12)
    assert float(r1[2]) > float(r1[5])


def test_audit_tiny_and_negative(tmp_path, capsys):
    assert main(["audit", "--config", str(CONFIGS / "tiny_audit.yaml"), "--trials", "1000",
                 "--out", str(tmp_path)]) == 0
    assert "exhaustive" in (tmp_path / "audit.csv").read_text()
    assert main(["audit", "--config", str(CONFIGS / "audit_q11.yaml"), "--trials", "2000",
                 "--sabotage", "zero-noise"]) == 1
