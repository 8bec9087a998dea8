"""
End-to-end tests of the command line: outputs, manifests, exit codes and replay.
"""
import json
import math

import pandas as pd
import pytest

from app import main
from src.commands import common
from src.config import settings
from src.schemas.results import VOLATILE_FIELDS


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_version(capsys):
    """Test that --version prints the tool version and exits cleanly."""
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "perplab" in capsys.readouterr().out


def test_parse_thresholds():
    """Test that "e8" is log u = 8 and plain numbers are u."""
    assert common.parse_log_u("e8") == 8.0
    assert common.parse_log_u("100") == pytest.approx(math.log(100))
    assert common.parse_log_u_list("e8,e12") == [8.0, 12.0]
    assert common.parse_floats("0:1:3") == [0.0, 0.5, 1.0]
    assert common.parse_vector("e2", 3).tolist() == [0.0, 1.0, 0.0]


def test_spectral_command(tmp_path, capsys):
    """Test that spectral writes the table and a manifest and prints alpha."""
    out = tmp_path / "spectral.json"
    assert main(["spectral", "--law", "golden_ratio", "--out", str(out), "--s-grid", "0,0.5,1"]) == 0
    summary = _stdout_json(capsys)
    assert summary["regime"] == "kesten"
    assert summary["alpha"] == pytest.approx(math.log2((1 + math.sqrt(5)) / 2), abs=1e-6)
    payload = json.loads(out.read_text())
    assert [row["s"] for row in payload["rows"]] == [0.0, 0.5, 1.0]
    assert payload["rows"][2]["kappa"] == pytest.approx(1.125, abs=1e-9)
    assert "lambda" in payload["rows"][0]
    assert "d3" in payload["rows"][0] and payload["rows"][0]["d3"] is None
    manifest = json.loads(common.manifest_path(out).read_text())
    assert manifest["command"] == "spectral"
    assert manifest["law_hash"] == payload["law_hash"]


def test_simulate_command(tmp_path, capsys):
    """Test that simulate writes passage records and the exact law as CSV."""
    out, exact = tmp_path / "tau.csv", tmp_path / "exact.csv"
    code = main(["simulate", "--law", "deterministic_two", "--u", "10", "--samples", "20", "--max-steps", "50",
                 "--out", str(out), "--oracle-csv", str(exact), "--n-max", "6"])
    assert code == 0
    assert _stdout_json(capsys)["censored"] == 0
    frame = pd.read_csv(out)
    assert len(frame) == 20
    assert (frame["tau"] == 4).all()
    law = pd.read_csv(exact)
    assert law.loc[law["n"] == 4, "probability"].item() == 1.0


def test_simulate_default_output(capsys):
    """Test that outputs default to the configured run directory."""
    assert main(["simulate", "--law", "golden_ratio", "--u", "5", "--samples", "10", "--max-steps", "30",
                 "--seed", "4"]) == 0
    assert (settings.OUTPUT_DIR / "simulate_golden_ratio_seed4.csv").exists()
    assert (settings.OUTPUT_DIR / "simulate_golden_ratio_seed4.manifest.json").exists()


def test_predict_clt_and_lln(capsys):
    """Test that the CLT prediction at t = 0 is 1/2 and the LLN window brackets rho log u."""
    assert main(["predict", "--law", "golden_ratio", "--variant", "clt", "--u", "e16"]) == 0
    clt = _stdout_json(capsys)
    assert clt["value"] == pytest.approx(0.5)
    assert main(["predict", "--law", "golden_ratio", "--variant", "lln", "--u", "e20", "--b", "2"]) == 0
    lo, hi = _stdout_json(capsys)["window"]
    assert lo < clt["center"] / 16 * 20 < hi


def test_predict_cumulative(monkeypatch, tmp_path, capsys):
    """Test that the cumulative prediction reports chi, C and a cached prefactor."""
    monkeypatch.setattr(settings, "ORACLE_MAX_PATHS", 2**10)
    out = tmp_path / "pred.json"
    assert main(["predict", "--law", "golden_ratio", "--u", "e10", "--out", str(out)]) == 0
    payload = _stdout_json(capsys)
    assert payload["variant"] == "cumulative"
    assert 0.0 <= payload["chi"] < 1.0
    assert payload["value"] > 0
    assert payload["prefactor"]["estimator"] == "oracle"
    assert list(settings.CACHE_DIR.glob("prefactor_*_oracle_*.json"))
    assert common.manifest_path(out).exists()


def test_predict_matrixld(capsys):
    """Test that the matrix prediction defaults q to Lambda'(1)."""
    assert main(["predict", "--law", "golden_ratio", "--variant", "matrixld", "--n", "20"]) == 0
    payload = _stdout_json(capsys)
    assert payload["inputs"]["q"] == pytest.approx(2 * math.log(2) / 3, abs=1e-8)
    assert payload["value"] > 0


def test_predict_outside_regime_exit_code(capsys):
    """Test that beta >= rho exits with the domain error code."""
    assert main(["predict", "--law", "golden_ratio", "--beta", "10"]) == 3
    assert "error:" in capsys.readouterr().err


def test_directional_needs_y(capsys):
    """Test that the directional variant without --y is an input error."""
    assert main(["predict", "--law", "d2_mixed", "--variant", "directional"]) == 2


def test_missing_law_exit_code(capsys):
    """Test that an unknown law exits with the input error code."""
    assert main(["spectral", "--law", "no_such_law"]) == 2
    assert "law file not found" in capsys.readouterr().err


def test_bad_threshold_exit_code(capsys):
    """Test that an unparsable threshold exits with the input error code."""
    assert main(["simulate", "--law", "golden_ratio", "--u", "abc"]) == 2


def test_verify_inapplicable_is_not_failure(tmp_path, capsys):
    """Test that a warn verdict exits 0 and the report list is written."""
    out = tmp_path / "verify.json"
    assert main(["verify", "--law", "half_two", "--theorem", "kesten", "--samples", "100", "--out", str(out)]) == 0
    assert _stdout_json(capsys) == {"kesten": "warn"}
    reports = json.loads(out.read_text())
    assert reports[0]["verdict"] == "warn"


def test_verify_lln_pass(capsys):
    """Test that the LLN check passes for deterministic growth."""
    code = main(["verify", "--law", "deterministic_two", "--theorem", "lln", "--u-grid", "e5,e8",
                 "--samples", "200"])
    assert code == 0
    assert _stdout_json(capsys) == {"lln": "pass"}


def test_rerun_reproduces_outputs(tmp_path, capsys):
    """Test that replaying a manifest reproduces the passage records."""
    out = tmp_path / "first" / "tau.csv"
    assert main(["simulate", "--law", "golden_ratio", "--u", "20", "--samples", "300", "--max-steps", "60",
                 "--seed", "9", "--out", str(out)]) == 0
    replay_dir = tmp_path / "replay"
    assert main(["rerun", "--manifest", str(common.manifest_path(out)), "--out-dir", str(replay_dir)]) == 0
    assert (replay_dir / "tau.csv").read_text() == out.read_text()


def test_rerun_detects_changed_law(tmp_path, capsys):
    """Test that replay refuses a law file whose content changed."""
    law_path = tmp_path / "law.json"
    law_path.write_text(json.dumps({"d": 1, "kind": "scalar_atoms", "name": "custom",
                                    "atoms": [{"M": [[2.0]], "Q": [1.0], "p": 0.5},
                                              {"M": [[0.25]], "Q": [1.0], "p": 0.5}]}))
    out = tmp_path / "tau.csv"
    assert main(["simulate", "--law", str(law_path), "--u", "5", "--samples", "10", "--max-steps", "20",
                 "--out", str(out)]) == 0
    law_path.write_text(law_path.read_text().replace("0.25", "0.5"))
    assert main(["rerun", "--manifest", str(common.manifest_path(out))]) == 2


def test_rerun_missing_manifest(tmp_path, capsys):
    """Test that a missing manifest is an input error."""
    assert main(["rerun", "--manifest", str(tmp_path / "nope.manifest.json")]) == 2


def test_simulate_pair_shares_noise(tmp_path, capsys):
    """Test that --pair writes both passage times per replicate and summarizes each law."""
    out = tmp_path / "pair.csv"
    code = main(["simulate", "--law", "garch12", "--pair", "garch12_alt", "--y", "e1", "--u", "e4",
                 "--samples", "200", "--max-steps", "400", "--seed", "3", "--out", str(out)])
    assert code == 0
    summary = _stdout_json(capsys)
    assert {"garch12", "garch12_alt", "correlation", "pair_hash"} <= set(summary)
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["replicate", "tau", "censored", "tau_other", "censored_other"]
    assert len(frame) == 200
    manifest = json.loads(common.manifest_path(out).read_text())
    assert manifest["parameters"]["pair"] == "garch12_alt"


def test_simulate_pair_rejects_different_noise(capsys):
    """Test that pairing laws with different atom probabilities exits with an input error."""
    assert main(["simulate", "--law", "golden_ratio", "--pair", "half_two", "--u", "5", "--samples", "10",
                 "--max-steps", "20"]) == 0
    capsys.readouterr()
    assert main(["simulate", "--law", "golden_ratio", "--pair", "d2_mixed", "--u", "5", "--samples", "10",
                 "--max-steps", "20"]) == 2


def test_rerun_reproduces_verify_report(tmp_path, capsys):
    """Test that a replayed verify manifest gives the same reports, with a different worker count too."""
    out = tmp_path / "first" / "verify.json"
    assert main(["verify", "--law", "golden_ratio", "--theorem", "lln", "--u-grid", "e4,e6",
                 "--samples", "3000", "--seed", "2", "--out", str(out)]) in (0, 1)
    replay_dir = tmp_path / "replay"
    assert main(["rerun", "--manifest", str(common.manifest_path(out)), "--out-dir", str(replay_dir),
                 "--workers", "2"]) in (0, 1)

    def stable(path):
        reports = [{k: v for k, v in report.items() if k not in VOLATILE_FIELDS}
                   for report in json.loads(path.read_text())]
        return json.dumps(reports, sort_keys=True)

    assert stable(replay_dir / "verify.json") == stable(out)
    manifest = json.loads(common.manifest_path(replay_dir / "verify.json").read_text())
    assert manifest["workers"] == 2


def test_spectral_command_higher_orders(tmp_path, capsys):
    """Test that --order 5 adds the third to fifth derivatives to every row."""
    out = tmp_path / "spectral.json"
    assert main(["spectral", "--law", "golden_ratio", "--out", str(out), "--s-grid", "0.5,1", "--order", "5"]) == 0
    rows = json.loads(out.read_text())["rows"]
    assert all(row[key] is not None for row in rows for key in ("d3", "d4", "d5"))
