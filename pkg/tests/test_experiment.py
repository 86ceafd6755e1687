from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from urbandit.cli import main
from urbandit.exceptions import ConfigError, FitError, NoDataError
from urbandit.experiment import (emit_plots, fit_log_curve, load_config, load_manifest,
                                 run_experiment, verify_manifest)

SMALL = {
    "instance": {"generator": "acceptance"},
    "algorithms": [{"name": "ala", "L": 2, "tau0": 3, "index_budget": 2},
                   {"name": "fixed_arm:1"}],
    "horizons": [5, 10, 20, 30],
    "replicates": 2,
    "seed": 1,
    "regret_mode": "both",
    "solve": {"tau0": 4},
}


def with_(**kw):
    d = json.loads(json.dumps(SMALL))
    d.update(kw)
    return d


class TestConfig:
    def test_valid(self, tmp_path):
        cfg = load_config(SMALL, output_dir=str(tmp_path))
        assert cfg.modes == ["exact", "delta"]
        assert cfg.labels() == ["ala_L2", "fixed_arm_1"] or len(cfg.labels()) == 2
        assert cfg.config_hash == load_config(SMALL, output_dir=str(tmp_path)).config_hash
        assert load_config(SMALL, seed=7).seed == 7

    @pytest.mark.parametrize("bad", [
        with_(horizons=[10, 5]),
        with_(horizons=[]),
        with_(replicates=0),
        with_(regret_mode="both-ish"),
        with_(algorithms=[{"name": "ucb"}]),
        with_(algorithms=[{"name": "fixed_arm:5"}]),
        with_(algorithms=[{"name": "ala", "L": -1}]),
        with_(algorithms=[{"name": "ala", "L": 2, "L_fn": "loglog"}]),
        with_(algorithms=[{"name": "ala", "tau0": 0}]),
        with_(algorithms=[{"name": "ala", "colour": 1}]),
        with_(instance={"generator": "nope"}),
        with_(instance={"arms": [{"transition": [[0.5, 0.6], [0.5, 0.5]], "rewards": [0, 1]}]}),
        with_(extra_key=1),
        {"instance": {"generator": "acceptance"}},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(str(p))


class TestLogFit:
    def test_exact(self):
        T = np.array([10, 100, 1000, 10000])
        fit = fit_log_curve(T, 3 * np.log(T) + 1)
        assert fit.slope == pytest.approx(3) and fit.intercept == pytest.approx(1)
        assert fit.r2 == pytest.approx(1.0)
        assert fit.ratio == pytest.approx((3 * math.log(1e4) + 1) / math.log(1e4))
        assert not fit.super_log

    def test_constant(self):
        fit = fit_log_curve([10, 20, 40, 80], [5, 5, 5, 5])
        assert fit.slope == 0.0 and fit.r2 == 1.0

    def test_linear_flagged(self):
        T = np.array([100, 200, 400, 800, 1600])
        assert fit_log_curve(T, 0.5 * T).super_log

    def test_errors(self):
        with pytest.raises(FitError):
            fit_log_curve([1, 2, 3], [1, 2, 3])
        with pytest.raises(FitError):
            fit_log_curve([1, 1, 2, 3], [1, 2, 3, 4])


class TestRun:
    def test_run_and_manifest(self, tmp_path):
        man = run_experiment(load_config(SMALL, output_dir=str(tmp_path)))
        assert not man["failures"]
        files = set(man["files"])
        assert any(f.startswith("runs/") for f in files)
        assert {"plots/regret_exact.svg", "plots/regret_delta.svg"} <= files
        assert verify_manifest(tmp_path / "manifest.json") == []
        (tmp_path / "plots" / "regret_exact.svg").write_text("changed")
        assert verify_manifest(tmp_path / "manifest.json") == ["plots/regret_exact.svg"]

    def test_plots_are_well_formed(self, tmp_path):
        run_experiment(load_config(SMALL, output_dir=str(tmp_path)))
        for mode in ("exact", "delta"):
            text = (tmp_path / "plots" / f"regret_{mode}.svg").read_text()
            root = ET.fromstring(text)
            assert root.tag.endswith("svg")
            assert "fixed_arm" in text        # legend entries as text
            assert "<dc:date>" not in text

    def test_no_data(self, tmp_path):
        with pytest.raises(NoDataError):
            emit_plots({"results": {}}, tmp_path)


class TestCli:
    def test_validate_ok(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(SMALL))
        assert main(["validate", str(p)]) == 0
        assert "ok:" in capsys.readouterr().out

    def test_validation_exit_code(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(with_(replicates=-2)))
        assert main(["validate", str(p)]) == 1
        assert main(["validate", str(tmp_path / "missing.json")]) in (1, 2)

    def test_solve_oracle_run_plot(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(SMALL))
        out = tmp_path / "out"
        assert main(["solve", str(p), "--out", str(out)]) == 0
        lines = (out / "aroe_solution.csv").read_text().splitlines()
        assert lines[0].startswith("point,aggregate,g,h")
        assert main(["oracle", str(p), "--out", str(out)]) == 0
        assert len((out / "oracle_values.csv").read_text().splitlines()) == 1 + 4 * 4
        assert main(["run", str(p), "--out", str(out)]) == 0
        man = out / "manifest.json"
        assert main(["plot", str(man)]) == 0
        assert verify_manifest(man) == []
        assert load_manifest(man)["config_hash"]

    def test_runtime_error_exit_code(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"results": {}, "files": {}}))
        assert main(["plot", str(p)]) == 2

    def test_check_single_criterion(self, capsys):
        assert main(["check", "--criteria", "1"]) == 0
        assert "[PASS] criterion 1" in capsys.readouterr().out
