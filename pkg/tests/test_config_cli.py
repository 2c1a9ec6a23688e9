import json

import numpy as np
import pytest
import yaml

from hjbobstacle.analysis import zero_diffusion_closed_form
from hjbobstacle.cli import main, run
from hjbobstacle.config import ConfigError, load_config, parse_config
from hjbobstacle.grid import BoundaryPolicy, read_field
from hjbobstacle.presets import preset_names


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return p


INLINE = {
    "name": "flat",
    "dim": 1,
    "lo": [0.0],
    "hi": [1.0],
    "controls": [{"a": [[0.3]], "b": [0.1], "c": 0.5, "f": "2"}],
}


class TestLoad:
    def test_minimal_preset_defaults(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, {"problem": "smooth-obstacle-1d"}))
        assert cfg.solver.tolerance == 1e-10
        assert cfg.solver.sweep == "jacobi"
        assert cfg.problem.policy is BoundaryPolicy.PERIODIC
        assert cfg.scheme.kind == "fdm"
        assert cfg.experiment.kind == "solve"

    def test_inline_constant_source(self, tmp_path):
        cfg = parse_config({"problem": INLINE, "scheme": {"h": 1 / 32}, "solver": {"sweep": "newton"}})
        doc = run(cfg, tmp_path)
        field = read_field(tmp_path / cfg.output.field)
        assert np.allclose(field.values, 2 / 0.5, atol=1e-10)
        assert doc.exit_code == 0

    def test_negative_eps_rejected_with_path(self):
        raw = {"problem": "smooth-obstacle-1d", "experiment": {"kind": "rates-eps", "eps_list": [0.1, -0.05, 0.01]}}
        with pytest.raises(ConfigError) as exc:
            parse_config(raw)
        assert "experiment.eps_list[1]" in str(exc.value)

    def test_unknown_preset(self):
        with pytest.raises(Exception) as exc:
            parse_config({"problem": "no-such-preset"})
        assert "no-such-preset" in str(exc.value)

    def test_malformed_expression(self):
        bad = dict(INLINE, controls=[{"a": [[0.3]], "c": 1.0, "f": "sin(2*pi*x1"}])
        with pytest.raises(ConfigError) as exc:
            parse_config({"problem": bad})
        assert "controls" in str(exc.value)

    @pytest.mark.parametrize("raw,path", [
        ({"problem": "smooth-obstacle-1d", "solver": {"tolerence": 1e-8}}, "solver"),
        ({"problem": "smooth-obstacle-1d", "experiment": {"kind": "rates-h", "h_list": [0.1, 0.2, 0.05]}},
         "experiment.h_list"),
        ({"problem": INLINE, "solver": {"mode": "obstacle"}}, "solver.mode"),
        ({"problem": INLINE, "experiment": {"kind": "rates-eps", "eps_list": [0.1, 0.05, 0.01]}}, "problem.obstacle"),
        ({"problem": "smooth-obstacle-1d", "experiment": {"kind": "fit"}}, "experiment.kind"),
    ])
    def test_contradictions_rejected(self, raw, path):
        with pytest.raises(ConfigError) as exc:
            parse_config(raw)
        assert str(exc.value).startswith(path)

    def test_json_accepted(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"problem": "isaacs-1d"}), encoding="utf-8")
        assert load_config(p).problem.name == "isaacs-1d"


class TestCli:
    def test_presets_list(self, capsys):
        assert main(["presets", "list"]) == 0
        out = capsys.readouterr().out
        for name in preset_names():
            assert name in out

    def test_solve_zero_diffusion_field(self, tmp_path):
        cfg = write_cfg(tmp_path, {"problem": "zero-diffusion-1d", "scheme": {"h": 1 / 64}})
        assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        field = read_field(tmp_path / "o" / "solution.field")
        exact = zero_diffusion_closed_form(load_config(cfg).problem, field.grid)
        assert np.max(np.abs(field.values - exact.values)) <= 1e-9

    def test_deterministic_csv(self, tmp_path):
        cfg = write_cfg(tmp_path, {"problem": "smooth-obstacle-1d", "solver": {"sweep": "newton"},
                                   "experiment": {"kind": "rates-eps", "h": 1 / 64, "eps_list": [0.5, 0.25, 0.125]}})
        for d in ("a", "b"):
            assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / d), "--no-timings"]) == 0
        a = (tmp_path / "a" / "results.csv").read_bytes()
        assert a == (tmp_path / "b" / "results.csv").read_bytes()
        header = a.decode().splitlines()[0].split(",")
        assert header == ["h", "eps", "sup_error", "local_rate", "iterations", "residual", "wall_ms", "status"]

    def test_echoed_config_round_trip(self, tmp_path):
        cfg = write_cfg(tmp_path, {"problem": INLINE, "scheme": {"h": 1 / 16},
                                   "experiment": {"kind": "rates-h", "h_list": [0.25, 0.125, 0.0625],
                                                  "reference_k": 4}})
        assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "a"), "--no-timings"]) == 0
        doc = json.loads((tmp_path / "a" / "result.json").read_text())
        echo = write_cfg(tmp_path, doc["config"], "echo.yaml")
        assert main(["rates", "--config", str(echo), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()

    def test_exit_codes(self, tmp_path, capsys):
        bad = write_cfg(tmp_path, {"problem": "no-such-preset"}, "bad.yaml")
        assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
        assert "config error" in capsys.readouterr().err
        capped = write_cfg(tmp_path, {"problem": "smooth-obstacle-1d", "solver": {"max_iterations": 3}}, "cap.yaml")
        assert main(["solve", "--config", str(capped), "--out", str(tmp_path / "y")]) == 2
        rows = (tmp_path / "y" / "results.csv").read_text().splitlines()
        assert rows[1].endswith("not-converged")
        mismatch = write_cfg(tmp_path, {"problem": "smooth-obstacle-1d", "experiment": {"kind": "solve"}}, "m.yaml")
        assert main(["validate", "--config", str(mismatch), "--out", str(tmp_path / "z")]) == 1

    def test_rates_eps_slope(self, tmp_path):
        eps = [2.0**-k for k in range(3, 11)]
        cfg = write_cfg(tmp_path, {"problem": "smooth-obstacle-1d", "solver": {"sweep": "newton"},
                                   "experiment": {"kind": "rates-eps", "h": 2.0**-10, "eps_list": eps}})
        assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        doc = json.loads((tmp_path / "o" / "result.json").read_text())
        assert doc["fits"]["rates-eps"]["slope"] >= 0.9

    def test_validate_and_consistency(self, tmp_path):
        for verb, extra in (("validate", {}), ("consistency", {"experiment": {"h_list": [0.125, 0.0625, 0.03125]}})):
            cfg = write_cfg(tmp_path, {"problem": "cross-derivative-2d", **extra}, f"{verb}.yaml")
            assert main([verb, "--config", str(cfg), "--out", str(tmp_path / verb)]) == 0
            doc = json.loads((tmp_path / verb / "result.json").read_text())
            assert doc["status"] == "ok"
