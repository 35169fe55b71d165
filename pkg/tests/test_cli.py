"""End-to-end runs of the command line interface."""

import json

import numpy as np
import pytest

from stochtrans.cli import main
from stochtrans.config import ConfigError, validate_config
from stochtrans.experiments import ACCEPTANCE_FILES, acceptance_config
from stochtrans.io import file_hash, read_csv

ZERO_NOISE = {
    "kind": "simulate", "seed": 1, "geometry": {"d": 2, "M": 16}, "family": {"name": "none"},
    "solver": {"dt": 0.01, "T": 0.05, "snapshots": 5, "background_diffusivity": [[1, 0], [0, 1]]},
    "initial": {"type": "modes", "terms": [{"k": [1, 1], "kind": "cos", "amplitude": 1.0}]},
    "replicas": 2,
}
SWEEP = {"kind": "sweep-rate", "seed": 1, "geometry": {"d": 2, "M": 32},
         "params": {"quantity": "noise-diagnostics", "h_grid": [0.4, 0.28, 0.2, 0.14]}}


def write_cfg(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, cfg, name="out", *extra):
    out = tmp_path / name
    code = main(["run", "--config", write_cfg(tmp_path / f"{name}.json", cfg), "--out", str(out), *extra])
    return code, out


class TestRun:
    def test_zero_noise_heat_table(self, tmp_path, capsys):
        """[TRIVIAL] zero noise reproduces exp(-t 2 pi^2 |k|^2) in heat.csv."""
        code, out = run(tmp_path, ZERO_NOISE)
        assert code == 0
        header, rows = read_csv(out / "heat.csv")
        assert header == ["time", "mode", "computed_re", "closed_form_re"]
        for t, _, a, b in rows:
            expect = np.sqrt(0.5) * np.exp(-float(t) * 2 * np.pi**2 * 2)
            assert float(a) == pytest.approx(expect, abs=1e-12) and float(b) == pytest.approx(expect, abs=1e-15)
        assert "PASS heat_closed_form" in capsys.readouterr().out
        assert (out / "trajectories").is_dir()

    def test_sweep_fit_json(self, tmp_path):
        code, out = run(tmp_path, SWEEP)
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        fit = summary["summary"]["fits"]["op_norm"]
        assert fit["slope"] == pytest.approx(2.0, abs=1e-9) and fit["n_used"] == 4
        assert (out / "diagnostics.csv").exists() and (out / "plots" / "index.json").exists()

    def test_check_flag_exit_code(self, tmp_path):
        """The small sweep misses the asymptotic HS rate, so --check exits 2."""
        code, _ = run(tmp_path, SWEEP, "out", "--check")
        assert code == 2

    def test_byte_reproducible(self, tmp_path):
        _, a = run(tmp_path, ZERO_NOISE, "a")
        _, b = run(tmp_path, ZERO_NOISE, "b")
        for name in ("heat.csv", "timeseries.csv", "checks.csv", "config.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_override_changes_manifest(self, tmp_path):
        _, a = run(tmp_path, ZERO_NOISE, "a", "--seed", "99")
        assert json.loads((a / "manifest.json").read_text())["seed"] == 99

    def test_manifest_hashes(self, tmp_path):
        _, out = run(tmp_path, ZERO_NOISE)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["kernel_backend"] in ("numba", "numpy") and manifest["kind"] == "simulate"
        listed = {f["path"] for f in manifest["files"]}
        on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
        assert listed == on_disk
        for f in manifest["files"]:
            assert file_hash(out / f["path"]) == f["sha256"]


class TestConfigErrors:
    def test_missing_seed(self, tmp_path, capsys):
        cfg = {k: v for k, v in ZERO_NOISE.items() if k != "seed"}
        code, _ = run(tmp_path, cfg)
        assert code == 1
        assert "seed" in capsys.readouterr().err

    def test_pointer_to_bad_value(self):
        cfg = json.loads(json.dumps(ZERO_NOISE))
        cfg["solver"]["dt"] = -1
        with pytest.raises(ConfigError) as info:
            validate_config(cfg)
        assert info.value.path == "/solver/dt"

    def test_semantic_checks(self):
        cfg = json.loads(json.dumps(ZERO_NOISE))
        cfg["initial"]["terms"][0]["k"] = [1, 1, 1]
        with pytest.raises(ConfigError):
            validate_config(cfg)
        cfg = json.loads(json.dumps(ZERO_NOISE))
        cfg["solver"]["dt"] = 1.0
        with pytest.raises(ConfigError):
            validate_config(cfg)

    def test_she_grid_divisibility(self):
        cfg = acceptance_config(8)
        cfg["params"]["snapshot_dt"] = 0.0025
        with pytest.raises(ConfigError) as info:
            validate_config(cfg)
        assert info.value.path == "/params/levels/0/dt"

    def test_unknown_key(self, tmp_path, capsys):
        code, _ = run(tmp_path, dict(ZERO_NOISE, colour="blue"))
        assert code == 1 and "config error at /" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1

    @pytest.mark.parametrize("n", sorted(ACCEPTANCE_FILES))
    def test_bundled_configs_valid(self, n):
        validate_config(acceptance_config(n))


class TestPlot:
    def test_plot_run_directory(self, tmp_path, capsys):
        _, out = run(tmp_path, SWEEP)
        assert main(["plot", str(out)]) == 0
        svgs = list((out / "plots").glob("*.svg"))
        assert svgs and svgs[0].read_text().startswith("<svg")

    def test_plot_single_csv(self, tmp_path):
        _, out = run(tmp_path, SWEEP)
        target = tmp_path / "chart.svg"
        assert main(["plot", str(out / "plots" / "diagnostics.csv"), "-o", str(target), "--log-x", "--log-y"]) == 0
        assert "polyline" in target.read_text()

    def test_plot_missing(self, tmp_path):
        assert main(["plot", str(tmp_path / "nothing.csv")]) == 1
