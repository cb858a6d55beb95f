import subprocess
import sys

import numpy as np
import pytest

from jsqps.cli import build_parser, main, read_config_file, resolve_spec, run
from jsqps.core import ParameterError


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def body(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


def column(text, k):
    return np.array([float(line.split(",")[k]) for line in body(text)[1:]])


class TestCdf:
    def test_auto_picks_d_at_half_load(self, capsys):
        code, out, _ = run_cli(capsys, "cdf", "--R", "5", "--lambda", "2.5", "--mu", "1", "--method", "auto")
        assert code == 0
        lines = out.splitlines()
        assert lines[0].startswith("# jsqps command=cdf")
        assert lines[1] == "t,cdf,method"
        assert lines[2] == "0,0,D"
        assert len(lines) == 2 + 18233

    def test_unstable_exits_1(self, capsys):
        code, _, err = run_cli(capsys, "cdf", "--R", "1", "--lambda", "1.5", "--mu", "1")
        assert code == 1
        assert "rho" in err

    def test_paired_methods_match(self, capsys):
        _, a, _ = run_cli(capsys, "cdf", "--R", "2", "--lambda", "1", "--mu", "1", "--method", "A")
        _, d, _ = run_cli(capsys, "cdf", "--R", "2", "--lambda", "1", "--mu", "1", "--method", "D")
        assert np.abs(column(a, 1) - column(d, 1)).max() < 1e-6

    def test_missing_rate(self, capsys):
        assert run_cli(capsys, "cdf", "--R", "2")[0] == 1

    def test_usage_error_exits_1(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["cdf", "--method", "Z"])
        assert info.value.code == 1

    def test_resource_exit_3(self, capsys):
        assert run_cli(capsys, "cdf", "--R", "2", "--lambda", "1", "--tmax", "1e6", "--dt", "1e-3")[0] == 3
        assert run_cli(capsys, "cdf", "--R", "6", "--lambda", "3", "--L1", "22")[0] == 3


class TestPercentile:
    def test_urllc_rows(self, capsys):
        code, out, _ = run_cli(capsys, "percentile", "--R", "3", "--lambda", "1.5", "--urllc")
        assert code == 0
        rows = body(out)
        assert rows[0] == "eta,t_eta,method"
        assert [r.split(",")[0] for r in rows[1:]] == ["0.99", "0.999", "0.9999", "0.99999"]
        t = [float(r.split(",")[1]) for r in rows[1:]]
        assert t == sorted(t)

    @pytest.mark.parametrize("eta", ["1.0", "0", "-0.5"])
    def test_eta_outside_open_interval(self, capsys, eta):
        assert run_cli(capsys, "percentile", "--R", "2", "--lambda", "1", "--eta", eta)[0] == 1

    def test_saturation_exits_2(self, capsys):
        code, _, err = run_cli(capsys, "percentile", "--R", "1", "--lambda", "0.99", "--eta", "0.99999", "--tmax", "20")
        assert code == 2
        assert "max attained" in err


class TestConfigFile:
    def test_flags_override_file(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# system\nR = 2\nlambda = 1.0\nmethod = C\neta = 0.9, 0.99\nps-variant = limited:2\n")
        spec = resolve_spec(build_parser().parse_args(["percentile", "--config", str(cfg), "--method", "B"]))
        assert (spec.R, spec.lam, spec.method) == (2, 1.0, "B")
        assert spec.eta == [0.9, 0.99]
        assert spec.ps_variant == "limited:2"

    def test_bad_file(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = red\n")
        with pytest.raises(ParameterError):
            read_config_file(cfg)
        cfg.write_text("R 2\n")
        with pytest.raises(ParameterError):
            read_config_file(cfg)

    def test_regime_map_override(self, tmp_path, capsys):
        rmap = tmp_path / "map.txt"
        rmap.write_text("1 0 1 F\n")
        _, out, _ = run_cli(capsys, "cdf", "--R", "5", "--lambda", "2.5", "--regime-map", str(rmap))
        assert body(out)[1].endswith(",F")


class TestSimulationCommands:
    ARGS = ("--R", "2", "--lambda", "1.2", "--qmax", "3000", "--warmup", "300", "--trials", "2", "--seed", "7")

    def test_simulate(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "simulate", *self.ARGS, "--samples", str(tmp_path / "s"))
        assert code == 0
        assert body(out)[0] == "t,cdf,method"
        assert (tmp_path / "s.trial1.samples").exists()

    def test_compare(self, capsys):
        code, out, _ = run_cli(capsys, "compare", *self.ARGS, "--eta", "0.99")
        assert code == 0
        rows = body(out)
        assert rows[0] == "R,rho,method,wasserstein,eta,approx_pct,sim_pct,error"
        assert [r.split(",")[2] for r in rows[1:]] == list("ABCDEF")

    @pytest.mark.parametrize("command", ["cdf", "percentile", "simulate", "compare"])
    def test_byte_identical(self, capsys, tmp_path, command):
        outs = []
        for k in range(2):
            path = tmp_path / f"{command}{k}.csv"
            assert main([command, *self.ARGS, "--urllc", "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_regime_scan_emits_loadable_map(self, capsys, tmp_path):
        path = tmp_path / "scan.txt"
        assert main(["regime-scan", "--R", "2", "--rho", "0.3", "--rho", "0.6", "--qmax", "2000", "--warmup", "200", "--trials", "1", "--method", "D", "--out", str(path)]) == 0
        text = path.read_text()
        assert "winner=D" in text
        code, out, _ = run_cli(capsys, "cdf", "--R", "2", "--lambda", "1.8", "--regime-map", str(path))
        assert code == 0 and body(out)[1].endswith(",D")


class TestReproduce:
    def test_table5(self, capsys):
        code, out, _ = run_cli(capsys, "reproduce", "table5")
        assert code == 0
        assert body(out) == ["R,L1", "1,22", "2,22", "3,22", "4,13", "5,7", "6,5", "7,4", "8,3", "9,3", "10,2"]

    def test_full_scale_needs_confirmation(self, capsys):
        code, _, err = run_cli(capsys, "reproduce", "table6", "--scale", "full")
        assert code == 1
        assert "--confirm-long-run" in err

    def test_fig4_decreasing(self, capsys):
        code, out, _ = run_cli(capsys, "reproduce", "fig4", "--R", "2", "--rho", "0.9")
        assert code == 0
        mass = column(out, 3)
        assert len(mass) > 10 and np.all(np.diff(mass) < 0)

    def test_table6_single_cell(self, capsys):
        code, out, _ = run_cli(capsys, "reproduce", "table6", "--R", "3", "--rho", "0.5", "--qmax", "3000", "--warmup", "300", "--trials", "1")
        assert code == 0
        rows = body(out)
        assert rows[0] == "R,rho,method,eta,approx_pct,sim_pct,error"
        assert len(rows) == 5


def test_console_entry_point():
    result = subprocess.run([sys.executable, "-m", "jsqps.cli", "reproduce", "table5"], capture_output=True, text=True)
    assert result.returncode == 0
    assert "10,2" in result.stdout
