import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from axiflow_reports import plotting
from axiflow_reports.cli import main

COLUMNS = (
    "t,energy,area,volume,v_delta,sphericity,v_c,z_c,alpha_min,"
    "psi_e,picard_iters,solver_iters,remeshed"
)


def synth_run(tmp_path, name, droplet=False, scheme="n-stab", segments=16):
    run = tmp_path / name
    run.mkdir()
    t = np.round(np.arange(0.0, 2.0001, 0.01), 10)
    lam, om = 0.11, 3.44
    rows = []
    for ti in t:
        s = 1.0 - 0.02 * (1 - math.cos(ti))
        rows.append(
            f"{ti:.6e},{19.0 - 0.1 * ti:.6e},{0.78:.6e},{0.065:.6e},"
            f"{-1e-4 * ti:.6e},{s:.6e},{0.3 * math.sin(ti):.6e},"
            f"{0.5 + 0.3 * ti:.6e},{0.31:.6e},{1.0 + ti:.6e},2,10,0"
        )
    (run / "run.csv").write_text(COLUMNS + "\n" + "\n".join(rows) + "\n")
    (run / "summary.json").write_text(json.dumps({
        "s_min": 0.95, "t_at_s_min": 2.0, "Vc_max": 0.3, "t_at_Vc_max": 1.5,
        "zc_final": 1.1, "vDelta_final": -2e-4,
    }))
    config = {
        "scheme": scheme,
        "num_segments": segments,
        "gamma": 40.0,
        "rho_minus": 1000.0,
        "mu_minus": 2.0,
        "initial": (
            {"kind": "droplet", "mode": 2, "amplitude": 0.08, "radius": 0.3}
            if droplet
            else {"kind": "sphere", "radius": 0.25}
        ),
    }
    (run / "manifest.json").write_text(json.dumps({"config": config}))
    if droplet:
        lines = ["t,pole_z,pole_displacement"]
        for ti in t:
            disp = 0.024 * math.exp(-lam * ti) * math.cos(om * ti)
            lines.append(f"{ti:.6e},{1.3 + disp:.10e},{disp:.10e}")
        (run / "droplet.csv").write_text("\n".join(lines) + "\n")
    return run


class TestSpecValidation:
    def test_missing_files_rejected(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(plotting.ReportError, match="missing"):
            plotting.ReportSpec([empty], tmp_path / "out")

    def test_valid_runs_accepted(self, tmp_path):
        run = synth_run(tmp_path, "runA")
        spec = plotting.ReportSpec([run], tmp_path / "out")
        assert spec.run_dirs == [str(run)]


class TestTimeseries:
    def test_overlay_written(self, tmp_path):
        runs = [synth_run(tmp_path, "a"), synth_run(tmp_path, "b", scheme="n-equi")]
        paths = plotting.plot_timeseries(runs, "energy", tmp_path / "out")
        assert [os.path.basename(p) for p in paths] == [
            "timeseries_energy.png",
            "timeseries_energy.svg",
        ]
        for p in paths:
            assert os.path.getsize(p) > 0

    def test_volume_loss_log_scale(self, tmp_path):
        run = synth_run(tmp_path, "c")
        paths = plotting.plot_timeseries([run], "v_delta", tmp_path / "out")
        assert all(os.path.exists(p) for p in paths)

    def test_missing_column_rejected(self, tmp_path):
        run = synth_run(tmp_path, "d")
        with pytest.raises(plotting.ReportError, match="not present"):
            plotting.plot_timeseries([run], "enstrophy", tmp_path / "out")


class TestPanels:
    def test_six_panel_figure(self, tmp_path):
        runs = [synth_run(tmp_path, "e"), synth_run(tmp_path, "f", segments=32)]
        paths = plotting.plot_panels(runs, tmp_path / "out")
        assert [os.path.basename(p) for p in paths] == [
            "benchmark_panels.png",
            "benchmark_panels.svg",
        ]

    def test_deterministic_bytes(self, tmp_path):
        run = synth_run(tmp_path, "g", droplet=True)
        out1 = tmp_path / "out1"
        out2 = tmp_path / "out2"
        p1 = plotting.plot_panels([run], out1)
        p2 = plotting.plot_panels([run], out2)
        for a, b in zip(p1, p2):
            assert open(a, "rb").read() == open(b, "rb").read()
        d1 = plotting.plot_droplet_overlay(run, out1)
        d2 = plotting.plot_droplet_overlay(run, out2)
        for a, b in zip(d1, d2):
            assert open(a, "rb").read() == open(b, "rb").read()


class TestDropletOverlay:
    def test_overlay_matches_prediction_period(self, tmp_path):
        run = synth_run(tmp_path, "h", droplet=True)
        _, manifest = plotting.load_run(run)
        _, omega, lam = plotting.droplet_prediction(manifest, np.array([0.0]))
        assert omega == pytest.approx(3.4409, abs=2e-4)
        assert 2 * math.pi / omega == pytest.approx(1.826, abs=2e-3)
        paths = plotting.plot_droplet_overlay(run, tmp_path / "out")
        assert all(os.path.exists(p) for p in paths)

    def test_mode5_period(self):
        manifest = {"config": {
            "gamma": 40.0, "rho_minus": 1000.0, "mu_minus": 2.0,
            "initial": {"kind": "droplet", "mode": 5, "amplitude": 0.02, "radius": 0.3},
        }}
        _, omega, _ = plotting.droplet_prediction(manifest, np.array([0.0]))
        assert 2 * math.pi / omega == pytest.approx(0.437, abs=2e-3)

    def test_non_droplet_run_rejected(self, tmp_path):
        run = synth_run(tmp_path, "i", droplet=False)
        with pytest.raises(plotting.ReportError, match="droplet"):
            plotting.plot_droplet_overlay(run, tmp_path / "out")


class TestCli:
    def test_plot_command(self, tmp_path, capsys):
        run = synth_run(tmp_path, "j", droplet=True)
        out = tmp_path / "figs"
        assert main(["plot", "--runs", str(run), "--quantity", "panels", "--out", str(out)]) == 0
        assert main(["plot", "--runs", str(run), "--quantity", "droplet", "--out", str(out)]) == 0
        assert main(["plot", "--runs", str(run), "--quantity", "z_c", "--out", str(out)]) == 0
        printed = capsys.readouterr().out.splitlines()
        assert any(p.endswith("timeseries_z_c.svg") for p in printed)

    def test_bad_quantity_exit_1(self, tmp_path, capsys):
        run = synth_run(tmp_path, "k")
        assert main(["plot", "--runs", str(run), "--quantity", "nope", "--out", str(tmp_path / "o")]) == 1
