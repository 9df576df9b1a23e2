"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one pass/fail line (visible with `pytest -s`).  The heavy
benchmark runs are shared across criteria through session fixtures; the
whole module reproduces the rising-bubble tables, the droplet oscillation
comparison, the structure-preservation theorems and the solver contracts.
Expect a long runtime (the droplet runs dominate).
"""

import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from axiflow import ale
from axiflow import benchmarks as bm
from axiflow import curve as cv
from axiflow import meshing as mg
from axiflow import schemes
from axiflow.cli import execute_run
from axiflow.fem import P2Space, p2_vector_values_at_quad


def report(name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion] {name}: {status} ({detail})")
    assert ok, f"{name}: {detail}"


def run_rows(config):
    rows = []

    def observer(state):
        rows.append(bm.sample_metrics(state, config))

    schemes.run_simulation(config, observer)
    return rows


@pytest.fixture(scope="session")
def bubble1_runs(tmp_path_factory):
    """Case I level-0 runs of all four base schemes, written to disk."""
    out_root = tmp_path_factory.mktemp("bubble1")
    results = {}
    for scheme in ("n-stab", "c-stab", "n-equi", "c-equi"):
        config = bm.bubble_setup("I", scheme=scheme)
        summary, rows = execute_run(config, str(out_root / scheme), 0)
        results[scheme] = (summary, rows)
    results["out_root"] = out_root
    return results


@pytest.fixture(scope="session")
def bubble1_level1_summary():
    config = bm.bubble_setup("I", scheme="n-stab", level=1)
    rows = run_rows(config)
    return bm.summarize(rows)


@pytest.fixture(scope="session")
def bubble2_vp_runs():
    results = {}
    for scheme in ("n-stabv", "n-equiv"):
        config = bm.bubble_setup("II", scheme=scheme)
        results[scheme] = run_rows(config)
    return results


@pytest.fixture(scope="session")
def droplet2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("droplet2")
    config = bm.droplet_setup(2, scheme="n-equiv")
    summary, rows = execute_run(config, str(out / "run"), 0)
    ts, poles = np.loadtxt(
        out / "run" / "droplet.csv", delimiter=",", skiprows=1, usecols=(0, 2)
    ).T
    return config, ts, poles, out / "run"


@pytest.fixture(scope="session")
def droplet5_fit():
    config = bm.droplet_setup(5, scheme="n-equiv")
    spec = bm.droplet_spec_of(config)
    ts, poles = [], []

    def observer(state):
        ts.append(state.time)
        poles.append(bm.pole_displacement(state.curve, spec))

    schemes.run_simulation(config, observer)
    return config, bm.fit_decay_and_frequency(ts, poles)


def perturbed_sphere_config(scheme):
    config = bm.bubble_setup("I", scheme=scheme)
    config.gravity = (0.0, 0.0)
    config.t_end = 2.0  # 200 steps at dt = 0.01
    config.initial = {
        "kind": "droplet",
        "mode": 3,
        "amplitude": 0.05,
        "radius": 0.25,
        "center_z": 0.5,
    }
    return config


class TestTable2:
    def test_case1_coarse_column(self, bubble1_runs):
        summary, rows = bubble1_runs["n-stab"]
        checks = [
            ("s_min", abs(summary["s_min"] - 0.9490) <= 0.003),
            ("Vc_max", abs(summary["Vc_max"] - 0.3689) <= 0.006),
            ("t_at_Vc_max", abs(summary["t_at_Vc_max"] - 0.91) <= 0.04),
            ("zc_final", abs(summary["zc_final"] - 1.4925) <= 0.006),
            (
                "vDelta",
                summary["vDelta_final"] < 0
                and 3e-4 <= abs(summary["vDelta_final"]) <= 3e-3,
            ),
        ]
        detail = ", ".join(
            f"{k}={summary[k]:.4g}" for k in
            ("s_min", "Vc_max", "t_at_Vc_max", "zc_final", "vDelta_final")
        )
        report("Table2 coarse column (Case I, n-Stab)", all(ok for _, ok in checks), detail)

    def test_scheme_agreement(self, bubble1_runs):
        pairs = [("n-stab", "c-stab"), ("n-equi", "c-equi")]
        ok = True
        details = []
        for a, b in pairs:
            sa, sb = bubble1_runs[a][0], bubble1_runs[b][0]
            ds = abs(sa["s_min"] - sb["s_min"])
            dz = abs(sa["zc_final"] - sb["zc_final"])
            details.append(f"{a} vs {b}: ds={ds:.2e} dz={dz:.2e}")
            ok = ok and ds <= 0.002 and dz <= 0.002
        report("Scheme agreement across Table 2 columns", ok, "; ".join(details))

    def test_volume_loss_convergence_order(self, bubble1_runs, bubble1_level1_summary):
        v0 = abs(bubble1_runs["n-stab"][0]["vDelta_final"])
        v1 = abs(bubble1_level1_summary["vDelta_final"])
        ratio = v0 / v1
        report(
            "Volume-loss refinement ratio (Case I n-Stab L0/L1)",
            3.0 <= ratio <= 5.0,
            f"|vD(L0)|={v0:.3e}, |vD(L1)|={v1:.3e}, ratio={ratio:.2f}",
        )

    def test_equidistribution_bound_on_bubble(self, bubble1_runs):
        rows = bubble1_runs["n-stab"][1]
        worst = max(r["psi_e"] for r in rows)
        report(
            "Interface mesh ratio stays below 8 (Case I n-Stab)",
            worst < 8.0,
            f"max psi_e={worst:.2f}",
        )


class TestVolumePreservation:
    def test_case2_exact_volume(self, bubble2_vp_runs):
        ok = True
        details = []
        for scheme, rows in bubble2_vp_runs.items():
            vd = abs(rows[-1]["v_delta"])
            details.append(f"{scheme}: |vD(1.5)|={vd:.2e}")
            ok = ok and vd <= 1e-7
        report("Exact volume preservation (Case II V-variants)", ok, "; ".join(details))


class TestEnergyStability:
    def test_static_perturbed_sphere(self):
        ok = True
        details = []
        for scheme in ("n-stab", "c-stab"):
            config = perturbed_sphere_config(scheme)
            state = schemes.initial_state(config)
            e_ref = bm.total_energy(state, config.gamma)
            worst = -np.inf
            for _ in range(200):
                state = schemes.step(state, config)
                gap = state.energy_report["lhs"] - state.energy_report["rhs"]
                worst = max(worst, gap)
            details.append(f"{scheme}: max(lhs-rhs)={worst:.2e}")
            ok = ok and worst <= 1e-9 * e_ref
        report("Discrete energy stability (200 perturbed-sphere steps)", ok, "; ".join(details))


class TestGclIdentities:
    def test_fifty_step_bubble(self):
        config = bm.bubble_setup("I", scheme="n-stab")
        config.t_end = 0.5  # 50 steps
        state = schemes.initial_state(config)
        worst_identity = 0.0
        worst_simpson = 0.0
        for _ in range(50):
            state = schemes.step(state, config)
            step_map = state.ale_step
            geo = step_map.geometry
            fields = {
                "1": np.ones_like(geo.qradii),
                "r": geo.qradii,
                "|U|^2": np.sum(
                    p2_vector_values_at_quad(state.scalar_space, state.u) ** 2,
                    axis=2,
                ),
            }
            for sign in (-1, 1):
                mask = (state.mesh.phase == sign).astype(float)
                for name, values in fields.items():
                    lhs, rhs = ale.jacobian_identity_check(step_map, values, mask)
                    rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30)
                    worst_identity = max(worst_identity, rel)
            diff = np.abs(
                step_map.gcl_weight_at_quad("simpson")
                - step_map.gcl_weight_at_quad("gauss10")
            ).max()
            worst_simpson = max(worst_simpson, diff)
        ok = worst_identity <= 1e-11 and worst_simpson <= 1e-12
        report(
            "Transport identities over a 50-step bubble run",
            ok,
            f"max rel id err={worst_identity:.2e}, max Simpson-Gauss={worst_simpson:.2e}",
        )


class TestVolumeDifferenceIdentity:
    def test_thousand_random_pairs(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            j_gamma = int(rng.integers(3, 48))
            base = cv.semicircle_curve(j_gamma, radius=0.3, center_z=1.0)
            curves = []
            for _ in range(2):
                delta = rng.normal(size=base.nodes.shape) * 0.2 * base.chords.min()
                delta[0, 0] = delta[-1, 0] = 0.0
                curves.append(cv.GeneratingCurve(base.nodes + delta))
            old, new = curves
            field = cv.time_weighted_normal(old, new)
            lhs = cv.enclosed_volume(new) - cv.enclosed_volume(old)
            rhs = 2.0 * np.pi * cv.pair_displacement_with_field(old, new, field)
            scale = max(abs(cv.enclosed_volume(old)), abs(lhs))
            worst = max(worst, abs(lhs - rhs) / scale)
        report(
            "Volume-difference identity on 1000 random curve pairs",
            worst <= 1e-12,
            f"max rel err={worst:.2e}",
        )


class TestDroplets:
    def test_mode2_frequency_and_decay(self, droplet2_run):
        config, ts, poles, _ = droplet2_run
        spec = bm.droplet_spec_of(config)
        _, lam_ref, om_ref = bm.droplet_rates(
            spec, gamma=config.gamma, rho_inner=config.rho_minus, mu_inner=config.mu_minus
        )
        decay, freq = bm.fit_decay_and_frequency(ts, poles)
        ok = abs(freq - om_ref) <= 0.05 * om_ref and abs(decay - lam_ref) <= 0.20 * lam_ref
        report(
            "Droplet mode-2 frequency/decay",
            ok,
            f"omega={freq:.4f} (ref {om_ref:.4f}), decay={decay:.4f} (ref {lam_ref:.4f})",
        )

    def test_mode5_frequency(self, droplet5_fit):
        config, (decay, freq) = droplet5_fit
        spec = bm.droplet_spec_of(config)
        _, _, om_ref = bm.droplet_rates(
            spec, gamma=config.gamma, rho_inner=config.rho_minus, mu_inner=config.mu_minus
        )
        ok = abs(freq - om_ref) <= 0.07 * om_ref
        report(
            "Droplet mode-5 frequency",
            ok,
            f"omega={freq:.3f} (ref {om_ref:.3f})",
        )


class TestEquidistributionProperty:
    def test_static_sphere_reaches_uniform_spacing(self):
        config = bm.bubble_setup("I", scheme="n-equi")
        config.gravity = (0.0, 0.0)
        config.t_end = 5.0  # 500 steps
        j_gamma = 32
        s = np.linspace(0.0, 1.0, j_gamma + 1) ** 1.6
        theta = -0.5 * np.pi + np.pi * s
        nodes = np.column_stack(
            [0.25 * np.cos(theta), 0.5 + 0.25 * np.sin(theta)]
        )
        nodes[0, 0] = nodes[-1, 0] = 0.0
        config.initial = {"kind": "nodes", "nodes": nodes}
        config.num_segments = j_gamma
        state = schemes.initial_state(config)
        start_ratio = cv.equidistribution_ratio(state.curve)
        first_below = None
        violated_after = False
        for k in range(1, 501):
            state = schemes.step(state, config)
            ratio = cv.equidistribution_ratio(state.curve)
            if first_below is None and ratio < 1.1:
                first_below = k
            elif first_below is not None and ratio >= 1.1:
                violated_after = True
        ok = first_below is not None and not violated_after
        report(
            "Equidistribution on the static sphere",
            ok,
            f"psi_e start={start_ratio:.2f}, below 1.1 after {first_below} steps, "
            f"stays={'yes' if not violated_after else 'no'}",
        )


class TestSolverCrossCheck:
    def test_monolithic_vs_schur_on_case1_step(self):
        config = bm.bubble_setup("I", scheme="n-stab")
        config.solver_rtol = 1e-12  # hydrostatic pressure scale is ~2e3
        state = schemes.initial_state(config)
        ctx = schemes._step_context(state, config)
        blocks = schemes._curve_system(state, config, state.curve, None)
        solver = schemes._StepSolver(state, config, ctx, {})
        u_s, p_s, k_s, dx_s, _, _ = solver.solve(blocks)
        mono = schemes.SchemeConfig(**{**config.__dict__, "solver_path": "monolithic"})
        solver_m = schemes._StepSolver(state, mono, ctx, {})
        u_m, p_m, k_m, dx_m, _, _ = solver_m.solve(blocks)
        worst = max(
            np.abs(u_s - u_m).max(),
            np.abs(p_s - p_m).max(),
            np.abs(k_s - k_m).max(),
            np.abs(dx_s - dx_m).max(),
        )
        report(
            "Monolithic vs Schur solves agree",
            worst <= 1e-8,
            f"max difference over all unknowns={worst:.2e}",
        )


class TestGeometryConvergence:
    def test_second_order_sphere_functionals(self):
        radius = 0.25
        area_ref = 4.0 * np.pi * radius**2
        vol_ref = 4.0 / 3.0 * np.pi * radius**3
        ratios = []
        prev = None
        for j in (16, 32, 64, 128):
            curve = cv.semicircle_curve(j, radius=radius)
            errs = (
                abs(cv.surface_area(curve) - area_ref),
                abs(cv.enclosed_volume(curve) - vol_ref),
                abs(bm.sphericity(curve) - 1.0),
            )
            if prev is not None:
                ratios.append(tuple(p / e for p, e in zip(prev, errs)))
            prev = errs
        ok = all(3.4 <= r <= 4.6 for triple in ratios for r in triple)
        report(
            "Second-order geometry convergence (area, volume, sphericity)",
            ok,
            "; ".join(
                "(" + ", ".join(f"{r:.2f}" for r in triple) + ")" for triple in ratios
            ),
        )


class TestSecondaryReports:
    def test_reports_regenerate_deterministically(self, bubble1_runs, droplet2_run, tmp_path):
        pytest.importorskip("axiflow_reports")
        run_dir = str(bubble1_runs["out_root"] / "n-stab")
        droplet_dir = str(droplet2_run[3])
        outs = [tmp_path / "f1", tmp_path / "f2"]
        for out in outs:
            cmd = [
                sys.executable,
                "-m",
                "axiflow_reports.cli",
                "plot",
                "--runs",
                run_dir,
                "--quantity",
                "panels",
                "--out",
                str(out),
            ]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            cmd_droplet = [
                sys.executable,
                "-m",
                "axiflow_reports.cli",
                "plot",
                "--runs",
                droplet_dir,
                "--quantity",
                "droplet",
                "--out",
                str(out),
            ]
            proc = subprocess.run(cmd_droplet, capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
        identical = True
        for name in ("benchmark_panels.png", "benchmark_panels.svg",
                     "droplet_overlay.png", "droplet_overlay.svg"):
            b1 = (outs[0] / name).read_bytes()
            b2 = (outs[1] / name).read_bytes()
            identical = identical and b1 == b2
        report(
            "Secondary: report figures regenerate deterministically",
            identical,
            "four figure files byte-identical across invocations",
        )
