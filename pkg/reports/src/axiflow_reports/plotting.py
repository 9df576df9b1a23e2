"""Figure rendering from run directories.

Figures are reproducible byte-for-byte: a fixed style, a fixed SVG hash
salt, and no embedded timestamps.
"""

from __future__ import annotations

import csv
import json
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

QUANTITIES = ("sphericity", "v_c", "z_c", "v_delta", "energy", "psi_e")
PANEL_LABELS = {
    "sphericity": "sphericity",
    "v_c": "rise velocity",
    "z_c": "centre of mass",
    "v_delta": "relative volume loss",
    "energy": "energy",
    "psi_e": "interface mesh ratio",
}

plt.rcParams.update(
    {
        "figure.dpi": 110,
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "lines.linewidth": 1.4,
        "svg.hashsalt": "axiflow-reports",
        "legend.fontsize": 8,
        "figure.constrained_layout.use": True,
    }
)

_SAVE_KW = {
    "png": {"metadata": {"Software": "axiflow-reports"}},
    "svg": {"metadata": {"Date": None}},
}


class ReportError(RuntimeError):
    pass


class ReportSpec:
    """Validated selection of run directories and an output directory."""

    def __init__(self, run_dirs, out_dir, quantities=QUANTITIES):
        self.run_dirs = [str(d) for d in run_dirs]
        self.out_dir = str(out_dir)
        self.quantities = tuple(quantities)
        for d in self.run_dirs:
            for required in ("run.csv", "summary.json"):
                if not os.path.exists(os.path.join(d, required)):
                    raise ReportError(f"run directory {d} is missing {required}")


def load_run(run_dir):
    """Columns of run.csv plus the manifest (when present)."""
    path = os.path.join(run_dir, "run.csv")
    if not os.path.exists(path):
        raise ReportError(f"{run_dir} has no run.csv")
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(x) for x in row] for row in reader])
    data = {name: rows[:, i] for i, name in enumerate(header)}
    manifest = {}
    mpath = os.path.join(run_dir, "manifest.json")
    if os.path.exists(mpath):
        with open(mpath, encoding="ascii") as fh:
            manifest = json.load(fh)
    return data, manifest


def run_label(run_dir, manifest):
    config = manifest.get("config", {})
    scheme = config.get("scheme")
    segments = config.get("num_segments")
    if scheme and segments:
        return f"{scheme} (J={segments})"
    return os.path.basename(os.path.normpath(run_dir))


def _save(fig, out_dir, stem):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for ext in ("png", "svg"):
        path = os.path.join(out_dir, f"{stem}.{ext}")
        fig.savefig(path, **_SAVE_KW[ext])
        paths.append(path)
    plt.close(fig)
    return paths


def plot_timeseries(run_dirs, quantity, out_dir):
    """Overlay one quantity across runs; returns the written file paths."""
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    for run_dir in run_dirs:
        data, manifest = load_run(run_dir)
        if quantity not in data:
            raise ReportError(
                f"column {quantity!r} not present in {run_dir}/run.csv"
            )
        values = data[quantity]
        if quantity == "v_delta":
            ax.semilogy(data["t"], np.abs(values) + 1e-16, label=run_label(run_dir, manifest))
            ax.set_ylabel("|relative volume loss|")
        else:
            ax.plot(data["t"], values, label=run_label(run_dir, manifest))
            ax.set_ylabel(PANEL_LABELS.get(quantity, quantity))
    ax.set_xlabel("t")
    ax.legend()
    return _save(fig, out_dir, f"timeseries_{quantity}")


def plot_panels(run_dirs, out_dir):
    """The six-panel benchmark figure across runs."""
    fig, axes = plt.subplots(2, 3, figsize=(10.5, 6.0))
    for ax, quantity in zip(axes.ravel(), QUANTITIES):
        for run_dir in run_dirs:
            data, manifest = load_run(run_dir)
            if quantity not in data:
                raise ReportError(
                    f"column {quantity!r} not present in {run_dir}/run.csv"
                )
            if quantity == "v_delta":
                ax.semilogy(
                    data["t"],
                    np.abs(data[quantity]) + 1e-16,
                    label=run_label(run_dir, manifest),
                )
            else:
                ax.plot(data["t"], data[quantity], label=run_label(run_dir, manifest))
        ax.set_xlabel("t")
        ax.set_title(PANEL_LABELS[quantity])
    axes[0, 0].legend()
    return _save(fig, out_dir, "benchmark_panels")


def droplet_prediction(manifest, times):
    """Damped-oscillation pole displacement from the run's configuration."""
    config = manifest.get("config", {})
    initial = config.get("initial", {})
    if initial.get("kind") != "droplet":
        raise ReportError("run is not a droplet experiment")
    n = int(initial["mode"])
    eps0 = float(initial["amplitude"])
    r0 = float(initial.get("radius", 0.3))
    gamma = float(config["gamma"])
    rho = float(config["rho_minus"])
    mu = float(config["mu_minus"])
    omega0 = math.sqrt(n * (n - 1) * (n + 2) * gamma / (rho * r0**3))
    lam = (2 * n + 1) * (n - 1) * mu / (rho * r0**2)
    omega = math.sqrt(omega0**2 - lam**2)
    eps = eps0 * np.exp(-lam * times) * np.cos(omega * times)
    pole = r0 * (eps * (-1.0) ** n - eps**2 / (2 * n + 1))
    return pole, omega, lam


def plot_droplet_overlay(run_dir, out_dir):
    """Measured pole displacement against the asymptotic envelope."""
    droplet_path = os.path.join(run_dir, "droplet.csv")
    if not os.path.exists(droplet_path):
        raise ReportError(f"{run_dir} has no droplet.csv (not a droplet run?)")
    with open(droplet_path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = np.array([[float(x) for x in row] for row in reader])
    if rows.size == 0:
        raise ReportError(f"{run_dir}/droplet.csv is empty")
    _, manifest = load_run(run_dir)
    times = rows[:, 0]
    measured = rows[:, 2]
    predicted, omega, lam = droplet_prediction(manifest, times)
    fig, ax = plt.subplots(figsize=(5.4, 3.4))
    ax.plot(times, measured, label="computed")
    ax.plot(
        times,
        predicted,
        "--",
        label=f"asymptotic (omega={omega:.3f}, decay={lam:.3f})",
    )
    ax.set_xlabel("t")
    ax.set_ylabel("pole displacement")
    ax.legend()
    return _save(fig, out_dir, "droplet_overlay")
