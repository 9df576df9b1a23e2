"""Command-line entry point: configure, run and summarize experiments.

Runs are described by TOML files with [scheme], [physics], [mesh], [initial]
and [output] sections; `bench` materializes the canonical experiment
configurations at one of three refinement levels.  Each run writes run.csv,
summary.json and periodic curve/mesh snapshots into the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import benchmarks as bm
from . import curve as cv
from . import meshing as mg
from .errors import AxiflowError, ConfigError
from .schemes import SchemeConfig, initial_state, step

_SECTION_KEYS = {
    "scheme": {
        "variant": ("scheme", str),
        "dt": ("dt", float),
        "t_end": ("t_end", float),
        "picard_tol": ("picard_tol", float),
        "picard_max": ("picard_max", int),
    },
    "physics": {
        "gamma": ("gamma", float),
        "rho_minus": ("rho_minus", float),
        "rho_plus": ("rho_plus", float),
        "mu_minus": ("mu_minus", float),
        "mu_plus": ("mu_plus", float),
        "gravity": ("gravity", lambda v: tuple(float(x) for x in v)),
    },
    "mesh": {
        "j_gamma": ("num_segments", int),
        "target_h": ("target_h", float),
        "far_factor": ("far_factor", float),
        "grade_slope": ("grade_slope", float),
        "seed": ("mesh_seed", int),
        "remesh": ("remesh", bool),
    },
    "solver": {
        "path": ("solver_path", str),
        "preconditioner": ("preconditioner", str),
        "rtol": ("solver_rtol", float),
        "gmres_restart": ("gmres_restart", int),
    },
    "domain": {
        "rmax": None,
        "zmin": None,
        "zmax": None,
        "bottom": None,
        "top": None,
        "right": None,
    },
    "initial": None,
    "output": None,
}


def load_config(path):
    """Parse and validate a TOML run configuration."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    config = SchemeConfig()
    unknown = []
    for section, items in raw.items():
        if section not in _SECTION_KEYS:
            unknown.append(section)
            continue
        if section == "initial":
            config.initial = dict(items)
            continue
        if section == "output":
            continue
        if section == "domain":
            rmax = float(items.get("rmax", config.domain[0]))
            zmin = float(items.get("zmin", config.domain[1]))
            zmax = float(items.get("zmax", config.domain[2]))
            config.domain = (rmax, zmin, zmax)
            tags = dict(config.side_tags)
            for side in ("bottom", "top", "right"):
                if side in items:
                    tags[side] = str(items[side])
            config.side_tags = tags
            extra = set(items) - {"rmax", "zmin", "zmax", "bottom", "top", "right"}
            unknown.extend(f"domain.{k}" for k in sorted(extra))
            continue
        table = _SECTION_KEYS[section]
        for key, value in items.items():
            if key not in table:
                unknown.append(f"{section}.{key}")
                continue
            attr, conv = table[key]
            setattr(config, attr, conv(value))
    if unknown:
        raise ConfigError(
            "unknown configuration keys: " + ", ".join(unknown), keys=unknown
        )
    config.validate()
    output = dict(raw.get("output", {}))
    return config, output


class RunWriter:
    """Streams the per-step CSV rows and snapshot files of one run."""

    def __init__(self, out_dir, config, snapshot_every):
        self.out_dir = out_dir
        self.config = config
        self.snapshot_every = snapshot_every
        self.rows = []
        self.droplet_spec = bm.droplet_spec_of(config)
        os.makedirs(out_dir, exist_ok=True)
        if snapshot_every:
            os.makedirs(os.path.join(out_dir, "snapshots"), exist_ok=True)
        self._csv = open(os.path.join(out_dir, "run.csv"), "w", encoding="ascii")
        self._csv.write(",".join(bm.CSV_COLUMNS) + "\n")
        self._droplet_csv = None
        if self.droplet_spec is not None:
            self._droplet_csv = open(
                os.path.join(out_dir, "droplet.csv"), "w", encoding="ascii"
            )
            self._droplet_csv.write("t,pole_z,pole_displacement\n")

    def __call__(self, state):
        row = bm.sample_metrics(state, self.config)
        self.rows.append(row)
        self._csv.write(",".join(_fmt(row[c]) for c in bm.CSV_COLUMNS) + "\n")
        self._csv.flush()
        if self._droplet_csv is not None:
            disp = bm.pole_displacement(state.curve, self.droplet_spec)
            z = state.curve.nodes[-1, 1]
            self._droplet_csv.write(
                f"{row['t']:.10g},{z:.17g},{disp:.17g}\n"
            )
            self._droplet_csv.flush()
        if self.snapshot_every and state.step_index % self.snapshot_every == 0:
            self._write_snapshots(state)

    def _write_snapshots(self, state):
        tag = f"{state.step_index:06d}"
        cv.write_curve_csv(
            state.curve,
            os.path.join(self.out_dir, "snapshots", f"curve_{tag}.csv"),
        )
        n = state.scalar_space.num_vertices
        vel = np.column_stack([state.u[: state.scalar_space.num_dofs][:n],
                               state.u[state.scalar_space.num_dofs :][:n]])
        mg.write_vtk(
            os.path.join(self.out_dir, "snapshots", f"mesh_{tag}.vtk"),
            state.mesh,
            point_data={
                "velocity": vel,
                "pressure_p1": state.p[: state.pspace.num_vertices],
            },
            cell_data={
                "phase": state.mesh.phase.astype(int),
                "pressure_p0": state.p[state.pspace.num_vertices :],
            },
        )

    def finish(self):
        self._csv.close()
        if self._droplet_csv is not None:
            self._droplet_csv.close()
        summary = bm.summarize(self.rows)
        bm.write_summary_json(os.path.join(self.out_dir, "summary.json"), summary)
        return summary


def _fmt(value):
    if isinstance(value, int):
        return str(value)
    return f"{value:.10e}"


def write_manifest(out_dir, config, snapshot_every):
    """Record the run manifest: full configuration, seed and cadence."""
    import json

    manifest = {
        "config": {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in config.__dict__.items()
        },
        "snapshot_every": snapshot_every,
        "seed": config.mesh_seed,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def execute_run(config, out_dir, snapshot_every):
    """Run one experiment, writing all outputs; returns (summary, rows)."""
    writer = RunWriter(out_dir, config, snapshot_every)
    write_manifest(out_dir, config, snapshot_every)
    state = initial_state(config)
    writer(state)
    num_steps = int(round(config.t_end / config.dt))
    for _ in range(num_steps):
        state = step(state, config)
        writer(state)
    return writer.finish(), writer.rows


def cmd_run(args):
    if not os.path.exists(args.config):
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    try:
        config, output = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.scheme:
        config.scheme = args.scheme
        config.validate()
    out_dir = args.out or output.get("dir", "run-output")
    snapshot_every = (
        args.snapshot_every
        if args.snapshot_every is not None
        else int(output.get("snapshot_every", 0))
    )
    if snapshot_every < 0:
        print("error: snapshot cadence must be >= 1", file=sys.stderr)
        return 2
    try:
        summary, _ = execute_run(config, out_dir, snapshot_every)
    except AxiflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(_summary_line(config.scheme, summary))
    return 0


def cmd_bench(args):
    if args.name not in bm.BENCHMARKS:
        print(
            f"error: unknown benchmark {args.name!r}; "
            f"choose from {sorted(bm.BENCHMARKS)}",
            file=sys.stderr,
        )
        return 2
    factory = bm.BENCHMARKS[args.name]
    config = factory(level=args.level) if args.scheme is None else factory(
        level=args.level, scheme=args.scheme
    )
    out_dir = args.out or f"bench-{args.name}-L{args.level}-{config.scheme}"
    snapshot_every = args.snapshot_every or 0
    try:
        summary, _ = execute_run(config, out_dir, snapshot_every)
    except AxiflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"{args.name} level {args.level} [{config.scheme}]  "
        f"s_min={summary['s_min']:.4f} t_s={summary['t_at_s_min']:.4f}  "
        f"Vc_max={summary['Vc_max']:.4f} t_Vc={summary['t_at_Vc_max']:.4f}  "
        f"zc_end={summary['zc_final']:.4f} vDelta_end={summary['vDelta_final']:.3e}"
    )
    return 0


def _summary_line(scheme, summary):
    return (
        f"[{scheme}] s_min={summary['s_min']:.4f} Vc_max={summary['Vc_max']:.4f} "
        f"zc_final={summary['zc_final']:.4f} vDelta_final={summary['vDelta_final']:.3e}"
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="axiflow",
        description="axisymmetric two-phase flow solver with a fitted moving interface",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a TOML config")
    run_p.add_argument("--config", required=True, help="path to the TOML run config")
    run_p.add_argument("--out", help="output directory (overrides [output] dir)")
    run_p.add_argument("--snapshot-every", type=int, default=None, metavar="N")
    run_p.add_argument("--scheme", help="override the configured scheme name")
    run_p.set_defaults(func=cmd_run)
    bench_p = sub.add_parser("bench", help="run a canonical benchmark")
    bench_p.add_argument("name", help="bubble1 | bubble2 | droplet2 | droplet5")
    bench_p.add_argument("--level", type=int, default=0, choices=(0, 1, 2))
    bench_p.add_argument("--scheme", default=None)
    bench_p.add_argument("--out", default=None)
    bench_p.add_argument("--snapshot-every", type=int, default=0, metavar="N")
    bench_p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
