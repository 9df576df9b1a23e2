"""Time-stepping schemes coupling bulk flow and interface motion.

Eight methods are available: the stable (curvature-with-radial-weight) and
equidistributing families, each in nonconservative and conservative form,
and each optionally with the exactly volume-preserving kinematic rows based
on time-weighted normals.  One step solves the block system for velocity,
pressure, curve scalar and interface displacement, moves the bulk mesh
elastically, and regenerates it when its quality degrades.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import assembly as asm
from . import curve as cv
from . import meshing as mg
from .ale import AleStep, advect_coefficients, elastic_displacement
from .errors import ConfigError, PicardError, TimeStepError
from .fem import (
    P2Space,
    PressureSpace,
    VelocitySpace,
    integrate,
    p1_vector_values_at_quad,
    p2_vector_values_at_quad,
)
from .linalg import (
    CurveBlockFactor,
    SaddleSolver,
    SchurOperator,
    recover_curve_unknowns,
    solve_monolithic,
    solve_schur,
)

SCHEME_NAMES = (
    "n-stab",
    "n-equi",
    "c-stab",
    "c-equi",
    "n-stabv",
    "n-equiv",
    "c-stabv",
    "c-equiv",
)


def parse_scheme(name):
    """Normalize a scheme name into (frame, mode, volume_preserving)."""
    key = str(name).strip().lower().replace("_", "-")
    if key not in SCHEME_NAMES:
        raise ConfigError(f"unknown scheme name {name!r}", keys=["scheme.variant"])
    vp = key.endswith("v")
    base = key[:-1] if vp else key
    frame, mode = base.split("-")
    return frame, mode, vp


@dataclass
class SchemeConfig:
    """Everything one run needs: scheme, step sizes, physics, mesh, solver."""

    scheme: str = "n-stab"
    dt: float = 0.01
    t_end: float = 3.0
    picard_tol: float = 1e-8
    picard_max: int = 50
    gamma: float = 24.5
    rho_minus: float = 100.0
    rho_plus: float = 1000.0
    mu_minus: float = 1.0
    mu_plus: float = 10.0
    gravity: tuple = (0.0, -0.98)
    domain: tuple = (0.5, 0.0, 2.0)  # rmax, zmin, zmax
    side_tags: dict = field(
        default_factory=lambda: {"bottom": "noslip", "top": "noslip", "right": "freeslip"}
    )
    initial: dict = field(
        default_factory=lambda: {"kind": "sphere", "radius": 0.25, "center_z": 0.5}
    )
    num_segments: int = 16
    target_h: float | None = None  # default: mean interface chord
    far_factor: float = 3.0
    grade_slope: float = 0.5
    mesh_seed: int = 0
    solver_path: str = "schur"  # or "monolithic"
    preconditioner: str = "ilu"
    gmres_restart: int = 50
    solver_rtol: float = 1e-10
    precond_refresh_age: int = 20
    precond_refresh_iters: int = 150
    remesh: bool = True

    def validate(self):
        bad = []
        try:
            parse_scheme(self.scheme)
        except ConfigError:
            bad.append("scheme.variant")
        if not self.dt > 0:
            bad.append("scheme.dt")
        if not self.t_end > 0:
            bad.append("scheme.t_end")
        if not self.picard_tol > 0:
            bad.append("scheme.picard_tol")
        for name in ("rho_minus", "rho_plus", "mu_minus", "mu_plus"):
            if not getattr(self, name) > 0:
                bad.append(f"physics.{name}")
        if self.num_segments < 2:
            bad.append("mesh.j_gamma")
        if self.solver_path not in ("schur", "monolithic"):
            bad.append("solver.path")
        if bad:
            raise ConfigError(
                "invalid configuration keys: " + ", ".join(sorted(bad)), keys=bad
            )
        return self

    @property
    def variant(self):
        return parse_scheme(self.scheme)


def make_initial_curve(config):
    kind = config.initial.get("kind", "sphere")
    if kind == "sphere":
        return cv.semicircle_curve(
            config.num_segments,
            radius=config.initial.get("radius", 0.25),
            center_z=config.initial.get("center_z", 0.5),
        )
    if kind == "droplet":
        from .benchmarks import DropletSpec, droplet_initial_curve

        spec = DropletSpec(
            mode=int(config.initial["mode"]),
            amplitude=float(config.initial["amplitude"]),
            radius=float(config.initial.get("radius", 0.3)),
            center_z=float(config.initial.get("center_z", 1.0)),
        )
        return droplet_initial_curve(spec, config.num_segments)
    if kind == "nodes":
        return cv.GeneratingCurve(np.asarray(config.initial["nodes"], dtype=float))
    raise ConfigError(f"unknown initial data kind {kind!r}", keys=["initial.kind"])


class RunState:
    """Solution bundle at one time level on its fitted mesh."""

    def __init__(self, config, mesh, curve, u, p, kappa, w_nodal, step_index, time):
        self.config = config
        self.mesh = mesh
        self.curve = curve
        self.scalar_space = P2Space(mesh)
        self.vspace = VelocitySpace(mesh, self.scalar_space)
        self.geometry = mesh.geometry()
        self.pspace = PressureSpace(mesh, self.geometry)
        self.u = u if u is not None else np.zeros(2 * self.scalar_space.num_dofs)
        self.p = p if p is not None else np.zeros(self.pspace.num_dofs)
        self.kappa = kappa if kappa is not None else np.zeros(curve.num_nodes)
        self.w_nodal = (
            w_nodal if w_nodal is not None else np.zeros_like(mesh.vertices)
        )
        self.step_index = step_index
        self.time = time
        self.rho_elem = asm.phase_coefficients(mesh, config.rho_minus, config.rho_plus)
        self.mu_elem = asm.phase_coefficients(mesh, config.mu_minus, config.mu_plus)
        self.ale_step = AleStep(mesh, self.w_nodal, config.dt)
        self.picard_iters = 0
        self.solver_iters = 0
        self.remeshed = False
        self.initial_volume = None
        self.energy_report = None
        self.solver_cache = {}


def default_target_h(config, curve):
    if config.target_h is not None:
        return config.target_h
    return float(np.mean(curve.chords))


def initial_state(config):
    config.validate()
    curve = make_initial_curve(config)
    domain = mg.Rectangle(*config.domain)
    mesh = mg.generate_fitted_mesh(
        domain,
        curve,
        default_target_h(config, curve),
        far_factor=config.far_factor,
        grade_slope=config.grade_slope,
        seed=config.mesh_seed,
        side_tags=config.side_tags,
    )
    state = RunState(config, mesh, curve, None, None, None, None, 0, 0.0)
    state.initial_volume = cv.enclosed_volume(curve)
    return state


def _step_context(state, config):
    """Assemble every block that is fixed across the Picard iteration."""
    frame, mode, vp = config.variant
    geo = state.geometry
    sspace = state.scalar_space
    dt = config.dt
    ale = state.ale_step
    ale.require_valid()

    u_adv = advect_coefficients(state.u, sspace, sspace)
    wind = p2_vector_values_at_quad(sspace, u_adv) - p1_vector_values_at_quad(
        state.mesh, state.w_nodal
    )
    divergence = asm.assemble_divergence(geo, sspace, state.pspace)
    gravity = asm.assemble_gravity(geo, sspace, state.rho_elem, np.asarray(config.gravity))
    b_matrix, inertia, viscous = asm.assemble_momentum(
        geo,
        sspace,
        state.rho_elem,
        state.mu_elem,
        dt,
        wind,
        u_adv,
        ale,
        conservative=(frame == "c"),
    )
    coupling = asm.assemble_interface_coupling(state.mesh, sspace, state.curve)
    rhs = inertia + gravity
    if mode == "equi":
        # The curvature row carries kappa only; the remaining known part of
        # the surface tension force moves to the right-hand side.
        rhs = rhs - config.gamma * asm.assemble_sphere_rhs(state.mesh, sspace, state.curve)
    free_u = state.vspace.free_dofs
    return {
        "viscous": viscous,
        "b_free": b_matrix.tocsr()[free_u][:, free_u].tocsc(),
        "c_free": divergence.tocsr()[free_u],
        "n_r_free": coupling.tocsr()[free_u],
        "rhs_free": rhs[free_u],
        "free_u": free_u,
    }


def _curve_system(state, config, lagged_curve, lagged_field):
    """Curve-side blocks for one Picard iterate, reduced to free dofs."""
    frame, mode, vp = config.variant
    curve = state.curve
    a_gamma = cv.curve_stiffness(curve, mode)
    n_kin = cv.curve_normal_pairing(curve, lagged_field)
    if mode == "equi":
        cal_n = cv.curve_normal_pairing_lumped(curve)
    else:
        # The stab curvature row pairs through the same field as the
        # kinematic row (plain normals, or the lagged time-weighted ones).
        cal_n = n_kin
    rhs4 = -(a_gamma @ cv.stack_vector(curve.nodes))
    if mode == "stab":
        rhs4 = rhs4 - cv.curve_length_weight_vector(curve, other=lagged_curve)
    free_x = cv.vector_free_dofs(curve.num_nodes)
    return (
        n_kin.tocsr()[free_x],
        cal_n.tocsr()[free_x],
        a_gamma.tocsr()[free_x][:, free_x],
        rhs4[free_x],
        free_x,
    )


class _StepSolver:
    """One time step's linear algebra with preconditioner reuse.

    Plain variants keep the same saddle matrix across Picard iterations;
    volume-preserving ones rebuild it (the lagged normal field enters the
    curve block) but keep the factorized preconditioner, which GMRES only
    uses as an accelerator.
    """

    def __init__(self, state, config, ctx, cache):
        self.state = state
        self.config = config
        self.ctx = ctx
        self.cache = cache if cache is not None else {}
        self.saddle = None
        self.iters_last = 0

    def _cached_prec(self, shape):
        if self.config.preconditioner == "none":
            return None
        good = (
            self.cache.get("prec") is not None
            and self.cache.get("shape") == shape
            and self.cache.get("age", 0) < self.config.precond_refresh_age
            and self.cache.get("last_iters", 0) <= self.config.precond_refresh_iters
        )
        return self.cache["prec"] if good else None

    def _store_prec(self, solver, shape, iters):
        fresh = solver.prec_solve is not self.cache.get("prec")
        self.cache["prec"] = solver.prec_solve
        self.cache["shape"] = shape
        self.cache["age"] = 0 if fresh else self.cache.get("age", 0)
        self.cache["last_iters"] = iters

    def solve(self, curve_blocks, x0=None):
        state, config, ctx = self.state, self.config, self.ctx
        n_kin_free, cal_n_free, a_free, rhs4, free_x = curve_blocks
        dt = config.dt
        factor = CurveBlockFactor(n_kin_free, cal_n_free, a_free, dt)
        if config.solver_path == "monolithic":
            u_free, p, kappa, dx_free = solve_monolithic(
                ctx["b_free"],
                ctx["c_free"],
                ctx["n_r_free"],
                n_kin_free,
                cal_n_free,
                a_free,
                dt,
                config.gamma,
                state.pspace,
                ctx["rhs_free"],
                rhs4,
            )
            iters = 1
            raw = None
        else:
            operator = SchurOperator(
                ctx["b_free"], ctx["c_free"], ctx["n_r_free"], factor, config.gamma
            )
            frame, mode, vp = config.variant
            if self.saddle is None or vp:
                self.saddle = SaddleSolver(
                    operator.explicit_matrix(),
                    ctx["b_free"].shape[0],
                    state.pspace,
                    config.preconditioner,
                )
                shape = self.saddle.matrix.shape
                self.saddle.ensure_preconditioner(reuse_from=self._cached_prec(shape))
            u_free, p, iters = solve_schur(
                operator,
                state.pspace,
                ctx["rhs_free"],
                rhs4,
                rtol=config.solver_rtol,
                restart=config.gmres_restart,
                saddle_solver=self.saddle,
                x0=x0,
            )
            self._store_prec(self.saddle, self.saddle.matrix.shape, iters)
            raw = np.concatenate([u_free, p])
            kappa, dx_free = recover_curve_unknowns(
                factor, ctx["n_r_free"], u_free, rhs4
            )
        u = np.zeros(2 * state.scalar_space.num_dofs)
        u[ctx["free_u"]] = u_free
        delta_x = np.zeros(2 * state.curve.num_nodes)
        delta_x[free_x] = dx_free
        return u, state.pspace.normalize(p), kappa, delta_x, iters, raw


def build_linear_system(state, config, lagged_curve=None, lagged_field=None, ctx=None):
    """Assemble one Picard iterate's full block system explicitly.

    Returns (matrix, rhs, layout) where layout gives the slice of each
    unknown group (velocity, pressure, curve scalar, displacement) in the
    monolithic ordering.  Used by the direct cross-check path and by tests;
    the production path eliminates the curve block instead.
    """
    import scipy.sparse as sp

    if ctx is None:
        ctx = _step_context(state, config)
    if lagged_curve is None:
        lagged_curve = state.curve
    n_kin_free, cal_n_free, a_free, rhs4, free_x = _curve_system(
        state, config, lagged_curve, lagged_field
    )
    num_u = ctx["b_free"].shape[0]
    num_p = ctx["c_free"].shape[1]
    num_k = ctx["n_r_free"].shape[1]
    num_x = a_free.shape[0]
    matrix = sp.bmat(
        [
            [ctx["b_free"], ctx["c_free"], -config.gamma * ctx["n_r_free"], None],
            [ctx["c_free"].T, None, None, None],
            [ctx["n_r_free"].T, None, None, -n_kin_free.T / config.dt],
            [None, None, cal_n_free, a_free],
        ],
        format="csr",
    )
    rhs = np.concatenate(
        [ctx["rhs_free"], np.zeros(num_p), np.zeros(num_k), rhs4]
    )
    layout = {
        "velocity": slice(0, num_u),
        "pressure": slice(num_u, num_u + num_p),
        "scalar": slice(num_u + num_p, num_u + num_p + num_k),
        "displacement": slice(num_u + num_p + num_k, num_u + num_p + num_k + num_x),
    }
    return matrix, rhs, layout


def picard_solve(state, config, ctx=None, cache=None):
    """Lagged fixed-point iteration for one time step.

    Linear variants return after a single solve; nonlinear ones iterate
    until the largest interface node update falls below the tolerance.
    Returns (u, p, kappa, delta_x, picard_iters, solver_iters).
    """
    frame, mode, vp = config.variant
    if ctx is None:
        ctx = _step_context(state, config)
    linear = mode == "equi" and not vp
    lagged_curve = state.curve
    total_solver_iters = 0
    solver = _StepSolver(state, config, ctx, cache)
    warm = None
    for it in range(1, config.picard_max + 1):
        lagged_field = (
            cv.time_weighted_normal(state.curve, lagged_curve) if vp else None
        )
        blocks = _curve_system(state, config, lagged_curve, lagged_field)
        u, p, kappa, delta_x, iters, warm = solver.solve(blocks, x0=warm)
        total_solver_iters += iters
        new_nodes = state.curve.nodes + cv.unstack_vector(delta_x)
        if linear:
            solver.cache["age"] = solver.cache.get("age", 0) + 1
            return u, p, kappa, delta_x, it, total_solver_iters
        update = float(
            np.max(np.linalg.norm(new_nodes - lagged_curve.nodes, axis=1))
        )
        lagged_curve = state.curve.with_nodes(new_nodes)
        if update <= config.picard_tol:
            solver.cache["age"] = solver.cache.get("age", 0) + 1
            return u, p, kappa, delta_x, it, total_solver_iters
    raise PicardError(
        f"Picard iteration failed to converge within {config.picard_max} steps",
        residual=update,
        iterations=config.picard_max,
    )


def _energy_report(state, config, ctx, u_new, new_curve):
    """Both sides of the per-step discrete energy inequality."""
    rho_r_old = state.rho_elem  # labels ride with elements across the move
    old_geo = state.ale_step.old_geometry
    u_old_sq = np.sum(
        p2_vector_values_at_quad(state.scalar_space, state.u) ** 2, axis=2
    )
    kinetic_old = np.pi * integrate(
        old_geo, rho_r_old[:, None] * u_old_sq, weight="r"
    )
    u_new_sq = np.sum(
        p2_vector_values_at_quad(state.scalar_space, u_new) ** 2, axis=2
    )
    kinetic_new = np.pi * integrate(
        state.geometry, state.rho_elem[:, None] * u_new_sq, weight="r"
    )
    dissipation = float(u_new @ (ctx["viscous"] @ u_new))  # 2(mu r D:D) + 2(mu/r u_r^2)
    gravity_power = 2.0 * np.pi * float(
        asm.assemble_gravity(
            state.geometry, state.scalar_space, state.rho_elem, np.asarray(config.gravity)
        )
        @ u_new
    )
    return {
        "lhs": kinetic_new
        + config.gamma * cv.surface_area(new_curve)
        + 2.0 * np.pi * config.dt * dissipation,
        "rhs": kinetic_old
        + config.gamma * cv.surface_area(state.curve)
        + config.dt * gravity_power,
    }


def step(state, config=None):
    """Advance the state by one time step of the configured scheme."""
    config = config or state.config
    ctx = _step_context(state, config)
    u, p, kappa, delta_x, picard_iters, solver_iters = picard_solve(
        state, config, ctx, cache=state.solver_cache
    )
    dx_nodes = cv.unstack_vector(delta_x)
    new_curve = state.curve.with_nodes(state.curve.nodes + dx_nodes)
    report = _energy_report(state, config, ctx, u, new_curve)

    psi = elastic_displacement(state.mesh, dx_nodes)
    new_vertices = state.mesh.vertices + psi
    new_vertices[state.mesh.interface_vertices] = new_curve.nodes
    moved = state.mesh.with_vertices(new_vertices)
    move_valid = moved.geometry().det.min() > 0.0
    if not move_valid and not config.remesh:
        raise TimeStepError(
            "elastic move inverted an element: reduce the time step or remesh"
        )
    w_nodal = (new_vertices - state.mesh.vertices) / config.dt

    remeshed = False
    if config.remesh and (not move_valid or mg.needs_remesh(moved)):
        domain = mg.Rectangle(*config.domain)
        fresh = mg.generate_fitted_mesh(
            domain,
            new_curve,
            default_target_h(config, new_curve),
            far_factor=config.far_factor,
            grade_slope=config.grade_slope,
            seed=config.mesh_seed + state.step_index + 1,
            side_tags=config.side_tags,
        )
        # An inverted move cannot be interpolated from; fall back to the
        # pre-move mesh, whose vertices carry the same fields.
        source = moved if move_valid else state.mesh
        old_space = P2Space(source)
        new_space = P2Space(fresh)
        u, w_nodal = mg.transfer_fields(source, fresh, old_space, new_space, u, w_nodal)
        moved = fresh
        p = None  # pressure restarts on the regenerated mesh
        remeshed = True

    new_state = RunState(
        config,
        moved,
        new_curve,
        u,
        None if remeshed else p,
        kappa,
        w_nodal,
        state.step_index + 1,
        state.time + config.dt,
    )
    new_state.ale_step.require_valid()
    new_state.mesh.check_fitted(new_curve)
    new_state.solver_cache = {} if remeshed else state.solver_cache
    new_state.picard_iters = picard_iters
    new_state.solver_iters = solver_iters
    new_state.remeshed = remeshed
    new_state.initial_volume = state.initial_volume
    new_state.energy_report = report
    return new_state


def run_simulation(config, observer=None):
    """Run the configured scheme to t_end, reporting each state.

    observer(state) is called after the initial state and after every step;
    returns the final state.
    """
    state = initial_state(config)
    if observer is not None:
        observer(state)
    num_steps = int(round(config.t_end / config.dt))
    if abs(num_steps * config.dt - config.t_end) > 1e-9 * config.t_end:
        raise ConfigError(
            "t_end must be an integer multiple of dt", keys=["scheme.t_end"]
        )
    for _ in range(num_steps):
        state = step(state, config)
        if observer is not None:
            observer(state)
    return state
