"""Linear solvers for the coupled velocity/pressure/interface system.

The curve unknowns (curvature scalar and interface displacement) are
eliminated through a sparse LU factorization of the small curve block; the
remaining velocity-pressure saddle problem is solved by restarted GMRES
with a pluggable preconditioner.  A monolithic direct factorization of the
full block system is kept as an independent cross-check path.

The pressure coefficient space carries two null directions (the P1/P0
representation redundancy and the constant mode); the Krylov path projects
them out, while factorizations pin one P1 and one P0 coefficient.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError


class CurveBlockFactor:
    """LU factorization of the curve block [[0, -N_kin^T/dt], [calN, A]].

    Rows and columns are ordered [curvature scalar, free displacement dofs].
    """

    def __init__(self, n_kin_free, cal_n_free, a_free, dt):
        self.n_scalar = n_kin_free.shape[1]
        self.n_disp = n_kin_free.shape[0]
        self.dt = dt
        xi = sp.bmat(
            [
                [None, -n_kin_free.T / dt],
                [cal_n_free, a_free],
            ],
            format="csc",
        )
        self.matrix = xi
        self.lu = spla.splu(xi)

    def solve(self, rhs):
        return self.lu.solve(rhs)

    def solve_kappa_block(self, dense_rhs_top):
        """Solve with [rhs_top; 0] right-hand sides, returning the kappa rows."""
        rhs = np.zeros((self.n_scalar + self.n_disp, dense_rhs_top.shape[1]))
        rhs[: self.n_scalar] = dense_rhs_top
        sol = self.lu.solve(rhs)
        return sol[: self.n_scalar]


def recover_curve_unknowns(factor, n_r_free, u_free, rhs4):
    """Back-substitute the curve unknowns after the bulk solve."""
    rhs = np.concatenate([-(n_r_free.T @ u_free), rhs4])
    sol = factor.solve(rhs)
    return sol[: factor.n_scalar], sol[factor.n_scalar :]


def _pressure_projector(num_u, pressure):
    basis = pressure.null_basis

    def project(x):
        out = np.array(x, dtype=float, copy=True)
        p = out[num_u:]
        p -= basis @ (basis.T @ p)
        out[num_u:] = p
        return out

    return project


class SchurOperator:
    """Velocity block with the curve Schur complement folded in."""

    def __init__(self, b_free, c_free, n_r_free, factor, gamma):
        self.b_free = b_free
        self.c_free = c_free
        self.gamma = gamma
        self.num_u = b_free.shape[0]
        self.num_p = c_free.shape[1]
        self.n_r_free = n_r_free.tocsr()
        self.factor = factor
        # The coupling only touches velocity dofs with interface support.
        self.support = np.unique(self.n_r_free.nonzero()[0])

    def explicit_matrix(self):
        """Assemble the Schur-corrected saddle matrix explicitly.

        The curve coupling is local to the interface trace dofs, so the
        correction is a small dense block scattered into the sparse matrix.
        """
        sup = self.support
        if len(sup):
            nr_dense = np.asarray(self.n_r_free[sup].todense())
            y_kappa = self.factor.solve_kappa_block(nr_dense.T)
            correction = self.gamma * nr_dense @ y_kappa  # (|sup|, |sup|)
            rows = np.repeat(sup, len(sup))
            cols = np.tile(sup, len(sup))
            corr = sp.csr_matrix(
                (correction.ravel(), (rows, cols)),
                shape=self.b_free.shape,
            )
            s_block = self.b_free + corr
        else:
            s_block = self.b_free
        return sp.bmat(
            [[s_block, self.c_free], [self.c_free.T, None]], format="csc"
        )

    def rhs_correction(self, rhs4):
        """gamma * N_r [Xi^{-1} (0; rhs4)]_kappa, added to the momentum load."""
        rhs = np.concatenate([np.zeros(self.factor.n_scalar), rhs4])
        sol = self.factor.solve(rhs)
        return self.gamma * (self.n_r_free @ sol[: self.factor.n_scalar])


def pinned_pressure_dofs(pressure, num_u):
    """Two pressure coefficients whose elimination removes both null modes.

    One P1 and one P0 coefficient: the null basis restricted to them is
    nonsingular, so deleting their rows and columns yields an invertible
    system whose solution differs from the projected one only inside the
    null space.
    """
    return np.array([num_u, num_u + pressure.num_vertices])


def make_preconditioner(matrix, pressure, num_u, kind):
    """Factorized preconditioner for the saddle matrix.

    The two exact pressure null directions are removed by pinning one P1
    and one P0 coefficient; bordering with the (dense) null basis instead
    would ruin the factor's sparsity.
    """
    if kind == "none":
        return None
    n = matrix.shape[0]
    pins = pinned_pressure_dofs(pressure, num_u)
    keep = np.setdiff1d(np.arange(n), pins)
    reduced = matrix.tocsr()[keep][:, keep].tocsc()
    if kind == "lu":
        factor = spla.splu(reduced)
    elif kind == "ilu":
        try:
            factor = spla.spilu(reduced, drop_tol=1e-6, fill_factor=40.0)
        except RuntimeError as exc:
            raise SolverError(f"ILU factorization failed: {exc}") from exc
    else:
        raise ValueError(f"unknown preconditioner {kind!r}")

    def solve(x):
        out = np.zeros(n)
        out[keep] = factor.solve(x[keep])
        return out

    return solve


class SaddleSolver:
    """Projected, preconditioned GMRES on an explicit saddle matrix.

    The preconditioner may be carried over from an earlier (nearby) matrix;
    the residual contract is always verified on the current one, and the
    solver refactorizes once and retries if a stale preconditioner stalls.
    """

    def __init__(self, matrix, num_u, pressure, preconditioner="ilu"):
        self.matrix = matrix
        self.num_u = num_u
        self.pressure = pressure
        self.kind = preconditioner
        self.project = _pressure_projector(num_u, pressure)
        self.prec_solve = None

    def ensure_preconditioner(self, reuse_from=None):
        if reuse_from is not None:
            self.prec_solve = reuse_from
        if self.prec_solve is None and self.kind != "none":
            self.prec_solve = make_preconditioner(
                self.matrix, self.pressure, self.num_u, self.kind
            )
        return self.prec_solve

    def solve(
        self,
        rhs,
        x0=None,
        *,
        rtol=1e-10,
        restart=50,
        max_restarts=10,
        contract_residual=1e-9,
    ):
        self.ensure_preconditioner()
        rhs_p = self.project(rhs)
        matvec_count = [0]

        def apply(x):
            matvec_count[0] += 1
            return self.project(self.matrix @ self.project(x))

        lin_op = spla.LinearOperator(self.matrix.shape, matvec=apply)
        m_op = None
        if self.prec_solve is not None:
            m_op = spla.LinearOperator(
                self.matrix.shape, matvec=lambda x: self.project(self.prec_solve(x))
            )
        bnorm = np.linalg.norm(rhs_p)
        if bnorm == 0.0:
            return np.zeros(self.matrix.shape[0]), 0
        for attempt in range(2):
            sol, info = spla.gmres(
                lin_op,
                rhs_p,
                x0=None if x0 is None else self.project(x0),
                rtol=rtol,
                atol=0.0,
                restart=restart,
                maxiter=max_restarts,
                M=m_op,
            )
            sol = self.project(sol)
            res = np.linalg.norm(self.project(self.matrix @ sol) - rhs_p) / bnorm
            if info == 0 and res <= contract_residual:
                return sol, matvec_count[0]
            # Retry once with a freshly built preconditioner.
            self.prec_solve = None
            self.ensure_preconditioner()
            m_op = spla.LinearOperator(
                self.matrix.shape, matvec=lambda x: self.project(self.prec_solve(x))
            )
        raise SolverError(
            f"GMRES did not reach the residual target: rel. residual {res:.3e} "
            f"after {matvec_count[0]} products",
            residual_history=[res],
        )


def solve_schur(
    operator,
    pressure,
    momentum_rhs,
    rhs4,
    *,
    preconditioner="ilu",
    rtol=1e-10,
    restart=50,
    max_restarts=10,
    contract_residual=1e-9,
    saddle_solver=None,
    x0=None,
):
    """Solve the Schur-reduced saddle system; returns (u, p, iterations).

    The right-hand side already contains the bulk load; the curve part rhs4
    is folded in through the factorized curve block.  Passing a prebuilt
    SaddleSolver reuses its matrix and preconditioner.
    """
    num_u = operator.num_u
    num_p = operator.num_p
    if saddle_solver is None:
        saddle_solver = SaddleSolver(
            operator.explicit_matrix(), num_u, pressure, preconditioner
        )
    rhs = np.concatenate(
        [momentum_rhs + operator.rhs_correction(rhs4), np.zeros(num_p)]
    )
    sol, iters = saddle_solver.solve(
        rhs,
        x0=x0,
        rtol=rtol,
        restart=restart,
        max_restarts=max_restarts,
        contract_residual=contract_residual,
    )
    return sol[:num_u], sol[num_u:], iters


def solve_monolithic(b_free, c_free, n_r_free, n_kin_free, cal_n_free, a_free,
                     dt, gamma, pressure, momentum_rhs, rhs4):
    """Direct sparse factorization of the full four-row block system.

    The two pressure null directions are removed by pinning one P1 and one
    P0 coefficient; the caller projects the pressure onto the canonical
    mean-zero representative, so the result matches the Krylov path.
    """
    num_u = b_free.shape[0]
    num_p = c_free.shape[1]
    num_k = n_r_free.shape[1]
    num_x = a_free.shape[0]
    system = sp.bmat(
        [
            [b_free, c_free, -gamma * n_r_free, None],
            [c_free.T, None, None, None],
            [n_r_free.T, None, None, -n_kin_free.T / dt],
            [None, None, cal_n_free, a_free],
        ],
        format="csr",
    )
    total = num_u + num_p + num_k + num_x
    pins = pinned_pressure_dofs(pressure, num_u)
    keep = np.setdiff1d(np.arange(total), pins)
    rhs = np.concatenate([momentum_rhs, np.zeros(num_p), np.zeros(num_k), rhs4])
    sol = np.zeros(total)
    sol[keep] = spla.splu(system[keep][:, keep].tocsc()).solve(rhs[keep])
    u = sol[:num_u]
    p = sol[num_u : num_u + num_p]
    kappa = sol[num_u + num_p : num_u + num_p + num_k]
    delta_x = sol[num_u + num_p + num_k :]
    return u, p, kappa, delta_x


def write_matrix_market(path, matrix):
    """Dump a sparse matrix in MatrixMarket coordinate format."""
    from scipy.io import mmwrite

    mmwrite(str(path), matrix.tocoo())
