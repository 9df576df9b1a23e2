"""Mesh motion: elastic displacement, discrete ALE maps and their Jacobians.

The bulk mesh follows the interface through an elastic solve for a vertex
displacement field; the induced mesh velocity defines per-element affine
maps between consecutive meshes whose transport identities (the discrete
geometric conservation law) are exposed for verification.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AxiflowError, TimeStepError
from .fem import MeshGeometry, TRI_QPOINTS, TRI_QWEIGHTS, p1_shape

GAUSS10_POINTS, GAUSS10_WEIGHTS = np.polynomial.legendre.leggauss(10)


def element_stiffness_lambda(mesh):
    """Per-element elastic coefficient 1 + (max|o| - min|o|) / |o|."""
    geo = mesh.geometry()
    areas = geo.areas
    return 1.0 + (areas.max() - areas.min()) / areas


def _p1_vector_free_and_fixed(mesh, interface_disp):
    """Constraint bookkeeping for the elastic solve.

    All boundary vertices keep their normal component fixed at zero (they
    may slide along their side); interface vertices carry the prescribed
    displacement in both components.
    """
    k = mesh.vertices.shape[0]
    fixed = np.zeros(2 * k, dtype=bool)
    values = np.zeros(2 * k)
    # Every boundary vertex is pinned in the direction normal to its side;
    # corners sit on two sides and lose both components.
    tol = 1e-9 * mesh.domain.diameter
    vx = mesh.vertices[:, 0]
    vz = mesh.vertices[:, 1]
    on_vertical = (np.abs(vx) <= tol) | (np.abs(vx - mesh.domain.rmax) <= tol)
    on_horizontal = (np.abs(vz - mesh.domain.zmin) <= tol) | (
        np.abs(vz - mesh.domain.zmax) <= tol
    )
    boundary_vertices = set(
        int(v)
        for v in np.concatenate(
            [
                mesh.axis_edges.ravel(),
                mesh.freeslip_edges.ravel(),
                mesh.noslip_edges.ravel(),
            ]
        )
    )
    for v in boundary_vertices:
        if on_vertical[v]:
            fixed[v] = True
        if on_horizontal[v]:
            fixed[v + k] = True
    iv = mesh.interface_vertices
    fixed[iv] = True
    fixed[iv + k] = True
    values[iv] = interface_disp[:, 0]
    values[iv + k] = interface_disp[:, 1]
    return fixed, values


def elastic_displacement(mesh, interface_disp):
    """Solve the elastic mesh equation for the vertex displacement field.

    interface_disp holds the prescribed (J+1, 2) displacements of the curve
    nodes; the result is a (K, 2) array over all mesh vertices.  The
    bilinear form 2(lambda D(psi), D(chi)) + (lambda div psi, div chi) uses
    plain 2d inner products.
    """
    geo = mesh.geometry()
    lam = element_stiffness_lambda(mesh)
    grads = geo.p1_physical_grads()  # (T, 3, 2)
    w = lam * geo.areas
    gr = grads[:, :, 0]
    gz = grads[:, :, 1]
    k = mesh.vertices.shape[0]
    # Component blocks of 2(lam D(u), D(v)) + (lam div u, div v).
    loc_rr = w[:, None, None] * (
        3.0 * gr[:, :, None] * gr[:, None, :] + gz[:, :, None] * gz[:, None, :]
    )
    loc_zz = w[:, None, None] * (
        gr[:, :, None] * gr[:, None, :] + 3.0 * gz[:, :, None] * gz[:, None, :]
    )
    # test r-component (row), trial z-component (col)
    loc_rz = w[:, None, None] * (
        gz[:, :, None] * gr[:, None, :] + gr[:, :, None] * gz[:, None, :]
    )
    tri = mesh.triangles.astype(np.int64)
    rows, cols, vals = [], [], []
    for loc, ro, co in (
        (loc_rr, 0, 0),
        (loc_zz, k, k),
        (loc_rz, 0, k),
        (np.transpose(loc_rz, (0, 2, 1)), k, 0),
    ):
        rows.append(np.repeat(tri, 3, axis=1).ravel() + ro)
        cols.append(np.tile(tri, (1, 3)).ravel() + co)
        vals.append(loc.ravel())
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * k, 2 * k),
    )
    fixed, values = _p1_vector_free_and_fixed(mesh, np.asarray(interface_disp, float))
    free = np.flatnonzero(~fixed)
    rhs = -mat[free][:, np.flatnonzero(fixed)] @ values[fixed]
    try:
        sol_free = spla.spsolve(mat[free][:, free].tocsc(), rhs)
    except RuntimeError as exc:  # pragma: no cover - singular only if mesh broken
        raise AxiflowError(f"elastic mesh solve failed: {exc}") from exc
    psi = values.copy()
    psi[free] = sol_free
    return np.column_stack([psi[:k], psi[k:]])


def elastic_energy(mesh, psi):
    """Energy functional of a displacement field under the elastic form."""
    geo = mesh.geometry()
    lam = element_stiffness_lambda(mesh)
    grads = geo.p1_physical_grads()
    g = np.einsum("tic,tid->tcd", grads, psi[mesh.triangles])  # d_c psi_d
    dsym = 0.5 * (g + np.transpose(g, (0, 2, 1)))
    div = g[:, 0, 0] + g[:, 1, 1]
    dens = 2.0 * np.einsum("tcd,tcd->t", dsym, dsym) + div**2
    return float(np.sum(lam * geo.areas * dens))


class AleStep:
    """Affine maps connecting the current mesh to the previous one.

    Built on the current mesh T^m with the mesh velocity W^m; the map
    id - (t_m - t) W^m carries T^m back to T^{m-1} as t runs to t_{m-1}.
    """

    def __init__(self, mesh, w_nodal, dt):
        self.mesh = mesh
        self.w_nodal = np.asarray(w_nodal, dtype=float)
        self.dt = float(dt)
        self.geometry = mesh.geometry()
        grads = self.geometry.p1_physical_grads()  # (T, 3, 2)
        # grad_w[t, c, d] = d_c W_d on element t
        self.grad_w = np.einsum("tic,tid->tcd", grads, self.w_nodal[mesh.triangles])
        self.trace_w = self.grad_w[:, 0, 0] + self.grad_w[:, 1, 1]
        self.det_grad_w = (
            self.grad_w[:, 0, 0] * self.grad_w[:, 1, 1]
            - self.grad_w[:, 0, 1] * self.grad_w[:, 1, 0]
        )
        self.jacobian = 1.0 - dt * self.trace_w + dt * dt * self.det_grad_w
        shp = p1_shape(TRI_QPOINTS)
        self.w_at_quad = np.einsum(
            "tic,iq->tqc", self.w_nodal[mesh.triangles], shp
        )
        old_vertices = mesh.vertices - dt * self.w_nodal
        self.old_geometry = MeshGeometry(old_vertices, mesh.triangles)

    @property
    def has_valid_maps(self):
        return bool((self.jacobian > 0.0).all())

    def require_valid(self):
        if not self.has_valid_maps:
            raise TimeStepError(
                "element inversion during the mesh move: reduce the time step "
                "or remesh"
            )

    def mass_factor_at_quad(self):
        """The pointwise factor (1 - dt * W_r / r) * J at quadrature points."""
        r = self.geometry.qradii
        return (1.0 - self.dt * self.w_at_quad[:, :, 0] / r) * self.jacobian[:, None]

    def sqrt_mass_factor_at_quad(self):
        fac = self.mass_factor_at_quad()
        if fac.min() < 0.0:
            raise TimeStepError(
                f"time step too large: the inertia weight turned negative "
                f"({fac.min():.3e})"
            )
        return np.sqrt(fac)

    def dF_dt_at_quad(self, t_values):
        """d/dt of det(G) * (A[t] . e1) at quadrature points, per time value.

        With s = t_m - t the product F(s) = (1 - s a + s^2 b)(r - s w) is
        cubic in s; returns an array (len(t_values), T, Q).
        """
        r = self.geometry.qradii
        w = self.w_at_quad[:, :, 0]
        a = self.trace_w[:, None]
        b = self.det_grad_w[:, None]
        out = np.empty((len(t_values), r.shape[0], r.shape[1]))
        for i, t in enumerate(t_values):
            s = self.dt - t  # t measured from t_{m-1}; s = t_m - t
            dF_ds = (-a + 2.0 * s * b) * (r - s * w) - (
                1.0 - s * a + s * s * b
            ) * w
            out[i] = -dF_ds
        return out

    def gcl_weight_at_quad(self, rule="simpson"):
        """Time integral of d/dt{det G (A . e1)} at quadrature points.

        Simpson is exact here (the integrand is quadratic in t); the
        10-point Gauss variant exists to verify that claim numerically.
        """
        if rule == "simpson":
            ts = np.array([0.0, 0.5 * self.dt, self.dt])
            tw = self.dt * np.array([1.0, 4.0, 1.0]) / 6.0
        elif rule == "gauss10":
            ts = 0.5 * self.dt * (GAUSS10_POINTS + 1.0)
            tw = 0.5 * self.dt * GAUSS10_WEIGHTS
        else:
            raise ValueError(f"unknown time rule {rule!r}")
        vals = self.dF_dt_at_quad(ts)
        return np.einsum("i,itq->tq", tw, vals)


def jacobian_identity_check(step, values_at_quad, signs=None):
    """Both sides of the discrete transport identity for a sampled field.

    values_at_quad holds the field at the current mesh's quadrature points;
    the pull-back to the previous mesh evaluates the same element-wise values
    at the corresponding mapped points.  Optional `signs` restricts to a
    subset of elements (e.g. one phase) via a 0/1 mask.
    """
    geo = step.geometry
    old = step.old_geometry
    mask = np.ones(geo.det.shape[0]) if signs is None else np.asarray(signs, float)
    wq = TRI_QWEIGHTS[None, :]
    r_new = geo.qradii
    w_r = step.w_at_quad[:, :, 0]
    lhs = float(
        np.sum(
            mask[:, None]
            * wq
            * geo.det[:, None]
            * values_at_quad
            * (r_new - step.dt * w_r)
            * step.jacobian[:, None]
        )
    )
    rhs = float(
        np.sum(mask[:, None] * wq * old.det[:, None] * values_at_quad * old.qradii)
    )
    return lhs, rhs


def gcl_time_integral(step, values_at_quad, rule="simpson", signs=None):
    """Time-integrated transport term for a sampled field."""
    geo = step.geometry
    mask = np.ones(geo.det.shape[0]) if signs is None else np.asarray(signs, float)
    weight = step.gcl_weight_at_quad(rule)
    return float(
        np.sum(
            mask[:, None]
            * TRI_QWEIGHTS[None, :]
            * geo.det[:, None]
            * values_at_quad
            * weight
        )
    )


def advect_coefficients(coeffs, old_space, new_space):
    """Carry finite element coefficients across the mesh move.

    The affine maps send vertices to vertices and edge midpoints to edge
    midpoints, so the transported function keeps its coefficient vector.
    """
    if old_space.num_dofs != new_space.num_dofs or not np.array_equal(
        old_space.tri_dofs, new_space.tri_dofs
    ):
        raise AxiflowError("mesh connectivity changed; cannot advect coefficients")
    return np.array(coeffs, dtype=float, copy=True)
