"""Bulk matrix blocks and right-hand sides of the coupled step system.

All blocks are assembled on the unconstrained degrees of freedom with the
single degree-5 quadrature rule; the solver layer restricts them to the
free index sets.  Velocity vectors are component-blocked: [u_r, u_z].
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .curve import GAUSS3_POINTS, GAUSS3_WEIGHTS
from .errors import TimeStepError
from .fem import (
    TRI_QPOINTS,
    TRI_QWEIGHTS,
    p1_shape,
    p2_shape,
    p2_vector_values_at_quad,
)


def phase_coefficients(mesh, minus_value, plus_value):
    """Per-triangle coefficient from the phase labels."""
    return np.where(mesh.phase < 0, minus_value, plus_value).astype(float)


def _scatter_blocks(space, blocks):
    """Assemble a 2n x 2n sparse matrix from local (T, 6, 6) blocks.

    blocks maps (row_component, col_component) -> local matrices.
    """
    n = space.num_dofs
    dofs = space.tri_dofs
    rows, cols, vals = [], [], []
    rep_rows = np.repeat(dofs, 6, axis=1).ravel()
    rep_cols = np.tile(dofs, (1, 6)).ravel()
    for (rc, cc), loc in blocks.items():
        rows.append(rep_rows + rc * n)
        cols.append(rep_cols + cc * n)
        vals.append(loc.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n, 2 * n),
    )


def assemble_mass(geo, space, coeff_elem, extra_weight_at_quad=None):
    """Radially weighted vector mass matrix (coeff u, chi r).

    extra_weight_at_quad optionally multiplies the integrand pointwise (used
    by the conservative transport term).
    """
    shp = p2_shape(TRI_QPOINTS)
    w = TRI_QWEIGHTS[None, :] * geo.det[:, None] * coeff_elem[:, None]
    if extra_weight_at_quad is None:
        w = w * geo.qradii
    else:
        w = w * extra_weight_at_quad
    loc = np.einsum("tq,iq,jq->tij", w, shp, shp)
    return _scatter_blocks(space, {(0, 0): loc, (1, 1): loc})


def assemble_viscous(geo, space, mu_elem):
    """Viscous block 2(mu r D(u), D(chi)) + 2(mu/r u_r, chi_r)."""
    grads = geo.p2_physical_grads()  # (T, 6, Q, 2)
    shp = p2_shape(TRI_QPOINTS)
    wr = TRI_QWEIGHTS[None, :] * geo.det[:, None] * mu_elem[:, None] * geo.qradii
    gr = grads[:, :, :, 0]
    gz = grads[:, :, :, 1]
    loc_rr = np.einsum("tq,tiq,tjq->tij", wr, 2.0 * gr, gr) + np.einsum(
        "tq,tiq,tjq->tij", wr, gz, gz
    )
    loc_zz = np.einsum("tq,tiq,tjq->tij", wr, 2.0 * gz, gz) + np.einsum(
        "tq,tiq,tjq->tij", wr, gr, gr
    )
    # row: r-component test, col: z-component trial
    loc_rz = np.einsum("tq,tiq,tjq->tij", wr, gz, gr)
    loc_zr = np.transpose(loc_rz, (0, 2, 1))
    # axisymmetric extra term on the radial block
    w_over_r = (
        TRI_QWEIGHTS[None, :] * geo.det[:, None] * mu_elem[:, None] / geo.qradii
    )
    loc_rr += 2.0 * np.einsum("tq,iq,jq->tij", w_over_r, shp, shp)
    return _scatter_blocks(
        space,
        {(0, 0): loc_rr, (1, 1): loc_zz, (0, 1): loc_rz, (1, 0): loc_zr},
    )


def assemble_advection(geo, space, rho_elem, wind_at_quad):
    """Antisymmetrized advection for a given wind field sampled at quadrature points.

    Returns (1/2)(G - G^T) where G[i, j] = (rho (wind . grad) phi_j, phi_i r);
    the quadratic form of the result vanishes identically.
    """
    grads = geo.p2_physical_grads()
    shp = p2_shape(TRI_QPOINTS)
    w = TRI_QWEIGHTS[None, :] * geo.det[:, None] * rho_elem[:, None] * geo.qradii
    conv = np.einsum("tjqc,tqc->tjq", grads, wind_at_quad)  # (wind.grad phi_j)
    g = np.einsum("tq,iq,tjq->tij", w, shp, conv)
    loc = 0.5 * (g - np.transpose(g, (0, 2, 1)))
    return _scatter_blocks(space, {(0, 0): loc, (1, 1): loc})


def assemble_divergence(geo, space, pressure):
    """Velocity-pressure block C with C[i, j] = -(q_j, div[r chi_i]).

    Its transpose expresses the incompressibility rows (div[r U], q) = 0.
    """
    grads = geo.p2_physical_grads()
    shp = p2_shape(TRI_QPOINTS)
    p1 = p1_shape(TRI_QPOINTS)
    wdet = TRI_QWEIGHTS[None, :] * geo.det[:, None]
    n = space.num_dofs
    div_r = shp[None, :, :] + geo.qradii[:, None, :] * grads[:, :, :, 0]
    div_z = geo.qradii[:, None, :] * grads[:, :, :, 1]
    rows, cols, vals = [], [], []
    tri_dofs = space.tri_dofs
    tri_p1 = pressure.mesh.triangles.astype(np.int64)
    for comp, div in ((0, div_r), (1, div_z)):
        loc1 = -np.einsum("tq,tiq,jq->tij", wdet, div, p1)  # (T, 6, 3)
        rows.append((np.repeat(tri_dofs, 3, axis=1) + comp * n).ravel())
        cols.append(np.tile(tri_p1, (1, 6)).ravel())
        vals.append(loc1.ravel())
        loc0 = -np.einsum("tq,tiq->ti", wdet, div)  # (T, 6)
        rows.append((tri_dofs + comp * n).ravel())
        cols.append(
            np.repeat(
                pressure.num_vertices + np.arange(pressure.num_triangles), 6
            ).reshape(-1, 6).ravel()
        )
        vals.append(loc0.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n, pressure.num_dofs),
    )


def assemble_gravity(geo, space, rho_elem, gravity):
    """Body-force load (rho g, chi r)."""
    shp = p2_shape(TRI_QPOINTS)
    w = TRI_QWEIGHTS[None, :] * geo.det[:, None] * rho_elem[:, None] * geo.qradii
    base = np.einsum("tq,iq->ti", w, shp)
    n = space.num_dofs
    out = np.zeros(2 * n)
    np.add.at(out[:n], space.tri_dofs, gravity[0] * base)
    out_z = out[n:]
    np.add.at(out_z, space.tri_dofs, gravity[1] * base)
    return out


def inertia_rhs_nonconservative(geo, space, rho_elem, dt, u_old_coeffs, step):
    """Explicit inertia load with the square-root transport weight.

    Raises TimeStepError if the weight under the square root is negative
    anywhere (time step too large for the mesh motion).
    """
    sqrt_factor = step.sqrt_mass_factor_at_quad()
    u_vals = p2_vector_values_at_quad(space, u_old_coeffs)  # (T, Q, 2)
    shp = p2_shape(TRI_QPOINTS)
    w = (
        TRI_QWEIGHTS[None, :]
        * geo.det[:, None]
        * rho_elem[:, None]
        * geo.qradii
        / dt
    )
    n = space.num_dofs
    out = np.zeros(2 * n)
    for comp in range(2):
        loc = np.einsum("tq,tq,iq->ti", w * sqrt_factor, u_vals[:, :, comp], shp)
        seg = out[:n] if comp == 0 else out[n:]
        np.add.at(seg, space.tri_dofs, loc)
    return out


def inertia_rhs_conservative(old_geo, space, rho_old_elem, dt, u_old_coeffs):
    """Old-mesh pairing (rho^{m-1} U^m, chi r) / dt.

    Test functions ride back onto the previous mesh with unchanged
    coefficients, so this is an old-geometry mass product.
    """
    mass_old = assemble_mass(old_geo, space, rho_old_elem)
    return mass_old @ u_old_coeffs / dt


def assemble_transport_matrix(geo, space, rho_elem, step, dt):
    """Conservative transport block: the time-integrated divergence term.

    Equals a mass-type matrix weighted by the exact time integral of the
    transported volume form, divided by 2 dt.
    """
    weight = step.gcl_weight_at_quad("simpson") / (2.0 * dt)
    return assemble_mass(geo, space, rho_elem, extra_weight_at_quad=weight)


def check_positivity(step):
    fac = step.mass_factor_at_quad()
    if fac.min() < 0.0:
        raise TimeStepError(
            f"time step too large: transport weight minimum {fac.min():.3e}"
        )


def assemble_momentum(geo, space, rho_elem, mu_elem, dt, wind_at_quad,
                      u_old_coeffs, step, conservative):
    """Momentum block and explicit inertia load for either inertia variant.

    Nonconservative: radially weighted mass plus the square-root-weighted
    explicit inertia; conservative: plain mass minus the time-integrated
    transport matrix, with the old-mesh pairing as the load.  Both share the
    antisymmetric advection and the viscous + axisymmetric terms.
    """
    viscous = assemble_viscous(geo, space, mu_elem)
    advection = assemble_advection(geo, space, rho_elem, wind_at_quad)
    mass = assemble_mass(geo, space, rho_elem)
    if conservative:
        transport = assemble_transport_matrix(geo, space, rho_elem, step, dt)
        b_matrix = mass / dt - transport + advection + viscous
        inertia = inertia_rhs_conservative(
            step.old_geometry, space, rho_elem, dt, u_old_coeffs
        )
    else:
        b_matrix = mass / dt + advection + viscous
        inertia = inertia_rhs_nonconservative(
            geo, space, rho_elem, dt, u_old_coeffs, step
        )
    return b_matrix, inertia, viscous


def _edge_trace_shapes(ts):
    """P2 trace shapes along an interface edge at local coordinates ts.

    Order: start vertex, end vertex, midpoint node.
    """
    ts = np.asarray(ts)
    return np.stack(
        [(1.0 - ts) * (1.0 - 2.0 * ts), ts * (2.0 * ts - 1.0), 4.0 * ts * (1.0 - ts)]
    )


def interface_edge_dofs(mesh, space):
    """(J, 3) P2 dof indices per interface segment: start, end, midpoint."""
    iv = mesh.interface_vertices
    out = np.empty((iv.shape[0] - 1, 3), dtype=np.int64)
    out[:, 0] = iv[:-1]
    out[:, 1] = iv[1:]
    for j in range(iv.shape[0] - 1):
        out[j, 2] = space.edge_dof(int(iv[j]), int(iv[j + 1]))
    return out


def assemble_interface_coupling(mesh, space, curve, field=None):
    """Coupling of bulk velocity traces with curve scalars.

    Plain mode pairs through the segment normal: entries
    <(X . e1) zeta_j, (nu . chi_i) |X_alpha|>; with a time-weighted field the
    pairing becomes <zeta_j, chi_i . f>.  Returns a (2n, J+1) sparse matrix.
    """
    ts = GAUSS3_POINTS
    trace = _edge_trace_shapes(ts)  # (3, Q)
    hats = np.stack([1.0 - ts, ts])  # (2, Q)
    n = space.num_dofs
    nseg = curve.num_segments
    if field is None:
        r_gauss = (1.0 - ts)[None, :] * curve.nodes[:-1, 0][:, None] + ts[
            None, :
        ] * curve.nodes[1:, 0][:, None]
        weight = r_gauss[:, :, None] * (
            curve.normals * curve.seg_len_alpha[:, None]
        )[:, None, :]
    else:
        weight = field.values_at(ts)  # (J, Q, 2)
    edofs = interface_edge_dofs(mesh, space)
    rows, cols, vals = [], [], []
    for comp in range(2):
        # loc[j, a, b]: trace shape a against curve hat b on segment j
        loc = curve.h * np.einsum(
            "q,aq,bq,jq->jab", GAUSS3_WEIGHTS, trace, hats, weight[:, :, comp]
        )
        rows.append(np.repeat(edofs, 2, axis=1).ravel() + comp * n)
        seg_nodes = np.column_stack([np.arange(nseg), np.arange(1, nseg + 1)])
        cols.append(np.tile(seg_nodes, (1, 3)).ravel())
        vals.append(loc.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n, curve.num_nodes),
    )


def assemble_sphere_rhs(mesh, space, curve):
    """Known surface-tension load of the equidistributing momentum row.

    Entries <nu . e1, (nu . chi_i) |X_alpha|>; the gamma factor is applied by
    the caller.
    """
    ts = GAUSS3_POINTS
    trace = _edge_trace_shapes(ts)
    edofs = interface_edge_dofs(mesh, space)
    n = space.num_dofs
    out = np.zeros(2 * n)
    nu_r = curve.normals[:, 0]
    seg_w = curve.h * curve.seg_len_alpha * nu_r  # per segment
    shape_int = trace @ GAUSS3_WEIGHTS  # (3,)
    for comp in range(2):
        contrib = seg_w[:, None] * curve.normals[:, comp][:, None] * shape_int[None, :]
        seg = out[: n] if comp == 0 else out[n:]
        np.add.at(seg, edofs, contrib)
    return out
