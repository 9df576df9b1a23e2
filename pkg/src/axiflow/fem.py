"""Finite element spaces and quadrature on the fitted triangulation.

Velocity uses quadratic (P2) vector elements with degrees of freedom at
vertices and edge midpoints; pressure uses the enriched P1+P0 pair that can
represent the jump across the interface.  All bulk integrals use a single
7-point rule that integrates degree-5 polynomials exactly and whose points
are strictly interior, so radial weights r and 1/r are always evaluated at
r > 0.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

_SQRT15 = np.sqrt(15.0)

# Degree-5 rule on the reference triangle {x, y >= 0, x + y <= 1}; weights
# sum to the reference area 1/2 and every point is interior.
TRI_QPOINTS = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0],
        [(6.0 - _SQRT15) / 21.0, (6.0 - _SQRT15) / 21.0],
        [(9.0 + 2.0 * _SQRT15) / 21.0, (6.0 - _SQRT15) / 21.0],
        [(6.0 - _SQRT15) / 21.0, (9.0 + 2.0 * _SQRT15) / 21.0],
        [(6.0 + _SQRT15) / 21.0, (6.0 + _SQRT15) / 21.0],
        [(9.0 - 2.0 * _SQRT15) / 21.0, (6.0 + _SQRT15) / 21.0],
        [(6.0 + _SQRT15) / 21.0, (9.0 - 2.0 * _SQRT15) / 21.0],
    ]
)
TRI_QWEIGHTS = 0.5 * np.array(
    [9.0 / 40.0]
    + [(155.0 - _SQRT15) / 1200.0] * 3
    + [(155.0 + _SQRT15) / 1200.0] * 3
)


def p2_shape(points):
    """P2 shape functions at reference points, shape (6, npts).

    Local nodes: 0,1,2 the vertices; 3,4,5 the midpoints of edges (1,2),
    (2,0), (0,1).
    """
    x = points[:, 0]
    y = points[:, 1]
    l0 = 1.0 - x - y
    l1 = x
    l2 = y
    return np.stack(
        [
            l0 * (2.0 * l0 - 1.0),
            l1 * (2.0 * l1 - 1.0),
            l2 * (2.0 * l2 - 1.0),
            4.0 * l1 * l2,
            4.0 * l2 * l0,
            4.0 * l0 * l1,
        ]
    )


def p2_grad(points):
    """Reference gradients of the P2 shapes, shape (6, npts, 2)."""
    x = points[:, 0]
    y = points[:, 1]
    l0 = 1.0 - x - y
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    g = np.empty((6, len(x), 2))
    g[0, :, 0] = 1.0 - 4.0 * l0
    g[0, :, 1] = 1.0 - 4.0 * l0
    g[1, :, 0] = 4.0 * x - 1.0
    g[1, :, 1] = zero
    g[2, :, 0] = zero
    g[2, :, 1] = 4.0 * y - 1.0
    g[3, :, 0] = 4.0 * y
    g[3, :, 1] = 4.0 * x
    g[4, :, 0] = -4.0 * y
    g[4, :, 1] = 4.0 * (l0 - y)
    g[5, :, 0] = 4.0 * (l0 - x)
    g[5, :, 1] = -4.0 * x
    del one
    return g


def p1_shape(points):
    """P1 shape functions at reference points, shape (3, npts)."""
    x = points[:, 0]
    y = points[:, 1]
    return np.stack([1.0 - x - y, x, y])


P1_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


class MeshGeometry:
    """Per-element affine geometry of a triangulation snapshot."""

    def __init__(self, vertices, triangles):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int32)
        v0 = self.vertices[self.triangles[:, 0]]
        v1 = self.vertices[self.triangles[:, 1]]
        v2 = self.vertices[self.triangles[:, 2]]
        self.jac = np.stack([v1 - v0, v2 - v0], axis=2)  # (T, 2, 2) columns
        self.det = (
            self.jac[:, 0, 0] * self.jac[:, 1, 1]
            - self.jac[:, 0, 1] * self.jac[:, 1, 0]
        )
        inv = np.empty_like(self.jac)
        inv[:, 0, 0] = self.jac[:, 1, 1]
        inv[:, 0, 1] = -self.jac[:, 0, 1]
        inv[:, 1, 0] = -self.jac[:, 1, 0]
        inv[:, 1, 1] = self.jac[:, 0, 0]
        self.inv_jac = inv / self.det[:, None, None]
        self.v0 = v0
        # Physical quadrature points and radii, (T, Q, 2) and (T, Q).
        self.qpoints = v0[:, None, :] + np.einsum(
            "tab,qb->tqa", self.jac, TRI_QPOINTS
        )
        self.qradii = self.qpoints[:, :, 0]
        self.areas = 0.5 * self.det

    def p2_physical_grads(self):
        """Physical gradients of the P2 basis, shape (T, 6, Q, 2)."""
        ref = p2_grad(TRI_QPOINTS)  # (6, Q, 2)
        return np.einsum("iqb,tba->tiqa", ref, self.inv_jac)

    def p1_physical_grads(self):
        """Physical gradients of the P1 basis, shape (T, 3, 2)."""
        return np.einsum("ib,tba->tia", P1_GRAD, self.inv_jac)


class P2Space:
    """Scalar quadratic space: vertex + edge-midpoint degrees of freedom."""

    def __init__(self, mesh):
        self.mesh = mesh
        tris = mesh.triangles
        num_vertices = mesh.vertices.shape[0]
        edges = {}
        # Local edge e of a triangle is opposite local vertex e.
        local_edges = ((1, 2), (2, 0), (0, 1))
        tri_dofs = np.empty((tris.shape[0], 6), dtype=np.int64)
        tri_dofs[:, :3] = tris
        edge_list = []
        for t in range(tris.shape[0]):
            for le, (a, b) in enumerate(local_edges):
                key = (min(tris[t, a], tris[t, b]), max(tris[t, a], tris[t, b]))
                idx = edges.get(key)
                if idx is None:
                    idx = len(edge_list)
                    edges[key] = idx
                    edge_list.append(key)
                tri_dofs[t, 3 + le] = num_vertices + idx
        self.edge_index = edges
        self.edges = np.array(edge_list, dtype=np.int64).reshape(-1, 2)
        self.tri_dofs = tri_dofs
        self.num_vertices = num_vertices
        self.num_dofs = num_vertices + len(edge_list)
        self.dof_points = np.vstack(
            [
                mesh.vertices,
                0.5
                * (
                    mesh.vertices[self.edges[:, 0]]
                    + mesh.vertices[self.edges[:, 1]]
                ),
            ]
        )

    def edge_dof(self, a, b):
        return self.num_vertices + self.edge_index[(min(a, b), max(a, b))]

    def values_at_quad(self, coeffs):
        """Scalar P2 function values at all quadrature points, (T, Q)."""
        shp = p2_shape(TRI_QPOINTS)  # (6, Q)
        return np.einsum("ti,iq->tq", coeffs[self.tri_dofs], shp)

    def interpolate(self, fn):
        """Nodal interpolation of a callable fn(r, z)."""
        pts = self.dof_points
        return fn(pts[:, 0], pts[:, 1])


class PressureSpace:
    """P1 + P0 pressure space with the weighted mean-zero constraint.

    Coefficients are laid out as [vertex P1 values, per-triangle P0 values].
    The representation is redundant: adding a constant to the P1 part and
    subtracting it from the P0 part leaves the function unchanged, and the
    constant function itself must be removed by the (r, p) = 0 constraint.
    Both directions are handled by projection at the solver level.
    """

    def __init__(self, mesh, geometry):
        self.mesh = mesh
        self.num_vertices = mesh.vertices.shape[0]
        self.num_triangles = mesh.triangles.shape[0]
        self.num_dofs = self.num_vertices + self.num_triangles
        shp = p1_shape(TRI_QPOINTS)  # (3, Q)
        wdet = TRI_QWEIGHTS[None, :] * geometry.det[:, None]
        # Radial moments (r, basis) of the P1 and P0 parts.
        mom1 = np.zeros(self.num_vertices)
        contrib = np.einsum("tq,iq,tq->ti", wdet, shp, geometry.qradii)
        np.add.at(mom1, mesh.triangles, contrib)
        mom0 = np.einsum("tq,tq->t", wdet, geometry.qradii)
        self.radial_moment = np.concatenate([mom1, mom0])
        kernel = np.concatenate(
            [np.ones(self.num_vertices), -np.ones(self.num_triangles)]
        )
        # Orthonormal basis of the directions removed from pressure space:
        # the coefficient-redundancy kernel and the constant mode (the latter
        # taken relative to the (r, .) moment so that (r, p) = 0 holds).
        q1 = kernel / np.linalg.norm(kernel)
        q2 = self.radial_moment - q1 * (q1 @ self.radial_moment)
        q2 /= np.linalg.norm(q2)
        self.null_basis = np.column_stack([q1, q2])

    def project(self, coeffs):
        """Orthogonal projection used inside the Krylov solve.

        Removes the redundancy direction and the radial-moment normal, so
        solutions of the projected system satisfy (r, p) = 0 exactly.
        """
        q = self.null_basis
        return coeffs - q @ (q.T @ coeffs)

    def normalize(self, coeffs):
        """Gauge-fix a pressure along the null space of the saddle operator.

        Any solver may return the canonical representative plus a multiple
        of the coefficient-redundancy kernel and of the constant function;
        both are removed so that (r, p) = 0 and the kernel component is
        zero.  Unlike `project`, this never alters the represented function
        beyond a constant.
        """
        kernel = np.concatenate(
            [np.ones(self.num_vertices), -np.ones(self.num_triangles)]
        )
        const = np.concatenate(
            [np.ones(self.num_vertices), np.zeros(self.num_triangles)]
        )
        m = self.radial_moment
        b = (m @ coeffs) / (m @ const)
        out = coeffs - b * const
        a = (kernel @ out) / (kernel @ kernel)
        return out - a * kernel

    def values_at_quad(self, coeffs):
        shp = p1_shape(TRI_QPOINTS)
        p1 = np.einsum("ti,iq->tq", coeffs[self.mesh.triangles], shp)
        return p1 + coeffs[self.num_vertices :][:, None]

    def weighted_mean(self, coeffs):
        """The constraint functional (r, p)."""
        return float(self.radial_moment @ coeffs)


class VelocitySpace:
    """Constrained P2 vector space, component-blocked layout [u_r, u_z].

    Constraints are eliminated, not penalized: no-slip nodes lose both
    components, free-slip wall and axis nodes lose the radial component.
    """

    def __init__(self, mesh, scalar_space):
        self.scalar = scalar_space
        self.mesh = mesh
        n = scalar_space.num_dofs
        self.num_dofs = 2 * n
        noslip = self._nodes_on(mesh.noslip_edges)
        freeslip = self._nodes_on(mesh.freeslip_edges)
        axis = self._nodes_on(mesh.axis_edges)
        fixed = np.zeros(2 * n, dtype=bool)
        fixed[list(noslip)] = True
        fixed[[i + n for i in noslip]] = True
        fixed[list(freeslip | axis)] = True
        self.fixed_mask = fixed
        self.free_dofs = np.flatnonzero(~fixed)
        self.noslip_nodes = noslip
        self.freeslip_nodes = freeslip
        self.axis_nodes = axis

    def _nodes_on(self, edge_array):
        nodes = set()
        for a, b in edge_array:
            nodes.add(int(a))
            nodes.add(int(b))
            nodes.add(self.scalar.edge_dof(int(a), int(b)))
        return nodes

    def zero_fixed(self, vec):
        out = np.array(vec, dtype=float, copy=True)
        out[self.fixed_mask] = 0.0
        return out


def apply_constraints(matrix, rhs, free_dofs):
    """Reduce an assembled system to the free degrees of freedom.

    Only homogeneous Dirichlet data occurs here, so the right-hand side is
    simply restricted.
    """
    reduced = matrix.tocsr()[free_dofs][:, free_dofs]
    return reduced, rhs[free_dofs]


def scatter_free(values, free_dofs, size):
    out = np.zeros(size)
    out[free_dofs] = values
    return out


def integrate(geometry, values_at_quad, weight="1", debug=False):
    """Integral over the mesh of per-quadrature-point values.

    weight "r" multiplies by the radius, "1/r" divides; the quadrature
    points are interior so the division is always well defined.  With
    debug=True the 1/r weight additionally checks that the integrand decays
    toward the axis (the contract for this weight is that both factors
    vanish there).
    """
    w = TRI_QWEIGHTS[None, :] * geometry.det[:, None]
    if weight == "r":
        w = w * geometry.qradii
    elif weight == "1/r":
        if debug:
            _check_axis_decay(geometry, values_at_quad)
        w = w / geometry.qradii
    elif weight != "1":
        raise ValueError(f"unknown weight {weight!r}")
    return float(np.sum(w * values_at_quad))


def _check_axis_decay(geometry, values_at_quad):
    """Heuristic contract check for 1/r-weighted integrands.

    On elements touching the axis, values/r must not be dominated by the
    quadrature points closest to the axis; a bounded ratio there means the
    integrand vanishes at least linearly in r.
    """
    r_min_vertex = geometry.vertices[geometry.triangles][:, :, 0].min(axis=1)
    axis_elems = np.flatnonzero(r_min_vertex <= 0.0)
    if len(axis_elems) == 0:
        return
    radii = geometry.qradii[axis_elems]
    ratio = np.abs(values_at_quad[axis_elems]) / radii
    idx = np.arange(len(axis_elems))
    near_vals = ratio[idx, radii.argmin(axis=1)]
    far_vals = ratio[idx, radii.argmax(axis=1)]
    scale = max(float(np.abs(values_at_quad).max()), 1e-300)
    bad = near_vals > 4.0 * far_vals + 1e-12 * scale
    if bad.any():
        raise ValueError(
            "1/r-weighted integrand does not vanish on the axis "
            "(contract violation)"
        )


def weighted_inner(geometry, f_at_quad, g_at_quad, weight="1", debug=False):
    """Weighted L2 inner product of two sampled functions."""
    return integrate(geometry, f_at_quad * g_at_quad, weight, debug=debug)


def p2_vector_values_at_quad(space, coeffs):
    """(T, Q, 2) values of a component-blocked P2 vector field."""
    n = space.num_dofs
    shp = p2_shape(TRI_QPOINTS)
    cr = coeffs[:n][space.tri_dofs]
    cz = coeffs[n:][space.tri_dofs]
    return np.stack(
        [np.einsum("ti,iq->tq", cr, shp), np.einsum("ti,iq->tq", cz, shp)],
        axis=2,
    )


def p1_vector_values_at_quad(mesh, nodal):
    """(T, Q, 2) values of a vertex-based P1 vector field given as (K, 2)."""
    shp = p1_shape(TRI_QPOINTS)
    vals = nodal[mesh.triangles]  # (T, 3, 2)
    return np.einsum("tic,iq->tqc", vals, shp)
