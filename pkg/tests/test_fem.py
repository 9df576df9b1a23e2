import math

import numpy as np
import pytest

from axiflow import fem
from axiflow.fem import (
    MeshGeometry,
    P2Space,
    PressureSpace,
    TRI_QPOINTS,
    TRI_QWEIGHTS,
    VelocitySpace,
    apply_constraints,
    integrate,
    p2_vector_values_at_quad,
    weighted_inner,
)


def reference_monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


class TestQuadrature:
    def test_degree_five_exactness(self):
        x = TRI_QPOINTS[:, 0]
        y = TRI_QPOINTS[:, 1]
        for a in range(6):
            for b in range(6 - a):
                approx = float(np.sum(TRI_QWEIGHTS * x**a * y**b))
                exact = reference_monomial_integral(a, b)
                assert abs(approx - exact) < 1e-15, (a, b)

    def test_x2y3_value(self):
        x = TRI_QPOINTS[:, 0]
        y = TRI_QPOINTS[:, 1]
        value = float(np.sum(TRI_QWEIGHTS * x**2 * y**3))
        assert value == pytest.approx(1.0 / 420.0, rel=1e-13)

    def test_points_strictly_interior(self):
        x = TRI_QPOINTS[:, 0]
        y = TRI_QPOINTS[:, 1]
        assert (x > 0).all() and (y > 0).all() and (x + y < 1).all()


class TestWeightedInner:
    def test_radial_weight_is_domain_moment(self, sphere_mesh16):
        geo = sphere_mesh16.geometry()
        ones = np.ones_like(geo.qradii)
        # integral of r over [0, 1/2] x [0, 2]
        assert weighted_inner(geo, ones, ones, "r") == pytest.approx(0.25, rel=1e-12)

    def test_inverse_radius_cancellation(self, sphere_mesh16):
        geo = sphere_mesh16.geometry()
        space = P2Space(sphere_mesh16)
        coeffs = np.concatenate(
            [space.interpolate(lambda r, z: r), np.zeros(space.num_dofs)]
        )
        vals = p2_vector_values_at_quad(space, coeffs)[:, :, 0]
        assert weighted_inner(geo, vals, vals, "1/r") == pytest.approx(0.25, rel=1e-12)

    def test_unknown_weight_rejected(self, sphere_mesh16):
        geo = sphere_mesh16.geometry()
        with pytest.raises(ValueError, match="weight"):
            integrate(geo, geo.qradii, weight="r^2")

    def test_axis_contract_flagged_in_debug(self, sphere_mesh16):
        geo = sphere_mesh16.geometry()
        ones = np.ones_like(geo.qradii)
        with pytest.raises(ValueError, match="vanish on the axis"):
            integrate(geo, ones, weight="1/r", debug=True)
        # a properly vanishing integrand (like r^2) passes
        integrate(geo, geo.qradii**2, weight="1/r", debug=True)


class TestP2Space:
    def test_quadratic_interpolation_exact(self, sphere_mesh16):
        space = P2Space(sphere_mesh16)
        geo = sphere_mesh16.geometry()

        def f(r, z):
            return r**2 + 3.0 * r * z - 2.0 * z**2 + r - z + 7.0

        coeffs = space.interpolate(f)
        at_quad = space.values_at_quad(coeffs)
        direct = f(geo.qpoints[:, :, 0], geo.qpoints[:, :, 1])
        assert np.abs(at_quad - direct).max() < 1e-13 * np.abs(direct).max()

    def test_edge_midpoints_in_dof_points(self, sphere_mesh16):
        space = P2Space(sphere_mesh16)
        a, b = space.edges[0]
        mid = 0.5 * (sphere_mesh16.vertices[a] + sphere_mesh16.vertices[b])
        np.testing.assert_allclose(space.dof_points[space.num_vertices], mid)


class TestConstraints:
    def test_velocity_constraint_sets(self, sphere_mesh16):
        space = P2Space(sphere_mesh16)
        vspace = VelocitySpace(sphere_mesh16, space)
        pts = space.dof_points
        tol = 1e-12
        for dof in vspace.noslip_nodes:
            assert pts[dof][1] < tol or pts[dof][1] > 2.0 - tol
        for dof in vspace.axis_nodes:
            assert pts[dof][0] == 0.0
        n = space.num_dofs
        for dof in vspace.axis_nodes:
            assert vspace.fixed_mask[dof]  # radial component eliminated
        free_pts = pts[vspace.free_dofs[vspace.free_dofs < n]]
        assert (free_pts[:, 0] > 0.0).all()

    def test_reduction_keeps_symmetry(self, sphere_mesh16):
        import scipy.sparse as sp

        rng = np.random.default_rng(3)
        n = 30
        m = rng.normal(size=(n, n))
        m = sp.csr_matrix(m + m.T)
        rhs = rng.normal(size=n)
        free = np.arange(0, n, 2)
        red, rhs_red = apply_constraints(m, rhs, free)
        dense = red.toarray()
        np.testing.assert_allclose(dense, dense.T)
        np.testing.assert_allclose(rhs_red, rhs[free])

    def test_pressure_projection_kills_null_directions(self, sphere_mesh16):
        geo = sphere_mesh16.geometry()
        pspace = PressureSpace(sphere_mesh16, geo)
        const = np.concatenate(
            [np.full(pspace.num_vertices, 2.5), np.zeros(pspace.num_triangles)]
        )
        projected = pspace.project(const)
        assert abs(pspace.weighted_mean(projected)) < 1e-12
        kernel = np.concatenate(
            [np.ones(pspace.num_vertices), -np.ones(pspace.num_triangles)]
        )
        # the coefficient-redundancy direction projects to zero
        np.testing.assert_allclose(pspace.project(kernel), 0.0, atol=1e-12)
        # projection is idempotent
        np.testing.assert_allclose(
            pspace.project(projected), projected, atol=1e-13
        )

    def test_normalize_fixes_gauge_without_changing_function(self, sphere_mesh16):
        geo = sphere_mesh16.geometry()
        pspace = PressureSpace(sphere_mesh16, geo)
        rng = np.random.default_rng(11)
        p = rng.normal(size=pspace.num_dofs)
        fixed = pspace.normalize(p)
        assert abs(pspace.weighted_mean(fixed)) < 1e-10
        kernel = np.concatenate(
            [np.ones(pspace.num_vertices), -np.ones(pspace.num_triangles)]
        )
        assert abs(kernel @ fixed) < 1e-9
        # pointwise the function changed only by a constant
        diff = pspace.values_at_quad(p) - pspace.values_at_quad(fixed)
        assert np.ptp(diff) < 1e-10 * max(1.0, np.abs(diff).max())

    def test_pressure_values_include_p0_jump(self, sphere_mesh16):
        geo = sphere_mesh16.geometry()
        pspace = PressureSpace(sphere_mesh16, geo)
        coeffs = np.zeros(pspace.num_dofs)
        coeffs[pspace.num_vertices :][sphere_mesh16.phase < 0] = 4.0
        vals = pspace.values_at_quad(coeffs)
        inner = sphere_mesh16.phase < 0
        assert np.allclose(vals[inner], 4.0)
        assert np.allclose(vals[~inner], 0.0)


class TestDivergenceIndicatorIdentity:
    def test_inner_phase_divergence_equals_interface_flux(self, sphere_mesh16, sphere16):
        """Volume flux identity: the P0 indicator test extracts the interface flux."""
        from axiflow import assembly as asm

        geo = sphere_mesh16.geometry()
        space = P2Space(sphere_mesh16)
        pspace = PressureSpace(sphere_mesh16, geo)
        rng = np.random.default_rng(7)
        u = rng.normal(size=2 * space.num_dofs)
        c_matrix = asm.assemble_divergence(geo, space, pspace)
        indicator = np.zeros(pspace.num_dofs)
        indicator[pspace.num_vertices :][sphere_mesh16.phase < 0] = 1.0
        lhs = -float(u @ (c_matrix @ indicator))  # (div[r U], chi_inner)
        coupling = asm.assemble_interface_coupling(sphere_mesh16, space, sphere16)
        flux = float(u @ (coupling @ np.ones(sphere16.num_nodes)))
        assert abs(lhs - flux) < 1e-12 * max(1.0, abs(flux))
