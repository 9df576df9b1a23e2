"""Generating curve of the axisymmetric interface and its discrete geometry.

The interface surface is the rotation of a polygonal curve in the (r, z)
half-plane about the z-axis.  The curve is parameterized over [0, 1] with
uniform parameter spacing; both end points sit on the axis (r = 0) and all
interior nodes have r > 0.  Piecewise linear nodal fields on the curve use a
component-blocked layout: a vector field with J+1 nodes is stored as the
2(J+1) array [r-components, z-components].
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateSegmentError

# Two-point and three-point Gauss rules on [0, 1]; the 3-point rule is exact
# for polynomials of degree <= 5, enough for every exactly-integrated curve
# pairing used here (integrands are at most degree 4 in the parameter).
GAUSS3_POINTS = np.array(
    [0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0]
)
GAUSS3_WEIGHTS = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


def perp(v):
    """Quarter-turn of a 2-vector (or array of them), (a, b) -> (-b, a).

    The orientation is fixed so that the unit normal nu = -perp(tau) of a
    curve running from the lower to the upper axis end point through r > 0
    points out of the enclosed region; a vertical tangent (0, 1) yields
    nu = (1, 0).
    """
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


class GeneratingCurve:
    """Polygonal generating curve with axis-attached end points.

    Parameters
    ----------
    nodes : (J+1, 2) array
        Node positions (r_j, z_j) at the uniform parameter values j/J.
    """

    def __init__(self, nodes):
        nodes = np.ascontiguousarray(nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or nodes.shape[0] < 2:
            raise ValueError("curve needs at least two (r, z) nodes")
        if nodes[0, 0] != 0.0 or nodes[-1, 0] != 0.0:
            raise ValueError("curve end points must lie on the axis (r = 0)")
        if nodes.shape[0] > 2 and np.any(nodes[1:-1, 0] <= 0.0):
            raise ValueError("interior curve nodes must have r > 0")
        self.nodes = nodes
        self.num_segments = nodes.shape[0] - 1
        self.h = 1.0 / self.num_segments
        diffs = np.diff(nodes, axis=0)
        self.chords = np.hypot(diffs[:, 0], diffs[:, 1])
        if np.any(self.chords <= 0.0):
            raise DegenerateSegmentError("zero-length segment")
        # X_alpha is constant per segment; |X_alpha| = chord / h.
        self.x_alpha = diffs / self.h
        self.seg_len_alpha = self.chords / self.h
        self.tangents = diffs / self.chords[:, None]
        self.normals = -perp(self.tangents)
        self.alphas = np.linspace(0.0, 1.0, nodes.shape[0])

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    def with_nodes(self, nodes):
        return GeneratingCurve(nodes)

    def displaced(self, delta):
        """New curve with nodes moved by the component-blocked vector delta."""
        return GeneratingCurve(self.nodes + unstack_vector(delta))

    def node_normals(self):
        """Outward unit normal per node, averaging the adjacent segments.

        End points use the single adjacent segment's normal; their radial
        test components are constrained to zero, so the choice never enters
        assembled quantities.
        """
        nrm = np.empty_like(self.nodes)
        nrm[0] = self.normals[0]
        nrm[-1] = self.normals[-1]
        if self.num_segments > 1:
            s = self.normals[:-1] + self.normals[1:]
            s /= np.linalg.norm(s, axis=1)[:, None]
            nrm[1:-1] = s
        return nrm


def stack_vector(nodes_rz):
    """(J+1, 2) nodal vectors -> component-blocked 2(J+1) array."""
    nodes_rz = np.asarray(nodes_rz, dtype=float)
    return np.concatenate([nodes_rz[:, 0], nodes_rz[:, 1]])


def unstack_vector(vec):
    """Component-blocked 2(J+1) array -> (J+1, 2) nodal vectors."""
    vec = np.asarray(vec, dtype=float)
    n = vec.size // 2
    return np.column_stack([vec[:n], vec[n:]])


def vector_free_dofs(num_nodes):
    """Free indices of a component-blocked curve vector in V_partial^h.

    The radial components of both end points are eliminated (the curve ends
    stay attached to the axis).
    """
    free = np.ones(2 * num_nodes, dtype=bool)
    free[0] = False
    free[num_nodes - 1] = False
    return np.flatnonzero(free)


def tangent_normal(curve, segment):
    """Unit tangent and outward unit normal of one curve segment."""
    if not 0 <= segment < curve.num_segments:
        raise IndexError("segment index out of range")
    return curve.tangents[segment].copy(), curve.normals[segment].copy()


def surface_area(curve):
    """Area of the rotated surface, 2*pi * sum(midpoint radius * chord)."""
    r = curve.nodes[:, 0]
    mid_r = 0.5 * (r[:-1] + r[1:])
    return 2.0 * np.pi * float(np.dot(mid_r, curve.chords))


def enclosed_volume(curve):
    """Volume enclosed by the rotated surface.

    The integrand pi * r(alpha)^2 (nu . e1) |X_alpha| is quadratic per
    segment and is integrated exactly; with the normal convention used here
    it reduces to pi/3 * sum (z_{j+1} - z_j)(r_j^2 + r_j r_{j+1} + r_{j+1}^2).
    """
    r = curve.nodes[:, 0]
    z = curve.nodes[:, 1]
    dz = np.diff(z)
    return np.pi / 3.0 * float(np.dot(dz, r[:-1] ** 2 + r[:-1] * r[1:] + r[1:] ** 2))


def equidistribution_ratio(curve):
    """Max over min chord length; 1.0 for perfectly equidistributed nodes."""
    return float(curve.chords.max() / curve.chords.min())


class TimeWeightedNormalField:
    """Per-segment linear vector field averaging two curve configurations.

    Pairing interface displacements against this field reproduces the exact
    difference of enclosed volumes; when both configurations coincide the
    field collapses to -(X . e1) perp(X_alpha) per segment.
    """

    def __init__(self, end_values):
        # end_values[j, 0] is the value at the segment start, [j, 1] at the end
        self.end_values = np.asarray(end_values, dtype=float)
        self.num_segments = self.end_values.shape[0]

    def at(self, segment, t):
        """Value at local coordinate t in [0, 1] of one segment."""
        v0, v1 = self.end_values[segment]
        return (1.0 - t) * v0 + t * v1

    def values_at(self, ts):
        """Field values at local coordinates ts for all segments.

        Returns an array of shape (num_segments, len(ts), 2).
        """
        ts = np.asarray(ts, dtype=float)
        v0 = self.end_values[:, 0][:, None, :]
        v1 = self.end_values[:, 1][:, None, :]
        return v0 * (1.0 - ts)[None, :, None] + v1 * ts[None, :, None]


def time_weighted_normal(old, new):
    """Time-weighted normal field of a pair of curves sharing the node count."""
    if old.num_nodes != new.num_nodes:
        raise ValueError("curves must share the node count")
    r_old = old.nodes[:, 0]
    r_new = new.nodes[:, 0]
    xa_old = old.x_alpha
    xa_new = new.x_alpha
    end_values = np.empty((old.num_segments, 2, 2))
    for k, pick in enumerate((slice(None, -1), slice(1, None))):
        combo = (
            2.0 * r_old[pick, None] * xa_old
            + 2.0 * r_new[pick, None] * xa_new
            + r_old[pick, None] * xa_new
            + r_new[pick, None] * xa_old
        )
        end_values[:, k, :] = -perp(combo) / 6.0
    return TimeWeightedNormalField(end_values)


def pair_displacement_with_field(old, new, field):
    """Exact L2 pairing <X_new - X_old, field> over the parameter interval.

    The integrand is quadratic per segment, so Simpson's rule per segment is
    exact.  Multiplying by 2*pi gives the enclosed-volume difference.
    """
    delta = new.nodes - old.nodes
    d0 = delta[:-1]
    d1 = delta[1:]
    f0 = field.end_values[:, 0]
    f1 = field.end_values[:, 1]
    dm = 0.5 * (d0 + d1)
    fm = 0.5 * (f0 + f1)
    seg = (
        np.einsum("ij,ij->i", d0, f0)
        + 4.0 * np.einsum("ij,ij->i", dm, fm)
        + np.einsum("ij,ij->i", d1, f1)
    ) / 6.0
    return old.h * float(seg.sum())


def curve_stiffness(curve, mode):
    """Curve stiffness block acting on component-blocked nodal vectors.

    mode "stab": <(X . e1) Y_alpha, eta_alpha |X_alpha|^-1>, radially weighted.
    mode "equi": <Y_alpha, eta_alpha |X_alpha|^-1>, unweighted.
    """
    r = curve.nodes[:, 0]
    if mode == "stab":
        w = 0.5 * (r[:-1] + r[1:]) / curve.chords
    elif mode == "equi":
        w = 1.0 / curve.chords
    else:
        raise ValueError(f"unknown stiffness mode {mode!r}")
    n = curve.num_nodes
    main = np.zeros(n)
    main[:-1] += w
    main[1:] += w
    scalar = sp.diags([-w, main, -w], offsets=[-1, 0, 1], format="csr")
    return sp.block_diag([scalar, scalar], format="csr")


def _hat_products_weighted(curve, seg_weight_at_gauss):
    """Per-segment 2x2 integrals of hat_a hat_b w(alpha) d alpha (Gauss-3)."""
    t = GAUSS3_POINTS
    hats = np.stack([1.0 - t, t])  # (2, 3)
    # out[j, a, b] = h * sum_q w_q hats[a, q] hats[b, q] weight[j, q]
    return curve.h * np.einsum(
        "q,aq,bq,jq->jab", GAUSS3_WEIGHTS, hats, hats, seg_weight_at_gauss
    )


def curve_normal_pairing(curve, field=None):
    """Pairing of curve scalars with vector test functions.

    Without a field this is the exactly integrated
    <(X . e1) zeta, (eta . nu) |X_alpha|>; with a time-weighted normal field
    it becomes <zeta, eta . f>.  Returns a sparse (2(J+1), J+1) matrix.
    """
    n = curve.num_nodes
    nseg = curve.num_segments
    t = GAUSS3_POINTS
    if field is None:
        r_gauss = (1.0 - t)[None, :] * curve.nodes[:-1, 0][:, None] + t[
            None, :
        ] * curve.nodes[1:, 0][:, None]
        weight = r_gauss[:, :, None] * (
            curve.normals * curve.seg_len_alpha[:, None]
        )[:, None, :]
    else:
        weight = field.values_at(t)
    rows, cols, vals = [], [], []
    for comp in range(2):
        blocks = _hat_products_weighted(curve, weight[:, :, comp])
        for a in range(2):
            for b in range(2):
                rows.append(np.arange(nseg) + a + comp * n)
                cols.append(np.arange(nseg) + b)
                vals.append(blocks[:, a, b])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, n))


def curve_normal_pairing_lumped(curve):
    """Mass-lumped <zeta nu, eta |X_alpha|>^h pairing, (2(J+1), J+1) sparse.

    The trapezoidal lumping couples only coincident nodes; each node carries
    h/2 * |X_alpha| * nu from every adjacent segment (end points see one).
    """
    n = curve.num_nodes
    acc = np.zeros((n, 2))
    contrib = 0.5 * curve.h * curve.seg_len_alpha[:, None] * curve.normals
    acc[:-1] += contrib
    acc[1:] += contrib
    rows = np.concatenate([np.arange(n), np.arange(n) + n])
    cols = np.concatenate([np.arange(n), np.arange(n)])
    vals = np.concatenate([acc[:, 0], acc[:, 1]])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, n))


def curve_length_weight_vector(curve, other=None):
    """Load vector <eta . e1, |X_alpha|> with |X_alpha| taken from `other`.

    This is the lagged right-hand-side term of the stab curvature equation;
    `other` defaults to the curve itself.
    """
    src = curve if other is None else other
    if src.num_nodes != curve.num_nodes:
        raise ValueError("curves must share the node count")
    n = curve.num_nodes
    out = np.zeros(2 * n)
    seg = 0.5 * curve.h * src.seg_len_alpha
    out[: n - 1] += seg
    out[1:n] += seg
    return out


def curve_blocks(curve, mode, normal_field=None):
    """Assemble the curve-side blocks of the coupled system.

    Returns (A_gamma, N_gamma, calN_gamma):
      A_gamma  -- curve stiffness in the requested mode,
      N_gamma  -- kinematic pairing (plain, or via `normal_field` if given),
      calN_gamma -- curvature-row pairing: mass-lumped for "equi", exactly
                    integrated (radially weighted, or the field pairing when
                    `normal_field` is given) for "stab".
    """
    if mode not in ("stab", "equi"):
        raise ValueError(f"unknown curve block mode {mode!r}")
    a_gamma = curve_stiffness(curve, mode)
    n_gamma = curve_normal_pairing(curve, normal_field)
    if mode == "equi":
        cal_n = curve_normal_pairing_lumped(curve)
    else:
        cal_n = n_gamma
    return a_gamma, n_gamma, cal_n


def write_curve_csv(curve, path):
    """Write the curve snapshot as CSV with columns alpha, r, z."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("alpha,r,z\n")
        for a, (r, z) in zip(curve.alphas, curve.nodes):
            fh.write(f"{a:.17g},{r:.17g},{z:.17g}\n")


def semicircle_curve(num_segments, radius=0.25, center_z=0.5):
    """Uniform polar-angle sampling of a sphere's generating semicircle."""
    theta = np.linspace(-0.5 * np.pi, 0.5 * np.pi, num_segments + 1)
    nodes = np.column_stack(
        [radius * np.cos(theta), center_z + radius * np.sin(theta)]
    )
    nodes[0, 0] = 0.0
    nodes[-1, 0] = 0.0
    return GeneratingCurve(nodes)
