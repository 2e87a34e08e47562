"""Synthetic test fields on box domains, sampled on grid vertices.

All generators return (vertex_values, meta) for a Kuhn grid on the given
box; the pipeline interpolates them piecewise-affinely. Defect centers
are placed off the vertex lattice so the sampled field is finite
everywhere.
"""

import numpy as np

from .covers import get_target, quat_mul
from .polygeom import kuhn_triangulate


def grid_vertices(box, resolution):
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    res = np.asarray(resolution, dtype=int)
    axes = [np.linspace(lo[i], hi[i], res[i] + 1) for i in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def vortex_values(x, center=(0.0131, 0.00719)):
    """The classic degree-one direction field x/|x| with an off-lattice core."""
    dx = x - np.asarray(center)
    r = np.linalg.norm(dx, axis=1, keepdims=True)
    return dx / np.maximum(r, 1e-30)


def smooth_angle_values(x, coeffs=(1.1, 0.7, 0.25)):
    """Zero-winding circle field from a single-valued angle function.

    theta(x) = c1 x1 + c2 x2 + c3 sin(pi x1) cos(pi x2); the dominant
    linear part keeps |grad theta| bounded away from zero so quadrature
    converges cleanly.
    """
    c1, c2, c3 = coeffs
    th = c1 * x[:, 0] + c2 * x[:, 1] + c3 * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def smooth_angle_gradnorm(x, coeffs=(1.1, 0.7, 0.25)):
    """|grad theta| for the field above, in closed form."""
    c1, c2, c3 = coeffs
    g1 = c1 + c3 * np.pi * np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
    g2 = c2 - c3 * np.pi * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    return np.hypot(g1, g2)


def constant_values(x, target_id="circle"):
    t = get_target(target_id)
    return np.tile(t.base_point(), (x.shape[0], 1))


def torus_angle_values(x, coeffs=(0.9, 0.5, 0.6, -0.4)):
    """Smooth (zero-winding) Clifford-torus field from two angle functions."""
    a1, a2, b1, b2 = coeffs
    al = a1 * x[:, 0] + a2 * np.sin(np.pi * x[:, 1]) / np.pi
    be = b1 * x[:, 1] + b2 * np.cos(0.5 * np.pi * x[:, 0]) / np.pi
    t = get_target("clifford_torus")
    return t.project_cover(np.stack([al, be], axis=1))


def so3_smooth_values(x, amp=(0.9, 0.7)):
    """Smooth rotation-valued field (no defects): axis-angle with slowly
    varying axis and angle."""
    a1, a2 = amp
    th = a1 * np.sin(0.5 * np.pi * x[:, 0]) + a2 * x[:, 1]
    ax = np.stack([np.cos(0.8 * x[:, 0]), np.sin(0.8 * x[:, 0]),
                   0.5 + 0.3 * x[:, 1]], axis=1)
    ax /= np.linalg.norm(ax, axis=1, keepdims=True)
    q = np.concatenate([np.cos(th / 2)[:, None],
                        np.sin(th / 2)[:, None] * ax], axis=1)
    t = get_target("so3")
    return t.project_cover(q)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _sector_step(theta, th_lo, th_hi):
    """0 below th_lo, 1 above th_hi, smooth between (theta in (-pi, pi])."""
    return _smoothstep((theta - th_lo) / (th_hi - th_lo))


def _branch_angle_down(p, center):
    """Angle of p - center with the branch cut on the downward ray."""
    d = p - np.asarray(center)
    return np.arctan2(-d[:, 0], d[:, 1])  # cut where d_x = 0, d_y < 0


def _branch_angle_up(p, center):
    """Angle of p - center with the branch cut on the upward ray."""
    d = p - np.asarray(center)
    return np.arctan2(d[:, 0], -d[:, 1])  # cut where d_x = 0, d_y > 0


def q8_two_defect_quats(x, a=(-0.351, 0.0132), b=(0.349, 0.0117)):
    """Quaternion field with half-turn defects of classes i (at A) and j
    (at B).

    Each defect carries a half-turn exponential whose angular profile is
    constant except in a wide sector on one side of its own branch cut
    (A cuts downward, B upward). The zero-plateau of each profile covers
    the other defect's cut entirely, which keeps both jump labels in the
    quaternion group on the nose, and the 72-degree transition width
    keeps the defect resolvable on desk-scale grids.
    """
    th_a = _branch_angle_down(x, a)
    th_b = _branch_angle_up(x, b)
    psi_a = _sector_step(th_a, 0.55 * np.pi, 0.95 * np.pi)
    psi_b = _sector_step(th_b, 0.55 * np.pi, 0.95 * np.pi)
    # half-turn defects: the rotation angle wraps by pi, so the quaternion
    # factor wraps by exp(pi/2) = the group generator
    al = np.pi * psi_a
    be = np.pi * psi_b
    qa = np.stack([np.cos(al / 2), np.sin(al / 2),
                   np.zeros_like(al), np.zeros_like(al)], axis=1)
    qb = np.stack([np.cos(be / 2), np.zeros_like(be),
                   np.sin(be / 2), np.zeros_like(be)], axis=1)
    return quat_mul(qa, qb)


def q8_two_defect_values(x, a=(-0.351, 0.0132), b=(0.349, 0.0117)):
    t = get_target("so3_mod_v4")
    q = q8_two_defect_quats(np.atleast_2d(x), a=a, b=b)
    return t._embed_quat(q)


GENERATORS = {
    "vortex": ("circle", vortex_values),
    "smooth": ("circle", smooth_angle_values),
    "constant": ("circle", lambda x: constant_values(x, "circle")),
    "torus_smooth": ("clifford_torus", torus_angle_values),
    "so3_smooth": ("so3", so3_smooth_values),
    "q8_two_defect": ("so3_mod_v4", q8_two_defect_values),
}


def make_field(kind, resolution, box=None, **kwargs):
    """Sample one of the named generators on a grid; returns a dict with
    the same content as a parsed field file."""
    target_id, gen = GENERATORS[kind]
    if box is None:
        box = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    res = np.asarray(resolution, dtype=int).ravel()
    if res.size == 1:
        res = np.repeat(res, np.asarray(box[0]).size)
    x = grid_vertices(box, res)
    vals = gen(x, **kwargs) if kwargs else gen(x)
    return {
        "target": target_id,
        "box": (np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)),
        "resolution": res,
        "values": vals,
    }


def make_pa_map(kind, resolution, box=None, **kwargs):
    """Convenience: generator output as a PiecewiseAffineMap."""
    from .polygeom import PiecewiseAffineMap

    f = make_field(kind, resolution, box=box, **kwargs)
    tri = kuhn_triangulate(f["box"], f["resolution"])
    return PiecewiseAffineMap(tri, f["values"])
