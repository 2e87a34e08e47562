"""The lifting engine: cylinder path lifting, jump complex, BV accounting.

Every node value v(x) is obtained by lifting the homotopy path
t -> rho_y(U(t, x)) from the anchor at t = 1 down to t = 0, with adaptive
subdivision keeping each step inside half the injectivity margin; unique
path lifting makes the result independent of the subdivision. The jump
complex lives on the spatial shadow T_y: exact polyhedral carriers where
the scaffold's singular set is polyhedral, an edge-marching estimate
(flagged approximate) otherwise. Traces on either side of each facet are
Richardson-extrapolated, deck labels are snapped to exact group elements,
and the BV measure splits into an absolutely continuous part, a jump
part, and an identically zero Cantor part.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .covers import get_target
from .errors import (BoundViolationError, IllPosedLoopError,
                     InvalidArgumentError, LiftFailure, NearJumpError,
                     SelectionFailure)
from .polygeom import EPS_GEO
from .scaffold import eval_retraction_guarded
from .transversal import SingularSets, draw_shifts, select_shift

_FD = 1e-6


@dataclass
class BVRecord:
    """Decomposition of |Dv|: absolutely continuous + jump, zero Cantor."""

    ac: float
    jump: float
    geodesic_jump: float
    cantor: float = 0.0

    @property
    def total(self):
        return self.ac + self.jump

    def as_dict(self):
        return {"ac": self.ac, "jump": self.jump,
                "geodesic_jump": self.geodesic_jump,
                "cantor": self.cantor, "total": self.total}


@dataclass
class JumpFacet:
    """One (d-1)-facet of the jump complex with traces and deck label."""

    simplex: int
    verts: np.ndarray           # carrier polytope vertices, (k, d)
    normal: np.ndarray          # unit normal within the domain
    measure: float
    label: object               # DeckElement
    trace_points: np.ndarray    # sample x's, (s, d)
    traces_minus: np.ndarray    # (s, l), extrapolated one-sided limits
    traces_plus: np.ndarray
    max_geo_jump: float
    approximate: bool = False
    core: bool = False

    @property
    def a(self):
        return self.verts[0]

    @property
    def b(self):
        return self.verts[-1]


@dataclass
class LiftedField:
    """Lifted vertex/node values, jump complex, and BV record."""

    target_id: str
    y: np.ndarray
    u_star: np.ndarray
    w_anchor: np.ndarray
    u: object
    ss: object
    vertex_lifts: np.ndarray
    node_x: np.ndarray
    node_w: np.ndarray
    node_simplex: np.ndarray
    node_lift: np.ndarray
    node_grad: np.ndarray
    facets: list
    bv: BVRecord = None
    diagnostics: dict = field(default_factory=dict)
    scaffold: object = None

    @property
    def target(self):
        return get_target(self.target_id)


# ----------------------------------------------------------------------
# batched path lifting


def _lift_linear_paths(target, rho_guard, z_to, z_from, w_start,
                       step_cap=0.5, dt_min=1e-10, max_rounds=20000):
    """Lift rho_y along straight z-space segments from z_from to z_to.

    All paths share parametrization t: 1 -> 0 with z(t) = (1-t) z_to
    + t z_from; w_start must lift rho_y(z_from). Two conditions gate each
    step: the downstairs increment stays below step_cap * r_inj, and the
    z-space increment stays below a fixed fraction of the current margin
    to the singular set. The margin vanishes on the discontinuity locus
    of rho_y and is Lipschitz in z, so an accepted step can never cross
    it: tunnelling through a small-gap discontinuity is excluded.
    Returns (lifts, status): 0 = ok, 2 = near-jump (step control
    collapsed), 3 = budget exhausted.
    """
    z_to = np.atleast_2d(z_to)
    n = z_to.shape[0]
    if n == 0:
        return np.zeros((0, target.l)), np.zeros(0, dtype=int)
    z_from = np.broadcast_to(np.asarray(z_from, dtype=float), z_to.shape)
    w = np.array(np.broadcast_to(np.asarray(w_start, dtype=float),
                                 (n, target.l)), dtype=float)
    r_cap = target.r_inj * step_cap
    mfrac = 1.0 / (4.0 * getattr(rho_guard, "margin_lipschitz", 2.0))
    speed = np.linalg.norm(z_to - z_from, axis=1)
    t = np.ones(n)
    dt = np.full(n, 0.125)
    same_start = np.allclose(z_from, z_from[0])
    start_vals, ok0, m0 = rho_guard(z_from[:1] if same_start else z_from)
    if start_vals.shape[0] == 1:
        n_curr = np.tile(start_vals[0], (n, 1))
        margin = np.full(n, m0[0])
        if not ok0[0]:
            return w, np.full(n, 2, dtype=int)
        status = np.zeros(n, dtype=int)
    else:
        n_curr = start_vals.copy()
        margin = m0.copy()
        status = np.where(ok0, 0, 2).astype(int)
        n_curr[~ok0] = 0.0
    rounds = 0
    while True:
        act = status == 0
        live = act & (t > 0)
        if not live.any():
            break
        rounds += 1
        if rounds > max_rounds:
            status[live] = 3
            break
        idx = np.where(live)[0]
        # margin-capped trial step
        cap = np.where(speed[idx] > 1e-30,
                       mfrac * margin[idx] / np.maximum(speed[idx], 1e-30),
                       np.inf)
        dt_try = np.minimum(dt[idx], np.maximum(cap, dt_min * 0.5))
        t_next = np.maximum(t[idx] - dt_try, 0.0)
        z = (1.0 - t_next)[:, None] * z_to[idx] + t_next[:, None] * z_from[idx]
        vals, ok, mg = rho_guard(z)
        d = np.full(idx.size, np.inf)
        if ok.any():
            d[ok] = np.atleast_1d(target.dist_n(n_curr[idx[ok]], vals[ok]))
        good = ok & (d < r_cap)
        gi = idx[good]
        if gi.size:
            w[gi] = np.atleast_2d(target.lift_step(w[gi], vals[good],
                                                   strict=False))
            n_curr[gi] = vals[good]
            t[gi] = t_next[good]
            margin[gi] = mg[good]
            dt[gi] = np.minimum(dt[gi] * 1.6, 0.25)
        bi = idx[~good]
        if bi.size:
            dt[bi] = dt_try[~good] * 0.5
            dead = dt[bi] < dt_min
            status[bi[dead]] = 2
        # a live path whose margin cap starves the step is jammed against
        # the discontinuity locus
        jam = (dt_try < dt_min) & good
        if np.any(jam & (t[idx] > 0)):
            jj = idx[jam & (t[idx] > 0)]
            status[jj] = 2
    return w, status


def _rho_guard(sc, y, tol_near=EPS_GEO):
    def guard(z):
        return eval_retraction_guarded(sc, y, z, tol_near=tol_near)
    guard.margin_lipschitz = getattr(sc, "margin_lipschitz", 2.0)
    return guard


def cylinder_lift(h, ss, sc, target, x, w_anchor, step_cap=0.5):
    """Lift of the vertical homotopy path at one spatial point.

    Returns v(x) with pi(v(x)) = rho_y(u(x)); raises NearJumpError when x
    is within tolerance of T_y or the step control collapses, and
    LiftFailure when the step budget runs out.
    """
    x = np.asarray(x, dtype=float).ravel()
    if ss is not None and getattr(ss, "t_members", None):
        dmin = _dist_to_facet_sets(x[None, :],
                                   [m.verts for m in ss.t_members
                                    if m.dim >= ss.d - 1])
        if dmin[0] <= EPS_GEO:
            raise NearJumpError("point lies on the jump shadow T_y")
    z_end = np.atleast_2d(h.u.eval(x))
    lifts, status = _lift_linear_paths(
        target, _rho_guard(sc, ss.y if ss is not None else np.zeros(target.m)),
        z_end, h.u_star, np.asarray(w_anchor, dtype=float),
        step_cap=step_cap)
    if status[0] == 2:
        raise NearJumpError("step control could not certify the margin")
    if status[0] == 3:
        raise LiftFailure("step budget exceeded")
    return lifts[0]


def _dist_to_facet_sets(pts, vert_sets):
    """Distance from points to a list of segment/polytope vertex hulls."""
    if not vert_sets:
        return np.full(pts.shape[0], np.inf)
    best = np.full(pts.shape[0], np.inf)
    for V in vert_sets:
        if V.shape[0] == 1:
            d = np.linalg.norm(pts - V[0], axis=1)
        else:
            a, b = V[0], V[-1]
            ab = b - a
            denom = float(ab @ ab)
            if denom < 1e-30:
                d = np.linalg.norm(pts - a, axis=1)
            else:
                tt = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
                proj = a[None, :] + tt[:, None] * ab[None, :]
                d = np.linalg.norm(pts - proj, axis=1)
        best = np.minimum(best, d)
    return best


# ----------------------------------------------------------------------
# jump complex: carriers


def _segment_from_verts(verts):
    """Order the vertex set of a 1-dimensional polytope into (a, b)."""
    mean = verts.mean(axis=0)
    U, S, Vt = np.linalg.svd(verts - mean, full_matrices=False)
    tpar = (verts - mean) @ Vt[0]
    return verts[np.argmin(tpar)], verts[np.argmax(tpar)]


def exact_jump_carriers(ss):
    """Carrier segments (d = 2) or polygons (d = 3) from exact T_y."""
    out = []
    for m in ss.t_members:
        if m.dim != ss.d - 1:
            continue
        if ss.d == 2:
            a, b = _segment_from_verts(m.verts)
            if np.linalg.norm(b - a) <= 1e-12:
                continue
            out.append((m.simplex, np.vstack([a, b])))
        elif ss.d == 1:
            out.append((m.simplex, m.verts[:1]))
        else:
            out.append((m.simplex, m.verts))
    return out


def sampled_jump_carriers(u, sc, target, y, vertex_lifts, w_anchor, u_star,
                          step_cap=0.5, bisect_rounds=14):
    """Edge-marching estimate of the jump complex (non-polyhedral path).

    Lifts are compared across every triangulation edge: the continuous
    lift of rho_y o u along the edge, started from the cylinder lift at
    one endpoint, either matches the cylinder lift at the other endpoint
    or differs by a deck element; mismatched edges are bisected to locate
    the crossing, and crossings are joined per simplex.
    """
    tri = u.tri
    guard = _rho_guard(sc, y)
    edges = {}
    for si, s in enumerate(tri.simplices):
        for i in range(s.size):
            for jj in range(i + 1, s.size):
                e = (min(s[i], s[jj]), max(s[i], s[jj]))
                edges.setdefault(e, []).append(si)
    e_list = list(edges)
    p_idx = np.array([e[0] for e in e_list])
    q_idx = np.array([e[1] for e in e_list])
    zp = u.values[p_idx]
    zq = u.values[q_idx]
    wl, st = _lift_linear_paths(target, guard, zq, zp, vertex_lifts[p_idx],
                                step_cap=step_cap)
    cut = np.zeros(len(e_list), dtype=bool)
    for i in range(len(e_list)):
        if st[i] != 0:
            cut[i] = True
            continue
        g = target.nearest_deck(vertex_lifts[q_idx[i]], wl[i])
        cut[i] = not g.is_identity()

    # bisect cut edges: sheet(x) = deck between edge-lift and cylinder lift
    cut_ids = np.where(cut)[0]
    lo_t = np.zeros(cut_ids.size)
    hi_t = np.ones(cut_ids.size)
    xa = tri.vertices[p_idx[cut_ids]]
    xb = tri.vertices[q_idx[cut_ids]]
    for _ in range(bisect_rounds):
        mid = 0.5 * (lo_t + hi_t)
        xm = xa + mid[:, None] * (xb - xa)
        zm = u.eval(xm)
        vm, stm = _lift_linear_paths(target, guard, zm, u_star,
                                     w_anchor, step_cap=step_cap)
        we, ste = _lift_linear_paths(target, guard, zm, u.values[p_idx[cut_ids]],
                                     vertex_lifts[p_idx[cut_ids]],
                                     step_cap=step_cap)
        same = np.zeros(cut_ids.size, dtype=bool)
        for i in range(cut_ids.size):
            if stm[i] != 0 or ste[i] != 0:
                same[i] = False
                continue
            same[i] = target.nearest_deck(vm[i], we[i]).is_identity()
        lo_t = np.where(same, mid, lo_t)
        hi_t = np.where(same, hi_t, mid)
    cross_t = 0.5 * (lo_t + hi_t)
    cross_x = xa + cross_t[:, None] * (xb - xa)

    per_simplex = {}
    for k, ei in enumerate(cut_ids):
        for si in edges[e_list[ei]]:
            per_simplex.setdefault(si, []).append(cross_x[k])
    carriers = []
    for si, pts in sorted(per_simplex.items()):
        pts = np.array(pts)
        if pts.shape[0] == 2:
            carriers.append((si, pts, False))
        else:
            cen = tri.simplex_coords(si).mean(axis=0)
            for p in pts:
                carriers.append((si, np.vstack([p, cen]), True))
    return carriers


# ----------------------------------------------------------------------
# traces and labels


def _facet_normal_d2(a, b):
    d = b - a
    n = np.array([-d[1], d[0]])
    return n / np.linalg.norm(n)


def _trace_epsilon(x_samples, facet_verts, other_vert_sets, seg_len,
                   eps_floor=1e-8, eps_scale=1.0):
    clear = _dist_to_facet_sets(x_samples, other_vert_sets)
    end_d = np.minimum(np.linalg.norm(x_samples - facet_verts[0], axis=1),
                       np.linalg.norm(x_samples - facet_verts[-1], axis=1))
    eps = np.minimum.reduce([np.full(x_samples.shape[0], seg_len / 8.0),
                             clear / 4.0, end_d / 2.0])
    return np.maximum(eps_scale * eps / 8.0, eps_floor)


def facet_traces(u, sc, target, y, u_star, w_anchor, facet_verts, normal,
                 other_vert_sets, n_samples=3, step_cap=0.5,
                 eps_floor=1e-8, eps_scale=1.0, eps_override=None):
    """One-sided traces v+- on a segment facet with Richardson
    extrapolation toward the facet; returns sample points and traces."""
    a, b = facet_verts[0], facet_verts[-1]
    seg_len = float(np.linalg.norm(b - a))
    if n_samples == 3:
        xi = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5, 0.5 + 0.5 / np.sqrt(3.0)])
    else:
        xi = np.linspace(0.15, 0.85, n_samples)
    xs = a[None, :] + xi[:, None] * (b - a)[None, :]
    if eps_override is not None:
        eps = np.full(xs.shape[0], float(eps_override))
    else:
        eps = _trace_epsilon(xs, facet_verts, other_vert_sets,
                             max(seg_len, 1e-9), eps_floor, eps_scale)
    pts = []
    for sgn in (+1.0, -1.0):
        for f in (1.0, 0.5):
            pts.append(xs + (sgn * f * eps)[:, None] * normal[None, :])
    allx = np.concatenate(pts, axis=0)
    z = u.eval(allx)
    lifts, st = _lift_linear_paths(target, _rho_guard(sc, y),
                                   z, u_star, w_anchor, step_cap=step_cap)
    if np.any(st != 0):
        raise NearJumpError("trace offsets could not be lifted")
    k = xs.shape[0]
    vp = 2.0 * lifts[k:2 * k] - lifts[0:k]          # plus side, eps -> 0
    vm = 2.0 * lifts[3 * k:4 * k] - lifts[2 * k:3 * k]
    return xs, vm, vp


def jump_traces(lf, target, facet, samples=3):
    """Recompute traces, deck label, and max geodesic jump of one facet.

    The label is the unique deck element carrying the minus trace to the
    plus trace; it must be constant across samples.
    """
    others = [f.verts for f in lf.facets if f is not facet]
    xs, vm, vp = facet_traces(lf.u, lf.scaffold, target, lf.y, lf.u_star,
                              lf.w_anchor, facet.verts, facet.normal, others,
                              n_samples=samples)
    labels = [target.nearest_deck(vm[i], vp[i]) for i in range(xs.shape[0])]
    if any(l != labels[0] for l in labels):
        raise InvalidArgumentError("facet label not constant; split required")
    gj = float(np.max(np.atleast_1d(target.dist_e(vm, vp))))
    return {"points": xs, "minus": vm, "plus": vp,
            "label": labels[0], "max_geo_jump": gj}


def _canonicalize_facet(target, normal, vm, vp, label):
    """Orient the facet normal so the label takes its preferred name."""
    name = label.name
    flip = name.startswith("-") and name != "-1"
    if label.kind == "int" and label.payload < 0:
        flip = True
    if label.kind == "int2" and label.payload < (0, 0):
        flip = True
    if flip:
        return -normal, vp, vm, target.deck_inverse(label)
    return normal, vm, vp, label


def build_jump_complex(u, sc, target, y, u_star, w_anchor, carriers,
                       approximate=False, max_splits=3, step_cap=0.5,
                       strict=True):
    """Assemble labelled jump facets from carrier segments.

    Facets whose label is not constant across trace samples are split (up
    to max_splits rounds); facets with an identity label and negligible
    jump are dropped.
    """
    all_vert_sets = [c[1] for c in carriers]
    facets = []
    queue = []
    for c in carriers:
        si, verts = c[0], c[1]
        core = c[2] if len(c) > 2 else False
        queue.append((si, verts, core, 0))
    dropped = []
    h_grid = float(np.min(u.tri.h))
    while queue:
        si, verts, core, depth = queue.pop()
        if verts.shape[0] < 2:
            continue
        a, b = verts[0], verts[-1]
        seg_len = float(np.linalg.norm(b - a))
        if seg_len <= 1e-10:
            continue
        normal = _facet_normal_d2(a, b)
        others = [V for V in all_vert_sets if V is not verts]
        xs = None
        last_err = None
        if approximate:
            # the marched chord deviates O(h^2) from the true curve, so
            # offsets are tied to the cell size, capped by the clearance
            # to the other carriers
            mid = 0.5 * (a + b)
            clear = float(_dist_to_facet_sets(mid[None, :], others)[0]) \
                if others else np.inf
            base_eps = min(h_grid / 4.0, clear / 3.0)
            trials = [base_eps, base_eps / 2.0, base_eps * 2.0]
        else:
            trials = [None]
        for eps_over in trials:
            try:
                xs, vm, vp = facet_traces(u, sc, target, y, u_star, w_anchor,
                                          np.vstack([a, b]), normal, others,
                                          step_cap=step_cap,
                                          eps_override=eps_over)
                break
            except NearJumpError as e:
                last_err = e
        if xs is None:
            if core or approximate:
                dropped.append((si, verts))
                continue
            raise last_err
        labels = [target.nearest_deck(vm[i], vp[i]) for i in range(xs.shape[0])]
        if any(l != labels[0] for l in labels) and not core:
            if depth >= max_splits:
                if strict:
                    raise InvalidArgumentError(
                        "facet label not constant after splitting")
                core = True
            else:
                mid = 0.5 * (a + b)
                queue.append((si, np.vstack([a, mid]), core, depth + 1))
                queue.append((si, np.vstack([mid, b]), core, depth + 1))
                continue
        label = labels[0]
        gj = float(np.max(np.atleast_1d(target.dist_e(vm, vp))))
        if label.is_identity() and gj <= 1e-7:
            continue  # not a jump facet
        normal, vm, vp, label = _canonicalize_facet(target, normal, vm, vp,
                                                    label)
        facets.append(JumpFacet(int(si), np.vstack([a, b]), normal, seg_len,
                                label, xs, vm, vp, gj,
                                approximate=approximate, core=bool(core)))
    return facets


# ----------------------------------------------------------------------
# cells and quadrature (d = 2 exact clipping)


def _clip_poly_halfplane(poly, n, c):
    out = []
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        dp, dq = n @ p - c, n @ q - c
        if dp <= 1e-12:
            out.append(p)
        if (dp < -1e-12 and dq > 1e-12) or (dp > 1e-12 and dq < -1e-12):
            t = dp / (dp - dq)
            out.append(p + t * (q - p))
    return out


def _poly_area(poly):
    if len(poly) < 3:
        return 0.0
    P = np.array(poly)
    x, y = P[:, 0], P[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2)


def _cells_of_simplex(tri_coords, cuts):
    """Split a triangle into convex cells by the supporting lines of its
    cut segments; over-splitting beyond segment endpoints is harmless for
    quadrature since the integrand is smooth there."""
    polys = [[tri_coords[i] for i in range(3)]]
    for (a, b) in cuts:
        n = _facet_normal_d2(a, b)
        c = float(n @ a)
        new = []
        for poly in polys:
            for piece in (_clip_poly_halfplane(poly, n, c),
                          _clip_poly_halfplane(poly, -n, -c)):
                if _poly_area(piece) > 1e-14:
                    new.append(piece)
        polys = new
    return polys


def _quad_nodes_of_cells(polys):
    """Order-2 (edge-midpoint) rule on a fan triangulation of each cell."""
    nodes, weights = [], []
    for poly in polys:
        P = np.array(poly)
        for i in range(1, len(poly) - 1):
            tri = np.array([P[0], P[i], P[i + 1]])
            area = _poly_area(tri.tolist())
            if area <= 1e-14:
                continue
            mids = 0.5 * (tri + np.roll(tri, -1, axis=0))
            for k in range(3):
                nodes.append(mids[k])
                weights.append(area / 3.0)
    if not nodes:
        return np.zeros((0, 2)), np.zeros(0)
    return np.array(nodes), np.array(weights)


def _grad_norms(u, sc, y, node_x, node_simplex):
    """|grad(rho_y o u)| at nodes by FD along the simplex Jacobian."""
    J = u.gradients()
    z0 = u.eval(node_x)
    d = u.tri.d
    n = z0.shape[0]
    guard = _rho_guard(sc, y)
    base, okb, _ = guard(z0)
    gsq = np.zeros(n)
    ok_all = okb.copy()
    for k in range(d):
        dirs = J[node_simplex][:, :, k]
        vp, okp, _ = guard(z0 + _FD * dirs)
        vmn, okm, _ = guard(z0 - _FD * dirs)
        ok = okp & okm
        ok_all &= ok
        col = np.zeros_like(vp)
        col[ok] = (vp[ok] - vmn[ok]) / (2 * _FD)
        gsq += (col ** 2).sum(axis=1)
    return np.sqrt(gsq), ok_all


# ----------------------------------------------------------------------
# main assembly


@dataclass
class LiftConfig:
    trials: int = 32
    seed: int = 0
    step_cap: float = 0.5
    strict: bool = True
    normalize: bool = True
    max_label_splits: int = 3
    anchor_offset: object = None   # DeckElement applied to the default anchor
    margin_clearance: float = 0.05
    fixed_shift: object = None     # reuse a shift (refinement studies)
    fixed_anchor: object = None    # reuse an anchor point of N


def _default_anchor(u, target):
    mean = u.values.mean(axis=0)
    try:
        p = target.tube_project(mean)
        if np.all(np.isfinite(p)) and (not hasattr(target, "margin")
                                       or float(np.atleast_1d(
                                           target.margin(mean[None, :]))[0]) > 1e-6):
            return p
    except Exception:
        pass
    return target.tube_project(u.values[0])


def _select_shift_sampled(u, sc, target, u_star, w_anchor, trials, seed,
                          clearance, step_cap):
    """Margin-clearance acceptance for non-polyhedral scaffolds.

    A draw is accepted when every vertex value (and the anchor) keeps
    margin clearance from the projection's cut locus and the vertical
    homotopy path of every vertex lifts cleanly; failing draws are
    non-generic and redrawn.
    """
    ys = draw_shifts(sc.sigma, trials, seed, target.m)
    vals = np.vstack([u.values, u_star[None, :]])
    rejects = []
    for i in range(trials):
        y = ys[i]
        if float(np.min(sc.dist_xs(vals - y))) <= clearance:
            rejects.append((i, "margin"))
            continue
        lifts, st = _lift_linear_paths(target, _rho_guard(sc, y), u.values,
                                       u_star, w_anchor, step_cap=step_cap)
        if np.any(st != 0):
            rejects.append((i, f"{int(np.sum(st != 0))} vertex paths"))
            continue
        ss = SingularSets(y, u.tri.d, [], [], 0.0, True, approximate=True)
        return y, ss, lifts, {"accepted_index": i, "scores": [],
                              "median": np.nan, "mode": "sampled",
                              "rejects": rejects}
    raise SelectionFailure("no liftable shift found in the trial budget")


def lift_pa_field(u, sc, target=None, cfg=None):
    """Full lifting pipeline for one piecewise-affine field.

    Select a generic shift, lift every triangulation vertex and every
    quadrature node through the homotopy cylinder, extract the jump
    complex with deck labels, assemble the BV record, and normalize into
    the fundamental domain.
    """
    cfg = cfg or LiftConfig()
    if target is None:
        target = sc.target
    if np.max(np.abs(u.values)) > sc.lam + 1e-9:
        raise InvalidArgumentError("field leaves Q^m_Lambda")
    tri = u.tri
    d = tri.d
    if cfg.fixed_anchor is not None:
        u_star = np.asarray(cfg.fixed_anchor, dtype=float).ravel()
    else:
        u_star = _default_anchor(u, target)
    w_anchor = np.asarray(target.fiber_lift(u_star), dtype=float).ravel()
    if cfg.anchor_offset is not None:
        w_anchor = np.asarray(
            target.deck_apply(cfg.anchor_offset, w_anchor), dtype=float).ravel()

    if sc.xs_polyhedral:
        if cfg.fixed_shift is not None:
            from .transversal import singular_sets as _ss
            y = np.asarray(cfg.fixed_shift, dtype=float).ravel()
            ss = _ss(u, u_star, sc, y)
            if not ss.certificate:
                raise InvalidArgumentError(
                    f"fixed shift is not transversal: {ss.reject_reason}")
            diag = {"accepted_index": None, "scores": [], "median": np.nan,
                    "mode": "fixed"}
        else:
            y, ss, diag = select_shift(u, u_star, sc, trials=cfg.trials,
                                       seed=cfg.seed)
        approximate = False
        guard = _rho_guard(sc, y)
        vertex_lifts, vstat = _lift_linear_paths(
            target, guard, u.values, u_star, w_anchor, step_cap=cfg.step_cap)
        if np.any(vstat == 3):
            raise LiftFailure("vertex lift exceeded the step budget")
        bad_v = np.where(vstat == 2)[0]
        if bad_v.size:
            raise NearJumpError(
                f"{bad_v.size} vertex lift(s) too close to the jump set")
    else:
        if cfg.fixed_shift is not None:
            y = np.asarray(cfg.fixed_shift, dtype=float).ravel()
            vals = np.vstack([u.values, u_star[None, :]])
            if float(np.min(sc.dist_xs(vals - y))) <= cfg.margin_clearance:
                raise InvalidArgumentError("fixed shift lacks margin clearance")
            vertex_lifts, vst = _lift_linear_paths(
                target, _rho_guard(sc, y), u.values, u_star, w_anchor,
                step_cap=cfg.step_cap)
            if np.any(vst != 0):
                raise InvalidArgumentError(
                    "fixed shift cannot lift every vertex path")
            ss = SingularSets(y, d, [], [], 0.0, True, approximate=True)
            diag = {"accepted_index": None, "scores": [], "median": np.nan,
                    "mode": "fixed"}
        else:
            y, ss, vertex_lifts, diag = _select_shift_sampled(
                u, sc, target, u_star, w_anchor, cfg.trials, cfg.seed,
                cfg.margin_clearance, cfg.step_cap)
        approximate = True
        guard = _rho_guard(sc, y)

    # jump carriers
    if approximate:
        carriers = sampled_jump_carriers(u, sc, target, y, vertex_lifts,
                                         w_anchor, u_star,
                                         step_cap=cfg.step_cap)
    else:
        carriers = [(si, verts, False)
                    for (si, verts) in exact_jump_carriers(ss)]
    if d != 2 and carriers and d != 1:
        raise InvalidArgumentError("jump complex assembly implemented for d <= 2")

    if d == 1:
        facets = _facets_d1(u, sc, target, y, u_star, w_anchor, carriers,
                            approximate, cfg)
    else:
        facets = build_jump_complex(u, sc, target, y, u_star, w_anchor,
                                    carriers, approximate=approximate,
                                    max_splits=cfg.max_label_splits,
                                    step_cap=cfg.step_cap, strict=cfg.strict)

    # quadrature cells clipped by the jump complex
    cuts_by_simplex = {}
    for f in facets:
        cuts_by_simplex.setdefault(f.simplex, []).append((f.verts[0],
                                                          f.verts[-1]))
    node_x, node_w, node_s = [], [], []
    if d == 2:
        for si in range(tri.n_simplices):
            coords = tri.simplex_coords(si)
            cuts = cuts_by_simplex.get(si, [])
            if cuts:
                polys = _cells_of_simplex(coords, cuts)
            else:
                polys = [[coords[i] for i in range(3)]]
            nx, nw = _quad_nodes_of_cells(polys)
            if nx.shape[0] == 0:
                continue
            # nudge nodes off the cut lines
            if cuts:
                dmin = _dist_to_facet_sets(nx, [np.vstack(c) for c in cuts])
                close = dmin < 1e-9
                if close.any():
                    cen = coords.mean(axis=0)
                    nx[close] = nx[close] + 1e-7 * (cen - nx[close])
            node_x.append(nx)
            node_w.append(nw)
            node_s.append(np.full(nx.shape[0], si))
    elif d == 1:
        for si in range(tri.n_simplices):
            coords = tri.simplex_coords(si)
            a, b = coords[0, 0], coords[1, 0]
            cuts = sorted([float(f.verts[0][0]) for f in facets
                           if f.simplex == si])
            pts = [a] + [c for c in cuts if a < c < b] + [b]
            for kk in range(len(pts) - 1):
                lo_, hi_ = pts[kk], pts[kk + 1]
                if hi_ - lo_ < 1e-12:
                    continue
                g = 0.5 / np.sqrt(3.0)
                for xi_ in (0.5 - g, 0.5 + g):
                    node_x.append(np.array([[lo_ + xi_ * (hi_ - lo_)]]))
                    node_w.append(np.array([(hi_ - lo_) / 2.0]))
                    node_s.append(np.array([si]))
    node_x = np.concatenate(node_x, axis=0) if node_x else np.zeros((0, d))
    node_w = np.concatenate(node_w) if node_w else np.zeros(0)
    node_s = np.concatenate(node_s) if node_s else np.zeros(0, dtype=int)

    # node lifts and gradient norms
    zn = u.eval(node_x) if node_x.shape[0] else np.zeros((0, target.m))
    node_lift, nstat = _lift_linear_paths(target, guard, zn, u_star, w_anchor,
                                          step_cap=cfg.step_cap)
    retry = np.where(nstat != 0)[0]
    dropped_nodes = 0
    if retry.size:
        cents = tri.vertices[tri.simplices[node_s[retry]]].mean(axis=1)
        node_x[retry] = node_x[retry] + 0.25 * (cents - node_x[retry])
        zr = u.eval(node_x[retry])
        lr, sr = _lift_linear_paths(target, guard, zr, u_star, w_anchor,
                                    step_cap=cfg.step_cap)
        node_lift[retry] = lr
        nstat[retry] = sr
        if np.any(nstat != 0):
            if not approximate:
                raise NearJumpError("quadrature node lift failed after nudging")
            # approximate path: drop nodes pinched between the marched
            # chord and the true curve; their weight is O(h^2) each
            bad = nstat != 0
            dropped_nodes = int(bad.sum())
            node_w[bad] = 0.0
            node_lift[bad] = w_anchor
    node_grad, gok = _grad_norms(u, sc, y, node_x, node_s) if node_x.shape[0] \
        else (np.zeros(0), np.zeros(0, dtype=bool))
    if node_x.shape[0] and not gok.all():
        node_grad[~gok] = 0.0

    lf = LiftedField(target.id, np.asarray(y, dtype=float), u_star, w_anchor,
                     u, ss, vertex_lifts, node_x, node_w, node_s, node_lift,
                     node_grad, facets, scaffold=sc,
                     diagnostics={"shift": diag,
                                  "approximate": approximate,
                                  "dropped_nodes": dropped_nodes})
    lf.bv = bv_measure(lf)
    if cfg.normalize:
        lf = normalize(lf, target)
    _run_strict_checks(lf, cfg)
    return lf


def _facets_d1(u, sc, target, y, u_star, w_anchor, carriers, approximate, cfg):
    facets = []
    for c in carriers:
        si, verts = c[0], c[1]
        x0 = verts[0]
        eps = 1e-5
        xs = np.array([x0])
        pts = np.array([x0 + eps, x0 + eps / 2, x0 - eps, x0 - eps / 2])
        z = u.eval(pts.reshape(-1, 1))
        lifts, st = _lift_linear_paths(target, _rho_guard(sc, y), z, u_star,
                                       w_anchor, step_cap=cfg.step_cap)
        if np.any(st != 0):
            continue
        vp = (2 * lifts[1] - lifts[0])[None, :]
        vm = (2 * lifts[3] - lifts[2])[None, :]
        label = target.nearest_deck(vm[0], vp[0])
        gj = float(np.atleast_1d(target.dist_e(vm, vp))[0])
        if label.is_identity() and gj <= 1e-7:
            continue
        normal = np.array([1.0])
        normal, vm, vp, label = _canonicalize_facet(target, normal, vm, vp,
                                                    label)
        facets.append(JumpFacet(int(si), verts.reshape(1, 1), normal, 1.0,
                                label, xs.reshape(1, 1), vm, vp, gj,
                                approximate=approximate))
    return facets


def bv_measure(lf, quad_order=2):
    """Assemble the BV record from node quadrature and facet traces.

    ac: quadrature of |grad(rho_y o u)| over cells clipped by T_y (equal
    to |grad v| off the jump set); jump: facet quadrature of the ambient
    trace gap; geodesic_jump: same with the cover's geodesic distance;
    Cantor part identically zero.
    """
    ac = float(np.sum(lf.node_w * lf.node_grad))
    jump = 0.0
    geo = 0.0
    t = lf.target
    for f in lf.facets:
        gaps = np.linalg.norm(f.traces_plus - f.traces_minus, axis=1)
        ggaps = np.atleast_1d(t.dist_e(f.traces_minus, f.traces_plus))
        if f.trace_points.shape[0] >= 3:
            w = np.array([0.5, 0.0, 0.5])  # Gauss nodes carry the weight
            jump += f.measure * float(w @ gaps)
            geo += f.measure * float(w @ ggaps)
        else:
            jump += f.measure * float(gaps.mean())
            geo += f.measure * float(ggaps.mean())
    return BVRecord(ac=ac, jump=float(jump), geodesic_jump=float(geo))


def normalize(lf, target=None):
    """Shift the lifting into the fundamental domain.

    A geodesic-median representative of the node values picks the deck
    element; its inverse is applied to every lifted value and, by
    conjugation, to every facet label. Measures are unchanged since deck
    elements act by isometries.
    """
    t = target or lf.target
    pool = lf.vertex_lifts if lf.vertex_lifts.shape[0] else lf.node_lift
    if pool.shape[0] == 0:
        return lf
    w_star = np.median(pool, axis=0)
    phi = t.normalize_elem(w_star)
    if phi.is_identity():
        return lf
    inv = t.deck_inverse(phi)

    def mv(w):
        return np.atleast_2d(t.deck_apply(inv, w))

    new_facets = []
    for f in lf.facets:
        lab = t.deck_compose(t.deck_compose(inv, f.label), phi)
        new_facets.append(replace(f, traces_minus=mv(f.traces_minus),
                                  traces_plus=mv(f.traces_plus), label=lab))
    return replace(lf, vertex_lifts=mv(lf.vertex_lifts),
                   node_lift=mv(lf.node_lift),
                   w_anchor=np.asarray(t.deck_apply(inv, lf.w_anchor)).ravel(),
                   facets=new_facets)


def loop_monodromy(lf, loop, tol=1e-9):
    """Ordered product of deck labels along a polygonal loop.

    Crossing a facet with the facet normal contributes the inverse label,
    against it the label; products compose in traversal order (first
    crossing outermost). Loops touching facet endpoints or S_y strata are
    rejected.
    """
    t = lf.target
    if isinstance(loop, (list, tuple)) and loop and isinstance(loop[0], tuple) \
            and len(loop[0]) == 2 and np.isscalar(loop[0][1]):
        crossings = [(0.0, f_idx, sgn) for (f_idx, sgn) in loop]
    else:
        pts = np.atleast_2d(np.asarray(loop, dtype=float))
        if np.linalg.norm(pts[0] - pts[-1]) > 1e-12:
            pts = np.vstack([pts, pts[0]])
        sy_verts = [m.verts for m in getattr(lf.ss, "s_members", [])]
        crossings = []
        for i in range(pts.shape[0] - 1):
            p, q = pts[i], pts[i + 1]
            seg = q - p
            for fi, f in enumerate(lf.facets):
                a, b = f.verts[0], f.verts[-1]
                M = np.stack([seg, -(b - a)], axis=1)
                det = np.linalg.det(M)
                if abs(det) < 1e-14:
                    continue
                st = np.linalg.solve(M, a - p)
                tpar, spar = st[0], st[1]
                if -tol < tpar < 1 + tol and -tol < spar < 1 + tol:
                    if spar < 1e-6 or spar > 1 - 1e-6:
                        raise IllPosedLoopError(
                            "loop crosses a facet at its boundary")
                    sgn = 1.0 if float(seg @ f.normal) > 0 else -1.0
                    crossings.append((i + tpar, fi, sgn))
            if sy_verts:
                dmin = _dist_to_facet_sets(
                    0.5 * (p + q)[None, :], sy_verts)
                seg_pts = p[None, :] + np.linspace(0, 1, 16)[:, None] * seg
                if float(np.min(_dist_to_facet_sets(seg_pts, sy_verts))) < 1e-6:
                    raise IllPosedLoopError("loop touches the S_y stratum")
        crossings.sort(key=lambda c: c[0])
    g = _identity_of(t)
    for (_, fi, sgn) in crossings:
        lab = lf.facets[fi].label
        step = t.deck_inverse(lab) if sgn > 0 else lab
        g = t.deck_compose(g, step)
    return g


def _identity_of(t):
    return t.deck_identity()


def sbv_check(lf, lip_cap=None):
    """Verify the SBV structure of the lifted field.

    The total variation must equal ac + jump exactly with zero Cantor
    part, and the lift must be locally Lipschitz off the jump set (a
    finite-difference Lipschitz statistic over node pairs within each
    cell stays finite and below the cap when given).
    """
    bv = lf.bv
    identity_ok = (bv.total == bv.ac + bv.jump) and bv.cantor == 0.0
    lip = 0.0
    t = lf.target
    for si in np.unique(lf.node_simplex):
        sel = lf.node_simplex == si
        X = lf.node_x[sel]
        Wv = lf.node_lift[sel]
        if X.shape[0] < 2:
            continue
        for i in range(min(X.shape[0], 6)):
            dx = np.linalg.norm(X - X[i], axis=1)
            dw = np.atleast_1d(t.dist_e(Wv, np.broadcast_to(Wv[i], Wv.shape)))
            ok = dx > 1e-9
            if ok.any():
                lip = max(lip, float(np.max(dw[ok] / dx[ok])))
    lip_ok = np.isfinite(lip) and (lip_cap is None or lip <= lip_cap)
    return {"identity_ok": bool(identity_ok),
            "cantor": bv.cantor,
            "lipschitz_stat": lip,
            "lipschitz_ok": bool(lip_ok),
            "passed": bool(identity_ok and lip_ok)}


def lifting_identity_residual(lf, n_check=None):
    """sup |pi(v) - rho_y(u)| over stored nodes and vertices."""
    t = lf.target
    sc = lf.scaffold
    res = 0.0
    live = lf.node_w > 0 if lf.node_w.size else np.zeros(0, dtype=bool)
    for X, Wv in ((lf.u.tri.vertices, lf.vertex_lifts),
                  (lf.node_x[live], lf.node_lift[live])):
        if X.shape[0] == 0:
            continue
        if n_check is not None and X.shape[0] > n_check:
            sel = np.linspace(0, X.shape[0] - 1, n_check).astype(int)
            X, Wv = X[sel], Wv[sel]
        z = lf.u.eval(X)
        vals, ok, _ = eval_retraction_guarded(sc, lf.y, z)
        pv = np.atleast_2d(t.project_cover(Wv))
        if ok.any():
            res = max(res, float(np.max(np.linalg.norm(pv[ok] - vals[ok],
                                                       axis=1))))
    return res


def _run_strict_checks(lf, cfg):
    checks = {}
    checks["lift_identity"] = lifting_identity_residual(lf, n_check=512)
    cj = lf.scaffold.certified.get("c_jump", np.inf)
    worst = max((f.max_geo_jump for f in lf.facets), default=0.0)
    checks["max_geo_jump"] = worst
    checks["c_jump"] = cj
    checks["jump_bound_ok"] = bool(worst <= cj + 1e-9)
    checks["identity_residual_ok"] = bool(checks["lift_identity"] <= 1e-6)
    lf.diagnostics["checks"] = checks
    if cfg.strict:
        if not checks["jump_bound_ok"]:
            raise BoundViolationError(
                f"facet geodesic jump {worst:.4g} exceeds certified {cj:.4g}")
        if not checks["identity_residual_ok"]:
            raise BoundViolationError(
                f"lifting identity residual {checks['lift_identity']:.3g}")
    return checks
