"""Generic shift selection and polyhedral singular sets of the homotopy.

For a piecewise-affine u and anchor u_*, the straight-line homotopy
U(t, x) = (1 - t) u(x) + t u_* has, per simplex H and singular-set member
K, the preimage {(t, x) : U(t, x) - y in K}. In the projective variable
s = 1 / (1 - t) every constraint of K becomes affine in (s, x), so the
preimage is an H-polytope there; its spatial shadow (drop s, via
Fourier-Motzkin) is the candidate jump set T_y, and the s = 1 slice is
S_y. The shift y is drawn at random and accepted by a median rule, making
the averaged bounds concrete.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, SelectionFailure
from .polygeom import EPS_GEO, HPolytope, fm_project, hull_measure
from .scaffold import eval_retraction_guarded

_FD = 1e-6


@dataclass
class Homotopy:
    """Straight-line homotopy from u to the constant anchor u_*."""

    u: object  # PiecewiseAffineMap
    u_star: np.ndarray

    def __post_init__(self):
        self.u_star = np.asarray(self.u_star, dtype=float).ravel()

    def eval(self, t, x):
        """U(t, x), affine in x per simplex and affine in t."""
        ux = self.u.eval(x)
        t = np.asarray(t, dtype=float)
        if ux.ndim == 1:
            return (1.0 - float(t)) * ux + float(t) * self.u_star
        return (1.0 - t)[:, None] * ux + t[:, None] * self.u_star[None, :]

    @staticmethod
    def tau(tx):
        return np.asarray(tx)[..., 1:]

    @staticmethod
    def xi(tx):
        return np.asarray(tx)[..., 0]


@dataclass
class TMember:
    """One polyhedral piece of T_y with its provenance."""

    simplex: int
    xs_index: int
    verts: np.ndarray          # vertices of the spatial shadow, (k, d)
    dim: int
    measure: float
    poly: object = None        # HPolytope built via fm_project (exact path)
    sx_verts: np.ndarray = None


@dataclass
class SingularSets:
    """S_y and T_y for one shift, with a transversality certificate."""

    y: np.ndarray
    d: int
    t_members: list
    s_members: list
    measure_t: float
    certificate: bool
    approximate: bool = False
    reject_reason: str = ""
    diagnostics: dict = field(default_factory=dict)

    def t_polychain(self):
        from .polygeom import PolyChain
        polys = [m.poly for m in self.t_members if m.poly is not None
                 and m.dim == self.d - 1]
        if not polys:
            return None
        return PolyChain(polys, intrinsic_dim=self.d - 1)


def _simplex_bary(u, idx):
    """Barycentric inequality rows for simplex idx: lam(x) >= 0."""
    Minv = u.bary_matrices()[idx]
    # lam = Minv @ [1, x]; inequality -lam <= 0
    A = -Minv[:, 1:]
    b = Minv[:, 0]
    return A, b


def _segment_triangle_overlap(P, Q, tri_pts):
    """Vectorized 2-d segment vs triangle intersection test.

    tri_pts has shape (ns, 3, 2); returns a boolean mask over simplices.
    Used to prefilter simplices whose value-image can meet the cone
    frustum when the singular member is a single point (m = 2).
    """
    A, B, C = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]

    def orient(a, b, c):
        return ((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    def inside(p):
        d1 = orient(A, B, p)
        d2 = orient(B, C, p)
        d3 = orient(C, A, p)
        neg = (d1 < 1e-12) & (d2 < 1e-12) & (d3 < 1e-12)
        pos = (d1 > -1e-12) & (d2 > -1e-12) & (d3 > -1e-12)
        return neg | pos

    Pb = np.broadcast_to(P, A.shape)
    Qb = np.broadcast_to(Q, A.shape)
    hit = inside(Pb) | inside(Qb)
    for (V1, V2) in ((A, B), (B, C), (C, A)):
        o1 = orient(Pb, Qb, V1) * orient(Pb, Qb, V2)
        o2 = orient(V1, V2, Pb) * orient(V1, V2, Qb)
        hit |= (o1 <= 1e-12) & (o2 <= 1e-12)
    return hit


def _point_box_dist(p, lo, hi):
    q = np.clip(p, lo, hi)
    return float(np.linalg.norm(p - q))


def _sx_polytope(AH, bH, bary_A, bary_b, k_lo, k_hi, u_star, y, s_max):
    """Preimage polytope in (s, x) coordinates for one simplex and one
    axis-box member of the singular set."""
    m = u_star.size
    d = AH.shape[1]
    rows, rhs = [], []
    eqs, erhs = [], []
    uy = u_star - y
    for i in range(m):
        n = np.zeros(m)
        n[i] = 1.0
        if k_hi[i] - k_lo[i] <= EPS_GEO:
            c = 0.5 * (k_lo[i] + k_hi[i])
            row = np.concatenate([[n @ uy - c], n @ AH])
            eqs.append(row)
            erhs.append(n @ u_star - n @ bH)
        else:
            row = np.concatenate([[n @ uy - k_hi[i]], n @ AH])
            rows.append(row)
            rhs.append(n @ u_star - n @ bH)
            row = np.concatenate([[-(n @ uy) + k_lo[i]], -(n @ AH)])
            rows.append(row)
            rhs.append(-(n @ u_star) + n @ bH)
    # simplex constraints (x only)
    for i in range(bary_A.shape[0]):
        rows.append(np.concatenate([[0.0], bary_A[i]]))
        rhs.append(bary_b[i])
    # s in [1, s_max]
    e0 = np.zeros(d + 1)
    e0[0] = 1.0
    rows.append(e0)
    rhs.append(s_max)
    rows.append(-e0)
    rhs.append(-1.0)
    return HPolytope(np.array(rows), np.array(rhs),
                     np.array(eqs).reshape(-1, d + 1), np.array(erhs))


def _min_dist_to_hull(pts, verts):
    """Min distance from points to the segment spanned by a 1-d vertex set
    (or to the point itself for 0-d sets)."""
    if verts.shape[0] == 1:
        return float(np.min(np.linalg.norm(pts - verts[0], axis=1)))
    mean = verts.mean(axis=0)
    U, S, Vt = np.linalg.svd(verts - mean, full_matrices=False)
    tpar = (verts - mean) @ Vt[0]
    a = verts[np.argmin(tpar)]
    b = verts[np.argmax(tpar)]
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-30:
        return float(np.min(np.linalg.norm(pts - a, axis=1)))
    tt = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    proj = a[None, :] + tt[:, None] * ab[None, :]
    return float(np.min(np.linalg.norm(pts - proj, axis=1)))


def _member_dim(verts, tol=1e-7):
    if verts.shape[0] == 0:
        return -1
    if verts.shape[0] == 1:
        return 0
    return int(np.linalg.matrix_rank(verts - verts[0], tol=tol))


def singular_sets(u, u_star, sc, y, build_hreps=True, cert_tol=EPS_GEO):
    """Compute S_y, T_y as explicit polyhedral chains for one shift.

    Requires a polyhedral singular set on the scaffold (exact path,
    ambient dimension <= 4). Each top simplex H and each singular-set
    member K contribute the polytope (U - y)^{-1}(K) built in projective
    (s, x) coordinates and shadow-projected via fm_project. The
    certificate is true iff all members have generic dimension, no member
    hugs a simplex facet, and neither the vertex values nor the anchor
    sit within tolerance of the shifted singular set.
    """
    if not sc.xs_polyhedral:
        raise InvalidArgumentError(
            "exact singular sets need a polyhedral scaffold; "
            "use the sampled fallback in liftcore")
    y = np.asarray(y, dtype=float).ravel()
    u_star = np.asarray(u_star, dtype=float).ravel()
    tri = u.tri
    d = tri.d
    m = u_star.size
    if np.max(np.abs(u.values)) > sc.lam + 1e-9:
        raise InvalidArgumentError("field leaves Q^m_Lambda")

    lo, hi = sc.xs_boxes
    n_xs = lo.shape[0]
    cert = True
    reason = ""

    # clearance of vertex values and anchor from X + y
    targets = np.vstack([u.values, u_star[None, :]])
    dmin = np.inf
    for i in range(n_xs):
        q = np.clip(targets - y, lo[i], hi[i])
        dd = np.linalg.norm(targets - y - q, axis=1).min()
        dmin = min(dmin, dd)
    if dmin <= cert_tol:
        cert = False
        reason = "vertex or anchor value within tolerance of X + y"

    # per-simplex affine data and prefilter boxes
    J = u.gradients()  # (ns, m, d)
    V0 = u.values[tri.simplices[:, 0]]
    X0 = tri.vertices[tri.simplices[:, 0]]
    bbox = u.image_bounds()  # (ns, 2, m)
    r_u = u.image_radius()

    t_members, s_members = [], []
    total = 0.0
    for k in range(n_xs):
        delta = _point_box_dist(u_star - y, lo[k], hi[k])
        if delta <= cert_tol:
            cert = False
            reason = "anchor meets a singular member"
            continue
        s_max = (r_u + np.linalg.norm(u_star) + 1.0) / delta + 1.0
        # bounding box of the cone frustum over K + y seen from u_*
        corners = []
        free = hi[k] - lo[k] > EPS_GEO
        base = 0.5 * (lo[k] + hi[k])
        n_free = int(free.sum())
        for combo in itertools.product((0, 1), repeat=n_free):
            c = base.copy()
            c[free] = np.where(np.array(combo) > 0, hi[k][free], lo[k][free])
            corners.append(c + y)
        corners = np.array(corners)
        ends = np.concatenate([
            u_star + 1.0 * (corners - u_star),
            u_star + s_max * (corners - u_star)], axis=0)
        fr_lo, fr_hi = ends.min(axis=0), ends.max(axis=0)
        overlap = np.all((bbox[:, 1, :] >= fr_lo - 1e-12)
                         & (bbox[:, 0, :] <= fr_hi + 1e-12), axis=1)
        if m == 2 and d == 2 and n_free == 0:
            # the frustum is a segment; test it against the value-image
            # triangles exactly
            P = ends[0]
            Q = ends[1]
            tri_pts = u.values[tri.simplices]
            overlap &= _segment_triangle_overlap(P, Q, tri_pts)
        for si in np.where(overlap)[0]:
            AH = J[si]
            bH = V0[si] - AH @ X0[si]
            bA, bb = _simplex_bary(u, si)
            sx = _sx_polytope(AH, bH, bA, bb, lo[k], hi[k], u_star, y, s_max)
            sxv = sx.vertices()
            if sxv.shape[0] == 0:
                continue
            shadow = sxv[:, 1:]
            dim_t = _member_dim(shadow)
            if dim_t > d - 1:
                cert = False
                reason = "T_y member of non-generic dimension"
            # degenerate contact with a simplex facet: every vertex of the
            # member on one facet hyperplane
            lam = shadow @ (-bA.T) + bb[None, :]
            if dim_t >= 1 and np.any(np.all(np.abs(lam) <= 1e-9, axis=0)):
                cert = False
                reason = "T_y member contained in a simplex facet"
            if dim_t >= 1:
                corner = tri.simplex_coords(si)
                if _min_dist_to_hull(corner, shadow) <= cert_tol:
                    cert = False
                    reason = "T_y member touches a triangulation vertex"
            meas = hull_measure(shadow, d - 1) if dim_t == d - 1 else 0.0
            poly = None
            if build_hreps:
                poly = fm_project(sx, 0, prune=False)
            t_members.append(TMember(int(si), int(k), shadow, dim_t, meas,
                                     poly, sxv))
            total += meas
            # S_y: the s = 1 slice, equivalently the direct preimage of K
            rows, rhs, eqs, erhs = [], [], [], []
            for i in range(m):
                n = np.zeros(m)
                n[i] = 1.0
                if hi[k][i] - lo[k][i] <= EPS_GEO:
                    eqs.append(n @ AH)
                    erhs.append(0.5 * (lo[k][i] + hi[k][i]) + y[i] - n @ bH)
                else:
                    rows.append(n @ AH)
                    rhs.append(hi[k][i] + y[i] - n @ bH)
                    rows.append(-(n @ AH))
                    rhs.append(-(lo[k][i] + y[i]) + n @ bH)
            for i in range(bA.shape[0]):
                rows.append(bA[i])
                rhs.append(bb[i])
            spoly = HPolytope(np.array(rows), np.array(rhs),
                              np.array(eqs).reshape(-1, d), np.array(erhs))
            sv = spoly.vertices()
            if sv.shape[0]:
                dim_s = _member_dim(sv)
                if dim_s > d - 2:
                    cert = False
                    reason = "S_y member of non-generic dimension"
                s_members.append(TMember(int(si), int(k), sv, dim_s, 0.0,
                                         spoly if build_hreps else None))
    return SingularSets(y, d, t_members, s_members, float(total), cert,
                        reject_reason=reason)


def in_forbidden_set(h, sc, y, t, x):
    """Membership test for the forbidden cylinder set Sigma_y.

    True iff the segment {U(s, x) - y : s in [t, 1]} meets the singular
    set; exact interval arithmetic per axis-box member.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    p = h.eval(t, x) - y
    q = h.u_star - y
    lo, hi = sc.xs_boxes
    v = q - p
    for k in range(lo.shape[0]):
        t0, t1 = 0.0, 1.0
        feas = True
        for i in range(p.size):
            a, b_ = p[i], v[i]
            l, hgh = lo[k][i], hi[k][i]
            if abs(b_) <= 1e-14:
                if a < l - EPS_GEO or a > hgh + EPS_GEO:
                    feas = False
                    break
                continue
            ta, tb = (l - a) / b_, (hgh - a) / b_
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1 + 1e-12:
                feas = False
                break
        if feas and t0 <= t1 + 1e-12:
            return True
    return False


# ----------------------------------------------------------------------
# gradient scoring and shift selection


def grad_l1_of_projection(u, sc, y, fd=_FD):
    """Quadrature estimate of the L1 norm of grad(rho_y o u).

    Centroid rule per simplex; the Jacobian of rho_y at u(centroid) is
    taken by central finite differences along the columns of the simplex
    Jacobian (exact chain rule for affine u). Simplices whose centroid
    value falls within tolerance of X + y contribute infinity.
    """
    tri = u.tri
    J = u.gradients()
    vols = tri.simplex_volumes()
    cents = tri.vertices[tri.simplices].mean(axis=1)
    z0 = u.eval(cents)
    d = tri.d
    n = z0.shape[0]
    pts = [z0]
    for k2 in range(d):
        dirs = J[:, :, k2]
        pts.append(z0 + fd * dirs)
        pts.append(z0 - fd * dirs)
    allpts = np.concatenate(pts, axis=0)
    vals, ok, _ = eval_retraction_guarded(sc, y, allpts)
    if not ok.all():
        return np.inf
    gsq = np.zeros(n)
    for k2 in range(d):
        dp = vals[(1 + 2 * k2) * n:(2 + 2 * k2) * n]
        dm = vals[(2 + 2 * k2) * n:(3 + 2 * k2) * n]
        col = (dp - dm) / (2 * fd)
        gsq += (col ** 2).sum(axis=1)
    return float(np.sum(vols * np.sqrt(gsq)))


def draw_shifts(sigma, n, seed, m):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = sigma * rng.uniform(size=n) ** (1.0 / m)
    return 0.999 * v * r[:, None]


def select_shift(u, u_star, sc, trials=32, seed=0, build_hreps=True):
    """Draw shifts uniformly from B^m_sigma and accept by the median rule.

    Scores trials draws with |grad(rho_y o u)|_{L1} + H^{d-1}(T_y) and
    returns the first draw whose transversality certificate holds and
    whose score is at most twice the median of all sampled scores (the
    concrete form of the averaging argument). Diagnostics carry the full
    score table.
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    u_star = np.asarray(u_star, dtype=float).ravel()
    ys = draw_shifts(sc.sigma, trials, seed, sc.target.m)

    def score_one(i):
        y = ys[i]
        ss = singular_sets(u, u_star, sc, y, build_hreps=False)
        g = grad_l1_of_projection(u, sc, y)
        score = g + ss.measure_t if np.isfinite(g) else np.inf
        return ss, {"y": y.tolist(), "grad_l1": g,
                    "t_measure": ss.measure_t,
                    "score": score, "certificate": bool(ss.certificate)}

    import os
    n_workers = max(1, int(os.environ.get("LIFTBV_THREADS", "1")))
    cached = {}
    table = [None] * trials
    if n_workers > 1 and trials > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            for i, (ss, row) in enumerate(ex.map(score_one, range(trials))):
                cached[i], table[i] = ss, row
    else:
        for i in range(trials):
            cached[i], table[i] = score_one(i)
    finite = [row["score"] for row in table if np.isfinite(row["score"])]
    if not finite:
        raise SelectionFailure("all sampled shifts were degenerate")
    med = float(np.median(finite))
    for i, row in enumerate(table):
        if row["certificate"] and row["score"] <= 2.0 * med + 1e-12:
            diag = {"scores": table, "median": med, "accepted_index": i}
            ss = cached[i]
            if build_hreps:
                ss = singular_sets(u, u_star, sc, ys[i], build_hreps=True)
            return ys[i], ss, diag
    raise SelectionFailure(
        f"no transversal draw within 2x median in {trials} attempts")


# ----------------------------------------------------------------------
# coarea brute-force oracle


def _slice_measure_d2(A, bvec, v_star, lo, hi, zs, s_cap):
    """Lengths of tau(V^{-1}(z)) inside the box, per z (vectorized).

    With invertible A the preimage of the ray from v_star through z is a
    straight ray in x-space; Liang-Barsky clipping to the box gives the
    exact length.
    """
    Ainv = np.linalg.inv(A)
    dirs = zs - v_star  # (k, 2)
    p0 = (Ainv @ (v_star + dirs - bvec).T).T  # s = 1 endpoints
    vel = (Ainv @ dirs.T).T
    t0 = np.zeros(len(zs))
    t1 = np.full(len(zs), s_cap - 1.0)
    for i in range(2):
        b_, v_ = p0[:, i], vel[:, i]
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[i] - b_) / v_
            tb = (hi[i] - b_) / v_
        small = np.abs(v_) <= 1e-14
        lo_t = np.where(small, 0.0, np.minimum(ta, tb))
        hi_t = np.where(small, t1, np.maximum(ta, tb))
        inside = (b_ >= lo[i] - 1e-12) & (b_ <= hi[i] + 1e-12)
        lo_t = np.where(small & ~inside, 1.0, lo_t)
        hi_t = np.where(small & ~inside, 0.0, hi_t)
        t0 = np.maximum(t0, lo_t)
        t1 = np.minimum(t1, hi_t)
    length = np.clip(t1 - t0, 0.0, None) * np.linalg.norm(vel, axis=1)
    return length


def _slice_measure_d2_singular(A, bvec, v_star, lo, hi, z, s_cap):
    """Slice length for a rank-deficient affine map in d = 2."""
    dirv = z - v_star
    nd2 = float(dirv @ dirv)
    if nd2 < 1e-26:
        return 0.0
    perp = np.array([-dirv[1], dirv[0]])
    eq = perp @ A
    erhs = perp @ (v_star - bvec)
    if np.linalg.norm(eq) < 1e-13:
        return 0.0  # image parallel to the ray only on a null set of z
    rows = np.empty((6, 2))
    rhs = np.empty(6)
    rows[0] = -(dirv @ A)
    rhs[0] = -nd2 + dirv @ (v_star - bvec)
    rows[1] = dirv @ A
    rhs[1] = s_cap * nd2 + dirv @ (v_star - bvec)
    rows[2:4] = np.eye(2)
    rhs[2:4] = hi
    rows[4:6] = -np.eye(2)
    rhs[4:6] = -lo
    P = HPolytope(rows, rhs, eq.reshape(1, 2), np.array([erhs]))
    V = P.vertices()
    if V.shape[0] < 2:
        return 0.0
    return hull_measure(V, 1)


_D3_COMBOS = None


def _slice_measure_d3(A, bvec, v_star, lo, hi, z, s_cap):
    """Area of tau(V^{-1}(z)) inside a box for d = 3 (exact polygon).

    The slice is the 2-plane {x : perp . (A x + b - v_star) = 0} cut by
    the box and the ray constraint s >= 1; its vertices come from the
    equality plus two active inequalities, enumerated with batched 3x3
    solves.
    """
    global _D3_COMBOS
    import itertools as _it

    dirv = z - v_star
    nd2 = float(dirv @ dirv)
    if nd2 < 1e-26:
        return 0.0
    perp = np.array([-dirv[1], dirv[0]])
    eq = perp @ A
    erhs = perp @ (v_star - bvec)
    rows = np.empty((8, 3))
    rhs = np.empty(8)
    rows[0] = -(dirv @ A)
    rhs[0] = -nd2 + dirv @ (v_star - bvec)
    rows[1] = dirv @ A
    rhs[1] = s_cap * nd2 + dirv @ (v_star - bvec)
    rows[2:5] = np.eye(3)
    rhs[2:5] = hi
    rows[5:8] = -np.eye(3)
    rhs[5:8] = -lo
    if _D3_COMBOS is None:
        _D3_COMBOS = np.array(list(_it.combinations(range(8), 2)))
    c = _D3_COMBOS
    M = np.empty((c.shape[0], 3, 3))
    B = np.empty((c.shape[0], 3))
    M[:, 0, :] = eq
    B[:, 0] = erhs
    M[:, 1, :] = rows[c[:, 0]]
    B[:, 1] = rhs[c[:, 0]]
    M[:, 2, :] = rows[c[:, 1]]
    B[:, 2] = rhs[c[:, 1]]
    dets = np.abs(np.linalg.det(M))
    ok = dets > 1e-12
    if not ok.any():
        return 0.0
    sol = np.linalg.solve(M[ok], B[ok][..., None])[..., 0]
    feas = np.all(sol @ rows.T <= rhs + 1e-8, axis=1)
    V = sol[feas]
    if V.shape[0] < 3:
        return 0.0
    return hull_measure(V, 2)


def coarea_bound_check(v_mat, v_off, v_star, box, resolution=64):
    """Verify the averaged slice inequality for one affine map into R^2.

    lhs: numerical z-integral of the exact polyhedral slice measure
    H^{d-1}(tau(V^{-1}(z)) cap box); rhs: 2 * integral of
    |v - v_star| |grad v| over the box with the Frobenius norm.
    Returns {"lhs", "rhs", "holds"}.
    """
    A = np.asarray(v_mat, dtype=float)
    bvec = np.asarray(v_off, dtype=float).ravel()
    v_star = np.asarray(v_star, dtype=float).ravel()
    lo = np.asarray(box[0], dtype=float).ravel()
    hi = np.asarray(box[1], dtype=float).ravel()
    d = A.shape[1]
    if d not in (2, 3):
        raise InvalidArgumentError("coarea check supports d in {2, 3}")

    corners = np.array(list(
        np.stack(np.meshgrid(*zip(lo, hi), indexing="ij"), axis=-1)
        .reshape(-1, d)))
    img = corners @ A.T + bvec
    zlo = np.minimum(img.min(axis=0), v_star) - 1e-9
    zhi = np.maximum(img.max(axis=0), v_star) + 1e-9
    n = int(resolution)
    g1 = np.linspace(zlo[0], zhi[0], n, endpoint=False) + (zhi[0] - zlo[0]) / (2 * n)
    g2 = np.linspace(zlo[1], zhi[1], n, endpoint=False) + (zhi[1] - zlo[1]) / (2 * n)
    cell = (zhi[0] - zlo[0]) * (zhi[1] - zlo[1]) / (n * n)
    Z1, Z2 = np.meshgrid(g1, g2, indexing="ij")
    zs = np.stack([Z1.ravel(), Z2.ravel()], axis=1)
    r_img = float(np.max(np.linalg.norm(img - v_star, axis=1))) + 1e-9
    dn = np.linalg.norm(zs - v_star, axis=1)
    keep = dn > 1e-9
    s_caps = np.minimum(r_img / np.maximum(dn, 1e-12) + 1.0, 1e9)

    if d == 2:
        if abs(np.linalg.det(A)) < 1e-12:
            lhs = 0.0
            for i in np.where(keep)[0]:
                lhs += cell * _slice_measure_d2_singular(
                    A, bvec, v_star, lo, hi, zs[i], s_caps[i])
        else:
            lens = np.zeros(len(zs))
            lens[keep] = _slice_measure_d2(A, bvec, v_star, lo[:2], hi[:2],
                                           zs[keep], float(np.max(s_caps)))
            lhs = float(np.sum(lens) * cell)
    else:
        lhs = 0.0
        for i in np.where(keep)[0]:
            lhs += cell * _slice_measure_d3(A, bvec, v_star, lo, hi,
                                            zs[i], s_caps[i])

    # rhs by midpoint quadrature
    nq = 96 if d == 2 else 48
    axes = [np.linspace(lo[i], hi[i], nq, endpoint=False)
            + (hi[i] - lo[i]) / (2 * nq) for i in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    valnorm = np.linalg.norm(mesh @ A.T + bvec - v_star, axis=1)
    volc = np.prod((hi - lo) / nq)
    rhs = float(2.0 * np.linalg.norm(A) * np.sum(valnorm) * volc)
    holds = lhs <= rhs * (1 + 1e-6) + 1e-9
    return {"lhs": lhs, "rhs": rhs, "holds": bool(holds)}


# ----------------------------------------------------------------------
# averaged-bound studies (Lemma-style statistics)


def coupling_integral(u, u_star):
    """Order-2 quadrature of |u - u_star| |grad u| over the domain."""
    tri = u.tri
    J = u.gradients()
    jn = np.linalg.norm(J, axis=(1, 2))
    vols = tri.simplex_volumes()
    V = tri.vertices[tri.simplices]  # (ns, d+1, d)
    mids = 0.5 * (V[:, list(range(tri.d + 1)), :]
                  + V[:, list(range(1, tri.d + 1)) + [0], :])
    total = 0.0
    for k in range(mids.shape[1]):
        vals = u.eval(mids[:, k, :])
        total += np.sum(vols / mids.shape[1]
                        * np.linalg.norm(vals - u_star, axis=1) * jn)
    return float(total)


def averaged_bounds(u, u_star, sc, n_shifts=200, seed=0):
    """Empirical means over shifts of the projected-gradient L1 norm and
    of H^{d-1}(T_y), with their reference integrals."""
    u_star = np.asarray(u_star, dtype=float).ravel()
    ys = draw_shifts(sc.sigma, n_shifts, seed, sc.target.m)
    grads, meas = [], []
    for y in ys:
        g = grad_l1_of_projection(u, sc, y)
        if np.isfinite(g):
            grads.append(g)
        if sc.xs_polyhedral:
            ss = singular_sets(u, u_star, sc, y, build_hreps=False)
            meas.append(ss.measure_t)
    return {
        "mean_grad": float(np.mean(grads)) if grads else np.nan,
        "mean_t_measure": float(np.mean(meas)) if meas else np.nan,
        "grad_u_l1": u.grad_l1(),
        "coupling": coupling_integral(u, u_star),
        "n_effective": len(grads),
    }
