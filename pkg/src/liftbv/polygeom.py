"""Exact low-dimensional polyhedral geometry and triangulation primitives.

H-representation polytopes with Fourier-Motzkin projection, vertex
enumeration and Hausdorff measures; Kuhn (Freudenthal) grid triangulations
and piecewise-affine interpolants on them. Everything here is plain
floating-point geometry with one absolute tolerance EPS_GEO; all objects
are immutable after construction and safe for concurrent use.
"""

import itertools

import numpy as np

from .errors import InvalidArgumentError

# absolute geometric tolerance for emptiness / incidence tests
EPS_GEO = 1e-9

# looser tolerance used when classifying vertex feasibility
FEAS_TOL = 1e-7


def _as2d(a, name="array"):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 1- or 2-dimensional")
    return a


class HPolytope:
    """Convex polytope in halfspace representation.

    The feasible set is {x : A x <= b, Aeq x = beq}. Rows of A with
    (numerically) zero normal are rejected unless they are trivially
    satisfied, in which case they are dropped; a trivially violated row
    marks the polytope empty. Emptiness is decided once by LP feasibility
    and cached.
    """

    __slots__ = ("dim_ambient", "A", "b", "Aeq", "beq", "_empty", "_verts", "_idim")

    def __init__(self, A, b, Aeq=None, beq=None):
        A = np.asarray(A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, 0 if A.ndim < 2 else A.shape[1])
        b = np.asarray(b, dtype=float).ravel()
        if A.ndim != 2:
            raise InvalidArgumentError("A must be a 2-d array")
        if A.shape[0] != b.shape[0]:
            raise InvalidArgumentError("A and b row counts differ")
        n = A.shape[1]
        trivially_empty = False

        keep = []
        for i in range(A.shape[0]):
            norm = np.linalg.norm(A[i])
            if norm <= EPS_GEO:
                if b[i] < -EPS_GEO:
                    trivially_empty = True
                continue
            keep.append(i)
        A, b = A[keep], b[keep]

        if Aeq is not None and np.asarray(Aeq).size:
            Aeq = np.asarray(Aeq, dtype=float)
            beq = np.asarray(beq, dtype=float).ravel()
            if Aeq.ndim != 2 or Aeq.shape[1] != n or Aeq.shape[0] != beq.shape[0]:
                raise InvalidArgumentError("inconsistent equality block")
            keep = []
            for i in range(Aeq.shape[0]):
                if np.linalg.norm(Aeq[i]) <= EPS_GEO:
                    if abs(beq[i]) > EPS_GEO:
                        trivially_empty = True
                    continue
                keep.append(i)
            Aeq, beq = Aeq[keep], beq[keep]
        else:
            Aeq = np.zeros((0, n))
            beq = np.zeros((0,))

        self.dim_ambient = n
        self.A = A
        self.b = b
        self.Aeq = Aeq
        self.beq = beq
        self._empty = True if trivially_empty else None
        self._verts = None
        self._idim = None

    # ------------------------------------------------------------------
    @classmethod
    def from_box(cls, lo, hi):
        """Axis-aligned box; axes with lo == hi become equalities."""
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        n = lo.size
        A, b, Aeq, beq = [], [], [], []
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            if hi[i] - lo[i] <= EPS_GEO:
                Aeq.append(e)
                beq.append(0.5 * (lo[i] + hi[i]))
            else:
                A.append(e.copy())
                b.append(hi[i])
                A.append(-e)
                b.append(-lo[i])
        return cls(np.array(A).reshape(-1, n), np.array(b),
                   np.array(Aeq).reshape(-1, n), np.array(beq))

    @classmethod
    def from_point(cls, p):
        p = np.asarray(p, dtype=float).ravel()
        return cls.from_box(p, p)

    # ------------------------------------------------------------------
    def is_empty(self, tol=EPS_GEO):
        """LP feasibility test, cached. Repeated queries return the cached answer."""
        if self._empty is not None:
            return self._empty
        from scipy.optimize import linprog

        n = self.dim_ambient
        res = linprog(
            np.zeros(n),
            A_ub=self.A if self.A.size else None,
            b_ub=self.b + tol if self.A.size else None,
            A_eq=self.Aeq if self.Aeq.size else None,
            b_eq=self.beq if self.Aeq.size else None,
            bounds=[(None, None)] * n,
            method="highs",
        )
        self._empty = not res.success
        return self._empty

    def contains(self, x, tol=FEAS_TOL):
        """Vectorized membership test for points x of shape (k, n) or (n,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = np.ones(x.shape[0], dtype=bool)
        if self.A.size:
            ok &= (x @ self.A.T <= self.b + tol).all(axis=1)
        if self.Aeq.size:
            ok &= (np.abs(x @ self.Aeq.T - self.beq) <= tol).all(axis=1)
        return ok if ok.size > 1 else bool(ok[0])

    def translate(self, v):
        v = np.asarray(v, dtype=float).ravel()
        P = HPolytope(self.A.copy(), self.b + self.A @ v,
                      self.Aeq.copy(), self.beq + self.Aeq @ v)
        return P

    # ------------------------------------------------------------------
    def vertices(self, tol=FEAS_TOL):
        """Enumerate vertices of a *bounded* polytope by brute force.

        Solves all square systems formed by the equality block plus
        r = n - rank(Aeq) active inequalities. Intended for the small
        systems this pipeline produces (n <= 4, tens of rows).
        """
        if self._verts is not None:
            return self._verts
        n = self.dim_ambient
        if n == 0:
            self._verts = np.zeros((1, 0))
            return self._verts
        if self.Aeq.size:
            rank_eq = np.linalg.matrix_rank(self.Aeq, tol=1e-10)
        else:
            rank_eq = 0
        r = n - rank_eq
        rows = self.A
        cands = []
        if r == 0:
            sol, res, _, _ = np.linalg.lstsq(self.Aeq, self.beq, rcond=None)
            if np.allclose(self.Aeq @ sol, self.beq, atol=1e-8):
                cands.append(sol)
        else:
            m = rows.shape[0]
            if m < r:
                combos = []
            else:
                combos = itertools.combinations(range(m), r)
            for S in combos:
                M = np.vstack([self.Aeq, rows[list(S)]]) if self.Aeq.size else rows[list(S)]
                rhs = np.concatenate([self.beq, self.b[list(S)]]) if self.Aeq.size else self.b[list(S)]
                try:
                    sol, _, rk, _ = np.linalg.lstsq(M, rhs, rcond=None)
                except np.linalg.LinAlgError:
                    continue
                if rk < n:
                    continue
                if np.max(np.abs(M @ sol - rhs)) > 1e-8 * max(1.0, np.max(np.abs(rhs))):
                    continue
                cands.append(sol)
        verts = []
        seen = set()
        for v in cands:
            if not np.all(np.isfinite(v)):
                continue
            if self.A.size and np.any(self.A @ v > self.b + tol):
                continue
            if self.Aeq.size and np.max(np.abs(self.Aeq @ v - self.beq)) > tol:
                continue
            key = tuple(np.round(v, 9))
            if key in seen:
                continue
            seen.add(key)
            verts.append(v)
        self._verts = np.array(verts).reshape(-1, n)
        return self._verts

    def intrinsic_dim(self, tol=1e-7):
        """Dimension of the affine hull of the (bounded) polytope; -1 if empty."""
        if self._idim is not None:
            return self._idim
        V = self.vertices()
        if V.shape[0] == 0:
            self._idim = -1
        elif V.shape[0] == 1:
            self._idim = 0
        else:
            self._idim = int(np.linalg.matrix_rank(V - V[0], tol=tol))
        return self._idim


def _lp_prune(A, b, Aeq, beq, tol=EPS_GEO):
    """Drop inequalities that are redundant (LP feasibility test per row)."""
    from scipy.optimize import linprog

    n = A.shape[1]
    keep = np.ones(A.shape[0], dtype=bool)
    for i in range(A.shape[0]):
        mask = keep.copy()
        mask[i] = False
        res = linprog(
            -A[i],
            A_ub=A[mask] if mask.any() else None,
            b_ub=b[mask] if mask.any() else None,
            A_eq=Aeq if Aeq.size else None,
            b_eq=beq if Aeq.size else None,
            bounds=[(None, None)] * n,
            method="highs",
        )
        if res.status == 3:
            continue  # unbounded in this direction: row is essential
        if res.success and -res.fun > b[i] + tol:
            continue  # row actually cuts the feasible set
        keep[i] = False if res.success and -res.fun <= b[i] + tol else keep[i]
    return A[keep], b[keep]


def _dedupe_rows(A, b):
    if A.shape[0] == 0:
        return A, b
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    An = A / norms[:, None]
    bn = b / norms
    seen = {}
    keep = []
    for i in range(An.shape[0]):
        key = tuple(np.round(An[i], 10))
        if key in seen:
            j = seen[key]
            if bn[i] < bn[j] - 1e-12:
                keep[keep.index(j)] = i
                seen[key] = i
            continue
        seen[key] = i
        keep.append(i)
    keep = sorted(keep)
    return An[keep], bn[keep]


def fm_project(P, axis, prune=True):
    """Project out one coordinate of an H-polytope (Fourier-Motzkin).

    Returns the exact shadow of P under deletion of coordinate `axis`
    (0-based). Equalities involving the axis are pivoted and substituted;
    remaining inequality pairs are combined in the classical way. With
    prune=True redundant inequalities are removed by an LP feasibility
    test per row.
    """
    if P.dim_ambient < 2:
        raise InvalidArgumentError("fm_project requires ambient dimension >= 2")
    if not (0 <= axis < P.dim_ambient):
        raise InvalidArgumentError(f"axis {axis} out of range")

    A, b = P.A.copy(), P.b.copy()
    Aeq, beq = P.Aeq.copy(), P.beq.copy()
    keep_axes = [i for i in range(P.dim_ambient) if i != axis]

    pivot = None
    if Aeq.size:
        col = np.abs(Aeq[:, axis])
        j = int(np.argmax(col))
        if col[j] > EPS_GEO:
            pivot = j
    if pivot is not None:
        # substitute x_axis from the pivot equality into every other row
        prow, pval = Aeq[pivot], beq[pivot]
        c = prow[axis]
        for M, v in ((A, b), (Aeq, beq)):
            for i in range(M.shape[0]):
                if M is Aeq and i == pivot:
                    continue
                f = M[i, axis] / c
                M[i] = M[i] - f * prow
                v[i] = v[i] - f * pval
        Aeq = np.delete(Aeq, pivot, axis=0)
        beq = np.delete(beq, pivot)
        A2, b2 = A[:, keep_axes], b
        Aeq2, beq2 = Aeq[:, keep_axes], beq
    else:
        col = A[:, axis] if A.size else np.zeros(0)
        pos = np.where(col > EPS_GEO)[0]
        neg = np.where(col < -EPS_GEO)[0]
        zer = np.where(np.abs(col) <= EPS_GEO)[0]
        rows, rhs = [], []
        for i in zer:
            rows.append(A[i, keep_axes])
            rhs.append(b[i])
        for i in pos:
            for j in neg:
                ci, cj = col[i], -col[j]
                row = A[i, keep_axes] / ci + A[j, keep_axes] / cj
                rows.append(row)
                rhs.append(b[i] / ci + b[j] / cj)
        A2 = np.array(rows).reshape(-1, len(keep_axes))
        b2 = np.array(rhs)
        Aeq2 = Aeq[:, keep_axes] if Aeq.size else np.zeros((0, len(keep_axes)))
        beq2 = beq

    A2, b2 = _dedupe_rows(A2, b2)
    out = HPolytope(A2, b2, Aeq2, beq2)
    if prune and A2.shape[0] > 1 and not out.is_empty():
        A3, b3 = _lp_prune(out.A, out.b, out.Aeq, out.beq)
        out = HPolytope(A3, b3, out.Aeq, out.beq)
    return out


# ----------------------------------------------------------------------
# Hausdorff measures


def hull_measure(verts, j):
    """j-dimensional measure of the convex hull of `verts` (k, n)."""
    verts = np.atleast_2d(np.asarray(verts, dtype=float))
    if verts.shape[0] == 0:
        return 0.0
    if j == 0:
        return 1.0
    mean = verts.mean(axis=0)
    U, S, Vt = np.linalg.svd(verts - mean, full_matrices=False)
    basis = Vt[:j]
    coords = (verts - mean) @ basis.T
    if j == 1:
        return float(coords.max(0)[0] - coords.min(0)[0])
    if j == 2:
        c = coords - coords.mean(axis=0)
        order = np.argsort(np.arctan2(c[:, 1], c[:, 0]))
        c = c[order]
        x, y = c[:, 0], c[:, 1]
        return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)
    if j == 3:
        from scipy.spatial import ConvexHull, QhullError

        try:
            return float(ConvexHull(coords).volume)
        except QhullError:
            return 0.0
    raise InvalidArgumentError("hull_measure supports j <= 3")


def haus_measure(P, j):
    """Exact j-dimensional Hausdorff measure of a j-dimensional polytope.

    Vertex enumeration followed by a simplicial decomposition in the
    affine hull. Raises on a dimension mismatch.
    """
    V = P.vertices()
    if V.shape[0] == 0:
        if j == 0:
            raise InvalidArgumentError("empty polytope has no dimension")
        return 0.0
    d_int = P.intrinsic_dim()
    if d_int != j:
        raise InvalidArgumentError(f"polytope has intrinsic dimension {d_int}, not {j}")
    return hull_measure(V, j)


class PolyChain:
    """Finite list of polytopes of one shared intrinsic dimension.

    Carrier for the singular sets and jump complexes; `tags` holds one
    integer multiplicity/orientation tag per member.
    """

    __slots__ = ("members", "tags", "ambient_dim", "intrinsic_dim")

    def __init__(self, members, tags=None, intrinsic_dim=None):
        members = list(members)
        if tags is None:
            tags = [1] * len(members)
        if len(tags) != len(members):
            raise InvalidArgumentError("tags length mismatch")
        amb = {p.dim_ambient for p in members}
        if len(amb) > 1:
            raise InvalidArgumentError("members have mixed ambient dimensions")
        self.members = members
        self.tags = list(tags)
        self.ambient_dim = amb.pop() if amb else 0
        if intrinsic_dim is None and members:
            intrinsic_dim = members[0].intrinsic_dim()
        self.intrinsic_dim = intrinsic_dim
        for p in members:
            d = p.intrinsic_dim()
            if d >= 0 and d != self.intrinsic_dim:
                raise InvalidArgumentError(
                    f"member of dimension {d} in chain of dimension {self.intrinsic_dim}")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def total_measure(self):
        return sum(haus_measure(p, self.intrinsic_dim) for p in self.members)


# ----------------------------------------------------------------------
# Kuhn / Freudenthal triangulations


class Triangulation:
    """Kuhn triangulation of a box: each cell split into d! simplices."""

    __slots__ = ("lo", "hi", "resolution", "h", "vertices", "simplices",
                 "simplex_axes", "d")

    def __init__(self, lo, hi, resolution, vertices, simplices, simplex_axes):
        self.lo = lo
        self.hi = hi
        self.resolution = resolution
        self.h = (hi - lo) / resolution
        self.vertices = vertices
        self.simplices = simplices
        self.simplex_axes = simplex_axes  # permutation of axes per simplex
        self.d = lo.size

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_simplices(self):
        return self.simplices.shape[0]

    def simplex_coords(self, idx):
        return self.vertices[self.simplices[idx]]

    def simplex_volumes(self):
        V = self.vertices[self.simplices]
        E = V[:, 1:, :] - V[:, :1, :]
        d = self.d
        dets = np.abs(np.linalg.det(E)) if d > 1 else np.abs(E[:, 0, 0])
        return dets / np.prod(np.arange(1, d + 1))

    def box_volume(self):
        return float(np.prod(self.hi - self.lo))

    def facet_counts(self):
        """Map frozenset-of-vertex-indices (facets) -> incidence count."""
        counts = {}
        d = self.d
        for s in self.simplices:
            for drop in range(d + 1):
                f = tuple(sorted(np.delete(s, drop)))
                counts[f] = counts.get(f, 0) + 1
        return counts

    def validate(self, rel_tol=1e-12):
        """Check the tiling and facet-sharing invariants; returns dict."""
        vol = self.simplex_volumes().sum()
        box = self.box_volume()
        vol_ok = abs(vol - box) <= rel_tol * max(1.0, box) * self.n_simplices
        counts = self.facet_counts()
        max_share = max(counts.values())
        boundary_ok = all(c in (1, 2) for c in counts.values())
        return {"volume_sum": float(vol), "box_volume": box,
                "volume_ok": bool(vol_ok),
                "max_facet_share": int(max_share),
                "facets_ok": bool(boundary_ok and max_share <= 2)}


def kuhn_triangulate(box, resolution):
    """Kuhn (Freudenthal) triangulation of a box grid.

    Parameters
    ----------
    box : pair (lo, hi) of length-d arrays
    resolution : length-d ints, cells per axis (>= 1), d in {1, 2, 3}
    """
    lo = np.asarray(box[0], dtype=float).ravel()
    hi = np.asarray(box[1], dtype=float).ravel()
    resolution = np.asarray(resolution, dtype=int).ravel()
    d = lo.size
    if d not in (1, 2, 3):
        raise InvalidArgumentError("kuhn_triangulate supports d in {1,2,3}")
    if hi.size != d or resolution.size != d:
        raise InvalidArgumentError("box / resolution size mismatch")
    if np.any(resolution < 1):
        raise InvalidArgumentError("resolution must be >= 1 on every axis")
    if np.any(hi <= lo):
        raise InvalidArgumentError("box must have positive extent")

    nv = resolution + 1
    axes = [np.linspace(lo[i], hi[i], nv[i]) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([m.ravel() for m in mesh], axis=1)

    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * nv[i + 1]

    perms = list(itertools.permutations(range(d)))
    simplices = []
    simplex_axes = []
    for cell in itertools.product(*[range(r) for r in resolution]):
        base = int(np.dot(cell, strides))
        for p in perms:
            idxs = [base]
            cur = base
            for ax in p:
                cur = cur + strides[ax]
                idxs.append(int(cur))
            simplices.append(idxs)
            simplex_axes.append(p)
    return Triangulation(lo, hi, resolution, vertices,
                         np.array(simplices, dtype=np.int64),
                         np.array(simplex_axes, dtype=np.int64))


class PiecewiseAffineMap:
    """Continuous map on a Kuhn-triangulated box, affine on each simplex.

    Vertex values live in ambient R^m; evaluation, per-simplex Jacobians
    and the discrete total variation are all vectorized.
    """

    def __init__(self, tri, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != tri.n_vertices:
            raise InvalidArgumentError("one value per triangulation vertex required")
        self.tri = tri
        self.values = values
        self.m = values.shape[1]
        self._grads = None
        d = tri.d
        self._perm_index = {p: i for i, p in
                            enumerate(itertools.permutations(range(d)))}
        nv = tri.resolution + 1
        strides = np.ones(d, dtype=np.int64)
        for i in range(d - 2, -1, -1):
            strides[i] = strides[i + 1] * nv[i + 1]
        self._strides = strides

    # -- location -------------------------------------------------------
    def _locate(self, x):
        tri = self.tri
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = (x - tri.lo) / tri.h
        idx = np.clip(np.floor(g).astype(np.int64), 0, tri.resolution - 1)
        frac = g - idx
        return idx, frac

    def eval(self, x):
        """Evaluate at points x of shape (k, d) or (d,)."""
        single = np.asarray(x).ndim == 1
        idx, frac = self._locate(x)
        d = self.tri.d
        order = np.argsort(-frac, axis=1, kind="stable")
        sortf = np.take_along_axis(frac, order, axis=1)
        k = idx.shape[0]
        w = np.empty((k, d + 1))
        w[:, 0] = 1.0 - sortf[:, 0]
        for i in range(1, d):
            w[:, i] = sortf[:, i - 1] - sortf[:, i]
        w[:, d] = sortf[:, d - 1]
        base = idx @ self._strides
        out = w[:, 0:1] * self.values[base]
        cur = base.copy()
        for i in range(d):
            cur = cur + self._strides[order[:, i]]
            out += w[:, i + 1:i + 2] * self.values[cur]
        return out[0] if single else out

    def simplex_of(self, x):
        """Simplex index containing each point (ties resolved by sort order)."""
        idx, frac = self._locate(x)
        d = self.tri.d
        order = np.argsort(-frac, axis=1, kind="stable")
        cell_flat = np.zeros(idx.shape[0], dtype=np.int64)
        for i in range(d):
            cell_flat = cell_flat * self.tri.resolution[i] + idx[:, i]
        nperm = len(self._perm_index)
        pidx = np.array([self._perm_index[tuple(o)] for o in order], dtype=np.int64)
        return cell_flat * nperm + pidx

    # -- derivatives ----------------------------------------------------
    def gradients(self):
        """Per-simplex Jacobian array of shape (n_simplices, m, d)."""
        if self._grads is not None:
            return self._grads
        tri = self.tri
        V = self.values[tri.simplices]  # (ns, d+1, m)
        diffs = V[:, 1:, :] - V[:, :-1, :]  # (ns, d, m)
        d = tri.d
        J = np.zeros((tri.n_simplices, self.m, d))
        for k in range(d):
            ax = tri.simplex_axes[:, k]
            J[np.arange(tri.n_simplices), :, ax] = (diffs[:, k, :] /
                                                    tri.h[ax][:, None])
        self._grads = J
        return J

    def grad_l1(self):
        """Discrete total variation: sum of |T| * Frobenius norm of the Jacobian."""
        J = self.gradients()
        vols = self.tri.simplex_volumes()
        return float(np.sum(vols * np.linalg.norm(J, axis=(1, 2))))

    def bary_matrices(self):
        """Inverse barycentric matrices per simplex, shape (ns, d+1, d+1).

        Row i of the inverse gives lambda_i(x) = Minv[i, 0] + Minv[i, 1:] x.
        """
        if getattr(self, "_bary", None) is not None:
            return self._bary
        tri = self.tri
        V = tri.vertices[tri.simplices]  # (ns, d+1, d)
        ns, k, d = V.shape
        M = np.empty((ns, k, k))
        M[:, 0, :] = 1.0
        M[:, 1:, :] = np.transpose(V, (0, 2, 1))
        self._bary = np.linalg.inv(M)
        return self._bary

    def image_bounds(self):
        """Per-simplex bounding boxes of the image, shape (ns, 2, m)."""
        V = self.values[self.tri.simplices]
        return np.stack([V.min(axis=1), V.max(axis=1)], axis=1)

    def image_radius(self):
        return float(np.max(np.linalg.norm(self.values, axis=1)))
