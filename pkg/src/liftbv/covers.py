"""Covering-space targets: embedded manifolds, deck groups, path lifting.

Four bundled targets:
  circle        S^1 in R^2, cover R, deck = 2*pi integer translations
  clifford_torus  S^1 x S^1 (radius 1/sqrt(2) per factor) in R^4, cover R^2
  so3           SO(3) as 3x3 matrices in R^9, cover S^3 (unit quaternions),
                deck = {1, -1}
  so3_mod_v4    SO(3)/V4 box-orientation space with an invariant-tensor
                embedding in R^18, cover S^3, deck = quaternion group Q8
                acting by left multiplication (non-abelian)

Points of N travel through the pipeline in ambient coordinates; points of
the cover E use the target's cover coordinates (angles for circle/torus,
unit quaternions for the SO(3) quotients). All distance callbacks are in
units that make the covering projection a local isometry.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (InvalidArgumentError, NormalizationFailure,
                     NotSameFiberError, StepTooLargeError)

TWO_PI = 2.0 * np.pi

# ----------------------------------------------------------------------
# exact quaternion-unit algebra for the finite deck groups

_Q8_NAMES = ("1", "-1", "i", "-i", "j", "-j", "k", "-k")
_Q8_IDX = {n: i for i, n in enumerate(_Q8_NAMES)}

# axis multiplication for quaternion units: AX[a][b] = (sign, axis)
_AX = {
    (0, 0): (1, 0), (0, 1): (1, 1), (0, 2): (1, 2), (0, 3): (1, 3),
    (1, 0): (1, 1), (1, 1): (-1, 0), (1, 2): (1, 3), (1, 3): (-1, 2),
    (2, 0): (1, 2), (2, 1): (-1, 3), (2, 2): (-1, 0), (2, 3): (1, 1),
    (3, 0): (1, 3), (3, 1): (1, 2), (3, 2): (-1, 1), (3, 3): (-1, 0),
}


def _q8_mul(a, b):
    sa, xa = (1 if a % 2 == 0 else -1), a // 2
    sb, xb = (1 if b % 2 == 0 else -1), b // 2
    s, x = _AX[(xa, xb)]
    s *= sa * sb
    return x * 2 + (0 if s > 0 else 1)


def _q8_inv(a):
    s, x = (1 if a % 2 == 0 else -1), a // 2
    if x == 0:
        return a
    return x * 2 + (0 if -s > 0 else 1)  # unit axes square to -1


def _q8_quat(a):
    q = np.zeros(4)
    q[a // 2] = 1.0 if a % 2 == 0 else -1.0
    return q


def _q8_left_apply(a, w):
    """Left-multiply quaternions w (..., 4) by the exact unit element a."""
    s = 1.0 if a % 2 == 0 else -1.0
    x = a // 2
    w = np.asarray(w, dtype=float)
    w0, w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2], w[..., 3]
    if x == 0:
        out = np.stack([w0, w1, w2, w3], axis=-1)
    elif x == 1:
        out = np.stack([-w1, w0, -w3, w2], axis=-1)
    elif x == 2:
        out = np.stack([-w2, w3, w0, -w1], axis=-1)
    else:
        out = np.stack([-w3, -w2, w1, w0], axis=-1)
    return s * out


@dataclass(frozen=True)
class DeckElement:
    """A deck transformation, identified exactly by target kind and payload.

    Payloads: int (circle winding), (int, int) (torus lattice), or an
    index into the Q8 table (quaternionic targets). Group operations are
    exact; no floating point enters the group law.
    """

    target_id: str
    kind: str
    payload: object

    @property
    def name(self):
        if self.kind == "int":
            k = self.payload
            if k == 0:
                return "1"
            if k == 1:
                return "g"
            if k == -1:
                return "g^-1"
            return f"g^{k}"
        if self.kind == "int2":
            k1, k2 = self.payload
            if k1 == 0 and k2 == 0:
                return "1"
            return f"t({k1},{k2})"
        return _Q8_NAMES[self.payload]

    def is_identity(self):
        if self.kind == "int":
            return self.payload == 0
        if self.kind == "int2":
            return self.payload == (0, 0)
        return self.payload == 0

    def __repr__(self):
        return f"DeckElement({self.target_id}:{self.name})"


def _wrap(a):
    """Wrap angles to (-pi, pi]."""
    return -((-np.asarray(a, dtype=float) + np.pi) % TWO_PI - np.pi)


def _rowwise(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _unbatch(x, single):
    return x[0] if single else x


# ----------------------------------------------------------------------
# quaternion <-> rotation helpers (convention R(q) v = q v conj(q))


def quat_to_rot(q):
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def rot_to_quat(R):
    """Robust rotation-to-quaternion extraction (sign convention w >= 0 branch)."""
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    R = R.reshape(-1, 3, 3)
    n = R.shape[0]
    q = np.empty((n, 4))
    t = np.einsum("nii->n", R)
    for i in range(n):
        M = R[i]
        tr = t[i]
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q[i] = [0.25 * s, (M[2, 1] - M[1, 2]) / s,
                    (M[0, 2] - M[2, 0]) / s, (M[1, 0] - M[0, 1]) / s]
        elif M[0, 0] >= M[1, 1] and M[0, 0] >= M[2, 2]:
            s = np.sqrt(1.0 + M[0, 0] - M[1, 1] - M[2, 2]) * 2
            q[i] = [(M[2, 1] - M[1, 2]) / s, 0.25 * s,
                    (M[0, 1] + M[1, 0]) / s, (M[0, 2] + M[2, 0]) / s]
        elif M[1, 1] >= M[2, 2]:
            s = np.sqrt(1.0 + M[1, 1] - M[0, 0] - M[2, 2]) * 2
            q[i] = [(M[0, 2] - M[2, 0]) / s, (M[0, 1] + M[1, 0]) / s,
                    0.25 * s, (M[1, 2] + M[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + M[2, 2] - M[0, 0] - M[1, 1]) * 2
            q[i] = [(M[1, 0] - M[0, 1]) / s, (M[0, 2] + M[2, 0]) / s,
                    (M[1, 2] + M[2, 1]) / s, 0.25 * s]
        q[i] /= np.linalg.norm(q[i])
    return q[0] if single else q


def quat_mul(a, b):
    single = np.asarray(a).ndim == 1 and np.asarray(b).ndim == 1
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    w = a[:, 0] * b[:, 0] - a[:, 1] * b[:, 1] - a[:, 2] * b[:, 2] - a[:, 3] * b[:, 3]
    x = a[:, 0] * b[:, 1] + a[:, 1] * b[:, 0] + a[:, 2] * b[:, 3] - a[:, 3] * b[:, 2]
    y = a[:, 0] * b[:, 2] - a[:, 1] * b[:, 3] + a[:, 2] * b[:, 0] + a[:, 3] * b[:, 1]
    z = a[:, 0] * b[:, 3] + a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1] + a[:, 3] * b[:, 0]
    out = np.stack([w, x, y, z], axis=1)
    return out[0] if single else out


def quat_slerp(a, b, t):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = float(np.clip(np.dot(a, b), -1.0, 1.0))
    ang = np.arccos(dot)
    if ang < 1e-12:
        out = (1 - t) * a + t * b
        return out / np.linalg.norm(out)
    return (np.sin((1 - t) * ang) * a + np.sin(t * ang) * b) / np.sin(ang)


def _sphere_dist(a, b):
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d = np.arccos(np.clip(np.sum(a * b, axis=1), -1.0, 1.0))
    return d


def _mandel(S):
    """Symmetric 3x3 -> R^6, norm preserving."""
    r2 = np.sqrt(2.0)
    return np.stack([S[..., 0, 0], S[..., 1, 1], S[..., 2, 2],
                     r2 * S[..., 0, 1], r2 * S[..., 0, 2], r2 * S[..., 1, 2]],
                    axis=-1)


def _unmandel(v):
    r2 = np.sqrt(2.0)
    S = np.empty(v.shape[:-1] + (3, 3))
    S[..., 0, 0] = v[..., 0]
    S[..., 1, 1] = v[..., 1]
    S[..., 2, 2] = v[..., 2]
    S[..., 0, 1] = S[..., 1, 0] = v[..., 3] / r2
    S[..., 0, 2] = S[..., 2, 0] = v[..., 4] / r2
    S[..., 1, 2] = S[..., 2, 1] = v[..., 5] / r2
    return S


# ----------------------------------------------------------------------


class CircleTarget:
    """N = S^1 in R^2, E = R, pi(theta) = (cos theta, sin theta)."""

    id = "circle"
    m = 2
    l = 1
    r_inj = np.pi
    cover_radius = np.pi
    intrinsic_scale = 1.0  # intrinsic length per ambient curve length on N
    deck_kind = "int"
    e_star = (-np.pi, np.pi)
    deck_search_window = 10 ** 6

    def base_point(self):
        return np.array([1.0, 0.0])

    def on_n(self, z, tol=1e-9):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.abs(np.linalg.norm(z, axis=1) - 1.0) <= tol

    def on_e(self, w, tol=1e-9):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return np.isfinite(w).all(axis=1)

    def project_cover(self, w):
        w2, single = _rowwise(w)
        th = w2[:, 0]
        out = np.stack([np.cos(th), np.sin(th)], axis=1)
        return _unbatch(out, single)

    def dist_n(self, z1, z2):
        z1, s1 = _rowwise(z1)
        z2, s2 = _rowwise(z2)
        a1 = np.arctan2(z1[:, 1], z1[:, 0])
        a2 = np.arctan2(z2[:, 1], z2[:, 0])
        d = np.abs(_wrap(a1 - a2))
        return _unbatch(d, s1 and s2)

    def dist_e(self, w1, w2):
        w1, s1 = _rowwise(w1)
        w2, s2 = _rowwise(w2)
        return _unbatch(np.abs(w1[:, 0] - w2[:, 0]), s1 and s2)

    def tube_project(self, z):
        z2, single = _rowwise(z)
        r = np.linalg.norm(z2, axis=1)
        out = z2 / np.where(r > 0, r, 1.0)[:, None]
        return _unbatch(out, single)

    def margin(self, z):
        z2, single = _rowwise(z)
        return _unbatch(np.linalg.norm(z2, axis=1), single)

    def geodesic_n(self, a, b, t):
        ta = np.arctan2(a[1], a[0])
        tb = np.arctan2(b[1], b[0])
        th = ta + t * _wrap(tb - ta)
        return np.array([np.cos(th), np.sin(th)])

    def geodesic_n_batch(self, a, b, t):
        ta = np.arctan2(a[:, 1], a[:, 0])
        tb = np.arctan2(b[:, 1], b[:, 0])
        th = ta + t * _wrap(tb - ta)
        return np.stack([np.cos(th), np.sin(th)], axis=1)

    def fiber_lift(self, z):
        z2, single = _rowwise(z)
        out = np.arctan2(z2[:, 1], z2[:, 0]).reshape(-1, 1)
        return _unbatch(out, single)

    def lift_step(self, w, z_next, strict=True):
        w2, s1 = _rowwise(w)
        z2, s2 = _rowwise(z_next)
        th = np.arctan2(z2[:, 1], z2[:, 0])
        delta = _wrap(th - w2[:, 0])
        # |delta| below r_inj is guaranteed unique; the wrap gives it
        if strict:
            d = self.dist_n(self.project_cover(w2), z2)
            d = np.atleast_1d(d)
            if np.any(d >= self.r_inj - 1e-12):
                raise StepTooLargeError("lift step reaches the injectivity margin")
        out = (w2[:, 0] + delta).reshape(-1, 1)
        return _unbatch(out, s1 and s2)

    # -- deck group ----------------------------------------------------
    def deck_identity(self):
        return DeckElement(self.id, "int", 0)

    def deck_from_payload(self, k):
        return DeckElement(self.id, "int", int(k))

    def deck_generators(self):
        return [self.deck_from_payload(1)]

    def deck_apply(self, el, w):
        w2, single = _rowwise(w)
        return _unbatch(w2 + TWO_PI * el.payload, single)

    def deck_compose(self, a, b):
        return self.deck_from_payload(a.payload + b.payload)

    def deck_inverse(self, a):
        return self.deck_from_payload(-a.payload)

    def deck_identify(self, w1, w2, tol=1e-6):
        w1 = np.atleast_1d(np.asarray(w1, dtype=float)).ravel()
        w2 = np.atleast_1d(np.asarray(w2, dtype=float)).ravel()
        if self.dist_n(self.project_cover(w1.reshape(1, 1)),
                       self.project_cover(w2.reshape(1, 1)))[0] > tol:
            raise NotSameFiberError("points project to different base points")
        k = np.round((w2[0] - w1[0]) / TWO_PI)
        if abs(k) > self.deck_search_window:
            raise NormalizationFailure("deck search window exceeded")
        if abs(w1[0] + TWO_PI * k - w2[0]) > tol:
            raise NotSameFiberError("no deck element within tolerance")
        return self.deck_from_payload(int(k))

    def nearest_deck(self, w1, w2):
        """Deck element g minimizing dist_E(g(w1), w2); tolerant helper."""
        k = int(np.round((float(np.ravel(w2)[0]) - float(np.ravel(w1)[0])) / TWO_PI))
        return self.deck_from_payload(k)

    def normalize_elem(self, w_star):
        w = float(np.ravel(w_star)[0])
        if not np.isfinite(w) or abs(w) > TWO_PI * self.deck_search_window:
            raise NormalizationFailure("normalization window exceeded")
        return self.deck_from_payload(int(np.round(w / TWO_PI)))

    def in_fundamental_domain(self, w, tol=1e-9):
        w2, single = _rowwise(w)
        return _unbatch((w2[:, 0] >= -np.pi - tol) & (w2[:, 0] <= np.pi + tol), single)

    def sample_n(self, n, seed=0):
        th = np.linspace(0.0, TWO_PI, n, endpoint=False)
        th += 0.5 * (th[1] - th[0]) if n > 1 else 0.0
        return np.stack([np.cos(th), np.sin(th)], axis=1)

    def sample_e(self, n, seed=0):
        rng = np.random.default_rng(seed)
        return rng.uniform(-8 * np.pi, 8 * np.pi, size=(n, 1))


class CliffordTorusTarget:
    """N = S^1 x S^1 with radius 1/sqrt(2) per factor, in R^4; E = R^2."""

    id = "clifford_torus"
    m = 4
    l = 2
    a = 1.0 / np.sqrt(2.0)
    r_inj = np.pi / np.sqrt(2.0)
    cover_radius = np.pi  # geodesic radius covering E_* = [-pi, pi]^2
    intrinsic_scale = 1.0
    deck_kind = "int2"
    deck_search_window = 10 ** 6

    def base_point(self):
        return np.array([self.a, 0.0, self.a, 0.0])

    def on_n(self, z, tol=1e-9):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r1 = np.linalg.norm(z[:, :2], axis=1)
        r2 = np.linalg.norm(z[:, 2:], axis=1)
        return (np.abs(r1 - self.a) <= tol) & (np.abs(r2 - self.a) <= tol)

    def on_e(self, w, tol=1e-9):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return np.isfinite(w).all(axis=1)

    def project_cover(self, w):
        w2, single = _rowwise(w)
        out = self.a * np.stack([np.cos(w2[:, 0]), np.sin(w2[:, 0]),
                                 np.cos(w2[:, 1]), np.sin(w2[:, 1])], axis=1)
        return _unbatch(out, single)

    def _angles(self, z):
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        return np.stack([np.arctan2(z2[:, 1], z2[:, 0]),
                         np.arctan2(z2[:, 3], z2[:, 2])], axis=1)

    def dist_n(self, z1, z2):
        z1, s1 = _rowwise(z1)
        z2, s2 = _rowwise(z2)
        da = _wrap(self._angles(z1) - self._angles(z2))
        return _unbatch(self.a * np.linalg.norm(da, axis=1), s1 and s2)

    def dist_e(self, w1, w2):
        w1, s1 = _rowwise(w1)
        w2, s2 = _rowwise(w2)
        return _unbatch(self.a * np.linalg.norm(w1 - w2, axis=1), s1 and s2)

    def tube_project(self, z):
        z2, single = _rowwise(z)
        r1 = np.linalg.norm(z2[:, :2], axis=1)
        r2 = np.linalg.norm(z2[:, 2:], axis=1)
        out = np.empty_like(z2)
        out[:, :2] = self.a * z2[:, :2] / np.where(r1 > 0, r1, 1.0)[:, None]
        out[:, 2:] = self.a * z2[:, 2:] / np.where(r2 > 0, r2, 1.0)[:, None]
        return _unbatch(out, single)

    def margin(self, z):
        z2, single = _rowwise(z)
        r1 = np.linalg.norm(z2[:, :2], axis=1)
        r2 = np.linalg.norm(z2[:, 2:], axis=1)
        return _unbatch(np.minimum(r1, r2), single)

    def geodesic_n(self, a, b, t):
        wa = self._angles(a)[0]
        wb = self._angles(b)[0]
        w = wa + t * _wrap(wb - wa)
        return self.project_cover(w)

    def geodesic_n_batch(self, a, b, t):
        wa = self._angles(a)
        wb = self._angles(b)
        return self.project_cover(wa + t[:, None] * _wrap(wb - wa))

    def fiber_lift(self, z):
        z2, single = _rowwise(z)
        return _unbatch(self._angles(z2), single)

    def lift_step(self, w, z_next, strict=True):
        w2, s1 = _rowwise(w)
        z2, s2 = _rowwise(z_next)
        th = self._angles(z2)
        delta = _wrap(th - w2)
        if strict:
            d = np.atleast_1d(self.dist_n(self.project_cover(w2), z2))
            if np.any(d >= self.r_inj - 1e-12):
                raise StepTooLargeError("lift step reaches the injectivity margin")
        return _unbatch(w2 + delta, s1 and s2)

    def deck_identity(self):
        return DeckElement(self.id, "int2", (0, 0))

    def deck_from_payload(self, p):
        return DeckElement(self.id, "int2", (int(p[0]), int(p[1])))

    def deck_generators(self):
        return [self.deck_from_payload((1, 0)), self.deck_from_payload((0, 1))]

    def deck_apply(self, el, w):
        w2, single = _rowwise(w)
        return _unbatch(w2 + TWO_PI * np.asarray(el.payload, dtype=float), single)

    def deck_compose(self, a, b):
        return self.deck_from_payload((a.payload[0] + b.payload[0],
                                       a.payload[1] + b.payload[1]))

    def deck_inverse(self, a):
        return self.deck_from_payload((-a.payload[0], -a.payload[1]))

    def deck_identify(self, w1, w2, tol=1e-6):
        w1 = np.asarray(w1, dtype=float).ravel()
        w2 = np.asarray(w2, dtype=float).ravel()
        if float(self.dist_n(self.project_cover(w1), self.project_cover(w2))) > tol:
            raise NotSameFiberError("points project to different base points")
        k = np.round((w2 - w1) / TWO_PI)
        if np.max(np.abs(w1 + TWO_PI * k - w2)) > tol:
            raise NotSameFiberError("no deck element within tolerance")
        return self.deck_from_payload((int(k[0]), int(k[1])))

    def nearest_deck(self, w1, w2):
        k = np.round((np.asarray(w2, dtype=float).ravel()
                      - np.asarray(w1, dtype=float).ravel()) / TWO_PI)
        return self.deck_from_payload((int(k[0]), int(k[1])))

    def normalize_elem(self, w_star):
        w = np.asarray(w_star, dtype=float).ravel()
        k = np.round(w / TWO_PI)
        return self.deck_from_payload((int(k[0]), int(k[1])))

    def in_fundamental_domain(self, w, tol=1e-9):
        w2, single = _rowwise(w)
        return _unbatch((np.abs(w2) <= np.pi + tol).all(axis=1), single)

    def sample_n(self, n, seed=0):
        k = int(np.ceil(np.sqrt(n)))
        th = np.linspace(0.0, TWO_PI, k, endpoint=False) + 0.13
        A, B = np.meshgrid(th, th, indexing="ij")
        w = np.stack([A.ravel(), B.ravel()], axis=1)[:n]
        return self.project_cover(w)

    def sample_e(self, n, seed=0):
        rng = np.random.default_rng(seed)
        return rng.uniform(-6 * np.pi, 6 * np.pi, size=(n, 2))


class So3Target:
    """N = SO(3) as flattened 3x3 matrices in R^9; E = S^3 (unit quaternions).

    Distances are in the round-metric units of S^3 (rotation angle / 2),
    which makes the double cover a local isometry.
    """

    id = "so3"
    m = 9
    l = 4
    r_inj = np.pi / 2.0
    cover_radius = np.pi
    intrinsic_scale = 1.0 / (2.0 * np.sqrt(2.0))
    deck_kind = "q8"
    _deck_payloads = (0, 1)  # 1, -1

    def base_point(self):
        return np.eye(3).ravel()

    def _mats(self, z):
        return np.atleast_2d(np.asarray(z, dtype=float)).reshape(-1, 3, 3)

    def on_n(self, z, tol=1e-8):
        R = self._mats(z)
        err = np.linalg.norm(np.einsum("nij,nkj->nik", R, R) - np.eye(3),
                             axis=(1, 2))
        det = np.linalg.det(R)
        return (err <= tol * 10) & (np.abs(det - 1) <= tol * 10)

    def on_e(self, w, tol=1e-9):
        w2 = np.atleast_2d(np.asarray(w, dtype=float))
        return np.abs(np.linalg.norm(w2, axis=1) - 1.0) <= tol

    def project_cover(self, w):
        w2, single = _rowwise(w)
        out = quat_to_rot(w2).reshape(-1, 9)
        return _unbatch(out, single)

    def dist_e(self, w1, w2):
        w1, s1 = _rowwise(w1)
        w2b, s2 = _rowwise(w2)
        return _unbatch(_sphere_dist(w1, w2b), s1 and s2)

    def dist_n(self, z1, z2):
        z1b, s1 = _rowwise(z1)
        z2b, s2 = _rowwise(z2)
        q1 = rot_to_quat(self._mats(z1b))
        q2 = rot_to_quat(self._mats(z2b))
        q1 = np.atleast_2d(q1)
        q2 = np.atleast_2d(q2)
        d = np.minimum(_sphere_dist(q1, q2), _sphere_dist(q1, -q2))
        return _unbatch(d, s1 and s2)

    def tube_project(self, z):
        A = self._mats(z)
        U, S, Vt = np.linalg.svd(A)
        R = U @ Vt
        neg = np.linalg.det(R) < 0
        if np.any(neg):
            U = U.copy()
            U[neg, :, 2] *= -1.0
            R = U @ Vt
        out = R.reshape(-1, 9)
        return out[0] if np.asarray(z).ndim == 1 else out

    def margin(self, z):
        A = self._mats(z)
        S = np.linalg.svd(A, compute_uv=False)
        det = np.linalg.det(A)
        m = S[:, 1] + np.sign(det) * S[:, 2]
        return m[0] if np.asarray(z).ndim == 1 else m

    def geodesic_n(self, a, b, t):
        qa = rot_to_quat(np.asarray(a).reshape(3, 3))
        qb = rot_to_quat(np.asarray(b).reshape(3, 3))
        if np.dot(qa, qb) < 0:
            qb = -qb
        return quat_to_rot(quat_slerp(qa, qb, t)).ravel()

    def fiber_lift(self, z):
        z2, single = _rowwise(z)
        q = np.atleast_2d(rot_to_quat(self._mats(z2)))
        return _unbatch(q, single)

    def _fiber_candidates(self, z):
        q = np.atleast_2d(rot_to_quat(self._mats(z)))
        return np.stack([q, -q], axis=0)  # (2, n, 4)

    def lift_step(self, w, z_next, strict=True):
        w2, s1 = _rowwise(w)
        z2, s2 = _rowwise(z_next)
        cands = self._fiber_candidates(z2)
        d = np.stack([_sphere_dist(w2, cands[i]) for i in range(cands.shape[0])])
        pick = np.argmin(d, axis=0)
        out = cands[pick, np.arange(w2.shape[0])]
        if strict and np.any(np.min(d, axis=0) >= self.r_inj - 1e-12):
            raise StepTooLargeError("lift step reaches the injectivity margin")
        return _unbatch(out, s1 and s2)

    def deck_identity(self):
        return DeckElement(self.id, "q8", 0)

    def deck_from_payload(self, p):
        if p not in self._deck_payloads:
            raise InvalidArgumentError("so3 deck group is {1, -1}")
        return DeckElement(self.id, "q8", int(p))

    def deck_generators(self):
        return [self.deck_from_payload(1)]

    def deck_elements(self):
        return [self.deck_from_payload(p) for p in self._deck_payloads]

    def deck_apply(self, el, w):
        w2, single = _rowwise(w)
        return _unbatch(_q8_left_apply(el.payload, w2), single)

    def deck_compose(self, a, b):
        return DeckElement(self.id, "q8", _q8_mul(a.payload, b.payload))

    def deck_inverse(self, a):
        return DeckElement(self.id, "q8", _q8_inv(a.payload))

    def deck_identify(self, w1, w2, tol=1e-6):
        w1 = np.asarray(w1, dtype=float).ravel()
        w2 = np.asarray(w2, dtype=float).ravel()
        for p in self._deck_payloads:
            if np.linalg.norm(_q8_left_apply(p, w1) - w2) <= tol:
                return DeckElement(self.id, "q8", p)
        raise NotSameFiberError("no deck element maps w1 to w2")

    def nearest_deck(self, w1, w2):
        w1 = np.asarray(w1, dtype=float).ravel()
        w2 = np.asarray(w2, dtype=float).ravel()
        best, bd = None, np.inf
        for p in self._deck_payloads:
            d = np.linalg.norm(_q8_left_apply(p, w1) - w2)
            if d < bd:
                best, bd = p, d
        return DeckElement(self.id, "q8", best)

    def normalize_elem(self, w_star):
        return self.deck_identity()  # compact cover: E_* is all of E

    def in_fundamental_domain(self, w, tol=1e-9):
        w2, single = _rowwise(w)
        return _unbatch(np.ones(w2.shape[0], dtype=bool), single)

    def sample_n(self, n, seed=0):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(n, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        return quat_to_rot(q).reshape(-1, 9)

    def sample_e(self, n, seed=0):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(n, 4))
        return q / np.linalg.norm(q, axis=1, keepdims=True)


class So3ModV4Target(So3Target):
    """N = SO(3)/V4 (orientations of a rectangular box); deck group Q8.

    The quotient is by left multiplication with the lifted Klein group, so
    the fiber of a point is the left Q8 orbit {+-q, +-iq, +-jq, +-kq}.
    Ambient points of N are the row-projector triple of the rotation
    matrix, each symmetric 3x3 block in norm-preserving 6-vector form
    (m = 18); this embedding is exactly invariant under the deck action
    and separates orbits.
    """

    id = "so3_mod_v4"
    m = 18
    l = 4
    r_inj = np.pi / 4.0
    cover_radius = np.pi
    intrinsic_scale = 1.0 / 4.0
    deck_kind = "q8"
    _deck_payloads = tuple(range(8))

    def base_point(self):
        return self._embed_quat(np.array([1.0, 0.0, 0.0, 0.0]))

    def _embed_rot(self, R):
        R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
        rows = [R[:, i, :] for i in range(3)]
        blocks = [_mandel(np.einsum("ni,nj->nij", r, r)) for r in rows]
        return np.concatenate(blocks, axis=1)

    def _embed_quat(self, q):
        single = np.asarray(q).ndim == 1
        out = self._embed_rot(quat_to_rot(np.atleast_2d(q)))
        return out[0] if single else out

    def project_cover(self, w):
        w2, single = _rowwise(w)
        return _unbatch(self._embed_rot(quat_to_rot(w2)), single)

    def _recover_rot(self, z):
        """Ambient R^18 -> rotation matrices (one orbit representative)."""
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        n = z2.shape[0]
        P = np.stack([_unmandel(z2[:, 6 * i:6 * (i + 1)]) for i in range(3)],
                     axis=1)  # (n, 3, 3, 3)
        vals, vecs = np.linalg.eigh(P.reshape(-1, 3, 3))
        top = vecs[:, :, 2].reshape(n, 3, 3)  # rows s_i (sign-ambiguous)
        B = top
        U, S, Vt = np.linalg.svd(B)
        R = U @ Vt
        neg = np.linalg.det(R) < 0
        if np.any(neg):
            R = R.copy()
            R[neg, 0, :] *= -1.0  # odd row flip lands in the correct orbit
        return R

    def on_n(self, z, tol=1e-8):
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        back = self._embed_rot(self._recover_rot(z2))
        return np.linalg.norm(back - z2, axis=1) <= tol * 10

    def tube_project(self, z):
        single = np.asarray(z).ndim == 1
        out = self._embed_rot(self._recover_rot(z))
        return out[0] if single else out

    def margin(self, z):
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        n = z2.shape[0]
        P = np.stack([_unmandel(z2[:, 6 * i:6 * (i + 1)]) for i in range(3)],
                     axis=1)
        vals = np.linalg.eigvalsh(P.reshape(-1, 3, 3)).reshape(n, 3, 3)
        gap = vals[:, :, 2] - vals[:, :, 1]
        m = gap.min(axis=1)
        return m[0] if np.asarray(z).ndim == 1 else m

    def canonical_quat(self, q):
        """Lexicographically maximal quaternion in the left Q8 orbit."""
        q = np.asarray(q, dtype=float).ravel()
        best = None
        for p in range(8):
            c = _q8_left_apply(p, q)
            t = tuple(np.round(c, 12))
            if best is None or t > best[0]:
                best = (t, c)
        return best[1]

    def _fiber_candidates(self, z):
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        q = rot_to_quat(self._recover_rot(z2))
        q = np.atleast_2d(q)
        return np.stack([_q8_left_apply(p, q) for p in range(8)], axis=0)

    def fiber_lift(self, z):
        single = np.asarray(z).ndim == 1
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        q = np.atleast_2d(rot_to_quat(self._recover_rot(z2)))
        out = np.stack([self.canonical_quat(qi) for qi in q])
        return out[0] if single else out

    def dist_n(self, z1, z2):
        z1b, s1 = _rowwise(z1)
        z2b, s2 = _rowwise(z2)
        q1 = np.atleast_2d(rot_to_quat(self._recover_rot(z1b)))
        cands = self._fiber_candidates(z2b)
        d = np.stack([_sphere_dist(q1, cands[i]) for i in range(8)])
        return _unbatch(d.min(axis=0), s1 and s2)

    def geodesic_n(self, a, b, t):
        qa = rot_to_quat(self._recover_rot(np.atleast_2d(a)))
        qa = np.asarray(qa, dtype=float).ravel()
        cands = self._fiber_candidates(np.atleast_2d(b))[:, 0, :]
        d = np.arccos(np.clip(cands @ qa, -1, 1))
        qb = cands[int(np.argmin(d))]
        return self._embed_quat(quat_slerp(qa, qb, t))

    def deck_from_payload(self, p):
        return DeckElement(self.id, "q8", int(p))

    def deck_generators(self):
        return [self.deck_from_payload(_Q8_IDX["i"]), self.deck_from_payload(_Q8_IDX["j"])]

    def sample_n(self, n, seed=0):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(n, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        return self._embed_quat(q)


# ----------------------------------------------------------------------
# registry and module-level operations (the public API of this module)

_REGISTRY = {}
for _t in (CircleTarget(), CliffordTorusTarget(), So3Target(), So3ModV4Target()):
    _REGISTRY[_t.id] = _t


def get_target(target_id):
    try:
        return _REGISTRY[target_id]
    except KeyError:
        raise InvalidArgumentError(f"unknown target id: {target_id!r}")


def target_ids():
    return sorted(_REGISTRY)


def cover_project(t, w):
    """pi: E -> N in ambient coordinates."""
    return t.project_cover(w)


def lift_step(t, w, z_next):
    """One step of unique path lifting; raises StepTooLargeError past r_inj."""
    return t.lift_step(w, z_next, strict=True)


def deck_identify(t, w1, w2, tol=1e-6):
    return t.deck_identify(w1, w2, tol=tol)


def deck_compose(t, a, b):
    if a.target_id != b.target_id:
        raise InvalidArgumentError("deck elements from different targets")
    return t.deck_compose(a, b)


def deck_apply(t, a, w):
    return t.deck_apply(a, w)


def normalize_to_fundamental_domain(t, w_star):
    """Deck element phi with phi^{-1}(w_star) in E_*."""
    return t.normalize_elem(w_star)


def deck_from_name(t, name):
    """Parse a canonical deck-element name back into an element."""
    if t.deck_kind == "q8":
        if name not in _Q8_IDX:
            raise InvalidArgumentError(f"unknown deck element {name!r}")
        return t.deck_from_payload(_Q8_IDX[name])
    if t.deck_kind == "int":
        if name == "1":
            return t.deck_from_payload(0)
        if name == "g":
            return t.deck_from_payload(1)
        if name.startswith("g^"):
            return t.deck_from_payload(int(name[2:]))
        raise InvalidArgumentError(f"unknown deck element {name!r}")
    if name == "1":
        return t.deck_from_payload((0, 0))
    inner = name[name.index("(") + 1:name.index(")")]
    k1, k2 = inner.split(",")
    return t.deck_from_payload((int(k1), int(k2)))
