"""Rotations and rigid motions: SO(3)/SE(3) maps, embeddings, distances, noise.

Rotations are plain ``(..., 3, 3)`` float arrays; every function accepts a
single matrix or a stack. Tangent coordinates are ``(..., 3)`` arrays for
so(3) and ``(..., 6)`` arrays ordered ``(omega, v)`` for se(3).

Representation tags (``EmbeddedVector.tag``):

=========  ======  =====================================================
tag        length  meaning
=========  ======  =====================================================
euler3     3       intrinsic Z-Y-X angles (yaw, pitch, roll), radians
axis3      3       axis-angle vector, the so(3) logarithm
quat4      4       unit quaternion ``(w, x, y, z)``
sixd6      6       first two columns of R, ``(x_a, x_b)``
nine9      9       row-major flattening of R
se12       12      nine9 of the rotation followed by the translation
symvec     n(n+1)/2  symmetric-matrix vectorization (see ``grassmann``)
=========  ======  =====================================================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matlin
from .errors import (
    BadFraction,
    DegenerateInput,
    DispersedSamples,
    NonConvergence,
    NotSkew,
    RankDeficient,
    TagMismatch,
    UnknownTag,
)

TAG_LENGTHS = {"euler3": 3, "axis3": 3, "quat4": 4, "sixd6": 6, "nine9": 9, "se12": 12}
ROTATION_TAGS = ("euler3", "axis3", "quat4", "sixd6", "nine9")

_SMALL_ANGLE = 1e-7
_NEAR_PI = 1e-7


@dataclass(frozen=True)
class EmbeddedVector:
    """A tagged Euclidean representation; no manifold constraint on ``data``.

    ``data`` may carry leading batch dimensions. ``length`` must be given
    for the ``symvec`` tag, whose size depends on the ambient dimension.
    """

    tag: str
    data: np.ndarray
    length: int | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if self.tag == "symvec":
            if self.length is None:
                raise UnknownTag("symvec vectors must declare their length")
            want = self.length
        elif self.tag in TAG_LENGTHS:
            want = TAG_LENGTHS[self.tag]
        else:
            raise UnknownTag(f"unknown representation tag {self.tag!r}")
        if data.ndim < 1 or data.shape[-1] != want:
            raise TagMismatch(f"{self.tag} expects length {want}, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"{self.tag} vector has non-finite entries")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation, ``x -> rot @ x + trans`` (batched allowed)."""

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=np.float64))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64))
        if self.rot.shape[-2:] != (3, 3) or self.trans.shape[-1:] != (3,):
            raise ValueError(f"bad transform shapes {self.rot.shape}, {self.trans.shape}")

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form ``[[R, t], [0, 1]]``."""
        out = np.zeros(self.rot.shape[:-2] + (4, 4))
        out[..., :3, :3] = self.rot
        out[..., :3, 3] = self.trans
        out[..., 3, 3] = 1.0
        return out

    def inverse(self) -> "RigidTransform":
        rt = np.swapaxes(self.rot, -1, -2)
        return RigidTransform(rt, -np.einsum("...ij,...j->...i", rt, self.trans))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``."""
        return RigidTransform(
            self.rot @ other.rot,
            np.einsum("...ij,...j->...i", self.rot, other.trans) + self.trans,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(..., N, 3)`` point set."""
        return points @ np.swapaxes(self.rot, -1, -2) + self.trans[..., None, :]

    def __getitem__(self, idx) -> "RigidTransform":
        return RigidTransform(self.rot[idx], self.trans[idx])


@dataclass(frozen=True)
class ConcentratedGaussian:
    """Tangent-space Gaussian pushed through ``exp`` at ``mean``.

    ``mean`` is a 3x3 rotation (``sigma`` is 3x3) or a RigidTransform
    (``sigma`` is 6x6 over ``(omega, v)``).
    """

    mean: np.ndarray | RigidTransform
    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        d = 6 if isinstance(self.mean, RigidTransform) else 3
        if sigma.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {sigma.shape}")
        if np.abs(sigma - sigma.T).max() > 1e-12:
            raise ValueError("covariance is not symmetric")
        if matlin.sym_eig(sigma).lam[-1] <= 0.0:
            raise ValueError("covariance is not positive definite")
        object.__setattr__(self, "sigma", sigma)


def is_rotation(r, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=np.float64)
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(r, -1, -2) @ r - eye).max() <= tol
    return bool(ortho and np.abs(np.linalg.det(r) - 1.0).max() <= tol)


def hat(theta) -> np.ndarray:
    """Cross-product matrix: ``hat(theta) @ x == cross(theta, x)``."""
    theta = np.asarray(theta, dtype=np.float64)
    x, y, z = theta[..., 0], theta[..., 1], theta[..., 2]
    o = np.zeros_like(x)
    return np.stack(
        [np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)], -2
    )


def vee(s) -> np.ndarray:
    """Inverse of :func:`hat`; rejects matrices with ``||S + S^T||_max > 1e-9``."""
    s = np.asarray(s, dtype=np.float64)
    if np.abs(s + np.swapaxes(s, -1, -2)).max(initial=0.0) > 1e-9:
        raise NotSkew("vee: matrix is not skew-symmetric")
    return np.stack([s[..., 2, 1], s[..., 0, 2], s[..., 1, 0]], -1)


def _vee_unchecked(s):
    return np.stack([s[..., 2, 1], s[..., 0, 2], s[..., 1, 0]], -1)


def _norm(x):
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def exp_so3(theta) -> np.ndarray:
    """Rodrigues formula ``I + A K + B K^2`` with Taylor coefficients near zero."""
    theta = np.asarray(theta, dtype=np.float64)
    angle = _norm(theta)
    small = angle < 1e-4
    safe = np.where(small, 1.0, angle)
    a2 = angle * angle
    coef_a = np.where(small, 1.0 - a2 / 6.0 + a2 * a2 / 120.0, np.sin(safe) / safe)
    coef_b = np.where(small, 0.5 - a2 / 24.0 + a2 * a2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = hat(theta)
    return np.eye(3) + coef_a[..., None, None] * k + coef_b[..., None, None] * (k @ k)


def log_so3(r) -> np.ndarray:
    """Rotation vector with norm in ``[0, pi]``.

    The angle comes from ``atan2(|vee(R - R^T)| / 2, (tr R - 1) / 2)``.
    Below ``1e-7`` rad the inverse-sinc factor uses its Taylor expansion;
    when ``cos(angle) < -1 + 1e-7`` the axis is read off the largest
    diagonal entry of the symmetric part, with the sign taken from the
    skew part.
    """
    r = np.asarray(r, dtype=np.float64)
    skew = _vee_unchecked(r - np.swapaxes(r, -1, -2))  # = 2 sin(angle) * axis
    sin_a = 0.5 * _norm(skew)
    cos_a = np.clip(0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    angle = np.arctan2(sin_a, cos_a)

    small = angle < _SMALL_ANGLE
    safe_sin = np.where(small | (sin_a == 0.0), 1.0, sin_a)
    factor = np.where(small, 0.5 + angle * angle / 12.0, 0.5 * angle / safe_sin)
    out = factor[..., None] * skew

    near_pi = cos_a < -1.0 + _NEAR_PI
    if np.any(near_pi):
        sym = 0.5 * (r + np.swapaxes(r, -1, -2))
        nnt = (sym - cos_a[..., None, None] * np.eye(3)) / (1.0 - cos_a)[..., None, None]
        diag = np.diagonal(nnt, axis1=-2, axis2=-1)
        i = np.argmax(diag, axis=-1)
        row = np.take_along_axis(nnt, i[..., None, None], axis=-2)[..., 0, :]
        lead = np.sqrt(np.clip(np.take_along_axis(diag, i[..., None], -1), 0.0, None))
        axis = row / np.where(lead > 0, lead, 1.0)
        axis = axis / _norm(axis)[..., None]
        flip = np.einsum("...i,...i->...", axis, skew) < 0.0
        axis = np.where(flip[..., None], -axis, axis)
        out = np.where(near_pi[..., None], angle[..., None] * axis, out)
    return out


def _se3_coeffs(angle):
    """``(B, C)`` with ``V = I + B K + C K^2`` (Taylor near zero)."""
    small = angle < 1e-4
    safe = np.where(small, 1.0, angle)
    a2 = angle * angle
    b = np.where(small, 0.5 - a2 / 24.0 + a2 * a2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe))
    c = np.where(small, 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0, (safe - np.sin(safe)) / safe**3)
    return b, c


def exp_se3(xi) -> RigidTransform:
    """``xi = (omega, v)`` -> ``(exp_so3(omega), V(omega) @ v)``."""
    xi = np.asarray(xi, dtype=np.float64)
    omega, v = xi[..., :3], xi[..., 3:]
    b, c = _se3_coeffs(_norm(omega))
    k = hat(omega)
    vmat = np.eye(3) + b[..., None, None] * k + c[..., None, None] * (k @ k)
    return RigidTransform(exp_so3(omega), np.einsum("...ij,...j->...i", vmat, v))


def log_se3(m: RigidTransform) -> np.ndarray:
    omega = log_so3(m.rot)
    angle = _norm(omega)
    small = angle < 1e-4
    safe = np.where(small, 1.0, angle)
    half = 0.5 * safe
    # V^{-1} = I - K/2 + d K^2,  d = (1 - (angle/2) cot(angle/2)) / angle^2
    d = np.where(
        small,
        1.0 / 12.0 + angle * angle / 720.0,
        (1.0 - half * np.cos(half) / np.sin(half)) / (safe * safe),
    )
    k = hat(omega)
    vinv = np.eye(3) - 0.5 * k + d[..., None, None] * (k @ k)
    return np.concatenate([omega, np.einsum("...ij,...j->...i", vinv, m.trans)], -1)


# --- embeddings -----------------------------------------------------------------


def project_so3_svd(m, strict: bool = True) -> np.ndarray:
    """Frobenius-nearest rotation to a 3x3 matrix (or a nine9 vector).

    ``U V^T`` when that has positive determinant, otherwise ``U H V^T`` with
    ``H = diag(1, 1, -1)``, singular values descending.

    Raises:
        RankDeficient: (``strict`` only) the two smallest singular values sum
            below ``1e-12``; the representative is attached as ``result``.
    """
    if isinstance(m, EmbeddedVector):
        if m.tag != "nine9":
            raise TagMismatch(f"project_so3_svd expects nine9, got {m.tag}")
        m = m.data
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        m = m.reshape(m.shape[:-1] + (3, 3))
    u, s, v = matlin.svd(m)
    vt = np.swapaxes(v, -1, -2)
    base = u @ vt
    flip = np.linalg.det(base) < 0.0
    h = np.ones(m.shape[:-2] + (3,))
    h[..., 2] = np.where(flip, -1.0, 1.0)
    out = (u * h[..., None, :]) @ vt
    if strict and np.any(s[..., 1] + s[..., 2] < 1e-12):
        raise RankDeficient("nearest rotation is not unique (rank < 2)", result=out)
    return out


def rot_from_6d(x) -> np.ndarray:
    """Gram-Schmidt on ``(x_a, x_b)``; third column is their cross product."""
    if isinstance(x, EmbeddedVector):
        if x.tag != "sixd6":
            raise TagMismatch(f"rot_from_6d expects sixd6, got {x.tag}")
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    xa, xb = x[..., :3], x[..., 3:6]
    na = _norm(xa)
    if np.any(na < 1e-12):
        raise DegenerateInput("sixd6: first vector is (nearly) zero")
    b1 = xa / na[..., None]
    w = xb - np.einsum("...i,...i->...", b1, xb)[..., None] * b1
    nw = _norm(w)
    if np.any(nw < 1e-12):
        raise DegenerateInput("sixd6: vectors are (nearly) parallel")
    b2 = w / nw[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], -1)


def _axis_rot(angle, axis):
    c, s = np.cos(angle), np.sin(angle)
    o, one = np.zeros_like(angle), np.ones_like(angle)
    if axis == "x":
        rows = [[one, o, o], [o, c, -s], [o, s, c]]
    elif axis == "y":
        rows = [[c, o, s], [o, one, o], [-s, o, c]]
    else:
        rows = [[c, -s, o], [s, c, o], [o, o, one]]
    return np.stack([np.stack(r, -1) for r in rows], -2)


def euler_to_rotation(angles) -> np.ndarray:
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` for ``angles = (yaw, pitch, roll)``."""
    angles = np.asarray(angles, dtype=np.float64)
    return (
        _axis_rot(angles[..., 0], "z") @ _axis_rot(angles[..., 1], "y") @ _axis_rot(angles[..., 2], "x")
    )


def rotation_to_euler(r) -> np.ndarray:
    """Inverse of :func:`euler_to_rotation` with pitch in ``[-pi/2, pi/2]``."""
    r = np.asarray(r, dtype=np.float64)
    pitch = -np.arcsin(np.clip(r[..., 2, 0], -1.0, 1.0))
    yaw = np.arctan2(r[..., 1, 0], r[..., 0, 0])
    roll = np.arctan2(r[..., 2, 1], r[..., 2, 2])
    return np.stack([yaw, pitch, roll], -1)


def quat_to_rotation(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = _norm(q)
    if np.any(n < 1e-12):
        raise DegenerateInput("quat4: zero quaternion")
    w, x, y, z = np.moveaxis(q / n[..., None], -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def rotation_to_quat(r) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0`` (Shepperd's method)."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r, axis1=-2, axis2=-1)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    cand = np.stack(
        [
            np.stack([1 + tr, r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]], -1),
            np.stack([r[..., 2, 1] - r[..., 1, 2], 1 + 2 * d[..., 0] - tr, r[..., 0, 1] + r[..., 1, 0], r[..., 0, 2] + r[..., 2, 0]], -1),
            np.stack([r[..., 0, 2] - r[..., 2, 0], r[..., 0, 1] + r[..., 1, 0], 1 + 2 * d[..., 1] - tr, r[..., 1, 2] + r[..., 2, 1]], -1),
            np.stack([r[..., 1, 0] - r[..., 0, 1], r[..., 0, 2] + r[..., 2, 0], r[..., 1, 2] + r[..., 2, 1], 1 + 2 * d[..., 2] - tr], -1),
        ],
        -2,
    )
    pivot = np.argmax(np.stack([tr, d[..., 0], d[..., 1], d[..., 2]], -1), axis=-1)
    q = np.take_along_axis(cand, pivot[..., None, None], axis=-2)[..., 0, :]
    q = q / _norm(q)[..., None]
    return np.where(q[..., :1] < 0, -q, q)


def baseline_to_rotation(e: EmbeddedVector) -> np.ndarray:
    if e.tag == "euler3":
        return euler_to_rotation(e.data)
    if e.tag == "axis3":
        return exp_so3(e.data)
    if e.tag == "quat4":
        return quat_to_rotation(e.data)
    raise TagMismatch(f"baseline_to_rotation does not handle {e.tag}")


def represent(r, tag: str) -> EmbeddedVector:
    """The embedding ``J`` of a rotation under any rotation tag."""
    r = np.asarray(r, dtype=np.float64)
    if tag == "nine9":
        data = r.reshape(r.shape[:-2] + (9,))
    elif tag == "sixd6":
        data = np.concatenate([r[..., :, 0], r[..., :, 1]], -1)
    elif tag == "euler3":
        data = rotation_to_euler(r)
    elif tag == "axis3":
        data = log_so3(r)
    elif tag == "quat4":
        data = rotation_to_quat(r)
    else:
        raise UnknownTag(f"no rotation representation {tag!r}")
    return EmbeddedVector(tag, data)


def embed(x) -> EmbeddedVector:
    """nine9 for a rotation, se12 (nine9 then translation) for a transform."""
    if isinstance(x, RigidTransform):
        flat = x.rot.reshape(x.rot.shape[:-2] + (9,))
        return EmbeddedVector("se12", np.concatenate([flat, x.trans], -1))
    return represent(x, "nine9")


def inverse_embed(e: EmbeddedVector, strict: bool = True):
    """Map a representation back to SO(3) (or SE(3) for se12)."""
    if e.tag in ("euler3", "axis3", "quat4"):
        return baseline_to_rotation(e)
    if e.tag == "sixd6":
        return rot_from_6d(e.data)
    if e.tag == "nine9":
        return project_so3_svd(e.data, strict=strict)
    if e.tag == "se12":
        return RigidTransform(project_so3_svd(e.data[..., :9], strict=strict), e.data[..., 9:].copy())
    raise UnknownTag(f"inverse_embed cannot handle {e.tag!r}")


# --- distances ------------------------------------------------------------------


def dist_geodesic(a, b) -> np.ndarray:
    """Rotation angle of ``a^T b`` (SO(3)) or ``|log(a^-1 b)|`` (SE(3), unit weights)."""
    if isinstance(a, RigidTransform):
        return _norm(log_se3(a.inverse().compose(b)))
    rel = np.swapaxes(np.asarray(a, dtype=np.float64), -1, -2) @ np.asarray(b, dtype=np.float64)
    return _norm(log_so3(rel))


def dist_angular(a, b) -> np.ndarray:
    """``arccos((tr(a^T b) - 1) / 2)`` with the argument clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    tr = np.einsum("...ij,...ij->...", a, b)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def dist_extrinsic(a: EmbeddedVector, b: EmbeddedVector) -> np.ndarray:
    """Mean squared entrywise difference of two same-tag representations."""
    if a.tag != b.tag or a.data.shape[-1] != b.data.shape[-1]:
        raise TagMismatch(f"cannot compare {a.tag} with {b.tag}")
    return np.mean((a.data - b.data) ** 2, axis=-1)


# --- noise model and means ------------------------------------------------------


def sample_concentrated(g: ConcentratedGaussian, rng: np.random.Generator, size=None):
    """Draw ``mean @ exp(eps^)``, ``eps ~ N(0, sigma)`` in tangent coordinates."""
    d = g.sigma.shape[0]
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    z = rng.standard_normal(shape + (d,))
    chol = np.linalg.cholesky(g.sigma)
    eps = z @ chol.T
    if isinstance(g.mean, RigidTransform):
        return g.mean.compose(exp_se3(eps))
    return np.asarray(g.mean) @ exp_so3(eps)


def frechet_mean(samples, tol: float = 1e-10, max_iter: int = 1000) -> np.ndarray:
    """Intrinsic (Karcher) mean of rotations by fixed-point iteration.

    Starts at ``samples[0]`` and updates ``mu <- mu exp(mean_i log(mu^T R_i))``
    until the update norm drops to ``tol``.

    Raises:
        DispersedSamples: some sample is ``pi/2`` or farther from ``samples[0]``.
        NonConvergence: ``max_iter`` reached; last iterate in ``result``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[None]
    if len(samples) == 0:
        raise ValueError("frechet_mean needs at least one sample")
    mu = samples[0]
    if np.any(dist_geodesic(mu, samples) >= np.pi / 2):
        raise DispersedSamples("samples are not within pi/2 of the first sample")
    step = np.inf
    for _ in range(max_iter):
        update = log_so3(mu.T @ samples).mean(axis=0)
        step = float(_norm(update))
        mu = mu @ exp_so3(update)
        if step <= tol:
            return mu
    raise NonConvergence("frechet_mean did not converge", result=mu, residual=step)


def chordal_mean_project(samples, strict: bool = True) -> np.ndarray:
    """Entrywise mean of the nine9 embeddings, projected back onto SO(3)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[None]
    if len(samples) == 0:
        raise ValueError("chordal_mean_project needs at least one sample")
    return project_so3_svd(samples.mean(axis=0), strict=strict)


def sample_transform_uniform(mode: str, fraction: float, rng: np.random.Generator, size=None) -> RigidTransform:
    """Rotation parameters i.i.d. uniform on ``[-pi f, pi f]^3``, translation N(0, I).

    ``euler`` reads the cube sample as Z-Y-X angles; ``axis`` and ``so3``
    read it as an axis-angle vector and map it through ``exp``.
    """
    if not (0.0 < fraction <= 1.0) or not np.isfinite(fraction):
        raise BadFraction(f"fraction must lie in (0, 1], got {fraction!r}")
    if mode not in ("euler", "axis", "so3"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    half = np.pi * fraction
    params = rng.uniform(-half, half, shape + (3,))
    trans = rng.standard_normal(shape + (3,))
    rot = euler_to_rotation(params) if mode == "euler" else exp_so3(params)
    return RigidTransform(rot, trans)
