"""Grassmann manifold G(m, R^n): frames, projectors, symmetric vectorization, distances.

A point is stored as an ``n x m`` frame with orthonormal columns; the
subspace it represents is unchanged by ``U -> U @ Q`` for orthogonal ``Q``.
The extrinsic embedding is the projector ``U U^T``, and its inverse takes
the top-``m`` eigenvectors of a (symmetrized) ``n x n`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matlin
from .errors import DegenerateInput, DimMismatch, LengthMismatch, MartinUndefined, SpectralTie

EIGENGAP_TOL = 1e-10


@dataclass(frozen=True)
class GrassmannPoint:
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        if u.ndim != 2:
            raise DimMismatch(f"frame must be n x m, got shape {u.shape}")
        n, m = u.shape
        if not 1 <= m < n:
            raise DimMismatch(f"need 1 <= m < n, got n={n}, m={m}")
        if np.abs(u.T @ u - np.eye(m)).max() > 1e-9:
            raise ValueError("frame columns are not orthonormal")
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def m(self) -> int:
        return self.u.shape[1]


def embed_projector(g: GrassmannPoint) -> np.ndarray:
    return g.u @ g.u.T


def inverse_embed_grassmann(msym, m: int) -> GrassmannPoint | list[GrassmannPoint]:
    """Top-``m`` eigenvector frame of ``(M + M^T) / 2``.

    A stack ``(k, n, n)`` returns a list of points. Raises ``SpectralTie``
    (with the offending stack index) when ``lambda_m - lambda_{m+1} < 1e-10``.
    """
    msym = np.asarray(msym, dtype=np.float64)
    frames = top_eigenframes(msym, m)
    if msym.ndim == 2:
        return GrassmannPoint(frames)
    return [GrassmannPoint(f) for f in frames]


def top_eigenframes(msym, m: int) -> np.ndarray:
    """Array form of :func:`inverse_embed_grassmann`: ``(..., n, m)`` frames."""
    msym = np.asarray(msym, dtype=np.float64)
    n = msym.shape[-1]
    if msym.shape[-2] != n or not 1 <= m < n:
        raise DimMismatch(f"need a square n x n input with 1 <= m < n, got {msym.shape}, m={m}")
    sym = 0.5 * (msym + np.swapaxes(msym, -1, -2))
    q, lam = matlin.sym_eig(sym, check=False)
    gap = lam[..., m - 1] - lam[..., m]
    if np.any(gap < EIGENGAP_TOL):
        bad = np.flatnonzero(np.atleast_1d(gap) < EIGENGAP_TOL)
        raise SpectralTie(
            f"eigengap {float(np.min(gap)):.3e} below {EIGENGAP_TOL}; subspace ill-defined",
            index=int(bad[0]) if msym.ndim > 2 else None,
        )
    return q[..., :m]


def symvec_length(n: int) -> int:
    return n * (n + 1) // 2


def symvec_dim(length: int) -> int:
    """Ambient ``n`` with ``n(n+1)/2 == length``; raises ``LengthMismatch`` otherwise."""
    n = int((np.sqrt(8 * length + 1) - 1) // 2)
    if n < 1 or symvec_length(n) != length:
        raise LengthMismatch(f"{length} is not a triangular number")
    return n


_SQRT2 = np.sqrt(2.0)


def _upper(n):
    return np.triu_indices(n, k=1)


def sym_vec(a) -> np.ndarray:
    """Diagonal first, then the upper triangle row by row scaled by sqrt(2).

    The map is an isometry: ``|sym_vec(A)|_2 == |A|_F``. Stacks are allowed.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise LengthMismatch(f"expected a square matrix, got {a.shape}")
    scale = np.maximum(np.abs(a).max(axis=(-2, -1), initial=0.0), 1.0)
    if np.any(np.abs(a - np.swapaxes(a, -1, -2)).max(axis=(-2, -1)) > 1e-9 * scale):
        raise ValueError("sym_vec: matrix is not symmetric")
    iu, ju = _upper(n)
    return np.concatenate([np.diagonal(a, axis1=-2, axis2=-1), _SQRT2 * a[..., iu, ju]], -1)


def sym_unvec(v, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`sym_vec`."""
    v = np.asarray(v, dtype=np.float64)
    length = v.shape[-1]
    if n is None:
        n = symvec_dim(length)
    elif symvec_length(n) != length:
        raise LengthMismatch(f"length {length} does not match n={n}")
    out = np.zeros(v.shape[:-1] + (n, n))
    idx = np.arange(n)
    out[..., idx, idx] = v[..., :n]
    iu, ju = _upper(n)
    off = v[..., n:] / _SQRT2
    out[..., iu, ju] = off
    out[..., ju, iu] = off
    return out


def principal_angles(a: GrassmannPoint, b: GrassmannPoint) -> np.ndarray:
    """Ascending principal angles in ``[0, pi/2]``.

    Cosines come from the singular values of ``Ua^T Ub``; angles below pi/4
    are instead taken from the sines (singular values of ``Ub - Ua Ua^T Ub``),
    which keeps tiny angles accurate where ``acos`` near 1 cannot.
    """
    if a.u.shape != b.u.shape:
        raise DimMismatch(f"frames differ in shape: {a.u.shape} vs {b.u.shape}")
    return _principal_angles(a.u, b.u)


def _principal_angles(ua, ub):
    cross = np.swapaxes(ua, -1, -2) @ ub
    cos = np.clip(matlin.svd(cross).s, 0.0, 1.0)  # descending
    resid = ub - ua @ cross
    sin = np.clip(matlin.svd(resid).s[..., ::-1], 0.0, 1.0)  # ascending
    by_cos = np.arccos(cos)
    by_sin = np.arcsin(sin)
    theta = np.where(sin < np.sqrt(0.5), by_sin, by_cos)
    return np.sort(theta, axis=-1)


def dist_grassmann(a: GrassmannPoint, b: GrassmannPoint, kind: str = "geodesic") -> float:
    """Principal-angle distance: ``geodesic`` (arc length), ``bc`` or ``martin``.

    Raises:
        MartinUndefined: ``kind="martin"`` and some angle is within 1e-9 of pi/2.
    """
    return float(distance_from_angles(principal_angles(a, b), kind))


def distance_from_angles(theta, kind: str = "geodesic"):
    theta = np.asarray(theta, dtype=np.float64)
    if kind == "geodesic":
        return np.sqrt(np.sum(theta * theta, axis=-1))
    if kind == "bc":
        return 1.0 - np.prod(np.cos(theta) ** 2, axis=-1)
    if kind == "martin":
        if np.any(theta >= np.pi / 2 - 1e-9):
            raise MartinUndefined("Martin distance is undefined for orthogonal directions")
        return -np.sum(np.log(np.cos(theta) ** 2), axis=-1)
    raise ValueError(f"unknown Grassmann distance {kind!r}")


def geodesic_between_frames(ua, ub) -> np.ndarray:
    """Arc-length distance between stacks of frames (no validation)."""
    return distance_from_angles(_principal_angles(ua, ub), "geodesic")


def sample_subspace_uniform(n: int, m: int, rng: np.random.Generator) -> GrassmannPoint:
    """Orthonormalized Gaussian frame; its span is uniform on G(m, R^n)."""
    if not 1 <= m < n:
        raise DimMismatch(f"need 1 <= m < n, got n={n}, m={m}")
    while True:
        g = rng.standard_normal((n, m))
        try:
            return GrassmannPoint(matlin.gram_schmidt(g))
        except DegenerateInput:  # pragma: no cover - probability zero
            continue


def projector_gaussian_sample(gt: GrassmannPoint, sigma: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """``U U^T + sigma (G + G^T) / 2`` with standard normal ``G``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    n = gt.n
    g = rng.standard_normal(shape + (n, n))
    return embed_projector(gt) + sigma * 0.5 * (g + np.swapaxes(g, -1, -2))
