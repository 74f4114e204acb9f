"""Dense real-matrix kernels: SVD, symmetric eigendecomposition, Gram-Schmidt.

All routines accept a single matrix or a stack of matrices with shape
``(..., rows, cols)`` and work in float64. Stacked inputs are processed in
lock-step; a rotation that one member of the stack does not need is applied
to it as the identity (``c = 1, s = 0``).

Both Jacobi kernels visit index pairs in round-robin (tournament) order, so
each round rotates ``n / 2`` disjoint pairs at once. The working matrix is
kept permuted so that the pairs of the current round sit in adjacent
columns, which turns every pair access into a reshape view.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DegenerateInput, NonConvergence, NotSymmetric

MAX_SWEEPS = 100
# Columns whose rotation coefficient is below this fraction of
# sqrt(alpha * beta) are treated as orthogonal (one-sided Jacobi).
SVD_ORTH_TOL = 1e-15
# Columns with norm below this fraction of ||A||_F are rounding residue of a
# deflated direction; rotating them against each other never settles.
SVD_NULL_TOL = 1e-14
# Off-diagonal entries below this fraction of ||S||_F are treated as zero.
EIG_OFF_TOL = 1e-15
# Entries at or below this magnitude do not decide a column's sign.
SIGN_EPS = 1e-12
GS_TOL = 1e-12


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


class SymEigResult(NamedTuple):
    q: np.ndarray
    lam: np.ndarray


def _as_stack(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2:
        raise ValueError(f"{name}: expected a matrix, got shape {a.shape}")
    if a.shape[-1] < 1 or a.shape[-2] < 1:
        raise ValueError(f"{name}: empty matrix of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries")
    return a


def _fix_signs(u, *others):
    """Flip columns so the first entry with ``|x| > SIGN_EPS`` is positive.

    The same flips are applied to each array in ``others`` (paired columns).
    """
    big = np.abs(u) > SIGN_EPS
    first = np.argmax(big, axis=-2)  # (..., k); 0 when the column is all tiny
    lead = np.take_along_axis(u, first[..., None, :], axis=-2)[..., 0, :]
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return (u * sign[..., None, :],) + tuple(o * sign[..., None, :] for o in others)


def _complete_columns(u, good):
    """Replace the columns of ``u`` flagged ``~good`` with an orthonormal completion.

    Each missing column is the coordinate vector with the largest residual
    against the columns kept so far, orthogonalized twice.
    """
    u = u.copy()
    flat_u = u.reshape((-1,) + u.shape[-2:])
    flat_good = good.reshape((-1, good.shape[-1]))
    rows = flat_u.shape[1]
    for b in np.nonzero(~flat_good.all(axis=1))[0]:
        basis = flat_u[b][:, flat_good[b]]
        for j in np.nonzero(~flat_good[b])[0]:
            w = np.eye(rows)
            for _ in range(2):
                w -= basis @ (basis.T @ w)
            norms = np.linalg.norm(w, axis=0)
            best = int(np.argmax(norms))
            col = w[:, best] / norms[best]
            flat_u[b, :, j] = col
            basis = np.column_stack([basis, col])
    return flat_u.reshape(u.shape)


def _tournament(m):
    """Circle-method schedule for an even number of players ``m``.

    Returns ``(first, steps)``: the initial ordering and, for every later
    round, the index permutation taking the previous ordering to the next.
    In each ordering, positions ``(2i, 2i + 1)`` form the pairs of that
    round, and over ``m - 1`` rounds every pair meets exactly once.
    """
    players = list(range(m))
    orders = []
    for _ in range(m - 1):
        order = []
        for i in range(m // 2):
            order += [players[i], players[m - 1 - i]]
        orders.append(np.array(order))
        players = [players[0], players[-1]] + players[1:-1]
    # wrap around so the next sweep starts from the first ordering again
    orders.append(orders[0])
    steps = []
    for prev, nxt in zip(orders[:-1], orders[1:]):
        where = np.empty(m, dtype=np.intp)
        where[prev] = np.arange(m)
        steps.append(where[nxt])
    return orders[0], steps


def _rotation(theta, active):
    """Smaller-root Jacobi rotation (t, c, s) with identity where inactive."""
    with np.errstate(over="ignore"):
        t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    return t, c, t * c


def _pad_even(a, both):
    n = a.shape[-1]
    if n % 2 == 0:
        return a
    pad = [(0, 0)] * (a.ndim - 2) + [(0, 1 if both else 0), (0, 1)]
    return np.pad(a, pad)


def _jacobi_tall(a):
    """One-sided (Hestenes) Jacobi on a tall stack.

    Returns ``(work, v)`` with ``a @ v = work`` and mutually orthogonal
    columns of ``work``, both with columns in the original order.
    """
    n = a.shape[-1]
    work = _pad_even(a, both=False)
    m = work.shape[-1]
    first, steps = _tournament(m)
    order = first.copy()
    work = work[..., :, first].copy()
    v = np.broadcast_to(np.eye(m), work.shape[:-2] + (m, m))[..., :, first].copy()
    floor = (SVD_NULL_TOL**2) * np.einsum("...ij,...ij->...", work, work)[..., None]
    for _ in range(MAX_SWEEPS):
        rotated = False
        for step in steps:
            wp = work.reshape(work.shape[:-1] + (m // 2, 2))
            ap, aq = wp[..., 0], wp[..., 1]
            alpha = np.einsum("...kj,...kj->...j", ap, ap)
            beta = np.einsum("...kj,...kj->...j", aq, aq)
            gamma = np.einsum("...kj,...kj->...j", ap, aq)
            active = (np.abs(gamma) > SVD_ORTH_TOL * np.sqrt(alpha * beta)) & (alpha > floor) & (beta > floor)
            if np.any(active):
                g = np.where(active, gamma, 1.0)
                t, c, s = _rotation((beta - alpha) / (2.0 * g), active)
                active &= t != 0.0
            if np.any(active):
                rotated = True
                c = np.where(active, c, 1.0)[..., None, :]
                s = np.where(active, s, 0.0)[..., None, :]
                new_p = c * ap - s * aq
                aq[...] = s * ap + c * aq
                ap[...] = new_p
                vv = v.reshape(v.shape[:-1] + (m // 2, 2))
                vp, vq = vv[..., 0], vv[..., 1]
                new_p = c * vp - s * vq
                vq[...] = s * vp + c * vq
                vp[...] = new_p
            work = np.take(work, step, axis=-1)
            v = np.take(v, step, axis=-1)
            order = order[step]
        if not rotated:
            back = np.argsort(order)
            return work[..., :, back][..., :n], v[..., :n, back][..., :n]
    gram = np.swapaxes(work, -1, -2) @ work
    off = np.abs(gram - np.diag(np.diagonal(gram, axis1=-2, axis2=-1)))
    raise NonConvergence(
        f"one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps",
        residual=float(off.max()),
    )


def _pow2_scale(a):
    """Per-matrix power of two near ``max|a|`` (exact rescaling; 1 for zeros).

    Keeps squared norms away from underflow and overflow.
    """
    peak = np.abs(a).max(axis=(-2, -1), keepdims=True)
    _, exp = np.frexp(np.where(peak > 0.0, peak, 1.0))
    return np.ldexp(1.0, exp)


def svd(a) -> SvdResult:
    """Thin SVD ``a = u @ diag(s) @ v.T`` with ``s`` descending.

    One-sided Jacobi, at most ``MAX_SWEEPS`` sweeps. Column signs are fixed
    so the first non-negligible entry of every column of ``u`` is positive;
    ``v`` follows ``u``. Columns of ``u`` belonging to (numerically) zero
    singular values are filled by an orthonormal completion.

    Raises:
        NonConvergence: the sweep cap was hit; ``residual`` is the largest
            remaining column inner product.
    """
    a = _as_stack(a, "svd")
    rows, cols = a.shape[-2:]
    if rows < cols:
        r = svd(np.swapaxes(a, -1, -2))
        v, u = _fix_signs(r.v, r.u)
        return SvdResult(v, r.s, u)

    scale = _pow2_scale(a)
    work, v = _jacobi_tall(a / scale)
    s = np.sqrt(np.einsum("...ij,...ij->...j", work, work))
    order = np.argsort(-s, axis=-1, kind="stable")
    s = np.take_along_axis(s, order, axis=-1)
    work = np.take_along_axis(work, order[..., None, :], axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)

    smax = s[..., :1]
    good = (s > 0.0) & (s > 1e-13 * smax)
    safe = np.where(good, s, 1.0)
    u = work / safe[..., None, :]
    if not good.all():
        u = _complete_columns(u, good)
    u, v = _fix_signs(u, v)
    return SvdResult(u, s * scale[..., 0], v)


def sym_eig(s, check: bool = True) -> SymEigResult:
    """Eigendecomposition ``s = q @ diag(lam) @ q.T`` of a symmetric matrix.

    Cyclic two-sided Jacobi; eigenvalues descending, eigenvector signs fixed
    like :func:`svd`.

    Raises:
        NotSymmetric: ``||S - S^T||_max > 1e-9 ||S||_max`` (callers symmetrize first).
        NonConvergence: sweep cap exceeded.
    """
    a = _as_stack(s, "sym_eig")
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise NotSymmetric(f"sym_eig: matrix is not square: {a.shape}")
    if check:
        scale = np.abs(a).max(axis=(-2, -1))
        asym = np.abs(a - np.swapaxes(a, -1, -2)).max(axis=(-2, -1))
        if np.any(asym > 1e-9 * scale):
            raise NotSymmetric(f"sym_eig: asymmetry {float(asym.max()):.3e} exceeds tolerance")
    scale = _pow2_scale(a)
    a = 0.5 * (a + np.swapaxes(a, -1, -2)) / scale
    tol = EIG_OFF_TOL * np.sqrt(np.einsum("...ij,...ij->...", a, a))[..., None]
    a = _pad_even(a, both=True)
    m = a.shape[-1]
    first, steps = _tournament(m)
    order = first.copy()
    a = a[..., first, :][..., :, first].copy()
    q = np.broadcast_to(np.eye(m), a.shape)[..., :, first].copy()
    h = m // 2
    for _ in range(MAX_SWEEPS):
        rotated = False
        for step in steps:
            blocks = a.reshape(a.shape[:-2] + (h, 2, h, 2))
            idx = np.arange(h)
            app = blocks[..., idx, 0, idx, 0]
            arr = blocks[..., idx, 1, idx, 1]
            apr = blocks[..., idx, 0, idx, 1]
            active = np.abs(apr) > tol
            if np.any(active):
                rotated = True
                g = np.where(active, apr, 1.0)
                t, c, sn = _rotation((arr - app) / (2.0 * g), active)
                cols = a.reshape(a.shape[:-1] + (h, 2))
                c_, s_ = c[..., None, :], sn[..., None, :]
                cp, cr = cols[..., 0], cols[..., 1]
                new_p = c_ * cp - s_ * cr
                cr[...] = s_ * cp + c_ * cr
                cp[...] = new_p
                rows = a.reshape(a.shape[:-2] + (h, 2, m))
                c_, s_ = c[..., :, None], sn[..., :, None]
                rp, rr = rows[..., 0, :], rows[..., 1, :]
                new_p = c_ * rp - s_ * rr
                rr[...] = s_ * rp + c_ * rr
                rp[...] = new_p
                blocks[..., idx, 0, idx, 0] = np.where(active, app - t * apr, app)
                blocks[..., idx, 1, idx, 1] = np.where(active, arr + t * apr, arr)
                zero = np.where(active, 0.0, apr)
                blocks[..., idx, 0, idx, 1] = zero
                blocks[..., idx, 1, idx, 0] = zero
                qc = q.reshape(q.shape[:-1] + (h, 2))
                c_, s_ = c[..., None, :], sn[..., None, :]
                qp, qr = qc[..., 0], qc[..., 1]
                new_p = c_ * qp - s_ * qr
                qr[...] = s_ * qp + c_ * qr
                qp[...] = new_p
            a = np.take(np.take(a, step, axis=-2), step, axis=-1)
            q = np.take(q, step, axis=-1)
            order = order[step]
        if not rotated:
            break
    else:
        off = np.abs(a - np.einsum("...ii->...i", a)[..., None] * np.eye(m))
        raise NonConvergence(
            f"Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps",
            residual=float(off.max()),
        )
    back = np.argsort(order)[:n]
    a = a[..., back, :][..., :, back]
    q = q[..., :n, :][..., :, back]

    lam = np.diagonal(a, axis1=-2, axis2=-1) * scale[..., 0]
    order = np.argsort(-lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    q = np.take_along_axis(q, order[..., None, :], axis=-1)
    (q,) = _fix_signs(q)
    return SymEigResult(q, lam)


def gram_schmidt(cols) -> np.ndarray:
    """Orthonormalize the columns of an ``n x k`` matrix (or a stack of them).

    Modified Gram-Schmidt with one re-orthogonalization pass, so the first
    output column is the normalized first input column and each prefix of
    columns spans the same space as the input prefix.

    Raises:
        DegenerateInput: a deflated column has norm below ``1e-12``.
    """
    a = _as_stack(cols, "gram_schmidt")
    out = a.copy()
    k = a.shape[-1]
    for j in range(k):
        w = out[..., :, j]
        for _ in range(2):
            for i in range(j):
                qi = out[..., :, i]
                w = w - np.einsum("...k,...k->...", qi, w)[..., None] * qi
        nrm = np.sqrt(np.einsum("...k,...k->...", w, w))
        if np.any(nrm < GS_TOL):
            raise DegenerateInput(
                f"gram_schmidt: column {j} is (nearly) dependent on earlier columns "
                f"(residual norm {float(nrm.min()):.3e})"
            )
        out[..., :, j] = w / nrm[..., None]
    return out
