"""Numerical checks of the embedding properties behind the method.

Each check returns one or more :class:`PropRow` records. The suite is used
by ``demr props`` and by the acceptance tests, so both see the same
statistics for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grassmann, liegroups, matlin, net
from .rng import make_rng


@dataclass(frozen=True)
class PropRow:
    check: str
    statistic: float
    threshold: float
    passed: bool

    def __post_init__(self):
        # numpy scalars sneak in from comparisons; keep rows JSON-friendly
        object.__setattr__(self, "statistic", float(self.statistic))
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "passed", bool(self.passed))


@dataclass(frozen=True)
class PropsConfig:
    seed: int = 0
    nearest_matrices: int = 1000
    nearest_candidates: int = 10_000
    roundtrip_trials: int = 100_000
    grassmann_trials: int = 1000
    grassmann_n: int = 20
    grassmann_m: int = 5
    chordal_pairs: int = 10_000
    mle_sigma: float = 0.05
    mle_samples: int = 10_000
    mle_means: int = 20
    mle_threshold: float = 5e-3
    grassmann_sigma: float = 0.01
    grassmann_samples: int = 10_000
    grassmann_candidates: int = 100
    grad_seeds: tuple = (0, 1, 2)
    grad_h: float = 1e-4


def uniform_rotations(rng: np.random.Generator, size: int) -> np.ndarray:
    """Haar-uniform rotations from normalized Gaussian quaternions."""
    q = rng.standard_normal((size, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return liegroups.quat_to_rotation(q)


def check_nearest_rotation(cfg: PropsConfig) -> list[PropRow]:
    """SVD projection is never beaten by any Monte-Carlo rotation."""
    rng = make_rng(cfg.seed, "nearest")
    m = rng.standard_normal((cfg.nearest_matrices, 3, 3))
    r_star = liegroups.project_so3_svd(m)
    cand = uniform_rotations(rng, cfg.nearest_candidates)
    d_star = np.linalg.norm((m - r_star).reshape(-1, 9), axis=1)
    # |M - R|^2 = |M|^2 + 3 - 2 <M, R>
    m2 = np.sum(m.reshape(-1, 9) ** 2, axis=1)
    inner = m.reshape(-1, 9) @ cand.reshape(-1, 9).T
    d_best = np.sqrt(np.maximum(m2 - 2.0 * inner.max(axis=1) + 3.0, 0.0))
    excess = float(np.max(d_star - d_best))
    return [PropRow("nearest_rotation_excess", excess, 1e-9, excess <= 1e-9)]


def check_roundtrips(cfg: PropsConfig) -> list[PropRow]:
    rng = make_rng(cfg.seed, "roundtrip")
    k = cfg.roundtrip_trials
    tol = 1e-8
    rows = []
    # tangent vectors with |omega| <= pi - 1e-3
    axis = rng.standard_normal((k, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    omega = axis * rng.uniform(0.0, np.pi - 1e-3, (k, 1))
    err = np.abs(liegroups.log_so3(liegroups.exp_so3(omega)) - omega).max()
    rows.append(PropRow("roundtrip_so3_exp_log", float(err), tol, err <= tol))
    xi = np.concatenate([omega, rng.standard_normal((k, 3))], axis=1)
    err = np.abs(liegroups.log_se3(liegroups.exp_se3(xi)) - xi).max()
    rows.append(PropRow("roundtrip_se3_exp_log", float(err), tol, err <= tol))
    rot = uniform_rotations(rng, k)
    err = np.abs(liegroups.inverse_embed(liegroups.embed(rot)) - rot).max()
    rows.append(PropRow("roundtrip_so3_embed", float(err), tol, err <= tol))
    tf = liegroups.RigidTransform(rot, rng.standard_normal((k, 3)))
    back = liegroups.inverse_embed(liegroups.embed(tf))
    err = max(np.abs(back.rot - tf.rot).max(), np.abs(back.trans - tf.trans).max())
    rows.append(PropRow("roundtrip_se3_embed", float(err), tol, err <= tol))

    n, m = cfg.grassmann_n, cfg.grassmann_m
    frames = np.stack([grassmann.sample_subspace_uniform(n, m, rng).u for _ in range(cfg.grassmann_trials)])
    proj = frames @ np.swapaxes(frames, 1, 2)
    est = grassmann.top_eigenframes(proj, m)
    err = np.abs(est @ np.swapaxes(est, 1, 2) - proj).max()
    rows.append(PropRow("roundtrip_grassmann_embed", float(err), tol, err <= tol))
    err = np.abs(grassmann.sym_unvec(grassmann.sym_vec(proj), n) - proj).max()
    rows.append(PropRow("roundtrip_symvec", float(err), tol, err <= tol))
    return rows


def check_chordal_geodesic(cfg: PropsConfig) -> list[PropRow]:
    rng = make_rng(cfg.seed, "chordal")
    a = uniform_rotations(rng, cfg.chordal_pairs)
    b = uniform_rotations(rng, cfg.chordal_pairs)
    d_ext = np.linalg.norm((a - b).reshape(-1, 9), axis=1)
    d_geo = liegroups.dist_geodesic(a, b)
    err = float(np.abs(d_ext - 2.0 * np.sqrt(2.0) * np.abs(np.sin(d_geo / 2.0))).max())
    rows = [PropRow("chordal_geodesic_identity", err, 1e-9, err <= 1e-9)]

    # pairs at chordal distance 10^-k: rotate by 2 asin(x / (2 sqrt 2)) about a random axis
    base = uniform_rotations(rng, 8)
    axis = rng.standard_normal((8, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    target = 10.0 ** -np.arange(1, 9)
    angle = 2.0 * np.arcsin(target / (2.0 * np.sqrt(2.0)))
    other = base @ liegroups.exp_so3(axis * angle[:, None])
    d_ext = np.linalg.norm((base - other).reshape(-1, 9), axis=1)
    ratio = float(np.max(liegroups.dist_geodesic(base, other) / d_ext))
    rows.append(PropRow("chordal_to_zero_max_ratio", ratio, 1.0, ratio <= 1.0))
    return rows


def _mle_gaps(cfg: PropsConfig, sigma: float) -> np.ndarray:
    rng = make_rng(cfg.seed, "mle_so3")
    means = uniform_rotations(rng, cfg.mle_means)
    gaps = np.empty(cfg.mle_means)
    for i, mu in enumerate(means):
        g = liegroups.ConcentratedGaussian(mu, sigma * sigma * np.eye(3))
        samples = liegroups.sample_concentrated(g, rng, cfg.mle_samples)
        gaps[i] = liegroups.dist_geodesic(liegroups.chordal_mean_project(samples), liegroups.frechet_mean(samples))
    return gaps


def check_mle_so3(cfg: PropsConfig) -> list[PropRow]:
    """Projected chordal mean approximates the intrinsic mean to second order."""
    full = _mle_gaps(cfg, cfg.mle_sigma)
    half = _mle_gaps(cfg, cfg.mle_sigma / 2.0)
    worst = float(full.max())
    shrink = float(full.mean() / half.mean())
    return [
        PropRow(f"mle_so3_sigma_{cfg.mle_sigma:g}_max_gap", worst, cfg.mle_threshold, worst <= cfg.mle_threshold),
        PropRow("mle_so3_half_sigma_shrink", shrink, 2.0, shrink >= 2.0),
    ]


def check_mle_grassmann(cfg: PropsConfig) -> list[PropRow]:
    """Eigen-projection of the mean projector recovers the subspace."""
    rng = make_rng(cfg.seed, "mle_grassmann")
    n, m = cfg.grassmann_n, cfg.grassmann_m
    gt = grassmann.sample_subspace_uniform(n, m, rng)
    total = np.zeros((n, n))
    left = cfg.grassmann_samples
    while left:
        size = min(left, 2000)
        total += grassmann.projector_gaussian_sample(gt, cfg.grassmann_sigma, rng, size).sum(axis=0)
        left -= size
    mean = total / cfg.grassmann_samples
    est = grassmann.inverse_embed_grassmann(mean, m)
    d = grassmann.dist_grassmann(est, gt)
    best = np.linalg.norm(grassmann.embed_projector(est) - mean)
    margins = np.empty(cfg.grassmann_candidates)
    for i in range(cfg.grassmann_candidates):
        scale = 10.0 ** rng.uniform(-4, -1)
        cand = matlin.gram_schmidt(est.u + scale * rng.standard_normal((n, m)))
        margins[i] = np.linalg.norm(cand @ cand.T - mean) - best
    margin = float(margins.min())
    return [
        PropRow("mle_grassmann_distance", float(d), 0.01, d <= 0.01),
        PropRow("mle_grassmann_optimality_margin", margin, 0.0, margin > 0.0),
    ]


def grad_check_pose(seed: int, tag: str, h: float = 1e-4, batch: int = 4, n_points: int = 64) -> float:
    rng = make_rng(seed, "gradcheck_pose", tag)
    params = net.build_pose_params(tag, rng)
    cloud = rng.standard_normal((n_points, 3))
    gt = liegroups.sample_transform_uniform("so3", 1.0, rng, size=batch)
    b = net.PoseBatch(cloud, gt.apply(np.broadcast_to(cloud, (batch, n_points, 3))), gt)
    return net.grad_check(params, b, h, rng)


def grad_check_subspace(seed: int, h: float = 1e-4, batch: int = 4, n: int = 64, m: int = 5) -> float:
    rng = make_rng(seed, "gradcheck_subspace")
    params = net.build_subspace_params(n, n, rng)
    frames = np.stack([grassmann.sample_subspace_uniform(n, m, rng).u for _ in range(batch)])
    x = np.einsum("bnm,bm->bn", frames, rng.standard_normal((batch, m)))
    return net.grad_check(params, net.SubspaceBatch(x, frames), h, rng)


def check_gradients(cfg: PropsConfig) -> list[PropRow]:
    rows = []
    for seed in cfg.grad_seeds:
        err = max(grad_check_pose(seed, tag, cfg.grad_h) for tag in sorted(liegroups.ROTATION_TAGS))
        rows.append(PropRow(f"grad_check_pose_seed_{seed}", err, 1e-5, err <= 1e-5))
        err = grad_check_subspace(seed, cfg.grad_h)
        rows.append(PropRow(f"grad_check_subspace_seed_{seed}", err, 1e-5, err <= 1e-5))
    return rows


CHECKS = {
    "nearest": check_nearest_rotation,
    "roundtrip": check_roundtrips,
    "chordal": check_chordal_geodesic,
    "mle_so3": check_mle_so3,
    "mle_grassmann": check_mle_grassmann,
    "gradients": check_gradients,
}


def run_suite(cfg: PropsConfig, only=None) -> list[PropRow]:
    rows = []
    for name, fn in CHECKS.items():
        if only is None or name in only:
            rows.extend(fn(cfg))
    return rows
