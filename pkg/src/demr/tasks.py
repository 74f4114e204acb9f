"""Synthetic experiments: relative pose of point clouds and subspace regression.

Datasets are pure functions of a config and a generator. Pose sets share a
single reference cloud, so the encoder only runs on it once per batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import grassmann, liegroups, matlin, net
from .errors import BadConfig, DimMismatch, IngestError, SpectralTie, TagMismatch

DEG = 180.0 / np.pi
POSE_FRACTIONS = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


# --- pose data ----------------------------------------------------------------------


@dataclass(frozen=True)
class PoseSample:
    p_r: np.ndarray
    p_t: np.ndarray
    gt: liegroups.RigidTransform


@dataclass
class PoseSet:
    """``len`` samples stored as arrays; ``p_r`` is the shared reference cloud."""

    p_r: np.ndarray  # (N, 3)
    p_t: np.ndarray  # (S, N, 3)
    gt: liegroups.RigidTransform  # batched, S

    def __len__(self):
        return self.p_t.shape[0]

    def __getitem__(self, i) -> PoseSample:
        return PoseSample(self.p_r, self.p_t[i], self.gt[i])

    def batch(self, idx) -> net.PoseBatch:
        return net.PoseBatch(self.p_r, self.p_t[idx], self.gt[idx])


@dataclass(frozen=True)
class PoseDataConfig:
    n_points: int = 256
    n_train: int = 2048
    n_test: int = 256
    mode: str = "so3"
    fraction: float = 1.0
    cloud_path: str | None = None
    jitter: float = 0.0

    def __post_init__(self):
        if self.mode not in ("euler", "axis", "so3"):
            raise BadConfig(f"unknown pose sampling mode {self.mode!r}")
        if not any(abs(self.fraction - f) < 1e-12 for f in POSE_FRACTIONS):
            raise BadConfig(f"fraction must be one of {POSE_FRACTIONS}, got {self.fraction}")
        if self.n_points < 1 or self.n_train < 1 or self.n_test < 1:
            raise BadConfig("point and sample counts must be positive")
        if self.jitter < 0:
            raise BadConfig("jitter must be non-negative")


def load_cloud_csv(path) -> np.ndarray:
    """Read ``x,y,z`` lines; blank lines and ``#`` comments are skipped."""
    pts = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                    continue
                if len(row) != 3:
                    raise IngestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
                try:
                    pts.append([float(v) for v in row])
                except ValueError as exc:
                    raise IngestError(f"{path}:{lineno}: {exc}") from None
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    arr = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if arr.shape[0] == 0:
        raise IngestError(f"{path}: no points")
    if not np.all(np.isfinite(arr)):
        raise IngestError(f"{path}: non-finite coordinate")
    return arr


def _make_pose_set(p_r, gt, rng, jitter):
    p_t = gt.apply(np.broadcast_to(p_r, (len(gt.trans),) + p_r.shape))
    if jitter > 0:
        p_t = p_t + jitter * rng.standard_normal(p_t.shape)
    return PoseSet(p_r, p_t, gt)


def gen_pose_dataset(cfg: PoseDataConfig, rng: np.random.Generator) -> tuple[PoseSet, PoseSet]:
    """Training transforms at ``cfg.fraction``; test transforms always at fraction 1.

    An ingested cloud fixes ``N`` to its own length.
    """
    if cfg.cloud_path is not None:
        p_r = load_cloud_csv(cfg.cloud_path)
    else:
        p_r = rng.standard_normal((cfg.n_points, 3))
    train_gt = liegroups.sample_transform_uniform(cfg.mode, cfg.fraction, rng, size=cfg.n_train)
    test_gt = liegroups.sample_transform_uniform(cfg.mode, 1.0, rng, size=cfg.n_test)
    return _make_pose_set(p_r, train_gt, rng, cfg.jitter), _make_pose_set(p_r, test_gt, rng, cfg.jitter)


# --- subspace data --------------------------------------------------------------------


@dataclass(frozen=True)
class SubspaceSample:
    images: np.ndarray  # (k, n)
    gt: grassmann.GrassmannPoint


@dataclass
class SubspaceSet:
    images: np.ndarray  # (identities, k, n)
    frames: np.ndarray  # (identities, n, m)
    ids: np.ndarray = field(default=None)  # original identity indices

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, i) -> SubspaceSample:
        return SubspaceSample(self.images[i], grassmann.GrassmannPoint(self.frames[i]))

    @property
    def m(self) -> int:
        return self.frames.shape[-1]

    def flat(self, max_images: int | None = None):
        """``(x, frames)`` with one row per image, identities in order."""
        imgs = self.images if max_images is None else self.images[:, :max_images]
        k = imgs.shape[1]
        x = imgs.reshape(-1, imgs.shape[-1])
        return x, np.repeat(self.frames, k, axis=0)


@dataclass(frozen=True)
class SubspaceDataConfig:
    n: int = 64
    m: int = 5
    identities: int = 40
    images_per_identity: int = 64
    sigma: float = 0.05
    split: float = 0.8
    images_path: str | None = None

    def __post_init__(self):
        if not 1 <= self.m < self.n:
            raise BadConfig(f"need 1 <= m < n, got n={self.n}, m={self.m}")
        if self.identities < 2:
            raise BadConfig("need at least two identities")
        if self.images_per_identity < self.m:
            raise BadConfig("need at least m images per identity")
        if self.sigma < 0:
            raise BadConfig("sigma must be non-negative")
        if not 0.0 < self.split < 1.0:
            raise BadConfig("split must lie in (0, 1)")
        n_train = int(np.floor(self.split * self.identities))
        if n_train < 1 or n_train >= self.identities:
            raise BadConfig("split leaves an empty train or test set")


def load_images_txt(path, n: int) -> np.ndarray:
    """One flattened image per line, whitespace-separated reals."""
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    vals = [float(v) for v in line.split()]
                except ValueError as exc:
                    raise IngestError(f"{path}:{lineno}: {exc}") from None
                if len(vals) != n:
                    raise IngestError(f"{path}:{lineno}: expected {n} values, got {len(vals)}")
                rows.append(vals)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, n)
    if not np.all(np.isfinite(arr)):
        raise IngestError(f"{path}: non-finite value")
    return arr


def gen_subspace_dataset(cfg: SubspaceDataConfig, rng: np.random.Generator) -> tuple[SubspaceSet, SubspaceSet]:
    """Per identity ``U ~ uniform``, images ``U c + sigma g``; split by identity.

    With ``images_path`` the file supplies ``identities * k`` images in
    identity order and the ground truth is their (uncentered) PCA frame.
    """
    n, m, ident, k = cfg.n, cfg.m, cfg.identities, cfg.images_per_identity
    if cfg.images_path is not None:
        raw = load_images_txt(cfg.images_path, n)
        if raw.shape[0] != ident * k:
            raise IngestError(f"expected {ident * k} images, got {raw.shape[0]}")
        images = raw.reshape(ident, k, n)
        frames = np.stack([pca_subspace(images[i], m).u for i in range(ident)])
    else:
        frames = np.stack([grassmann.sample_subspace_uniform(n, m, rng).u for _ in range(ident)])
        coef = rng.standard_normal((ident, k, m))
        noise = rng.standard_normal((ident, k, n))
        images = coef @ np.swapaxes(frames, 1, 2) + cfg.sigma * noise
    order = rng.permutation(ident)
    n_train = int(np.floor(cfg.split * ident))
    tr, te = np.sort(order[:n_train]), np.sort(order[n_train:])
    return SubspaceSet(images[tr], frames[tr], tr), SubspaceSet(images[te], frames[te], te)


def pca_subspace(images, m: int, center: bool = False) -> grassmann.GrassmannPoint:
    """Top-``m`` left singular vectors of the ``n x k`` image matrix.

    No centering by default; ``center=True`` subtracts the mean image first.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2:
        raise DimMismatch(f"images must be k x n, got {images.shape}")
    k, n = images.shape
    if k < m or not 1 <= m < n:
        raise DimMismatch(f"need k >= m and 1 <= m < n, got k={k}, n={n}, m={m}")
    a = images.T
    if center:
        a = a - a.mean(axis=1, keepdims=True)
    u = matlin.svd(a).u[:, :m]
    return grassmann.GrassmannPoint(u)


# --- statistics ----------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorStats:
    avg: float
    median: float
    std: float
    per_sample: np.ndarray

    @classmethod
    def from_errors(cls, errors) -> "ErrorStats":
        """Median is the lower middle order statistic; std is the population one."""
        e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
        if e.size == 0:
            raise ValueError("no errors to summarize")
        avg = float(np.mean(e))
        return cls(avg, float(e[(e.size - 1) // 2]), float(np.sqrt(np.mean((e - avg) ** 2))), e)

    def row(self, label: str) -> str:
        return f"{label} {self.avg:.2f} {self.median:.2f} {self.std:.2f}"


def cumulative_curve(stats: ErrorStats):
    """``(error, fraction of samples with error <= it)`` pairs."""
    e = stats.per_sample
    return e, np.arange(1, e.size + 1) / e.size


# --- pose evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class PoseEval:
    rotation: ErrorStats  # degrees
    combined: ErrorStats  # SE(3) geodesic, degrees
    translation: ErrorStats  # scene units


def predict_pose(params: net.RegressorParams, data: PoseSet, batch: int = 64):
    rots, trans = [], []
    for start in range(0, len(data), batch):
        idx = slice(start, start + batch)
        e, t, _ = net.forward_pose(params, data.p_r, data.p_t[idx])
        rots.append(e.data)
        trans.append(t)
    return liegroups.EmbeddedVector(params.rot_head_tag, np.concatenate(rots)), np.concatenate(trans)


def pose_errors(rep: liegroups.EmbeddedVector, trans, gt: liegroups.RigidTransform) -> PoseEval:
    rot = liegroups.inverse_embed(rep, strict=False)
    est = liegroups.RigidTransform(rot, np.asarray(trans, dtype=np.float64))
    rot_err = liegroups.dist_geodesic(rot, gt.rot) * DEG
    comb_err = liegroups.dist_geodesic(est, gt) * DEG
    trans_err = np.linalg.norm(est.trans - gt.trans, axis=-1)
    return PoseEval(ErrorStats.from_errors(rot_err), ErrorStats.from_errors(comb_err), ErrorStats.from_errors(trans_err))


def evaluate_pose(params: net.RegressorParams | None, testset: PoseSet, tag: str, stub_gt: bool = False) -> PoseEval:
    """Rotation, combined SE(3) and translation error statistics.

    ``stub_gt`` replaces the network by an oracle that emits the exact
    representation of each ground truth.
    """
    if stub_gt:
        rep = liegroups.represent(testset.gt.rot, tag)
        return pose_errors(rep, testset.gt.trans, testset.gt)
    if params.rot_head_tag != tag:
        raise TagMismatch(f"network emits {params.rot_head_tag}, evaluation asked for {tag}")
    rep, trans = predict_pose(params, testset)
    return pose_errors(rep, trans, testset.gt)


# --- subspace evaluation ------------------------------------------------------------


def subspace_errors(outputs, frames, m: int, chunk: int = 64) -> np.ndarray:
    """Geodesic distance from each output's top-``m`` frame to its ground truth."""
    outputs = np.asarray(outputs, dtype=np.float64)
    n = frames.shape[-2]
    errs = np.empty(outputs.shape[0])
    for start in range(0, outputs.shape[0], chunk):
        sl = slice(start, start + chunk)
        try:
            est = grassmann.top_eigenframes(grassmann.sym_unvec(outputs[sl], n), m)
        except SpectralTie as exc:
            raise SpectralTie(str(exc), index=start + (exc.index or 0)) from None
        errs[sl] = grassmann.geodesic_between_frames(est, frames[sl])
    return errs


def evaluate_subspace(
    params: net.RegressorParams | None,
    testset: SubspaceSet,
    max_images: int | None = None,
    stub_gt: bool = False,
    fixed_output=None,
) -> float:
    """Average geodesic distance over test images.

    ``max_images`` caps the images used per identity (each needs an
    ``n x n`` eigendecomposition). ``fixed_output`` evaluates a constant
    prediction instead of the network.
    """
    x, frames = testset.flat(max_images)
    if stub_gt:
        outputs = grassmann.sym_vec(frames @ np.swapaxes(frames, 1, 2))
    elif fixed_output is not None:
        outputs = np.broadcast_to(np.asarray(fixed_output, dtype=np.float64), (x.shape[0], np.size(fixed_output)))
    else:
        outputs, _ = net.forward_subspace(params, x)
    return float(np.mean(subspace_errors(outputs, frames, testset.m)))


def mean_projector_output(trainset: SubspaceSet) -> np.ndarray:
    """SymVec of the average training projector (a constant baseline)."""
    f = trainset.frames
    return grassmann.sym_vec(np.mean(f @ np.swapaxes(f, 1, 2), axis=0))


# --- training -----------------------------------------------------------------------


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)  # one per iteration
    iters_per_epoch: int = 1

    def epoch_losses(self) -> np.ndarray:
        k = self.iters_per_epoch
        n = len(self.losses) // k
        return np.asarray(self.losses[: n * k]).reshape(n, k).mean(axis=1)


def smoothed(values, window: int = 10) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.r_[0.0, v])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def convergence_epoch(epoch_losses, window: int = 10, rel: float = 0.01) -> int:
    """First (1-based) epoch whose smoothed loss is within ``rel`` of the final one."""
    s = smoothed(epoch_losses, window)
    if s.size == 0:
        return 0
    final = s[-1]
    ok = np.abs(s - final) <= rel * abs(final)
    return int(np.argmax(ok)) + 1


def _epoch_order(n, batch, rng):
    perm = rng.permutation(n)
    usable = (n // batch) * batch if n >= batch else n
    return perm[:usable].reshape(-1, min(batch, n))


def train(
    params: net.RegressorParams,
    make_batch,
    n_samples: int,
    iterations: int,
    batch: int,
    rng: np.random.Generator,
    mode: str = "demr_extrinsic",
    lr: float = 1e-3,
    h: float = 1e-4,
) -> tuple[net.RegressorParams, TrainLog]:
    """Adam on shuffled minibatches; ``make_batch(indices)`` builds a batch."""
    state = net.AdamState.for_params(params, lr=lr)
    order = _epoch_order(n_samples, batch, rng)
    log = TrainLog(iters_per_epoch=order.shape[0])
    pos = 0
    for _ in range(iterations):
        if pos == order.shape[0]:
            order, pos = _epoch_order(n_samples, batch, rng), 0
        loss, grads = net.loss_and_grad(params, make_batch(order[pos]), mode=mode, h=h)
        params, state = net.adam_step(params, grads, state)
        log.losses.append(loss)
        pos += 1
    return params, log
