"""Small dense regressors with hand-written reverse-mode gradients.

Two architectures are supported:

* pose: a per-point encoder shared by the reference and target clouds, a
  coordinate-wise max-pool per cloud, the two pooled vectors concatenated
  and passed through a head that emits a rotation representation. A
  separate linear layer on the head's last hidden activation emits the
  translation.
* subspace: a plain dense stack from an image vector to a symmetric-matrix
  vectorization of the predicted projector.

Parameters live in :class:`RegressorParams`; gradients use the same class.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import grassmann, liegroups
from .errors import NonFiniteLoss, ShapeMismatch, TagMismatch

ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass
class DenseLayer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        # a leading stack dimension is allowed (many parameter sets at once)
        if self.w.ndim not in (2, 3) or self.b.shape != self.w.shape[:-1]:
            raise ShapeMismatch(f"inconsistent layer shapes {self.w.shape}, {self.b.shape}")

    @property
    def fan_in(self) -> int:
        return self.w.shape[1]

    @property
    def fan_out(self) -> int:
        return self.w.shape[0]


@dataclass
class RegressorParams:
    """Network weights (or, with the same layout, their gradients).

    ``encoder`` is empty for the subspace architecture. ``rot_head_tag`` is
    the representation the pose head emits; subspace nets use ``"symvec"``.
    """

    encoder: list[DenseLayer]
    head: list[DenseLayer]
    rot_head_tag: str
    trans_head: DenseLayer | None = None

    def layers(self) -> list[DenseLayer]:
        out = list(self.encoder) + list(self.head)
        if self.trans_head is not None:
            out.append(self.trans_head)
        return out

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order (w, b per layer)."""
        out = []
        for layer in self.layers():
            out += [layer.w, layer.b]
        return out

    def with_arrays(self, arrays) -> "RegressorParams":
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers()):
            raise ShapeMismatch("wrong number of parameter arrays")
        it = iter(arrays)

        def rebuild(layer):
            w, b = next(it), next(it)
            if w.shape != layer.w.shape or b.shape != layer.b.shape:
                raise ShapeMismatch(f"array shapes {w.shape}, {b.shape} do not match layer")
            return DenseLayer(w, b, layer.activation)

        encoder = [rebuild(l) for l in self.encoder]
        head = [rebuild(l) for l in self.head]
        trans = rebuild(self.trans_head) if self.trans_head is not None else None
        return RegressorParams(encoder, head, self.rot_head_tag, trans)

    def zeros_like(self) -> "RegressorParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self) -> "RegressorParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    @property
    def out_len(self) -> int:
        return self.head[-1].fan_out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, vec) -> "RegressorParams":
        out, k = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[k : k + a.size], dtype=np.float64).reshape(a.shape).copy())
            k += a.size
        return self.with_arrays(out)


GradientBundle = RegressorParams


# --- construction ---------------------------------------------------------------


def init_layer(fan_in: int, fan_out: int, activation: str, rng: np.random.Generator) -> DenseLayer:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero bias."""
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return DenseLayer(rng.uniform(-s, s, (fan_out, fan_in)), np.zeros(fan_out), activation)


def rep_length(tag: str) -> int:
    return liegroups.TAG_LENGTHS[tag]


def build_pose_params(
    tag: str,
    rng: np.random.Generator,
    encoder_widths=(64, 128),
    head_widths=(128,),
) -> RegressorParams:
    if tag not in liegroups.ROTATION_TAGS:
        raise TagMismatch(f"pose head cannot emit {tag!r}")
    encoder, fan_in = [], 3
    for w in encoder_widths:
        encoder.append(init_layer(fan_in, w, "relu", rng))
        fan_in = w
    head, fan_in = [], 2 * fan_in
    for w in head_widths:
        head.append(init_layer(fan_in, w, "tanh", rng))
        fan_in = w
    head.append(init_layer(fan_in, rep_length(tag), "linear", rng))
    trans = init_layer(fan_in, 3, "linear", rng)
    return RegressorParams(encoder, head, tag, trans)


def build_subspace_params(
    n_in: int, n_ambient: int, rng: np.random.Generator, hidden=(256, 256), activation="relu"
) -> RegressorParams:
    head, fan_in = [], n_in
    for w in hidden:
        head.append(init_layer(fan_in, w, activation, rng))
        fan_in = w
    head.append(init_layer(fan_in, grassmann.symvec_length(n_ambient), "linear", rng))
    return RegressorParams([], head, "symvec")


# --- dense stacks ---------------------------------------------------------------


def _act(name, pre):
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    return pre


def _act_grad(name, pre, post, upstream):
    if name == "relu":
        return upstream * (pre > 0.0)
    if name == "tanh":
        return upstream * (1.0 - post * post)
    return upstream


def dense_forward(layers, x):
    """Returns ``(output, inputs, pres, posts)`` for a stack of layers.

    Weight arrays may carry a leading stack dimension matching ``x``'s, which
    evaluates many parameter sets at once.
    """
    inputs, pres, posts = [], [], []
    h = x
    for layer in layers:
        inputs.append(h)
        pre = h @ np.swapaxes(layer.w, -1, -2) + layer.b[..., None, :] if layer.w.ndim == 3 else h @ layer.w.T + layer.b
        h = _act(layer.activation, pre)
        pres.append(pre)
        posts.append(h)
    return h, inputs, pres, posts


def dense_backward(layers, inputs, pres, posts, d_out):
    """Gradients of every layer plus the gradient with respect to the input."""
    grads = [None] * len(layers)
    d = d_out
    for i in reversed(range(len(layers))):
        layer = layers[i]
        dpre = _act_grad(layer.activation, pres[i], posts[i], d)
        x = inputs[i]
        grads[i] = DenseLayer(dpre.T @ x, dpre.sum(axis=0), layer.activation)
        d = dpre @ layer.w
    return grads, d


# --- pose network ---------------------------------------------------------------


@dataclass
class PoseCache:
    clouds: np.ndarray  # (C, N, 3): reference cloud(s) first, then targets
    # encoder tensors below are channel-first: (C, features, N)
    shared_ref: bool
    batch: int
    enc_inputs: list
    enc_pres: list
    argmax: np.ndarray  # (C, F) point index of each pooled feature
    z: np.ndarray  # (B, 2F)
    head_inputs: list
    head_pres: list
    head_posts: list


def _encode(layers, clouds):
    """Per-point encoder in channel-first layout ``(C, features, N)``.

    Channel-first keeps the max-pool reduction contiguous in memory.
    """
    inputs, pres = [], []
    h = np.swapaxes(clouds, 1, 2)  # (C, 3, N)
    for i, layer in enumerate(layers):
        inputs.append(h)
        pre = layer.w @ h
        if i + 1 < len(layers):
            pre += layer.b[:, None]
            h = _act(layer.activation, pre)
        pres.append(pre)
    # the last bias is constant along points, so it is added after pooling
    # and the stored last pre-activation excludes it
    idx = np.argmax(pres[-1], axis=2)  # first maximum -> lowest point index on ties
    pre_sel = np.take_along_axis(pres[-1], idx[:, :, None], axis=2)[:, :, 0] + layers[-1].b
    pooled = _act(layers[-1].activation, pre_sel)
    return pooled, idx, inputs, pres


def forward_pose(params: RegressorParams, p_r, p_t):
    """Returns ``(EmbeddedVector, translation (B, 3), cache)``.

    ``p_r`` may be a single ``(N, 3)`` cloud shared by the whole batch;
    ``p_t`` is ``(B, N, 3)`` or a single cloud.
    """
    p_t = np.asarray(p_t, dtype=np.float64)
    p_r = np.asarray(p_r, dtype=np.float64)
    single = p_t.ndim == 2
    if single:
        p_t = p_t[None]
    shared = p_r.ndim == 2
    b = p_t.shape[0]
    if p_t.shape[-1] != 3 or p_r.shape[-1] != 3 or p_t.shape[1] < 3:
        raise ShapeMismatch(f"point sets must be (N >= 3, 3), got {p_r.shape}, {p_t.shape}")
    refs = p_r[None] if shared else p_r
    if not shared and refs.shape[0] != b:
        raise ShapeMismatch("reference and target batches differ in size")
    clouds = np.concatenate([refs, p_t], axis=0)
    pooled, idx, enc_inputs, enc_pres = _encode(params.encoder, clouds)
    n_ref = refs.shape[0]
    z_ref = np.broadcast_to(pooled[:n_ref], (b, pooled.shape[1])) if shared else pooled[:n_ref]
    z = np.concatenate([z_ref, pooled[n_ref:]], axis=1)
    out, h_inputs, h_pres, h_posts = dense_forward(params.head, z)
    trans = h_inputs[-1] @ params.trans_head.w.T + params.trans_head.b
    cache = PoseCache(clouds, shared, b, enc_inputs, enc_pres, idx, z, h_inputs, h_pres, h_posts)
    if single:
        out, trans = out[0], trans[0]
    return liegroups.EmbeddedVector(params.rot_head_tag, out), trans, cache


def backward_pose(params: RegressorParams, cache: PoseCache, d_rot, d_trans) -> RegressorParams:
    d_rot = np.atleast_2d(d_rot)
    d_trans = np.atleast_2d(d_trans)
    feat_in = cache.head_inputs[-1]
    trans_grad = DenseLayer(d_trans.T @ feat_in, d_trans.sum(axis=0), "linear")
    # the translation layer reads the last head layer's input
    head = params.head
    last = head[-1]
    head_grads = [None] * len(head)
    head_grads[-1] = DenseLayer(d_rot.T @ feat_in, d_rot.sum(axis=0), last.activation)
    d = d_rot @ last.w + d_trans @ params.trans_head.w
    if len(head) > 1:
        inner, d = dense_backward(
            head[:-1], cache.head_inputs[:-1], cache.head_pres[:-1], cache.head_posts[:-1], d
        )
        head_grads[:-1] = inner

    f = d.shape[1] // 2
    b = cache.batch
    d_ref, d_tgt = d[:, :f], d[:, f:]
    if cache.shared_ref:
        d_ref = d_ref.sum(axis=0, keepdims=True)
    d_pooled = np.concatenate([d_ref, d_tgt], axis=0)  # (C, F)
    enc_grads = _encode_backward(params.encoder, cache, d_pooled)
    return RegressorParams(enc_grads, head_grads, params.rot_head_tag, trans_grad)


def _encode_backward(layers, cache: PoseCache, d_pooled):
    n_layers = len(layers)
    grads = [None] * n_layers
    idx = cache.argmax  # (C, F)
    c_count, f = idx.shape
    last = layers[-1]
    pre_sel = np.take_along_axis(cache.enc_pres[-1], idx[:, :, None], axis=2)[:, :, 0] + last.b
    post_sel = _act(last.activation, pre_sel)
    dpre_sel = _act_grad(last.activation, pre_sel, post_sel, d_pooled)  # (C, F)
    x_in = cache.enc_inputs[-1]  # (C, in, N)
    gathered = np.take_along_axis(x_in, idx[:, None, :], axis=2)  # (C, in, F)
    grads[-1] = DenseLayer(np.einsum("cf,cif->fi", dpre_sel, gathered), dpre_sel.sum(axis=0), last.activation)
    if n_layers == 1:
        return grads
    # only the argmax point of each feature receives gradient
    n_points = x_in.shape[2]
    contrib = (dpre_sel[:, :, None] * last.w[None, :, :]).reshape(-1, last.fan_in)  # (C*F, in)
    keys = (np.arange(c_count)[:, None] * n_points + idx).ravel()
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    d_in = np.zeros((c_count * n_points, last.fan_in))
    d_in[keys[starts]] = np.add.reduceat(contrib[order], starts, axis=0)
    d = np.swapaxes(d_in.reshape(c_count, n_points, -1), 1, 2)  # (C, in, N)
    for i in reversed(range(n_layers - 1)):
        layer = layers[i]
        pre = cache.enc_pres[i]
        post = _act(layer.activation, pre) if layer.activation == "tanh" else None
        dpre = _act_grad(layer.activation, pre, post, d)  # (C, out, N)
        x = cache.enc_inputs[i]  # (C, in, N)
        grads[i] = DenseLayer(np.tensordot(dpre, x, axes=([0, 2], [0, 2])), dpre.sum(axis=(0, 2)), layer.activation)
        if i:
            d = np.swapaxes(layer.w, 0, 1) @ dpre
    return grads


# --- subspace network -----------------------------------------------------------


def forward_subspace(params: RegressorParams, x):
    """Dense stack from image vector(s) to a symvec prediction; returns ``(out, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.head[0].fan_in:
        raise ShapeMismatch(f"input length {x.shape[-1]} != {params.head[0].fan_in}")
    single = x.ndim == 1
    out, inputs, pres, posts = dense_forward(params.head, x[None] if single else x)
    return (out[0] if single else out), (inputs, pres, posts)


def backward_subspace(params: RegressorParams, cache, d_out) -> RegressorParams:
    inputs, pres, posts = cache
    grads, _ = dense_backward(params.head, inputs, pres, posts, np.atleast_2d(d_out))
    return RegressorParams([], grads, params.rot_head_tag)


# --- batches and losses ---------------------------------------------------------


@dataclass
class PoseBatch:
    p_r: np.ndarray  # (N, 3) shared or (B, N, 3)
    p_t: np.ndarray  # (B, N, 3)
    gt: liegroups.RigidTransform  # batched


@dataclass
class SubspaceBatch:
    x: np.ndarray  # (B, n_in)
    gt: np.ndarray  # (B, n, m) ground-truth frames


def _pose_targets(params, batch):
    return liegroups.represent(batch.gt.rot, params.rot_head_tag).data, batch.gt.trans


def _subspace_targets(batch):
    u = batch.gt
    return grassmann.sym_vec(u @ np.swapaxes(u, -1, -2))


def _check_finite(loss):
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is not finite: {loss}")
    return float(loss)


def demr_loss_and_grad(params: RegressorParams, batch):
    """Extrinsic MSE loss (rotation part + translation part for poses)."""
    if isinstance(batch, PoseBatch):
        if params.rot_head_tag not in liegroups.ROTATION_TAGS:
            raise TagMismatch(f"pose batch but head emits {params.rot_head_tag}")
        rot, trans, cache = forward_pose(params, batch.p_r, batch.p_t)
        tgt_rot, tgt_trans = _pose_targets(params, batch)
        r_err = rot.data - tgt_rot
        t_err = trans - tgt_trans
        loss = np.mean(r_err * r_err) + np.mean(t_err * t_err)
        loss = _check_finite(loss)
        grads = backward_pose(params, cache, 2.0 * r_err / r_err.size, 2.0 * t_err / t_err.size)
        return loss, grads
    if params.rot_head_tag != "symvec":
        raise TagMismatch(f"subspace batch but head emits {params.rot_head_tag}")
    out, cache = forward_subspace(params, batch.x)
    err = out - _subspace_targets(batch)
    loss = _check_finite(np.mean(err * err))
    return loss, backward_subspace(params, cache, 2.0 * err / err.size)


def dimr_loss(params: RegressorParams, batch) -> float:
    """Mean intrinsic distance after the inverse embedding.

    Pose: SE(3) geodesic of ``(J^-1(rotation head), translation head)``.
    Subspace: arc-length Grassmann distance of the top-m eigenframe.
    """
    if isinstance(batch, PoseBatch):
        rot, trans, _ = forward_pose(params, batch.p_r, batch.p_t)
        pred = liegroups.inverse_embed(rot, strict=False)
        if isinstance(pred, liegroups.RigidTransform):
            pred = pred.rot
        return _check_finite(np.mean(liegroups.dist_geodesic(liegroups.RigidTransform(pred, trans), batch.gt)))
    out, _ = forward_subspace(params, batch.x)
    return _check_finite(np.mean(_subspace_geodesic(out, batch.gt)))


def _subspace_geodesic(out, gt):
    m = gt.shape[-1]
    n = gt.shape[-2]
    frames = grassmann.top_eigenframes(grassmann.sym_unvec(out, n), m)
    return grassmann.geodesic_between_frames(frames, gt)


def fd_gradient(loss_fn, params: RegressorParams, h: float = 1e-4, indices=None) -> np.ndarray:
    """Central differences of ``loss_fn(params)`` over flat parameter ``indices``."""
    base = params.flat()
    idx = np.arange(base.size) if indices is None else np.asarray(indices)
    out = np.zeros(idx.size)
    for k, i in enumerate(idx):
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        out[k] = (loss_fn(params.from_flat(plus)) - loss_fn(params.from_flat(minus))) / (2.0 * h)
    return out


def subspace_dimr_fd_gradient(params: RegressorParams, batch: SubspaceBatch, h: float = 1e-4, chunk: int = 512):
    """Central-difference gradient of :func:`dimr_loss` for a dense subspace net.

    All perturbed parameter sets of a chunk are evaluated in one stacked
    forward pass and one stacked eigendecomposition.
    """
    base = params.flat()
    p = base.size
    grad = np.zeros(p)
    x = batch.x
    for start in range(0, p, chunk):
        idx = np.arange(start, min(p, start + chunk))
        s = idx.size
        stack = np.broadcast_to(base, (2 * s, p)).copy()
        stack[np.arange(s), idx] += h
        stack[s + np.arange(s), idx] -= h
        layers, k = [], 0
        for layer in params.head:
            w = stack[:, k : k + layer.w.size].reshape((2 * s,) + layer.w.shape)
            k += layer.w.size
            b = stack[:, k : k + layer.b.size]
            k += layer.b.size
            layers.append(DenseLayer(w, b, layer.activation))
        out, *_ = dense_forward(layers, np.broadcast_to(x, (2 * s,) + x.shape))
        gt = np.broadcast_to(batch.gt, (2 * s,) + batch.gt.shape).reshape((-1,) + batch.gt.shape[1:])
        dist = _subspace_geodesic(out.reshape(-1, out.shape[-1]), gt)
        loss = dist.reshape(2 * s, -1).mean(axis=1)
        grad[idx] = (loss[:s] - loss[s:]) / (2.0 * h)
    return params.from_flat(grad)


def loss_and_grad(params: RegressorParams, batch, mode: str = "demr_extrinsic", h: float = 1e-4):
    """``(loss, gradients)`` for ``demr_extrinsic`` (analytic) or ``dimr_geodesic_fd``."""
    if mode == "demr_extrinsic":
        return demr_loss_and_grad(params, batch)
    if mode == "dimr_geodesic_fd":
        loss = dimr_loss(params, batch)
        if isinstance(batch, SubspaceBatch) and not params.encoder:
            return loss, subspace_dimr_fd_gradient(params, batch, h)
        grad = fd_gradient(lambda p: dimr_loss(p, batch), params, h)
        return loss, params.from_flat(grad)
    raise ValueError(f"unknown training mode {mode!r}")


# --- optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    step: int
    m: list
    v: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: RegressorParams, **hyper) -> "AdamState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls(0, zeros, [z.copy() for z in zeros], **hyper)


def adam_step(params: RegressorParams, grads: RegressorParams, state: AdamState):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.m) or any(
        a.shape != g.shape for a, g in zip(p_arr, g_arr)
    ):
        raise ShapeMismatch("gradient/optimizer state does not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_p), replace(state, step=t, m=new_m, v=new_v)


# --- gradient checking ----------------------------------------------------------


def _pose_kink_points(params, batch, margin):
    """Boolean ``(C, N)`` mask of points near a ReLU kink or a max-pool tie."""
    _, _, cache = forward_pose(params, batch.p_r, batch.p_t)
    near = np.zeros(cache.clouds.shape[:2], dtype=bool)
    pres = [np.swapaxes(p, 1, 2) for p in cache.enc_pres]  # (C, N, F)
    pres[-1] = pres[-1] + params.encoder[-1].b
    for layer, pre in zip(params.encoder, pres):
        if layer.activation == "relu":
            near |= (np.abs(pre) < margin).any(axis=-1)
    last = pres[-1]
    if last.shape[1] > 1:
        top2 = -np.partition(-last, 1, axis=1)[:, :2, :]
        tie = (top2[:, 0, :] - top2[:, 1, :]) < margin  # (C, F)
        c_idx, f_idx = np.nonzero(tie)
        near[c_idx, cache.argmax[c_idx, f_idx]] = True
        close = np.abs(last - top2[:, :1, :]) < margin
        near |= (close & tie[:, None, :]).any(axis=-1)
    return near


def nudge_batch(params: RegressorParams, batch, rng: np.random.Generator, margin: float = 1e-3, max_rounds: int = 500):
    """Jitter inputs until no ReLU pre-activation (or max-pool gap) is within ``margin``.

    Finite differences across a kink of a piecewise-linear network do not
    estimate the derivative, so the gradient check moves its inputs away
    from them first.
    """
    if isinstance(batch, PoseBatch):
        p_r = np.array(batch.p_r, dtype=np.float64)
        p_t = np.array(batch.p_t, dtype=np.float64)
        for _ in range(max_rounds):
            near = _pose_kink_points(params, PoseBatch(p_r, p_t, batch.gt), margin)
            if not near.any():
                return PoseBatch(p_r, p_t, batch.gt)
            n_ref = 1 if p_r.ndim == 2 else p_r.shape[0]
            ref_mask, tgt_mask = near[:n_ref], near[n_ref:]
            p_r_view = p_r[None] if p_r.ndim == 2 else p_r
            p_r_view[ref_mask] += 0.05 * rng.standard_normal((int(ref_mask.sum()), 3))
            p_t[tgt_mask] += 0.05 * rng.standard_normal((int(tgt_mask.sum()), 3))
        raise RuntimeError("could not move inputs away from ReLU kinks")
    x = np.array(batch.x, dtype=np.float64)
    for _ in range(max_rounds):
        _, (inputs, pres, posts) = forward_subspace(params, x)
        near = np.zeros(x.shape[0], dtype=bool)
        for layer, pre in zip(params.head, pres):
            if layer.activation == "relu":
                near |= (np.abs(pre) < margin).any(axis=-1)
        if not near.any():
            return SubspaceBatch(x, batch.gt)
        x[near] += 0.05 * rng.standard_normal((int(near.sum()), x.shape[1]))
    raise RuntimeError("could not move inputs away from ReLU kinks")


def grad_check(
    params: RegressorParams,
    batch,
    h: float = 1e-4,
    rng: np.random.Generator | None = None,
    max_full: int = 10_000,
    subset: int = 128,
    nudge: bool = True,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(1e-8, |a| + |n|)``. Networks with more
    than ``max_full`` parameters are checked on a seeded random subset.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-6, 1e-3]")
    rng = rng if rng is not None else np.random.default_rng(0)
    if nudge:
        batch = nudge_batch(params, batch, rng)
    _, grads = demr_loss_and_grad(params, batch)
    analytic = grads.flat()
    if analytic.size > max_full:
        idx = np.sort(rng.choice(analytic.size, size=subset, replace=False))
    else:
        idx = np.arange(analytic.size)
    numeric = fd_gradient(lambda p: demr_loss_and_grad(p, batch)[0], params, h, idx)
    a = analytic[idx]
    rel = np.abs(a - numeric) / np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    return float(rel.max())


# --- checkpoints ----------------------------------------------------------------

MAGIC = b"DEMR"
FORMAT_VERSION = 1


def _layer_entry(group, layer):
    return {"group": group, "activation": layer.activation, "w": list(layer.w.shape), "b": list(layer.b.shape)}


def save_checkpoint(path, params: RegressorParams) -> None:
    """Write ``DEMR | u32 version | u32 header len | JSON header | arrays``.

    Each array is a u64 element count followed by little-endian float64
    values, in :meth:`RegressorParams.arrays` order.
    """
    layers = [_layer_entry("encoder", l) for l in params.encoder]
    layers += [_layer_entry("head", l) for l in params.head]
    if params.trans_head is not None:
        layers.append(_layer_entry("trans_head", params.trans_head))
    header = json.dumps({"rot_head_tag": params.rot_head_tag, "layers": layers}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for a in params.arrays():
            fh.write(struct.pack("<Q", a.size))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> RegressorParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a DEMR checkpoint")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12 : 12 + hlen])
    pos = 12 + hlen

    def read(shape):
        nonlocal pos
        (count,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if count != int(np.prod(shape)):
            raise ValueError(f"{path}: array size {count} does not match header shape {shape}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * count
        return arr

    groups = {"encoder": [], "head": [], "trans_head": []}
    for entry in header["layers"]:
        w = read(entry["w"])
        b = read(entry["b"])
        groups[entry["group"]].append(DenseLayer(w, b, entry["activation"]))
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes after the last array")
    trans = groups["trans_head"][0] if groups["trans_head"] else None
    return RegressorParams(groups["encoder"], groups["head"], header["rot_head_tag"], trans)
