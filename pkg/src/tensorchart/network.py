"""Tensor-contraction charting network with hand-written gradients.

Two stacks of tensor contraction layers (one for the real part of the
feature tensor, one for the imaginary part) feed a small fully connected
head that emits a 2-D pseudo-position. Training matches chart distances of
sample pairs to target dissimilarities with Adam.

Every array-valued routine works on a leading batch axis: feature stacks are
``(B, I_1, I_2, I_3)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import InvalidInputError
from .tensor import ShapeError

log = logging.getLogger(__name__)

DEFAULT_SLOPE = 0.01
DISTANCE_EPS = 1e-12


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, last_good_epoch: int | None):
        self.epoch = epoch
        self.last_good_epoch = last_good_epoch
        super().__init__(
            f"loss became non-finite in epoch {epoch} (1-based)"
            f" (last finite epoch: {last_good_epoch}); lower the learning rate"
        )


@dataclass(frozen=True)
class Architecture:
    """Mode sizes of every TCL stage (input first) and the FCN widths."""

    tcl_shapes: tuple[tuple[int, int, int], ...] = ((32, 32, 24), (8, 8, 6), (4, 4, 4))
    fcn_hidden: tuple[int, ...] = (80,)
    out_dim: int = 2
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if len(self.tcl_shapes) < 1 or any(len(s) != 3 for s in self.tcl_shapes):
            raise ShapeError("tcl_shapes must list 3-mode shapes")
        if any(d < 1 for s in self.tcl_shapes for d in s) or self.out_dim < 1:
            raise ShapeError("all sizes must be positive")

    @property
    def fcn_widths(self) -> tuple[int, ...]:
        return (2 * math.prod(self.tcl_shapes[-1]),) + tuple(self.fcn_hidden) + (self.out_dim,)


@dataclass
class TclLayer:
    factors: tuple[np.ndarray, np.ndarray, np.ndarray]  # V^(n) is (out_n, in_n)

    @property
    def in_shape(self):
        return tuple(v.shape[1] for v in self.factors)

    @property
    def out_shape(self):
        return tuple(v.shape[0] for v in self.factors)


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray


@dataclass
class NetworkParams:
    re_block: list[TclLayer]
    im_block: list[TclLayer]
    fcn: list[DenseLayer]
    slope: float = DEFAULT_SLOPE

    def arrays(self) -> list[np.ndarray]:
        """Every trainable array in canonical order (real TCLs, imaginary TCLs, FCN)."""
        out = []
        for block in (self.re_block, self.im_block):
            for layer in block:
                out.extend(layer.factors)
        for d in self.fcn:
            out.extend((d.weight, d.bias))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(a, order="F") for a in self.arrays()])

    def with_flat(self, theta: np.ndarray) -> "NetworkParams":
        """A copy with parameter values taken from a flat vector."""
        theta = np.asarray(theta, dtype=float)
        if theta.size != parameter_count(self):
            raise ShapeError(f"{theta.size} values for {parameter_count(self)} parameters")
        pos = 0
        new = []
        for a in self.arrays():
            new.append(np.reshape(theta[pos : pos + a.size], a.shape, order="F").copy())
            pos += a.size
        return self._rebuild(new)

    def _rebuild(self, arrays) -> "NetworkParams":
        it = iter(arrays)
        re = [TclLayer(tuple(next(it) for _ in range(3))) for _ in self.re_block]
        im = [TclLayer(tuple(next(it) for _ in range(3))) for _ in self.im_block]
        fcn = [DenseLayer(next(it), next(it)) for _ in self.fcn]
        return NetworkParams(re, im, fcn, self.slope)

    def zeros_like(self) -> "NetworkParams":
        return self._rebuild([np.zeros_like(a) for a in self.arrays()])

    @property
    def architecture(self) -> Architecture:
        shapes = [self.re_block[0].in_shape] + [layer.out_shape for layer in self.re_block]
        hidden = tuple(d.weight.shape[0] for d in self.fcn[:-1])
        return Architecture(tuple(shapes), hidden, self.fcn[-1].weight.shape[0], self.slope)


def parameter_count(params: NetworkParams) -> int:
    return int(sum(a.size for a in params.arrays()))


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(arch: Architecture = Architecture(), seed: int = 0) -> NetworkParams:
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(2):
        block = []
        for shape_in, shape_out in zip(arch.tcl_shapes[:-1], arch.tcl_shapes[1:]):
            block.append(TclLayer(tuple(_glorot(rng, o, i) for i, o in zip(shape_in, shape_out))))
        blocks.append(block)
    widths = arch.fcn_widths
    fcn = [DenseLayer(_glorot(rng, o, i), np.zeros(o)) for i, o in zip(widths[:-1], widths[1:])]
    return NetworkParams(blocks[0], blocks[1], fcn, arch.slope)


def leaky_relu(x: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _leaky_grad(pre: np.ndarray, slope: float) -> np.ndarray:
    return np.where(pre > 0, 1.0, slope)


def _tcl_batch(x: np.ndarray, layer: TclLayer):
    # x: (B, I1, I2, I3) -> pre-activation (B, J1, J2, J3) plus the
    # intermediates the backward pass needs.
    v1, v2, v3 = layer.factors
    b, i1, i2, i3 = x.shape
    if (i1, i2, i3) != layer.in_shape:
        raise ShapeError(f"input modes {(i1, i2, i3)} do not match layer input {layer.in_shape}")
    j1, j2, j3 = layer.out_shape
    t1 = np.matmul(v1, x.reshape(b, i1, i2 * i3)).reshape(b * j1, i2, i3)
    t2 = np.matmul(v2, t1)  # (b*j1, j2, i3)
    pre = (t2.reshape(-1, i3) @ v3.T).reshape(b, j1, j2, j3)
    return pre, (t1, t2)


def _tcl_batch_backward(x, layer: TclLayer, cache, d_pre, need_input_grad: bool):
    v1, v2, v3 = layer.factors
    t1, t2 = cache
    b, i1, i2, i3 = x.shape
    j1, j2, j3 = layer.out_shape
    dp = d_pre.reshape(-1, j3)
    g3 = dp.T @ t2.reshape(-1, i3)
    dt2 = (dp @ v3).reshape(b * j1, j2, i3)
    g2 = np.tensordot(dt2, t1, axes=([0, 2], [0, 2]))
    dt1 = np.matmul(v2.T, dt2).reshape(b, j1, i2 * i3)
    g1 = np.tensordot(dt1, x.reshape(b, i1, i2 * i3), axes=([0, 2], [0, 2]))
    dx = np.matmul(v1.T, dt1).reshape(x.shape) if need_input_grad else None
    return (g1, g2, g3), dx


def tcl_forward(x: np.ndarray, layer: TclLayer, activation=None) -> np.ndarray:
    """One contraction layer on a single 3-mode tensor.

    ``activation`` defaults to leaky ReLU (slope 0.01); pass a callable to
    override it, e.g. ``lambda t: t`` for the bare multilinear map.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ShapeError(f"expected a 3-mode tensor, got shape {x.shape}")
    pre, _ = _tcl_batch(x[None], layer)
    act = activation or leaky_relu
    return act(pre[0])


def _vec_batch(x: np.ndarray) -> np.ndarray:
    # per-sample first-mode-fastest flattening
    return np.transpose(x, (0,) + tuple(range(x.ndim - 1, 0, -1))).reshape(x.shape[0], -1)


def _unvec_batch(v: np.ndarray, shape) -> np.ndarray:
    rev = tuple(reversed(shape))
    return np.transpose(v.reshape((v.shape[0],) + rev), (0,) + tuple(range(len(shape), 0, -1)))


def _forward_batch(params: NetworkParams, re: np.ndarray, im: np.ndarray):
    s = params.slope
    caches = []
    branch_out = []
    for block, x in ((params.re_block, re), (params.im_block, im)):
        inputs, tcl_caches, pres = [], [], []
        for layer in block:
            pre, cache = _tcl_batch(x, layer)
            inputs.append(x)
            tcl_caches.append(cache)
            pres.append(pre)
            x = leaky_relu(pre, s)
        caches.append((inputs, tcl_caches, pres))
        branch_out.append(x)
    h = np.concatenate([_vec_batch(branch_out[0]), _vec_batch(branch_out[1])], axis=1)
    acts, dense_pres = [h], []
    for k, d in enumerate(params.fcn):
        pre = h @ d.weight.T + d.bias
        dense_pres.append(pre)
        h = leaky_relu(pre, s) if k < len(params.fcn) - 1 else pre
        acts.append(h)
    return h, (caches, [o.shape[1:] for o in branch_out], acts, dense_pres)


def _backward_batch(params: NetworkParams, cache, dz: np.ndarray) -> NetworkParams:
    s = params.slope
    caches, out_shapes, acts, dense_pres = cache
    grads_fcn = []
    g = dz
    for k in range(len(params.fcn) - 1, -1, -1):
        d = params.fcn[k]
        if k < len(params.fcn) - 1:
            g = g * _leaky_grad(dense_pres[k], s)
        grads_fcn.append(DenseLayer(g.T @ acts[k], g.sum(axis=0)))
        g = g @ d.weight
    grads_fcn.reverse()
    n_re = math.prod(out_shapes[0])
    grads_blocks = []
    for b, (block, (inputs, tcl_caches, pres)) in enumerate(zip((params.re_block, params.im_block), caches)):
        part = g[:, :n_re] if b == 0 else g[:, n_re:]
        dx = _unvec_batch(part, out_shapes[b])
        layer_grads = [None] * len(block)
        for l in range(len(block) - 1, -1, -1):
            d_pre = dx * _leaky_grad(pres[l], s)
            factors, dx = _tcl_batch_backward(inputs[l], block[l], tcl_caches[l], d_pre, need_input_grad=l > 0)
            layer_grads[l] = TclLayer(factors)
        grads_blocks.append(layer_grads)
    return NetworkParams(grads_blocks[0], grads_blocks[1], grads_fcn, params.slope)


def _check_features(params: NetworkParams, re, im, batched: bool):
    want = params.re_block[0].in_shape
    re = np.asarray(re, dtype=float)
    im = np.asarray(im, dtype=float)
    got = re.shape[1:] if batched else re.shape
    if got != want or im.shape != re.shape:
        raise ShapeError(f"feature shapes {re.shape}/{im.shape} do not match network input {want}")
    return re, im


def forward(params: NetworkParams, feat_re: np.ndarray, feat_im: np.ndarray) -> np.ndarray:
    """Chart point(s) for one feature pair ``(I1, I2, I3)`` or a batch ``(B, I1, I2, I3)``."""
    feat_re = np.asarray(feat_re, dtype=float)
    batched = feat_re.ndim == 4
    re, im = _check_features(params, feat_re, feat_im, batched)
    if not batched:
        re, im = re[None], im[None]
    z, _ = _forward_batch(params, re, im)
    return z if batched else z[0]


def infer(params: NetworkParams, feat_re: np.ndarray, feat_im: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Pseudo-position(s) for out-of-sample features; needs nothing but the parameters."""
    feat_re = np.asarray(feat_re, dtype=float)
    if feat_re.ndim != 4:
        return forward(params, feat_re, feat_im)
    feat_im = np.asarray(feat_im, dtype=float)
    chunks = [
        forward(params, feat_re[i : i + batch_size], feat_im[i : i + batch_size])
        for i in range(0, len(feat_re), batch_size)
    ]
    return np.concatenate(chunks) if chunks else np.empty((0, params.fcn[-1].weight.shape[0]))


def _check_batch(pairs, targets, n: int):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if len(pairs) == 0:
        raise InvalidInputError("empty batch")
    if len(targets) != len(pairs):
        raise InvalidInputError(f"{len(pairs)} pairs but {len(targets)} targets")
    if np.any(targets < 0):
        raise InvalidInputError("targets must be non-negative")
    if pairs.min() < 0 or pairs.max() >= n:
        raise InvalidInputError("pair index out of range")
    return pairs, targets


def _pair_terms(params, re, im, pairs, targets):
    uniq, inv = np.unique(pairs, return_inverse=True)
    inv = inv.reshape(-1, 2)
    z, cache = _forward_batch(params, re[uniq], im[uniq])
    diff = z[inv[:, 0]] - z[inv[:, 1]]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    resid = targets - dist
    return resid, diff, dist, inv, z, cache


def pair_loss(params: NetworkParams, feat_re, feat_im, pairs, targets) -> float:
    """Mean over the batch of ``(target - |z_i - z_j|)^2``.

    ``pairs`` indexes rows of the feature stacks ``feat_re``/``feat_im``.
    """
    re, im = _check_features(params, feat_re, feat_im, True)
    pairs, targets = _check_batch(pairs, targets, len(re))
    resid = _pair_terms(params, re, im, pairs, targets)[0]
    return float(np.mean(resid * resid))


def backward(params: NetworkParams, feat_re, feat_im, pairs, targets) -> tuple[float, NetworkParams]:
    """Loss and its exact gradient, shaped like ``params``."""
    re, im = _check_features(params, feat_re, feat_im, True)
    pairs, targets = _check_batch(pairs, targets, len(re))
    resid, diff, dist, inv, z, cache = _pair_terms(params, re, im, pairs, targets)
    p = len(pairs)
    coef = (-2.0 / p) * resid / np.maximum(dist, DISTANCE_EPS)
    g_pair = coef[:, None] * diff
    dz = np.zeros_like(z)
    np.add.at(dz, inv[:, 0], g_pair)
    np.add.at(dz, inv[:, 1], -g_pair)
    return float(np.mean(resid * resid)), _backward_batch(params, cache, dz)


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    epochs: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    pairs_per_epoch: int | None = None  # None: one pair per sample
    all_pairs: bool = False  # enumerate every pair each epoch instead

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise InvalidInputError("batch_size, epochs and learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise InvalidInputError("invalid Adam hyperparameters")


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    params: NetworkParams
    loss_history: list[float] = field(default_factory=list)


def _epoch_pairs(rng: np.random.Generator, upper: tuple[np.ndarray, np.ndarray], cfg: TrainConfig) -> np.ndarray:
    total = len(upper[0])
    if cfg.all_pairs:
        idx = rng.permutation(total)
    else:
        n = int(upper[1][-1]) + 1
        idx = rng.choice(total, size=min(cfg.pairs_per_epoch or n, total), replace=False)
    return np.column_stack([upper[0][idx], upper[1][idx]])


def train(params_init: NetworkParams, feat_re, feat_im, targets, cfg: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """Adam on random pair batches; returns final parameters and per-epoch mean loss."""
    values = getattr(targets, "values", targets)
    values = np.asarray(values, dtype=float)
    re, im = _check_features(params_init, feat_re, feat_im, True)
    n = len(re)
    if values.shape != (n, n):
        raise InvalidInputError(f"target matrix {values.shape} does not match {n} samples")
    if n < 2:
        raise InvalidInputError("need at least two samples")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    params = params_init
    theta = params.flat()
    history: list[float] = []
    upper = np.triu_indices(n, 1)
    for epoch in range(cfg.epochs):
        pairs = _epoch_pairs(rng, upper, cfg)
        total = 0.0
        for start in range(0, len(pairs), cfg.batch_size):
            batch = pairs[start : start + cfg.batch_size]
            tgt = values[batch[:, 0], batch[:, 1]]
            # overflow is caught explicitly below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = backward(params, re, im, batch, tgt)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch + 1, epoch or None)
            total += loss * len(batch)
            theta = opt.step(theta, grad.flat())
            params = params.with_flat(theta)
        mean = total / len(pairs)
        history.append(mean)
        if progress is not None:
            progress(epoch, mean)
        log.debug("epoch %d loss %.6g", epoch, mean)
    return TrainResult(params=params, loss_history=history)
