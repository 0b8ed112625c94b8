"""IMLP: an MLP whose input is augmented by windowed attention over a buffer.

Shapes use the row-vector convention: a batch ``x`` is ``(B, d_in)`` and
every layer computes ``x @ W + b``.

Forward pass, for a buffer holding ``W'`` prototypes ``H`` (``W' x d_h``)::

    Q      = x @ W_q                           (B, 1, d_h)
    K      = H @ W_k                           (B, W', d_h)   values tied to keys
    scores = K @ Q^T                           (B, W', 1)
    alpha  = softmax(scores / sqrt(d_h))       over the W' axis
    c      = alpha^T @ K                       (B, 1, d_h) -> (B, d_h)
    z      = [x | c]
    h      = relu(relu(z @ W_1 + b_1) @ W_2 + b_2)
    p      = softmax(h @ W_c + b_c)

With attention disabled or an empty buffer the context is all zeros.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .buffer import FeatureBuffer
from .errors import LabelError, ShapeError
from .linalg import DTYPE, batched_matmul, relu, relu_backward, softmax, softmax_rows

PARAM_NAMES = ("W_q", "W_k", "W_1", "b_1", "W_2", "b_2", "W_c", "b_c")


@dataclass(frozen=True)
class ImlpConfig:
    d_in: int
    n_classes: int
    d_h: int = 256
    d_ff: int = 512
    window: int = 8
    attention_enabled: bool = True
    fc2_bias: bool = True
    normalize_prototypes: bool = True
    prototype_eps: float = 1e-8
    buffer_granularity: str = "segment"

    def __post_init__(self):
        for name in ("d_in", "n_classes", "d_h", "d_ff", "window"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.buffer_granularity not in ("segment", "batch"):
            raise ValueError("buffer_granularity must be 'segment' or 'batch'")
        if self.prototype_eps <= 0:
            raise ValueError("prototype_eps must be positive")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {
            "W_q": (self.d_in, self.d_h),
            "W_k": (self.d_h, self.d_h),
            "W_1": (self.d_in + self.d_h, self.d_ff),
            "b_1": (self.d_ff,),
            "W_2": (self.d_ff, self.d_h),
            "b_2": (self.d_h,),
            "W_c": (self.d_h, self.n_classes),
            "b_c": (self.n_classes,),
        }
        if not self.fc2_bias:
            del shapes["b_2"]
        return shapes

    def new_buffer(self) -> FeatureBuffer:
        return FeatureBuffer(self.window, self.d_h)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ImlpParams:
    """Learnable tensors. ``b_2`` is ``None`` when the config drops the FC2 bias.

    Gradients use the same container.
    """

    config: ImlpConfig
    W_q: np.ndarray
    W_k: np.ndarray
    W_1: np.ndarray
    b_1: np.ndarray
    W_2: np.ndarray
    b_2: np.ndarray | None
    W_c: np.ndarray
    b_c: np.ndarray

    def names(self) -> tuple[str, ...]:
        return tuple(n for n in PARAM_NAMES if getattr(self, n) is not None)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for n in self.names():
            yield n, getattr(self, n)

    def copy(self) -> "ImlpParams":
        return self.map(np.copy)

    def map(self, fn) -> "ImlpParams":
        kw = {n: (None if getattr(self, n) is None else fn(getattr(self, n))) for n in PARAM_NAMES}
        return ImlpParams(config=self.config, **kw)

    def zeros_like(self) -> "ImlpParams":
        return self.map(np.zeros_like)

    def num_parameters(self) -> int:
        return sum(a.size for _, a in self.items())

    def equal(self, other: "ImlpParams") -> bool:
        """Bitwise equality of every tensor."""
        return self.names() == other.names() and all(
            np.array_equal(a, getattr(other, n)) for n, a in self.items()
        )


@dataclass
class ForwardTrace:
    x: np.ndarray
    attention_active: bool
    H: np.ndarray | None = None
    Q: np.ndarray | None = None
    K: np.ndarray | None = None
    scores: np.ndarray | None = None
    alpha: np.ndarray | None = None
    context: np.ndarray = None
    z: np.ndarray = None
    a1: np.ndarray = None
    r1: np.ndarray = None
    a2: np.ndarray = None
    h: np.ndarray = None
    logits: np.ndarray = None
    probs: np.ndarray = None


def init_params(config: ImlpConfig, seed: int) -> ImlpParams:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
    rng = np.random.default_rng(seed)
    shapes = config.param_shapes()
    kw = {}
    for name in PARAM_NAMES:
        if name not in shapes:
            kw[name] = None
            continue
        shape = shapes[name]
        if name.startswith("b"):
            kw[name] = np.zeros(shape, dtype=DTYPE)
        else:
            bound = math.sqrt(6.0 / shape[0])
            kw[name] = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
    return ImlpParams(config=config, **kw)


def attention_active(config: ImlpConfig, buffer: FeatureBuffer | None) -> bool:
    return bool(config.attention_enabled and buffer is not None and not buffer.is_empty)


def forward(params: ImlpParams, x, buffer: FeatureBuffer | None) -> ForwardTrace:
    cfg = params.config
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != cfg.d_in:
        raise ShapeError(f"input must be (B, {cfg.d_in}), got {x.shape}")
    if buffer is not None and buffer.dim != cfg.d_h:
        raise ShapeError(f"buffer dim {buffer.dim} does not match d_h={cfg.d_h}")
    B = x.shape[0]
    active = attention_active(cfg, buffer)
    tr = ForwardTrace(x=x, attention_active=active)

    if cfg.attention_enabled:
        tr.Q = (x @ params.W_q)[:, None, :]
    if active:
        tr.H = buffer.stacked(B)
        tr.K = np.matmul(tr.H, params.W_k)
        tr.scores = batched_matmul(tr.K, np.swapaxes(tr.Q, 1, 2))
        tr.alpha = softmax(tr.scores / math.sqrt(cfg.d_h), axis=1)
        tr.context = batched_matmul(np.swapaxes(tr.alpha, 1, 2), tr.K)[:, 0, :]
    else:
        tr.context = np.zeros((B, cfg.d_h), dtype=DTYPE)

    tr.z = np.concatenate([x, tr.context], axis=1)
    tr.a1 = tr.z @ params.W_1 + params.b_1
    tr.r1 = relu(tr.a1)
    tr.a2 = tr.r1 @ params.W_2
    if params.b_2 is not None:
        tr.a2 = tr.a2 + params.b_2
    tr.h = relu(tr.a2)
    tr.logits = tr.h @ params.W_c + params.b_c
    tr.probs = softmax_rows(tr.logits)
    return tr


def _check_labels(labels, n: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise LabelError("labels must be integer class indices")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    return y


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(len(y)), y]))


def loss_and_backward(trace: ForwardTrace, params: ImlpParams, labels) -> tuple[float, ImlpParams]:
    """Mean cross-entropy and its gradient for every parameter.

    Buffer entries are constants: gradients reach ``W_k`` through the keys
    but never flow into the stored prototypes.
    """
    cfg = params.config
    B = trace.x.shape[0]
    y = _check_labels(labels, B, cfg.n_classes)
    loss = cross_entropy(trace.logits, y)
    g = params.zeros_like()

    d_logits = trace.probs.copy()
    d_logits[np.arange(B), y] -= 1.0
    d_logits /= B
    g.W_c = trace.h.T @ d_logits
    g.b_c = d_logits.sum(axis=0)

    d_a2 = relu_backward(trace.a2, d_logits @ params.W_c.T)
    g.W_2 = trace.r1.T @ d_a2
    if params.b_2 is not None:
        g.b_2 = d_a2.sum(axis=0)
    d_a1 = relu_backward(trace.a1, d_a2 @ params.W_2.T)
    g.W_1 = trace.z.T @ d_a1
    g.b_1 = d_a1.sum(axis=0)

    if trace.attention_active:
        d_ctx = (d_a1 @ params.W_1.T)[:, cfg.d_in:]
        alpha = trace.alpha[:, :, 0]
        q = trace.Q[:, 0, :]
        K = trace.K
        d_alpha = np.einsum("bwd,bd->bw", K, d_ctx)
        d_scaled = alpha * (d_alpha - np.sum(alpha * d_alpha, axis=1, keepdims=True))
        d_scores = d_scaled / math.sqrt(cfg.d_h)
        d_K = alpha[:, :, None] * d_ctx[:, None, :] + d_scores[:, :, None] * q[:, None, :]
        d_q = np.einsum("bw,bwd->bd", d_scores, K)
        g.W_k = np.einsum("bwi,bwj->ij", trace.H, d_K)
        g.W_q = trace.x.T @ d_q
    return loss, g


def predict(params: ImlpParams, x, buffer: FeatureBuffer | None) -> tuple[np.ndarray, np.ndarray]:
    """Class indices (ties go to the lowest index) and probabilities."""
    probs = forward(params, x, buffer).probs
    return np.argmax(probs, axis=1), probs


def penultimate_features(params: ImlpParams, x, buffer: FeatureBuffer | None) -> np.ndarray:
    return forward(params, x, buffer).h.copy()


def flops_per_batch(config: ImlpConfig, batch: int, window_fill: int, training: bool = False) -> int:
    """Floating-point operation count for one forward pass (x3 when training).

    Terms: query projection, key projection, attention scores, aggregation,
    and the feed-forward stack with classifier head. The query is computed
    whenever attention is enabled; the window terms vanish for an empty
    buffer.
    """
    B = int(batch)
    W = int(window_fill) if config.attention_enabled else 0
    d_in, d_h, d_ff, C = config.d_in, config.d_h, config.d_ff, config.n_classes
    query = 2 * B * d_in * d_h if config.attention_enabled else 0
    key = 2 * B * W * d_h * d_h
    scores = 2 * B * W * d_h
    aggregation = 2 * B * W * d_h
    mlp = 2 * B * ((d_in + d_h) * d_ff + d_ff * d_h + d_h * C)
    total = query + key + scores + aggregation + mlp
    return 3 * total if training else total
