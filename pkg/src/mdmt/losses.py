"""Loss heads with analytic gradients.

Every loss returns a :class:`LossResult` holding the scalar value, the
gradient with respect to the trunk features and the gradients with respect to
every task head that entered the computation.

The cross-task losses (``cds_loss``, ``tam_loss``) normalise each sample over
the classes of *all* seen heads, so a batch drawn from task ``k`` also pushes
on the heads of the other tasks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, StateError
from .nn import glorot_bound

COS_EPS = 1e-7


@dataclass
class TaskHead:
    task_id: int
    weight: np.ndarray  # (d, C)
    bias: np.ndarray  # (C,)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[0]


def init_head(task_id: int, feature_dim: int, num_classes: int, seed: int) -> TaskHead:
    if feature_dim <= 0 or num_classes <= 0:
        raise ConfigError("head dimensions must be positive")
    rng = np.random.default_rng(seed)
    bound = glorot_bound(feature_dim, num_classes)
    w = rng.uniform(-bound, bound, size=(feature_dim, num_classes))
    return TaskHead(task_id, w, np.zeros(num_classes))


@dataclass(frozen=True)
class MarginConfig:
    m_c: float = 0.01
    m_t: float = 0.1
    s: float = 32.0

    def __post_init__(self):
        if self.m_c < 0 or self.m_t < 0:
            raise ConfigError("margins must be non-negative")
        if self.m_c + self.m_t >= math.pi:
            raise ConfigError("m_c + m_t must be below pi")
        if not self.s > 0:
            raise ConfigError("scale s must be positive")


@dataclass
class LossResult:
    value: float
    feature_grad: np.ndarray | None
    head_grads: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def _check_labels(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ShapeError("labels must be a vector")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return y.astype(np.int64)


def _check_features(features, n: int) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != n:
        raise ShapeError(f"features must have shape ({n}, d), got {x.shape}")
    return x


def _stack_heads(heads: Sequence[TaskHead], k: int):
    if not heads:
        raise StateError("no task heads")
    if not 0 <= k < len(heads):
        raise StateError(f"task {k} has no head among {len(heads)} seen")
    sizes = [h.num_classes for h in heads]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return sizes, offsets


def _softmax_xent(logits: np.ndarray, target_cols: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    denom = expz.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    rows = np.arange(n)
    value = -log_probs[rows, target_cols].mean()
    grad = expz / denom
    grad[rows, target_cols] -= 1.0
    grad /= n
    return float(value), grad


def _split_columns(mat: np.ndarray, offsets: np.ndarray, i: int) -> np.ndarray:
    return mat[:, offsets[i]:offsets[i + 1]]


def softmax_ce_loss(features, labels, head: TaskHead) -> LossResult:
    """Plain affine softmax cross-entropy on one head."""
    y = _check_labels(labels, head.num_classes)
    x = _check_features(features, y.shape[0])
    logits = x @ head.weight + head.bias
    value, g = _softmax_xent(logits, y)
    return LossResult(value, g @ head.weight.T, {head.task_id: (x.T @ g, g.sum(axis=0))})


def cds_loss(features, labels, heads: Sequence[TaskHead], k: int) -> LossResult:
    """Cross-domain softmax: affine logits of every seen head share one normaliser.

    ``k`` indexes ``heads`` and selects the task the batch belongs to; labels
    are class indices within that task.
    """
    sizes, offsets = _stack_heads(heads, k)
    y = _check_labels(labels, sizes[k])
    x = _check_features(features, y.shape[0])
    w_all = np.concatenate([h.weight for h in heads], axis=1)
    b_all = np.concatenate([h.bias for h in heads])
    logits = x @ w_all + b_all
    value, g = _softmax_xent(logits, y + offsets[k])
    dw_all = x.T @ g
    db_all = g.sum(axis=0)
    head_grads = {}
    for i, h in enumerate(heads):
        head_grads[h.task_id] = (
            _split_columns(dw_all, offsets, i),
            db_all[offsets[i]:offsets[i + 1]],
        )
    return LossResult(value, g @ w_all.T, head_grads)


def _margin_cos(c: np.ndarray, m: float):
    """cos(theta + m) from cos(theta) and its derivative w.r.t. cos(theta).

    cos(theta) is clamped away from +-1 before sin(theta) is formed; the
    derivative is zero where the clamp is active.
    """
    if m == 0.0:
        return c, np.ones_like(c)
    cc = np.clip(c, -1.0 + COS_EPS, 1.0 - COS_EPS)
    sin = np.sqrt(1.0 - cc * cc)
    value = cc * math.cos(m) - sin * math.sin(m)
    deriv = math.cos(m) + cc / sin * math.sin(m)
    deriv = np.where((c > -1.0 + COS_EPS) & (c < 1.0 - COS_EPS), deriv, 0.0)
    return value, deriv


def tam_loss(features, labels, heads: Sequence[TaskHead], k: int, cfg: MarginConfig) -> LossResult:
    """Two-level angular margin loss for a batch of task ``k``.

    Logits are ``s * cos`` between the normalised feature and each normalised
    head column. The target column gets the angular offset ``m_c + m_t``, the
    other columns of task ``k`` get ``m_t``, columns of other tasks none.
    Biases are ignored. Stored head weights are left unnormalised; the
    normalisation Jacobian is folded into the gradients.
    """
    sizes, offsets = _stack_heads(heads, k)
    y = _check_labels(labels, sizes[k])
    x = _check_features(features, y.shape[0])
    n = x.shape[0]

    x_norm = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(x_norm == 0):
        raise NumericError("zero-norm feature in tam_loss")
    w_all = np.concatenate([h.weight for h in heads], axis=1)
    w_norm = np.linalg.norm(w_all, axis=0, keepdims=True)
    if np.any(w_norm == 0):
        raise NumericError("zero-norm head column in tam_loss")
    u = x / x_norm
    v = w_all / w_norm
    cos = u @ v

    logits = cos.copy()
    dlogit_dcos = np.ones_like(cos)
    lo, hi = offsets[k], offsets[k + 1]
    rows = np.arange(n)
    target = y + lo
    if cfg.m_t != 0.0:
        own, own_d = _margin_cos(cos[:, lo:hi], cfg.m_t)
        logits[:, lo:hi] = own
        dlogit_dcos[:, lo:hi] = own_d
    tgt, tgt_d = _margin_cos(cos[rows, target], cfg.m_c + cfg.m_t)
    logits[rows, target] = tgt
    dlogit_dcos[rows, target] = tgt_d

    value, g_logits = _softmax_xent(cfg.s * logits, target)
    g_cos = g_logits * cfg.s * dlogit_dcos

    g_u = g_cos @ v.T
    g_v = u.T @ g_cos
    feature_grad = (g_u - u * np.sum(g_u * u, axis=1, keepdims=True)) / x_norm
    dw_all = (g_v - v * np.sum(g_v * v, axis=0, keepdims=True)) / w_norm

    head_grads = {}
    for i, h in enumerate(heads):
        head_grads[h.task_id] = (_split_columns(dw_all, offsets, i), np.zeros(sizes[i]))
    return LossResult(value, feature_grad, head_grads)


def ed_loss(current_features, stored_features) -> LossResult:
    """Mean squared distance between current and stored representations."""
    cur = np.asarray(current_features, dtype=np.float64)
    ref = np.asarray(stored_features, dtype=np.float64)
    if cur.shape != ref.shape or cur.ndim != 2:
        raise ShapeError(f"feature shapes differ: {cur.shape} vs {ref.shape}")
    diff = cur - ref
    value = float(np.mean(diff * diff))
    return LossResult(value, 2.0 * diff / diff.size, {})


def cosine_logits(features, head: TaskHead) -> np.ndarray:
    """Margin-free cosine scores of each sample against each column of ``head``."""
    x = np.asarray(features, dtype=np.float64)
    x_norm = np.linalg.norm(x, axis=1, keepdims=True)
    w_norm = np.linalg.norm(head.weight, axis=0, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (x / x_norm) @ (head.weight / w_norm)
    return np.nan_to_num(out, nan=0.0)


def affine_logits(features, head: TaskHead) -> np.ndarray:
    return np.asarray(features, dtype=np.float64) @ head.weight + head.bias


def grad_check(
    loss_fn: Callable[..., tuple[float, Mapping[str, np.ndarray]]],
    inputs: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(**inputs)`` must return ``(value, grads)`` where ``grads`` maps
    some of the input names to arrays of matching shape. The inputs are
    perturbed in place and restored. When ``max_coords`` is set and an input
    has more coordinates than that, a random subset of that size is checked.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not h > 0:
        raise ConfigError("step h must be positive")
    _, analytic = loss_fn(**inputs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, grad in analytic.items():
        arr = inputs[name]
        flat = arr.reshape(-1)
        g = np.asarray(grad).reshape(-1)
        if g.size != flat.size:
            raise ShapeError(f"gradient for {name} has wrong size")
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_fn(**inputs)
            flat[i] = orig - h
            down, _ = loss_fn(**inputs)
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = abs(g[i] - num) / max(abs(g[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
