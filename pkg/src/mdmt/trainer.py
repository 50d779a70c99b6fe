"""Sequential multi-task rehearsal training.

Each step combines the gradient of the current task's loss with a reference
gradient from a batch drawn out of the united memory of earlier tasks. The
memory batch is split by source task, each group gets its own cross-task loss
(the groups are averaged), and optionally a distillation term pulls the
current representations of memory samples toward the ones stored with them.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset, Task, TaskSequence
from .errors import ConfigError, NumericError, StateError
from .losses import (
    LossResult,
    MarginConfig,
    TaskHead,
    affine_logits,
    cds_loss,
    cosine_logits,
    ed_loss,
    init_head,
    softmax_ce_loss,
    tam_loss,
)
from .memory import MemoryStore, sample_ref_batch, store_mem
from .metrics import AccuracyMatrix, BShotCurve
from .nn import Gradients, Network, backward, forward, init_network, sgd_step

log = logging.getLogger(__name__)


class LossMode(str, enum.Enum):
    TAM = "tam"
    CDS_RAW = "cds_raw"
    VANILLA = "vanilla"


@dataclass
class HyperParams:
    margin: MarginConfig = field(default_factory=MarginConfig)
    lr: float = 0.1
    batch_size: int = 10
    ref_batch_size: int | None = None  # None: same as batch_size
    quota: int = 25
    epochs_per_task: int = 1
    use_ed: bool = True
    loss_mode: LossMode = LossMode.TAM
    seed: int = 0
    lca_beta: int = 10

    def __post_init__(self):
        self.loss_mode = LossMode(self.loss_mode)
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        for name in ("batch_size", "quota", "epochs_per_task"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.ref_batch_size is not None and self.ref_batch_size < 1:
            raise ConfigError("ref_batch_size must be >= 1")
        if self.lca_beta < 0:
            raise ConfigError("lca_beta must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def replay(self) -> bool:
        return self.loss_mode is not LossMode.VANILLA

    @property
    def effective_ref_batch_size(self) -> int:
        return self.batch_size if self.ref_batch_size is None else self.ref_batch_size


@dataclass
class TrainerState:
    net: Network
    heads: list[TaskHead]
    memory: MemoryStore
    matrix: np.ndarray  # (T, T), rows written as tasks finish
    curves: list[np.ndarray] = field(default_factory=list)  # one (beta + 1,) row per task
    loss_history: list[list[float]] = field(default_factory=list)
    rng: np.random.Generator | None = None

    def accuracy_matrix(self) -> AccuracyMatrix:
        return AccuracyMatrix(self.matrix)

    def bshot_curve(self) -> BShotCurve:
        return BShotCurve(np.vstack(self.curves))


def new_state(layer_sizes: list[int], num_tasks: int, hp: HyperParams) -> TrainerState:
    return TrainerState(
        net=init_network(layer_sizes, hp.seed),
        heads=[],
        memory=MemoryStore(hp.quota),
        matrix=np.zeros((num_tasks, num_tasks)),
        rng=np.random.default_rng([hp.seed, 1]),
    )


def add_head(state: TrainerState, num_classes: int, hp: HyperParams) -> TaskHead:
    k = len(state.heads)
    head = init_head(k, state.net.feature_dim, num_classes, seed=hp.seed * 7919 + 104729 * (k + 1))
    state.heads.append(head)
    return head


def _task_loss(hp: HyperParams, feats, labels, heads, k) -> LossResult:
    if hp.loss_mode is LossMode.TAM:
        return tam_loss(feats, labels, heads, k, hp.margin)
    if hp.loss_mode is LossMode.CDS_RAW:
        return cds_loss(feats, labels, heads, k)
    return softmax_ce_loss(feats, labels, heads[k])


def current_gradients(state: TrainerState, x, y, t: int, hp: HyperParams):
    feats = forward(state.net, x)
    res = _task_loss(hp, feats, y, state.heads[:t + 1], t)
    g = backward(state.net, res.feature_grad)
    g.heads = dict(res.head_grads)
    return res.value, g


def reference_gradients(state: TrainerState, xm, ym, km, fm, t: int, hp: HyperParams,
                        use_ed: bool | None = None):
    """Gradient of the replay objective on one memory batch.

    Returns ``(replay_loss, ed_value, gradients)``; ``ed_value`` is ``None``
    when distillation is off.
    """
    use_ed = hp.use_ed if use_ed is None else use_ed
    feats = forward(state.net, xm)
    fgrad = np.zeros_like(feats)
    head_grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    groups = np.unique(km)
    value = 0.0
    for k in groups:
        mask = km == k
        res = _task_loss(hp, feats[mask], ym[mask], state.heads[:t + 1], int(k))
        value += res.value / len(groups)
        fgrad[mask] += res.feature_grad / len(groups)
        for h, (dw, db) in res.head_grads.items():
            dw, db = dw / len(groups), db / len(groups)
            if h in head_grads:
                head_grads[h] = (head_grads[h][0] + dw, head_grads[h][1] + db)
            else:
                head_grads[h] = (dw, db)
    ed_value = None
    if use_ed:
        ed = ed_loss(feats, fm)
        ed_value = ed.value
        fgrad = fgrad + ed.feature_grad
    g = backward(state.net, fgrad)
    g.heads = head_grads
    return value, ed_value, g


def evaluate(state: TrainerState, test_sets, hp: HyperParams, task_ids=None) -> np.ndarray:
    """Accuracy per task with the task identity given; margins are not applied.

    ``test_sets[i]`` is scored with head ``task_ids[i]`` (default: ``i``).
    Argmax ties resolve to the lowest class index.
    """
    task_ids = range(len(test_sets)) if task_ids is None else task_ids
    accs = []
    for k, ds in zip(task_ids, test_sets):
        if k >= len(state.heads):
            raise StateError(f"no head for task {k}")
        feats = forward(state.net, ds.inputs, cache=False)
        head = state.heads[k]
        if hp.loss_mode is LossMode.TAM:
            scores = cosine_logits(feats, head)
        else:
            scores = affine_logits(feats, head)
        accs.append(float(np.mean(np.argmax(scores, axis=1) == ds.labels)))
    return np.array(accs)


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_step(state: TrainerState, x, y, t: int, hp: HyperParams, ref_batch=None, step: int = 0):
    """One SGD update on task ``t``: current-task gradient plus, if ``ref_batch``
    is given, the replay gradient. Returns ``(loss, applied_gradients)``."""
    value, g = current_gradients(state, x, y, t, hp)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss on task {t}, batch {step}")
    if ref_batch is not None:
        ref_value, ed_value, g_ref = reference_gradients(state, *ref_batch, t, hp)
        if not np.isfinite(ref_value) or (ed_value is not None and not np.isfinite(ed_value)):
            raise NumericError(f"non-finite replay loss on task {t}, batch {step}")
        g = g + g_ref
    if not g.all_finite():
        raise NumericError(f"non-finite gradient on task {t}, batch {step}")
    sgd_step(state.net, g, hp.lr, state.heads)
    return value, g


def train_task(state: TrainerState, task: Task, hp: HyperParams, t: int) -> None:
    """Train on task ``t`` (0-based) for ``hp.epochs_per_task`` passes.

    Expects head ``t`` to exist already and memory to hold tasks ``0..t-1``.
    Also records the b-shot accuracy curve on task ``t``'s test set.
    """
    if len(state.heads) != t + 1:
        raise StateError(f"expected {t + 1} heads before training task {t}, found {len(state.heads)}")
    rng = state.rng
    curve = [evaluate(state, [task.test], hp, [t])[0]]
    losses = []
    step = 0
    for _ in range(hp.epochs_per_task):
        for idx in _minibatches(len(task.train), hp.batch_size, rng):
            ref_batch = None
            if t > 0 and hp.replay:
                ref_batch = sample_ref_batch(state.memory, hp.effective_ref_batch_size, rng)
            value, _ = train_step(state, task.train.inputs[idx], task.train.labels[idx], t, hp,
                                  ref_batch, step)
            losses.append(value)
            step += 1
            if step <= hp.lca_beta:
                curve.append(evaluate(state, [task.test], hp, [t])[0])
    # fewer updates than beta: hold the last measured accuracy
    curve += [curve[-1]] * (hp.lca_beta + 1 - len(curve))
    state.curves.append(np.array(curve))
    state.loss_history.append(losses)


def train_sequence(tasks: TaskSequence | list[Task], hp: HyperParams,
                   hidden: list[int] | tuple[int, ...] = (256, 256)):
    """Train every task in order; returns ``(AccuracyMatrix, BShotCurve, state)``.

    After each task its memory is stored (rehearsal modes only) and all seen
    tasks are evaluated into the next matrix row. Unseen columns stay 0.
    """
    tasks = list(tasks)
    if not tasks:
        raise ConfigError("need at least one task")
    dims = {t.train.dim for t in tasks} | {t.test.dim for t in tasks}
    if len(dims) != 1:
        raise ConfigError(f"tasks disagree on input dimension: {sorted(dims)}")
    T = len(tasks)
    state = new_state([dims.pop(), *hidden], T, hp)
    for t, task in enumerate(tasks):
        add_head(state, task.num_classes, hp)
        train_task(state, task, hp, t)
        if hp.replay:
            store_mem(state.memory, t, task.train, state.net, hp.quota, seed=[hp.seed, 2, t])
        state.matrix[t, :t + 1] = evaluate(state, [tk.test for tk in tasks[:t + 1]], hp)
        log.info("task %d done: A_t=%.4f", t + 1, state.matrix[t, :t + 1].mean())
    return state.accuracy_matrix(), state.bshot_curve(), state


def dataset_loss(state: TrainerState, ds: LabeledDataset, t: int, hp: HyperParams) -> float:
    """Current-task loss over a whole dataset, without touching layer caches."""
    feats = forward(state.net, ds.inputs, cache=False)
    return _task_loss(hp, feats, ds.labels, state.heads[:t + 1], t).value
