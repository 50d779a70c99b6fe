"""Continual-learning metrics over accuracy matrices.

``a[i][j]`` is the test accuracy on task ``j`` after training task ``i``.
Metric functions take task counts ``t`` in 1-based form so they read like the
usual definitions; array indexing inside is 0-based.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ParseError

DECIMALS = 4


@dataclass
class AccuracyMatrix:
    a: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise ValueError(f"accuracy matrix must be square, got shape {self.a.shape}")
        if self.a.size and (self.a.min() < 0 or self.a.max() > 1):
            raise ValueError("accuracies must lie in [0, 1]")

    @property
    def T(self) -> int:
        return self.a.shape[0]

    @classmethod
    def zeros(cls, T: int) -> "AccuracyMatrix":
        return cls(np.zeros((T, T)))

    def __eq__(self, other):
        return isinstance(other, AccuracyMatrix) and np.array_equal(self.a, other.a)


@dataclass
class BShotCurve:
    """Row ``t`` holds the accuracy on task ``t`` after ``b = 0..beta`` updates on it."""

    a_tb: np.ndarray

    def __post_init__(self):
        self.a_tb = np.asarray(self.a_tb, dtype=np.float64)
        if self.a_tb.ndim != 2 or self.a_tb.shape[1] < 1:
            raise ValueError("b-shot curve must be a (T, beta + 1) matrix")
        if self.a_tb.size and (self.a_tb.min() < 0 or self.a_tb.max() > 1):
            raise ValueError("accuracies must lie in [0, 1]")

    @property
    def beta(self) -> int:
        return self.a_tb.shape[1] - 1

    def truncated(self, beta: int) -> "BShotCurve":
        if beta > self.beta:
            raise ValueError(f"curve has beta={self.beta}, cannot evaluate beta={beta}")
        return BShotCurve(self.a_tb[:, :beta + 1])


def _matrix(m) -> np.ndarray:
    return m.a if isinstance(m, AccuracyMatrix) else np.asarray(m, dtype=np.float64)


def average_accuracy(m, t: int | None = None) -> float:
    a = _matrix(m)
    T = a.shape[0]
    t = T if t is None else t
    if not 1 <= t <= T:
        raise ValueError(f"t must be in [1, {T}], got {t}")
    return float(np.mean(a[t - 1, :t]))


def forgetting(m, t: int | None = None) -> float:
    """Mean drop from each old task's best accuracy (since it was learned) to now."""
    a = _matrix(m)
    T = a.shape[0]
    t = T if t is None else t
    if not 2 <= t <= T:
        raise ValueError(f"forgetting needs 2 <= t <= {T}, got {t}")
    drops = [a[j:t - 1, j].max() - a[t - 1, j] for j in range(t - 1)]
    return float(np.mean(drops))


def ltr(m) -> float:
    """Long-term remembering: drops weighted by how long ago the task was learned."""
    a = _matrix(m)
    T = a.shape[0]
    if T < 2:
        raise ValueError("LTR needs at least 2 tasks")
    total = 0.0
    for j in range(T - 1):
        total += (T - 1 - j) * max(0.0, a[j, j] - a[T - 1, j])
    return float(total / (T - 1))


def lca(curve) -> float:
    a_tb = curve.a_tb if isinstance(curve, BShotCurve) else np.asarray(curve, dtype=np.float64)
    z = a_tb.mean(axis=0)
    return float(z.mean())


def accuracy_trend(m) -> list[float]:
    a = _matrix(m)
    return [average_accuracy(a, t) for t in range(1, a.shape[0] + 1)]


_SPLIT = re.compile(r"[,\s]+")


def parse_matrix(text: str, source: str | None = None) -> AccuracyMatrix:
    """Parse whitespace- or comma-separated rows; blank lines and ``#`` comments are skipped."""
    rows, linenos = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        row = []
        for tok in _SPLIT.split(line):
            if not tok:
                continue
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"non-numeric token {tok!r}", source, lineno) from None
            if not 0.0 <= v <= 1.0:
                raise ParseError(f"entry {tok} outside [0, 1]", source, lineno)
            row.append(v)
        rows.append(row)
        linenos.append(lineno)
    if not rows:
        raise ParseError("no matrix rows", source)
    T = len(rows)
    for row, lineno in zip(rows, linenos):
        if len(row) != T:
            raise ParseError(f"row has {len(row)} entries, expected {T}", source, lineno)
    return AccuracyMatrix(np.array(rows))


def emit_matrix(m, sep: str = ",") -> str:
    a = _matrix(m)
    return "".join(sep.join(f"{v:.{DECIMALS}f}" for v in row) + "\n" for row in a)


def read_matrix(path) -> AccuracyMatrix:
    with open(path) as fh:
        return parse_matrix(fh.read(), source=str(path))


def metrics_report(m, curve=None, beta: int | None = None) -> dict:
    """Structured report: A_T, F_T, LTR, LCA_beta and the A_t trend.

    Metrics that are undefined for a single task are reported as ``None``.
    """
    a = _matrix(m)
    T = a.shape[0]
    report = {
        "T": T,
        "A_T": average_accuracy(a),
        "F_T": forgetting(a) if T >= 2 else None,
        "LTR": ltr(a) if T >= 2 else None,
        "A_trend": accuracy_trend(a),
    }
    if curve is not None:
        if not isinstance(curve, BShotCurve):
            curve = BShotCurve(curve)
        if beta is not None:
            curve = curve.truncated(beta)
        report["beta"] = curve.beta
        report["LCA_beta"] = lca(curve)
    if T < 2:
        report["note"] = "F_T and LTR need at least 2 tasks"
    return report


def format_report(report: dict) -> str:
    lines = []
    for key in ("A_T", "F_T", "LTR", "LCA_beta"):
        if key not in report:
            continue
        v = report[key]
        label = f"LCA_{report['beta']}" if key == "LCA_beta" else key
        lines.append(f"{label}: " + ("n/a" if v is None else f"{v:.{DECIMALS}f}"))
    return "\n".join(lines) + "\n"
