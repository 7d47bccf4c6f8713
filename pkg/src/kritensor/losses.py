"""Loss functions mapping classifier logits to a nonnegative damage value.

Indicator losses are oriented so that larger means worse: ``misclassification``
is the error rate, the complement of the accuracy indicator.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, DataError
from .models import cross_entropy

KINDS = ("class_change", "misclassification", "severity", "cross_entropy")
REFERENCES = ("clean_prediction", "true_label")


@dataclass(frozen=True, eq=False)
class LossSpec:
    name: str
    kind: str
    reference: str | None = None
    cost_matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"loss {self.name!r}: unknown kind {self.kind!r}")
        ref = self.reference
        if ref is None:
            ref = {"class_change": "clean_prediction", "misclassification": "true_label"}.get(self.kind)
        if self.kind in ("class_change", "misclassification"):
            if ref not in REFERENCES:
                raise ConfigError(f"loss {self.name!r}: unknown reference {ref!r}")
        object.__setattr__(self, "reference", ref)
        if self.kind == "severity":
            if self.cost_matrix is None:
                raise ConfigError(f"loss {self.name!r}: severity needs a cost matrix")
            c = np.array(self.cost_matrix, dtype=np.float64)
            if c.ndim != 2 or c.shape[0] != c.shape[1]:
                raise ConfigError(f"loss {self.name!r}: cost matrix must be square")
            if not np.all(np.isfinite(c)) or np.any(c < 0) or np.any(np.diag(c) != 0):
                raise ConfigError(f"loss {self.name!r}: cost matrix must be finite, >= 0, zero diagonal")
            c.flags.writeable = False
            object.__setattr__(self, "cost_matrix", c)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.reference is not None:
            out["reference"] = self.reference
        if self.cost_matrix is not None:
            out["cost_matrix"] = self.cost_matrix.tolist()
        return out


def load_cost_matrix_csv(path: str | Path) -> np.ndarray:
    try:
        c = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read cost matrix ({exc})") from exc
    return c


def evaluate_batch(spec: LossSpec, logits: np.ndarray, clean_class: int, true_label: int) -> np.ndarray:
    """Loss per row of ``logits`` for one sample's reference classes."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    n_c = logits.shape[1]
    for ref in (clean_class, true_label):
        if not 0 <= ref < n_c:
            raise DataError(f"reference class {ref} out of range for {n_c} classes")
    pred = np.argmax(logits, axis=1)  # first maximum wins ties
    if spec.kind == "class_change":
        ref = clean_class if spec.reference == "clean_prediction" else true_label
        return (pred != ref).astype(np.float64)
    if spec.kind == "misclassification":
        ref = true_label if spec.reference == "true_label" else clean_class
        return (pred != ref).astype(np.float64)
    if spec.kind == "severity":
        if spec.cost_matrix.shape[0] != n_c:
            raise DataError(f"cost matrix is {spec.cost_matrix.shape[0]}x{spec.cost_matrix.shape[0]}, model has {n_c} classes")
        return spec.cost_matrix[true_label, pred]
    return cross_entropy(logits, np.full(len(logits), true_label))


def evaluate(spec: LossSpec, logits: np.ndarray, clean_class: int, true_label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise DataError("evaluate takes a single logits vector")
    return float(evaluate_batch(spec, logits[None, :], clean_class, true_label)[0])
