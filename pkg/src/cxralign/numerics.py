"""Dense float64 numeric kernel: matrices, row ops, softmax/KL, gradient checking.

Everything downstream (similarity matrices, soft labels, losses, encoder
forward/backward passes) is built on these few operations.  All arrays are
2-D row-major ``float64``; functions are pure and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

__all__ = [
    "Matrix",
    "GradCheckReport",
    "VerificationError",
    "as_matrix",
    "matmul",
    "l2_normalize_rows",
    "softmax_rows",
    "kl_rows",
    "finite_diff_check",
]

Matrix = np.ndarray


class VerificationError(RuntimeError):
    """Raised when a gradient check cannot be trusted (e.g. flaky loss_fn)."""


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce to a contiguous 2-D float64 array and validate finiteness."""
    m = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with shape validation; output checked finite."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise ValueError("matmul produced non-finite entries")
    return out


def l2_normalize_rows(m: Matrix) -> Tuple[Matrix, np.ndarray]:
    """Normalize each row to unit Euclidean norm.

    Zero rows are returned unchanged; the second return value is a boolean
    mask flagging them so callers can decide how to react.
    """
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return m / safe[:, None], zero


def softmax_rows(logits: Matrix, temperature: float = 1.0) -> Matrix:
    """Row-wise softmax of ``logits / temperature``.

    Stabilized by subtracting the row maximum before exponentiation, which
    leaves the result unchanged mathematically (the softmax is invariant
    under adding a constant to a whole row).
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = as_matrix(logits) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def kl_rows(target: Matrix, probs: Matrix) -> float:
    """Mean over rows of KL(target_row || probs_row).

    Uses the convention 0*ln(0) = 0.  ``target`` rows must sum to 1 and
    ``probs`` must be strictly positive wherever ``target`` is positive,
    otherwise the divergence is undefined.
    """
    t = as_matrix(target)
    p = as_matrix(probs, rows=t.shape[0], cols=t.shape[1])
    support = t > 0.0
    if np.any(p[support] <= 0.0):
        raise ValueError("probs has a zero or negative entry on the target support")
    ratio = np.ones_like(t)
    ratio[support] = t[support] / p[support]
    per_row = np.where(support, t * np.log(ratio), 0.0).sum(axis=1)
    return float(per_row.mean())


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference gradient verification."""

    max_rel_error: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def finite_diff_check(
    loss_fn: Callable[[Dict[str, Matrix]], float],
    params: Dict[str, Matrix],
    analytic: Dict[str, Matrix],
    epsilon: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    For every entry of every parameter array, perturbs by +/- epsilon,
    evaluates ``loss_fn`` and forms (f(x+e) - f(x-e)) / (2e).  The relative
    error uses the denominator max(|analytic|, |numeric|, 1e-8).  A flaky
    (non-deterministic) loss function is detected by evaluating the base
    point twice and rejected.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    work = {name: np.array(p, dtype=np.float64, copy=True) for name, p in params.items()}
    base = float(loss_fn(work))
    if float(loss_fn(work)) != base:
        raise VerificationError("loss_fn is not deterministic at the base point")

    worst = GradCheckReport(0.0, "", (), 0.0, 0.0, 0)
    n_checked = 0
    for name, p in work.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != p.shape:
            raise ValueError(f"analytic gradient shape mismatch for {name}")
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + epsilon
            f_plus = float(loss_fn(work))
            p[idx] = orig - epsilon
            f_minus = float(loss_fn(work))
            p[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(grad[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            n_checked += 1
            if rel > worst.max_rel_error:
                worst = GradCheckReport(rel, name, idx, a, numeric, 0)
            it.iternext()
    worst.n_checked = n_checked
    return worst
