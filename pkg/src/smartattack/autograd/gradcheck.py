"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def relative_error(a, n, floor=1e-8):
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(floor, np.abs(a) + np.abs(n))


def fd_resolution(value, h) -> float:
    """Absolute noise level of a central difference of a function near ``value``.

    Rounding in two evaluations of size |f| leaves about eps*|f|/h of error; the
    factor 64 covers cancellation inside the evaluation.
    """
    return 64.0 * np.finfo(np.float64).eps * max(1.0, abs(float(value))) / h


def analytic_gradient(fn, point, return_value=False):
    x = Tensor(point, requires_grad=True)
    out = fn(x)
    value = float(out.data)
    backward(out)
    grad = np.array(x.grad) if x.grad is not None else np.zeros_like(x.data)
    return (grad, value) if return_value else grad


def numeric_gradient(fn, point, h=1e-5, batch_fn=None, chunk=512, coords=None):
    """Coordinate-wise central differences.

    ``batch_fn`` maps a stack (N, *shape) of points to N values; when given it is
    used to evaluate many perturbed copies at once. ``coords`` (flat indices)
    restricts the work to those entries; the others are left as NaN.
    """
    point = np.asarray(point, dtype=np.float64)
    flat = point.ravel()
    n = flat.size
    todo = np.arange(n) if coords is None else np.unique(np.asarray(coords, dtype=np.intp))
    grad = np.full(n, np.nan)
    if batch_fn is None:
        for i in todo:
            xp = flat.copy()
            xp[i] += h
            xm = flat.copy()
            xm[i] -= h
            fp = float(fn(Tensor(xp.reshape(point.shape))).data)
            fm = float(fn(Tensor(xm.reshape(point.shape))).data)
            grad[i] = (fp - fm) / (2 * h)
        return grad.reshape(point.shape)
    for start in range(0, len(todo), chunk):
        idx = todo[start:start + chunk]
        stack = np.repeat(flat[None], 2 * len(idx), axis=0)
        stack[np.arange(len(idx)), idx] += h
        stack[len(idx) + np.arange(len(idx)), idx] -= h
        vals = np.asarray(batch_fn(stack.reshape((-1,) + point.shape)), dtype=np.float64)
        grad[idx] = (vals[:len(idx)] - vals[len(idx):]) / (2 * h)
    return grad.reshape(point.shape)


def grad_check(fn, point, h=1e-5, tolerance=1e-5, batch_fn=None, coords=None, refine=2):
    """Compare the analytic gradient of scalar ``fn`` at ``point`` with central differences.

    The error per entry is |a - n| / (|a| + |n|). Entries too small for the
    difference quotient to resolve at ``tolerance`` are measured against that
    resolution instead, so round-off in the oracle is not reported as a gradient bug.
    With ``coords`` only those flat entries are compared.

    Entries that fail are re-estimated with steps h/10, h/100, ... (``refine``
    times) and keep their best agreement: a ReLU kink within h of the point
    spoils one step size, a wrong gradient spoils all of them.
    """
    point = np.asarray(point, dtype=np.float64)
    analytic, value = analytic_gradient(fn, point, return_value=True)
    numeric = numeric_gradient(fn, point, h=h, batch_fn=batch_fn, coords=coords)

    def errors(num, step):
        floor = max(1e-8, fd_resolution(value, step) / tolerance)
        rel = relative_error(analytic, num, floor)
        return np.where(np.isnan(num), 0.0, rel)

    rel = errors(numeric, h)
    step = h
    for _ in range(refine):
        bad = np.flatnonzero(rel.ravel() >= tolerance)
        if bad.size == 0:
            break
        step /= 10.0
        again = numeric_gradient(fn, point, h=step, batch_fn=batch_fn, coords=bad)
        rel2 = errors(again, step)
        better = rel2 < rel
        better &= ~np.isnan(again)
        numeric = np.where(better, again, numeric)
        rel = np.where(better, rel2, rel)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return GradCheckReport(float(rel.max()) if rel.size else 0.0, worst, analytic, numeric,
                           tolerance)
