"""Central finite-difference gradient checks (float64 only)."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .errors import NumericError
from .tensor import ORACLE, Parameter, Tape, Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def _scalar(f, *args) -> float:
    val = f(*args)
    val = float(val.item() if isinstance(val, Tensor) else val)
    if not np.isfinite(val):
        raise NumericError(f"function value is not finite: {val}")
    return val


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. every entry of ``arr`` (mutated then restored)."""
    g = np.zeros_like(arr, dtype=ORACLE)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f)
        flat[i] = orig - h
        fm = _scalar(f)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def finite_diff_gradcheck(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between tape gradient and central differences of ``f`` at ``x``."""
    x = Tensor(np.array(x, dtype=ORACLE), requires_grad=True)
    with Tape() as tape:
        y = f(x)
    if not np.isfinite(y.data).all():
        raise NumericError("function value is not finite")
    if y.requires_grad:
        backward(tape, y)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    probe = Tensor(x.data.copy(), dtype=ORACLE)
    numeric = numeric_grad(lambda: f(probe), probe.data, h)
    return float(relative_error(analytic, numeric).max(initial=0.0))


def check_parameters(loss_fn: Callable[[], Tensor], params: Iterable[Parameter],
                     inputs: Iterable[Tensor] = (), h: float = 1e-5,
                     max_entries: Optional[int] = None) -> dict[str, float]:
    """Per-tensor max relative error for every parameter and marked input.

    ``loss_fn`` is re-evaluated with each coordinate nudged; it must be pure.
    Inputs are reported under ``input[i]``. ``max_entries`` subsamples large
    tensors deterministically (first entries) to bound runtime.
    """
    params = list(params)
    inputs = list(inputs)
    for p in params:
        p.zero_grad()
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    report = {}
    targets = [(p.name, p) for p in params] + [(f"input[{i}]", t) for i, t in enumerate(inputs)]
    for name, t in targets:
        if t.dtype != ORACLE:
            raise NumericError(f"{name}: gradient checks need float64 tensors")
        analytic = t.grad.reshape(-1)
        flat = t.data.reshape(-1)
        n = flat.size if max_entries is None else min(flat.size, max_entries)
        worst = 0.0
        for i in range(n):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(loss_fn)
            flat[i] = orig - h
            fm = _scalar(loss_fn)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            worst = max(worst, float(relative_error(analytic[i], num)))
        report[name] = worst
    return report
