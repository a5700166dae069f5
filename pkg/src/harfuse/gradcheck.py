"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor, branch_probe, no_grad, precision


class DeterminismError(RuntimeError):
    """The function under test returned different values for identical inputs."""


@dataclass(frozen=True)
class GradCheckResult:
    max_error: float
    checked: int  # elements compared
    kinks: int  # elements skipped because the stencil crossed a non-smooth point


def _value(f: Callable[[], Tensor]) -> tuple[float, bytes]:
    with no_grad(), branch_probe() as probe:
        out = f()
    return float(np.float64(out.data.reshape(-1)[0])), probe.signature()


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | list[Tensor],
    h: float = 1e-3,
    dtype=np.float64,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` takes no arguments and returns a scalar loss built from
    ``params``.  The error per element is
    ``|analytic - numeric| / max(1, |numeric|)``.  See
    :func:`grad_check_detailed` for the kink rule and dtype handling.
    """
    return grad_check_detailed(f, params, h, dtype).max_error


def grad_check_detailed(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | list[Tensor],
    h: float = 1e-3,
    dtype=np.float64,
) -> GradCheckResult:
    """Like :func:`grad_check` but also reports how many elements were compared.

    Both sides are evaluated with tensors promoted to ``dtype`` (float64
    by default: float32 central differences at ``h=1e-3`` carry roundoff
    of the same order as the tolerance).  An element is skipped when
    ``f(x + h)`` or ``f(x - h)`` takes a different branch of some relu,
    clip, abs or log floor than ``f(x)``: there the difference quotient
    averages two one-sided slopes and says nothing about the gradient.
    Parameter data is restored afterwards; grads are left as the
    analytic values, in parameter dtype.
    """
    tensors = list(params.values()) if isinstance(params, Mapping) else list(params)
    saved = [t.data for t in tensors]
    try:
        with precision(dtype):
            for t in tensors:
                t.data = t.data.astype(dtype)
            return _check(f, tensors, h)
    finally:
        for t, data in zip(tensors, saved):
            if t.grad is not None:
                t.grad = t.grad.astype(data.dtype)
            t.data = data


def _check(f, tensors, h):
    cast = np.dtype(tensors[0].data.dtype).type if tensors else np.float64
    (first, branches), (second, _) = _value(f), _value(f)
    if first != second and not (np.isnan(first) and np.isnan(second)):
        raise DeterminismError(f"f() returned {first!r} then {second!r}")

    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss, tensors)
    analytic = [t.grad.copy() for t in tensors]

    worst, checked, kinks = 0.0, 0, 0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            up = cast(orig + cast(h))
            down = cast(orig - cast(h))
            flat[i] = up
            fp, bp = _value(f)
            flat[i] = down
            fm, bm = _value(f)
            flat[i] = orig
            if bp != branches or bm != branches:
                kinks += 1
                continue
            numeric = (fp - fm) / (float(up) - float(down))
            err = abs(float(gflat[i]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
            checked += 1
    return GradCheckResult(worst, checked, kinks)
