"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, gradients, no_grad

# relative tolerance of the h^2 scaling test, and the roundoff allowance in units of eps * |f|
SMOOTH_RTOL = 0.1
ROUNDOFF_ULPS = 64.0


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


@dataclass
class GradCheckReport:
    worst: float  # max relative error over the probes that were kept
    checked: int
    kinks: int  # probes dropped because the step straddled a non-differentiable point


def _straddles_kink(f, x_flat, i, h, f0, fp, fm) -> bool:
    """Whether ``f`` fails to be smooth on ``[x - h, x + h]`` along coordinate ``i``.

    The second difference ``f(x+h) - 2 f(x) + f(x-h)`` of a smooth function scales
    as ``h^2``; a ReLU or max switch inside the interval breaks that scaling at
    ``h/2`` or ``h/4``.  Only values of ``f`` are used, never the gradient being
    checked.
    """
    orig = x_flat[i]
    second = [fp - 2.0 * f0 + fm]
    for k in (2.0, 4.0):
        x_flat[i] = orig + h / k
        p = float(f().data)
        x_flat[i] = orig - h / k
        m = float(f().data)
        x_flat[i] = orig
        second.append((p - 2.0 * f0 + m) * k * k)
    noise = ROUNDOFF_ULPS * np.finfo(np.float64).eps * max(abs(f0), abs(fp), abs(fm)) * 16.0
    return any(abs(second[0] - s) > SMOOTH_RTOL * abs(second[0]) + noise for s in second[1:])


def grad_check_report(fn: Callable[[], Tensor], tensors: Sequence[Tensor], fd_step: float = 1e-4,
                      max_entries: int | None = None, rng: np.random.Generator | None = None,
                      exclude_kinks: bool = False) -> GradCheckReport:
    """Compare backprop with central differences, scalar by scalar.

    ``fn`` rebuilds the scalar output from the current contents of ``tensors``.
    With ``max_entries`` set, each tensor is probed at that many randomly chosen
    scalars instead of all of them.  With ``exclude_kinks`` a probe whose step
    straddles a ReLU or max switch (see ``_straddles_kink``) is dropped and
    replaced by another scalar; this costs four extra evaluations per probe.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs double-precision tensors")
    analytic = gradients(fn(), tensors)
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(0.0, 0, 0)
    with no_grad():
        f0 = float(fn().data) if exclude_kinks else 0.0
        for t, ga in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            if not np.shares_memory(flat, t.data):
                raise ValueError("grad_check needs contiguous tensors")
            want = flat.size if max_entries is None else min(max_entries, flat.size)
            order = np.arange(flat.size) if max_entries is None or flat.size <= max_entries \
                else rng.permutation(flat.size)
            kept = 0
            for i in order:
                if kept == want:
                    break
                orig = flat[i]
                flat[i] = orig + fd_step
                fp = float(fn().data)
                flat[i] = orig - fd_step
                fm = float(fn().data)
                flat[i] = orig
                fd = (fp - fm) / (2.0 * fd_step)
                if exclude_kinks and _straddles_kink(fn, flat, i, fd_step, f0, fp, fm):
                    report.kinks += 1
                    continue
                kept += 1
                report.worst = max(report.worst, relative_error(fd, float(ga.reshape(-1)[i])))
            report.checked += kept
    return report


def grad_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], fd_step: float = 1e-4,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               exclude_kinks: bool = False) -> float:
    """Max relative error between backprop and central differences (see ``grad_check_report``)."""
    return grad_check_report(fn, tensors, fd_step, max_entries, rng, exclude_kinks).worst
