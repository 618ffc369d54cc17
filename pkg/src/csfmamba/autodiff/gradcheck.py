"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tape, Tensor, backward, no_record


class NonDeterministicFunction(RuntimeError):
    pass


@dataclass
class TensorCheck:
    name: str
    coords: int
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tolerance: float
    eps: float
    tensors: list[TensorCheck] = field(default_factory=list)
    retries: int = 0

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    @property
    def worst(self) -> TensorCheck | None:
        return max(self.tensors, key=lambda t: t.max_rel_error, default=None)


def _named(params):
    if isinstance(params, ParamStore):
        return list(params)
    if isinstance(params, dict):
        return list(params.items())
    out = []
    for i, p in enumerate(params):
        if isinstance(p, tuple):
            out.append(p)
        else:
            out.append((p.name or f"input{i}", p))
    return out


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def finite_diff_check(fn: Callable[[], Tensor], params, eps: float = 1e-5, tolerance: float = 1e-4,
                      samples: int = 64, seed: int = 0, kink_retries: int = 2,
                      numeric_dtype=np.float64) -> GradCheckReport:
    """Compare tape gradients of ``fn()`` with central differences.

    ``fn`` must rebuild its value from the current contents of ``params``.
    Tensors with more than ``samples`` entries are checked on a random
    subset of ``samples`` coordinates. A coordinate that fails at ``eps`` is
    retried with eps/10, eps/100 (``kink_retries`` times): a central
    difference straddling a ReLU kink is wrong at every step size above the
    kink distance, while a wrong backward rule stays wrong at all of them.

    The analytic side always runs in 64-bit. ``numeric_dtype=np.longdouble``
    evaluates the perturbed forward passes in extended precision, which
    moves the round-off floor of the differences from ~1e-11 to ~1e-14.
    """
    named = _named(params)
    for _, p in named:
        if p.data.dtype != np.float64:
            raise TypeError("finite_diff_check needs 64-bit tensors")
        p.data = np.ascontiguousarray(p.data)
        p.grad = None

    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    analytic = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in named}

    def f():
        with no_record():
            return fn().data.reshape(()).astype(numeric_dtype)

    originals = [p.data for _, p in named]
    for _, p in named:
        p.data = p.data.astype(numeric_dtype)
    try:
        base, again = f(), f()
        if base != again:
            raise NonDeterministicFunction(f"two evaluations disagree: {base!r} vs {again!r}")
        report = _numeric_pass(named, analytic, f, eps, tolerance, samples, seed, kink_retries)
    finally:
        for (_, p), orig in zip(named, originals):
            p.data = orig
    return report


def _numeric_pass(named, analytic, f, eps, tolerance, samples, seed, kink_retries):
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance, eps=eps)
    for name, p in named:
        flat = p.data.reshape(-1)
        if flat.size > samples:
            idx = np.sort(rng.choice(flat.size, size=samples, replace=False))
        else:
            idx = np.arange(flat.size)
        worst = TensorCheck(name, len(idx), 0.0, (), 0.0, 0.0)
        for i in idx:
            a = float(analytic[name].reshape(-1)[i])
            h = eps
            err, num = np.inf, 0.0
            for attempt in range(kink_retries + 1):
                orig = flat[i]
                flat[i] = orig + h
                fp = f()
                flat[i] = orig - h
                fm = f()
                flat[i] = orig
                n = float((fp - fm) / (2 * h))
                e = rel_error(a, n)
                if e < err:
                    err, num = e, n
                if err <= tolerance:
                    break
                report.retries += 1
                h /= 10
            if err > worst.max_rel_error or not worst.worst_index:
                worst = TensorCheck(name, len(idx), err, tuple(np.unravel_index(i, p.shape)), a, num)
        report.tensors.append(worst)
    return report
