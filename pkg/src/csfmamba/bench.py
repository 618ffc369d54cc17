from __future__ import annotations

import timeit

import numpy as np

from .ssm import ScanSteps, discretize, scan_oracle, selective_scan


def random_instance(rng, L, d_inner, state_size):
    x = rng.standard_normal((L, d_inner))
    A = -np.exp(rng.uniform(-1, 1, size=(d_inner, state_size)))
    delta = rng.uniform(0.05, 1.0, size=(L, d_inner))
    B = rng.standard_normal((L, state_size))
    C = rng.standard_normal((L, state_size))
    Abar, Bbar = discretize(A, B, delta)
    return x, ScanSteps(Abar, Bbar, C, delta), rng.standard_normal(d_inner)


def _best_times(fns, repeats):
    """Per-call seconds for each fn, best of ``repeats`` interleaved rounds.

    Every round times all fns back to back, so slow periods from other load
    hit neighbouring lengths alike; load only adds time, so the minimum is
    the stable estimate.
    """
    timers = [timeit.Timer(fn) for fn in fns]
    numbers = [t.autorange()[0] for t in timers]
    best = [np.inf] * len(fns)
    for _ in range(repeats):
        for i, (t, n) in enumerate(zip(timers, numbers)):
            best[i] = min(best[i], t.timeit(n) / n)
    return best


def bench_scan(lengths, repeats: int = 3, d_inner: int = 4, state_size: int = 8, seed: int = 0,
               oracle: bool = True):
    """Best-of-repeats wall-clock of selective_scan (and the quadratic oracle) per length.

    Each row carries ``*_ratio`` = time(L) / time(previous L).
    """
    lengths = list(lengths)
    if lengths != sorted(lengths):
        raise ValueError("lengths must be ascending")
    rng = np.random.default_rng(seed)
    cases = [random_instance(rng, L, d_inner, state_size) for L in lengths]
    scan_fns = [lambda c=c: selective_scan(*c) for c in cases]
    for fn in scan_fns:
        fn()  # warm-up
    scan_s = _best_times(scan_fns, repeats)
    oracle_s = [None] * len(lengths)
    if oracle:
        oracle_s = _best_times([lambda c=c: scan_oracle(*c, limit=False) for c in cases], repeats)
    rows = []
    for i, L in enumerate(lengths):
        row = {"length": L, "scan_s": scan_s[i], "oracle_s": oracle_s[i], "scan_ratio": None, "oracle_ratio": None}
        if i:
            row["scan_ratio"] = scan_s[i] / scan_s[i - 1]
            if oracle:
                row["oracle_ratio"] = oracle_s[i] / oracle_s[i - 1]
        rows.append(row)
    return rows


def format_table(rows, sep=","):
    cols = ["length", "scan_s", "oracle_s", "scan_ratio", "oracle_ratio"]
    lines = [sep.join(cols)]
    for r in rows:
        lines.append(sep.join("" if r[c] is None else (str(r[c]) if c == "length" else f"{r[c]:.6g}")
                              for c in cols))
    return "\n".join(lines)
