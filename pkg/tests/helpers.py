"""Shared test oracles, kept independent of the library's own machinery."""

import numpy as np


def numeric_grad(f, args, i, h=1e-6):
    """Central-difference gradient of scalar f(*args) w.r.t. args[i]."""
    args = [np.array(a, dtype=np.float64) for a in args]
    base = args[i]
    g = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = base[idx]
        base[idx] = orig + h
        fp = f(*args)
        base[idx] = orig - h
        fm = f(*args)
        base[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(np.max(np.abs(want)), 1e-8)
    return np.max(np.abs(got - want)) / scale
