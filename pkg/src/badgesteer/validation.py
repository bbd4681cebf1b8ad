"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np


def as_generator(random_state):
    """Accept None, an int seed, or a numpy Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def check_counts_matrix(X):
    """Coerce to an (n_users, n_days) int64 array of nonnegative counts."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D count matrix, got ndim={X.ndim}")
    if X.size == 0:
        raise ValueError("empty count matrix")
    if not np.issubdtype(X.dtype, np.number):
        raise ValueError("counts must be numeric")
    Xi = X.astype(np.int64)
    if np.any(np.asarray(X, dtype=np.float64) != Xi):
        raise ValueError("counts must be integers")
    if np.any(Xi < 0):
        raise ValueError("counts must be nonnegative")
    return Xi


def check_weekdays(weekdays, n_users):
    weekdays = np.asarray(weekdays, dtype=np.int64)
    if weekdays.shape != (n_users,):
        raise ValueError(f"weekdays must have shape ({n_users},), got {weekdays.shape}")
    if np.any((weekdays < 0) | (weekdays > 6)):
        raise ValueError("weekday values must be in 0..6")
    return weekdays


def check_proportions(fractions, tol=1e-9):
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0):
        raise ValueError("group proportions must be nonnegative")
    if abs(fractions.sum() - 1.0) > tol:
        raise ValueError(f"group proportions must sum to 1 within {tol}, got {float(fractions.sum())!r}")
    return fractions


def unpack_dataset(X, weekdays=None):
    """Accept either a list of ActionTrajectory or a raw count matrix.

    Returns (counts (n, D) int64, weekdays (n,) int64, user_ids list[str],
    day0_index or None).  Raw matrices without weekdays default to weekday 0
    for every user.
    """
    from .model import ActionTrajectory

    if isinstance(X, np.ndarray) or (isinstance(X, (list, tuple)) and len(X) > 0
                                     and not isinstance(X[0], ActionTrajectory)):
        counts = check_counts_matrix(X)
        n = counts.shape[0]
        if weekdays is None:
            weekdays = np.zeros(n, dtype=np.int64)
        return counts, check_weekdays(weekdays, n), [f"u{i:05d}" for i in range(n)], None

    trajs = list(X)
    if not trajs:
        raise ValueError("empty dataset")
    if weekdays is not None:
        raise ValueError("weekdays are taken from trajectories; do not pass both")
    d = len(trajs[0].counts)
    day0 = trajs[0].day0_index
    for t in trajs:
        if len(t.counts) != d or t.day0_index != day0:
            raise ValueError("trajectories must share n_days and day0_index")
    counts = np.stack([np.asarray(t.counts, dtype=np.int64) for t in trajs])
    wd = np.array([t.weekday_of_day0 for t in trajs], dtype=np.int64)
    ids = [t.user_id for t in trajs]
    return counts, wd, ids, day0
