"""Threshold-crossing analysis for badge awards.

A user's cumulative action count is a renewal-style partial-sum process;
the badge day is the first day the running total reaches the threshold.
Conditioning on that day size-biases the day's count, so the centered mean
curve shows a bump at day 0 even when nothing about the user's behavior
changed.  This module computes the bump exactly (visit-probability
recurrence, epoch-matrix cross-check, closed-form limits) and by Monte
Carlo, plus the centered-curve reduction used to see it in data.

Day-count distributions are finite DiscreteDists; a WeeklySchedule cycles
seven (or T) of them.  Supports are integers because action counts are.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import Counter
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .validation import as_generator


@dataclass(frozen=True)
class DiscreteDist:
    """Finite distribution over distinct nonnegative integers."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support)
        probs = np.asarray(self.probs, dtype=np.float64)
        if support.ndim != 1 or probs.shape != support.shape or support.size == 0:
            raise ValueError("support and probs must be matching non-empty 1-D arrays")
        if not np.issubdtype(support.dtype, np.integer):
            if not np.all(support == np.floor(support)):
                raise ValueError("support values must be integers")
        support = support.astype(np.int64)
        if np.any(support < 0):
            raise ValueError("support values must be nonnegative")
        if np.unique(support).size != support.size:
            raise ValueError("support values must be distinct")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0.0):
            raise ValueError("probs must be finite and strictly positive")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ValueError("probs must sum to 1 within 1e-12")
        order = np.argsort(support)
        object.__setattr__(self, "support", support[order])
        object.__setattr__(self, "probs", probs[order])

    @classmethod
    def constant(cls, value):
        return cls(np.array([value]), np.array([1.0]))

    @classmethod
    def uniform(cls, values):
        values = np.asarray(values)
        return cls(values, np.full(values.shape, 1.0 / values.size))

    def mean(self):
        return float(self.support @ self.probs)

    def second_moment(self):
        return float((self.support.astype(np.float64) ** 2) @ self.probs)

    def var(self):
        m = self.mean()
        return self.second_moment() - m * m

    def zero_mass(self):
        at_zero = self.support == 0
        return float(self.probs[at_zero][0]) if at_zero.any() else 0.0

    @property
    def max_support(self):
        return int(self.support[-1])


@dataclass(frozen=True)
class WeeklySchedule:
    """T day-count distributions cycled in order (slot 0, 1, ..., T-1, 0, ...)."""

    slots: tuple

    def __post_init__(self):
        slots = tuple(self.slots)
        if not slots:
            raise ValueError("schedule needs at least one slot")
        if not all(isinstance(s, DiscreteDist) for s in slots):
            raise ValueError("schedule slots must be DiscreteDists")
        if all(s.mean() == 0.0 for s in slots):
            raise ValueError("schedule cannot have all mass at zero in every slot")
        object.__setattr__(self, "slots", slots)

    @property
    def n_slots(self):
        return len(self.slots)

    def slot_means(self):
        return np.array([s.mean() for s in self.slots])

    def week_mean(self):
        return float(sum(s.mean() for s in self.slots))


def _nonzero_gcd(dists):
    g = 0
    for d in dists:
        for v in d.support:
            if v > 0:
                g = math.gcd(g, int(v))
    if g == 0:
        raise ValueError("all-zero support has no gcd reduction")
    return g


def _divide_support(dist, g):
    return DiscreteDist(dist.support // g, dist.probs)


def gcd_reduce(obj):
    """Divide all support values by their common gcd g; returns (reduced, g).

    Crossing quantities computed on the reduced scale rescale back by g
    (a crossing draw of y on the reduced scale is g*y on the original).
    Accepts a DiscreteDist or a WeeklySchedule; zeros in the support are
    preserved and ignored by the gcd.
    """
    if isinstance(obj, WeeklySchedule):
        g = _nonzero_gcd(obj.slots)
        return WeeklySchedule(tuple(_divide_support(s, g) for s in obj.slots)), g
    g = _nonzero_gcd([obj])
    return _divide_support(obj, g), g


def visit_probabilities(dist, m_max):
    """Expected number of process visits to each value 0..m_max.

    Renewal recurrence with a unit source at 0; mass at zero makes the
    process linger, contributing the 1/(1 - Pr[X=0]) factor to every entry
    (including m=0, where the walk starts).  For zero-free distributions
    the entries are exactly the probabilities of ever hitting m.  Inner
    sums use Kahan compensation so long recurrences stay at 1e-15 scale
    error.
    """
    if m_max < 0:
        raise ValueError("m_max must be nonnegative")
    if dist.mean() <= 0.0:
        raise ValueError("distribution must have positive mean")
    alpha = dist.zero_mass()
    active = 1.0 - alpha
    support = [int(v) for v in dist.support if v > 0]
    probs = [float(p) for v, p in zip(dist.support, dist.probs) if v > 0]
    p = np.zeros(m_max + 1)
    for m in range(m_max + 1):
        total = 1.0 if m == 0 else 0.0
        comp = 0.0
        for j, pj in zip(support, probs):
            if j > m:
                break
            term = pj * p[m - j] - comp
            candidate = total + term
            comp = (candidate - total) - term
            total = candidate
        p[m] = total / active
    return p


def epoch_matrix(dist):
    """M x M right-stochastic matrix advancing visit values one epoch.

    Stacking M consecutive visit values (M = max support) into a block,
    each block is a fixed linear image of the previous one; row r gives
    the weights of value r of the new block on the old block's entries.
    Requires a zero-free, gcd-reduced distribution (gcd_reduce first and
    condition away zero mass); raises if the matrix fails the positivity
    (primitivity) power test, which the reductions are meant to preclude.
    """
    if dist.zero_mass() > 0.0:
        raise ValueError("epoch matrix needs a zero-free distribution")
    _, g = gcd_reduce(dist)
    if g != 1:
        raise ValueError("epoch matrix needs a gcd-reduced distribution (g=1)")
    m_top = dist.max_support
    pmf = np.zeros(m_top + 1)
    pmf[dist.support] = dist.probs
    a = np.zeros((m_top, m_top))
    # Row r-1 expresses p_{kM+r} over the previous block; references to the
    # current block (j < r) substitute the already-expanded rows.
    for r in range(1, m_top + 1):
        row = np.zeros(m_top)
        for j in range(1, m_top + 1):
            if pmf[j] == 0.0:
                continue
            idx = r - j
            if idx >= 1:
                row += pmf[j] * a[idx - 1]
            else:
                row[m_top + idx - 1] += pmf[j]
        a[r - 1] = row
    if np.max(np.abs(a.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("epoch matrix rows failed to sum to 1")
    wielandt = m_top * m_top - 2 * m_top + 2
    if np.any(np.linalg.matrix_power(a, wielandt) <= 0.0):
        raise ValueError("epoch matrix is not primitive")
    return a


def epoch_limit(dist):
    """Asymptotic visit value via the epoch matrix; returns (limit, g).

    The limit applies on the gcd lattice: visit values at multiples of g
    converge to it (and to g/mean by the renewal limit).  Independent of
    the recurrence in visit_probabilities, which it cross-checks.
    """
    reduced, g = gcd_reduce(dist)
    alpha = reduced.zero_mass()
    if alpha > 0.0:
        keep = reduced.support > 0
        reduced = DiscreteDist(reduced.support[keep], reduced.probs[keep] / (1.0 - alpha))
    a = epoch_matrix(reduced)
    values, vectors = np.linalg.eig(a.T)
    lead = int(np.argmax(values.real))
    if abs(values[lead] - 1.0) > 1e-10:
        raise ValueError("epoch matrix has no unit Perron eigenvalue")
    pi = vectors[:, lead].real
    pi = pi / pi.sum()
    return float(pi[-1]) / (1.0 - alpha), g


def expected_bump_limit(dist):
    """Limiting mean count on the crossing day: E[X^2]/E[X] (= E[X] + Var/E[X])."""
    m = dist.mean()
    if m <= 0.0:
        raise ValueError("distribution must have positive mean")
    return dist.second_moment() / m


def weekly_bump_limit(schedule):
    """Limiting crossing-day mean for a cycled schedule: sum E[(X_t)^2] / sum E[X_t]."""
    means = schedule.slot_means()
    denom = float(means.sum())
    if denom <= 0.0:
        raise ValueError("schedule must have positive total mean")
    num = sum(s.second_moment() for s in schedule.slots)
    return num / denom


def crossing_distribution_exact(dist, threshold):
    """Exact distribution of the crossing-day draw at a finite threshold.

    Pr[Y = k] = Pr[X = k] * sum of visit values over the k positions just
    below the threshold: the walk must sit within reach and the crossing
    draw must cover the gap.  Valid for any finite dist with positive
    mean (zero mass enters through the visit values).
    """
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    visits = visit_probabilities(dist, threshold - 1)
    ks, probs = [], []
    for k, pk in zip(dist.support, dist.probs):
        k = int(k)
        if k == 0:
            continue
        lo = max(threshold - k, 0)
        mass = float(pk) * float(np.sum(visits[lo:threshold]))
        if mass > 0.0:
            ks.append(k)
            probs.append(mass)
    total = float(sum(probs))
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"crossing distribution mass {total!r} is not 1")
    return DiscreteDist(np.array(ks), np.array(probs) / total)


@dataclass(frozen=True)
class CrossingSample:
    """Empirical crossing-day draws: values, counts, and crossing slots."""

    y_support: np.ndarray
    y_counts: np.ndarray
    slot_counts: np.ndarray
    n_trials: int
    threshold: int
    phase: str

    @property
    def mean(self):
        return float((self.y_support * self.y_counts).sum() / self.n_trials)

    @property
    def stderr(self):
        if self.n_trials < 2:
            return float("inf")
        m = self.mean
        dev = self.y_support.astype(np.float64) - m
        var = float((self.y_counts * dev * dev).sum() / (self.n_trials - 1))
        return math.sqrt(var / self.n_trials)

    def to_dist(self):
        return DiscreteDist(self.y_support, self.y_counts / self.n_trials)


def _as_schedule(obj):
    if isinstance(obj, WeeklySchedule):
        return obj
    if isinstance(obj, DiscreteDist):
        if obj.mean() <= 0.0:
            raise ValueError("distribution must have positive mean")
        return WeeklySchedule((obj,))
    raise ValueError("expected a DiscreteDist or WeeklySchedule")


def _phase_period(schedule):
    """gcd of the achievable week-sum values; the crossing law is periodic
    in the threshold with this period."""
    sums = {0}
    for slot in schedule.slots:
        sums = {s + int(v) for s in sums for v in slot.support}
    g = 0
    for s in sums:
        g = math.gcd(g, s)
    return max(g, 1)


def _mc_chunk(args):
    schedule_slots, threshold, n, phase, period, rng = args
    t_slots = len(schedule_slots)
    supports = [np.asarray(s, dtype=np.int64) for s, _ in schedule_slots]
    cums = []
    for _, p in schedule_slots:
        c = np.cumsum(np.asarray(p, dtype=np.float64))
        c[-1] = 1.0
        cums.append(c)
    if phase == "stationary":
        slot = rng.integers(0, t_slots, size=n)
        cutoff = threshold + rng.integers(0, period, size=n)
    else:
        slot = np.zeros(n, dtype=np.int64)
        cutoff = np.full(n, threshold, dtype=np.int64)
    totals = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    y_out = np.zeros(n, dtype=np.int64)
    slot_out = np.zeros(n, dtype=np.int64)
    while active.any():
        for tau in range(t_slots):
            take = active & (slot == tau)
            k = int(take.sum())
            if k == 0:
                continue
            draws = supports[tau][np.searchsorted(cums[tau], rng.random(k), side="right")]
            idx = np.flatnonzero(take)
            new_totals = totals[idx] + draws
            crossed = new_totals >= cutoff[idx]
            totals[idx] = new_totals
            hit = idx[crossed]
            y_out[hit] = draws[crossed]
            slot_out[hit] = tau
            active[hit] = False
        slot = (slot + 1) % t_slots
    y_counter = Counter(y_out.tolist())
    slot_counts = np.bincount(slot_out, minlength=t_slots)
    return sorted(y_counter.items()), slot_counts


def mc_crossing(obj, threshold, trials, rng=None, phase="stationary",
                chunk_size=250_000, n_jobs=1):
    """Monte Carlo crossing-day draws for a dist or weekly schedule.

    phase="stationary" (default) starts each trial at a uniform slot and
    jitters the threshold uniformly over the week-sum gcd lattice, so the
    estimate targets the limiting crossing law independent of threshold
    residue.  phase="fixed" runs the literal process: slot 0 first, the
    exact threshold; for lattice-periodic schedules its mean genuinely
    depends on the threshold residue and need not match the limit.

    Trials are split into chunks on independent child RNG streams; results
    are invariant to n_jobs.
    """
    schedule = _as_schedule(obj)
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if phase not in ("stationary", "fixed"):
        raise ValueError(f"unknown phase {phase!r}")
    period = _phase_period(schedule) if phase == "stationary" else 1
    root = as_generator(rng)
    slots_payload = [(s.support.tolist(), s.probs.tolist()) for s in schedule.slots]
    sizes = []
    left = trials
    while left > 0:
        take = min(chunk_size, left)
        sizes.append(take)
        left -= take
    children = root.spawn(len(sizes))
    jobs = [(slots_payload, int(threshold), n, phase, period, child)
            for n, child in zip(sizes, children)]
    if n_jobs > 1 and len(jobs) > 1:
        with get_context("fork").Pool(min(n_jobs, len(jobs))) as pool:
            parts = pool.map(_mc_chunk, jobs)
    else:
        parts = [_mc_chunk(job) for job in jobs]
    y_counter = Counter()
    slot_counts = np.zeros(schedule.n_slots, dtype=np.int64)
    for items, slots in parts:
        y_counter.update(dict(items))
        slot_counts += slots
    y_support = np.array(sorted(y_counter), dtype=np.int64)
    y_counts = np.array([y_counter[v] for v in y_support], dtype=np.int64)
    return CrossingSample(y_support, y_counts, slot_counts, trials,
                          int(threshold), phase)


def convergence_knee(values, limit, tol=1e-8):
    """First index past which every entry stays within tol of the limit.

    Returns len(values) when the tail never settles; used to locate the
    exponential-convergence knee of the visit recurrence without claiming
    a rate.
    """
    values = np.asarray(values, dtype=np.float64)
    inside = np.abs(values - limit) < tol
    knee = len(values)
    for i in range(len(values) - 1, -1, -1):
        if not inside[i]:
            break
        knee = i
    return knee


def sample_schedule_counts(schedule, n_days, rng, start_slot=0, n_rows=None):
    """Draw daily counts cycling the schedule; (n_days,) or (n_rows, n_days)."""
    rng = as_generator(rng)
    single = n_rows is None
    rows = 1 if single else int(n_rows)
    if n_days < 0 or rows < 1:
        raise ValueError("n_days must be nonnegative and n_rows positive")
    out = np.zeros((rows, n_days), dtype=np.int64)
    t_slots = schedule.n_slots
    for d in range(n_days):
        slot = schedule.slots[(start_slot + d) % t_slots]
        cum = np.cumsum(slot.probs)
        cum[-1] = 1.0
        out[:, d] = slot.support[np.searchsorted(cum, rng.random(rows), side="right")]
    return out[0] if single else out


def threshold_centered_window(counts, threshold, weeks_before, weeks_after):
    """Window of 7*(before+after) days centered on the crossing day.

    Returns (window, day0_index) or None when the cumulative sum never
    reaches the threshold or the window would leave the observed range.
    """
    counts = np.asarray(counts, dtype=np.int64)
    cum = np.cumsum(counts)
    hit = np.flatnonzero(cum >= threshold)
    if hit.size == 0:
        return None
    day0 = int(hit[0])
    lo = day0 - 7 * weeks_before
    hi = day0 + 7 * weeks_after
    if lo < 0 or hi > counts.size:
        return None
    return counts[lo:hi].copy(), 7 * weeks_before


def centered_mean_curve(trajectories, labels=None, group_order=None):
    """Mean count per relative day, overall and per label group.

    Returns (relative_days, {"all": curve, label: curve, ...}).  All
    trajectories must share window length and day0_index.  Groups
    requested via group_order but empty in the data are omitted with a
    warning.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("need at least one trajectory")
    d_len = trajectories[0].counts.size
    day0 = trajectories[0].day0_index
    for t in trajectories:
        if t.counts.size != d_len or t.day0_index != day0:
            raise ValueError("trajectories must share window length and day0_index")
    matrix = np.stack([t.counts for t in trajectories]).astype(np.float64)
    rel_days = np.arange(d_len) - day0
    curves = {"all": matrix.mean(axis=0)}
    if labels is not None:
        labels = list(labels)
        if len(labels) != len(trajectories):
            raise ValueError("labels must match trajectories")
        order = group_order if group_order is not None else sorted(set(labels))
        arr = np.asarray(labels, dtype=object)
        for g in order:
            mask = arr == g
            if not mask.any():
                warnings.warn(f"group {g!r} has no members; omitted")
                continue
            curves[g] = matrix[mask].mean(axis=0)
    return rel_days, curves


def zip_day_dist(alpha, lam, tail=1e-15):
    """Finite DiscreteDist of a zero-inflated Poisson day count.

    Truncates where the remaining tail mass drops below `tail` and
    renormalizes, so the closed-form bump limits stay computable for the
    generative model's day distributions.
    """
    from .model import zip_log_pmf

    if not (0.0 < alpha <= 1.0) or lam <= 0.0:
        raise ValueError("need 0 < alpha <= 1 and lam > 0")
    k_max = int(math.ceil(lam + 40.0 * math.sqrt(lam))) + 10
    ks = np.arange(k_max + 1)
    pmf = np.exp(zip_log_pmf(ks, alpha, lam))
    cum = np.cumsum(pmf)
    enough = np.flatnonzero(1.0 - cum < tail)
    if enough.size:
        ks = ks[: enough[0] + 1]
        pmf = pmf[: enough[0] + 1]
    return DiscreteDist(ks, pmf / pmf.sum())


def write_visit_probabilities_csv(path, visits):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["m", "p_m"])
        for m, v in enumerate(visits):
            writer.writerow([m, repr(float(v))])


def write_centered_curves_csv(path, rel_days, curves):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["relative_day", "group", "mean_count"])
        for group in sorted(curves):
            for d, v in zip(rel_days, curves[group]):
                writer.writerow([int(d), group, repr(float(v))])


def write_convergence_csv(path, rows):
    """rows: iterable of (threshold, mc_mean, mc_stderr, analytic_limit)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "mc_mean", "mc_stderr", "analytic_limit"])
        for n, mean, stderr, limit in rows:
            writer.writerow([int(n), repr(float(mean)), repr(float(stderr)),
                             repr(float(limit))])
