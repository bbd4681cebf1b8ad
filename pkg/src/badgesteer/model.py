"""Core generative model of badge-aligned daily activity.

A user's window of D days is centered on the badge day (index day0_index).
Each day d has an activity probability alpha_d and an intensity lambda_d:

    alpha_d  = sigmoid(P1[weekday(d)] + S1 * beta1[d])
    lambda_d = softplus(P2[weekday(d)] + S2 * beta2[d])

P is the user's weekly preferred profile, beta the global steering deviation
(nonnegative up to and including day 0, nonpositive after), S in [0,1]^2 the
user's steering strength.  Counts are zero-inflated Poisson: inactive days
produce 0; active days draw Poisson(lambda_d), which may itself be 0.
"""

from __future__ import annotations

import json
import multiprocessing
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .validation import as_generator, check_proportions

WEEK = 7

# rates are clamped this far inside the open domain; keeps downstream logs
# finite without visibly perturbing any realistic rate
RATE_EPS = 1e-7


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ActionTrajectory:
    """Daily action counts for one user, aligned so counts[day0_index] is the
    badge day.  weekday_of_day0 uses python's convention (0=Monday)."""

    user_id: str
    counts: np.ndarray
    weekday_of_day0: int
    day0_index: int = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size == 0:
            raise ValueError("counts must be a nonempty 1-D array")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)
        if self.day0_index is None:
            object.__setattr__(self, "day0_index", counts.size // 2)
        if not 0 <= self.day0_index < counts.size:
            raise ValueError(f"day0_index {self.day0_index} outside 0..{counts.size - 1}")
        if not 0 <= self.weekday_of_day0 <= 6:
            raise ValueError("weekday_of_day0 must be in 0..6")

    @property
    def n_days(self):
        return self.counts.size


@dataclass(frozen=True)
class PreferredProfile:
    """Pre-link weekly profile: p1_week drives activity, p2_week intensity."""

    p1_week: np.ndarray
    p2_week: np.ndarray

    def __post_init__(self):
        for name in ("p1_week", "p2_week"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (WEEK,):
                raise ValueError(f"{name} must have shape ({WEEK},)")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class SteeringDeviation:
    """Global per-relative-day deviation, one channel per rate.

    Day 0 sits on the pre-badge side: entries at index <= day0_index must be
    nonnegative, entries after it nonpositive.
    """

    beta1: np.ndarray
    beta2: np.ndarray
    day0_index: int

    def __post_init__(self):
        b1 = np.asarray(self.beta1, dtype=np.float64)
        b2 = np.asarray(self.beta2, dtype=np.float64)
        if b1.ndim != 1 or b1.shape != b2.shape:
            raise ValueError("beta1 and beta2 must be 1-D with equal length")
        if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
            raise ValueError("steering deviations must be finite")
        if not 0 <= self.day0_index < b1.size:
            raise ValueError("day0_index outside the deviation window")
        pre = slice(0, self.day0_index + 1)
        post = slice(self.day0_index + 1, None)
        for name, b in (("beta1", b1), ("beta2", b2)):
            if np.any(b[pre] < 0):
                raise ValueError(f"{name} must be nonnegative up to day 0")
            if np.any(b[post] > 0):
                raise ValueError(f"{name} must be nonpositive after day 0")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)

    @property
    def n_days(self):
        return self.beta1.size

    @classmethod
    def zeros(cls, n_days, day0_index=None):
        if day0_index is None:
            day0_index = n_days // 2
        return cls(np.zeros(n_days), np.zeros(n_days), day0_index)


@dataclass(frozen=True)
class SteeringStrength:
    """Per-user mediation of the global deviation, strictly inside (0,1)."""

    s1: float
    s2: float

    def __post_init__(self):
        for name in ("s1", "s2"):
            v = float(getattr(self, name))
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly in (0,1), got {v!r}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class DayRates:
    """Per-day ZIP parameters; `lam` is the Poisson mean (lambda is reserved)."""

    alpha: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        l = np.asarray(self.lam, dtype=np.float64)
        if a.ndim != 1 or a.shape != l.shape:
            raise ValueError("alpha and lam must be 1-D with equal length")
        if np.any((a <= 0.0) | (a >= 1.0)):
            raise ValueError("alpha must lie in (0,1)")
        if np.any(l <= 0.0):
            raise ValueError("lam must be positive")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "lam", l)

    @property
    def expected_counts(self):
        return self.alpha * self.lam


# ---------------------------------------------------------------------------
# links and likelihood


def weekday_indices(weekday_of_day0, n_days, day0_index):
    """Weekday (0..6) of each window day given the badge day's weekday."""
    d = np.arange(n_days)
    return (weekday_of_day0 + d - day0_index) % WEEK


def tile_weekly(week_values, weekday_of_day0, n_days, day0_index):
    """Lay a length-7 weekly vector onto the D-day window."""
    week_values = np.asarray(week_values, dtype=np.float64)
    if week_values.shape[-1] != WEEK:
        raise ValueError("weekly values must have trailing dimension 7")
    return week_values[..., weekday_indices(weekday_of_day0, n_days, day0_index)]


def _strength_pair(strength):
    if isinstance(strength, SteeringStrength):
        return strength.s1, strength.s2
    s1, s2 = (float(s) for s in strength)
    if not (0.0 <= s1 <= 1.0 and 0.0 <= s2 <= 1.0):
        raise ValueError("steering strengths must lie in [0,1]")
    return s1, s2


def compute_rates(profile, strength, beta, weekday_of_day0):
    """Apply the links over a window.  strength may be a SteeringStrength or
    any (s1, s2) pair in [0,1] (Models 0 and 1 force the endpoints)."""
    s1, s2 = _strength_pair(strength)
    n_days, day0 = beta.n_days, beta.day0_index
    pre1 = tile_weekly(profile.p1_week, weekday_of_day0, n_days, day0) + s1 * beta.beta1
    pre2 = tile_weekly(profile.p2_week, weekday_of_day0, n_days, day0) + s2 * beta.beta2
    alpha = np.clip(expit(pre1), RATE_EPS, 1.0 - RATE_EPS)
    lam = np.maximum(np.logaddexp(0.0, pre2), RATE_EPS)
    return DayRates(alpha, lam)


def zip_log_pmf(k, alpha, lam):
    """log Pr[count = k] under zero-inflated Poisson(alpha, lam).

    k=0 pools the inactive branch with an active Poisson zero via a
    log-sum-exp; there is no hurdle (an active zero is legitimate).
    Domain: integer k >= 0, 0 < alpha <= 1, lam > 0.
    """
    k = np.asarray(k)
    alpha = np.asarray(alpha, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if not np.issubdtype(k.dtype, np.integer):
        kf = np.asarray(k, dtype=np.float64)
        if np.any(kf != np.floor(kf)) or not np.all(np.isfinite(kf)):
            raise ValueError("k must be a nonnegative integer")
        k = kf.astype(np.int64)
    if np.any(k < 0):
        raise ValueError("k must be a nonnegative integer")
    if np.any((alpha <= 0.0) | (alpha > 1.0)) or not np.all(np.isfinite(alpha)):
        raise ValueError("alpha must lie in (0, 1]")
    if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
        raise ValueError("lam must be positive and finite")
    k, alpha, lam = np.broadcast_arrays(k, alpha, lam)
    with np.errstate(divide="ignore"):
        log_zero = np.logaddexp(np.log1p(-alpha), np.log(alpha) - lam)
    log_pos = np.log(alpha) + k * np.log(lam) - lam - gammaln(k + 1.0)
    out = np.where(k == 0, log_zero, log_pos)
    if out.ndim == 0:
        return float(out)
    return out


def zip_sample(rng, alpha, lam, size=None):
    """Draw ZIP counts.  alpha/lam broadcast; size defaults to their shape."""
    alpha = np.asarray(alpha, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if size is None:
        shape = np.broadcast_shapes(alpha.shape, lam.shape)
    else:
        shape = (size,) if np.isscalar(size) else tuple(size)
    active = rng.random(shape) < alpha
    draws = rng.poisson(np.broadcast_to(lam, shape))
    counts = np.where(active, draws, 0)
    if counts.ndim == 0:
        return int(counts)
    return counts.astype(np.int64)


def simulate_user(model, profile, strength, beta, weekday_of_day0, rng, user_id="u00000"):
    """Draw one trajectory.  Model 0 forces S=(0,0), Model 1 forces S=(1,1);
    Model 2 uses the given strength."""
    if model == 0:
        s = (0.0, 0.0)
    elif model == 1:
        s = (1.0, 1.0)
    elif model == 2:
        if strength is None:
            raise ValueError("model 2 requires a steering strength")
        s = strength
    else:
        raise ValueError(f"model must be 0, 1, or 2, got {model!r}")
    rates = compute_rates(profile, s, beta, weekday_of_day0)
    counts = zip_sample(rng, rates.alpha, rates.lam)
    return ActionTrajectory(user_id, counts, weekday_of_day0, beta.day0_index)


# ---------------------------------------------------------------------------
# cohorts


@dataclass(frozen=True)
class GroupSpec:
    """One mixture component: a strength box and a weekly-profile prior."""

    name: str
    fraction: float
    s1_range: tuple[float, float]
    s2_range: tuple[float, float]
    p1_mean: float = 0.9
    p1_sd: float = 0.8
    p2_mean: float = 1.3
    p2_sd: float = 1.0


@dataclass(frozen=True)
class CohortSpec:
    groups: tuple
    beta: SteeringDeviation
    n_users: int
    model: int = 2
    seed: int = 0

    def __post_init__(self):
        check_proportions([g.fraction for g in self.groups])
        if self.n_users <= 0:
            raise ValueError("n_users must be positive")
        if self.model not in (0, 1, 2):
            raise ValueError("model must be 0, 1, or 2")

    @property
    def n_days(self):
        return self.beta.n_days


LABEL_STRONG = "strong-steerer"
LABEL_NON = "non-steerer"
LABEL_OTHER = "other"


def default_steering_deviation(n_days=70, day0_index=None):
    """Smooth planted deviation: ramps up into day 0 (intensity peaking two
    days before the badge), then suppresses and slowly recovers."""
    if day0_index is None:
        day0_index = n_days // 2
    d = np.arange(n_days, dtype=np.float64)
    beta1 = np.where(
        d <= day0_index,
        2.2 * np.exp(-(((d - day0_index) / 10.0) ** 2)),
        -2.8 * np.exp(-(d - day0_index - 1) / 20.0),
    )
    beta2 = np.where(
        d <= day0_index,
        2.4 * np.exp(-(((d - (day0_index - 2)) / 6.0) ** 2)),
        -1.8 * np.exp(-(d - day0_index - 1) / 20.0),
    )
    return SteeringDeviation(beta1, beta2, day0_index)


def default_cohort_spec(n_users=5000, seed=0, n_days=70, day0_index=None, model=2,
                        fractions=(0.2, 0.4, 0.4)):
    """Bimodal steering cohort: strong / non / other at the given fractions."""
    f_strong, f_non, f_other = check_proportions(fractions)
    groups = (
        GroupSpec(LABEL_STRONG, f_strong, (0.88, 0.985), (0.88, 0.985)),
        GroupSpec(LABEL_NON, f_non, (0.005, 0.06), (0.005, 0.06)),
        GroupSpec(LABEL_OTHER, f_other, (0.25, 0.75), (0.25, 0.75)),
    )
    beta = default_steering_deviation(n_days, day0_index)
    return CohortSpec(groups=groups, beta=beta, n_users=n_users, model=model, seed=seed)


def _simulate_block(args):
    spec, indices, group_idx, weekdays, rngs = args
    out = []
    for i, gi, wd, rng in zip(indices, group_idx, weekdays, rngs):
        g = spec.groups[gi]
        s1 = rng.uniform(*g.s1_range)
        s2 = rng.uniform(*g.s2_range)
        profile = PreferredProfile(
            rng.normal(g.p1_mean, g.p1_sd, WEEK),
            rng.normal(g.p2_mean, g.p2_sd, WEEK),
        )
        strength = (s1, s2) if spec.model == 2 else None
        out.append(
            simulate_user(spec.model, profile, strength, spec.beta, int(wd), rng,
                          user_id=f"u{i:05d}")
        )
    return out


def simulate_cohort(spec, rng=None, n_jobs=1):
    """Draw a cohort; returns (trajectories, labels).

    Deterministic for a given spec/seed: every user gets an independent child
    stream, so results do not depend on n_jobs (workers just split the user
    list).
    """
    rng = as_generator(spec.seed if rng is None else rng)
    fractions = np.array([g.fraction for g in spec.groups])
    group_idx = rng.choice(len(spec.groups), size=spec.n_users, p=fractions)
    weekdays = rng.integers(0, WEEK, size=spec.n_users)
    child_rngs = rng.spawn(spec.n_users)
    labels = [spec.groups[gi].name for gi in group_idx]
    indices = np.arange(spec.n_users)
    if n_jobs <= 1 or spec.n_users < 2 * n_jobs:
        trajs = _simulate_block((spec, indices, group_idx, weekdays, child_rngs))
    else:
        bounds = np.array_split(indices, n_jobs)
        jobs = [
            (spec, b, group_idx[b], weekdays[b], [child_rngs[i] for i in b])
            for b in bounds if b.size
        ]
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=len(jobs)) as pool:
            parts = pool.map(_simulate_block, jobs)
        trajs = [t for part in parts for t in part]
    return trajs, labels


# ---------------------------------------------------------------------------
# trajectory files: one JSON object per line, fixed field order


def write_trajectories(path, trajectories):
    with open(path, "w") as fh:
        for t in trajectories:
            obj = {
                "user_id": t.user_id,
                "weekday_of_day0": int(t.weekday_of_day0),
                "counts": [int(c) for c in t.counts],
            }
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")


def read_trajectories(path, day0_index=None):
    """Read a trajectory file.  day0_index defaults to D // 2."""
    out = []
    n_days = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                t = ActionTrajectory(
                    user_id=str(obj["user_id"]),
                    counts=np.asarray(obj["counts"], dtype=np.int64),
                    weekday_of_day0=int(obj["weekday_of_day0"]),
                    day0_index=day0_index,
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise ValueError(f"{path}:{lineno}: bad trajectory record: {e}") from e
            if n_days is None:
                n_days = t.n_days
            elif t.n_days != n_days:
                raise ValueError(f"{path}:{lineno}: inconsistent window length")
            out.append(t)
    return out


def write_labels(path, trajectories, labels):
    with open(path, "w") as fh:
        for t, lab in zip(trajectories, labels):
            fh.write(json.dumps({"user_id": t.user_id, "label": lab}, separators=(",", ":")))
            fh.write("\n")


def read_labels(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[str(obj["user_id"])] = str(obj["label"])
    return out
