"""Distributional and link-function checks for the core generative model."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from badgesteer.model import (
    ActionTrajectory,
    CohortSpec,
    DayRates,
    GroupSpec,
    PreferredProfile,
    SteeringDeviation,
    SteeringStrength,
    compute_rates,
    default_cohort_spec,
    default_steering_deviation,
    read_trajectories,
    simulate_cohort,
    simulate_user,
    write_trajectories,
    zip_log_pmf,
    zip_sample,
)

LN2 = np.log(2.0)


def flat_profile(p1=0.0, p2=0.0):
    return PreferredProfile(np.full(7, p1), np.full(7, p2))


def zero_beta(n_days=14, day0=7):
    return SteeringDeviation(np.zeros(n_days), np.zeros(n_days), day0)


# ---------------------------------------------------------------------------
# links


def test_zero_inputs_hit_link_midpoints():
    rates = compute_rates(flat_profile(), (0.0, 0.0), zero_beta(), weekday_of_day0=0)
    assert np.allclose(rates.alpha, 0.5, atol=1e-12)
    assert np.allclose(rates.lam, LN2, atol=1e-12)


def test_intensity_link_value():
    # pre-link 1.0 plus strength 0.5 of a deviation of 2.0
    beta = SteeringDeviation(np.zeros(10), np.full(10, 2.0), day0_index=9)
    rates = compute_rates(flat_profile(p2=1.0), (0.0, 0.5), beta, weekday_of_day0=0)
    assert np.allclose(rates.lam, 2.1269280110429727, atol=1e-12)


def test_rates_periodic_when_unsteered():
    rng = np.random.default_rng(3)
    profile = PreferredProfile(rng.normal(size=7), rng.normal(size=7))
    rates = compute_rates(profile, (0.7, 0.7), zero_beta(21, 10), weekday_of_day0=4)
    assert np.allclose(rates.alpha[:-7], rates.alpha[7:])
    assert np.allclose(rates.lam[:-7], rates.lam[7:])


def test_weekday_alignment_of_tiling():
    p1 = np.arange(7, dtype=float)
    profile = PreferredProfile(p1, np.zeros(7))
    beta = zero_beta(14, 7)
    rates = compute_rates(profile, (0.0, 0.0), beta, weekday_of_day0=3)
    from scipy.special import expit

    assert np.isclose(rates.alpha[7], expit(3.0))       # day 0 uses its weekday
    assert np.isclose(rates.alpha[8], expit(4.0))
    assert np.isclose(rates.alpha[6], expit(2.0))


def test_zero_strength_recovers_unsteered_rates():
    rng = np.random.default_rng(5)
    profile = PreferredProfile(rng.normal(size=7), rng.normal(size=7))
    beta = default_steering_deviation(70)
    with_beta = compute_rates(profile, (0.0, 0.0), beta, weekday_of_day0=2)
    without = compute_rates(profile, (0.0, 0.0), SteeringDeviation.zeros(70), weekday_of_day0=2)
    assert np.array_equal(with_beta.alpha, without.alpha)
    assert np.array_equal(with_beta.lam, without.lam)


@settings(max_examples=25, deadline=None)
@given(
    s=st.floats(0.05, 0.9),
    ds=st.floats(0.01, 0.1),
    wd=st.integers(0, 6),
    seed=st.integers(0, 10_000),
)
def test_rates_monotone_in_strength(s, ds, wd, seed):
    """Raising S pushes rates up before day 0 and down after, per the sign
    structure of the deviation."""
    rng = np.random.default_rng(seed)
    profile = PreferredProfile(rng.normal(size=7), rng.normal(size=7))
    beta = default_steering_deviation(28, 14)
    lo = compute_rates(profile, (s, s), beta, wd)
    hi = compute_rates(profile, (s + ds, s + ds), beta, wd)
    pre, post = slice(0, 15), slice(15, None)
    assert np.all(hi.alpha[pre] >= lo.alpha[pre] - 1e-12)
    assert np.all(hi.lam[pre] >= lo.lam[pre] - 1e-12)
    assert np.all(hi.alpha[post] <= lo.alpha[post] + 1e-12)
    assert np.all(hi.lam[post] <= lo.lam[post] + 1e-12)


def test_steering_shifts_expected_counts_by_side():
    rng = np.random.default_rng(11)
    profile = PreferredProfile(rng.normal(size=7), rng.normal(size=7))
    beta = default_steering_deviation(70)
    steered = compute_rates(profile, (0.9, 0.9), beta, weekday_of_day0=1)
    plain = compute_rates(profile, (0.0, 0.0), beta, weekday_of_day0=1)
    pre, post = slice(0, 36), slice(36, None)
    assert np.all(steered.expected_counts[pre] >= plain.expected_counts[pre] - 1e-12)
    assert np.all(steered.expected_counts[post] <= plain.expected_counts[post] + 1e-12)


# ---------------------------------------------------------------------------
# zero-inflated Poisson


def test_zip_log_pmf_zero_branch_value():
    assert np.isclose(zip_log_pmf(0, 0.5, LN2), np.log(0.75), atol=1e-12)


def test_zip_log_pmf_alpha_one_is_poisson():
    for k in range(6):
        want = stats.poisson.logpmf(k, 2.3)
        assert np.isclose(zip_log_pmf(k, 1.0, 2.3), want, atol=1e-10)


def test_zip_normalizes_over_grid():
    for alpha in (1e-6, 0.3, 0.5, 0.9, 1.0):
        for lam in (0.05, 0.5, 1.0, 4.0, 20.0, 100.0):
            k_max = int(lam + 40.0 * np.sqrt(lam)) + 1
            k = np.arange(k_max + 1)
            total = np.exp(zip_log_pmf(k, alpha, lam)).sum()
            assert abs(total - 1.0) < 1e-9, (alpha, lam)


def test_zip_log_pmf_rejects_bad_domain():
    with pytest.raises(ValueError):
        zip_log_pmf(-1, 0.5, 1.0)
    with pytest.raises(ValueError):
        zip_log_pmf(0, 0.0, 1.0)
    with pytest.raises(ValueError):
        zip_log_pmf(0, 1.5, 1.0)
    with pytest.raises(ValueError):
        zip_log_pmf(0, 0.5, 0.0)
    with pytest.raises(ValueError):
        zip_log_pmf(0, np.nan, 1.0)
    with pytest.raises(ValueError):
        zip_log_pmf(0.5, 0.5, 1.0)


def test_zip_sample_vanishing_alpha_gives_zeros():
    rng = np.random.default_rng(0)
    draws = zip_sample(rng, 1e-12, 5.0, size=10_000)
    assert np.all(draws == 0)


def test_zip_sample_moments():
    rng = np.random.default_rng(1)
    alpha, lam, n = 0.6, 2.5, 200_000
    draws = zip_sample(rng, alpha, lam, size=n)
    mean = alpha * lam
    var = alpha * lam * (1.0 + lam * (1.0 - alpha))
    assert abs(draws.mean() - mean) < 4.0 * np.sqrt(var / n)
    assert abs(draws.var() - var) / var < 0.02


def test_zip_sample_matches_pmf_chi_square():
    rng = np.random.default_rng(17)
    alpha, lam, n = 0.7, 3.0, 1_000_000
    draws = zip_sample(rng, alpha, lam, size=n)
    k_max = int(lam + 40.0 * np.sqrt(lam)) + 1
    probs = np.exp(zip_log_pmf(np.arange(k_max + 1), alpha, lam))
    observed = np.bincount(draws, minlength=k_max + 1).astype(float)
    expected = probs * n
    # merge the tail so every bin has expected count >= 5
    keep = expected >= 5.0
    cut = np.argmax(~keep) if not keep.all() else len(expected)
    obs = np.append(observed[:cut], observed[cut:].sum())
    exp = np.append(expected[:cut], expected[cut:].sum())
    exp *= obs.sum() / exp.sum()
    p = stats.chisquare(obs, exp).pvalue
    assert p > 0.001


def test_model0_equals_model2_at_zero_strength():
    rng = np.random.default_rng(23)
    profile = PreferredProfile(rng.normal(size=7), rng.normal(size=7))
    beta = default_steering_deviation(7, 3)
    r0 = compute_rates(profile, (0.0, 0.0), beta, weekday_of_day0=2)
    r2 = compute_rates(profile, (0.0, 0.0), SteeringDeviation.zeros(7, 3), weekday_of_day0=2)
    assert np.array_equal(r0.alpha, r2.alpha) and np.array_equal(r0.lam, r2.lam)
    n = 100_000
    for day in range(7):
        a = zip_sample(np.random.default_rng(100 + day), r0.alpha[day], r0.lam[day], size=n)
        b = zip_sample(np.random.default_rng(200 + day), r2.alpha[day], r2.lam[day], size=n)
        assert stats.ks_2samp(a, b).pvalue > 1e-3


# ---------------------------------------------------------------------------
# domain types


def test_trajectory_validation():
    t = ActionTrajectory("u1", np.arange(10), weekday_of_day0=6)
    assert t.day0_index == 5
    with pytest.raises(ValueError):
        ActionTrajectory("u1", np.array([1, -1]), weekday_of_day0=0)
    with pytest.raises(ValueError):
        ActionTrajectory("u1", np.arange(10), weekday_of_day0=7)
    with pytest.raises(ValueError):
        ActionTrajectory("u1", np.arange(10), weekday_of_day0=0, day0_index=10)


def test_steering_deviation_sign_validation():
    ok = SteeringDeviation(np.array([1.0, 0.0, -1.0]), np.array([0.5, 0.0, 0.0]), 1)
    assert ok.n_days == 3
    with pytest.raises(ValueError):
        SteeringDeviation(np.array([-0.1, 0.0, -1.0]), np.zeros(3), 1)
    with pytest.raises(ValueError):
        SteeringDeviation(np.zeros(3), np.array([0.0, 0.0, 0.1]), 1)


def test_steering_strength_open_interval():
    SteeringStrength(0.5, 0.99)
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            SteeringStrength(bad, 0.5)


def test_day_rates_validation():
    DayRates(np.array([0.5]), np.array([1.0]))
    with pytest.raises(ValueError):
        DayRates(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        DayRates(np.array([0.5]), np.array([0.0]))


def test_simulate_user_forces_strength_by_model():
    profile = flat_profile(5.0, 2.0)  # high activity so differences show
    beta = default_steering_deviation(14, 7)
    rng = np.random.default_rng(2)
    t0 = simulate_user(0, profile, None, beta, 0, rng)
    assert t0.n_days == 14 and t0.day0_index == 7
    with pytest.raises(ValueError):
        simulate_user(2, profile, None, beta, 0, rng)
    with pytest.raises(ValueError):
        simulate_user(3, profile, (0.5, 0.5), beta, 0, rng)


# ---------------------------------------------------------------------------
# cohorts


def test_cohort_proportions_within_binomial_bound():
    spec = default_cohort_spec(n_users=10_000, seed=42)
    trajs, labels = simulate_cohort(spec)
    assert len(trajs) == 10_000
    freq = {g.name: labels.count(g.name) / len(labels) for g in spec.groups}
    for g in spec.groups:
        assert abs(freq[g.name] - g.fraction) < 0.015


def test_cohort_is_deterministic_and_jobs_invariant():
    spec = default_cohort_spec(n_users=60, seed=9)
    a, la = simulate_cohort(spec)
    b, lb = simulate_cohort(spec)
    c, lc = simulate_cohort(spec, n_jobs=2)
    assert la == lb == lc
    for x, y, z in zip(a, b, c):
        assert np.array_equal(x.counts, y.counts) and np.array_equal(x.counts, z.counts)
        assert x.weekday_of_day0 == y.weekday_of_day0 == z.weekday_of_day0


def test_cohort_rejects_bad_proportions():
    beta = default_steering_deviation(14, 7)
    groups = (
        GroupSpec("a", 0.5, (0.1, 0.2), (0.1, 0.2)),
        GroupSpec("b", 0.6, (0.1, 0.2), (0.1, 0.2)),
    )
    with pytest.raises(ValueError):
        CohortSpec(groups=groups, beta=beta, n_users=10)


def test_trajectory_jsonl_round_trip_and_field_order(tmp_path):
    spec = default_cohort_spec(n_users=8, seed=4, n_days=14, day0_index=7)
    trajs, _ = simulate_cohort(spec)
    path = tmp_path / "traj.jsonl"
    write_trajectories(path, trajs)
    with open(path) as fh:
        first = fh.readline()
    assert list(json.loads(first).keys()) == ["user_id", "weekday_of_day0", "counts"]
    back = read_trajectories(path, day0_index=7)
    assert len(back) == len(trajs)
    for x, y in zip(trajs, back):
        assert x.user_id == y.user_id
        assert x.weekday_of_day0 == y.weekday_of_day0
        assert np.array_equal(x.counts, y.counts)


def test_read_trajectories_rejects_malformed(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"user_id": "u", "weekday_of_day0": 2}\n')
    with pytest.raises(ValueError):
        read_trajectories(path)
