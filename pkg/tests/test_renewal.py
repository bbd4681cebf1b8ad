"""Renewal crossing analysis: exact recurrences, limits, and MC agreement."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from badgesteer.model import ActionTrajectory
from badgesteer.renewal import (
    CrossingSample,
    DiscreteDist,
    WeeklySchedule,
    centered_mean_curve,
    convergence_knee,
    crossing_distribution_exact,
    epoch_limit,
    epoch_matrix,
    expected_bump_limit,
    gcd_reduce,
    mc_crossing,
    sample_schedule_counts,
    threshold_centered_window,
    visit_probabilities,
    weekly_bump_limit,
    write_centered_curves_csv,
    write_convergence_csv,
    write_visit_probabilities_csv,
    zip_day_dist,
)

UNIFORM_12 = DiscreteDist.uniform([1, 2])
UNIFORM_24 = DiscreteDist.uniform([2, 4])
HALF_ZERO_TWO = DiscreteDist(np.array([0, 2]), np.array([0.5, 0.5]))
ONE_THREE = WeeklySchedule((DiscreteDist.constant(1), DiscreteDist.constant(3)))


def exact_visits(pmf, m_max):
    """Rational-arithmetic recurrence oracle; pmf maps value -> Fraction."""
    alpha = pmf.get(0, Fraction(0))
    p = [Fraction(0)] * (m_max + 1)
    for m in range(m_max + 1):
        total = Fraction(1) if m == 0 else Fraction(0)
        for j, pj in pmf.items():
            if 0 < j <= m:
                total += pj * p[m - j]
        p[m] = total / (1 - alpha)
    return p


def brute_crossing(pmf, threshold):
    """Exact crossing-draw law by explicit state enumeration (zero-free pmf)."""
    states = {0: Fraction(1)}
    out = {}
    while states:
        nxt = {}
        for s, mass in states.items():
            for j, pj in pmf.items():
                if s + j >= threshold:
                    out[j] = out.get(j, Fraction(0)) + mass * pj
                else:
                    nxt[s + j] = nxt.get(s + j, Fraction(0)) + mass * pj
        states = nxt
    return out


def test_discrete_dist_validation():
    d = DiscreteDist(np.array([2, 1]), np.array([0.25, 0.75]))
    assert d.support.tolist() == [1, 2] and d.probs.tolist() == [0.75, 0.25]
    assert d.mean() == 1.25 and d.second_moment() == 1.75
    assert d.zero_mass() == 0.0
    assert HALF_ZERO_TWO.zero_mass() == 0.5
    assert DiscreteDist.constant(4).max_support == 4
    with pytest.raises(ValueError):
        DiscreteDist(np.array([1, 1]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        DiscreteDist(np.array([-1, 2]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        DiscreteDist(np.array([1, 2]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        DiscreteDist(np.array([1, 2]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        DiscreteDist(np.array([1.5]), np.array([1.0]))


def test_weekly_schedule_validation():
    WeeklySchedule((UNIFORM_12, DiscreteDist.constant(0), UNIFORM_12))
    with pytest.raises(ValueError):
        WeeklySchedule(())
    with pytest.raises(ValueError):
        WeeklySchedule((DiscreteDist.constant(0), DiscreteDist.constant(0)))
    assert ONE_THREE.week_mean() == 4.0
    assert ONE_THREE.slot_means().tolist() == [1.0, 3.0]


def test_gcd_reduce_dist():
    reduced, g = gcd_reduce(UNIFORM_24)
    assert g == 2 and reduced.support.tolist() == [1, 2]
    same, g1 = gcd_reduce(UNIFORM_12)
    assert g1 == 1 and same.support.tolist() == [1, 2]
    with_zero, gz = gcd_reduce(HALF_ZERO_TWO)
    assert gz == 2 and with_zero.support.tolist() == [0, 1]
    with pytest.raises(ValueError):
        gcd_reduce(DiscreteDist.constant(0))


def test_gcd_reduce_schedule():
    sched = WeeklySchedule((DiscreteDist.constant(2), DiscreteDist.constant(4)))
    reduced, g = gcd_reduce(sched)
    assert g == 2
    assert [s.support.tolist() for s in reduced.slots] == [[1], [2]]


def test_visit_probabilities_constant_one_is_all_ones():
    p = visit_probabilities(DiscreteDist.constant(1), 40)
    assert np.array_equal(p, np.ones(41))


def test_visit_probabilities_match_rational_oracle():
    p = visit_probabilities(UNIFORM_12, 20)
    exact = exact_visits({1: Fraction(1, 2), 2: Fraction(1, 2)}, 20)
    for m in range(21):
        assert abs(p[m] - float(exact[m])) < 1e-15


def test_visit_probabilities_limit_uniform_12():
    p = visit_probabilities(UNIFORM_12, 60)
    assert p[0] == 1.0
    assert abs(p[60] - 2.0 / 3.0) < 1e-12


def test_visit_probabilities_gcd_lattice():
    p = visit_probabilities(UNIFORM_24, 100)
    assert np.array_equal(p[1::2], np.zeros(50))
    assert abs(p[100] - 2.0 / 3.0) < 1e-12


def test_visit_probabilities_zero_mass_lingering():
    p = visit_probabilities(HALF_ZERO_TWO, 10)
    assert p[0] == 2.0 and p[2] == 2.0 and p[10] == 2.0
    assert np.array_equal(p[1::2], np.zeros(5))


def test_visit_probabilities_domain_errors():
    with pytest.raises(ValueError):
        visit_probabilities(UNIFORM_12, -1)
    with pytest.raises(ValueError):
        visit_probabilities(DiscreteDist.constant(0), 5)


def test_convergence_knee_uniform_12():
    p = visit_probabilities(UNIFORM_12, 60)
    knee = convergence_knee(p, 2.0 / 3.0, tol=1e-8)
    assert knee == 25
    assert np.all(np.abs(p[knee:] - 2.0 / 3.0) < 1e-8)
    assert convergence_knee(np.full(5, 1.0), 1.0) == 0
    assert convergence_knee(np.array([1.0, 2.0]), 0.0) == 2


def test_epoch_matrix_values():
    a = epoch_matrix(UNIFORM_12)
    assert np.array_equal(a, np.array([[0.5, 0.5], [0.25, 0.75]]))
    assert np.array_equal(epoch_matrix(DiscreteDist.constant(1)), np.array([[1.0]]))


def test_epoch_matrix_requirements():
    with pytest.raises(ValueError):
        epoch_matrix(HALF_ZERO_TWO)
    with pytest.raises(ValueError):
        epoch_matrix(UNIFORM_24)


def test_epoch_limit_agrees_with_recurrence():
    p = visit_probabilities(UNIFORM_12, 60)
    limit, g = epoch_limit(UNIFORM_12)
    assert g == 1
    assert abs(limit - p[60]) < 1e-10
    limit02, g02 = epoch_limit(HALF_ZERO_TWO)
    assert g02 == 2 and abs(limit02 - 2.0) < 1e-12
    limit24, g24 = epoch_limit(UNIFORM_24)
    assert g24 == 2 and abs(limit24 - 2.0 / 3.0) < 1e-12


def test_epoch_powers_decay_geometrically():
    a = epoch_matrix(UNIFORM_12)
    norms = []
    ak = a.copy()
    for _ in range(10):
        ak1 = ak @ a
        norms.append(np.max(np.abs(ak1 - ak)))
        ak = ak1
    assert all(n2 < n1 for n1, n2 in zip(norms, norms[1:]))
    slope = np.polyfit(np.arange(len(norms)), np.log(norms), 1)[0]
    assert slope < -1.0


def test_expected_bump_limit_values():
    assert expected_bump_limit(DiscreteDist.constant(3)) == 3.0
    assert abs(expected_bump_limit(UNIFORM_12) - 5.0 / 3.0) < 1e-15
    assert expected_bump_limit(HALF_ZERO_TWO) == 2.0
    assert abs(expected_bump_limit(UNIFORM_24) - 10.0 / 3.0) < 1e-15
    with pytest.raises(ValueError):
        expected_bump_limit(DiscreteDist.constant(0))


def test_weekly_bump_limit_values():
    assert weekly_bump_limit(ONE_THREE) == 2.5
    sched = WeeklySchedule((UNIFORM_12, DiscreteDist.constant(0), UNIFORM_12))
    assert abs(weekly_bump_limit(sched) - 5.0 / 3.0) < 1e-15
    identical = WeeklySchedule((UNIFORM_12,) * 7)
    assert weekly_bump_limit(identical) == expected_bump_limit(UNIFORM_12)


@settings(max_examples=25, deadline=None)
@given(scale=st.integers(min_value=1, max_value=9))
def test_bump_limit_scales_with_support(scale):
    base = DiscreteDist(np.array([1, 3, 4]), np.array([0.5, 0.3, 0.2]))
    scaled = DiscreteDist(base.support * scale, base.probs)
    assert abs(expected_bump_limit(scaled) - scale * expected_bump_limit(base)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(alpha=st.floats(min_value=0.05, max_value=0.9))
def test_bump_limit_invariant_to_zero_mass(alpha):
    support = np.array([1, 2, 5])
    probs = np.array([0.2, 0.5, 0.3])
    conditional = DiscreteDist(support, probs)
    padded = DiscreteDist(np.concatenate(([0], support)),
                          np.concatenate(([alpha], probs * (1.0 - alpha))))
    assert abs(expected_bump_limit(padded) - expected_bump_limit(conditional)) < 1e-12


def test_crossing_distribution_exact_matches_brute_enumeration():
    pmf = {1: Fraction(1, 2), 2: Fraction(1, 2)}
    for threshold in (5, 7, 9):
        want = brute_crossing(pmf, threshold)
        got = crossing_distribution_exact(UNIFORM_12, threshold)
        assert got.support.tolist() == sorted(want)
        for k, pk in zip(got.support, got.probs):
            assert abs(pk - float(want[int(k)])) < 1e-15


def test_crossing_distribution_known_values():
    got = crossing_distribution_exact(UNIFORM_12, 7)
    assert got.support.tolist() == [1, 2]
    assert abs(got.probs[0] - 43.0 / 128.0) < 1e-15
    assert abs(got.probs[1] - 85.0 / 128.0) < 1e-15
    for threshold in (9, 10):
        point = crossing_distribution_exact(HALF_ZERO_TWO, threshold)
        assert point.support.tolist() == [2] and point.probs[0] == 1.0
    with pytest.raises(ValueError):
        crossing_distribution_exact(UNIFORM_12, 0)


def test_crossing_mean_converges_to_limit():
    limit = expected_bump_limit(UNIFORM_12)
    errs = [abs(crossing_distribution_exact(UNIFORM_12, n).mean() - limit)
            for n in (3, 10, 30, 100)]
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    final = crossing_distribution_exact(UNIFORM_12, 1000)
    assert abs(final.mean() - limit) < 1e-12


def test_mc_crossing_constant_one_is_always_one():
    for phase in ("stationary", "fixed"):
        mc = mc_crossing(DiscreteDist.constant(1), 17, 500, rng=0, phase=phase)
        assert mc.y_support.tolist() == [1]
        assert mc.y_counts.tolist() == [500]
        assert mc.mean == 1.0


def test_mc_crossing_uniform_12_hits_limit():
    mc = mc_crossing(UNIFORM_12, 1000, 50_000, rng=1)
    assert abs(mc.mean - 5.0 / 3.0) < 4.0 * mc.stderr + 1e-6
    assert mc.slot_counts.tolist() == [50_000]


def test_mc_crossing_zero_mass_point_distribution():
    mc = mc_crossing(HALF_ZERO_TWO, 50, 4000, rng=5)
    assert mc.y_support.tolist() == [2]
    assert mc.mean == 2.0
    reference = mc_crossing(DiscreteDist.constant(2), 50, 4000, rng=5)
    assert reference.mean == 2.0


def test_mc_crossing_weekly_schedule_stationary():
    for threshold in (999, 1000):
        mc = mc_crossing(ONE_THREE, threshold, 50_000, rng=2)
        assert abs(mc.mean - 2.5) < 4.0 * mc.stderr + 1e-6
        assert mc.y_support.tolist() == [1, 3]
        # only slot 0 can draw a 1, so the slot census must match exactly
        assert mc.slot_counts[0] == mc.y_counts[0]
        assert abs(mc.y_counts[0] / mc.n_trials - 0.25) < 0.01


def test_mc_crossing_fixed_phase_depends_on_residue():
    """With a lattice-periodic schedule the literal process pins the
    crossing draw by threshold residue; frozen by exact enumeration."""
    for threshold, want in ((999, 3.0), (1000, 3.0), (1001, 1.0)):
        mc = mc_crossing(ONE_THREE, threshold, 50, rng=4, phase="fixed")
        assert mc.mean == want


def test_mc_crossing_invariant_to_n_jobs():
    a = mc_crossing(ONE_THREE, 200, 60_000, rng=7, chunk_size=20_000, n_jobs=1)
    b = mc_crossing(ONE_THREE, 200, 60_000, rng=7, chunk_size=20_000, n_jobs=3)
    assert np.array_equal(a.y_counts, b.y_counts)
    assert np.array_equal(a.slot_counts, b.slot_counts)


def test_mc_crossing_theorem_1_band_at_moderate_threshold():
    limit = expected_bump_limit(UNIFORM_12)
    mc = mc_crossing(UNIFORM_12, 150, 50_000, rng=6)
    assert abs(mc.mean - limit) < 3.0 * (mc.stderr + 1e-3)


def test_mc_crossing_domain_errors():
    with pytest.raises(ValueError):
        mc_crossing(UNIFORM_12, 0, 10)
    with pytest.raises(ValueError):
        mc_crossing(UNIFORM_12, 10, 0)
    with pytest.raises(ValueError):
        mc_crossing(DiscreteDist.constant(0), 10, 10)
    with pytest.raises(ValueError):
        mc_crossing(UNIFORM_12, 10, 10, phase="sideways")
    with pytest.raises(ValueError):
        mc_crossing([1, 2], 10, 10)


def test_crossing_sample_to_dist():
    sample = CrossingSample(np.array([1, 3]), np.array([25, 75]),
                            np.array([25, 75]), 100, 50, "stationary")
    dist = sample.to_dist()
    assert dist.probs.tolist() == [0.25, 0.75]
    assert sample.mean == 2.5


def test_sample_schedule_counts_respects_slots():
    sched = WeeklySchedule((DiscreteDist.constant(2), DiscreteDist.constant(5)))
    row = sample_schedule_counts(sched, 6, np.random.default_rng(0))
    assert row.tolist() == [2, 5, 2, 5, 2, 5]
    shifted = sample_schedule_counts(sched, 6, np.random.default_rng(0), start_slot=1)
    assert shifted.tolist() == [5, 2, 5, 2, 5, 2]
    block = sample_schedule_counts(ONE_THREE, 10, np.random.default_rng(1), n_rows=4)
    assert block.shape == (4, 10) and block.dtype == np.int64
    again = sample_schedule_counts(ONE_THREE, 10, np.random.default_rng(1), n_rows=4)
    assert np.array_equal(block, again)
    with pytest.raises(ValueError):
        sample_schedule_counts(ONE_THREE, -1, np.random.default_rng(0))


def test_threshold_centered_window_positions():
    counts = np.zeros(40, dtype=np.int64)
    counts[16] = 5
    counts[20] = 3
    got = threshold_centered_window(counts, 6, 2, 2)
    assert got is not None
    window, day0 = got
    assert day0 == 14
    assert np.array_equal(window, counts[6:34])
    assert threshold_centered_window(counts, 100, 2, 2) is None
    assert threshold_centered_window(counts, 5, 3, 1) is None   # crossing at 16 < 21
    assert threshold_centered_window(counts, 8, 1, 3) is None   # 20 + 21 > 40


def test_centered_mean_curve_identical_trajectories():
    counts = np.arange(14, dtype=np.int64)
    trajs = [ActionTrajectory(user_id=f"u{i}", counts=counts, weekday_of_day0=0,
                              day0_index=7) for i in range(5)]
    rel, curves = centered_mean_curve(trajs)
    assert rel.tolist() == list(range(-7, 7))
    assert np.array_equal(curves["all"], counts.astype(float))


def test_centered_mean_curve_groups_and_warnings():
    a = ActionTrajectory(user_id="a", counts=np.full(14, 2), weekday_of_day0=0, day0_index=7)
    b = ActionTrajectory(user_id="b", counts=np.full(14, 4), weekday_of_day0=0, day0_index=7)
    rel, curves = centered_mean_curve([a, b], labels=["x", "y"])
    assert np.all(curves["x"] == 2.0) and np.all(curves["y"] == 4.0)
    assert np.all(curves["all"] == 3.0)
    with pytest.warns(UserWarning, match="'ghost'"):
        _, curves = centered_mean_curve([a, b], labels=["x", "y"],
                                        group_order=["x", "y", "ghost"])
    assert "ghost" not in curves
    with pytest.raises(ValueError):
        centered_mean_curve([])
    with pytest.raises(ValueError):
        centered_mean_curve([a, b], labels=["x"])
    c = ActionTrajectory(user_id="c", counts=np.full(14, 1), weekday_of_day0=0, day0_index=6)
    with pytest.raises(ValueError):
        centered_mean_curve([a, c])


BUMP_SCHEDULE = WeeklySchedule((
    DiscreteDist.uniform([1, 2]),
    DiscreteDist.uniform([0, 3]),
    DiscreteDist.constant(2),
    DiscreteDist.uniform([1, 3]),
    DiscreteDist.uniform([0, 1, 2]),
    DiscreteDist.constant(1),
    DiscreteDist.uniform([2, 4]),
))


def _schedule_cohort(rng, n_users, n_days):
    rows = []
    for start in range(7):
        take = n_users // 7 + (1 if start < n_users % 7 else 0)
        rows.append(sample_schedule_counts(BUMP_SCHEDULE, n_days, rng,
                                           start_slot=start, n_rows=take))
    return np.vstack(rows)


def test_phantom_bump_appears_without_any_steering():
    """Counts are i.i.d. per weekday; centering on the crossing day still
    produces the day-0 bump at the analytic level."""
    threshold = 300
    wbl = weekly_bump_limit(BUMP_SCHEDULE)
    daily = BUMP_SCHEDULE.week_mean() / 7.0
    n_days = int(threshold / daily) + 130
    counts = _schedule_cohort(np.random.default_rng(11), 4000, n_days)
    trajs = []
    for i, row in enumerate(counts):
        got = threshold_centered_window(row, threshold, 5, 5)
        assert got is not None
        trajs.append(ActionTrajectory(user_id=f"u{i}", counts=got[0],
                                      weekday_of_day0=0, day0_index=got[1]))
    rel, curves = centered_mean_curve(trajs)
    curve = curves["all"]
    day0 = float(curve[rel == 0][0])
    off = float(curve[((rel >= -35) & (rel <= -8)) | ((rel >= 8) & (rel <= 34))].mean())
    assert abs(day0 - wbl) / wbl < 0.05
    assert abs(off - daily) / daily < 0.02


def test_day_minus_one_elevated_when_counts_split_across_boundary():
    """Re-aggregating day counts across a shifted boundary leaks part of
    the crossing-day burst into day -1; the curve shows it."""
    threshold = 300
    daily = BUMP_SCHEDULE.week_mean() / 7.0
    n_days = int(threshold / daily) + 130
    counts = _schedule_cohort(np.random.default_rng(11), 2000, n_days)
    rng = np.random.default_rng(12)
    first_half = rng.binomial(counts, 0.5)
    second_half = counts - first_half
    shifted = np.zeros_like(counts)
    shifted[:, :-1] = second_half[:, :-1] + first_half[:, 1:]
    shifted[:, -1] = second_half[:, -1]
    trajs = []
    for i in range(counts.shape[0]):
        hit = np.flatnonzero(np.cumsum(counts[i]) >= threshold)
        day0 = int(hit[0])
        trajs.append(ActionTrajectory(user_id=f"s{i}",
                                      counts=shifted[i, day0 - 35:day0 + 35],
                                      weekday_of_day0=0, day0_index=35))
    rel, curves = centered_mean_curve(trajs)
    curve = curves["all"]
    assert float(curve[rel == -1][0]) >= float(curve[rel == -8][0])


def test_zip_day_dist_moments_and_domain():
    d = zip_day_dist(0.6, 2.0)
    assert d.support[0] == 0
    assert abs(d.mean() - 1.2) < 1e-9
    assert abs(d.zero_mass() - (0.4 + 0.6 * np.exp(-2.0))) < 1e-9
    with pytest.raises(ValueError):
        zip_day_dist(0.0, 2.0)
    with pytest.raises(ValueError):
        zip_day_dist(0.5, 0.0)


def test_visit_probabilities_csv_golden(tmp_path):
    path = tmp_path / "visits.csv"
    write_visit_probabilities_csv(path, visit_probabilities(UNIFORM_12, 3))
    assert path.read_text() == "m,p_m\n0,1.0\n1,0.5\n2,0.75\n3,0.625\n"


def test_centered_curves_csv_golden(tmp_path):
    path = tmp_path / "curves.csv"
    write_centered_curves_csv(path, np.array([-1, 0]), {"all": np.array([1.0, 2.5])})
    assert path.read_text() == ("relative_day,group,mean_count\n"
                                "-1,all,1.0\n0,all,2.5\n")


def test_convergence_csv_golden(tmp_path):
    path = tmp_path / "conv.csv"
    write_convergence_csv(path, [(10, 1.625, 0.01, 5.0 / 3.0)])
    assert path.read_text() == ("threshold,mc_mean,mc_stderr,analytic_limit\n"
                                "10,1.625,0.01,1.6666666666666667\n")
