"""Badge-steering analysis: generative count model, amortized variational
inference, and renewal-theory tools for threshold-centered activity."""

from .model import (
    ActionTrajectory,
    CohortSpec,
    DayRates,
    GroupSpec,
    LABEL_NON,
    LABEL_OTHER,
    LABEL_STRONG,
    PreferredProfile,
    SteeringDeviation,
    SteeringStrength,
    compute_rates,
    default_cohort_spec,
    default_steering_deviation,
    read_labels,
    read_trajectories,
    simulate_cohort,
    simulate_user,
    write_labels,
    write_trajectories,
    zip_log_pmf,
    zip_sample,
)
from .estimator import NaiveRateModel, SteeringModel
from .inference import (
    FitReport,
    InferenceConfig,
    TrainResult,
    classify_user,
    evaluate,
    extract_beta,
    naive_baseline,
    posterior_strength,
    score_day_rates,
    train,
    write_fit_report_csv,
)
from .ingest import (
    BadgeSpec,
    Event,
    Rejection,
    badge_day,
    build_trajectories,
    daily_counts,
    extract_window,
    read_events_jsonl,
    split,
    trajectories_to_events,
    write_events_jsonl,
    write_rejects_jsonl,
    write_split_json,
)
from .renewal import (
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
    zip_day_dist,
)

__version__ = "0.1.0"
