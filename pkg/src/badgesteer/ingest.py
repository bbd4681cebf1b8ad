"""Event-log ingestion: raw per-action events to badge-aligned trajectories.

The input is a JSON-lines feed of single actions, one object per line:

    {"user_id": "u123", "date": "2023-04-01", "action_type": "vote"}

Daily resolution only, dates are calendar days in UTC.  A BadgeSpec names the
action type that counts toward the badge, the cumulative threshold, and the
window extent in whole weeks on each side of the badge day.  Users are dropped
(never silently) when they fail to reach the threshold or when the window
falls outside their observed lifetime; every drop is recorded as a Rejection
with a machine-readable reason code.

Badge eligibility is a pure cumulative threshold on one action type.  Vote
sub-type quotas that real badge systems sometimes add are out of scope here.

trajectories_to_events inverts the pipeline for synthetic cohorts: it emits an
event stream that, re-ingested with the same BadgeSpec, reproduces the input
trajectories exactly.
"""

import datetime
import json
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import ActionTrajectory
from .validation import check_proportions

# rejection reason codes
REASON_MALFORMED = "malformed-line"
REASON_NO_BADGE = "threshold-not-reached"
REASON_PRE_WINDOW = "insufficient-pre-window"
REASON_POST_WINDOW = "insufficient-post-window"

# action type of the synthetic presence markers written by trajectories_to_events
MARKER_ACTION = "login"


class Event(NamedTuple):
    user_id: str
    date: datetime.date
    action_type: str


class Rejection(NamedTuple):
    """One dropped input with an auditable reason.

    user_id is the affected user, or the "path:lineno" location for malformed
    lines that never yielded a user.
    """

    user_id: str
    reason: str
    detail: str


@dataclass(frozen=True)
class BadgeSpec:
    """Badge definition: cumulative `threshold` actions of `action_type`."""

    action_type: str
    threshold: int
    weeks_before: int = 5
    weeks_after: int = 5

    def __post_init__(self):
        if not isinstance(self.threshold, (int, np.integer)) or self.threshold < 1:
            raise ValueError(f"threshold must be a positive integer, got {self.threshold!r}")
        if self.weeks_before < 1 or self.weeks_after < 1:
            raise ValueError("window weeks must be positive on both sides")

    @property
    def window_days(self):
        return 7 * (self.weeks_before + self.weeks_after)

    @property
    def day0_index(self):
        return 7 * self.weeks_before


# ---------------------------------------------------------------------------
# event file IO


def parse_event_line(line):
    """Parse one JSONL event record.  Raises ValueError on anything off."""
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("event record must be a JSON object")
    try:
        user_id = obj["user_id"]
        date_s = obj["date"]
        action_type = obj["action_type"]
    except KeyError as e:
        raise ValueError(f"missing field {e.args[0]}") from None
    if not isinstance(user_id, str) or not user_id:
        raise ValueError("user_id must be a nonempty string")
    if not isinstance(action_type, str) or not action_type:
        raise ValueError("action_type must be a nonempty string")
    if not isinstance(date_s, str):
        raise ValueError("date must be an ISO-8601 string")
    date = datetime.date.fromisoformat(date_s)
    return Event(user_id, date, action_type)


def read_events_jsonl(path):
    """Read an event feed.  Returns (events, rejects); malformed lines land in
    rejects with the file location, they are never dropped on the floor."""
    events = []
    rejects = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(parse_event_line(line))
            except (ValueError, json.JSONDecodeError) as e:
                where = f"{path}:{lineno}"
                rejects.append(Rejection(where, REASON_MALFORMED, str(e)))
    return events, rejects


def write_events_jsonl(path, events):
    with open(path, "w") as fh:
        for ev in events:
            obj = {
                "user_id": ev.user_id,
                "date": ev.date.isoformat(),
                "action_type": ev.action_type,
            }
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")


def write_rejects_jsonl(path, rejects):
    with open(path, "w") as fh:
        for r in rejects:
            obj = {"user_id": r.user_id, "reason": r.reason, "detail": r.detail}
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# counting and alignment


def daily_counts(events, action_type):
    """Per-user date -> count maps over events of one action type.

    Days with no matching events simply have no entry; readers treat missing
    days as zero.  Accepts any iterable of Event tuples and streams through it.
    """
    counts = {}
    for user_id, date, atype in events:
        if atype != action_type:
            continue
        per_user = counts.get(user_id)
        if per_user is None:
            per_user = counts[user_id] = Counter()
        per_user[date] += 1
    return counts


def observation_bounds(events):
    """Per-user (first, last) event date over ALL action types.

    The observed lifetime decides whether a badge window is backed by data, so
    it must include non-counting actions; a user can be present on a day they
    cast no votes.
    """
    bounds = {}
    for user_id, date, _ in events:
        cur = bounds.get(user_id)
        if cur is None:
            bounds[user_id] = (date, date)
        else:
            lo, hi = cur
            if date < lo:
                bounds[user_id] = (date, hi)
            elif date > hi:
                bounds[user_id] = (lo, date)
    return bounds


def badge_day(day_counts, spec):
    """First date where the cumulative count reaches spec.threshold, else None.

    Daily resolution: the whole crossing day qualifies, even when the counting
    action and the threshold-crossing action happen at different times of day.
    """
    total = 0
    for date in sorted(day_counts):
        total += day_counts[date]
        if total >= spec.threshold:
            return date
    return None


def extract_window(user_id, day_counts, badge_date, spec, observed):
    """Cut the badge-centered window for one user.

    Returns an ActionTrajectory with D = 7*(weeks_before+weeks_after) daily
    counts and counts[day0_index] on the badge day, or a Rejection when the
    window is not fully inside the user's observed [first, last] span.
    """
    start = badge_date - datetime.timedelta(days=spec.day0_index)
    end = badge_date + datetime.timedelta(days=7 * spec.weeks_after - 1)
    first, last = observed
    if start < first:
        detail = f"window starts {start}, first observed {first}"
        return Rejection(user_id, REASON_PRE_WINDOW, detail)
    if end > last:
        detail = f"window ends {end}, last observed {last}"
        return Rejection(user_id, REASON_POST_WINDOW, detail)
    counts = np.zeros(spec.window_days, dtype=np.int64)
    for offset in range(spec.window_days):
        counts[offset] = day_counts.get(start + datetime.timedelta(days=offset), 0)
    return ActionTrajectory(
        user_id=user_id,
        counts=counts,
        weekday_of_day0=badge_date.weekday(),
        day0_index=spec.day0_index,
    )


def build_trajectories(events, spec):
    """Run the full pipeline over an event stream.

    Single pass over events (generators welcome), then per-user alignment.
    Returns (trajectories, rejections), both sorted by user_id.
    """
    counts = {}
    bounds = {}
    for ev in events:
        user_id, date, atype = ev
        cur = bounds.get(user_id)
        if cur is None:
            bounds[user_id] = (date, date)
        else:
            lo, hi = cur
            if date < lo:
                bounds[user_id] = (date, hi)
            elif date > hi:
                bounds[user_id] = (lo, date)
        if atype != spec.action_type:
            continue
        per_user = counts.get(user_id)
        if per_user is None:
            per_user = counts[user_id] = Counter()
        per_user[date] += 1

    trajectories = []
    rejections = []
    for user_id in sorted(bounds):
        day_map = counts.get(user_id)
        if not day_map:
            rejections.append(Rejection(user_id, REASON_NO_BADGE, "total 0"))
            continue
        badge = badge_day(day_map, spec)
        if badge is None:
            total = sum(day_map.values())
            rejections.append(Rejection(user_id, REASON_NO_BADGE, f"total {total}"))
            continue
        out = extract_window(user_id, day_map, badge, spec, bounds[user_id])
        if isinstance(out, Rejection):
            rejections.append(out)
        else:
            trajectories.append(out)
    return trajectories, rejections


# ---------------------------------------------------------------------------
# dataset splits


def split(user_ids, ratios=(0.6, 0.2, 0.2), seed=0):
    """Deterministic train/validation/test split of user ids.

    Ids are sorted before shuffling so the result depends only on the id SET
    and the seed, not on input order.  Returns three disjoint lists covering
    every id; sizes are the rounded cumulative ratios.
    """
    if len(ratios) != 3:
        raise ValueError("ratios must be (train, validation, test)")
    check_proportions(ratios)
    ids = sorted(user_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate user ids")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    cut1 = int(round(n * ratios[0]))
    cut2 = int(round(n * (ratios[0] + ratios[1])))
    return shuffled[:cut1], shuffled[cut1:cut2], shuffled[cut2:]


def write_split_json(path, train, validation, test, seed, ratios):
    manifest = {
        "format": "badgesteer-split",
        "version": 1,
        "seed": int(seed),
        "ratios": list(ratios),
        "train": list(train),
        "validation": list(validation),
        "test": list(test),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, separators=(",", ":"))
        fh.write("\n")


def read_split_json(path):
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "badgesteer-split":
        raise ValueError(f"{path}: not a split manifest")
    return manifest


# ---------------------------------------------------------------------------
# synthetic event streams


def trajectories_to_events(trajectories, spec, anchor_monday=datetime.date(2024, 1, 1)):
    """Emit an event stream whose ingestion reproduces `trajectories` exactly.

    Calendar placement: each user's badge day lands on anchor_monday +
    weekday_of_day0, so the calendar weekday matches the trajectory.  Three
    ingredients per user:

      presence markers   two MARKER_ACTION events on the first and last window
                         day.  They pin the observed lifetime so the window
                         survives extract_window even when the edge days have
                         zero counts; they never touch the badge count.
      filler block       threshold - 1 - (in-window count before day0) actions
                         on the day before the window, forcing the cumulative
                         sum to cross the threshold exactly on day0.
      window actions     count[d] single-action events per window day.

    Requires counts[day0_index] >= 1 (a crossing day has at least one action;
    a trajectory violating that cannot come out of this pipeline) and a
    threshold high enough that the filler block is nonnegative for every user.
    """
    if anchor_monday.weekday() != 0:
        raise ValueError("anchor_monday must be a Monday")
    ids = [t.user_id for t in trajectories]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate user ids would merge on ingestion")
    events = []
    for t in trajectories:
        if t.n_days != spec.window_days or t.day0_index != spec.day0_index:
            raise ValueError(
                f"user {t.user_id}: trajectory shape ({t.n_days}, day0 {t.day0_index}) "
                f"does not match spec window ({spec.window_days}, day0 {spec.day0_index})"
            )
        if t.counts[t.day0_index] < 1:
            raise ValueError(f"user {t.user_id}: badge day has zero actions")
        pre_total = int(t.counts[: t.day0_index].sum())
        filler = spec.threshold - 1 - pre_total
        if filler < 0:
            raise ValueError(
                f"user {t.user_id}: pre-badge window already holds {pre_total} actions, "
                f"needs threshold >= {pre_total + 1}"
            )
        day0 = anchor_monday + datetime.timedelta(days=t.weekday_of_day0)
        start = day0 - datetime.timedelta(days=spec.day0_index)
        end = day0 + datetime.timedelta(days=7 * spec.weeks_after - 1)
        events.append(Event(t.user_id, start, MARKER_ACTION))
        events.append(Event(t.user_id, end, MARKER_ACTION))
        filler_day = start - datetime.timedelta(days=1)
        events.extend(Event(t.user_id, filler_day, spec.action_type) for _ in range(filler))
        for offset in range(t.n_days):
            date = start + datetime.timedelta(days=offset)
            events.extend(
                Event(t.user_id, date, spec.action_type) for _ in range(int(t.counts[offset]))
            )
    return events


# ---------------------------------------------------------------------------
# golden-file helper


def write_daily_counts_csv(path, counts):
    """Counts map -> CSV sorted by (user_id, date) for stable golden files."""
    with open(path, "w") as fh:
        fh.write("user_id,date,count\n")
        for user_id in sorted(counts):
            per_user = counts[user_id]
            for date in sorted(per_user):
                fh.write(f"{user_id},{date.isoformat()},{per_user[date]}\n")
