"""Command-line front end.

Subcommands: simulate | ingest | train | eval | classify | bump | report.
Every option can come from three places with fixed precedence: a flag
beats the config file, the config file beats the built-in default.  The
config file is flat ``key=value`` lines ('#' starts a comment).  All
commands are deterministic: the same config and seed produce
byte-identical output files.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

import argparse
import csv
import json
import sys
from collections import namedtuple

import numpy as np

from . import inference as inf
from . import report
from .ingest import (
    BadgeSpec,
    build_trajectories,
    read_events_jsonl,
    split,
    write_rejects_jsonl,
    write_split_json,
)
from .model import (
    LABEL_NON,
    LABEL_OTHER,
    LABEL_STRONG,
    default_cohort_spec,
    read_trajectories,
    simulate_cohort,
    write_labels,
    write_trajectories,
)
from .nn import load_checkpoint, save_checkpoint
from .renewal import (
    DiscreteDist,
    WeeklySchedule,
    expected_bump_limit,
    mc_crossing,
    sample_schedule_counts,
    threshold_centered_window,
    weekly_bump_limit,
    write_centered_curves_csv,
    zip_day_dist,
)
from .validation import as_generator

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad flags, bad config values, or unreadable/malformed input files."""


# ---------------------------------------------------------------------------
# option plumbing

Opt = namedtuple("Opt", "name conv default help")


def _int(raw):
    return int(raw, 10)


def _float(raw):
    return float(raw)


def _str(raw):
    return raw


def _model(raw):
    value = int(raw, 10)
    if value not in (0, 1, 2):
        raise ValueError("model must be 0, 1 or 2")
    return value


def _floats(raw):
    parts = [p.strip() for p in raw.split(",")]
    if any(p == "" for p in parts):
        raise ValueError("empty element in list")
    return tuple(float(p) for p in parts)


def _ints(raw):
    return tuple(int(p.strip(), 10) for p in raw.split(","))


def _dist(raw):
    """"value:prob,value:prob" -> DiscreteDist."""
    support = []
    probs = []
    for part in raw.split(","):
        if ":" not in part:
            raise ValueError(f"distribution entries are value:prob, got {part!r}")
        v, p = part.split(":", 1)
        support.append(int(v.strip(), 10))
        probs.append(float(p.strip()))
    return DiscreteDist(np.array(support), np.array(probs))


def parse_kv_file(path):
    """Flat key=value config lines; blanks and '#' comments ignored."""
    values = {}
    try:
        fh = open(path)
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}")
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def resolve_config(options, args):
    """Merge defaults < config file < flags into one typed dict."""
    file_values = parse_kv_file(args.config) if args.config else {}
    known = {o.name for o in options}
    for key in file_values:
        if key not in known:
            raise UsageError(f"unknown config key {key!r} for this command")
    cfg = {}
    for o in options:
        raw = getattr(args, o.name)
        if raw is None:
            raw = file_values.get(o.name)
        if raw is None:
            cfg[o.name] = o.default
            continue
        try:
            cfg[o.name] = o.conv(raw)
        except ValueError as e:
            raise UsageError(f"bad value for {o.name}: {raw!r} ({e})")
    return cfg


def _require(cfg, key, flag):
    if cfg[key] is None:
        raise UsageError(f"{flag} is required (flag or config file)")
    return cfg[key]


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg):
    spec = default_cohort_spec(
        n_users=cfg["users"],
        seed=cfg["seed"],
        n_days=cfg["days"],
        day0_index=cfg["day0"],
        model=cfg["model"],
        fractions=cfg["fractions"],
    )
    trajectories, labels = simulate_cohort(spec, n_jobs=cfg["threads"])
    write_trajectories(cfg["out"], trajectories)
    print(f"simulate: wrote {len(trajectories)} trajectories to {cfg['out']}")
    if cfg["labels_out"] is not None:
        write_labels(cfg["labels_out"], trajectories, labels)
        print(f"simulate: wrote labels to {cfg['labels_out']}")
    return EXIT_OK


def cmd_ingest(cfg):
    events_path = _require(cfg, "events", "--events")
    spec = BadgeSpec(
        action_type=cfg["action"],
        threshold=cfg["threshold"],
        weeks_before=cfg["weeks_before"],
        weeks_after=cfg["weeks_after"],
    )
    events, malformed = read_events_jsonl(events_path)
    trajectories, rejections = build_trajectories(events, spec)
    rejections = sorted(malformed + rejections)
    write_trajectories(cfg["out"], trajectories)
    print(f"ingest: accepted {len(trajectories)} users, rejected {len(rejections)}")
    if cfg["rejects_out"] is not None:
        write_rejects_jsonl(cfg["rejects_out"], rejections)
    if cfg["split_out"] is not None:
        ids = [t.user_id for t in trajectories]
        train_ids, val_ids, test_ids = split(ids, ratios=cfg["ratios"], seed=cfg["seed"])
        write_split_json(cfg["split_out"], train_ids, val_ids, test_ids,
                         seed=cfg["seed"], ratios=cfg["ratios"])
        print(f"ingest: split {len(train_ids)}/{len(val_ids)}/{len(test_ids)} "
              f"to {cfg['split_out']}")
    return EXIT_OK


def cmd_train(cfg):
    data_path = _require(cfg, "data", "--data")
    trajectories = read_trajectories(data_path, day0_index=cfg["day0"])
    if not trajectories:
        raise UsageError(f"{data_path}: no trajectories")
    config = inf.InferenceConfig(
        n_days=trajectories[0].n_days,
        day0_index=trajectories[0].day0_index,
        latent_dim=cfg["latent_dim"],
        flow_layers=cfg["flow_layers"],
        lr=cfg["lr"],
        batch_size=cfg["batch"],
        max_epochs=cfg["epochs"],
        patience=cfg["patience"],
        seed=cfg["seed"],
    )
    result = inf.train(trajectories, cfg["model"], config)
    save_checkpoint(cfg["out"], result.params, result.checkpoint_meta())
    print(f"train: model {cfg['model']}, {len(result.history)} epochs "
          f"(best {result.best_epoch}), checkpoint {cfg['out']}")
    if result.diverged:
        # the checkpoint still holds the best finite parameters
        print("train: diverged, aborting with the last good checkpoint", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _load_fit(cfg):
    params, meta = load_checkpoint(_require(cfg, "checkpoint", "--checkpoint"))
    if "model" not in meta or "config" not in meta:
        raise UsageError(f"{cfg['checkpoint']}: not a training checkpoint")
    config = inf.InferenceConfig.from_meta(meta["config"])
    trajectories = read_trajectories(_require(cfg, "data", "--data"),
                                     day0_index=config.day0_index)
    rep = inf.evaluate(trajectories, params, meta["model"], config,
                       seed=cfg["seed"], n_jobs=cfg["threads"])
    return rep


def cmd_eval(cfg):
    rep = _load_fit(cfg)
    inf.write_fit_report_csv(cfg["out"], rep)
    summary = rep.summary()
    print(f"eval: model {summary['model']}, {summary['n_users']} users, "
          f"elbo/user {summary['elbo_per_user']!r}, mse {summary['mse']!r}")
    if cfg["summary_out"] is not None:
        with open(cfg["summary_out"], "w") as fh:
            json.dump(summary, fh, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_classify(cfg):
    rep = _load_fit(cfg)
    census = {LABEL_NON: 0, LABEL_OTHER: 0, LABEL_STRONG: 0}
    for label in rep.labels:
        census[label] += 1
    for label in (LABEL_NON, LABEL_OTHER, LABEL_STRONG):
        print(f"{label},{census[label]}")
    print(f"total,{rep.n_users}")
    if cfg["out"] is not None:
        inf.write_fit_report_csv(cfg["out"], rep)
    return EXIT_OK


def _bump_process(cfg):
    given = [k for k in ("dist", "weekly", "lam") if cfg[k] is not None]
    if len(given) != 1:
        raise UsageError("give exactly one of --dist, --weekly, --alpha/--lam")
    if cfg["dist"] is not None:
        return cfg["dist"]
    if cfg["weekly"] is not None:
        return WeeklySchedule(tuple(DiscreteDist.constant(v) for v in cfg["weekly"]))
    return zip_day_dist(cfg["alpha"], cfg["lam"])


def cmd_bump(cfg):
    process = _bump_process(cfg)
    if isinstance(process, WeeklySchedule):
        limit = weekly_bump_limit(process)
        typical = process.week_mean() / process.n_slots
        schedule = process
    else:
        limit = expected_bump_limit(process)
        typical = process.mean()
        schedule = WeeklySchedule((process,))
    root = as_generator(cfg["seed"])
    mc_rng, day_rng, curve_rng = root.spawn(3)
    mc = mc_crossing(process, cfg["threshold"], cfg["trials"], rng=mc_rng,
                     n_jobs=cfg["threads"])
    # an independent long sample pins the typical-day estimate
    days = sample_schedule_counts(schedule, 7 * 400, day_rng).astype(np.float64)
    rows = [
        ("crossing_day_mean", limit, mc.mean, mc.stderr),
        ("typical_day_mean", typical, days.mean(), days.std(ddof=1) / np.sqrt(days.size)),
    ]
    with open(cfg["out"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["quantity", "analytic", "mc_estimate", "mc_stderr"])
        for name, a, b, c in rows:
            writer.writerow([name, repr(float(a)), repr(float(b)), repr(float(c))])
    print(f"bump: crossing-day mean {mc.mean!r} (analytic {limit!r}), table {cfg['out']}")
    if cfg["curve_out"] is not None:
        wb, wa = cfg["weeks_before"], cfg["weeks_after"]
        # horizon long enough that nearly every row crosses with room for
        # the post window
        mean_week_day = schedule.week_mean() / schedule.n_slots
        n_days = int(np.ceil(cfg["threshold"] / mean_week_day * 1.5)) + 7 * (wb + wa) + 14
        counts = sample_schedule_counts(schedule, n_days, curve_rng, n_rows=cfg["rows"])
        windows = []
        for row in counts:
            got = threshold_centered_window(row, cfg["threshold"], wb, wa)
            if got is not None:
                windows.append(got[0])
        if not windows:
            raise UsageError("no simulated row reached the threshold; raise --rows or lower --threshold")
        day0 = 7 * wb
        curve = np.stack(windows).mean(axis=0)
        rel_days = np.arange(curve.size) - day0
        write_centered_curves_csv(cfg["curve_out"], rel_days, {"all": curve})
        print(f"bump: centered curve over {len(windows)} rows to {cfg['curve_out']}")
    return EXIT_OK


def _read_curves_csv(path):
    """Long-format centered-curve CSV back to {group: (x, y)} arrays."""
    series = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["relative_day", "group", "mean_count"]:
            raise UsageError(f"{path}: not a centered-curve CSV")
        for lineno, row in enumerate(reader, 2):
            if len(row) != 3:
                raise UsageError(f"{path}:{lineno}: expected 3 columns")
            try:
                day, value = float(row[0]), float(row[2])
            except ValueError:
                raise UsageError(f"{path}:{lineno}: non-numeric value")
            series.setdefault(row[1], ([], []))
            series[row[1]][0].append(day)
            series[row[1]][1].append(value)
    return {g: (np.array(xs), np.array(ys)) for g, (xs, ys) in series.items()}


def _read_fit_csv(path):
    """FitReport CSV back to per-label (s1, s2) point clouds."""
    series = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "elbo", "s1", "s2", "label"]:
            raise UsageError(f"{path}: not a fit-report CSV")
        for lineno, row in enumerate(reader, 2):
            if len(row) != 5:
                raise UsageError(f"{path}:{lineno}: expected 5 columns")
            try:
                s1, s2 = float(row[2]), float(row[3])
            except ValueError:
                raise UsageError(f"{path}:{lineno}: non-numeric strength")
            series.setdefault(row[4], ([], []))
            series[row[4]][0].append(s1)
            series[row[4]][1].append(s2)
    return {g: (np.array(xs), np.array(ys)) for g, (xs, ys) in series.items()}


def cmd_report(cfg):
    if cfg["curves"] is None and cfg["fit"] is None:
        raise UsageError("give --curves and/or --fit")
    made = []
    if cfg["curves"] is not None:
        series = _read_curves_csv(cfg["curves"])
        svg = report.line_chart(series, title="Mean actions per day",
                                x_label="day relative to badge",
                                y_label="mean actions")
        out = cfg["curves_svg"]
        report.write_svg(out, svg)
        made.append(out)
    if cfg["fit"] is not None:
        series = _read_fit_csv(cfg["fit"])
        svg = report.scatter_chart(series, title="Posterior steering strength",
                                   x_label="s1", y_label="s2")
        out = cfg["fit_svg"]
        report.write_svg(out, svg)
        made.append(out)
    print(f"report: wrote {', '.join(made)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# command table and entry point

_SEED = Opt("seed", _int, 0, "RNG seed (default 0)")
_THREADS = Opt("threads", _int, 1, "worker cap for parallel sections (default 1)")

COMMANDS = {
    "simulate": (
        "simulate a badge cohort and write trajectory/label files",
        cmd_simulate,
        [
            Opt("users", _int, 5000, "cohort size (default 5000)"),
            Opt("days", _int, 70, "observation window length (default 70)"),
            Opt("day0", _int, None, "badge-day index (default days//2)"),
            Opt("model", _model, 2, "generative variant 0, 1 or 2 (default 2)"),
            Opt("fractions", _floats, (0.2, 0.4, 0.4),
                "strong,non,other group fractions (default 0.2,0.4,0.4)"),
            Opt("out", _str, "trajectories.jsonl", "trajectory output path"),
            Opt("labels_out", _str, None, "optional labels output path"),
            _SEED,
            _THREADS,
        ],
    ),
    "ingest": (
        "aggregate a raw event feed into badge-centered trajectories",
        cmd_ingest,
        [
            Opt("events", _str, None, "event JSON-lines file (required)"),
            Opt("action", _str, "vote", "qualifying action type (default vote)"),
            Opt("threshold", _int, 600, "badge threshold (default 600)"),
            Opt("weeks_before", _int, 5, "window weeks before the badge (default 5)"),
            Opt("weeks_after", _int, 5, "window weeks after the badge (default 5)"),
            Opt("out", _str, "trajectories.jsonl", "trajectory output path"),
            Opt("rejects_out", _str, None, "optional rejected-user log path"),
            Opt("split_out", _str, None, "optional split-manifest path"),
            Opt("ratios", _floats, (0.6, 0.2, 0.2),
                "train,val,test split ratios (default 0.6,0.2,0.2)"),
            _SEED,
        ],
    ),
    "train": (
        "fit a model variant and write a checkpoint",
        cmd_train,
        [
            Opt("data", _str, None, "trajectory file (required)"),
            Opt("day0", _int, None, "badge-day index of the data (default days//2)"),
            Opt("model", _model, 2, "model variant 0, 1 or 2 (default 2)"),
            Opt("latent_dim", _int, 20, "latent dimension (default 20)"),
            Opt("flow_layers", _int, 12, "flow depth (default 12)"),
            Opt("lr", _float, 0.001, "Adam learning rate (default 0.001)"),
            Opt("epochs", _int, 500, "epoch cap (default 500)"),
            Opt("batch", _int, 128, "minibatch size (default 128)"),
            Opt("patience", _int, 20, "early-stop patience (default 20)"),
            Opt("out", _str, "checkpoint.json", "checkpoint output path"),
            _SEED,
        ],
    ),
    "eval": (
        "score a checkpoint on a trajectory file and write a fit report",
        cmd_eval,
        [
            Opt("data", _str, None, "trajectory file (required)"),
            Opt("checkpoint", _str, "checkpoint.json", "checkpoint path"),
            Opt("out", _str, "fit_report.csv", "fit-report CSV path"),
            Opt("summary_out", _str, None, "optional summary JSON path"),
            _SEED,
            _THREADS,
        ],
    ),
    "classify": (
        "label users from a checkpoint and print the group census",
        cmd_classify,
        [
            Opt("data", _str, None, "trajectory file (required)"),
            Opt("checkpoint", _str, "checkpoint.json", "checkpoint path"),
            Opt("out", _str, None, "optional fit-report CSV path"),
            _SEED,
            _THREADS,
        ],
    ),
    "bump": (
        "compare the analytic crossing-day bump against Monte Carlo",
        cmd_bump,
        [
            Opt("dist", _dist, None, "day-count distribution as value:prob,..."),
            Opt("weekly", _ints, None, "constant weekly schedule as day1,day2,..."),
            Opt("alpha", _float, 0.5, "active-day probability for --lam mode"),
            Opt("lam", _float, None, "Poisson rate; with --alpha gives a ZIP day count"),
            Opt("threshold", _int, 600, "badge threshold (default 600)"),
            Opt("trials", _int, 200000, "MC trials for the crossing draw (default 200000)"),
            Opt("rows", _int, 2000, "simulated users for the centered curve (default 2000)"),
            Opt("weeks_before", _int, 5, "curve window weeks before (default 5)"),
            Opt("weeks_after", _int, 5, "curve window weeks after (default 5)"),
            Opt("out", _str, "bump_table.csv", "analytic-vs-MC table path"),
            Opt("curve_out", _str, None, "optional centered-curve CSV path"),
            _SEED,
            _THREADS,
        ],
    ),
    "report": (
        "render CSV outputs from other commands to deterministic SVG charts",
        cmd_report,
        [
            Opt("curves", _str, None, "centered-curve CSV to plot"),
            Opt("curves_svg", _str, "curves.svg", "line-chart output path"),
            Opt("fit", _str, None, "fit-report CSV to plot"),
            Opt("fit_svg", _str, "strength.svg", "scatter-chart output path"),
        ],
    ),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="badgesteer",
        description="Badge-incentive activity modeling: simulation, ingestion, "
                    "variational fitting, classification, and bump analysis.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    for name, (help_text, _fn, options) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", metavar="FILE",
                        help="key=value config file; flags override it")
        for o in options:
            sp.add_argument("--" + o.name.replace("_", "-"), dest=o.name,
                            metavar="V", help=o.help)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse already printed usage/help; fold its exit code through
        return e.code
    _help, fn, options = COMMANDS[args.command]
    try:
        cfg = resolve_config(options, args)
        return fn(cfg)
    except UsageError as e:
        print(f"badgesteer {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"badgesteer {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"badgesteer {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
