"""Command-line entry point: ``trailsim {run,compare-energy,sweep-attributes,rank-features}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import ScenarioConfig, load_scenario
from .engine import Aggregate, RunResult, compare_energy, replicate, run, seed_list
from .errors import ConfigError, TrailSimError, UnknownAttribute
from .metrics import feature_importance, mean_std
from .population import CATEGORICAL

log = logging.getLogger("trailsim")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

# named attribute sets understood by --attributes
WITH_ETA = ("with-eta", "with-timestamp")
NO_ETA = ("no-eta", "no-timestamp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def fmt(x) -> str:
    """CSV cell text: ints as-is, floats to 6 significant digits, None empty."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".6g")
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


# -- run ---------------------------------------------------------------------

def write_run(result: RunResult, out: Path, emit_truth: bool = False, always_on=()) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    reg = result.registry
    header = ["obs_id", "sensor_id", "a", "depart_tick", "speed", *CATEGORICAL, "user_id", "linked_from"]
    if emit_truth:
        header.append("truth_id")
    rows = []
    for o in result.observations:
        row = [o.obs_id, o.sensor_id, o.a, o.depart_tick, o.perceived.speed,
               *(o.perceived.get(a) for a in CATEGORICAL),
               reg.obs_assignment.get(o.obs_id), reg.links.get(o.obs_id)]
        if emit_truth:
            row.append(o.truth_id)
        rows.append(row)
    paths = [write_csv(out / "observations.csv", header, rows)]

    trail_rows = []
    for uid in sorted(reg.trails):
        for step, ((sid, tick), oid) in enumerate(zip(reg.trails[uid], reg.trail_obs[uid])):
            trail_rows.append([uid, step, sid, tick, oid])
    paths.append(write_csv(out / "trails.csv", ["user_id", "step", "sensor_id", "tick", "obs_id"], trail_rows))

    always = set(always_on)
    paths.append(write_csv(out / "energy.csv", ["sensor_id", "always_on", "mode", "units"],
                           [[s, s in always, result.mode, u] for s, u in sorted(result.energy.units.items())]))

    a = result.accuracy
    paths.append(write_csv(
        out / "summary.csv",
        ["scenario", "seed", "mode", "unique_count", "true_count", "count_accuracy", "falsely_new",
         "wrongly_merged", "correctly_merged", "correctly_new", "trail_exact_fraction", "observations",
         "mean_energy_units"],
        [[result.scenario, result.seed, result.mode, a.unique_count, a.true_count, a.count_accuracy,
          a.falsely_new, a.wrongly_merged, a.correctly_merged, a.correctly_new, a.trail_exact_fraction,
          len(result.observations), result.energy.mean_units]]))

    msg_rows = []
    for m, fate in zip(result.messages, result.fates):
        attrs = ";".join(f"{k}={v}" for k, v in m.selected_attrs)
        msg_rows.append([m.origin_sensor, m.origin_obs_id, m.target_sensor, m.emitted, m.eta,
                         m.window[0], m.window[1], m.speed, attrs, fate])
    paths.append(write_csv(out / "messages.csv",
                           ["origin_sensor", "origin_obs_id", "target_sensor", "emitted", "eta",
                            "window_lo", "window_hi", "speed", "attributes", "fate"], msg_rows))
    return paths


def write_replications(agg: Aggregate, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    header = ["scenario", "seed", "mode", "unique_count", "true_count", "count_accuracy", "falsely_new",
              "wrongly_merged", "trail_exact_fraction", "mean_energy_units", "error"]
    rows = [[r.scenario, r.seed, r.mode, r.unique_count, r.true_count, r.count_accuracy, r.falsely_new,
             r.wrongly_merged, r.trail_exact_fraction, r.mean_energy if r.error is None else None, r.error]
            for r in agg.runs]
    paths = [write_csv(out / "summary.csv", header, rows)]
    stats = []
    for name in ("count_accuracy", "unique_count", "falsely_new", "wrongly_merged", "trail_exact_fraction",
                 "mean_energy"):
        m, s = mean_std(agg.values(name))
        stats.append([name, len(agg.ok), m, s])
    paths.append(write_csv(out / "aggregate.csv", ["metric", "runs", "mean", "std"], stats))
    return paths


def cmd_run(args, config: ScenarioConfig) -> int:
    out = Path(args.out)
    if args.replications == 1:
        result = run(config, args.seed)
        write_run(result, out, args.emit_truth, config.graph.terminals)
        print(f"unique_count {result.accuracy.unique_count}")
        print(f"count_accuracy {fmt(result.accuracy.count_accuracy)}")
        return EXIT_OK
    agg = replicate(config, seed_list(args.replications, args.seed), jobs=args.jobs)
    write_replications(agg, out)
    for r in agg.errors:
        print(f"seed {r.seed}: {r.error}", file=sys.stderr)
    print(f"unique_count {fmt(agg.mean('unique_count'))}")
    print(f"count_accuracy {fmt(agg.mean('count_accuracy'))} +/- {fmt(agg.std('count_accuracy'))}")
    return EXIT_OK if agg.ok else EXIT_RUNTIME


# -- compare-energy ----------------------------------------------------------

def cmd_compare_energy(args, config: ScenarioConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cmp = compare_energy(config, seed_list(args.replications, args.seed), jobs=args.jobs)
    on_means = [r.mean_energy for r in cmp.on.ok]
    duty_means = [r.mean_energy for r in cmp.duty.ok]
    saving, saving_sd = cmp.mean_saving()
    on_m, on_sd = mean_std(on_means)
    duty_m, duty_sd = mean_std(duty_means)
    write_csv(out / "energy_compare.csv",
              ["scenario", "mode", "replications", "mean_units_per_sensor", "std_units_per_sensor",
               "saving_percent", "saving_std"],
              [[config.name, "always_on", len(on_means), on_m, on_sd, None, None],
               [config.name, "duty_cycle", len(duty_means), duty_m, duty_sd, saving, saving_sd]])

    on_by, duty_by, save_by = cmp.on.energy_by_sensor(), cmp.duty.energy_by_sensor(), cmp.saving_by_sensor()
    terminals = set(config.graph.terminals)
    rows = []
    for s in config.graph.sensor_ids:
        rows.append([s, s in terminals, *on_by.get(s, (None, None)), *duty_by.get(s, (None, None)),
                     *save_by.get(s, (None, None))])
    write_csv(out / "energy_by_sensor.csv",
              ["sensor_id", "always_on", "always_on_mean", "always_on_std", "duty_cycle_mean",
               "duty_cycle_std", "saving_percent", "saving_std"], rows)
    print(f"{'mode':<12}{'units/sensor':>14}{'saving %':>10}")
    print(f"{'always-on':<12}{fmt(on_m):>14}{'':>10}")
    print(f"{'duty-cycle':<12}{fmt(duty_m):>14}{fmt(saving):>10}")
    return EXIT_OK if cmp.on.ok and cmp.duty.ok else EXIT_RUNTIME


# -- sweep-attributes --------------------------------------------------------

def parse_attribute_set(spec: str, config: ScenarioConfig) -> tuple[str, ScenarioConfig]:
    """Turn one --attributes value into (label, configured scenario)."""
    name = spec.strip()
    if name in WITH_ETA:
        return name, config.with_eta_gating(True)
    if name in NO_ETA:
        return name, config.with_eta_gating(False)
    if name == "all":
        return name, config.with_catalog(CATEGORICAL)
    attrs = [a.strip() for a in name.split(",") if a.strip()]
    if not attrs:
        raise UsageError(f"empty attribute set {spec!r}")
    for a in attrs:
        if a not in CATEGORICAL:
            raise UnknownAttribute(f"unknown attribute {a!r}; known: {', '.join(CATEGORICAL)}")
    return ",".join(attrs), config.with_catalog(attrs)


def cmd_sweep_attributes(args, config: ScenarioConfig) -> int:
    if not args.attributes:
        raise UsageError("sweep-attributes needs at least one --attributes set")
    sets = [parse_attribute_set(s, config) for s in args.attributes]
    seeds = seed_list(args.replications, args.seed)
    rows = []
    for order, (label, cfg) in enumerate(sets):
        agg = replicate(cfg, seeds, jobs=args.jobs)
        m, s = mean_std(agg.values("count_accuracy"))
        rows.append((label, ",".join(cfg.catalog), cfg.protocol.tolerance.eta_gating, len(agg.ok), m, s, order))
    rows.sort(key=lambda r: (-r[4] if not math.isnan(r[4]) else math.inf, r[6]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep.csv", ["set", "catalog", "eta_gating", "replications", "mean_accuracy", "std_accuracy"],
              [r[:6] for r in rows])
    width = max(len(r[0]) for r in rows)
    for r in rows:
        print(f"{r[0]:<{width}}  {fmt(r[4])} +/- {fmt(r[5])}")
    return EXIT_OK


# -- rank-features -----------------------------------------------------------

def bar_table(ranked, width: int = 40) -> str:
    """Aligned plain-text bars, one line per attribute."""
    if not ranked:
        return ""
    name_w = max(len(n) for n, _, _ in ranked)
    top = max(abs(d) for _, d, _ in ranked) or 1.0
    lines = []
    for name, drop, rank in ranked:
        n = int(round(width * abs(drop) / top))
        bar = ("#" if drop >= 0 else "-") * n
        lines.append(f"{rank:>2}  {name:<{name_w}}  {drop:+.4f}  {bar}")
    return "\n".join(lines) + "\n"


def cmd_rank_features(args, config: ScenarioConfig) -> int:
    catalog = config.catalog
    if args.attributes:
        label, cfg = parse_attribute_set(args.attributes[-1], config)
        catalog = cfg.catalog
    ranked = feature_importance(config, catalog, seed_list(args.replications, args.seed), jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "importance.csv", ["rank", "attribute", "accuracy_drop"],
              [[rank, name, drop] for name, drop, rank in ranked])
    table = bar_table(ranked)
    (out / "importance.txt").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare-energy": cmd_compare_energy,
    "sweep-attributes": cmd_sweep_attributes,
    "rank-features": cmd_rank_features,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help="scenario file, or a bundled name (linear, nonlinear)")
    common.add_argument("--seed", type=int, default=None,
                        help="base seed (default: $TRAILSIM_SEED, else 0)")
    common.add_argument("--replications", type=int, default=None,
                        help="number of seeded runs (default 1 for run, 100 otherwise)")
    common.add_argument("--mode", choices=["always-on", "duty-cycle"], default=None)
    common.add_argument("--attributes", action="append", default=[],
                        help="attribute set: with-eta, no-eta, all, or a comma list; repeatable")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=0, help="worker processes (0 = all cores)")
    common.add_argument("--emit-truth", action="store_true", help="add ground-truth ids to observations.csv")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="trailsim", description="Unique-user counting on sensor-instrumented trails.")
    parser.add_argument("--version", action="version", version=f"trailsim {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("run", parents=[common], help="simulate and write per-run CSVs")
    sub.add_parser("compare-energy", parents=[common], help="duty-cycle vs always-on energy table")
    sub.add_parser("sweep-attributes", parents=[common], help="accuracy per attribute set")
    sub.add_parser("rank-features", parents=[common], help="leave-one-out attribute importance")
    return parser


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("TRAILSIM_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"TRAILSIM_SEED must be an integer, got {env!r}") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.seed = _resolve_seed(args.seed)
        if args.replications is None:
            args.replications = 1 if args.command == "run" else 100
        if args.replications < 1:
            raise UsageError("--replications must be at least 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_scenario(args.scenario)
        if args.mode:
            config = config.with_mode(args.mode)
        return COMMANDS[args.command](args, config)
    except (UsageError, ConfigError) as exc:
        print(f"trailsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrailSimError as exc:
        print(f"trailsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"trailsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
