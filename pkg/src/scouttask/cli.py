"""Command-line entry point: ``scouttask {run,validate,plot,sweep}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from scouttask.engine.config import SWEEP_ALIASES, ConfigError, load_scenario
from scouttask.engine.metrics import SUMMARY_FORMAT, read_metrics_csv
from scouttask.engine.sim import Simulation, SimulationError
from scouttask.plots import PLOT_KINDS, write_plots

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunOptions:
    subcommand: str
    scenarios: list[Path] = field(default_factory=list)
    seed: int | None = None
    out: Path = Path("out")
    ticks: int | None = None
    plots: list[str] = field(default_factory=list)
    sweep: tuple[str, list[str]] | None = None
    seeds: int = 1

    @property
    def scenario(self) -> Path:
        return self.scenarios[0]


def _plot_list(text: str | None) -> list[str]:
    if not text:
        return []
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    if kinds == ["all"]:
        return list(PLOT_KINDS)
    bad = [k for k in kinds if k not in PLOT_KINDS]
    if bad:
        raise UsageError(f"unknown plot kind(s) {', '.join(bad)}; choose from {', '.join(PLOT_KINDS)}")
    return kinds


def _parse_sweep(text: str | None) -> tuple[str, list[str]]:
    if not text or "=" not in text:
        raise UsageError("--sweep expects AXIS=V1,V2,...")
    axis, _, values = text.partition("=")
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not axis.strip():
        raise UsageError("--sweep axis is empty")
    if not vals:
        raise UsageError(f"--sweep axis {axis} has no values")
    return axis.strip(), vals


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(opts: RunOptions) -> dict:
    out = {}
    if opts.seed is not None:
        out["seed"] = opts.seed
    if opts.ticks is not None:
        out["ticks"] = opts.ticks
    return out


def _write_run(sim: Simulation, out: Path, plots: list[str]) -> None:
    sim.write_outputs(out)
    if plots:
        ids, rows = read_metrics_csv(out / "metrics.csv")
        write_plots(out, plots, sim.summary(), ids, rows)


# -- subcommands --------------------------------------------------------------

def cmd_run(opts: RunOptions) -> int:
    cfg = load_scenario(opts.scenario, _overrides(opts))
    sim = Simulation(cfg)
    sim.run()
    _write_run(sim, opts.out, opts.plots)
    s = sim.summary()
    done = sum(t["confirmed_tick"] is not None for t in s["targets"])
    print(f"{cfg.name}: {done}/{len(s['targets'])} targets confirmed in {s['ticks_run']} ticks; "
          f"outputs in {opts.out}")
    return EXIT_OK


def cmd_validate(opts: RunOptions) -> int:
    failed = False
    for path in opts.scenarios:
        try:
            cfg = load_scenario(path)
        except ConfigError as exc:
            failed = True
            for msg in exc.messages:
                print(msg, file=sys.stderr)
            continue
        print(f"{path}: ok ({len(cfg.robots)} robots, {len(cfg.world.targets)} targets)")
    return EXIT_CONFIG if failed else EXIT_OK


def cmd_plot(opts: RunOptions) -> int:
    metrics, summary_path = opts.out / "metrics.csv", opts.out / "summary.json"
    missing = [str(p) for p in (metrics, summary_path) if not p.is_file()]
    if missing:
        raise UsageError(f"missing input(s): {', '.join(missing)}")
    summary = json.loads(summary_path.read_text())
    if summary.get("format") != SUMMARY_FORMAT:
        raise UsageError(f"{summary_path}: unsupported summary format {summary.get('format')!r}")
    ids, rows = read_metrics_csv(metrics)
    for path in write_plots(opts.out, opts.plots or list(PLOT_KINDS), summary, ids, rows):
        print(path)
    return EXIT_OK


SWEEP_COLUMNS = ["axis", "value", "seed", "ticks_run", "all_confirmed", "targets_confirmed",
                 "mean_confirm_tick", "messages_sent", "messages_dropped", "mean_final_pose_error_m"]


def cmd_sweep(opts: RunOptions) -> int:
    axis, values = opts.sweep
    base = load_scenario(opts.scenario, _overrides(opts))
    seeds = [base.seed + i for i in range(opts.seeds)]
    # validate every combination before running anything
    configs = []
    for v in values:
        for seed in seeds:
            over = {**_overrides(opts), axis: _parse_value(v), "seed": seed}
            configs.append((v, seed, load_scenario(opts.scenario, over)))
    opts.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v, seed, cfg in configs:
        sim = Simulation(cfg)
        sim.run()
        _write_run(sim, opts.out / f"{axis}={v}" / f"seed={seed}", [])
        s = sim.summary()
        ticks = [t["confirmed_tick"] for t in s["targets"] if t["confirmed_tick"] is not None]
        errs = list(s["localisation"]["final_pose_error_m"].values())
        rows.append({
            "axis": axis, "value": v, "seed": seed, "ticks_run": s["ticks_run"],
            "all_confirmed": s["all_confirmed"], "targets_confirmed": len(ticks),
            "mean_confirm_tick": sum(ticks) / len(ticks) if ticks else "",
            "messages_sent": s["messages"]["sent"], "messages_dropped": s["messages"]["dropped"],
            "mean_final_pose_error_m": sum(errs) / len(errs) if errs else "",
        })
    with open(opts.out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for v in values:
        sel = [r for r in rows if r["value"] == v and r["mean_confirm_tick"] != ""]
        mean = sum(r["mean_confirm_tick"] for r in sel) / len(sel) if sel else float("nan")
        print(f"{axis}={v}: mean confirmation tick {mean:.1f} over {len(sel)} run(s)")
    print(f"wrote {len(rows)} rows to {opts.out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "plot": cmd_plot, "sweep": cmd_sweep}


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scouttask", description=__doc__)
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--scenario", type=Path, required=True, help="scenario YAML file")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--ticks", type=int, help="override the tick budget")
        sp.add_argument("--out", type=Path, default=Path(out_default), help="output directory")

    run = sub.add_parser("run", help="run a scenario and write metrics")
    common(run)
    run.add_argument("--plots", help=f"comma list of {','.join(PLOT_KINDS)} or 'all'")

    val = sub.add_parser("validate", help="check scenario files")
    val.add_argument("--scenario", type=Path, action="append", required=True,
                     help="scenario YAML file (repeatable)")

    plot = sub.add_parser("plot", help="render SVG plots from a run directory")
    plot.add_argument("--out", type=Path, required=True, help="run output directory")
    plot.add_argument("--plots", help=f"comma list of {','.join(PLOT_KINDS)} (default all)")

    sweep = sub.add_parser("sweep", help="run a scenario over one axis and several seeds")
    common(sweep, "sweep_out")
    sweep.add_argument("--sweep", required=True,
                       help=f"AXIS=V1,V2,... (AXIS: {', '.join(SWEEP_ALIASES)} or a dotted path)")
    sweep.add_argument("--seeds", type=int, default=1, help="seeds per value, from the base seed")
    return p


def parse_options(argv: list[str] | None) -> RunOptions:
    ns = build_parser().parse_args(argv)
    opts = RunOptions(ns.subcommand)
    scen = getattr(ns, "scenario", None)
    opts.scenarios = scen if isinstance(scen, list) else ([scen] if scen else [])
    opts.seed = getattr(ns, "seed", None)
    opts.ticks = getattr(ns, "ticks", None)
    opts.out = ns.out if getattr(ns, "out", None) is not None else opts.out
    opts.plots = _plot_list(getattr(ns, "plots", None))
    if ns.subcommand == "sweep":
        opts.sweep = _parse_sweep(ns.sweep)
        if ns.seeds < 1:
            raise UsageError("--seeds must be >= 1")
        opts.seeds = ns.seeds
    if opts.ticks is not None and opts.ticks < 0:
        raise UsageError("--ticks must be >= 0")
    if opts.subcommand in ("run", "sweep") and opts.out.exists() and not opts.out.is_dir():
        raise UsageError(f"--out {opts.out} is not a directory")
    return opts


def main(argv: list[str] | None = None) -> int:
    try:
        opts = parse_options(argv)
        return COMMANDS[opts.subcommand](opts)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
