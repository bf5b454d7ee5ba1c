"""Batch command line: map, assign, analyze, simulate, report, sweep, validate.

Every artifact-producing command writes into ``--out`` and leaves a
``manifest.json`` beside its outputs. Failures print one line of the form
``error: <kind>: <message>`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace

from . import __version__
from .bias import BiasError, BiasMatrix, Strategy
from .config import ConfigError, content_hash, validate_config
from .kpi import compute_kpis, export_report, tos_histogram_csv
from .mobility import EventLog, merge_logs, run_simulation
from .network import read_rsrp_csv
from .pipeline import build_map, plan
from .static import race_report


@dataclass
class RunManifest:
    command: str
    scenario: str | None
    strategy: str | None
    overrides: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    out: str = "out"
    version: str = __version__
    inputs_hash: str = ""
    outputs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def _read(path) -> str:
    try:
        with open(path, newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc.strerror}") from None


def _write(out_dir, name, text) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return name


def _hg_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated dB values, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty H_g list")
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("H_g values must be >= 0")
    return vals


def _strategy_list(text):
    try:
        return [Strategy.parse(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ---------------------------------------------------------------------------
# shared steps


class _Run:
    """State gathered while a command executes, turned into the manifest at the end."""

    def __init__(self, args):
        self.args = args
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.overrides: dict = {}
        self.scn = None
        self.scn_text = None

    def scenario(self):
        from .config import load_scenario

        if self.scn is None:
            if not self.args.scenario:
                raise CliError("usage", "--scenario is required")
            self.scn_text = _read(self.args.scenario)
            self.inputs.append(self.scn_text)
            self.scn = load_scenario(self.scn_text)
            if getattr(self.args, "seed", None) is not None:
                self.scn = replace(self.scn, seed=self.args.seed)
        return self.scn

    def rsrp_map(self):
        scn = self.scenario()
        path = getattr(self.args, "rsrp", None)
        if path:
            text = _read(path)
            self.inputs.append(text)
            return read_rsrp_csv(text, scn.grid, scn.cells)
        return build_map(scn)

    def plan_overrides(self):
        a = self.args
        kw = {}
        if getattr(a, "n_off", None) is not None:
            kw["n_off"] = a.n_off
        if getattr(a, "global_retaining", False):
            kw["global_retaining"] = True
        if getattr(a, "asyd_literal_formula", False):
            kw["asyd_literal_formula"] = True
        self.overrides.update(kw)
        return kw

    def bias(self, strategy=None):
        """Bias matrix from ``--bias``, the scenario, or a fresh plan, in that order."""
        path = getattr(self.args, "bias", None)
        scn = self.scenario()
        if path:
            text = _read(path)
            self.inputs.append(text)
            B = BiasMatrix.from_csv(text)
            if B.n != scn.n_cells:
                raise CliError("input", f"bias matrix is {B.n}x{B.n}, scenario has {scn.n_cells} cells")
            return B
        if scn.bias_matrix is not None and strategy is None:
            return scn.bias_matrix
        return plan(scn, self.rsrp_map(), strategy, **self.plan_overrides()).matrix

    def strategy(self):
        s = getattr(self.args, "strategy", None)
        if isinstance(s, list):
            s = s[0] if len(s) == 1 else None
        return s

    def finish(self, command):
        a = self.args
        strat = getattr(a, "strategy", None)
        if isinstance(strat, list):
            strat = ",".join(s.value for s in strat)
        elif strat is not None:
            strat = Strategy.parse(strat).value
        seeds = [self.scn.seed] if self.scn is not None else []
        m = RunManifest(
            command=command,
            scenario=a.scenario,
            strategy=strat,
            overrides=dict(sorted(self.overrides.items())),
            seeds=seeds,
            out=a.out,
            inputs_hash=content_hash(*self.inputs, json.dumps(self.overrides, sort_keys=True)),
            outputs=sorted(self.outputs),
        )
        _write(a.out, "manifest.json", m.to_json())
        return m


# ---------------------------------------------------------------------------
# commands


def cmd_map(run: _Run):
    rmap = run.rsrp_map()
    run.outputs.append(_write(run.args.out, "rsrp.csv", rmap.to_csv()))
    best = "".join(",".join(str(int(v)) for v in row) + "\n" for row in rmap.best_server())
    run.outputs.append(_write(run.args.out, "best_server.csv", best))


def cmd_assign(run: _Run):
    scn = run.scenario()
    strategy = run.args.strategy or scn.strategy.strategy
    p = plan(scn, run.rsrp_map(), strategy, **run.plan_overrides())
    run.outputs.append(_write(run.args.out, "bias.csv", p.matrix.to_csv()))
    summary = {
        "strategy": p.strategy.value,
        "pico_bias": {str(k): {"v": pb.v, "shortfall": pb.shortfall} for k, pb in sorted(p.pico_bias.items())},
        "v_r": {str(k): v for k, v in sorted(p.vector.v_r.items())},
        "v_o": {str(k): v for k, v in sorted(p.vector.v_o.items())},
        "neighbor_sets": p.sets.cardinality_report(),
    }
    run.outputs.append(_write(run.args.out, "bias_plan.json", json.dumps(summary, indent=2, sort_keys=True) + "\n"))


def cmd_analyze(run: _Run):
    scn = run.scenario()
    B = run.bias(run.strategy())
    hg = run.args.hg or list(scn.strategy.H_g_list)
    run.overrides["hg"] = hg
    rep = race_report(run.rsrp_map(), B, hg, scn.strategy.candidate_window_db)
    run.outputs.append(_write(run.args.out, "race_curve.csv", rep.curve_csv()))
    run.outputs.append(_write(run.args.out, "race_mask.csv", rep.mask_csv()))


def _sim_configs(run: _Run):
    scn, a = run.scenario(), run.args
    abs_cfg = scn.abs_cfg
    if a.abs_duty is not None or a.abs_residual_db is not None:
        abs_cfg = replace(
            abs_cfg,
            duty_cycle=abs_cfg.duty_cycle if a.abs_duty is None else a.abs_duty,
            residual_interference_db=abs_cfg.residual_interference_db if a.abs_residual_db is None else a.abs_residual_db,
        )
        run.overrides.update({"abs_duty": abs_cfg.duty_cycle, "abs_residual_db": abs_cfg.residual_interference_db})
    rlf = scn.rlf
    if a.no_failures:
        rlf = replace(rlf, enabled=False)
        run.overrides["failures"] = False
    return abs_cfg, rlf


def cmd_simulate(run: _Run):
    scn = run.scenario()
    B = run.bias(run.strategy())
    abs_cfg, rlf = _sim_configs(run)
    if run.args.n_ues is not None:
        run.overrides["n_ues"] = run.args.n_ues
    log = run_simulation(scn, B, abs_cfg=abs_cfg, rlf=rlf, n_ues=run.args.n_ues)
    run.outputs.append(_write(run.args.out, "events.csv", log.to_csv()))


def cmd_report(run: _Run):
    a = run.args
    logs = []
    for path in a.events:
        text = _read(path)
        run.inputs.append(text)
        try:
            logs.append(EventLog.from_csv(text))
        except (KeyError, ValueError, IndexError) as exc:
            raise CliError("input", f"{path} is not an event log ({exc})") from None
    log = merge_logs(logs) if len(logs) > 1 else logs[0]
    rep = compute_kpis(log, a.tos_threshold_ms, a.race_threshold_ms, name=a.name)
    run.overrides.update({"tos_threshold_ms": a.tos_threshold_ms, "race_threshold_ms": a.race_threshold_ms})
    ext = "json" if a.format == "json" else "csv"
    run.outputs.append(_write(a.out, f"report.{ext}", export_report(rep, a.format)))
    run.outputs.append(_write(a.out, "tos_histogram.csv", tos_histogram_csv(log)))


def cmd_sweep(run: _Run):
    scn = run.scenario()
    hg = run.args.hg or list(scn.strategy.H_g_list)
    run.overrides["hg"] = hg
    rmap = run.rsrp_map()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "H_g_dB", "race_prob_norm", "race_frac_raw"])
    if getattr(run.args, "bias", None):
        runs = [("file", run.bias())]
    else:
        strategies = run.args.strategy or [scn.strategy.strategy]
        kw = run.plan_overrides()
        runs = [(s.value, plan(scn, rmap, s, **kw).matrix) for s in strategies]
    for name, B in runs:
        for pt in race_report(rmap, B, hg, scn.strategy.candidate_window_db).curve:
            norm = "" if pt.race_prob_norm is None else repr(pt.race_prob_norm)
            w.writerow([name, repr(pt.H_g), norm, repr(pt.race_frac_raw)])
    run.outputs.append(_write(run.args.out, "sweep.csv", buf.getvalue()))


def cmd_validate(args) -> int:
    path = args.path or args.scenario
    if not path:
        raise CliError("usage", "validate needs a scenario path")
    diags = validate_config(path)
    for d in diags:
        print(d)
    return 1 if any(d.level == "error" for d in diags) else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetnet-mro", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{map,assign,analyze,simulate,report,sweep,validate}")
    sub.required = True

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, help="scenario YAML file")
            sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")

    def planning(sp, multi=False):
        stype = _strategy_list if multi else Strategy.parse
        sp.add_argument("--strategy", type=stype, help="retb, asyd, minr or min3" + (" (comma list)" if multi else ""))
        sp.add_argument("--n-off", type=int, help="offloading macros per pico")
        sp.add_argument("--global-retaining", action="store_true", help="use the serving-cell offset for retaining")
        sp.add_argument("--asyd-literal-formula", action="store_true", help="ASYD offload bias min(2 v_r - v_i, v_max)")
        sp.add_argument("--rsrp", help="RSRP map CSV written by 'map' (default: rebuild)")

    sp = sub.add_parser("map", help="build the RSRP map")
    common(sp)
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("assign", help="derive neighbor sets and assign a bias matrix")
    common(sp)
    planning(sp)
    sp.set_defaults(func=cmd_assign)

    sp = sub.add_parser("analyze", help="static race analysis")
    common(sp)
    planning(sp)
    sp.add_argument("--bias", help="bias matrix CSV written by 'assign'")
    sp.add_argument("--hg", type=_hg_list, help="global hysteresis values, e.g. 0,0.5,1,2")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("simulate", help="dynamic mobility simulation")
    common(sp)
    planning(sp)
    sp.add_argument("--bias", help="bias matrix CSV written by 'assign'")
    sp.add_argument("--abs-duty", type=float, help="ABS duty cycle in [0, 1]")
    sp.add_argument("--abs-residual-db", type=float, help="macro interference reduction in protected subframes")
    sp.add_argument("--n-ues", type=int, help="UEs per route")
    sp.add_argument("--no-failures", action="store_true", help="disable the handover-failure and RLF model")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="KPI report from event logs")
    common(sp, scenario=False)
    sp.add_argument("--events", nargs="+", required=True, help="event log CSV(s) written by 'simulate'")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--name", default="run", help="column name in the report")
    sp.add_argument("--tos-threshold-ms", type=float, default=500.0)
    sp.add_argument("--race-threshold-ms", type=float, default=200.0)
    sp.set_defaults(func=cmd_report, scenario=None)

    sp = sub.add_parser("sweep", help="race curves over H_g for one or more strategies")
    common(sp)
    planning(sp, multi=True)
    sp.add_argument("--bias", help="bias matrix CSV instead of planning")
    sp.add_argument("--hg", type=_hg_list, help="global hysteresis values, e.g. 0,0.5,1,2")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate", help="check a scenario file")
    sp.add_argument("path", nargs="?", help="scenario YAML file")
    sp.add_argument("--scenario", help="scenario YAML file")
    sp.set_defaults(func=None)
    return p


def _one_line(msg) -> str:
    return " ".join(str(msg).split())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        run = _Run(args)
        args.func(run)
        run.finish(args.command)
        return 0
    except CliError as exc:
        kind, msg = exc.kind, exc
    except ConfigError as exc:
        kind, msg = "config", exc
    except BiasError as exc:
        kind, msg = "bias", exc
    except (ValueError, KeyError) as exc:
        kind, msg = "value", exc
    except OSError as exc:
        kind, msg = "io", exc
    print(f"error: {kind}: {_one_line(msg)}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
