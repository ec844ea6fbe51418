"""Command-line entry point and the INI experiment config format.

Exit codes: 0 success, 1 configuration error, 2 invariant violation or a
failed `validate` check.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .collectors import NO_CONSUMER, PRESET_NAMES
from .engine import CostModel, seconds
from .errors import ConfigError, InvariantViolation
from .experiments import (CALIBRATION_TARGETS, PADOS_VICTIM_RATES, RQ5_SIZES_EV, HarnessResult, Setup,
                          calibrate, default_out_dir, enforce, fluid_agreement, pados_with_baseline,
                          pdos_trials, r_squared, rq1_default_rates, rq1_drop_sweep, rq1_point,
                          rq4_reduction_run, rq5_buffer_sweep)
from .workloads import MalwareSpec, ProbeSpec, ServerAppSpec, SuperProducerSpec, drive, measure_throughput

HARNESSES = ("rq1", "pdos", "pados", "rq4", "rq5", "fluid", "workload")
WORKLOAD_KINDS = ("super_producer", "server", "malware", "probe")


# -- value parsers -----------------------------------------------------------


def _int(s: str) -> int:
    try:
        return int(s.replace("_", ""))
    except ValueError:
        raise ConfigError(f"not an integer: {s!r}") from None


def _float(s: str) -> float:
    try:
        return float(s.replace("_", ""))
    except ValueError:
        raise ConfigError(f"not a number: {s!r}") from None


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _list(conv):
    def parse(s: str):
        items = [p.strip() for p in s.split(",") if p.strip()]
        if not items:
            raise ConfigError("empty list")
        return tuple(conv(p) for p in items)
    return parse


def _choice(options):
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ConfigError(f"{v!r} is not one of: {', '.join(options)}")
        return v
    return parse


_preset = _choice(PRESET_NAMES + (NO_CONSUMER,))

# section -> key -> (parser, default, help); a default of None means unset
SCHEMA = {
    "machine": {
        "cores": (_int, None, "core count; unset lets each harness pick its own layout"),
        "quantum_us": (_int, 1_000, "scheduling quantum"),
        "period_us": (_int, 100_000, "cgroup accounting period"),
        "seed": (_int, 0, "master RNG seed"),
    },
    "collector": {
        "preset": (_preset, "nodrop", f"one of {', '.join(PRESET_NAMES)}, or {NO_CONSUMER}"),
        "capacity": (_int, None, "buffer capacity in bytes (messages for audit)"),
        "growth_factor": (_int, None, "ceiling of a growing buffer as a multiple of its capacity"),
        "quota": (_float, None, "CPU quota of the collector cgroup, in (0, 1]"),
        "core": (_int, None, "core the collector threads are pinned to; default last core"),
    },
    "costs": {f.name: (_float, f.default, "microseconds") for f in fields(CostModel)},
    "experiment": {
        "harness": (_choice(HARNESSES), "rq1", ", ".join(HARNESSES)),
        "duration": (_float, 30.0, "simulated seconds per run (rq1, rq4, workload)"),
        "rates": (_list(_float), None, "rq1 rates or pados victim rates; unset uses the defaults"),
        "sizes": (_list(_int), None, "rq5 buffer sizes in events"),
        "trials": (_int, 100, "pdos trial count"),
        "scenario": (_choice(("default", "cgroup")), None, "pdos default, pados cgroup"),
        "success_any_dropped": (_bool, False, "pdos: a trial succeeds if any marker is lost"),
    },
}

WORKLOAD_SCHEMA = {
    "super_producer": {
        "processes": (_int, None, "default one per core"),
        "rate": (_float, 10_000.0, "events/s per process"),
        "write_fraction": (_float, 1.0, ""),
        "cores": (_list(_int), None, ""),
        "quota": (_float, None, "own cgroup with this CPU quota"),
    },
    "server": {
        "request_cost": (_float, 100.0, "microseconds per request"),
        "events_per_request": (_int, 0, ""),
        "rate": (_float, None, "offered requests/s; unset is closed-loop"),
        "concurrency": (_int, 1, ""),
        "cores": (_list(_int), None, ""),
        "quota": (_float, None, ""),
    },
    "malware": {
        "start_us": (_int, 0, ""),
        "markers": (_int, 5, ""),
        "gap_us": (_float, 1.0, ""),
        "core": (_int, None, ""),
        "quota": (_float, None, ""),
    },
    "probe": {
        "rate": (_float, 10_000.0, ""),
        "interval_us": (_int, 1_000, ""),
        "core": (_int, None, ""),
        "quota": (_float, None, ""),
    },
}


@dataclass
class ResolvedConfig:
    machine: dict
    collector: dict
    costs: CostModel
    experiment: dict
    workloads: list = field(default_factory=list)  # (name, kind, values)

    @property
    def preset(self) -> str:
        return self.collector["preset"]

    @property
    def seed(self) -> int:
        return self.machine["seed"]

    def setup(self) -> Setup:
        c = self.collector
        return Setup(cores=self.machine["cores"], costs=self.costs, quantum_us=self.machine["quantum_us"],
                     period_us=self.machine["period_us"], capacity=c["capacity"],
                     collector_quota=c["quota"], collector_core=c["core"], growth_factor=c["growth_factor"])


def _resolve(section: str, raw: dict, schema: dict) -> dict:
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)} in section [{section}]; "
                          f"valid keys: {', '.join(schema)}")
    out = {}
    for key, (conv, default, _) in schema.items():
        if key in raw:
            try:
                out[key] = conv(raw[key])
            except ConfigError as e:
                raise ConfigError(f"[{section}] {key}: {e}") from None
        else:
            out[key] = default
    return out


def parse_config_text(text: str) -> ResolvedConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   default_section="\0")
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    sections = {}
    workloads = []
    for name in cp.sections():
        raw = dict(cp[name])
        if name.startswith("workload."):
            wname = name.split(".", 1)[1]
            if not wname:
                raise ConfigError("workload section needs a name: [workload.<name>]")
            kind = raw.pop("kind", None)
            if kind not in WORKLOAD_SCHEMA:
                raise ConfigError(f"[{name}] kind must be one of {', '.join(WORKLOAD_KINDS)}, got {kind!r}")
            workloads.append((wname, kind, _resolve(name, raw, WORKLOAD_SCHEMA[kind])))
        elif name in SCHEMA:
            sections[name] = raw
        else:
            raise ConfigError(f"unknown section [{name}]; valid: {', '.join(SCHEMA)}, workload.<name>")
    vals = {s: _resolve(s, sections.get(s, {}), SCHEMA[s]) for s in SCHEMA}
    costs = CostModel(**vals["costs"])
    exp = vals["experiment"]
    if workloads and "harness" not in sections.get("experiment", {}):
        exp["harness"] = "workload"
    if exp["harness"] == "workload" and not workloads:
        raise ConfigError("harness workload needs at least one [workload.<name>] section")
    if workloads and exp["harness"] != "workload":
        raise ConfigError(f"[workload.*] sections only apply to harness workload, not {exp['harness']}")
    return ResolvedConfig(vals["machine"], vals["collector"], costs, exp, workloads)


def parse_config(path) -> ResolvedConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config file is not UTF-8: {p}") from None
    return parse_config_text(text)


def defaults_text() -> str:
    lines = ["# audit-arena configuration; every key below shows its default", ""]
    for section, schema in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, help_) in schema.items():
            lines.append(_default_line(key, default, help_))
        lines.append("")
    lines.append("# workloads (harness = workload); one section per app, kind selects the keys")
    for kind, schema in WORKLOAD_SCHEMA.items():
        lines.append(f"# [workload.my_{kind}]")
        lines.append(f"# kind = {kind}")
        for key, (_, default, help_) in schema.items():
            lines.append("# " + _default_line(key, default, help_))
        lines.append("")
    return "\n".join(lines)


def _default_line(key, default, help_) -> str:
    if default is None:
        line = f"# {key} ="
    elif isinstance(default, tuple):
        line = f"{key} = {', '.join(str(v) for v in default)}"
    elif isinstance(default, bool):
        line = f"{key} = {str(default).lower()}"
    else:
        line = f"{key} = {default}"
    return f"{line}  # {help_}" if help_ else line


# -- harness dispatch ------------------------------------------------------------


def run_harness(cfg: ResolvedConfig) -> tuple[HarnessResult, str]:
    """Run the configured harness; returns the result and a one-line summary."""
    exp = cfg.experiment
    setup = cfg.setup()
    name, seed = cfg.preset, cfg.seed
    h = exp["harness"]
    if h == "rq1":
        rates = exp["rates"] or rq1_default_rates(cfg.costs)
        res = rq1_drop_sweep(name, rates, exp["duration"], seed, setup)
        return res, f"dropped {sum(r[3] for r in res.rows)} of {sum(r[1] for r in res.rows)} events"
    if h == "pdos":
        res = pdos_trials(name, exp["trials"], seed, exp["scenario"] or "default",
                          exp["success_any_dropped"], setup)
        return res, f"success {res.summary['successes']}/{res.summary['trials']}"
    if h == "pados":
        res = pados_with_baseline(name, exp["scenario"] or "cgroup", exp["rates"] or PADOS_VICTIM_RATES,
                                  seed, setup)
        worst = max(r[3] for r in res.rows)
        return res, f"worst target loss {worst:.1%}"
    if h == "rq4":
        res = rq4_reduction_run(duration=exp["duration"], seed=seed, setup=setup)
        row = res.rows[0]
        return res, f"realized/offered {row[3]:.4f}, downstream/recorded {row[6]:.4f}"
    if h == "rq5":
        res = rq5_buffer_sweep(name, exp["sizes"] or RQ5_SIZES_EV, seed=seed, setup=setup)
        fit = r_squared([r[1] for r in res.rows], [r[6] for r in res.rows])
        return res, f"first-drop fit r^2 {fit:.6f}"
    if h == "fluid":
        res = fluid_agreement(duration=exp["duration"], seed=seed, setup=setup)
        return res, f"max abs error {max(r[5] for r in res.rows):.6f}"
    return _run_workloads(cfg, setup)


WORKLOAD_COLUMNS = ("workload", "kind", "events", "completed", "requests_per_s", "events_per_s")


def _run_workloads(cfg: ResolvedConfig, setup: Setup) -> tuple[HarnessResult, str]:
    duration = cfg.experiment["duration"]
    m = setup.machine(1, cfg.seed)
    setup.install(m, cfg.preset)
    apps = []
    for wname, kind, v in cfg.workloads:
        cg = 0 if v["quota"] is None else m.add_cgroup(v["quota"])
        if kind == "super_producer":
            spec = SuperProducerSpec(v["processes"], v["write_fraction"], v["rate"], duration, cg, v["cores"])
        elif kind == "server":
            spec = ServerAppSpec(wname, v["request_cost"], v["events_per_request"], v["rate"], v["concurrency"],
                                 cg, v["cores"])
        elif kind == "malware":
            spec = MalwareSpec(v["start_us"], v["markers"], v["gap_us"], cg, v["core"])
        else:
            spec = ProbeSpec(v["rate"], v["interval_us"], cg, v["core"])
        app = drive(spec, m)
        app.mark(m)
        apps.append((wname, kind, app))
    m.run_until(seconds(duration))
    for _, _, app in apps:
        app.mark(m)
    m.finish()
    enforce(m)
    rows = []
    for wname, kind, app in apps:
        tp = measure_throughput(app, (0, seconds(duration)))
        rows.append((wname, kind, app.events(), app.completed(), tp.requests_per_s, tp.events_per_s))
    c = m.counters
    return (HarnessResult("workload", cfg.preset, cfg.seed, WORKLOAD_COLUMNS, rows),
            f"generated {c.generated}, dropped {c.dropped}")


def validate(out=sys.stdout) -> bool:
    """Oracle-agreement checks on a default setup; prints one line per check."""
    checks = []
    fl = fluid_agreement()
    for lam, b, _, frac, oracle, err in fl.rows:
        checks.append((f"fluid lambda={lam:g} B={b}", err <= 0.01, f"sim {frac:.5f} oracle {oracle:.5f}"))
    r5 = rq5_buffer_sweep("sysdig")
    fit = r_squared([r[1] for r in r5.rows], [r[6] for r in r5.rows])
    checks.append(("first drop linear in buffer size", fit > 0.999, f"r^2 {fit:.6f}"))
    worst = max(abs(r[5] - 0.9) for r in r5.rows)
    checks.append(("drop fraction near 0.9 at 100x fill time", worst <= 0.02, f"max deviation {worst:.4f}"))
    top = rq1_default_rates()[-1]
    row, _ = rq1_point("nodrop", top, 5.0)
    checks.append((f"nodrop zero drops at {top:g} ev/s", row[3] == 0 and row[2] == row[1],
                   f"generated {row[1]} dropped {row[3]}"))
    for label, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}", file=out)
    return all(ok for _, ok, _ in checks)


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="audit-arena", description="Simulate provenance auditing pipelines under attack.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default $AUDIT_ARENA_OUT or ./results)")
    for h in ("rq1", "pdos", "pados", "rq4", "rq5"):
        sp = sub.add_parser(h, help=f"run the {h} harness with default settings")
        sp.add_argument("--preset", type=str)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--config", help="start from this config instead of the defaults")
        if h == "pdos":
            sp.add_argument("--trials", type=int)
            sp.add_argument("--scenario", choices=("default", "cgroup"))
            sp.add_argument("--success-any-dropped", action="store_true")
        if h == "pados":
            sp.add_argument("--scenario", choices=("default", "cgroup"))
    sub.add_parser("validate", help="run the oracle-agreement checks")
    sub.add_parser("print-defaults", help="print a config file holding every default")
    cal = sub.add_parser("calibrate", help="print a config snippet that meets a calibration target")
    cal.add_argument("target", choices=CALIBRATION_TARGETS)
    return p


def _from_flags(args) -> ResolvedConfig:
    cfg = parse_config(args.config) if args.config else parse_config_text("")
    cfg.experiment["harness"] = args.cmd
    cfg.workloads = []
    if args.preset is not None:
        cfg.collector["preset"] = _preset(args.preset)
    if args.seed is not None:
        cfg.machine["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        cfg.experiment["trials"] = args.trials
    if getattr(args, "scenario", None):
        cfg.experiment["scenario"] = args.scenario
    if getattr(args, "success_any_dropped", False):
        cfg.experiment["success_any_dropped"] = True
    return cfg


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _build_parser().parse_args(argv)
        if args.cmd == "print-defaults":
            print(defaults_text())
            return 0
        if args.cmd == "validate":
            return 0 if validate() else 2
        if args.cmd == "calibrate":
            cal = calibrate(args.target)
            print(f"# {cal.target}: {cal.message}")
            print(cal.snippet(), end="")
            return 0 if cal.feasible else 1
        cfg = parse_config(args.config) if args.cmd == "run" else _from_flags(args)
        res, line = run_harness(cfg)
        path = res.write_csv(args.out or default_out_dir())
        print(f"wrote {path}")
        print(line)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
