"""Command-line entry point: ``hybridband {verify,bench,simulate,microbench,report}``.

Settings are resolved as flags > environment > ``--config`` file > defaults.
The environment may only set the output directory (``HYBRIDBAND_OUTPUT_DIR``)
and the thread cap (``HYBRIDBAND_THREADS``).

Exit status: 0 on success, 2 for configuration errors, 3 when a verified
invariant fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError
from .scheduling import CostModel, Group, Scheme, WorkerTopology

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

ENV_OUTPUT = "HYBRIDBAND_OUTPUT_DIR"
ENV_THREADS = "HYBRIDBAND_THREADS"

DEFAULTS = {
    "scenario": None,
    "n": 64,
    "n_k": 8,
    "seed": 0,
    "spin_mode": "collinear-two-channel",
    "neighbor_strength": 0.1,
    "topology": None,
    "groups": "4d",
    "schemes": "RankOnly,ThreadOnly,ThreeWayHybrid,TwoWayRankDevice",
    "mode": "modeled",
    "output_dir": "hybridband-out",
    "repeats": 3,
    "device_weight": 4.0,
    "threads": 4,
    "dynamic": False,
}

log = logging.getLogger("hybridband")


def parse_groups(spec: str) -> tuple:
    """``"4d,4d"`` -> two 4-core groups with devices; ``"4"`` has none."""
    groups = []
    for part in spec.split(","):
        part = part.strip().lower()
        if not part:
            continue
        device = part.endswith("d")
        try:
            cores = int(part[:-1] if device else part)
        except ValueError:
            raise ConfigError(f"bad group spec {part!r}; use e.g. 4d,4d") from None
        groups.append(Group(cores, device))
    if not groups:
        raise ConfigError("empty group spec")
    return tuple(groups)


def load_topology(path) -> tuple[WorkerTopology, CostModel]:
    """Topology file: ``{"groups": [{"cores": 4, "device": true}], "scheme": ...,
    "cost_model": {...}}``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"topology file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"topology file {path} is not valid JSON: {exc}") from None
    try:
        topo = WorkerTopology.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad topology file {path}: {exc}") from None
    return topo, CostModel.from_dict(data.get("cost_model", {}))


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg.update(data)
    if os.environ.get(ENV_OUTPUT):
        cfg["output_dir"] = os.environ[ENV_OUTPUT]
    if os.environ.get(ENV_THREADS):
        try:
            cfg["threads"] = int(os.environ[ENV_THREADS])
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer") from None
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["mode"] not in ("modeled", "measured"):
        raise ConfigError(f"mode must be modeled or measured, not {cfg['mode']!r}")
    if int(cfg["threads"]) < 1 or int(cfg["repeats"]) < 1:
        raise ConfigError("threads and repeats must be >= 1")
    return cfg


def _topology(cfg) -> tuple[WorkerTopology, CostModel]:
    if cfg["topology"]:
        return load_topology(cfg["topology"])
    return WorkerTopology(parse_groups(cfg["groups"])), CostModel()


def _scenario(cfg):
    from .scenario import ScenarioParams, build_scenario, load_scenario_params

    if cfg["scenario"]:
        params = load_scenario_params(cfg["scenario"])
    else:
        params = ScenarioParams(int(cfg["n"]), int(cfg["n_k"]), int(cfg["seed"]),
                                cfg["spin_mode"], float(cfg["neighbor_strength"]))
    return build_scenario(params)


def _schemes(cfg) -> list[Scheme]:
    names = cfg["schemes"]
    if isinstance(names, str):
        names = [s for s in names.split(",") if s.strip()]
    out = []
    for s in names:
        try:
            out.append(Scheme(s.strip()))
        except ValueError:
            raise ConfigError(f"unknown scheme {s!r}; choose from "
                              f"{', '.join(x.value for x in Scheme)}") from None
    return out


def _outdir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_verify(args) -> int:
    from .householder import inject_fault
    from .verify import run_checks

    faults = args.inject_fault or []
    for f in faults:
        if f != "p6_sign":
            raise ConfigError(f"unknown fault {f!r}")
    if faults:
        with inject_fault(faults[0]):
            results = run_checks(args.seed or 0)
    else:
        results = run_checks(args.seed or 0)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"invariant failure: {', '.join(failed)}")
        return EXIT_INVARIANT
    print(f"all {len(results)} invariants hold")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .perf import profile_run, write_json, write_report_csv

    cfg = resolve(args)
    topo, cm = _topology(cfg)
    schemes = _schemes(cfg)
    for s in schemes:
        topo.with_scheme(s)  # reject invalid pairings before any work
    scenario = _scenario(cfg)
    out = _outdir(cfg)
    reports, profiles = [], {}
    for s in schemes:
        ledger, report, _ = profile_run(scenario, topo, s, mode=cfg["mode"], cm=cm,
                                        repeats=int(cfg["repeats"]),
                                        device_weight=float(cfg["device_weight"]),
                                        dynamic=bool(cfg["dynamic"]))
        reports.append(report)
        shares = ledger.shares(cfg["mode"], cm)
        profiles[s.value] = {"part_shares_percent": shares,
                             "eigen_shares_percent": ledger.eigen_shares(cfg["mode"], cm)}
        log.info("%s: %.4g s, speedup %.3f", s.value, report.seconds, report.speedup)
    text = write_report_csv(reports, out / "bench.csv")
    summary = {"scenario": scenario.params.to_dict(), "topology": topo.to_dict(),
               "cost_model": cm.to_dict(), "mode": cfg["mode"], "profiles": profiles}
    write_json(summary, out / "bench.json")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .perf import write_json
    from .scheduling import memory_estimate, plan_scheme, simulate_plan

    cfg = resolve(args)
    topo, cm = _topology(cfg)
    scheme = Scheme(args.scheme) if args.scheme else topo.scheme
    topo = topo.with_scheme(scheme)
    spins = 2 if cfg["spin_mode"] == "collinear-two-channel" else 1
    plan = plan_scheme(topo, int(cfg["n_k"]), spins, cm,
                       device_weight=float(cfg["device_weight"]), dynamic=bool(cfg["dynamic"]))
    dump = {"plan": plan.to_dict(), "cost_model": cm.to_dict()}
    mem = memory_estimate(topo, int(cfg["n"]), int(cfg["n_k"]), spins=spins)
    dump["memory"] = {"replicated": mem.replicated, "shared": mem.shared, "total": mem.total}
    if args.run:
        from .pipeline import band_dft_col

        sc = _scenario(cfg)
        if len(sc.kset) != int(cfg["n_k"]) or sc.occ.spin_mode.channels != spins:
            raise ConfigError("scenario k-points or spin mode disagree with the plan")
        res = band_dft_col(sc.hams, sc.overlap, sc.kset, sc.occ, plan)
        sim = simulate_plan(plan, res.workload, cm)
        dump["makespan"] = sim.makespan
        dump["worker_times"] = {str(p): v for p, v in sim.worker_times.items()}
        dump["coordinator_times"] = sim.coordinator_times
    write_json(dump, _outdir(cfg) / "plan.json")
    print(json.dumps(dump["plan"]["kpoints_per_worker"]))
    if "makespan" in dump:
        print(f"modeled makespan {dump['makespan']:.6g} s")
    return EXIT_OK


def cmd_microbench(args) -> int:
    from .perf import DEFAULT_MICROBENCH_N, microbench_normalize

    cfg = resolve(args)
    n_list = args.sizes or list(DEFAULT_MICROBENCH_N)
    table = microbench_normalize(n_list, threads=int(cfg["threads"]),
                                 repeats=int(cfg["repeats"]))
    text = table.csv()
    (_outdir(cfg) / "microbench.csv").write_text(text)
    sys.stdout.write(text)
    print(f"device kernel faster than {table.threads}-thread host from n = {table.crossover}; "
          f"including transfers from n = {table.crossover_with_transfer}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .perf import REPORT_COLUMNS, read_report_csv

    rows = []
    for d in args.dirs:
        path = Path(d) / "bench.csv"
        if not path.is_file():
            raise ConfigError(f"{path} does not exist")
        rows.extend(read_report_csv(path))
    seen, merged = set(), []
    for r in rows:
        key = tuple(r[c] for c in REPORT_COLUMNS)
        if key not in seen:
            seen.add(key)
            merged.append(r)
    merged.sort(key=lambda r: r["scheme"])  # stable: run order kept within a scheme
    out = Path(args.output) if args.output else None
    lines = [list(REPORT_COLUMNS)] + [[r[c] for c in REPORT_COLUMNS] for r in merged]
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(lines)
    csv.writer(sys.stdout, lineterminator="\n").writerows(lines)
    return EXIT_OK


def _common(p, scenario=True):
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--output-dir", dest="output_dir",
                   help=f"output directory (default {DEFAULTS['output_dir']}, env {ENV_OUTPUT})")
    p.add_argument("--topology", help="topology JSON file (groups, scheme, cost_model)")
    p.add_argument("--groups", help="inline topology, e.g. 4d,4d (default 4d)")
    p.add_argument("--device-weight", dest="device_weight", type=float,
                   help="k-point weight of device ranks in TwoWayRankDevice (default 4)")
    p.add_argument("--dynamic", action="store_true", default=None,
                   help="balance k-points by work stealing instead of static blocks")
    if scenario:
        p.add_argument("--scenario", help="scenario JSON file")
        p.add_argument("--n", type=int, help="basis size of a generated scenario (default 64)")
        p.add_argument("--n-k", dest="n_k", type=int, help="k-points (default 8)")
        p.add_argument("--seed", type=int, help="scenario seed (default 0)")
        p.add_argument("--spin-mode", dest="spin_mode",
                       choices=["collinear-two-channel", "unpolarized-degeneracy-2"])
        p.add_argument("--neighbor-strength", dest="neighbor_strength", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridband", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", dest="inject_fault", action="append",
                   help="test hook; p6_sign flips the sign of the Householder update")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="one speedup row per scheme")
    _common(p)
    p.add_argument("--schemes", help=f"comma list (default {DEFAULTS['schemes']})")
    p.add_argument("--mode", choices=["modeled", "measured"])
    p.add_argument("--repeats", type=int, help="best-of repeats in measured mode (default 3)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="dump the execution plan of a scheme")
    _common(p)
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--run", action="store_true",
                   help="also run the scenario and report the modeled makespan")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("microbench", help="vector normalization timing table")
    p.add_argument("sizes", nargs="*", type=int, help="n values (default 10 ... 100000)")
    p.add_argument("--config")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--threads", type=int, help="host threads (default 4, env HYBRIDBAND_THREADS)")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_microbench)

    p = sub.add_parser("report", help="merge bench.csv files of several runs")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--output", help="write the merged table here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
