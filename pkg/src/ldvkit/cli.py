"""Command-line front end: ``ldvkit {plan,simulate,solve,export-rules,report,sweep,run}``.

Each stage reads and writes plain JSON/CSV artifacts so stages can run
separately. Exit codes: 0 success, 2 coverage failure, 3 non-unique
system, 4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .flowplan import CoverageError, FlowPlan, PlanConfig, PlanError, coverage_report, select_flows
from .ldvsolve import MeasurementError, SwarmConfig, build_system, pso_solve
from .pipeline import (Report, RunConfig, link_label, parse_monitors, report_metrics, result_dict,
                       run_pipeline, sweep, write_sweep, SWITCH_RULE_CAPACITY)
from .probesim import DelayModel, SimulationError, ground_truth_ldv, plant_delays, read_campaign_csv, run_campaign
from .rulegen import (PortMap, RuleError, auto_addressing, auto_port_map, compile_plan, rules_per_switch,
                      tables_from_json, tables_to_json)
from .topology import TopologyError, load_topology, save_topology

EXIT_OK = 0
EXIT_COVERAGE = 2
EXIT_NON_UNIQUE = 3
EXIT_CONFIG = 4


def _int_range(text: str) -> list[int]:
    """``"3:12"`` (inclusive), ``"3,5,7"`` or ``"5"``."""
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def _plant(text: str | None):
    if text is None or text == "none":
        return None
    lo, hi = text.split(":")
    return float(lo), float(hi)


def _add_topology(p, required=True):
    p.add_argument("--topology", required=required, help="topology file (.json, .graphml, .gml)")
    p.add_argument("--monitors", help='"a,b,c", "all" or "count:K,seed:S"')


def _add_plan(p):
    p.add_argument("--mlmf", type=int, default=5, help="max hops per monitoring flow")
    p.add_argument("--min-cover", type=int, default=2, help="flows required per targeted link")
    p.add_argument("--probe-rate", type=float, default=10_000.0, help="probe rate per flow (bit/s)")
    p.add_argument("--max-overhead", type=float, default=0.1, help="max probe share of link capacity")
    p.add_argument("--mode", choices=["stop", "exhaustive"], default="stop")


def _add_sim(p):
    p.add_argument("--noise-sigma", type=float, default=0.0, help="end-to-end noise sigma (ms)")
    p.add_argument("--jitter-sigma", type=float, default=0.0, help="per-link jitter sigma (ms)")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--plant", default="0.3:2.0",
                   help='LOW:HIGH uniform delays (ms) for links lacking one, or "none"')


def _add_swarm(p):
    p.add_argument("--population", type=int, default=50)
    p.add_argument("--generations", type=int, default=500)
    p.add_argument("--allow-non-unique", action="store_true",
                   help="exit 0 even when the measurement system is rank deficient")


def _plan_cfg(a) -> PlanConfig:
    return PlanConfig(max_length=a.mlmf, min_cover=a.min_cover, probe_rate=a.probe_rate,
                      max_overhead=a.max_overhead, mode=a.mode)


def _swarm_cfg(a) -> SwarmConfig:
    return SwarmConfig(population_size=a.population, max_generations=a.generations)


def _topology(a):
    topo = load_topology(a.topology)
    if getattr(a, "monitors", None):
        topo = topo.with_monitors(parse_monitors(a.monitors, topo))
    return topo


def _out(a) -> Path:
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_plan(a) -> int:
    topo = _topology(a)
    out = _out(a)
    try:
        plan = select_flows(topo, _plan_cfg(a))
    except CoverageError as e:
        if e.plan is not None:
            (out / "plan.partial.json").write_text(json.dumps(e.plan.to_dict(), indent=2))
        print(f"coverage failure: {e}", file=sys.stderr)
        return EXIT_COVERAGE
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2))
    print(f"{len(plan.flows)} flows, rank {plan.rank}/{len(plan.link_index)} -> {out / 'plan.json'}")
    return EXIT_OK


def _load_plan(path) -> FlowPlan:
    return FlowPlan.from_dict(json.loads(Path(path).read_text()))


def cmd_simulate(a) -> int:
    topo = _topology(a)
    plant = _plant(a.plant)
    if plant is not None and any(l.true_delay is None for l in topo.links):
        topo = plant_delays(topo, *plant, seed=a.seed)
    out = _out(a)
    plan = _load_plan(a.plan)
    camp = run_campaign(plan, topo, DelayModel(a.jitter_sigma, a.noise_sigma, a.seed), a.repeats)
    camp.save(out / "campaign.csv")
    # the topology actually probed, ground truth included
    save_topology(topo, out / "topology.json")
    print(f"{len(plan.flows)} flows measured -> {out / 'campaign.csv'}")
    return EXIT_OK


def cmd_solve(a) -> int:
    out = _out(a)
    plan = _load_plan(a.plan)
    camp = read_campaign_csv(a.campaign, plan)
    res = pso_solve(build_system(plan, camp), _swarm_cfg(a), a.seed)
    truth = None
    if a.topology:
        topo = load_topology(a.topology).with_targeted(plan.link_index)
        if all(topo.link(*p).true_delay is not None for p in plan.link_index):
            truth = ground_truth_ldv(topo)
    (out / "result.json").write_text(json.dumps(result_dict(plan, res, truth), indent=2))
    print(f"fitness {res.fitness:.3g} after {res.generations_used} generations -> {out / 'result.json'}")
    if res.non_unique:
        print(f"warning: measurement system has a {res.null_space_dim}-dimensional null space",
              file=sys.stderr)
        if not a.allow_non_unique:
            return EXIT_NON_UNIQUE
    return EXIT_OK


def cmd_export_rules(a) -> int:
    topo = _topology(a)
    out = _out(a)
    plan = _load_plan(a.plan)
    ports = PortMap.load(a.ports) if a.ports else auto_port_map(topo)
    addressing = json.loads(Path(a.addressing).read_text()) if a.addressing else auto_addressing(topo)
    tables = compile_plan(plan, ports, addressing, a.helper_ip)
    (out / "rules.json").write_text(tables_to_json(tables))
    stats = rules_per_switch(tables, a.switch_capacity, topo.nodes)
    print(f"{sum(stats.counts.values())} entries, {stats.average:.2f} per switch -> {out / 'rules.json'}")
    return EXIT_OK


def cmd_report(a) -> int:
    out = _out(a)
    topo = load_topology(a.topology)
    plan = _load_plan(a.plan)
    result = json.loads(Path(a.result).read_text())
    est = {tuple(r["link"]): float(r["estimated_delay_ms"]) for r in result["links"]}
    errors = {}
    for pair in plan.link_index:
        d = topo.link(*pair).true_delay
        if d is not None:
            errors[link_label(pair)] = abs(est[tuple(pair)] - d)
    stats = None
    if a.rules:
        stats = rules_per_switch(tables_from_json(Path(a.rules).read_text()), a.switch_capacity, topo.nodes)
    report = Report(
        topology=Path(a.topology).stem,
        coverage=coverage_report(plan, topo.with_targeted(plan.link_index), a.min_cover).fraction,
        flows=len(plan.flows),
        rank=plan.rank,
        null_space_dim=plan.null_space_dim,
        link_errors=errors,
        estimates={link_label(p): est[tuple(p)] for p in plan.link_index},
        rules_per_switch=stats.counts if stats else {},
        rules_avg=stats.average if stats else 0.0,
        rules_fraction=stats.fraction if stats else 0.0,
        generations_used=result["solver"]["generations_used"],
        final_fitness=result["solver"]["final_fitness"],
    )
    for p in report_metrics(report, a.format, out):
        print(p)
    return EXIT_OK


def cmd_sweep(a) -> int:
    topo = load_topology(a.topology)
    plant = _plant(a.plant)
    if plant is not None and any(l.true_delay is None for l in topo.links):
        topo = plant_delays(topo, *plant, seed=a.seed)
    base = PlanConfig(max_length=max(2, max(_int_range(a.mlmf), default=2)), min_cover=a.min_cover,
                      probe_rate=a.probe_rate, max_overhead=a.max_overhead, mode=a.mode)
    cells = sweep(topo, _int_range(a.mlmf), _int_range(a.monitor_counts), base, a.seed,
                  DelayModel(a.jitter_sigma, a.noise_sigma, a.seed), _swarm_cfg(a), a.repeats,
                  a.switch_capacity, solve=not a.no_solve)
    for p in write_sweep(cells, a.format, _out(a)):
        print(p)
    return EXIT_OK


def cmd_run(a) -> int:
    cfg = RunConfig(topology=a.topology, out=a.out, monitors=a.monitors, plan=_plan_cfg(a),
                    noise_sigma=a.noise_sigma, jitter_sigma=a.jitter_sigma, repeats=a.repeats,
                    seed=a.seed, swarm=_swarm_cfg(a), plant=_plant(a.plant),
                    switch_capacity=a.switch_capacity)
    try:
        report = run_pipeline(cfg)
    except CoverageError as e:
        print(f"coverage failure: {e}", file=sys.stderr)
        return EXIT_COVERAGE
    if a.format == "plot":
        report_metrics(report, "plot", a.out)
    print(f"coverage {report.coverage:.3f}, flows {report.flows}, rank {report.rank}, "
          f"mean error {report.mean_error:.4g} ms, rules/switch {report.rules_avg:.2f}")
    if report.null_space_dim > 0 and not a.allow_non_unique:
        print(f"warning: measurement system has a {report.null_space_dim}-dimensional null space",
              file=sys.stderr)
        return EXIT_NON_UNIQUE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ldvkit", description="Link-delay monitoring with SDN probe flows")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="select monitoring flows")
    _add_topology(p)
    _add_plan(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="simulate a probe campaign for a plan")
    _add_topology(p)
    _add_sim(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="infer link delays from a campaign")
    p.add_argument("--plan", required=True)
    p.add_argument("--campaign", required=True)
    p.add_argument("--topology", help="topology with true delays, for error columns")
    _add_swarm(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("export-rules", help="compile a plan into switch rule tables")
    _add_topology(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--ports", help="JSON port map {switch: {neighbor|host: port}}")
    p.add_argument("--addressing", help="JSON map {node: monitor host IPv4}")
    p.add_argument("--helper-ip")
    p.add_argument("--switch-capacity", type=int, default=SWITCH_RULE_CAPACITY)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_rules)

    p = sub.add_parser("report", help="error, coverage and rule metrics from stage artifacts")
    p.add_argument("--topology", required=True, help="topology with true delays")
    p.add_argument("--plan", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--rules")
    p.add_argument("--min-cover", type=int, default=2)
    p.add_argument("--switch-capacity", type=int, default=SWITCH_RULE_CAPACITY)
    p.add_argument("--format", choices=["csv", "json", "plot"], default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="grid over MLMF x monitor count")
    p.add_argument("--topology", required=True)
    p.add_argument("--mlmf", default="3:12", help='"LO:HI" or comma list')
    p.add_argument("--monitor-counts", default="1:5", help='"LO:HI" or comma list')
    p.add_argument("--min-cover", type=int, default=2)
    p.add_argument("--probe-rate", type=float, default=10_000.0)
    p.add_argument("--max-overhead", type=float, default=0.1)
    p.add_argument("--mode", choices=["stop", "exhaustive"], default="stop")
    _add_sim(p)
    _add_swarm(p)
    p.add_argument("--no-solve", action="store_true", help="planning metrics only")
    p.add_argument("--switch-capacity", type=int, default=SWITCH_RULE_CAPACITY)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "json", "plot"], default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("run", help="full pipeline: plan, rules, simulate, solve, report")
    _add_topology(p)
    _add_plan(p)
    _add_sim(p)
    _add_swarm(p)
    p.add_argument("--switch-capacity", type=int, default=SWITCH_RULE_CAPACITY)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "json", "plot"], default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CoverageError as e:
        print(f"coverage failure: {e}", file=sys.stderr)
        return EXIT_COVERAGE
    except (TopologyError, PlanError, RuleError, SimulationError, MeasurementError,
            ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
