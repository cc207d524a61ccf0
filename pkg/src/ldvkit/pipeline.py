"""End-to-end runs (plan -> simulate -> solve -> rules -> report) and parameter sweeps."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .flowplan import CoverageError, FlowPlan, PlanConfig, coverage_report, select_flows
from .ldvsolve import SolveResult, SwarmConfig, build_system, pso_solve
from .probesim import Campaign, DelayModel, ground_truth_ldv, plant_delays, run_campaign
from .rulegen import auto_addressing, auto_port_map, compile_plan, rules_per_switch, tables_to_json
from .topology import Topology, TopologyError, load_topology, node_key, save_topology

SWITCH_RULE_CAPACITY = 8000
REPORT_HEADER = ["metric", "subject", "value", "unit"]
SWEEP_HEADER = ["mlmf", "monitors", "coverage", "flows", "rank", "null_space_dim",
                "rules_avg", "rules_fraction", "mean_error_ms", "max_error_ms", "sum_error_ms"]


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("LDVKIT_THREADS", "1")))
    except ValueError:
        return 1


def parse_monitors(spec: str, topo: Topology) -> list[str]:
    """``"a,b,c"``, ``"all"`` or ``"count:K,seed:S"`` (random placement)."""
    spec = spec.strip()
    if spec == "all":
        return list(topo.nodes)
    if spec.startswith("count:"):
        parts = dict(p.split(":", 1) for p in spec.split(","))
        k = int(parts["count"])
        return random_placement(topo, k, int(parts.get("seed", 0)))
    return [m.strip() for m in spec.split(",") if m.strip()]


def random_placement(topo: Topology, k: int, seed: int) -> list[str]:
    """First ``k`` nodes of a seeded permutation, so placements nest as k grows."""
    if not 1 <= k <= len(topo.nodes):
        raise ValueError(f"cannot place {k} monitors on {len(topo.nodes)} nodes")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(topo.nodes))
    return sorted((topo.nodes[i] for i in order[:k]), key=node_key)


@dataclass
class RunConfig:
    topology: str
    out: str
    monitors: str | None = None
    plan: PlanConfig = field(default_factory=PlanConfig)
    noise_sigma: float = 0.0
    jitter_sigma: float = 0.0
    repeats: int = 1
    seed: int = 0
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    plant: tuple[float, float] | None = (0.3, 2.0)
    switch_capacity: int = SWITCH_RULE_CAPACITY

    def validate(self):
        if not Path(self.topology).exists():
            raise TopologyError(f"topology file {self.topology} does not exist")
        Path(self.out).mkdir(parents=True, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise PermissionError(f"output directory {self.out} is not writable")


@dataclass
class Report:
    topology: str
    coverage: float
    flows: int
    rank: int
    null_space_dim: int
    link_errors: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    rules_per_switch: dict = field(default_factory=dict)
    rules_avg: float = 0.0
    rules_fraction: float = 0.0
    generations_used: int = 0
    final_fitness: float = 0.0
    timing: dict = field(default_factory=dict)

    @property
    def sum_error(self) -> float:
        return float(sum(self.link_errors.values()))

    @property
    def max_error(self) -> float:
        return float(max(self.link_errors.values(), default=0.0))

    @property
    def mean_error(self) -> float:
        return self.sum_error / len(self.link_errors) if self.link_errors else 0.0

    def rows(self) -> list[list]:
        r = [["coverage", self.topology, self.coverage, "fraction"],
             ["flows", self.topology, self.flows, "count"],
             ["rank", self.topology, self.rank, "count"],
             ["null_space_dim", self.topology, self.null_space_dim, "count"]]
        for link, err in self.link_errors.items():
            r.append(["abs_error", link, err, "ms"])
        if self.link_errors:
            r += [["sum_error", self.topology, self.sum_error, "ms"],
                  ["mean_error", self.topology, self.mean_error, "ms"],
                  ["max_error", self.topology, self.max_error, "ms"]]
        for sw, n in self.rules_per_switch.items():
            r.append(["rules", sw, n, "count"])
        r += [["rules_avg", self.topology, self.rules_avg, "count"],
              ["rules_fraction", self.topology, self.rules_fraction, "fraction"]]
        return r

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(sum_error=self.sum_error, max_error=self.max_error, mean_error=self.mean_error)
        return d


def link_label(pair) -> str:
    return f"{pair[0]}->{pair[1]}"


def result_dict(plan: FlowPlan, res: SolveResult, truth: np.ndarray | None = None) -> dict:
    links = []
    for k, pair in enumerate(plan.link_index):
        rec = {"link": list(pair), "estimated_delay_ms": float(res.delays[k])}
        if truth is not None:
            rec["abs_error_ms"] = float(abs(res.delays[k] - truth[k]))
        links.append(rec)
    return {"links": links, "solver": {"generations_used": res.generations_used,
                                       "final_fitness": res.fitness,
                                       "non_unique": bool(res.non_unique),
                                       "null_space_dim": int(res.null_space_dim)}}


def prepare_topology(cfg: RunConfig) -> Topology:
    topo = load_topology(cfg.topology)
    if cfg.monitors:
        topo = topo.with_monitors(parse_monitors(cfg.monitors, topo))
    if cfg.plant is not None and any(l.true_delay is None for l in topo.links):
        topo = plant_delays(topo, *cfg.plant, seed=cfg.seed)
    return topo


def run_pipeline(cfg: RunConfig) -> Report:
    """Plan, compile rules, simulate, solve and report; artifacts land in ``cfg.out``.

    On failure a ``FAILED`` marker holding the error is written next to
    whatever artifacts were already produced, and the error is re-raised.
    """
    cfg.validate()
    out = Path(cfg.out)
    (out / "FAILED").unlink(missing_ok=True)
    try:
        topo = prepare_topology(cfg)
        save_topology(topo, out / "topology.json")

        t0 = time.perf_counter()
        plan = select_flows(topo, cfg.plan)
        t_plan = time.perf_counter() - t0
        (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2))
        t0 = time.perf_counter()
        tables = compile_plan(plan, auto_port_map(topo), auto_addressing(topo))
        t_rules = time.perf_counter() - t0
        (out / "rules.json").write_text(tables_to_json(tables))

        model = DelayModel(cfg.jitter_sigma, cfg.noise_sigma, cfg.seed)
        t0 = time.perf_counter()
        campaign = run_campaign(plan, topo, model, cfg.repeats)
        t_campaign = time.perf_counter() - t0
        campaign.save(out / "campaign.csv")
        t0 = time.perf_counter()
        res = pso_solve(build_system(plan, campaign), cfg.swarm, cfg.seed)
        t_solve = time.perf_counter() - t0

        truth = None
        if all(topo.link(*p).true_delay is not None for p in topo.targeted_links):
            truth = ground_truth_ldv(topo)
        (out / "result.json").write_text(json.dumps(result_dict(plan, res, truth), indent=2))

        stats = rules_per_switch(tables, cfg.switch_capacity, topo.nodes)
        report = Report(
            topology=Path(cfg.topology).stem,
            coverage=coverage_report(plan, topo, cfg.plan.min_cover).fraction,
            flows=len(plan.flows),
            rank=plan.rank,
            null_space_dim=plan.null_space_dim,
            link_errors={} if truth is None else {
                link_label(p): float(abs(res.delays[k] - truth[k])) for k, p in enumerate(plan.link_index)},
            estimates={link_label(p): float(res.delays[k]) for k, p in enumerate(plan.link_index)},
            rules_per_switch=stats.counts,
            rules_avg=stats.average,
            rules_fraction=stats.fraction,
            generations_used=res.generations_used,
            final_fitness=res.fitness,
            timing={"offline_s": t_plan + t_rules, "plan_s": t_plan, "rules_s": t_rules,
                    "online_s": t_campaign + t_solve, "campaign_s": t_campaign, "solve_s": t_solve},
        )
        report_metrics(report, "csv", out)
        report_metrics(report, "json", out)
        return report
    except Exception as exc:
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def report_metrics(report: Report, format: str, out) -> list[Path]:
    """Write ``report.csv`` (metric,subject,value,unit), ``report.json`` or plots.

    Timing lives only in the JSON form so the CSV stays byte-identical across
    reruns of the same configuration.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        p = out / "report.csv"
        p.write_text(_csv_text(REPORT_HEADER, report.rows()))
        return [p]
    if format == "json":
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(), indent=2))
        return [p]
    if format == "plot":
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        files = []
        if report.link_errors:
            fig, ax = plt.subplots(figsize=(8, 3))
            ax.bar(range(len(report.link_errors)), list(report.link_errors.values()))
            ax.set_xticks(range(len(report.link_errors)), list(report.link_errors), rotation=90, fontsize=6)
            ax.set_ylabel("abs error (ms)")
            fig.tight_layout()
            files.append(out / "link_errors.png")
            fig.savefig(files[-1])
            plt.close(fig)
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.bar(list(report.rules_per_switch), list(report.rules_per_switch.values()))
        ax.set_xlabel("switch")
        ax.set_ylabel("monitoring rules")
        fig.tight_layout()
        files.append(out / "rules_per_switch.png")
        fig.savefig(files[-1])
        plt.close(fig)
        return files
    raise ValueError(f"unknown report format {format!r}")


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepCell:
    mlmf: int
    monitors: int
    coverage: float
    flows: int
    rank: int
    null_space_dim: int
    rules_avg: float
    rules_fraction: float
    mean_error_ms: float | None
    max_error_ms: float | None
    sum_error_ms: float | None

    def row(self) -> list:
        return ["" if v is None else v for v in asdict(self).values()]


def _cell(topo: Topology, mlmf: int, k: int, base: PlanConfig, seed: int, model: DelayModel,
          swarm: SwarmConfig, repeats: int, capacity: int, solve: bool) -> SweepCell:
    placed = topo.with_monitors(random_placement(topo, k, seed))
    cfg = PlanConfig(mlmf, base.min_cover, base.probe_rate, base.max_overhead, None, base.big_m,
                     base.mode, base.rank_safeguard)
    plan = select_flows(placed, cfg, allow_partial=True)
    cov = coverage_report(plan, placed, cfg.min_cover).fraction
    stats = rules_per_switch(compile_plan(plan, auto_port_map(placed), auto_addressing(placed)),
                             capacity, placed.nodes)
    errs = None
    if solve and cov == 1.0 and all(l.true_delay is not None for l in placed.links):
        cell_seed = int(np.random.SeedSequence([seed, mlmf, k]).generate_state(1)[0])
        camp = run_campaign(plan, placed, DelayModel(model.fluctuation_sigma,
                                                     model.measurement_noise_sigma, cell_seed), repeats)
        res = pso_solve(build_system(plan, camp), swarm, cell_seed)
        errs = np.abs(res.delays - ground_truth_ldv(placed))
    return SweepCell(mlmf, k, cov, len(plan.flows), plan.rank, plan.null_space_dim, stats.average,
                     stats.fraction,
                     None if errs is None else float(errs.mean()),
                     None if errs is None else float(errs.max()),
                     None if errs is None else float(errs.sum()))


def sweep(topo: Topology, mlmfs, monitor_counts, base: PlanConfig | None = None, seed: int = 0,
          model: DelayModel | None = None, swarm: SwarmConfig | None = None, repeats: int = 1,
          capacity: int = SWITCH_RULE_CAPACITY, solve: bool = True) -> list[SweepCell]:
    """Grid of planning (and optionally solving) runs over MLMF x monitor count.

    Placements for different counts nest (see :func:`random_placement`).
    Cells run on ``LDVKIT_THREADS`` worker threads; results come back in
    grid order regardless.
    """
    base = base or PlanConfig()
    model = model or DelayModel()
    swarm = swarm or SwarmConfig()
    grid = [(m, k) for k in monitor_counts for m in mlmfs]
    if not grid:
        return []
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        jobs = [pool.submit(_cell, topo, m, k, base, seed, model, swarm, repeats, capacity, solve)
                for m, k in grid]
        return [j.result() for j in jobs]


def sweep_csv(cells) -> str:
    return _csv_text(SWEEP_HEADER, [c.row() for c in cells])


def write_sweep(cells, format: str, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        p = out / "sweep.csv"
        p.write_text(sweep_csv(cells))
        return [p]
    if format == "json":
        p = out / "sweep.json"
        p.write_text(json.dumps([asdict(c) for c in cells], indent=2))
        return [p]
    if format == "plot":
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        files = []
        counts = sorted({c.monitors for c in cells})
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for k in counts:
            pts = sorted((c.mlmf, c.coverage) for c in cells if c.monitors == k)
            ax.plot(*zip(*pts), marker="o", label=f"{k} monitor(s)")
        ax.set_xlabel("MLMF (hops)")
        ax.set_ylabel("coverage")
        ax.legend(fontsize=7)
        fig.tight_layout()
        files.append(out / "coverage_vs_mlmf.png")
        fig.savefig(files[-1])
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(5, 3.5))
        for k in counts:
            pts = sorted((c.mlmf, c.mean_error_ms, c.max_error_ms) for c in cells
                         if c.monitors == k and c.mean_error_ms is not None)
            if pts:
                x, mean, top = zip(*pts)
                ax.errorbar(x, mean, yerr=[np.zeros(len(x)), np.subtract(top, mean)], marker="o",
                            capsize=2, label=f"{k} monitor(s)")
        ax.set_xlabel("MLMF (hops)")
        ax.set_ylabel("link error (ms): mean, bar to max")
        ax.legend(fontsize=7)
        fig.tight_layout()
        files.append(out / "error_vs_mlmf.png")
        fig.savefig(files[-1])
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(5, 3.5))
        for k in counts:
            pts = sorted((c.mlmf, c.rules_avg) for c in cells if c.monitors == k)
            ax.plot(*zip(*pts), marker="s", label=f"{k} monitor(s)")
        ax.set_xlabel("MLMF (hops)")
        ax.set_ylabel("avg rules per switch")
        ax.legend(fontsize=7)
        fig.tight_layout()
        files.append(out / "rules_vs_mlmf.png")
        fig.savefig(files[-1])
        plt.close(fig)
        return files
    raise ValueError(f"unknown sweep format {format!r}")
