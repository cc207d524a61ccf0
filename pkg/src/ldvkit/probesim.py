"""Probe-campaign simulator standing in for live ICMP measurements.

Draw order is fixed so a campaign is reproducible bit-for-bit from its seed:
flows in id order, then repeats, then per-link jitter along the path, then
one end-to-end noise draw per probe. All draws come from a single
``numpy.random.Generator`` built on PCG64.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flowplan import FlowPlan, MonitoringFlow
from .topology import Topology, TopologyError

GENERATOR = "PCG64"


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class DelayModel:
    fluctuation_sigma: float = 0.0
    measurement_noise_sigma: float = 0.0
    seed: int = 0
    generator: str = GENERATOR

    def __post_init__(self):
        if self.fluctuation_sigma < 0 or self.measurement_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.generator != GENERATOR:
            raise ValueError(f"only the {GENERATOR} generator is supported")

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


@dataclass
class Campaign:
    plan: FlowPlan
    eed: np.ndarray
    repeats: int
    probes: np.ndarray = field(repr=False)
    timestamps: np.ndarray = field(repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["flow_id", "tos", "source", "destination", "eed_ms", "repeats"])
        for f, d in zip(self.plan.flows, self.eed):
            w.writerow([f.id, f.tos, f.source, f.destination, repr(float(d)), self.repeats])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())


def read_campaign_csv(path, plan: FlowPlan) -> Campaign:
    """Load measured end-to-end delays written by :meth:`Campaign.save`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_id = {int(r["flow_id"]): r for r in rows}
    missing = [f.id for f in plan.flows if f.id not in by_id]
    if missing or len(rows) != len(plan.flows):
        raise SimulationError(f"campaign rows do not match plan flows (missing ids {missing[:5]})")
    eed = np.array([float(by_id[f.id]["eed_ms"]) for f in plan.flows])
    repeats = int(rows[0]["repeats"]) if rows else 1
    return Campaign(plan, eed, repeats, eed[:, None].copy(), np.zeros((len(eed), 1)))


def plant_delays(topo: Topology, low: float = 0.3, high: float = 2.0, seed: int = 0) -> Topology:
    """Copy of ``topo`` with uniform random ground-truth delays (ms) on every link."""
    rng = np.random.Generator(np.random.PCG64(seed))
    values = rng.uniform(low, high, size=len(topo.links))
    return topo.with_delays({l.pair: float(v) for l, v in zip(topo.links, values)})


def ground_truth_ldv(topo: Topology) -> np.ndarray:
    """True delays of the targeted links, in targeted-link order."""
    out = []
    for pair in topo.targeted_links:
        d = topo.link(*pair).true_delay
        if d is None:
            raise SimulationError(f"targeted link {pair[0]}->{pair[1]} has no true delay")
        out.append(d)
    return np.array(out, dtype=float)


def measure_flow(flow: MonitoringFlow, topo: Topology, model: DelayModel, rng: np.random.Generator) -> float:
    total = 0.0
    for a, b in flow.path:
        try:
            link = topo.link(a, b)
        except TopologyError:
            raise SimulationError(f"flow {flow.id} uses link {a}->{b} absent from the topology") from None
        if link.true_delay is None:
            raise SimulationError(f"link {a}->{b} has no true delay")
        jitter = rng.normal(0.0, model.fluctuation_sigma) if model.fluctuation_sigma > 0 else 0.0
        total += max(link.true_delay + jitter, 0.0)
    if model.measurement_noise_sigma > 0:
        total += rng.normal(0.0, model.measurement_noise_sigma)
    return max(total, 0.0)


def run_campaign(plan: FlowPlan, topo: Topology, model: DelayModel, repeats: int = 1,
                 aggregator: str = "median") -> Campaign:
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    agg = {"median": np.median, "mean": np.mean}.get(aggregator)
    if agg is None:
        raise ValueError(f"unknown aggregator {aggregator!r}")
    rng = model.rng()
    probes = np.zeros((len(plan.flows), repeats))
    stamps = np.zeros_like(probes)
    clock = 0.0
    for i, f in enumerate(sorted(plan.flows, key=lambda f: f.id)):
        for k in range(repeats):
            probes[i, k] = measure_flow(f, topo, model, rng)
            stamps[i, k] = clock
            clock += probes[i, k]
    order = np.argsort([f.id for f in plan.flows])
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))
    probes, stamps = probes[inverse], stamps[inverse]
    eed = agg(probes, axis=1) if len(plan.flows) else np.zeros(0)
    return Campaign(plan, np.asarray(eed, dtype=float), repeats, probes, stamps)
