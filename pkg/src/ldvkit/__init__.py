"""Link-delay monitoring for SDN: probe-flow planning, delay inference and rule export."""

from .topology import DirectedLink, Topology, TopologyError, load_topology, save_topology, zoo_topology
from .flowplan import (CoverageError, FlowPlan, MonitoringFlow, PlanConfig, PlanError, coverage_report,
                       select_flows, validate_plan)
from .exact import exact_select
from .probesim import Campaign, DelayModel, ground_truth_ldv, plant_delays, run_campaign
from .ldvsolve import MeasurementSystem, SolveResult, SwarmConfig, build_system, least_squares, pso_solve
from .rulegen import FlowEntry, PortMap, auto_addressing, auto_port_map, compile_plan, rules_per_switch
from .pipeline import Report, RunConfig, report_metrics, run_pipeline, sweep

__version__ = "0.1.0"
