"""Plan, simulate, and solve link delays on Abilene with five monitors.

    python3 demos/abilene_walkthrough.py [--noise 0.1] [--seed 0]
"""

import argparse

import numpy as np

from ldvkit import (
    DelayModel, PlanConfig, build_system, coverage_report, ground_truth_ldv, plant_delays, pso_solve, run_campaign,
    select_flows, zoo_topology,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    topo = plant_delays(zoo_topology("Abilene", monitor_nodes=["0", "1", "5", "6", "9"]), seed=args.seed)
    plan = select_flows(topo, PlanConfig(max_length=11, min_cover=2))
    print(f"{len(plan.flows)} loop flows, coverage {coverage_report(plan, topo, 2).fraction:.2f}, "
          f"rank {plan.rank} of {len(plan.link_index)} links")

    campaign = run_campaign(plan, topo, DelayModel(0.0, args.noise, args.seed))
    res = pso_solve(build_system(plan, campaign), seed=args.seed)
    err = np.abs(res.delays - ground_truth_ldv(topo))
    print(f"swarm: {res.generations_used} generations, fitness {res.fitness:.4f}")
    print(f"link error: mean {err.mean():.3f} ms, max {err.max():.3f} ms")
    if res.non_unique:
        # loops only see the circulation part of the delay vector
        print(f"{res.null_space_dim} directions are not identifiable from loop measurements")


if __name__ == "__main__":
    main()
