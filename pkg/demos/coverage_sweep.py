"""Coverage of Abilene as the loop length limit grows, for 1..5 nested monitors."""

from ldvkit import PlanConfig, coverage_report, select_flows, zoo_topology

PLACEMENT = ["0", "5", "9", "6", "1"]


def main():
    base = zoo_topology("Abilene")
    print("monitors  " + " ".join(f"{l:>5}" for l in range(1, 13)))
    for k in range(1, len(PLACEMENT) + 1):
        topo = base.with_monitors(PLACEMENT[:k])
        row = []
        for l in range(1, 13):
            plan = select_flows(topo, PlanConfig(max_length=l, min_cover=1), allow_partial=True)
            row.append(coverage_report(plan, topo).fraction)
        print(f"{k:>8}  " + " ".join(f"{c:5.2f}" for c in row))


if __name__ == "__main__":
    main()
