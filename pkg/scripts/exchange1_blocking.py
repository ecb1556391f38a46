"""Count qualifying parents that exchange1 leaves behind because the swap would overflow.

Runs checked scenarios and reports, per policy, how many exchange1
terminations there were and how many non-OSS parents with smaller capacity
were still attached afterwards.

    python scripts/exchange1_blocking.py [runs] [days]
"""

import sys

from meshweave.simulator import ScenarioConfig, run


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    runs = int(argv[0]) if argv else 4
    days = float(argv[1]) if len(argv) > 1 else 3
    for policy in ("mlh+ex", "mph+ex", "scamp-like+ex"):
        checks = blocked = 0
        for seed in range(runs):
            cfg = ScenarioConfig(peer_count=600, sim_days=days, warmup_days=1, policy=policy, seed=seed, check_every=500)
            report = run(cfg)
            checks += report.exchange1_checks
            blocked += report.exchange1_blocked
        print(f"{policy:14s} terminations {checks:7d}  blocked parents {blocked:5d}  ({100 * blocked / max(checks, 1):.2f}%)")


if __name__ == "__main__":
    main()
