"""Print joining-peer and congestion tables from a sweep CSV.

    python scripts/summarize_sweep.py sweep.csv
"""

import csv
import sys
from collections import defaultdict


def load_summaries(path):
    table = defaultdict(dict)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["seed"] == "summary":
                table[row["policy"]][float(row["lambda_inv_s"])] = row
    return table


def show(table, metric, digits):
    lambdas = sorted({lam for rows in table.values() for lam in rows})
    print(f"\n{metric}")
    print("policy".ljust(16) + "".join(f"{lam / 3600:>16g}h" for lam in lambdas))
    for policy, rows in table.items():
        cells = []
        for lam in lambdas:
            row = rows.get(lam)
            if row is None or row[metric] == "NA":
                cells.append("NA".rjust(17))
            else:
                hw = row[metric + "_hw"]
                hw = "" if hw == "NA" else f" +-{float(hw):.{digits}f}"
                cells.append(f"{float(row[metric]):.{digits}f}{hw}".rjust(17))
        print(policy.ljust(16) + "".join(cells))


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        sys.exit(__doc__)
    table = load_summaries(argv[0])
    show(table, "joining_peers", 1)
    show(table, "congestion_degree", 3)


if __name__ == "__main__":
    main()
