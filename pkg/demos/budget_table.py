"""Distilled-sample counts for a grid of basis sizes under a fixed storage budget.

    python demos/budget_table.py [N]
"""

import sys

from ssdistill.pipeline import MethodConfig, plan_budget


def main(N=20):
    print("U\tV\taugment\tm\trows")
    for U, V in ((8, 4), (16, 8), (24, 12), (32, 16), (48, 24)):
        for aug in ("none", "rotation"):
            m, spec = plan_budget((1, 16, 16), 32, MethodConfig(N=int(N), U=U, V=V, augment=aug))
            print(f"{U}\t{V}\t{aug}\t{m}\t{m * (len(spec) + 1)}")


if __name__ == "__main__":
    main(*sys.argv[1:])
