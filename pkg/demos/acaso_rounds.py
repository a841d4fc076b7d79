"""
Snapshot rounds per operation
=============================

Measure amortized and worst-case rounds of the snapshot object, first in a
crash-free closed loop and then under the k-crash adversary.
"""

from latsnap.cli import closed_loop
from latsnap.scenario import ceil_sqrt, execute, failure_chain

# crash-free: each node alternates update and scan ten times
for n in (4, 8, 16):
    m = execute(closed_loop("acaso", n, 0, 10), oracle=False).metrics
    print(f"n={n}: {m['completedOps']} ops, amortized {m['amortizedRounds']:.2f}, worst {m['maxOpRounds']}")

# with crashes: rounds grow with sqrt(k), not with n
for k in (0, 1, 4, 9):
    worst = max(execute(failure_chain("acaso", k, seed, ops_per_node=4), oracle=False).metrics["maxOpRounds"]
                for seed in range(5))
    print(f"k={k}: worst per-op rounds {worst}, ratio to sqrt(k)+1 {worst / (ceil_sqrt(k) + 1):.2f}")
