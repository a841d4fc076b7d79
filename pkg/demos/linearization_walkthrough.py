"""
Walking through a linearization witness
=======================================

Generate a contended history, build the witness from the views, replay it,
and confirm the verdict with the exhaustive search.
"""

from latsnap.scenario import execute, randomized
from latsnap.verify import (brute_force_linearizable, build_linearization, explain_linearization,
                            history_from_trace, validate_linearization)

out = execute(randomized("acaso", 3, 1, 5, op_count=6))
h = history_from_trace(out.trace)

# the witness orders operations by view size, breaking ties by real time
lin = build_linearization(h)
for o in lin:
    what = o.value.payload if o.kind == "update" else o.result
    print(f"{o.kind:6} node {o.node} [{o.invoke_time}, {o.respond_time}] -> {what}")

print("witness valid:", validate_linearization(lin, h))
print("exhaustive search agrees:", brute_force_linearizable(h))

# swapping two operations usually breaks the witness, and the explanation says why
if len(lin) > 1:
    swapped = [lin[1], lin[0]] + lin[2:]
    print("swapped first two:", explain_linearization(swapped, h) or "still valid")
