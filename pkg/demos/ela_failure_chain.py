"""
Early-stopping lattice agreement under a failure chain
======================================================

Run lattice agreement with no crashes, then with two failure chains that hide
a value for two message delays, and compare decision rounds.
"""

from latsnap.ela import ela_automata
from latsnap.lattice import TaggedValue, view
from latsnap.scenario import Scenario, ela_round_bound, execute, failure_chain
from latsnap.simnet import FixedDelay, exposed_values, run
from latsnap.verify import ela_decision_times, ela_inputs

D = 1000

# every node proposes one value; with a fixed delay everyone decides at 2D
inputs = {i: view(TaggedValue.of(f"x{i}", 0, i)) for i in range(1, 6)}
trace = run(5, 2, ela_automata(inputs, 5, 2), FixedDelay(D))
print("crash-free decision times:", ela_decision_times(trace))

# two chains of length 3: nodes 1 and 4 own values that each reach one
# correct node only after passing through two crashing relays
sc = Scenario("ela", 11, 5, {"kind": "fixed", "D": D},
              adversary={"failureChain": {"chains": [[1, 2, 3], [4, 5, 6]]}})
out = execute(sc)
ins = ela_inputs(out.trace)
for k, vals in sorted(exposed_values(out.trace).items()):
    owners = sorted(i for i, x in ins.items() if x in vals)
    print(f"interval {k}: first exposure of values owned by {owners}")
print("decision times:", ela_decision_times(out.trace))
print("checks passed:", out.ok)

# sweep the k-crash adversary and compare with the round bound
for k in (0, 1, 4, 9):
    worst = max(execute(failure_chain("ela", k, seed)).metrics["maxDecisionRounds"] for seed in range(10))
    print(f"k={k}: worst decision round {worst}, bound {ela_round_bound(k)}")
