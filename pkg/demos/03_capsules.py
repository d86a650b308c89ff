"""Capsule reference pieces: squash, the two-capsule routing example and the parameter audit."""
import numpy as np

from net2milp.capsules import param_count, route, squash, worked_example

for n in (0.0, 0.5, 1.0, 3.0):
    print(f"|s| = {n:3.1f} -> |squash(s)| = {np.linalg.norm(squash(np.array([n, 0.0]))):.4f}")

# lower capsule 1 and 2 disagree on class 1 and agree on class 2
v, state = route(worked_example(), 3)
for it, c in enumerate(state.history, 1):
    print(f"iteration {it}: couplings\n{np.round(c, 4)}")
print("output lengths", np.round(np.linalg.norm(v, axis=1), 4))

for key, value in param_count().items():
    print(f"{key:>22}: {value:>10,}")
