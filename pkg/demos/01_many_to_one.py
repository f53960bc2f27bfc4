"""Expected population of binary branching Brownian motion, and the ancestral weight identity.

Every particle splits in two at rate 1, so the mean number alive at time t
is e^t. The demo simulates trees, compares the sample mean with e, and
checks on one tree that the ancestral weights Π 1/r^v over the living and
the childless dead sum to exactly one at every time.
"""

import numpy as np

from spinesim.functionals import population_batch
from spinesim.model import BrownianMotion, Constant, Explicit, ModelSpec
from spinesim.sim import BatchJob, SimConfig, replicate_rng, run_batch, simulate_p
from spinesim.stats import mean_report

SEED = 2024

bbm = ModelSpec(BrownianMotion(), Constant(1.0), Explicit((0.0, 0.0, 1.0)), name="binary BBM")

job = BatchJob(bbm, "P", horizon=1.0, observation_times=(0.25, 0.5, 1.0), seed=SEED, x0=(0.0, 0))
pop = population_batch(run_batch(job, 20_000))
for k, t in enumerate(job.observation_times):
    rep = mean_report(f"E|X_{t:g}|", pop[:, k], np.exp(t))
    print(f"t={t:<4g} mean={rep.estimate:.4f} ± {rep.std_error:.4f}  e^t={np.exp(t):.4f}  z={rep.z_score:+.2f}  {rep.verdict}")

# one tree in detail
tree = simulate_p(SimConfig(bbm, 2.0, (1.0, 2.0)), 0.0, replicate_rng(SEED, 0))
print(f"\none tree on [0, 2]: {tree.n_nodes} nodes, {len(tree.alive_at(2.0))} alive at t=2")
print("structural problems:", tree.validate() or "none")
for t in (0.0, 0.7, 1.3, 2.0):
    print(f"  weight identity at t={t}: {tree.weight_identity(t):.15f}")
print("\nfirst lines of the text dump:")
print("\n".join(tree.dumps().splitlines()[:8]))
