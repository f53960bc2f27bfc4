"""Survival of critical branching: t P(survive to t) tends to 2 / sigma².

For the binary critical law (no children or two, each with probability ½)
at rate 1, the extinction ODE has the closed form P(survive to t) = 1/(1 + t/2).
The demo solves the ODE numerically, checks it against the closed form and
against simulation, and writes an SVG of t P(survive) approaching 2.
"""

from pathlib import Path

import numpy as np

from spinesim.functionals import population_batch, sigma_squared
from spinesim.model import Constant, Explicit, FiniteChain, ModelSpec
from spinesim.oracle import b_of_t, critical_binary_survival, kolmogorov_limit, solve_extinction
from spinesim.plots import Plot, Series, render
from spinesim.sim import BatchJob, run_batch
from spinesim.spectral import eigen_for_model

model = ModelSpec(FiniteChain(np.zeros((1, 1))), Constant(1.0), Explicit((0.5, 0.0, 0.5)), name="critical binary")
eigen = eigen_for_model(model)
limit = kolmogorov_limit(sigma_squared(model, eigen))
print(f"sigma² = {sigma_squared(model, eigen):g}, limit 2/sigma² = {limit:g}")

times = np.array([1.0, 2.0, 5.0, 10.0, 20.0, 50.0])
curve = solve_extinction(model, 200.0)
b = b_of_t(curve, eigen)
job = BatchJob(model, "P", horizon=50.0, observation_times=tuple(times), seed=3, x0=(0.0, 0))
alive = population_batch(run_batch(job, 20_000)) > 0
mc = alive.mean(axis=0)
se = alive.std(axis=0, ddof=1) / np.sqrt(alive.shape[0])

print(f"{'t':>5} {'ODE':>10} {'closed form':>12} {'simulated':>18} {'t P(survive)':>13}")
for k, t in enumerate(times):
    print(f"{t:5g} {b(t):10.6f} {float(critical_binary_survival(t)):12.6f} {mc[k]:10.5f} ± {se[k]:.5f} {t * mc[k]:13.4f}")
print(f"ODE at t=200: t b(t) = {200 * b(200.0):.4f}")

grid = np.linspace(1, 200, 200)
plot = Plot("critical binary survival", "t", "t P(survive to t)",
            (Series("ODE", grid, grid * np.array([b(t) for t in grid])),
             Series("simulated", times, times * mc, markers=True),
             Series("limit 2/sigma²", grid, np.full_like(grid, limit))))
out = Path("demo-out")
out.mkdir(exist_ok=True)
(out / "critical_survival.svg").write_text(render(plot))
print(f"wrote {out / 'critical_survival.svg'}")
