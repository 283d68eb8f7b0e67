"""
Checking the sampler without training
=====================================

For Gaussian data the ideal noise predictor has a closed form. Plugging
it in as the "network" turns the sampler into a chain of scalar gains,
so its output variance is known exactly. Comparing that with a Monte
Carlo run checks the sampler arithmetic on any grid.
"""

from fastddpm.diffusion import analytic_final_variance
from fastddpm.experiment import oracle_sampler_variance, oracle_streams
from fastddpm.schedule import build_base, dense_grid, subsample

base = build_base()
streams = oracle_streams(10_000, seed=0)

for s in (1, 3, 10, 100, 1000):
    grid = subsample(base, s)
    emp = oracle_sampler_variance(grid, streams=streams)
    print(f"S={s:5d}  analytic {analytic_final_variance(grid):.5f}  monte carlo {emp:.5f}")

# few steps lose variance; the dense grid keeps almost all of it
print("dense grid:", oracle_sampler_variance(dense_grid(base), streams=streams))
