"""
Noise schedules and few-step grids
==================================

The dense schedule has 1000 steps. Training and sampling both run on a
small grid picked out of it, either evenly spaced or denser near the
noisy end.
"""

from fastddpm.schedule import NonUniform, Uniform, build_base, grid_csv, subsample

base = build_base(1000, 1e-4, 0.02)
print("alpha^2 at the last step:", base.alpha_sq[-1])

# ten evenly spaced steps
uniform = subsample(base, 10, Uniform())
print("uniform  :", uniform.indices)

# 60% of the steps above index 699, 40% at or below it
nonuniform = subsample(base, 10, NonUniform())
print("nonuniform:", nonuniform.indices)

# what `fastddpm schedule --scheduler nonuniform` prints
print(grid_csv(nonuniform))
