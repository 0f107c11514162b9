"""
Fitting quantile atoms to a sample distribution
===============================================

A quantile critic represents a return distribution by N atoms, atom i
tracking the tau_i = (2i - 1) / (2N) quantile. Here we fit atoms to a skewed
mixture by plain gradient descent on the quantile-Huber loss and compare the
result with the empirical quantiles.
"""

import numpy as np

from qra2c.distributional import mean_of, quantile_huber_loss, quantile_midpoints, wasserstein1

rng = np.random.default_rng(0)
n = 16
taus = quantile_midpoints(n)

# a bimodal "return" distribution: mostly around 10, sometimes a crash near 0
def sample(size):
    crash = rng.random(size) < 0.3
    return np.where(crash, rng.normal(0.5, 0.3, size), rng.normal(10.0, 1.0, size))

atoms = np.zeros(n)
for step in range(4000):
    _, g = quantile_huber_loss(atoms, sample(64), taus, kappa=0.1)
    atoms -= 0.05 * n * g

big = sample(200_000)
print("tau      atom    empirical quantile")
for t, a in zip(taus, atoms):
    print(f"{t:.4f}  {a:7.3f}  {np.quantile(big, t):7.3f}")

###############################################################################
# The atoms' mean estimates the expected return, which is what an actor-critic
# baseline needs; the spread of the atoms is extra information a scalar critic
# throws away.

print("mean of atoms", round(mean_of(atoms), 3), " sample mean", round(big.mean(), 3))
print("W1 to the empirical quantiles", round(wasserstein1(atoms, np.quantile(big, taus)), 4))

###############################################################################
# Large kappa turns the loss into an asymmetric squared error whose minimiser
# is an expectile, not a quantile. With kappa = 50 the atoms collapse toward
# the mean and lose the bimodal shape.

wide = np.zeros(n)
for step in range(4000):
    _, g = quantile_huber_loss(wide, sample(64), taus, kappa=50.0)
    wide -= 5.0 * n * g
print("kappa=50 atoms:", np.round(wide, 2))
