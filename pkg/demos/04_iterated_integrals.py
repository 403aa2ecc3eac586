"""Iterated stochastic integrals: exact identities and Levy-area sampling.

The Milstein correction term needs the double integrals I[j, i] over each
step.  Their diagonal is the exact identity (dW_i^2 - h)/2 and the
off-diagonal pair always sums to dW_i dW_j; what distinguishes noise
classes is the antisymmetric remainder (Levy area), which commutative
schemes never see and non-commutative ones sample from a truncated series
with a Gaussian tail correction.
"""

import math

import numpy as np

from jumpadapt import WienerSource, sample_iterated, sample_levy_areas
from jumpadapt.problems import NoiseClass

rng = np.random.default_rng(99)
h = 2.0**-4

src = WienerSource.on_demand(2, rng)
xi = sample_iterated(src, 0.0, h, NoiseClass.NON_COMMUTATIVE, levy_terms=64)
print("one sampled step, h = 2^-4:")
print("  dW      =", np.round(xi.dW, 6))
print("  I2      =\n", np.round(xi.I2, 6))
print("  diagonal identity residual:",
      abs(xi.I2[0, 0] - (xi.dW[0] ** 2 - h) / 2.0))
print("  pairing identity residual :",
      abs(xi.I2[0, 1] + xi.I2[1, 0] - xi.dW[0] * xi.dW[1]))

# unconditional Levy-area variance approaches h^2/4 as the series grows
n = 50_000
dW = rng.standard_normal((n, 2)) * math.sqrt(h)
print()
print(f"{'terms':>6} {'var(A)':>12} {'h^2/4':>12} {'ratio':>8}")
for terms in (1, 5, 50, 500):
    A = sample_levy_areas(rng, h, dW, terms=terms)
    var = float(np.var(A[:, 0, 1]))
    print(f"{terms:6d} {var:12.3e} {h * h / 4:12.3e} {var / (h * h / 4):8.4f}")

# a fine-grid source assembles coarse-step integrals exactly from its cells
src = WienerSource.fine_grid(2, 1.0, 2.0**-8, np.random.default_rng(1),
                             levy_areas=True)
coarse = src.iterated(0.25, 0.75, NoiseClass.NON_COMMUTATIVE)
acc, I2 = np.zeros(2), np.zeros((2, 2))
for k in range(64, 192):
    piece = src.iterated(k * 2.0**-8, (k + 1) * 2.0**-8, NoiseClass.NON_COMMUTATIVE)
    I2 += piece.I2 + np.outer(acc, piece.dW)
    acc += piece.dW
print()
print("coarse step [0.25, 0.75] vs per-cell accumulation:",
      np.max(np.abs(I2 - coarse.I2)))
