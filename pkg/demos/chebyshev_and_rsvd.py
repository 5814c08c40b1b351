"""
Matrix square roots and randomized eigenpairs
=============================================

Two building blocks of the low-rank objective, checked against dense
linear algebra on a small Matérn prior.
"""

import numpy as np
from scipy import linalg

from lowrank_eb import GridGeometry, HyperParams, assemble_prior
from lowrank_eb.rsvd import RsvdConfig, randomized_eig
from lowrank_eb.sqrtm import ChebConfig, ChebyshevSqrt, estimate_spectral_bounds

grid = GridGeometry(20, 20)
prior = assemble_prior(grid, HyperParams(sigma=1.0, nu=1.5, rho=0.2))
lam = np.linalg.eigvalsh(prior)
print(f"prior: n={grid.n}, eigenvalues in [{lam[0]:.3g}, {lam[-1]:.3g}]")

# Lanczos gives a cheap enclosing interval
lo, hi = estimate_spectral_bounds(prior)
print(f"Lanczos bounds: [{lo:.3g}, {hi:.3g}]")

# sqrt(D) applied to a block of vectors, for growing polynomial degree
rng = np.random.default_rng(0)
omega = rng.standard_normal((grid.n, 8))
exact = np.real(linalg.sqrtm(prior)) @ omega
for k in (10, 20, 40, 80, 160):
    approx = ChebyshevSqrt(prior, ChebConfig(k=k))(omega)
    err = np.linalg.norm(approx - exact) / np.linalg.norm(exact)
    print(f"  k={k:4d}  relative error {err:.2e}")

# randomized eigenpairs of a PSD matrix with decaying spectrum
H = prior @ prior
top = np.linalg.eigvalsh(H)[::-1][:10]
plain = randomized_eig(H, RsvdConfig(r=10, seed=1, oversample=10))
# two power iterations sharpen a slowly decaying spectrum
powered = randomized_eig(H, RsvdConfig(r=10, seed=1, oversample=10, power_iters=2))
print("leading eigenvalues: exact, randomized, randomized with power iterations")
for a, b, c in zip(top, plain.values, powered.values):
    print(f"  {a:12.6g} {b:12.6g} {c:12.6g}")
