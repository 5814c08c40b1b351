"""Random test models shared by the test modules."""

import numpy as np

from lowrank_eb.marglik import GaussLinModel


def random_spd(n, cond, rng):
    """SPD matrix with log-uniform spectrum spanning exactly ``[1, cond]``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.geomspace(1.0, cond, n) if n > 1 else np.ones(1)
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)


def random_model(n, m, rng, cond=1e3, diagonal_noise=True):
    prior = random_spd(n, cond, rng) / cond**0.5
    G = rng.standard_normal((m, n)) / np.sqrt(n)
    if diagonal_noise:
        noise = rng.uniform(0.05, 0.5, m)
    else:
        noise = random_spd(m, 10.0, rng) * 0.1
    return GaussLinModel(G, prior, noise)
