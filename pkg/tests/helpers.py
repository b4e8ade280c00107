"""Shared randomized-input builders for the test suite. Seeded by callers."""

import numpy as np

from rnsfde.delay import DelayKernel


def random_kernel(rng, max_atoms=2, max_exps=2, force_density=False):
    """Random valid kernel; at least one component, mass exactly 1."""
    n_atoms = 0 if force_density else int(rng.integers(0, max_atoms + 1))
    n_exps = int(rng.integers(1 if (force_density or n_atoms == 0) else 0, max_exps + 1))
    if n_atoms + n_exps == 0:
        n_exps = 1
    raw = rng.uniform(0.2, 1.0, n_atoms + n_exps)
    raw /= raw.sum()
    atoms = tuple((-float(rng.uniform(0.0, 3.0)), float(w)) for w in raw[:n_atoms])
    exps = tuple((float(rng.uniform(0.5, 8.0)), float(w)) for w in raw[n_atoms:])
    return DelayKernel(atoms=atoms, exp_components=exps)


def random_generator_rates(rng, n, min_rate=0.05, max_rate=3.0):
    """Random irreducible conservative rate matrix (all off-diagonals positive)."""
    q = rng.uniform(min_rate, max_rate, (n, n))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q
