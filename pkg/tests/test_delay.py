import math

import numpy as np
import pytest
from scipy.integrate import quad

from helpers import random_kernel
from rnsfde.delay import DelayKernel, horizon_for_tail, moment, quadrature, tail_moment
from rnsfde.errors import InfiniteMoment


def oracle_moment(kernel, c):
    """Independent adaptive-quadrature evaluation of the exponential moment."""
    total = sum(w * math.exp(-c * t) for t, w in kernel.atoms)
    for rate, u in kernel.exp_components:
        val, err = quad(
            lambda th: u * rate * math.exp((rate - c) * th), -np.inf, 0.0,
            epsabs=1e-13, epsrel=1e-13, limit=200,
        )
        assert err < 1e-9 * max(1.0, abs(val))
        total += val
    return total


def test_kernel_validation():
    with pytest.raises(ValueError):
        DelayKernel(atoms=((0.5, 1.0),))  # positive location
    with pytest.raises(ValueError):
        DelayKernel(atoms=((0.0, 0.7),))  # mass != 1
    with pytest.raises(ValueError):
        DelayKernel(exp_components=((-1.0, 1.0),))
    with pytest.raises(ValueError):
        DelayKernel()
    DelayKernel(atoms=((0.0, 0.5),), exp_components=((2.0, 0.5),))


def test_moment_frozen_values():
    assert moment(DelayKernel.dirac(0.0), 2.0) == pytest.approx(1.0, abs=1e-15)
    assert moment(DelayKernel.exponential(3.0), 2.0) == pytest.approx(3.0, rel=1e-14)
    with pytest.raises(InfiniteMoment):
        moment(DelayKernel.exponential(3.0), 3.0)
    with pytest.raises(InfiniteMoment):
        moment(DelayKernel.exponential(3.0), 4.0)


def test_moment_at_zero_is_one_and_increasing():
    rng = np.random.default_rng(101)
    for _ in range(50):
        k = random_kernel(rng)
        assert moment(k, 0.0) == pytest.approx(1.0, abs=1e-12)
        cmax = min(k.min_rate, 10.0)
        cs = np.sort(rng.uniform(-3.0, cmax * 0.95, 4))
        vals = [moment(k, c) for c in cs]
        pure_dirac0 = not k.exp_components and all(t == 0.0 for t, _ in k.atoms)
        for a, b in zip(vals, vals[1:]):
            if pure_dirac0:
                assert b == pytest.approx(a)
            else:
                assert b > a - 1e-12


def test_moment_vs_adaptive_quadrature_200_random_kernels():
    rng = np.random.default_rng(7)
    for _ in range(200):
        k = random_kernel(rng)
        c = float(rng.uniform(-2.0, min(k.min_rate, 12.0) * 0.9))
        assert moment(k, c) == pytest.approx(oracle_moment(k, c), rel=1e-8)


def test_tail_moment_frozen_values():
    k = DelayKernel.exponential(3.0)
    assert tail_moment(k, 2.0, 0.0) == pytest.approx(moment(k, 2.0), rel=1e-14)
    assert tail_moment(k, 2.0, math.log(2.0)) == pytest.approx(1.5, rel=1e-14)
    assert tail_moment(DelayKernel.dirac(-1.0), 1.0, 2.0) == 0.0
    # atom inside the tail counts, weighted
    k2 = DelayKernel(atoms=((-2.0, 1.0),))
    assert tail_moment(k2, 1.0, 1.0) == pytest.approx(math.exp(2.0), rel=1e-14)


def test_tail_moment_monotone_and_vanishing():
    rng = np.random.default_rng(11)
    for _ in range(30):
        k = random_kernel(rng)
        c = float(rng.uniform(0.0, min(k.min_rate, 8.0) * 0.8))
        ts = np.sort(rng.uniform(0.0, 6.0, 5))
        vals = [tail_moment(k, c, t) for t in ts]
        for a, b in zip(vals, vals[1:]):
            assert b <= a + 1e-12
        assert tail_moment(k, c, 200.0) < 1e-8 or not k.exp_components


def test_quadrature_atom_on_grid():
    qw = quadrature(DelayKernel.dirac(-0.5), h=0.1, T=1.0)
    assert qw.pairs() == [(-5, 1.0)]
    assert qw.snaps == ()


def test_quadrature_atom_snapped():
    qw = quadrature(DelayKernel.dirac(-0.53), h=0.1, T=1.0)
    assert qw.pairs() == [(-5, 1.0)]
    assert len(qw.snaps) == 1
    theta, node, dist = qw.snaps[0]
    assert node == 5
    assert dist == pytest.approx(0.03, abs=1e-12)


def test_quadrature_density_mass():
    qw = quadrature(DelayKernel.exponential(3.0), h=1e-3, T=10.0)
    assert qw.weights.sum() == pytest.approx(1.0 - math.exp(-30.0), abs=1e-9)


def test_quadrature_sum_matches_truncated_mass_random():
    rng = np.random.default_rng(23)
    for _ in range(40):
        k = random_kernel(rng)
        h = float(rng.choice([0.01, 0.02, 0.05]))
        T = h * int(rng.integers(40, 400))
        qw = quadrature(k, h, T)
        assert qw.weights.sum() == pytest.approx(1.0 - tail_moment(k, 0.0, T), abs=1e-9)


def test_quadrature_midpoint_second_order():
    k = DelayKernel(exp_components=((3.0, 0.6), (1.0, 0.4)))
    c = 0.7
    T = 6.0
    errs = []
    for h in (0.05, 0.025):
        qw = quadrature(k, h, T)
        theta = -h * np.arange(qw.n_nodes)
        approx = float(qw.apply(np.exp(-c * theta)))
        exact = moment(k, c) - tail_moment(k, c, T)
        errs.append(abs(approx - exact))
    # halving h should cut the midpoint-rule error by ~4
    assert errs[1] <= errs[0] * 0.3 + 1e-13


def test_quadrature_apply_vector_values():
    qw = quadrature(DelayKernel.exponential(2.0), h=0.1, T=2.0)
    vals = np.ones((qw.n_nodes, 3))
    out = qw.apply(vals)
    assert out.shape == (3,)
    assert np.allclose(out, qw.weights.sum())


def test_horizon_for_tail():
    k = DelayKernel.exponential(3.0)
    T = horizon_for_tail(k, 1.0, 1e-8)
    assert tail_moment(k, 1.0, T) <= 1e-8
    assert tail_moment(k, 1.0, T * 0.98) > 1e-8  # near-minimal
    # atom kernels: horizon just beyond the deepest atom
    k2 = DelayKernel(atoms=((-1.5, 1.0),))
    T2 = horizon_for_tail(k2, 2.0, 1e-8)
    assert 1.5 <= T2 <= 1.5 + 1e-6
    assert horizon_for_tail(k, 1.0, 10.0) == 0.0
