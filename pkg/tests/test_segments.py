import math

import numpy as np
import pytest

from rnsfde.errors import IncompatibleGrids
from rnsfde.segments import MarkedPoint, Segment, fading_norm, metric_d, shift_append, weighted_sup


def random_segment(rng, r=1.0, h=0.25, n=9, d=1, scale=2.0):
    return Segment(r, h, rng.uniform(-scale, scale, (n, d)), rng.uniform(-scale, scale, d))


def dense_norm(s: Segment, per_cell=4001):
    """Brute-force sup by dense sampling of the represented function."""
    best = float(np.sqrt((s.tail_limit**2).sum()))
    for j in range(s.n_nodes - 1):
        t_hi = -j * s.h
        t_lo = -(j + 1) * s.h
        ts = np.linspace(t_lo, t_hi, per_cell)
        lam = (ts - t_lo) / s.h
        vals = s.values[j + 1][None, :] + lam[:, None] * (s.values[j] - s.values[j + 1])[None, :]
        w = np.exp(s.r * ts) * np.sqrt((vals**2).sum(axis=1))
        best = max(best, float(w.max()))
    best = max(best, float(np.sqrt((s.values[0] ** 2).sum())))
    return best


def test_norm_frozen_cases():
    s = Segment(1.0, 0.5, np.tile([1.0, 0.0], (5, 1)), [0.0, 0.0])
    assert fading_norm(s) == pytest.approx(1.0, abs=1e-15)
    assert fading_norm(Segment.zero(1.0, 0.5, 5, dim=2)) == 0.0
    # weighted constant: true sup e^{r theta} e^{-r theta} = 1; the piecewise
    # linear chords of e^{-r theta} overshoot by O((rh)^2), which the exact
    # within-representation norm must see, so compare at matching tolerance.
    w = Segment.weighted_constant(1.0, r=1.0, h=0.01, n_nodes=200)
    assert fading_norm(w) >= 1.0
    assert fading_norm(w) == pytest.approx(1.0, rel=(1.0 * 0.01) ** 2)
    assert fading_norm(Segment.weighted_constant(-2.0, r=0.5, h=0.01, n_nodes=100)) == pytest.approx(
        2.0, rel=1e-4
    )


def test_norm_interior_refinement_beats_node_max():
    # phi(0)=0.2, phi(-1)=1, r=1: stationary point at theta*=-0.75,
    # value e^{-0.75} * 0.8 > both node values.
    s = Segment(1.0, 1.0, np.array([[0.2], [1.0]]), [0.0])
    expected = math.exp(-0.75) * 0.8
    assert fading_norm(s) == pytest.approx(expected, rel=1e-12)
    node_max = max(0.2, math.exp(-1.0) * 1.0)
    assert fading_norm(s) > node_max


def test_norm_tail_dominates():
    s = Segment(0.5, 0.1, np.zeros((4, 1)), [3.0])
    assert fading_norm(s) == pytest.approx(3.0)


def test_norm_matches_dense_sampling_oracle():
    rng = np.random.default_rng(42)
    for d in (1, 3):
        for _ in range(25):
            s = random_segment(rng, r=float(rng.uniform(0.2, 2.0)), h=0.4, n=7, d=d)
            exact = fading_norm(s)
            dense = dense_norm(s)
            assert exact >= dense - 1e-12
            assert exact == pytest.approx(dense, abs=5e-6)


def test_metric_frozen_cases():
    a = Segment.constant(1.0, 1.0, 0.25, 6, tail_limit=0.0)
    z = Segment.constant(0.0, 1.0, 0.25, 6, tail_limit=0.0)
    assert metric_d(MarkedPoint(a, 0), MarkedPoint(a, 0)) == 0.0
    assert metric_d(MarkedPoint(a, 1), MarkedPoint(a, 2)) == 1.0
    assert metric_d(MarkedPoint(a, 0), MarkedPoint(z, 0)) == pytest.approx(1.0, abs=1e-15)


def test_metric_incompatible_grids():
    a = MarkedPoint(Segment.zero(1.0, 0.25, 6), 0)
    for bad in (
        Segment.zero(2.0, 0.25, 6),
        Segment.zero(1.0, 0.5, 6),
        Segment.zero(1.0, 0.25, 7),
        Segment.zero(1.0, 0.25, 6, dim=2),
    ):
        with pytest.raises(IncompatibleGrids):
            metric_d(a, MarkedPoint(bad, 0))


def test_metric_axioms_random_triples():
    rng = np.random.default_rng(5)
    for _ in range(100):
        pts = [
            MarkedPoint(random_segment(rng, d=2, n=6), int(rng.integers(0, 3)))
            for _ in range(3)
        ]
        a, b, c = pts
        dab, dba = metric_d(a, b), metric_d(b, a)
        assert dab >= 0.0
        assert abs(dab - dba) <= 1e-12
        assert metric_d(a, a) == 0.0
        assert metric_d(a, c) <= dab + metric_d(b, c) + 1e-12


def test_norm_homogeneity_and_subadditivity():
    rng = np.random.default_rng(9)
    for _ in range(50):
        s1 = random_segment(rng, n=8, d=2)
        s2 = random_segment(rng, n=8, d=2)
        alpha = float(rng.uniform(-3, 3))
        scaled = Segment(s1.r, s1.h, alpha * s1.values, alpha * s1.tail_limit)
        assert fading_norm(scaled) == pytest.approx(abs(alpha) * fading_norm(s1), rel=1e-12, abs=1e-12)
        summed = Segment(s1.r, s1.h, s1.values + s2.values, s1.tail_limit + s2.tail_limit)
        assert fading_norm(summed) <= fading_norm(s1) + fading_norm(s2) + 1e-12


def test_shift_append_zero_and_constant_fixed_points():
    z = Segment.zero(1.0, 0.5, 5)
    z2 = shift_append(z, 0.0)
    assert np.array_equal(z2.values, z.values) and np.array_equal(z2.tail_limit, z.tail_limit)
    c = Segment.constant(2.5, 0.7, 0.5, 5)  # consistent tail by default
    c2 = shift_append(c, 2.5)
    assert np.allclose(c2.values, c.values)
    assert np.allclose(c2.tail_limit, c.tail_limit, rtol=1e-14)


def test_shift_append_three_nodes():
    s = Segment(0.8, 0.5, np.array([[1.0], [2.0], [3.0]]), [0.1])
    out = shift_append(s, 7.0)
    assert out.n_nodes == 3
    assert np.allclose(out.values[:, 0], [7.0, 1.0, 2.0])
    # dropped node value 3.0 lands at theta = -(T_mem + h) = -1.5
    assert out.tail_limit[0] == pytest.approx(math.exp(-0.8 * 1.5) * 3.0, rel=1e-14)


def test_shift_append_norm_bound():
    rng = np.random.default_rng(31)
    for _ in range(60):
        s = random_segment(rng, r=float(rng.uniform(0.3, 1.5)), n=7, d=1)
        v = float(rng.uniform(-3, 3))
        out = shift_append(s, v)
        assert fading_norm(out) <= max(abs(v), fading_norm(s)) + 1e-12


def test_weighted_sup_batched_matches_single():
    rng = np.random.default_rng(12)
    segs = [random_segment(rng, n=6, d=2) for _ in range(7)]
    vals = np.stack([s.values for s in segs])
    tails = np.stack([s.tail_limit for s in segs])
    batch = weighted_sup(vals, tails, segs[0].r, segs[0].h)
    singles = np.array([fading_norm(s) for s in segs])
    assert np.allclose(batch, singles, rtol=1e-14)


def test_marked_point_validation():
    with pytest.raises(ValueError):
        MarkedPoint(Segment.zero(1.0, 0.1, 3), -1)
