import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rnsfde.certificates import (
    CertificateReport,
    DissipativityConstants,
    PartitionCertificate,
    assumption_falsifier,
    contraction_constants,
    exp_functional_exact,
    exp_functional_mc,
    f_of,
    finite_space_certificate,
    m_matrix_certificate,
    partition_reduce,
    spectral_rate,
    threshold_check,
)
from rnsfde.chain import Generator
from rnsfde.delay import DelayKernel, moment
from rnsfde.errors import EmptyGroup, Kappa2NotContractive, SingularSystem
from rnsfde.rng import stream
from rnsfde.segments import Segment, SegmentQuadrature

from helpers import random_generator_rates

Q2 = Generator([[-1.0, 1.0], [2.0, -2.0]])


def consts(
    p=2.0,
    p0=0.01,
    r=0.5,
    kappa=0.1,
    alpha=(-2.0, -1.0),
    beta=(0.0, 0.0),
    gamma=0.05,
    rate=6.0,
):
    return DissipativityConstants(
        p=p,
        p0=p0,
        r=r,
        kappa=kappa,
        alpha=np.array(alpha),
        beta=np.array(beta),
        gamma=gamma,
        kernel=DelayKernel.exponential(rate),
    )


# constants of the 2-state desk example: the kernel rate 20.4 makes the
# boosted moment at exponent 2*(0.5+8) equal exactly 20.4/3.4 = 6
def desk_consts(alpha=(-8.0, -7.0), kappa=0.1, p0=0.01):
    return consts(kappa=kappa, alpha=alpha, p0=p0, rate=20.4)


class TestContractionConstants:
    def test_kappa_zero(self):
        k1, k2 = contraction_constants(consts(kappa=0.0))
        assert k1 == 0.0 and k2 == 0.0

    def test_frozen_two_state(self):
        # r=0.5, p=2, alpha_min=-2, rate 6: moments 1.2 and 6
        k1, k2 = contraction_constants(consts())
        assert abs(k1 - 0.1 * math.sqrt(1.2)) < 1e-15
        assert abs(k2 - 0.1 * math.sqrt(6.0)) < 1e-15
        assert abs(k1 - 0.10954) < 1e-5
        assert abs(k2 - 0.24495) < 1e-5

    def test_frozen_single_rate(self):
        c = consts(kappa=0.3, r=1.0, alpha=(-0.2,), beta=(0.0,), rate=3.0)
        k1, _ = contraction_constants(c)
        assert abs(k1 - 0.3 * math.sqrt(3.0)) < 1e-15
        assert abs(k1 - 0.51962) < 1e-5

    def test_exponent_override(self):
        c = consts(alpha=(-0.5, -0.25))
        k1q, _ = contraction_constants(c, exponent=4.0)
        assert abs(k1q - 0.1 * moment(c.kernel, 2.0) ** 0.25) < 1e-15


class TestFOf:
    def test_collapse_at_kappa_zero(self):
        # beta=0, p=2, kappa=0: f(k) = delta_{2(r - alpha_min)} + 2 alpha(k)
        c = consts(kappa=0.0)
        f = f_of(c)
        delta = moment(c.kernel, 2.0 * (0.5 + 2.0))
        assert np.allclose(f, delta + 2.0 * c.alpha, atol=1e-14)
        assert np.allclose(f, [2.0, 4.0], atol=1e-12)

    def test_desk_example_values(self):
        c = desk_consts()
        f = f_of(c)
        k2 = 0.1 * math.sqrt(6.0)
        surcharge = 6.0 / (1.0 - k2) ** 2
        assert np.allclose(f, surcharge + 2.0 * c.alpha, atol=1e-12)
        # published rounding of the same numbers
        assert abs(f[0] + 5.477) < 2.5e-3
        assert abs(f[1] + 3.477) < 2.5e-3

    def test_beta_shift_doubles_surcharge(self):
        c0 = desk_consts()
        c1 = consts(kappa=0.1, alpha=(-8.0, -7.0), beta=(0.5, 0.5), rate=20.4)
        shift = f_of(c1) - f_of(c0)
        surcharge = 6.0 / (1.0 - 0.1 * math.sqrt(6.0)) ** 2
        assert np.allclose(shift, surcharge, atol=1e-10)
        assert abs(shift[0] - 10.523) < 2.5e-3

    def test_noncontractive_kappa2_raises(self):
        with pytest.raises(Kappa2NotContractive):
            f_of(consts(kappa=0.9))  # 0.9 * sqrt(6) > 1


class TestSpectralRate:
    def test_zero_f_gives_zero(self):
        assert abs(spectral_rate(Q2, [0.0, 0.0])) < 1e-12

    def test_frozen_two_state(self):
        # eigenvalues of [[-6.477, 1], [2, -5.477]] are -5.977 +- 1.5
        zeta = spectral_rate(Q2, [-5.477, -3.477])
        assert abs(zeta - 4.477) < 1e-10

    def test_shift_identity(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            g = Generator(random_generator_rates(rng, 5))
            f = rng.normal(size=5)
            c = rng.normal()
            assert abs(spectral_rate(g, f + c) - (spectral_rate(g, f) - c)) < 1e-10


class TestExpFunctionalExact:
    def test_t_zero(self):
        assert np.allclose(exp_functional_exact(Q2, [-1.0, 2.0], 0.0), 1.0)

    def test_constant_f(self):
        for t in (0.5, 2.0):
            vec = exp_functional_exact(Q2, [-0.7, -0.7], t)
            assert np.allclose(vec, math.exp(-0.7 * t), rtol=1e-12)

    def test_matches_ode_oracle(self):
        f = np.array([-5.477, -3.477])
        qhat = Q2.rates + np.diag(f)
        sol = solve_ivp(
            lambda _, y: qhat @ y,
            (0.0, 2.0),
            np.ones(2),
            rtol=1e-11,
            atol=1e-13,
            dense_output=True,
        )
        for t in (0.5, 1.0, 2.0):
            want = sol.sol(t)
            got = exp_functional_exact(Q2, f, t)
            assert np.allclose(got, want, rtol=1e-8)

    def test_log_limit_is_minus_zeta(self):
        f = np.array([-5.477, -3.477])
        zeta = spectral_rate(Q2, f)
        for i in (0, 1):
            val = exp_functional_exact(Q2, f, 100.0, start=i)
            assert abs(math.log(val) / 100.0 + zeta) <= 0.01

    def test_start_component(self):
        f = [-1.0, -2.0]
        vec = exp_functional_exact(Q2, f, 1.5)
        assert exp_functional_exact(Q2, f, 1.5, start=1) == pytest.approx(vec[1])


class TestExpFunctionalMC:
    def test_matches_exact_within_3se(self):
        f = np.array([-1.0, -0.5])
        ts = np.array([1.0, 2.0])
        means, ses = exp_functional_mc(Q2, f, ts, 0, 20000, stream(101, 0, "expfunc"))
        for j, t in enumerate(ts):
            exact = exp_functional_exact(Q2, f, t, start=0)
            assert abs(means[j] - exact) <= 3.5 * ses[j]

    def test_deterministic(self):
        f = np.array([-1.0, -0.5])
        a, _ = exp_functional_mc(Q2, f, [1.0], 1, 500, stream(7, 0, "mc"))
        b, _ = exp_functional_mc(Q2, f, [1.0], 1, 500, stream(7, 0, "mc"))
        assert np.array_equal(a, b)

    def test_t_zero_exact(self):
        means, ses = exp_functional_mc(Q2, [-1.0, -0.5], [0.0], 0, 100, stream(1, 0, "z"))
        assert means[0] == 1.0 and ses[0] == 0.0


FOUR_STATE_Q = Generator(
    [
        [-2.0, 1.0, 0.5, 0.5],
        [1.0, -2.0, 0.5, 0.5],
        [1.0, 1.0, -2.5, 0.5],
        [1.5, 0.5, 0.5, -2.5],
    ]
)
FOUR_STATE_ALPHA = (-5.0, -4.5, -1.0, -0.5)


def four_state_consts():
    return consts(alpha=FOUR_STATE_ALPHA, beta=(0.0, 0.0, 0.0, 0.0), rate=30.0)


class TestPartitionReduce:
    def test_four_state_increasing_matches_hand_sums(self):
        pc = partition_reduce(four_state_consts(), FOUR_STATE_Q, [-2.0], ordering="increasing")
        assert pc.groups == ((0, 1), (2, 3))
        assert np.allclose(pc.alpha_F, [-4.5, -0.5])
        assert pc.Q_F[0, 1] == 1.0  # inf of row sums toward the later group
        assert pc.Q_F[1, 0] == 2.0  # sup of row sums toward the earlier group
        assert np.allclose(pc.Q_F.sum(axis=1), 0.0)

    def test_four_state_decreasing_reverses_groups(self):
        pc = partition_reduce(four_state_consts(), FOUR_STATE_Q, [-2.0])
        assert pc.ordering == "decreasing"
        assert pc.groups == ((2, 3), (0, 1))
        assert np.allclose(pc.alpha_F, [-0.5, -4.5])
        assert np.allclose(pc.Q_F, [[-2.0, 2.0], [1.0, -1.0]])

    def test_single_group(self):
        pc = partition_reduce(four_state_consts(), FOUR_STATE_Q, [])
        assert pc.m == 1
        assert pc.Q_F == np.zeros((1, 1))
        assert pc.alpha_F[0] == -0.5

    def test_empty_group_raises(self):
        with pytest.raises(EmptyGroup):
            partition_reduce(four_state_consts(), FOUR_STATE_Q, [-10.0])

    def test_exact_lumpability(self):
        # within each group: identical alpha and identical cross-group row sums
        q4 = Generator(
            [
                [-2.0, 1.0, 0.5, 0.5],
                [0.3, -1.3, 0.2, 0.8],
                [0.4, 0.6, -1.5, 0.5],
                [0.7, 0.3, 0.9, -1.9],
            ]
        )
        c4 = consts(alpha=(-3.0, -3.0, -1.0, -1.0), beta=(0.0,) * 4, rate=30.0)
        pc4 = partition_reduce(c4, q4, [-2.0], ordering="increasing")
        # lumped 2-state model reduced with singleton groups
        q2 = Generator([[-1.0, 1.0], [1.0, -1.0]])
        c2 = consts(alpha=(-3.0, -1.0), rate=30.0)
        pc2 = partition_reduce(c2, q2, [-2.0], ordering="increasing")
        assert np.allclose(pc4.Q_F, pc2.Q_F, atol=1e-14)
        assert np.allclose(pc4.alpha_F, pc2.alpha_F)


def hand_partition(alpha_f, beta_f, q_f, ordering="decreasing"):
    alpha_f = np.asarray(alpha_f, dtype=float)
    return PartitionCertificate(
        thresholds=(),
        ordering=ordering,
        groups=tuple((i,) for i in range(alpha_f.size)),
        alpha_F=alpha_f,
        beta_F=np.asarray(beta_f, dtype=float),
        Q_F=np.asarray(q_f, dtype=float),
    )


class TestMMatrixCertificate:
    def test_worked_two_group_example(self):
        pc = hand_partition([2.0, -4.5], [0.0, 0.0], [[-5.0, 5.0], [0.1, -0.1]])
        m_matrix_certificate(pc, 2.0)
        assert np.allclose(pc.A, [[1.0, -4.0], [-0.1, 9.0]], atol=1e-14)
        assert pc.checks["z_pattern"].passed
        assert np.allclose(pc.u_F, [13.0 / 8.6, 1.1 / 8.6], atol=1e-12)
        assert np.allclose(pc.v_F, [14.1 / 8.6, 1.1 / 8.6], atol=1e-12)
        assert pc.checks["u_positive"].passed
        assert pc.checks["m_matrix"].passed
        assert pc.checks["v_decreasing"].passed
        assert pc.checks["residual"].passed
        assert pc.checks["residual"].value <= 1e-12
        assert pc.checks["direct_v_positive"].passed
        assert pc.checks["direct_v_decreasing"].passed

    def test_three_group_h_layout(self):
        pc = hand_partition(
            [1.0, -2.0, -5.0],
            [0.0, 0.0, 0.0],
            [[-2.0, 1.0, 1.0], [0.5, -1.0, 0.5], [0.2, 0.2, -0.4]],
        )
        m_matrix_certificate(pc, 2.0)
        assert np.array_equal(pc.H, [[1, 1, 1], [0, 1, 1], [0, 0, 1]])

    def test_increasing_ordering_breaks_z_pattern(self):
        # last column of A is -p * alpha_F, positive for dissipative groups
        pc = hand_partition([-4.5, -0.5], [0.0, 0.0], [[-1.0, 1.0], [2.0, -2.0]], "increasing")
        m_matrix_certificate(pc, 2.0)
        assert np.allclose(pc.A[:, -1], -2.0 * pc.alpha_F)
        assert pc.A[0, 1] == 9.0
        assert not pc.checks["z_pattern"].passed
        assert not pc.passed

    def test_singular_system_raises(self):
        pc = hand_partition([0.0, 0.0], [0.0, 0.0], [[-1.0, 1.0], [1.0, -1.0]])
        with pytest.raises(SingularSystem):
            m_matrix_certificate(pc, 2.0)


class TestThresholdCheck:
    def test_kappa1_zero_collapse(self):
        pc = hand_partition([-1.0], [0.0], [[0.0]])
        pc.v_F = np.array([0.9])
        c = consts(kappa=0.0, alpha=(-1.0,), beta=(0.0,))
        verdicts = threshold_check(pc, c)
        assert verdicts[0].passed
        assert verdicts[0].value == pytest.approx(0.45)
        assert verdicts[0].margin == pytest.approx(0.05)

    def test_frozen_rhs_and_both_sides(self):
        c = consts(kappa=0.1, alpha=(-1.0,), beta=(0.05,))
        k1 = 0.1 * math.sqrt(1.2)
        rhs = (1.0 - k1) ** 2 / 2.0
        assert abs(rhs - 0.39650) < 1e-4

        pc = hand_partition([-1.0], [0.05], [[0.0]])
        pc.v_F = np.array([0.5])
        ok = threshold_check(pc, c)
        assert ok[0].passed and ok[0].value == pytest.approx(0.275)

        pc2 = hand_partition([-1.0], [0.05], [[0.0]])
        pc2.v_F = np.array([0.9])
        bad = threshold_check(pc2, c)
        assert not bad[0].passed
        assert bad[0].value == pytest.approx(0.495)
        assert bad[0].margin < 0


class TestFiniteSpaceCertificate:
    def test_desk_example_passes(self):
        rep = finite_space_certificate(desk_consts(), Q2)
        assert rep.passed
        k2 = 0.1 * math.sqrt(6.0)
        f0 = 6.0 / (1.0 - k2) ** 2 - 16.0
        f1 = f0 + 2.0
        # closed-form 2x2 spectrum of the tilted generator
        qhat = np.array([[f0 - 1.0, 1.0], [2.0, f1 - 2.0]])
        mean = qhat.trace() / 2.0
        disc = ((qhat[0, 0] - qhat[1, 1]) / 2.0) ** 2 + qhat[0, 1] * qhat[1, 0]
        zeta_oracle = -(mean + math.sqrt(disc))
        assert rep.zeta == pytest.approx(zeta_oracle, abs=1e-10)
        assert abs(rep.zeta - 4.477) < 2e-3
        assert rep.q_level["zeta"] > 0
        assert abs(rep.q_level["zeta"] - 4.077) < 2e-3
        assert rep.checks["alpha_min_negative"].passed
        assert rep.diagnostics["sandwich"]["c1"] > 0

    def test_expansive_state_fails_zeta(self):
        rep = finite_space_certificate(desk_consts(alpha=(-8.0, 2.0)), Q2)
        assert not rep.passed
        assert not rep.checks["zeta"].passed
        assert rep.checks["zeta"].margin < 0

    def test_large_kappa_fails_kappa1(self):
        rep = finite_space_certificate(desk_consts(kappa=1.0), Q2)
        assert not rep.passed
        assert not rep.checks["kappa1"].passed
        assert rep.f is None and rep.zeta is None

    def test_infinite_moment_at_boosted_level_only(self):
        c = desk_consts()
        c = DissipativityConstants(
            p=c.p, p0=c.p0, r=c.r, kappa=c.kappa, alpha=c.alpha, beta=c.beta,
            gamma=c.gamma, kernel=DelayKernel.exponential(17.05),
        )
        rep = finite_space_certificate(c, Q2)
        assert rep.checks["kappa1"].passed
        assert not rep.checks["kappa1_q"].passed
        assert not rep.passed
        assert rep.q_level["f"] is None

    def test_report_round_trips_to_dict(self):
        rep = finite_space_certificate(desk_consts(), Q2)
        d = rep.to_dict()
        assert d["passed"] is True
        assert d["verdicts"]["zeta"]["passed"] is True
        assert isinstance(d["f"], list)


def linear_history_G(kernel, kg):
    cache = {}

    def G(seg, k):
        key = (seg.r, seg.h, seg.n_nodes)
        if key not in cache:
            cache[key] = SegmentQuadrature(kernel, seg.r, seg.h, seg.n_nodes)
        return kg * cache[key].of_segment(seg)

    return G


class TestAssumptionFalsifier:
    def test_ou_drift_exact_equality(self):
        c = consts(kappa=0.0, alpha=(-2.0, -1.0), gamma=0.1)
        model = SimpleNamespace(
            dim=1,
            kernel=c.kernel,
            G=lambda seg, k: np.zeros(1),
            b=lambda seg, k: c.alpha[k] * seg.endpoint(),
            sigma=lambda seg, k: np.array([[0.5 + 0.5 * k]]),
        )
        rep = assumption_falsifier(model, c, 200, stream(3, 0, "fals"))
        assert not rep.violated
        assert abs(rep.worst("drift_one_sided")) < 1e-9
        assert rep.worst("diffusion_lipschitz") >= -1e-12
        assert rep.worst("neutral_contraction") >= -1e-12

    def test_linear_neutral_equality_on_grid_atom(self):
        kernel = DelayKernel.dirac(-0.5)
        c = DissipativityConstants(
            p=2.0, p0=0.01, r=0.5, kappa=0.3,
            alpha=np.array([-1.0]), beta=np.array([1.0]), gamma=1.0, kernel=kernel,
        )
        model = SimpleNamespace(
            dim=1,
            kernel=kernel,
            G=linear_history_G(kernel, 0.3),
            b=lambda seg, k: -seg.endpoint(),
            sigma=lambda seg, k: np.array([[1.0]]),
        )
        rep = assumption_falsifier(model, c, 200, stream(5, 0, "fals"))
        res = rep.results["neutral_contraction"]
        assert res["violations"] == 0
        assert abs(res["worst_margin"]) < 1e-9  # equality case

    def test_jensen_margin_nonnegative_for_density_kernel(self):
        kernel = DelayKernel.exponential(3.0)
        c = DissipativityConstants(
            p=2.0, p0=0.01, r=0.5, kappa=0.3,
            alpha=np.array([-1.0]), beta=np.array([1.0]), gamma=1.0, kernel=kernel,
        )
        model = SimpleNamespace(
            dim=1,
            kernel=kernel,
            G=linear_history_G(kernel, 0.3),
            b=lambda seg, k: -seg.endpoint(),
            sigma=lambda seg, k: np.array([[1.0]]),
        )
        rep = assumption_falsifier(model, c, 300, stream(6, 0, "fals"))
        res = rep.results["neutral_contraction"]
        assert res["violations"] == 0
        assert res["worst_margin"] >= -1e-9
        assert res["worst_margin"] < 1e-4  # constant pairs sit near equality

    def test_understated_gamma_found(self):
        kernel = DelayKernel.dirac(-0.5)
        g_gain = 0.8
        c = DissipativityConstants(
            p=2.0, p0=0.01, r=0.5, kappa=0.1,
            alpha=np.array([-1.0]), beta=np.array([1.0]),
            gamma=g_gain**2 / 2.0,  # half the true Lipschitz constant
            kernel=kernel,
        )
        quad = linear_history_G(kernel, g_gain)
        model = SimpleNamespace(
            dim=1,
            kernel=kernel,
            G=lambda seg, k: np.zeros(1),
            b=lambda seg, k: -seg.endpoint(),
            sigma=lambda seg, k: np.atleast_2d(quad(seg, k)),
        )
        rep = assumption_falsifier(model, c, 400, stream(8, 0, "fals"))
        res = rep.results["diffusion_lipschitz"]
        assert res["violations"] > 0
        assert res["witness"] is not None
        assert res["witness"]["margin"] < 0
        assert rep.violated

    def test_lyapunov_margins_and_falsification(self):
        c = consts(kappa=0.0, alpha=(-2.0, -1.0), gamma=0.1)
        model = SimpleNamespace(
            dim=1,
            kernel=c.kernel,
            G=lambda seg, k: np.zeros(1),
            b=lambda seg, k: c.alpha[k] * seg.endpoint(),
            sigma=lambda seg, k: np.array([[0.5 + 0.5 * k]]),
        )
        good = assumption_falsifier(
            model, c, 300, stream(9, 0, "fals"),
            generator=Q2, weights=[1.0, 1.0], lambdas=(1.0, 1.5, 0.1),
        )
        assert good.results["lyapunov_single"]["violations"] == 0
        assert good.results["lyapunov_pair"]["violations"] == 0
        bad = assumption_falsifier(
            model, c, 300, stream(9, 0, "fals"),
            generator=Q2, weights=[1.0, 1.0], lambdas=(1.0, 3.0, 0.01),
        )
        assert bad.results["lyapunov_single"]["violations"] > 0

    def test_deterministic_given_stream(self):
        c = consts(kappa=0.0, alpha=(-2.0, -1.0))
        model = SimpleNamespace(
            dim=1,
            kernel=c.kernel,
            G=lambda seg, k: np.zeros(1),
            b=lambda seg, k: c.alpha[k] * seg.endpoint(),
            sigma=lambda seg, k: np.array([[1.0]]),
        )
        a = assumption_falsifier(model, c, 100, stream(11, 0, "fals"))
        b = assumption_falsifier(model, c, 100, stream(11, 0, "fals"))
        assert a.to_dict() == b.to_dict()
