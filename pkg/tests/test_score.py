import numpy as np
import pytest

from wassdiff.errors import InfeasibleBudgetError, SingularTimeError
from wassdiff.rngstream import stream
from wassdiff.score import (
    exact_field,
    exact_score,
    exact_score_per_sample_times,
    hessian,
    lipschitz_constant,
    log_density,
    make_corrupted_field,
    measure_score_error,
    quadratic_field,
    regularity_envelope,
    spatial_derivatives_1d,
)
from wassdiff.target import TimeGrid, forward_marginal_sample, make_dirac_mixture

TWO_DIRAC = make_dirac_mixture([[-1.0], [1.0]])


def fd_gradient(target, t, x, step):
    d = x.size
    grad = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        grad[i] = (
            log_density(target, t, (x + e)[None, :])[0]
            - log_density(target, t, (x - e)[None, :])[0]
        ) / (2.0 * step)
    return grad


class TestExactScore:
    def test_point_mass_score_is_linear(self):
        tg = make_dirac_mixture([[0.0]])
        x = np.array([[1.7], [-0.3]])
        assert np.allclose(exact_score(tg, 2.0, x), -x / 2.0)

    def test_two_dirac_closed_form(self):
        t = 0.9
        x = np.array([[0.4]])
        got = exact_score(TWO_DIRAC, t, x)[0, 0]
        assert got == pytest.approx((np.tanh(0.4 / t) - 0.4) / t, abs=1e-14)
        assert exact_score(TWO_DIRAC, t, np.array([[0.0]]))[0, 0] == 0.0

    def test_smoothed_point_mass(self):
        tg = make_dirac_mixture([[0.0]], smoothing=1.0)
        assert exact_score(tg, 1.0, np.array([[2.0]]))[0, 0] == pytest.approx(-1.0)
        fd = fd_gradient(tg, 1.0, np.array([2.0]), 1e-5 * 3.0)
        assert exact_score(tg, 1.0, np.array([[2.0]]))[0, 0] == pytest.approx(
            fd[0], rel=1e-6
        )

    def test_gradient_consistency_random(self):
        rng = np.random.default_rng(21)
        targets = [
            TWO_DIRAC,
            make_dirac_mixture([[0.3, -0.2], [-0.5, 0.8], [0.9, 0.1]], [0.5, 0.2, 0.3]),
            make_dirac_mixture([[0.5]], smoothing=0.7),
        ]
        for tg in targets:
            for _ in range(100):
                t = rng.uniform(0.05, 8.0)
                x = rng.normal(0.0, 2.0, tg.d)
                step = 1e-5 * (1.0 + np.linalg.norm(x))
                got = exact_score(tg, t, x[None, :])[0]
                want = fd_gradient(tg, t, x, step)
                denom = max(np.linalg.norm(want), 1e-3)
                assert np.linalg.norm(got - want) / denom < 1e-6

    def test_per_sample_times_matches_scalar(self):
        x = np.array([[0.3], [-1.2], [2.0]])
        times = np.array([0.5, 1.5, 3.0])
        batched = exact_score_per_sample_times(TWO_DIRAC, times, x)
        for i, t in enumerate(times):
            assert batched[i] == pytest.approx(exact_score(TWO_DIRAC, t, x[i : i + 1])[0])

    def test_singular_time_raises(self):
        with pytest.raises(SingularTimeError):
            exact_score(TWO_DIRAC, 0.0, np.array([[0.1]]))


class TestHessian:
    def test_two_dirac_sech2(self):
        t = 1.0
        for x in (0.0, 0.5, 2.0):
            got = hessian(TWO_DIRAC, t, np.array([x]))[0, 0]
            want = -1.0 / t + (1.0 / t**2) * np.cosh(x / t) ** -2
            assert got == pytest.approx(want, abs=1e-10)
        assert hessian(TWO_DIRAC, 1.0, np.array([0.0]))[0, 0] == pytest.approx(0.0)

    def test_point_mass_hessian(self):
        tg = make_dirac_mixture([[0.5, -0.5]])
        assert np.allclose(hessian(tg, 2.0, np.array([3.0, 1.0])), -np.eye(2) / 2.0)

    def test_far_field_value(self):
        got = hessian(TWO_DIRAC, 1.0, np.array([10.0]))[0, 0]
        assert got == pytest.approx(-1.0 + np.cosh(10.0) ** -2, abs=1e-6)

    def test_matches_score_finite_differences(self):
        rng = np.random.default_rng(22)
        tg = make_dirac_mixture([[0.4, 0.1], [-0.6, -0.3]], [0.7, 0.3])
        for _ in range(25):
            t = rng.uniform(0.1, 5.0)
            x = rng.normal(0.0, 1.5, 2)
            step = 1e-6 * (1.0 + np.linalg.norm(x))
            h_true = hessian(tg, t, x)
            fd = np.zeros((2, 2))
            for i in range(2):
                e = np.zeros(2)
                e[i] = step
                fd[:, i] = (
                    exact_score(tg, t, (x + e)[None, :])[0]
                    - exact_score(tg, t, (x - e)[None, :])[0]
                ) / (2.0 * step)
            assert np.allclose(h_true, 0.5 * (fd + fd.T), atol=1e-5)

    def test_eigenvalue_containment(self):
        rng = np.random.default_rng(23)
        for _ in range(300):
            m = rng.integers(1, 4)
            d = rng.integers(1, 4)
            pts = rng.normal(0.0, 1.0, (m, d))
            tau = float(rng.choice([0.0, 0.3]))
            tg = make_dirac_mixture(pts, smoothing=tau)
            r = tg.radius
            t = rng.uniform(1e-2, 10.0 * max(r, 0.1) ** 2)
            t_eff = t + tau
            x = rng.normal(0.0, 1.0, d)
            x *= rng.uniform(0.0, r + 5.0 * np.sqrt(t)) / max(np.linalg.norm(x), 1e-12)
            eigs = np.linalg.eigvalsh(hessian(tg, t, x))
            assert np.all(eigs >= -1.0 / t_eff - 1e-9)
            assert np.all(eigs <= -1.0 / t_eff + r**2 / t_eff**2 + 1e-9)

    def test_tightness_sup_at_origin(self):
        t = 0.8
        xs = np.linspace(-30.0, 30.0, 10_001)
        vals = np.array([hessian(TWO_DIRAC, t, np.array([x]))[0, 0] for x in xs])
        top = -1.0 / t + 1.0 / t**2
        assert vals.max() == pytest.approx(vals[5000])  # attained at x = 0
        assert vals[5000] == pytest.approx(top, abs=1e-9)
        bottom = hessian(TWO_DIRAC, t, np.array([1e3]))[0, 0]
        assert bottom == pytest.approx(-1.0 / t, abs=1e-6)


class TestSpatialDerivatives:
    def test_point_mass_higher_derivatives_vanish(self):
        tg = make_dirac_mixture([[0.0]])
        for order in (3, 4, 5):
            assert spatial_derivatives_1d(tg, 1.3, 0.7, order) == pytest.approx(0.0, abs=1e-14)

    def test_odd_symmetry_at_origin(self):
        assert spatial_derivatives_1d(TWO_DIRAC, 1.0, 0.0, 3) == pytest.approx(0.0, abs=1e-12)
        assert spatial_derivatives_1d(TWO_DIRAC, 1.0, 0.0, 5) == pytest.approx(0.0, abs=1e-12)

    def test_third_matches_hessian_differences(self):
        t, x = 1.0, 0.5
        step = 1e-3
        offsets = np.array([-2, -1, 1, 2], dtype=float) * step
        weights = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * step)
        fd = sum(
            w * hessian(TWO_DIRAC, t, np.array([x + o]))[0, 0]
            for w, o in zip(weights, offsets)
        )
        got = spatial_derivatives_1d(TWO_DIRAC, t, x, 3)
        assert got == pytest.approx(fd, rel=1e-5)

    @pytest.mark.parametrize("order", [4, 5])
    def test_higher_orders_match_derivative_of_lower(self, order):
        t, x = 0.9, 0.37
        step = 1e-4
        fd = (
            spatial_derivatives_1d(TWO_DIRAC, t, x + step, order - 1)
            - spatial_derivatives_1d(TWO_DIRAC, t, x - step, order - 1)
        ) / (2.0 * step)
        assert spatial_derivatives_1d(TWO_DIRAC, t, x, order) == pytest.approx(fd, rel=1e-5)


class TestRegularityEnvelope:
    def test_boundary_time(self):
        env = regularity_envelope(1.0, 1.0, 0.1)
        assert env.L_th == pytest.approx(1.0)
        assert not env.contractive

    def test_contractive_beyond_r_squared(self):
        env = regularity_envelope(1.0, 2.0, 0.1)
        assert env.L_th == pytest.approx(0.975)
        assert env.contractive

    def test_operator_bound(self):
        env = regularity_envelope(1.0, 0.5, 0.0)
        assert env.C_t == pytest.approx(2.0)

    def test_empirical_lipschitz_never_exceeds_envelope(self):
        t, h = 2.0, 0.1
        bound = lipschitz_constant(TWO_DIRAC.radius, t, h)
        gen = stream(101, "lipschitz-probe")
        x = gen.normal(0.0, 3.0, (10_000, 1))
        y = x + gen.normal(0.0, 0.5, (10_000, 1))
        fx = x + h * exact_score(TWO_DIRAC, t, x)
        fy = y + h * exact_score(TWO_DIRAC, t, y)
        ratio = np.abs(fx - fy)[:, 0] / np.abs(x - y)[:, 0]
        assert ratio.max() <= bound + 1e-9


class TestCorruptedField:
    GRID = TimeGrid(T=10.0, epsilon=0.5, N=64)

    def test_zero_budget_is_exact(self):
        field = make_corrupted_field(TWO_DIRAC, 0.0, 0.0, self.GRID, seed=0)
        x = np.array([[0.4], [-2.0]])
        assert np.array_equal(field(1.0, x), exact_score(TWO_DIRAC, 1.0, x))

    def test_l2_error_within_budget_at_all_nodes(self):
        field = make_corrupted_field(TWO_DIRAC, 0.1, 0.01, self.GRID, seed=1)
        times = self.GRID.epsilon + self.GRID.nodes()
        for t in times[:: 8]:
            est = measure_score_error(field, TWO_DIRAC, float(t), 10_000, seed=2)
            assert est.value <= 0.1 + 1e-12

    def test_addend_lipschitz_within_budget(self):
        field = make_corrupted_field(TWO_DIRAC, 0.1, 0.01, self.GRID, seed=3)
        gen = stream(4, "corruption-probe")
        x = gen.normal(0.0, 4.0, (10_000, 1))
        y = x + gen.normal(0.0, 1.0, (10_000, 1))
        t = 2.0
        num = np.linalg.norm(field.addend(t, x) - field.addend(t, y), axis=1)
        den = np.linalg.norm(x - y, axis=1)
        assert (num / den).max() <= 0.01 + 1e-9

    def test_infeasible_budget(self):
        with pytest.raises(InfeasibleBudgetError):
            make_corrupted_field(TWO_DIRAC, 1e6, 1e-12, self.GRID, seed=5)


class TestMeasureScoreError:
    def test_exact_field_has_zero_error(self):
        est = measure_score_error(exact_field(TWO_DIRAC), TWO_DIRAC, 1.0, 500, seed=6)
        assert est.value == 0.0

    def test_quadratic_perturbation_moment_formula(self):
        # ||alpha ||x|| x||_L2 at t with X_t ~ N(0, (1+t)): alpha (1+t) sqrt(E G^4).
        tg = make_dirac_mixture([[0.0]], smoothing=1.0)
        field = quadratic_field(tg, alpha=0.01)
        est = measure_score_error(field, tg, 0.0, 100_000, seed=7)
        assert est.value == pytest.approx(0.01 * np.sqrt(3.0), rel=0.05)

    def test_corrupted_field_within_construction_budget(self):
        grid = TimeGrid(T=5.0, epsilon=0.5, N=32)
        field = make_corrupted_field(TWO_DIRAC, 0.05, 0.02, grid, seed=8)
        est = measure_score_error(field, TWO_DIRAC, 1.0, 5000, seed=9)
        assert est.value <= 0.05

    def test_needs_enough_samples(self):
        with pytest.raises(Exception):
            measure_score_error(exact_field(TWO_DIRAC), TWO_DIRAC, 1.0, 10, seed=0)


class TestArgmapContraction:
    def test_contractive_map_beyond_critical_time(self):
        # t > R^2 and h <= t: the one-step map contracts at rate L_{t,h} < 1.
        for t, h in ((1.5, 0.5), (3.0, 1.0)):
            bound = lipschitz_constant(1.0, t, h)
            assert bound < 1.0
            gen = stream(31, "argmap-probe")
            x = gen.normal(0.0, 3.0, (10_000, 1))
            y = gen.normal(0.0, 3.0, (10_000, 1))
            fx = x + h * exact_score(TWO_DIRAC, t, x)
            fy = y + h * exact_score(TWO_DIRAC, t, y)
            ratio = np.abs(fx - fy)[:, 0] / np.abs(x - y)[:, 0]
            assert ratio.max() <= bound + 1e-9


class TestNegation:
    def test_addend_negation_is_bit_exact(self):
        field = exact_field(TWO_DIRAC)
        x = stream(41, "negation-probe").normal(0.0, 2.0, (64, 1))
        forward = field(1.3, x)
        backward = field.negated()(1.3, x)
        assert np.array_equal(backward, -forward)
