import math

import numpy as np
import pytest

from wassdiff.bounds import (
    BoundInputs,
    bound_em,
    bound_em_true_score,
    bound_euler_ode,
    bound_heun,
    bound_no_early_stopping,
    discretization_bounds,
    early_stopping_bound,
    fit_rate,
    propagation_product,
)
from wassdiff.errors import InvalidInputError
from wassdiff.rngstream import stream
from wassdiff.target import TimeGrid


class TestDiscretizationBounds:
    def test_heun_value(self):
        assert discretization_bounds(1, 1.0, 1.0, 0.1)["heun"] == pytest.approx(0.022)

    def test_ode_and_sde_values(self):
        vals = discretization_bounds(1, 1.0, 0.5, 0.05)
        assert vals["ode"] == pytest.approx(0.02)
        assert vals["sde"] == pytest.approx((2.0 / 3.0) * 4.0 * 0.05**1.5)

    def test_zero_step(self):
        vals = discretization_bounds(3, 2.0, 1.0, 0.0)
        assert vals["ode"] == vals["heun"] == vals["sde"] == 0.0

    def test_precondition_flagged_not_raised(self):
        vals = discretization_bounds(1, 1.0, 2.0, 0.1)
        assert not vals["precondition_ok"]
        assert vals["ode"] > 0


class TestEarlyStopping:
    def test_values(self):
        assert early_stopping_bound(1, 0.0) == 0.0
        assert early_stopping_bound(2, 0.01) == pytest.approx(0.1414213562, abs=1e-9)
        assert early_stopping_bound(1, 1.0) == 1.0

    def test_brownian_l2_oracle(self):
        # ||B_eps||_L2 = sqrt(d eps); MC with 1e6 draws lands within 1%.
        gen = stream(7, "early-stopping-oracle")
        draws = gen.standard_normal((1_000_000, 2)) * math.sqrt(0.01)
        mc = math.sqrt(float(np.mean(np.sum(draws**2, axis=1))))
        assert mc == pytest.approx(early_stopping_bound(2, 0.01), rel=0.01)


class TestPropagationProducts:
    def test_single_step_empty_product(self):
        rep = propagation_product(TimeGrid(2.0, 0.5, 1), 1.0, "ode_half_step")
        assert rep.products[-1] == 1.0
        assert rep.product_bounds[-1] >= 1.0  # sqrt(2) e^{R^2/2eps} >= 1

    def test_ode_example_value(self):
        rep = propagation_product(TimeGrid(10.0, 0.5, 100), 1.0, "ode_half_step")
        closed = math.sqrt(2.0 * 0.5 / 10.0) * math.exp(1.0)
        assert rep.product_bounds[0] == pytest.approx(closed)
        assert rep.products[0] <= closed

    def test_contraction_regime_products_decrease_with_more_factors(self):
        rep = propagation_product(TimeGrid(10.0, 2.0, 50), 1.0, "ode_half_step")
        # All forward times exceed R^2 = 1 so every factor is below one.
        assert np.all(np.diff(rep.products) > 0)
        assert rep.products[0] < 1.0

    @pytest.mark.parametrize("flavor", ["ode_half_step", "sde_full_step", "heun"])
    def test_dominance_over_random_parameters(self, flavor):
        gen = stream(8, f"propagation-{flavor}")
        for _ in range(200):
            R = float(gen.uniform(0.3, 2.0))
            eps = float(gen.uniform(0.05, 1.0)) * R**2
            T = eps + float(gen.uniform(0.5, 20.0))
            max_n = (T - eps) / (eps if flavor == "ode_half_step" else eps / 2.0)
            N = int(gen.integers(1, 200)) + int(np.ceil(max_n))
            L = float(gen.uniform(0.1, 2.0)) * R**2 / eps**2
            rep = propagation_product(
                TimeGrid(T, eps, N), R, flavor, L=L if flavor == "heun" else None
            )
            assert rep.precondition_ok
            assert np.all(rep.products <= rep.product_bounds * (1 + 1e-12))
            assert rep.weighted_sum <= rep.weighted_sum_bound * (1 + 1e-12)
            if flavor == "sde_full_step":
                assert rep.weighted_sq_sum <= rep.weighted_sq_sum_bound * (1 + 1e-12)

    def test_step_condition_flag(self):
        rep = propagation_product(TimeGrid(10.0, 0.1, 5), 1.0, "ode_half_step")
        assert not rep.precondition_ok


class TestEulerOdeBound:
    INPUTS = BoundInputs(d=1, R=1.0, T=10.0, N=400, epsilon=0.5)

    def test_zero_score_error_kills_score_term(self):
        rep = bound_euler_ode(self.INPUTS)
        assert rep.score_propagated == 0.0

    def test_discretization_term_arithmetic(self):
        rep = bound_euler_ode(self.INPUTS)
        h = (10.0 - 0.5) / 400
        want = (math.sqrt(2.0) / 0.5**2.5) * math.e * math.sqrt(10.0) * h
        assert rep.discretization_propagated == pytest.approx(want)
        assert rep.discretization_propagated == pytest.approx(1.6332327610337618)

    def test_total_pinned(self):
        assert bound_euler_ode(self.INPUTS).total == pytest.approx(2.6121677250662136)

    def test_grid_sum_below_uniform_closed_form(self):
        gen = stream(9, "p5-uniform")
        for _ in range(20):
            eps = float(gen.uniform(0.1, 1.0))
            T = eps + float(gen.uniform(1.0, 20.0))
            N = int(gen.integers(3, 500))
            level = float(gen.uniform(0.01, 0.5))
            inputs = BoundInputs(d=1, R=1.0, T=T, N=N, epsilon=eps, eps_score=level)
            rep = bound_euler_ode(inputs)
            assert rep.score_propagated <= rep.score_uniform_bound * (1 + 1e-12)

    def test_score_sum_converges_to_integral(self):
        # eps_score(t) = 1/sqrt(t) makes the limiting integral log(T/eps).
        eps, T = 0.5, 10.0
        inputs = BoundInputs(
            d=1, R=1.0, T=T, N=2**14, epsilon=eps, eps_score=lambda t: 1.0 / math.sqrt(t)
        )
        rep = bound_euler_ode(inputs)
        limit = math.sqrt(eps / 2.0) * math.exp(1.0) * math.log(T / eps)
        assert rep.score_propagated == pytest.approx(limit, rel=0.01)


class TestHeunBound:
    INPUTS = BoundInputs(d=1, R=1.0, T=10.0, N=400, epsilon=0.5, L=4.0)

    def test_zero_score_term(self):
        assert bound_heun(self.INPUTS).score_propagated == 0.0

    def test_halving_ratio_formula(self):
        # disc(h)/disc(h/2) = 4 exp(h T L^2 / 16): quadratic gain plus the
        # shrinking exponential guard.
        doubled = BoundInputs(d=1, R=1.0, T=10.0, N=800, epsilon=0.5, L=4.0)
        r1 = bound_heun(self.INPUTS).discretization_propagated
        r2 = bound_heun(doubled).discretization_propagated
        h = self.INPUTS.h
        assert r1 / r2 == pytest.approx(4.0 * math.exp(h * 10.0 * 16.0 / 16.0), rel=1e-12)

    def test_total_pinned(self):
        assert bound_heun(self.INPUTS).total == pytest.approx(16.985167156725247)

    def test_default_lipschitz_constant(self):
        rep = bound_heun(BoundInputs(d=1, R=1.0, T=10.0, N=400, epsilon=0.5))
        assert rep.notes["L"] == pytest.approx(1.0 / 0.25)

    def test_uniform_bound_dominates_grid_sums(self):
        gen = stream(10, "p6-uniform")
        for _ in range(20):
            eps = float(gen.uniform(0.1, 1.0))
            T = eps + float(gen.uniform(1.0, 10.0))
            N = int(gen.integers(10, 400))
            if (T - eps) / N > eps / 2.0:
                N = int(math.ceil(2.0 * (T - eps) / eps))
            level = float(gen.uniform(0.01, 0.3))
            rep = bound_heun(
                BoundInputs(d=1, R=1.0, T=T, N=N, epsilon=eps, L=2.0, eps_score=level)
            )
            assert rep.score_propagated <= rep.score_uniform_bound * (1 + 1e-12)


class TestEmBounds:
    INPUTS = BoundInputs(d=1, R=1.0, T=10.0, N=400, epsilon=0.5)

    def test_prop8_discretization_linear_in_h(self):
        r1 = bound_em_true_score(self.INPUTS)
        r2 = bound_em_true_score(BoundInputs(d=1, R=1.0, T=10.0, N=800, epsilon=0.5))
        assert r1.discretization_propagated == pytest.approx(
            2.0 * r2.discretization_propagated, rel=1e-12
        )
        assert r1.score_propagated == 0.0

    def test_prop7_total_pinned(self):
        assert bound_em(self.INPUTS).total == pytest.approx(12.142470004558966)

    def test_prop7_uniform_inequality(self):
        gen = stream(11, "p7-uniform")
        for _ in range(20):
            eps = float(gen.uniform(0.1, 1.0))
            T = eps + float(gen.uniform(1.0, 10.0))
            N = max(int(gen.integers(10, 400)), int(math.ceil(2.0 * (T - eps) / eps)))
            level = float(gen.uniform(0.01, 0.3))
            rep = bound_em(BoundInputs(d=1, R=1.0, T=T, N=N, epsilon=eps, eps_score=level))
            assert rep.score_propagated <= rep.score_uniform_bound * (1 + 1e-12)

    def test_rate_scaling_of_prop7_vs_prop8(self):
        # Exact-score EM bound scales like h, approximate-score like sqrt(h);
        # totals stay finite and positive.
        halved = BoundInputs(d=1, R=1.0, T=10.0, N=800, epsilon=0.5)
        d7 = bound_em(self.INPUTS).discretization_propagated
        d7h = bound_em(halved).discretization_propagated
        d8 = bound_em_true_score(self.INPUTS).discretization_propagated
        d8h = bound_em_true_score(halved).discretization_propagated
        assert d7 / d7h == pytest.approx(math.sqrt(2.0), rel=1e-12)
        assert d8 / d8h == pytest.approx(2.0, rel=1e-12)
        for rep in (bound_em(self.INPUTS), bound_em_true_score(self.INPUTS)):
            assert 0.0 < rep.total < math.inf

    def test_monotone_in_steps(self):
        ns = (50, 100, 200, 400, 800)
        p8_totals = [
            bound_em_true_score(BoundInputs(d=1, R=1.0, T=10.0, N=n, epsilon=0.5)).total
            for n in ns
        ]
        assert all(a >= b for a, b in zip(p8_totals, p8_totals[1:]))
        p5_totals = [
            bound_euler_ode(BoundInputs(d=1, R=1.0, T=10.0, N=n, epsilon=0.5)).total
            for n in ns
        ]
        assert all(a >= b for a, b in zip(p5_totals, p5_totals[1:]))
        # Props 6-7: the discretization term (with its shrinking exponential
        # guard for Heun) is the monotone piece.
        p6_disc = [
            bound_heun(
                BoundInputs(d=1, R=1.0, T=10.0, N=n, epsilon=0.5, L=4.0)
            ).discretization_propagated
            for n in ns
        ]
        assert all(a >= b for a, b in zip(p6_disc, p6_disc[1:]))
        p7_disc = [
            bound_em(BoundInputs(d=1, R=1.0, T=10.0, N=n, epsilon=0.5)).discretization_propagated
            for n in ns
        ]
        assert all(a >= b for a, b in zip(p7_disc, p7_disc[1:]))


class TestNoEarlyStoppingVariants:
    def test_em_remap_equality(self):
        # tau = eps, T' = T - tau reproduces the early-stopping EM formulas
        # (minus early stopping) exactly, including uniform score series.
        eps, T, N = 0.5, 10.0, 400
        level = 0.07
        direct = bound_em(BoundInputs(d=1, R=1.0, T=T, N=N, epsilon=eps, eps_score=level))
        remapped = bound_no_early_stopping(
            "prop7",
            BoundInputs(d=1, R=1.0, T=T - eps, N=N, tau=eps, eps_score=level),
        )
        assert remapped.early_stopping == 0.0
        assert remapped.init_propagated == pytest.approx(direct.init_propagated, rel=1e-12)
        assert remapped.discretization_propagated == pytest.approx(
            direct.discretization_propagated, rel=1e-12
        )
        assert remapped.score_propagated == pytest.approx(direct.score_propagated, rel=1e-12)

    def test_prop8_remap_equality(self):
        eps, T, N = 0.4, 8.0, 200
        direct = bound_em_true_score(BoundInputs(d=1, R=1.0, T=T, N=N, epsilon=eps))
        remapped = bound_no_early_stopping(
            "prop8", BoundInputs(d=1, R=1.0, T=T - eps, N=N, tau=eps)
        )
        assert remapped.total == pytest.approx(direct.total - direct.early_stopping, rel=1e-12)

    def test_ode_remap_init_term(self):
        eps, T, N = 0.5, 10.0, 400
        direct = bound_euler_ode(BoundInputs(d=1, R=1.0, T=T, N=N, epsilon=eps))
        remapped = bound_no_early_stopping(
            "prop5", BoundInputs(d=1, R=1.0, T=T - eps, N=N, tau=eps)
        )
        assert remapped.init_propagated == pytest.approx(direct.init_propagated, rel=1e-12)

    def test_smoothing_drives_terms_down(self):
        taus = np.linspace(0.2, 0.95, 8)
        inits = [
            bound_no_early_stopping(
                "prop8", BoundInputs(d=1, R=1.0, T=10.0, N=400, tau=float(tau))
            ).init_propagated
            for tau in taus
        ]
        # exp(R^2/tau) shrinks and (T+tau)^{-3/2} shrinks; 2 tau grows slower here.
        assert all(a >= b for a, b in zip(inits, inits[1:]))

    def test_total_pinned(self):
        rep = bound_no_early_stopping(
            "prop8", BoundInputs(d=1, R=1.0, T=10.0, N=400, tau=0.5)
        )
        assert rep.total == pytest.approx(1.2023800720712916)

    def test_requires_positive_tau(self):
        with pytest.raises(InvalidInputError):
            bound_no_early_stopping("prop7", BoundInputs(d=1, R=1.0, T=10.0, N=100))


class TestFitRate:
    def test_exact_linear(self):
        hs = [0.4, 0.2, 0.1, 0.05]
        fit = fit_rate(hs, [3.0 * h for h in hs])
        assert fit.slope == pytest.approx(1.0)
        assert fit.r_squared == pytest.approx(1.0)

    def test_exact_quadratic(self):
        hs = [0.4, 0.2, 0.1, 0.05]
        assert fit_rate(hs, [2.0 * h**2 for h in hs]).slope == pytest.approx(2.0)

    def test_noisy_square_root(self):
        gen = stream(12, "fit-noise")
        hs = [0.5 / 2**k for k in range(6)]  # five octaves
        errs = [h**0.5 * (1.0 + 0.05 * gen.uniform(-1, 1)) for h in hs]
        assert 0.4 <= fit_rate(hs, errs).slope <= 0.6

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            fit_rate([0.1, 0.2], [1.0, 2.0])
        with pytest.raises(InvalidInputError):
            fit_rate([0.1, 0.2, 0.3], [1.0, -2.0, 3.0])
