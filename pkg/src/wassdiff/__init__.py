"""Verification testbench for diffusion-model samplers with closed-form scores.

Dirac-mixture targets give every score derivative in closed form, so the three
samplers (Euler-Maruyama on the reverse SDE, Euler and Heun on the probability
flow ODE) can be checked against exact references: empirical Wasserstein-2
error, one-step defect bounds, propagation products, full per-sampler
error bounds, initialization asymptotics, and the finite-time blow-up of the
reverse ODE under quadratic score perturbations.
"""

from .bounds import (
    BoundInputs,
    BoundReport,
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
from .explosion import (
    blowup_time_bound,
    calibrate_comparison_constant,
    explosion_probabilities,
    explosion_probability,
    simulate_comparison_ode,
    simulate_perturbed_ode,
)
from .samplers import (
    SamplerSpec,
    coupled_strong_error_ode,
    coupled_strong_error_sde,
    one_step_defect,
    reference_reverse_ode,
    run_sampler,
)
from .score import (
    ScoreField,
    exact_field,
    exact_score,
    hessian,
    log_density,
    make_corrupted_field,
    measure_score_error,
    quadratic_field,
    regularity_envelope,
    spatial_derivatives_1d,
)
from .target import (
    SampleBatch,
    TargetDistribution,
    TimeGrid,
    conditional_moments,
    covariance,
    forward_marginal_sample,
    make_dirac_mixture,
    sample_target,
    target_from_json,
)
from .transport import (
    W2Estimate,
    init_error_check,
    prop4_general,
    w2_1d,
    w2_exact,
    w2_gaussian,
    w2_quantile_grid_1d,
)

__version__ = "0.1.0"
