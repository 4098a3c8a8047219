"""Reverse-process samplers and coupled strong-error diagnostics.

Three algorithms share one step kernel: Euler-Maruyama on the reverse SDE,
Euler on the probability flow ODE, and Heun on the same ODE.  The coupled
diagnostics rerun them against finer references on shared randomness so the
measured gaps realize the one-step defect and propagation quantities that the
closed-form bounds control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .bounds import discretization_bounds
from .errors import DivergenceError, InvalidInputError, ToleranceNotMetError
from .rngstream import derive, stream
from .score import ScoreField, exact_field, exact_score
from .target import SampleBatch, TargetDistribution, TimeGrid, forward_marginal_sample

ALGORITHMS = ("euler_maruyama", "euler_ode", "heun")
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class SamplerSpec:
    algorithm: str
    field: ScoreField
    grid: TimeGrid

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInputError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "heun":
            # Heun evaluates the field at t_N, i.e. at forward time epsilon.
            if self.field.target.effective_time(self.grid.epsilon) <= 0:
                raise InvalidInputError("heun needs epsilon + tau > 0 to evaluate the last node")


def effective_horizon(target: TargetDistribution, grid: TimeGrid) -> float:
    """Initialization variance: smoothing extends the horizon to T + tau."""
    return grid.T + target.smoothing


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise DivergenceError(step)


def _step(
    field: ScoreField,
    algorithm: str,
    s_prev: float,
    s_next: float,
    h: float,
    x: np.ndarray,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One update of the chosen algorithm; s_prev/s_next are forward times."""
    if algorithm == "euler_maruyama":
        return x + h * field(s_prev, x) + noise
    if algorithm == "euler_ode":
        return x + 0.5 * h * field(s_prev, x)
    k1 = field(s_prev, x)
    y = x + 0.5 * h * k1
    k2 = field(s_next, y)
    return x + 0.25 * h * (k1 + k2)


def run_sampler(
    spec: SamplerSpec,
    n: int,
    seed: int,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> SampleBatch:
    """Run the sampler for n replicates; returns the batch at the final node.

    The state starts at N(0, (T + tau) I) and callback, when given, sees the
    state after every step (step 0 is the initialization).
    """
    if n < 1:
        raise InvalidInputError("need n >= 1")
    grid, field = spec.grid, spec.field
    d = field.target.d
    h = grid.h
    x = math.sqrt(effective_horizon(field.target, grid)) * stream(seed, "init").standard_normal(
        (n, d)
    )
    if callback is not None:
        callback(0, x)
    for step in range(1, grid.N + 1):
        s_prev = grid.T - grid.node(step - 1)
        s_next = grid.T - grid.node(step)
        noise = None
        if spec.algorithm == "euler_maruyama":
            noise = math.sqrt(h) * stream(seed, "step-noise", step).standard_normal((n, d))
        x = _step(field, spec.algorithm, s_prev, s_next, h, x, noise)
        _check_finite(x, step)
        if callback is not None:
            callback(step, x)
    return SampleBatch(data=x, seed=seed, time_label=grid.epsilon)


def _midpoint_path(
    target: TargetDistribution, s_from: float, s_to: float, x: np.ndarray, steps: int
) -> np.ndarray:
    """Integrate the exact reverse ODE from forward time s_from down to s_to."""
    delta = (s_from - s_to) / steps
    for k in range(steps):
        s_k = s_from - k * delta
        k1 = 0.5 * exact_score(target, s_k, x)
        mid = x + 0.5 * delta * k1
        x = x + delta * 0.5 * exact_score(target, s_k - 0.5 * delta, mid)
    return x


def _rk4_path(
    target: TargetDistribution, s_from: float, s_to: float, x: np.ndarray, steps: int
) -> np.ndarray:
    """Fourth-order integration of the exact reverse ODE over a long horizon.

    Tight endpoint tolerances (1e-10) need prohibitively many second-order
    steps; RK4 reaches them with a few thousand.
    """
    delta = (s_from - s_to) / steps
    for k in range(steps):
        s_k = s_from - k * delta
        k1 = 0.5 * exact_score(target, s_k, x)
        k2 = 0.5 * exact_score(target, s_k - 0.5 * delta, x + 0.5 * delta * k1)
        k3 = 0.5 * exact_score(target, s_k - 0.5 * delta, x + 0.5 * delta * k2)
        k4 = 0.5 * exact_score(target, s_k - delta, x + delta * k3)
        x = x + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def reference_reverse_ode(
    target: TargetDistribution,
    s_from: float,
    s_to: float,
    inits: np.ndarray,
    tol: float,
    max_doublings: int = 24,
) -> np.ndarray:
    """Discretization-free endpoints of the exact reverse ODE.

    Step-doubled midpoint with Richardson extrapolation; refines until two
    successive resolutions agree to tol in sup norm.
    """
    if tol <= 0:
        raise InvalidInputError("tolerance must be positive")
    if s_from <= s_to:
        raise InvalidInputError("need s_from > s_to")
    if target.effective_time(s_to) <= 0:
        raise InvalidInputError("endpoint time must keep t + tau positive")
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    # Resolve the 1/t stiffness near the stop time from the first iteration on.
    floor = target.effective_time(s_to)
    steps = max(8, int(math.ceil(4.0 * (s_from - s_to) / floor)))
    prev = _rk4_path(target, s_from, s_to, inits.copy(), steps)
    for _ in range(max_doublings):
        steps *= 2
        cur = _rk4_path(target, s_from, s_to, inits.copy(), steps)
        if float(np.max(np.abs(cur - prev))) < tol:
            return cur + (cur - prev) / 15.0
        prev = cur
    raise ToleranceNotMetError(f"no convergence to {tol} within {max_doublings} doublings")


@dataclass(frozen=True)
class DefectEstimate:
    """MC estimate of a one-step integration defect against its closed bound."""

    scheme: str
    s_start: float  # forward time at the step start
    h: float
    value: float
    ci_low: float
    ci_high: float
    bound: float
    replicates: int


def one_step_defect(
    target: TargetDistribution,
    scheme: str,
    s_start: float,
    h: float,
    epsilon: float,
    replicates: int,
    seed: int,
    substeps: int = 64,
) -> DefectEstimate:
    """Measure the one-step defect of a scheme over forward window [s_start - h, s_start].

    Starts from exact draws of the forward marginal at s_start (the reverse
    process marginal), advances the true dynamics finely, and compares the drift
    integral with the scheme's one-step quadrature.  epsilon only enters the
    closed-form bound.
    """
    if scheme not in ("ode", "heun", "sde"):
        raise InvalidInputError("scheme must be ode, heun or sde")
    s_end = s_start - h
    if s_end < epsilon - 1e-12:
        raise InvalidInputError("step must stay above the early-stopping time")
    sub_seed = derive(seed, f"defect-{scheme}-{s_start:.6g}-{h:.6g}")
    x0 = forward_marginal_sample(target, s_start, replicates, sub_seed).data
    drift0 = exact_score(target, s_start, x0)
    if scheme in ("ode", "heun"):
        fine = _midpoint_path(target, s_start, s_end, x0.copy(), substeps)
        finer = _midpoint_path(target, s_start, s_end, x0.copy(), 2 * substeps)
        x_end = finer + (finer - fine) / 3.0
        integral = 2.0 * (x_end - x0)
        if scheme == "ode":
            defect = integral - h * drift0
        else:
            defect = integral - 0.5 * h * (drift0 + exact_score(target, s_end, x_end))
    else:
        delta = h / substeps
        x = x0.copy()
        integral = np.zeros_like(x)
        for j in range(substeps):
            s_j = s_start - j * delta
            drift = exact_score(target, s_j, x)
            integral += delta * drift
            xi = math.sqrt(delta) * stream(sub_seed, "defect-noise", j).standard_normal(x.shape)
            x = x + delta * drift + xi
        defect = integral - h * drift0
    sq = np.sum(defect**2, axis=1)
    mean = float(sq.mean())
    half = 1.96 * float(sq.std(ddof=1)) / math.sqrt(replicates)
    bound = discretization_bounds(target.d, target.radius, epsilon, h)[scheme]
    return DefectEstimate(
        scheme=scheme,
        s_start=s_start,
        h=h,
        value=float(np.sqrt(mean)),
        ci_low=float(np.sqrt(max(mean - half, 0.0))),
        ci_high=float(np.sqrt(mean + half)),
        bound=bound,
        replicates=replicates,
    )


@dataclass(frozen=True)
class CoupledRun:
    """Per-level coupled error measurements against a finer shared-randomness reference.

    step_errors track the proof coupling (reference started from the true
    process initialization, sampler from the Gaussian one); its entry at step 0
    is the initialization coupling error.  end_error isolates discretization:
    both chains start from the same point.
    """

    algorithm: str
    level: int
    h: float
    n_steps: int
    replicates: int
    seed: int
    step_errors: np.ndarray  # (N+1,)
    step_error_ci: np.ndarray  # (N+1,) halfwidths
    end_error: float
    end_error_ci: float
    defect: Optional[DefectEstimate] = None

    @property
    def defect_max(self) -> float:
        return self.defect.value if self.defect else float("nan")

    @property
    def defect_bound(self) -> float:
        return self.defect.bound if self.defect else float("nan")


def _l2_with_ci(sq: np.ndarray) -> tuple[float, float]:
    """L2 value and CI halfwidth (delta method) from per-replicate squared norms."""
    mean = float(sq.mean())
    half = 1.96 * float(sq.std(ddof=1)) / math.sqrt(sq.size)
    value = math.sqrt(mean)
    ci = half / (2.0 * value) if value > 0 else math.sqrt(half)
    return value, ci


def coupled_strong_error_ode(
    target: TargetDistribution,
    grid: TimeGrid,
    algorithm: str,
    levels: int,
    replicates: int,
    seed: int,
    ref_substeps: int = 8,
    defect_replicates: int = 2000,
) -> list[CoupledRun]:
    """Strong ODE errors across grid refinements, coupled by the shared initial point.

    The reference marches step-doubled midpoint integrations alongside the
    sampler and Richardson-extrapolates them at every node.
    """
    if algorithm not in ("euler_ode", "heun"):
        raise InvalidInputError("ODE coupling supports euler_ode and heun")
    field = exact_field(target)
    d = target.d
    x0 = math.sqrt(effective_horizon(target, grid)) * stream(
        seed, "coupled-ode-init"
    ).standard_normal((replicates, d))

    # The continuous reference path is level-independent: integrate it once on
    # the finest level's nodes (Richardson-extrapolated midpoint pair) and index
    # into it from every coarser level.
    finest = grid.refined(2 ** (levels - 1))
    fwd_fine = grid.T - finest.nodes()
    refs = np.empty((finest.N + 1, replicates, d))
    refs[0] = x0
    r1 = x0.copy()
    r2 = x0.copy()
    for n in range(1, finest.N + 1):
        r1 = _midpoint_path(target, fwd_fine[n - 1], fwd_fine[n], r1, ref_substeps)
        r2 = _midpoint_path(target, fwd_fine[n - 1], fwd_fine[n], r2, 2 * ref_substeps)
        refs[n] = r2 + (r2 - r1) / 3.0

    runs = []
    for level in range(levels):
        g = grid.refined(2**level)
        stride = 2 ** (levels - 1 - level)
        fwd = grid.T - g.nodes()
        xs = x0.copy()
        errors = np.zeros(g.N + 1)
        cis = np.zeros(g.N + 1)
        for n in range(1, g.N + 1):
            xs = _step(field, algorithm, fwd[n - 1], fwd[n], g.h, xs)
            sq = np.sum((xs - refs[n * stride]) ** 2, axis=1)
            errors[n], cis[n] = _l2_with_ci(sq)
        scheme = "ode" if algorithm == "euler_ode" else "heun"
        defect = one_step_defect(
            target,
            scheme,
            s_start=grid.epsilon + g.h,
            h=g.h,
            epsilon=grid.epsilon,
            replicates=defect_replicates,
            seed=derive(seed, f"ode-defect-{level}"),
        )
        runs.append(
            CoupledRun(
                algorithm=algorithm,
                level=level,
                h=g.h,
                n_steps=g.N,
                replicates=replicates,
                seed=seed,
                step_errors=errors,
                step_error_ci=cis,
                end_error=errors[-1],
                end_error_ci=cis[-1],
                defect=defect,
            )
        )
    return runs


def coupled_strong_error_sde(
    target: TargetDistribution,
    grid: TimeGrid,
    levels: int,
    replicates: int,
    seed: int,
    ref_refinement: int = 3,
    defect_replicates: int = 2000,
) -> list[CoupledRun]:
    """Strong Euler-Maruyama errors across refinements on one shared Brownian path.

    The reference grid refines the finest level by 2**ref_refinement (so
    ref_refinement = 0 with a single level couples against the same grid);
    it carries the Brownian increments and each coarse increment is their
    exact sum.
    Two fine references run per level: one from the true-process initialization
    Z + sqrt(T_eff) G (the proof coupling, reported per step) and one from the
    sampler's own initialization sqrt(T_eff) G (pure discretization, reported
    as end_error).
    """
    d = target.d
    horizon = effective_horizon(target, grid)
    gauss = stream(seed, "coupled-sde-init").standard_normal((replicates, d))
    x_hat0 = math.sqrt(horizon) * gauss
    comp = stream(seed, "coupled-sde-component")
    atoms = target.points[comp.choice(target.m, size=replicates, p=target.weights)]
    if target.smoothing > 0:
        atoms = atoms + math.sqrt(target.smoothing) * stream(
            seed, "coupled-sde-smoothing"
        ).standard_normal((replicates, d))
    x_true0 = atoms + x_hat0

    log2_fine = levels - 1 + ref_refinement
    n_fine = grid.N * 2**log2_fine
    span = grid.T - grid.epsilon
    delta = span / n_fine
    init_sq = np.sum((x_true0 - x_hat0) ** 2, axis=1)

    # One pass over the fine path: the two references are level-independent and
    # every level's coarse chain updates (with its own accumulated increment)
    # whenever the fine index hits that level's window boundary.
    ref_disc = x_hat0.copy()
    ref_true = x_true0.copy()
    coarse = [x_hat0.copy() for _ in range(levels)]
    windows = [2 ** (log2_fine - level) for level in range(levels)]
    grids = [grid.refined(2**level) for level in range(levels)]
    accs = [np.zeros((replicates, d)) for _ in range(levels)]
    errors = [np.zeros(g.N + 1) for g in grids]
    cis = [np.zeros(g.N + 1) for g in grids]
    for level in range(levels):
        errors[level][0], cis[level][0] = _l2_with_ci(init_sq)
    disc_sq_end = [None] * levels
    for j in range(n_fine):
        s_j = grid.T - (j / n_fine) * span
        xi = math.sqrt(delta) * stream(seed, "coupled-sde-noise", j).standard_normal(
            (replicates, d)
        )
        ref_disc = ref_disc + delta * exact_score(target, s_j, ref_disc) + xi
        ref_true = ref_true + delta * exact_score(target, s_j, ref_true) + xi
        for level in range(levels):
            accs[level] += xi
            if (j + 1) % windows[level] == 0:
                g = grids[level]
                n = (j + 1) // windows[level]
                s_prev = grid.T - ((n - 1) / g.N) * span
                coarse[level] = (
                    coarse[level] + g.h * exact_score(target, s_prev, coarse[level]) + accs[level]
                )
                accs[level] = np.zeros((replicates, d))
                errors[level][n], cis[level][n] = _l2_with_ci(
                    np.sum((ref_true - coarse[level]) ** 2, axis=1)
                )
                if n == g.N:
                    disc_sq_end[level] = np.sum((ref_disc - coarse[level]) ** 2, axis=1)

    runs = []
    for level in range(levels):
        g = grids[level]
        end_error, end_ci = _l2_with_ci(disc_sq_end[level])
        defect = one_step_defect(
            target,
            "sde",
            s_start=grid.epsilon + g.h,
            h=g.h,
            epsilon=grid.epsilon,
            replicates=defect_replicates,
            seed=derive(seed, f"sde-defect-{level}"),
        )
        runs.append(
            CoupledRun(
                algorithm="euler_maruyama",
                level=level,
                h=g.h,
                n_steps=g.N,
                replicates=replicates,
                seed=seed,
                step_errors=errors[level],
                step_error_ci=cis[level],
                end_error=end_error,
                end_error_ci=end_ci,
                defect=defect,
            )
        )
    return runs


def sampler_vs_target_w2(
    spec: SamplerSpec, n: int, seed: int
) -> tuple[SampleBatch, SampleBatch]:
    """Sampler output alongside an exact batch of X_epsilon drawn independently."""
    out = run_sampler(spec, n, seed)
    exact = forward_marginal_sample(
        spec.field.target, spec.grid.epsilon, n, derive(seed, "target-reference")
    )
    return out, exact
