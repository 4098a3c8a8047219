"""Closed-form error bounds for the three samplers and their building blocks.

Each sampler-level bound decomposes into early stopping, propagated
initialization, propagated discretization, and propagated score terms; the
no-early-stopping variants swap the early-stopping time for the smoothing
variance.  Propagation products are computed both exactly (direct products of
the per-step Lipschitz factors) and through their closed-form integral bounds
so dominance is testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import InvalidInputError
from .score import lipschitz_constant
from .target import TimeGrid

EpsScore = Union[float, Callable[[float], float]]


def _exp(x: float) -> float:
    """exp that saturates to +inf instead of raising; bounds stay valid."""
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class BoundInputs:
    """Parameters entering the sampler bounds.

    eps_score may be a uniform level or a function of forward time; L is the
    learned-score Lipschitz constant (Heun only, default R^2/epsilon^2).
    """

    d: int
    R: float
    T: float
    N: int
    epsilon: float = 0.0
    tau: float = 0.0
    L: Optional[float] = None
    eps_score: EpsScore = 0.0

    @property
    def h(self) -> float:
        return (self.T - self.epsilon) / self.N

    @property
    def h_no_stop(self) -> float:
        # Smoothed-target runs use epsilon = 0 on the observed process.
        return self.T / self.N

    def lipschitz_default(self, t_floor: float) -> float:
        return self.L if self.L is not None else self.R**2 / t_floor**2

    def eps_at(self, t: float) -> float:
        if callable(self.eps_score):
            return float(self.eps_score(t))
        return float(self.eps_score)


@dataclass(frozen=True)
class BoundReport:
    equation: str
    early_stopping: float
    init_propagated: float
    discretization_propagated: float
    score_propagated: float
    precondition_ok: bool
    init_crude: float
    score_uniform_bound: Optional[float] = None
    notes: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return (
            self.early_stopping
            + self.init_propagated
            + self.discretization_propagated
            + self.score_propagated
        )

    @property
    def total_crude_init(self) -> float:
        """Variant using the any-T initialization bound instead of the R^2/sqrt(T) one."""
        return (
            self.early_stopping
            + self.init_crude
            + self.discretization_propagated
            + self.score_propagated
        )

    def to_dict(self) -> dict:
        return {
            "equation": self.equation,
            "terms": {
                "early_stopping": self.early_stopping,
                "init_propagated": self.init_propagated,
                "discretization_propagated": self.discretization_propagated,
                "score_propagated": self.score_propagated,
            },
            "total": self.total,
            "init_crude": self.init_crude,
            "total_crude_init": self.total_crude_init,
            "score_uniform_bound": self.score_uniform_bound,
            "precondition_ok": self.precondition_ok,
            "notes": self.notes,
        }


def discretization_bounds(d: int, R: float, epsilon: float, h: float) -> dict:
    """One-step defect bounds: Euler ODE, Heun, and Euler-Maruyama."""
    if h < 0 or epsilon <= 0:
        raise InvalidInputError("need epsilon > 0 and h >= 0")
    return {
        "ode": math.sqrt(d) * R**3 / epsilon**3 * h**2,
        "heun": 22.0 * d * R**5 / epsilon**5 * h**3,
        "sde": (2.0 / 3.0) * math.sqrt(d) * R**2 / epsilon**2 * h**1.5,
        "precondition_ok": epsilon <= R**2,
    }


def early_stopping_bound(d: int, epsilon: float) -> float:
    """W2(L(X), L(X_eps)) <= sqrt(d * eps)."""
    if epsilon < 0:
        raise InvalidInputError("epsilon must be nonnegative")
    return math.sqrt(d * epsilon)


@dataclass(frozen=True)
class PropagationReport:
    """Exact per-step propagation products against their closed-form bounds."""

    flavor: str
    products: np.ndarray  # (N+1,), products[n] = prod_{m=n}^{N-1} factor_m
    product_bounds: np.ndarray  # (N+1,)
    weighted_sum: float  # h * sum_{n=1}^{N} products[n]
    weighted_sum_bound: float
    weighted_sq_sum: Optional[float]  # SDE flavor only
    weighted_sq_sum_bound: Optional[float]
    precondition_ok: bool


def propagation_product(
    grid: TimeGrid, R: float, flavor: str, L: Optional[float] = None
) -> PropagationReport:
    """Exact products of per-step contraction factors and their integral bounds.

    flavor selects the step map: "ode_half_step" uses L_{t, h/2}, "sde_full_step"
    uses L_{t, h}, "heun" uses the averaged pair plus h^2 L^2 / 8 per factor.
    """
    T, eps, N, h = grid.T, grid.epsilon, grid.N, grid.h
    times = T - grid.nodes()  # forward times T - t_n, n = 0..N; last entry is eps
    if flavor == "ode_half_step":
        ok = h <= eps
        factors = np.array([lipschitz_constant(R, t, h / 2.0) for t in times[:-1]])
        bounds = np.sqrt(2.0 * eps / times) * _exp(R**2 / (2.0 * eps))
        sum_bound = math.sqrt(8.0 * eps) * _exp(R**2 / (2.0 * eps)) * math.sqrt(T)
        sq_sum = sq_bound = None
    elif flavor == "sde_full_step":
        ok = h <= eps / 2.0
        factors = np.array([lipschitz_constant(R, t, h) for t in times[:-1]])
        bounds = (2.0 * eps / times) * _exp(R**2 / eps)
        sum_bound = 2.0 * eps * _exp(R**2 / eps) * math.log(2.0 * T / eps)
        sq_bound = 8.0 * eps * _exp(2.0 * R**2 / eps)
        sq_sum = 0.0  # filled below
    elif flavor == "heun":
        ok = h <= eps / 2.0
        if L is None:
            raise InvalidInputError("heun flavor needs the Lipschitz constant L")
        halves = np.array([lipschitz_constant(R, t, h / 2.0) for t in times])
        factors = 0.5 * (halves[:-1] + halves[1:]) + h**2 * L**2 / 8.0
        guard = _exp(R**2 / eps + h * T * L**2 / 8.0)
        bounds = np.sqrt(2.0 * eps / times) * guard
        sum_bound = math.sqrt(8.0 * eps) * guard * math.sqrt(T)
        sq_sum = sq_bound = None
    else:
        raise InvalidInputError(f"unknown propagation flavor {flavor!r}")

    with np.errstate(over="ignore"):  # extreme parameters saturate to inf
        products = np.concatenate([np.cumprod(factors[::-1])[::-1], [1.0]])
        weighted = h * float(products[1:].sum())
        if flavor == "sde_full_step":
            sq_sum = h * float((products[1:] ** 2).sum())
    return PropagationReport(
        flavor=flavor,
        products=products,
        product_bounds=bounds,
        weighted_sum=weighted,
        weighted_sum_bound=sum_bound,
        weighted_sq_sum=sq_sum,
        weighted_sq_sum_bound=sq_bound if flavor == "sde_full_step" else None,
        precondition_ok=bool(ok),
    )


def _score_sum(inputs: BoundInputs, h: float, start: float, offset: int, power: float) -> float:
    """h * sum_{k=0}^{N-1} eps_score(start + h (k + offset)) / (start + h k)^power."""
    k = np.arange(inputs.N)
    args = start + h * (k + offset)
    denoms = (start + h * k) ** power
    values = np.array([inputs.eps_at(a) for a in args])
    return h * float(np.sum(values / denoms))


def bound_euler_ode(inputs: BoundInputs) -> BoundReport:
    """Full W2 bound for the Euler discretization of the probability flow ODE."""
    d, R, T, eps, h = inputs.d, inputs.R, inputs.T, inputs.epsilon, inputs.h
    ok = h <= eps <= R**2
    guard = _exp(R**2 / (2.0 * eps))
    early = early_stopping_bound(d, eps)
    init = (math.sqrt(2.0 * eps) / T) * guard * R**2
    init_crude = math.sqrt(2.0 * eps / T) * guard * R
    disc = math.sqrt(d) * (math.sqrt(2.0) * R**3 / eps**2.5) * guard * math.sqrt(T) * h
    score = math.sqrt(eps / 2.0) * guard * _score_sum(inputs, h, eps, 1, 0.5)
    uniform = None
    if not callable(inputs.eps_score):
        uniform = math.sqrt(2.0 * eps) * guard * float(inputs.eps_score) * math.sqrt(T)
    return BoundReport(
        equation="prop5",
        early_stopping=early,
        init_propagated=init,
        discretization_propagated=disc,
        score_propagated=score,
        precondition_ok=ok,
        init_crude=init_crude,
        score_uniform_bound=uniform,
    )


def bound_heun(inputs: BoundInputs) -> BoundReport:
    """Full W2 bound for the Heun sampler; L defaults to R^2/epsilon^2."""
    d, R, T, eps, h = inputs.d, inputs.R, inputs.T, inputs.epsilon, inputs.h
    L = inputs.lipschitz_default(eps)
    ok = eps <= R**2 and h <= eps / 2.0
    guard = _exp(R**2 / eps + h * T * L**2 / 8.0)
    early = early_stopping_bound(d, eps)
    init = (math.sqrt(2.0 * eps) / T) * guard * R**2
    init_crude = math.sqrt(2.0 * eps / T) * guard * R
    disc = (
        (22.0 * d * math.sqrt(2.0) * R**5 / eps**4.5 + math.sqrt(d) * L * R**3 / (2.0 * math.sqrt(2.0) * eps**2.5))
        * guard
        * math.sqrt(T)
        * h**2
    )
    left = _score_sum(inputs, h, eps, 0, 0.5)
    right = _score_sum(inputs, h, eps, 1, 0.5)
    score = (math.sqrt(eps) / (2.0 * math.sqrt(2.0))) * guard * (left + (1.0 + h * L / 2.0) * right)
    uniform = None
    if not callable(inputs.eps_score):
        uniform = (
            math.sqrt(eps / 2.0)
            * guard
            * (2.0 + h * L / 2.0)
            * float(inputs.eps_score)
            * math.sqrt(T)
        )
    return BoundReport(
        equation="prop6",
        early_stopping=early,
        init_propagated=init,
        discretization_propagated=disc,
        score_propagated=score,
        precondition_ok=ok,
        init_crude=init_crude,
        score_uniform_bound=uniform,
        notes={"L": L},
    )


def bound_em(inputs: BoundInputs) -> BoundReport:
    """Full W2 bound for Euler-Maruyama with approximate score."""
    d, R, T, eps, h = inputs.d, inputs.R, inputs.T, inputs.epsilon, inputs.h
    ok = eps <= R**2 and h <= eps / 2.0
    guard = _exp(R**2 / eps)
    early = early_stopping_bound(d, eps)
    init = (2.0 * eps / T**1.5) * guard * R**2
    init_crude = (2.0 * eps / T) * guard * R
    disc = math.sqrt(d) * (4.0 / 3.0) * (R**2 / eps) * guard * math.log(2.0 * T / eps) * math.sqrt(h)
    score = 2.0 * eps * guard * _score_sum(inputs, h, eps, 1, 1.0)
    uniform = None
    if not callable(inputs.eps_score):
        uniform = 2.0 * eps * guard * math.log(2.0 * T / eps) * float(inputs.eps_score)
    return BoundReport(
        equation="prop7",
        early_stopping=early,
        init_propagated=init,
        discretization_propagated=disc,
        score_propagated=score,
        precondition_ok=ok,
        init_crude=init_crude,
        score_uniform_bound=uniform,
    )


def bound_em_true_score(inputs: BoundInputs) -> BoundReport:
    """Order-1 W2 bound for Euler-Maruyama with the exact score (no score term)."""
    d, R, T, eps, h = inputs.d, inputs.R, inputs.T, inputs.epsilon, inputs.h
    ok = eps <= R**2 and h <= eps / 2.0
    guard = _exp(R**2 / eps)
    early = early_stopping_bound(d, eps)
    init = (2.0 * eps / T**1.5) * guard * R**2
    init_crude = (2.0 * eps / T) * guard * R
    disc = math.sqrt(d) * (4.0 * math.sqrt(2.0) / 3.0) * (R**2 / eps**1.5) * guard * h
    return BoundReport(
        equation="prop8",
        early_stopping=early,
        init_propagated=init,
        discretization_propagated=disc,
        score_propagated=0.0,
        precondition_ok=ok,
        init_crude=init_crude,
    )


def bound_no_early_stopping(variant: str, inputs: BoundInputs) -> BoundReport:
    """Smoothed-target variants: early stopping dropped, tau in place of epsilon.

    The eps_score argument is a function of the X-process time, so the sums run
    over h k rather than epsilon + h k.
    """
    d, R, T, tau = inputs.d, inputs.R, inputs.T, inputs.tau
    if tau is None or tau <= 0:
        raise InvalidInputError("no-early-stopping bounds need tau > 0")
    h = inputs.h_no_stop
    if variant == "prop5":
        ok = h <= tau <= R**2
        guard = _exp(R**2 / (2.0 * tau))
        init = (math.sqrt(2.0 * tau) / (T + tau)) * guard * R**2
        init_crude = math.sqrt(2.0 * tau / (T + tau)) * guard * R
        disc = math.sqrt(d) * (math.sqrt(2.0) * R**3 / tau**2.5) * guard * math.sqrt(T) * h
        score = math.sqrt(tau / 2.0) * guard * _score_sum_shifted(inputs, h, tau, 1, 0.5)
    elif variant == "prop6":
        L = inputs.lipschitz_default(tau)
        ok = tau <= R**2 and h <= tau / 2.0
        guard = _exp(R**2 / tau + h * T * L**2 / 8.0)
        init = (math.sqrt(2.0 * tau) / (T + tau)) * guard * R**2
        init_crude = math.sqrt(2.0 * tau / (T + tau)) * guard * R
        disc = (
            (22.0 * d * math.sqrt(2.0) * R**5 / tau**4.5 + math.sqrt(d) * L * R**3 / (2.0 * math.sqrt(2.0) * tau**2.5))
            * guard
            * math.sqrt(T + tau)
            * h**2
        )
        left = _score_sum_shifted(inputs, h, tau, 0, 0.5)
        right = _score_sum_shifted(inputs, h, tau, 1, 0.5)
        score = (math.sqrt(tau) / (2.0 * math.sqrt(2.0))) * guard * (left + (1.0 + h * L / 2.0) * right)
    elif variant == "prop7":
        ok = tau <= R**2 and h <= tau / 2.0
        guard = _exp(R**2 / tau)
        init = (2.0 * tau / (T + tau) ** 1.5) * guard * R**2
        init_crude = (2.0 * tau / (T + tau)) * guard * R
        disc = (
            math.sqrt(d)
            * (4.0 / 3.0)
            * (R**2 / tau)
            * guard
            * math.log(2.0 * (T + tau) / tau)
            * math.sqrt(h)
        )
        score = 2.0 * tau * guard * _score_sum_shifted(inputs, h, tau, 1, 1.0)
    elif variant == "prop8":
        ok = tau <= R**2 and h <= tau / 2.0
        guard = _exp(R**2 / tau)
        init = (2.0 * tau / (T + tau) ** 1.5) * guard * R**2
        init_crude = (2.0 * tau / (T + tau)) * guard * R
        disc = math.sqrt(d) * (4.0 * math.sqrt(2.0) / 3.0) * (R**2 / tau**1.5) * guard * h
        score = 0.0
    else:
        raise InvalidInputError(f"unknown variant {variant!r}")
    return BoundReport(
        equation=f"{variant}+no-early-stop",
        early_stopping=0.0,
        init_propagated=init,
        discretization_propagated=disc,
        score_propagated=score,
        precondition_ok=ok,
        init_crude=init_crude,
    )


def _score_sum_shifted(
    inputs: BoundInputs, h: float, tau: float, offset: int, power: float
) -> float:
    """h * sum_k eps_score(h (k + offset)) / (tau + h k)^power."""
    k = np.arange(inputs.N)
    args = h * (k + offset)
    denoms = (tau + h * k) ** power
    values = np.array([inputs.eps_at(a) for a in args])
    return h * float(np.sum(values / denoms))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float


def fit_rate(hs, errors) -> RateFit:
    """Least-squares slope of log(error) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.size < 3:
        raise InvalidInputError("need at least 3 points to fit a rate")
    if np.any(hs <= 0) or np.any(errors <= 0):
        raise InvalidInputError("rate fits need positive step sizes and errors")
    logh = np.log(hs)
    loge = np.log(errors)
    slope, intercept = np.polyfit(logh, loge, 1)
    pred = slope * logh + intercept
    ss_res = float(np.sum((loge - pred) ** 2))
    ss_tot = float(np.sum((loge - loge.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(slope=float(slope), intercept=float(intercept), r_squared=r2)
