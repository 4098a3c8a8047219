"""Closed-form score fields and their spatial regularity.

The exact score of a mixture target comes straight from conditional moments:
grad log p_t(x) = (E[X | X_t = x] - x) / t.  On top of it sit two controlled
distortions -- a quadratic non-Lipschitz perturbation and a bounded sinusoidal
corruption with independent knobs for L2 magnitude and Lipschitz constant.
All queries at time t act at effective time t + tau, so callers never
special-case smoothed targets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import InfeasibleBudgetError, InvalidInputError, SingularTimeError
from .rngstream import stream
from .target import (
    TargetDistribution,
    TimeGrid,
    conditional_moments,
    forward_marginal_sample,
    posterior_mean,
)

# Frequencies below this floor would make the corruption effectively constant.
MIN_CORRUPTION_FREQUENCY = 1e-6


def exact_score(target: TargetDistribution, t: float, x: np.ndarray) -> np.ndarray:
    """grad log p_{t+tau}(x) for a batch x of shape (n, d)."""
    tvar = target.effective_time(t)
    if tvar <= 0:
        raise SingularTimeError("score needs t + tau > 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("score query point must be finite")
    return (posterior_mean(target, t, x) - x) / tvar


def exact_score_per_sample_times(
    target: TargetDistribution, t: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """Exact score with one query time per row of x; used by adaptive integrators."""
    t = np.asarray(t, dtype=float)
    tvar = t + target.smoothing
    if np.any(tvar <= 0):
        raise SingularTimeError("score needs t + tau > 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sq = np.sum((x[:, None, :] - target.points[None, :, :]) ** 2, axis=2)
    logits = np.log(target.weights)[None, :] - sq / (2.0 * tvar[:, None])
    shifted = logits - logits.max(axis=1, keepdims=True)
    gamma = np.exp(shifted)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return (gamma @ target.points - x) / tvar[:, None]


def log_density(target: TargetDistribution, t: float, x: np.ndarray) -> np.ndarray:
    """log p_{t+tau}(x) of the noised mixture, stable far from the support."""
    tvar = target.effective_time(t)
    if tvar <= 0:
        raise SingularTimeError("density needs t + tau > 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sq = np.sum((x[:, None, :] - target.points[None, :, :]) ** 2, axis=2)
    logits = np.log(target.weights)[None, :] - sq / (2.0 * tvar)
    peak = logits.max(axis=1)
    mix = peak + np.log(np.exp(logits - peak[:, None]).sum(axis=1))
    return mix - 0.5 * target.d * np.log(2.0 * np.pi * tvar)


def hessian(target: TargetDistribution, t: float, x) -> np.ndarray:
    """grad^2 log p_{t+tau}(x) = -I/t' + cov(X | X_t' = x)/t'^2 at one point."""
    tvar = target.effective_time(t)
    if tvar <= 0:
        raise SingularTimeError("hessian needs t + tau > 0")
    mom = conditional_moments(target, t, x, max_order=2)
    cov = mom.second_moment - np.outer(mom.mean, mom.mean)
    hess = -np.eye(target.d) / tvar + cov / tvar**2
    return 0.5 * (hess + hess.T)


def spatial_derivatives_1d(target: TargetDistribution, t: float, x: float, order: int) -> float:
    """d^order/dx^order of log p_{t+tau} in dimension one, order in {3, 4, 5}."""
    if order not in (3, 4, 5):
        raise InvalidInputError("order must be 3, 4 or 5")
    mom = conditional_moments(target, t, np.array([x]), max_order=order)
    tvar = target.effective_time(t)
    m1 = mom.scalar(1)
    m2 = mom.scalar(2)
    m3 = mom.scalar(3)
    if order == 3:
        return (m3 - 3.0 * m2 * m1 + 2.0 * m1**3) / tvar**3
    m4 = mom.scalar(4)
    if order == 4:
        return (m4 - 4.0 * m3 * m1 - 3.0 * m2**2 + 12.0 * m2 * m1**2 - 6.0 * m1**4) / tvar**4
    m5 = mom.scalar(5)
    return (
        m5
        - 5.0 * m4 * m1
        - 10.0 * m3 * m2
        + 20.0 * m3 * m1**2
        + 30.0 * m2**2 * m1
        - 60.0 * m2 * m1**3
        + 24.0 * m1**5
    ) / tvar**5


@dataclass(frozen=True)
class RegularityEnvelope:
    """Hessian eigenvalue range and one-step Lipschitz constant at (t, h)."""

    t: float
    h: float
    R: float
    lower_eig: float
    upper_eig: float
    C_t: float
    L_th: float

    @property
    def contractive(self) -> bool:
        return self.L_th < 1.0


def regularity_envelope(R: float, t: float, h: float) -> RegularityEnvelope:
    if t <= 0:
        raise SingularTimeError("envelope needs t > 0")
    if h < 0:
        raise InvalidInputError("step must be nonnegative")
    lower = -1.0 / t
    upper = -1.0 / t + R**2 / t**2
    c_t = max(1.0 / t, abs(R**2 / t**2 - 1.0 / t))
    l_th = 1.0 + h * (R**2 / t**2 - 1.0 / t)
    return RegularityEnvelope(t=t, h=h, R=R, lower_eig=lower, upper_eig=upper, C_t=c_t, L_th=l_th)


def lipschitz_constant(R: float, t: float, h: float) -> float:
    """L_{t,h} = 1 + h (R^2/t^2 - 1/t), the contraction factor of x + h score."""
    return 1.0 + h * (R**2 / t**2 - 1.0 / t)


@dataclass(frozen=True)
class ScoreField:
    """Evaluable map (t, x) -> R^d: exact score or one of two distortions.

    kind is "exact", "quadratic" (adds alpha ||x|| x) or "corrupted" (adds
    c sin(omega <u_t, x> + phi_t) v_t with per-node directions).  negate flips
    the sign of the whole field bit-exactly.
    """

    target: TargetDistribution
    kind: str = "exact"
    alpha: float = 0.0
    magnitude: float = 0.0
    frequency: float = 0.0
    grid: Optional[TimeGrid] = None
    node_u: Optional[np.ndarray] = None  # (N+1, d) unit rows
    node_v: Optional[np.ndarray] = None
    node_phase: Optional[np.ndarray] = None  # (N+1,)
    negate: bool = False

    def __post_init__(self):
        if self.kind not in ("exact", "quadratic", "corrupted"):
            raise InvalidInputError(f"unknown field kind {self.kind!r}")
        if self.kind == "quadratic" and self.alpha <= 0:
            raise InvalidInputError("quadratic perturbation needs alpha > 0")
        if self.kind == "corrupted" and self.magnitude > 0 and self.grid is None:
            raise InvalidInputError("corrupted field needs a time grid")

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        value = exact_score(self.target, t, x)
        if self.kind == "quadratic":
            value = value + self.alpha * np.linalg.norm(x, axis=1, keepdims=True) * x
        elif self.kind == "corrupted" and self.magnitude > 0:
            value = value + self._corruption(t, x)
        return -value if self.negate else value

    def addend(self, t: float, x: np.ndarray) -> np.ndarray:
        """The distortion alone (zero for the exact field)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "quadratic":
            out = self.alpha * np.linalg.norm(x, axis=1, keepdims=True) * x
        elif self.kind == "corrupted" and self.magnitude > 0:
            out = self._corruption(t, x)
        else:
            out = np.zeros_like(x)
        return -out if self.negate else out

    def _corruption(self, t: float, x: np.ndarray) -> np.ndarray:
        node = int(np.clip(round((t - self.grid.epsilon) / self.grid.h), 0, self.grid.N))
        u = self.node_u[node]
        v = self.node_v[node]
        phase = self.node_phase[node]
        wave = np.sin(self.frequency * (x @ u) + phase)
        return self.magnitude * wave[:, None] * v[None, :]

    def negated(self) -> "ScoreField":
        return replace(self, negate=not self.negate)


def exact_field(target: TargetDistribution) -> ScoreField:
    return ScoreField(target=target)


def quadratic_field(target: TargetDistribution, alpha: float) -> ScoreField:
    return ScoreField(target=target, kind="quadratic", alpha=alpha)


def make_corrupted_field(
    target: TargetDistribution,
    budget: float,
    lipschitz_budget: float,
    grid: TimeGrid,
    seed: int,
) -> ScoreField:
    """Corruption with pointwise norm <= budget and Lipschitz constant <= lipschitz_budget.

    The sinusoid gives eps_score(t) <= budget at every node while c * omega
    controls the spatial Lipschitz constant independently.
    """
    if budget < 0 or lipschitz_budget < 0:
        raise InvalidInputError("budgets must be nonnegative")
    if budget == 0:
        return ScoreField(target=target, kind="corrupted", magnitude=0.0, frequency=0.0, grid=grid)
    frequency = lipschitz_budget / budget
    if frequency < MIN_CORRUPTION_FREQUENCY:
        raise InfeasibleBudgetError(
            "lipschitz budget too small for the requested magnitude at the frequency floor"
        )
    gen = stream(seed, "corrupt-directions")
    n_nodes = grid.N + 1
    u = gen.standard_normal((n_nodes, target.d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = gen.standard_normal((n_nodes, target.d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    phase = gen.uniform(0.0, 2.0 * np.pi, n_nodes)
    return ScoreField(
        target=target,
        kind="corrupted",
        magnitude=budget,
        frequency=frequency,
        grid=grid,
        node_u=u,
        node_v=v,
        node_phase=phase,
    )


@dataclass(frozen=True)
class ScoreErrorEstimate:
    """RMS score error at one time, with a normal-approximation 95% CI."""

    value: float
    ci_low: float
    ci_high: float
    n: int
    diverged: bool = False


def measure_score_error(
    field: ScoreField, target: TargetDistribution, t: float, n: int, seed: int
) -> ScoreErrorEstimate:
    """Monte Carlo estimate of eps_score(t) = || field(t, X_t) - exact(t, X_t) ||_L2."""
    if n < 100:
        raise InvalidInputError("need n >= 100 for a meaningful CI")
    batch = forward_marginal_sample(target, t, n, seed)
    approx = field(t, batch.data)
    if not np.all(np.isfinite(approx)):
        return ScoreErrorEstimate(value=np.inf, ci_low=np.inf, ci_high=np.inf, n=n, diverged=True)
    diff = approx - exact_score(target, t, batch.data)
    sq = np.sum(diff**2, axis=1)
    mean = float(sq.mean())
    half = 1.96 * float(sq.std(ddof=1)) / np.sqrt(n) if n > 1 else 0.0
    return ScoreErrorEstimate(
        value=float(np.sqrt(mean)),
        ci_low=float(np.sqrt(max(mean - half, 0.0))),
        ci_high=float(np.sqrt(mean + half)),
        n=n,
    )


__all__ = [
    "RegularityEnvelope",
    "ScoreErrorEstimate",
    "ScoreField",
    "exact_field",
    "exact_score",
    "exact_score_per_sample_times",
    "hessian",
    "lipschitz_constant",
    "log_density",
    "make_corrupted_field",
    "measure_score_error",
    "quadratic_field",
    "regularity_envelope",
    "spatial_derivatives_1d",
]
