"""Bounded-support targets, the forward noising process, and conditional moments.

Targets are finite weighted Dirac mixtures in R^d, optionally convolved with
N(0, tau I).  The forward process adds Brownian noise, so the marginal at time
t is the mixture smeared by N(0, (tau + t) I); every score-type quantity in the
package reduces to posterior (softmax) weights over the mixture atoms, computed
here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, SingularTimeError, UnsupportedDimensionError
from .rngstream import stream

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class TargetDistribution:
    """Weighted Dirac mixture with known support radius and optional smoothing."""

    points: np.ndarray  # (m, d)
    weights: np.ndarray  # (m,), sums to 1
    radius: float
    smoothing: float = 0.0

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise InvalidInputError("points must be a non-empty (m, d) array")
        if weights.shape != (points.shape[0],):
            raise InvalidInputError("weights must match the number of points")
        if np.any(weights < 0):
            raise InvalidInputError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidInputError("weights must sum to 1")
        norms = np.linalg.norm(points, axis=1)
        if np.any(norms > self.radius + 1e-12):
            raise InvalidInputError("a point lies outside the declared radius")
        if self.smoothing < 0:
            raise InvalidInputError("smoothing must be nonnegative")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def effective_time(self, t: float) -> float:
        """Smoothing folds into the heat semigroup: queries at t act at t + tau."""
        return float(t) + self.smoothing

    def l2_norm(self) -> float:
        """||X||_L2 = sqrt(E ||X||^2), smoothing included."""
        second = float(self.weights @ np.sum(self.points**2, axis=1))
        return float(np.sqrt(second + self.smoothing * self.d))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform reverse-time grid: nodes t_n = n (T - epsilon) / N for n = 0..N."""

    T: float
    epsilon: float
    N: int

    def __post_init__(self):
        if self.T <= 0:
            raise InvalidInputError("horizon T must be positive")
        if self.epsilon < 0 or self.epsilon >= self.T:
            raise InvalidInputError("need 0 <= epsilon < T")
        if self.N < 1:
            raise InvalidInputError("need at least one step")

    @property
    def h(self) -> float:
        return (self.T - self.epsilon) / self.N

    def nodes(self) -> np.ndarray:
        # n/N is exactly 1 at n = N, so t_N = T - epsilon without accumulation error.
        return (np.arange(self.N + 1) / self.N) * (self.T - self.epsilon)

    def node(self, n: int) -> float:
        return (n / self.N) * (self.T - self.epsilon)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.epsilon, self.N * factor)


@dataclass(frozen=True)
class SampleBatch:
    """Batch of points in R^d plus the stream metadata that produced it."""

    data: np.ndarray  # (n, d)
    seed: int
    time_label: float
    allow_nonfinite: bool = field(default=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise InvalidInputError("batch data must be (n, d)")
        if not self.allow_nonfinite and not np.all(np.isfinite(data)):
            raise InvalidInputError("batch contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ConditionalMoments:
    """Posterior atom weights and conditional moments at a single query point."""

    gamma: np.ndarray  # (m,)
    mean: np.ndarray  # (d,)
    second_moment: np.ndarray  # (d, d), E[X X^T | X_t = x]
    higher: dict  # {order: scalar}, d = 1 only

    def scalar(self, order: int) -> float:
        """E[X^order | X_t = x] in dimension one."""
        if order == 1:
            return float(self.mean[0])
        if order == 2:
            return float(self.second_moment[0, 0])
        return self.higher[order]


@dataclass(frozen=True)
class CovarianceSummary:
    mean: np.ndarray
    sigma: np.ndarray  # E[X X^T], smoothing included
    frobenius: float


def make_dirac_mixture(
    points: Sequence, weights: Sequence | None = None, smoothing: float = 0.0
) -> TargetDistribution:
    """Build a mixture target; weights are renormalized, radius is the max point norm."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise InvalidInputError("point list is empty")
    if pts.ndim != 2:
        raise InvalidInputError("points must be vectors of a common dimension")
    if weights is None:
        w = np.full(pts.shape[0], 1.0 / pts.shape[0])
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise InvalidInputError("weights length must match points")
        if np.any(w < 0):
            raise InvalidInputError("weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise InvalidInputError("weights must not all be zero")
        w = w / total
    radius = float(np.max(np.linalg.norm(pts, axis=1)))
    return TargetDistribution(points=pts, weights=w, radius=radius, smoothing=float(smoothing))


def target_from_json(source) -> TargetDistribution:
    """Load a target from a JSON document, file path, or parsed dict.

    Schema: {"points": [[...], ...], "weights": [...], "tau": 0.0}; weights
    default to uniform, tau to 0.  Scalars are accepted for 1-D points.
    """
    if isinstance(source, (str, bytes)):
        try:
            obj = json.loads(source)
        except json.JSONDecodeError:
            with open(source) as fh:
                obj = json.load(fh)
    else:
        obj = source
    if not isinstance(obj, dict) or "points" not in obj:
        raise InvalidInputError("target document must contain a 'points' field")
    pts = np.asarray(obj["points"], dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return make_dirac_mixture(pts, obj.get("weights"), obj.get("tau", 0.0))


def sample_target(target: TargetDistribution, n: int, seed: int) -> SampleBatch:
    """Draw n i.i.d. samples of X (mixture draw plus smoothing noise)."""
    if n < 1:
        raise InvalidInputError("need n >= 1")
    data = _component_draw(target, n, seed)
    if target.smoothing > 0:
        gen = stream(seed, "target-smoothing")
        data = data + np.sqrt(target.smoothing) * gen.standard_normal((n, target.d))
    return SampleBatch(data=data, seed=seed, time_label=0.0)


def forward_marginal_sample(
    target: TargetDistribution, t: float, n: int, seed: int
) -> SampleBatch:
    """Draw n samples of X_t = X + B_t; smoothing folds into the Gaussian part."""
    if t < 0:
        raise InvalidInputError("time must be nonnegative")
    if n < 1:
        raise InvalidInputError("need n >= 1")
    data = _component_draw(target, n, seed)
    var = target.effective_time(t)
    if var > 0:
        gen = stream(seed, "forward-noise")
        data = data + np.sqrt(var) * gen.standard_normal((n, target.d))
    return SampleBatch(data=data, seed=seed, time_label=float(t))


def _component_draw(target: TargetDistribution, n: int, seed: int) -> np.ndarray:
    gen = stream(seed, "target-component")
    idx = gen.choice(target.m, size=n, p=target.weights)
    return target.points[idx].copy()


def log_posterior_weights(target: TargetDistribution, t: float, x: np.ndarray) -> np.ndarray:
    """Log softmax weights log gamma_i(x) for a batch x of shape (n, d).

    Uses max-subtracted log-sum-exp: x may sit O(sqrt(T)) from the support and
    naive exponentials underflow to an all-zero posterior.
    """
    tvar = target.effective_time(t)
    if tvar <= 0:
        raise SingularTimeError("conditional moments need t + tau > 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sq = np.sum((x[:, None, :] - target.points[None, :, :]) ** 2, axis=2)  # (n, m)
    logits = np.log(target.weights)[None, :] - sq / (2.0 * tvar)
    peak = logits.max(axis=1, keepdims=True)
    shifted = logits - peak
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def posterior_weights(target: TargetDistribution, t: float, x: np.ndarray) -> np.ndarray:
    return np.exp(log_posterior_weights(target, t, x))


def posterior_mean(target: TargetDistribution, t: float, x: np.ndarray) -> np.ndarray:
    """E[X | X_{t+tau} = x] for a batch x of shape (n, d)."""
    return posterior_weights(target, t, x) @ target.points


def conditional_moments(
    target: TargetDistribution, t: float, x, max_order: int = 2
) -> ConditionalMoments:
    """Posterior weights and conditional moments E[X^(j)| X_t = x] for j <= max_order."""
    if max_order < 1:
        raise InvalidInputError("max_order must be at least 1")
    if max_order >= 3 and target.d != 1:
        raise UnsupportedDimensionError("tensor moments beyond order 2 are 1-D only")
    xq = np.asarray(x, dtype=float).reshape(1, target.d)
    gamma = posterior_weights(target, t, xq)[0]
    mean = gamma @ target.points
    second = np.einsum("i,ij,ik->jk", gamma, target.points, target.points)
    higher = {}
    if target.d == 1:
        atoms = target.points[:, 0]
        for order in range(3, max_order + 1):
            higher[order] = float(gamma @ atoms**order)
    return ConditionalMoments(gamma=gamma, mean=mean, second_moment=second, higher=higher)


def covariance(target: TargetDistribution) -> CovarianceSummary:
    """Mean, Sigma = E[X X^T] (with smoothing), and its Frobenius norm."""
    mean = target.weights @ target.points
    sigma = np.einsum("i,ij,ik->jk", target.weights, target.points, target.points)
    sigma = sigma + target.smoothing * np.eye(target.d)
    fro = float(np.sqrt(np.trace(sigma @ sigma.T)))
    return CovarianceSummary(mean=mean, sigma=sigma, frobenius=fro)
