"""Wasserstein-2 estimation between sample batches and closed-form references.

Three routes with different trust levels: the 1-D quantile coupling (exact for
empirical measures), the n <= 4096 assignment solve (exact in any dimension),
and the Bures closed form for Gaussians.  A deterministic quantile-grid
integrator provides population-level 1-D values for mixture-vs-Gaussian
comparisons, which is what the initialization asymptotics need.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix
from scipy.special import ndtr

from .errors import InvalidInputError, SizeLimitError
from .rngstream import stream
from .target import (
    CovarianceSummary,
    SampleBatch,
    TargetDistribution,
    covariance,
    forward_marginal_sample,
)

ASSIGNMENT_CAP = 4096
QUANTILE_GRID_SIZE = 100_000
BISECTION_TOL = 1e-12


@dataclass(frozen=True)
class W2Estimate:
    value: float
    method: str  # quantile-1d | exact-assignment | gaussian-closed-form
    n: int
    noise_floor: Optional[float] = None


def w2_1d(a: SampleBatch, b: SampleBatch) -> W2Estimate:
    """Exact empirical W2 in dimension one via the monotone (sorted) coupling."""
    if a.d != 1 or b.d != 1:
        raise InvalidInputError("w2_1d requires one-dimensional batches")
    if a.n != b.n:
        raise InvalidInputError("batches must have equal size")
    xs = np.sort(a.data[:, 0])
    ys = np.sort(b.data[:, 0])
    value = float(np.sqrt(np.mean((xs - ys) ** 2)))
    return W2Estimate(value=value, method="quantile-1d", n=a.n)


LP_CELL_CAP = 1_000_000


def _squared_costs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _transport_lp_cost(ua, counts_a, ub, counts_b, n) -> float:
    """Mean matched cost of the collapsed transportation problem.

    The transportation polytope with integral marginals has integral vertices,
    so the simplex optimum equals the uncollapsed minimum-cost matching.
    """
    ka, kb = len(ua), len(ub)
    cost = _squared_costs(ua, ub).reshape(-1)
    rows = np.concatenate(
        [np.repeat(np.arange(ka), kb), ka + np.tile(np.arange(kb), ka)]
    )
    cols = np.concatenate([np.arange(ka * kb), np.arange(ka * kb)])
    a_eq = coo_matrix((np.ones(2 * ka * kb), (rows, cols)), shape=(ka + kb, ka * kb))
    b_eq = np.concatenate([counts_a, counts_b]).astype(float)
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, method="highs")
    if not res.success:
        raise RuntimeError(f"transportation solve failed: {res.message}")
    return float(res.fun) / n


def w2_exact(a: SampleBatch, b: SampleBatch) -> W2Estimate:
    """Exact empirical W2 via minimum-cost perfect matching on squared costs.

    Batches with many exactly repeated rows (Dirac-mixture draws) collapse to
    a small transportation problem solved exactly by simplex; the assignment
    solver would crawl through the resulting cost-tie plateaus.  General
    clouds go through the cubic augmenting-path assignment solve.
    """
    if a.n != b.n:
        raise InvalidInputError("batches must have equal size")
    if a.d != b.d:
        raise InvalidInputError("batches must share a dimension")
    if a.n > ASSIGNMENT_CAP:
        raise SizeLimitError(
            f"assignment solve capped at n = {ASSIGNMENT_CAP}; subsample larger batches"
        )
    ua, counts_a = np.unique(a.data, axis=0, return_counts=True)
    ub, counts_b = np.unique(b.data, axis=0, return_counts=True)
    collapsed = len(ua) < a.n or len(ub) < b.n
    if collapsed and len(ua) * len(ub) <= LP_CELL_CAP:
        mean_cost = _transport_lp_cost(ua, counts_a, ub, counts_b, a.n)
    else:
        cost = _squared_costs(a.data, b.data)
        rows, cols = linear_sum_assignment(cost)
        mean_cost = float(cost[rows, cols].mean())
    value = float(np.sqrt(max(mean_cost, 0.0)))
    return W2Estimate(value=value, method="exact-assignment", n=a.n)


def w2_gaussian(mean1, cov1, mean2, cov2) -> W2Estimate:
    """Bures-Wasserstein distance between two Gaussians."""
    mean1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    mean2 = np.atleast_1d(np.asarray(mean2, dtype=float))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    for cov in (cov1, cov2):
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise InvalidInputError("covariances must be symmetric")
    root1 = _psd_sqrt(cov1)
    cross = _psd_sqrt(root1 @ cov2 @ root1)
    sq = float(np.sum((mean1 - mean2) ** 2) + np.trace(cov1 + cov2 - 2.0 * cross))
    return W2Estimate(value=float(np.sqrt(max(sq, 0.0))), method="gaussian-closed-form", n=0)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def mixture_gaussian_quantiles(
    points: np.ndarray, weights: np.ndarray, var: float, u: np.ndarray
) -> np.ndarray:
    """Invert the CDF of sum_i w_i N(x_i, var) (Diracs when var = 0) by bisection."""
    points = np.asarray(points, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    sd = float(np.sqrt(var))
    span = max(60.0 * sd, 1.0)
    lo = np.full_like(u, points.min() - span)
    hi = np.full_like(u, points.max() + span)

    def cdf(y):
        if sd > 0:
            return ndtr((y[:, None] - points[None, :]) / sd) @ weights
        return (points[None, :] <= y[:, None]) @ weights

    while np.max(hi - lo) > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def w2_quantile_grid_1d(
    points_a,
    weights_a,
    var_a: float,
    points_b,
    weights_b,
    var_b: float,
    n_grid: int = QUANTILE_GRID_SIZE,
) -> float:
    """Deterministic population W2 between two 1-D Gaussian (or Dirac) mixtures.

    Midpoint rule on the quantile representation: W2^2 = int_0^1 (Qa - Qb)^2 du.
    """
    u = (np.arange(n_grid) + 0.5) / n_grid
    qa = mixture_gaussian_quantiles(np.asarray(points_a), np.asarray(weights_a), var_a, u)
    qb = mixture_gaussian_quantiles(np.asarray(points_b), np.asarray(weights_b), var_b, u)
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


@dataclass(frozen=True)
class InitErrorReport:
    """Initialization-error diagnostics: W2(L(X_T), N(0, T_eff I)) vs its asymptote."""

    T: float
    empirical: W2Estimate
    exact_1d: Optional[float]
    asymptote: float
    crude_bound: float
    ratio: Optional[float]
    mean_is_zero: bool


def init_error_check(target: TargetDistribution, T: float, n: int, seed: int) -> InitErrorReport:
    """Compare the time-T forward marginal against the sampler's Gaussian start.

    Under smoothing the effective horizon T + tau is used on both sides, which
    matches what the samplers do.  The asymptote ||Sigma||_F / (2 sqrt(T_eff))
    uses the bounded part of the target and only applies to centered targets;
    otherwise just the crude bound ||X||_L2 is meaningful.
    """
    t_eff = target.effective_time(T)
    sigma_bounded = np.einsum("i,ij,ik->jk", target.weights, target.points, target.points)
    asymptote = float(np.sqrt(np.trace(sigma_bounded @ sigma_bounded.T))) / (2.0 * np.sqrt(t_eff))
    mean = target.weights @ target.points
    mean_is_zero = bool(np.max(np.abs(mean)) <= 1e-12)
    crude = target.l2_norm()

    forward = forward_marginal_sample(target, T, n, seed)
    gauss = np.sqrt(t_eff) * stream(seed, "init-gauss-reference").standard_normal((n, target.d))
    gauss_batch = SampleBatch(data=gauss, seed=seed, time_label=T)
    if target.d == 1:
        empirical = w2_1d(forward, gauss_batch)
        exact = w2_quantile_grid_1d(
            target.points[:, 0], target.weights, t_eff, np.zeros(1), np.ones(1), t_eff
        )
    else:
        if n > ASSIGNMENT_CAP:
            raise SizeLimitError("init_error_check in d >= 2 needs n <= 4096")
        empirical = w2_exact(forward, gauss_batch)
        exact = None

    ratio = None
    if mean_is_zero and asymptote > 0:
        best = exact if exact is not None else empirical.value
        ratio = best / asymptote
    return InitErrorReport(
        T=T,
        empirical=empirical,
        exact_1d=exact,
        asymptote=asymptote if mean_is_zero else 0.0,
        crude_bound=crude,
        ratio=ratio,
        mean_is_zero=mean_is_zero,
    )


@dataclass(frozen=True)
class Prop4Report:
    coupling_bound: float
    asymptote: float
    comparison_variance: float
    method: str


def prop4_general(
    alpha: float,
    beta: float,
    gamma: float,
    target: TargetDistribution,
    n: int = ASSIGNMENT_CAP,
    seed: int = 0,
) -> Prop4Report:
    """Coupling bound and Frobenius asymptote for Y = alpha X + beta Z vs gamma Z'."""
    if alpha <= 0 or beta <= 0:
        raise InvalidInputError("alpha and beta must be positive")
    if gamma < beta:
        raise InvalidInputError("prop4 requires gamma >= beta")
    s2 = (gamma**2 - beta**2) / alpha**2
    cov: CovarianceSummary = covariance(target)
    asymptote = (alpha**2 / (2.0 * beta)) * float(
        np.linalg.norm(cov.sigma - s2 * np.eye(target.d), ord="fro")
    )
    if s2 == 0.0:
        # Comparison measure collapses to a point mass: W2(L(X), delta_0) = ||X||_L2.
        return Prop4Report(
            coupling_bound=alpha * target.l2_norm(),
            asymptote=asymptote,
            comparison_variance=0.0,
            method="closed-form",
        )
    if target.d == 1:
        w2 = w2_quantile_grid_1d(
            target.points[:, 0],
            target.weights,
            target.smoothing,
            np.zeros(1),
            np.ones(1),
            s2,
        )
        method = "quantile-grid"
    else:
        if n > ASSIGNMENT_CAP:
            raise SizeLimitError("sampled prop4 comparison needs n <= 4096")
        xs = forward_marginal_sample(target, 0.0, n, seed)
        gauss = np.sqrt(s2) * stream(seed, "prop4-gauss").standard_normal((n, target.d))
        w2 = w2_exact(xs, SampleBatch(data=gauss, seed=seed, time_label=0.0)).value
        method = "exact-assignment"
    return Prop4Report(
        coupling_bound=alpha * w2, asymptote=asymptote, comparison_variance=s2, method=method
    )
