"""Closed-form cosine-similarity bounds for the boundary gradient estimator.

Symbols: m latent dimension, n input dimension, delta probe step, theta
boundary slack, beta_s / beta_f smoothness constants of the margin and the
projection, alphas the projection's directional sensitivities (alpha_1 along
the projected gradient), B sample count, p tail probability.

All functions are pure; bounds that go negative are returned unclamped with a
``vacuous`` flag so curve shapes survive where the tail dives below zero.
Beta-function values go through log-gamma, stable up to m around 1e6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .errors import InvalidDimensionError


@dataclass(frozen=True)
class BoundParams:
    m: int
    n: int
    delta: float
    theta: float
    beta_s: float
    beta_f: float
    alphas: np.ndarray
    grad_norm: float
    proj_norm: float
    num_samples: int = 100
    tail_p: float = 0.05

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        object.__setattr__(self, "alphas", alphas)
        if self.m > self.n:
            raise InvalidDimensionError(f"m={self.m} exceeds n={self.n}")
        if alphas.size != self.m:
            raise InvalidDimensionError(f"need m={self.m} sensitivities, got {alphas.size}")
        if alphas[0] <= 0:
            raise InvalidDimensionError("alpha_1 must be positive")
        if self.delta <= 0 or not 0 < self.tail_p < 1:
            raise InvalidDimensionError("delta must be > 0 and tail_p in (0, 1)")
        if self.theta < 0 or self.beta_s < 0 or self.beta_f < 0:
            raise InvalidDimensionError("theta, beta_s, beta_f must be >= 0")
        if self.proj_norm > self.grad_norm * (1 + 1e-12):
            raise InvalidDimensionError("projected norm cannot exceed gradient norm")

    @property
    def alpha_max(self) -> float:
        return float(np.max(self.alphas))


@dataclass(frozen=True)
class BoundResult:
    value: float
    vacuous: bool = False

    def __float__(self):
        return self.value


def log_beta_fn(a: float, b: float) -> float:
    return float(gammaln(a) + gammaln(b) - gammaln(a + b))


def beta_half(m: int) -> float:
    """BetaFn(1/2, (m-1)/2), the normalizer of the v_1^2 distribution."""
    if m < 2:
        raise InvalidDimensionError(f"m={m} must be >= 2")
    return math.exp(log_beta_fn(0.5, (m - 1) / 2.0))


def beta_mean_abs_v1(m: int) -> float:
    """E|v_1| for v uniform on S^{m-1}: 2 / ((m-1) BetaFn(1/2, (m-1)/2))."""
    return 2.0 / ((m - 1) * beta_half(m))


def p_upper(w: float, alpha1: float, proj_norm: float, m: int) -> float:
    """Upper bound on the probability that the probe lands within +-w of the
    boundary: 2w / (BetaFn(1/2,(m-1)/2) alpha_1 ||proj grad||), clamped to [0,1]."""
    if alpha1 <= 0 or proj_norm <= 0:
        raise InvalidDimensionError("alpha1 and proj_norm must be positive")
    if w < 0:
        raise InvalidDimensionError("w must be >= 0")
    raw = 2.0 * w / (beta_half(m) * alpha1 * proj_norm)
    return min(1.0, max(0.0, raw))


def gamma(params: BoundParams) -> float:
    """Curvature aggregate feeding the main bounds."""
    if params.proj_norm <= 0:
        raise InvalidDimensionError("gamma undefined for zero projected gradient")
    theta_term = params.beta_s * params.theta**2 / params.delta**2
    smooth = params.beta_s * (params.alpha_max + 0.5 * params.delta * params.beta_f) ** 2
    return params.beta_f + (smooth + theta_term) / params.proj_norm


def _bracket_terms(params: BoundParams) -> float:
    """Sum of the error terms shared by the expectation bound."""
    if params.m < 2:
        raise InvalidDimensionError("bounds need m >= 2 (the m-1 divisors)")
    g = gamma(params)
    a1 = float(params.alphas[0])
    orth_sq = float(np.sum(params.alphas[1:] ** 2))
    total = params.delta * g * g / a1
    total += (g / a1) * math.sqrt(orth_sq / (params.m - 1))
    total += 1.58 * params.beta_f / math.sqrt(params.m - 1)
    total += (g * params.theta / (a1 * params.delta)) * (params.grad_norm / params.proj_norm)
    return total


def _sampling_term(params: BoundParams) -> float:
    all_sq = float(np.sum(params.alphas**2))
    return (
        (1.0 / params.delta)
        * math.sqrt(all_sq)
        * math.sqrt((2.0 / params.num_samples) * math.log(params.m / params.tail_p))
        / math.sqrt(params.m - 1)
    )


def _assemble(params: BoundParams, terms: float) -> BoundResult:
    a1 = float(params.alphas[0])
    prefactor = (params.m - 1) ** 2 * params.delta**2 / (8.0 * a1 * a1)
    value = (params.proj_norm / params.grad_norm) * (1.0 - prefactor * terms * terms)
    return BoundResult(value=value, vacuous=value < 0.0)


def expectation_bound(params: BoundParams) -> BoundResult:
    """Lower bound on cos(E estimate, grad S) near the boundary."""
    return _assemble(params, _bracket_terms(params))


def concentration_bound(params: BoundParams) -> BoundResult:
    """Lower bound on cos(estimate, grad S) holding with probability 1 - p."""
    return _assemble(params, _bracket_terms(params) + _sampling_term(params))


def at_boundary_expectation_bound(params: BoundParams) -> BoundResult:
    """Exact-boundary special case; equals expectation_bound at theta = 0."""
    return expectation_bound(replace(params, theta=0.0))


def at_boundary_concentration_bound(params: BoundParams) -> BoundResult:
    """Exact-boundary special case; equals concentration_bound at theta = 0."""
    return concentration_bound(replace(params, theta=0.0))


def hsja_bound(params: BoundParams) -> float:
    """Earlier identical-projection bound: 1 - 9 beta_s^2 delta^2 n^2 / (8 ||grad||^2)."""
    if params.grad_norm <= 0:
        raise InvalidDimensionError("grad_norm must be positive")
    return 1.0 - 9.0 * params.beta_s**2 * params.delta**2 * params.n**2 / (
        8.0 * params.grad_norm**2
    )


def identity_boundary_bound(params: BoundParams) -> float:
    """Simplified identity-projection bound at the boundary, for small delta:
    1 - (n-1)^2 delta^2 beta_s^2 / (2 ||grad||^2).

    Same order as :func:`hsja_bound` with constant 1/2 in place of 9/8, so it
    is strictly larger whenever beta_s * delta > 0.
    """
    if params.grad_norm <= 0:
        raise InvalidDimensionError("grad_norm must be positive")
    return 1.0 - (params.n - 1) ** 2 * params.delta**2 * params.beta_s**2 / (
        2.0 * params.grad_norm**2
    )


def big_o_bound(params: BoundParams, calibration: float = 1.0) -> BoundResult:
    """Order-level form of the concentration bound with caller-supplied constant.

    (proj/grad) * (1 - C m^2 (sum_{i>=2} alpha_i^2 / (m-1)) *
    (delta^2 beta_f^2 / alpha_1^4
     + alpha_max^4 / alpha_1^4 * delta^2 beta_s^2 / proj^2
     + ln(m/p) / (B alpha_1^2)))
    """
    if params.m < 2:
        raise InvalidDimensionError("bounds need m >= 2")
    a1 = float(params.alphas[0])
    orth_sq = float(np.sum(params.alphas[1:] ** 2))
    inner = params.delta**2 * params.beta_f**2 / a1**4
    inner += (params.alpha_max**4 / a1**4) * params.delta**2 * params.beta_s**2 / params.proj_norm**2
    inner += math.log(params.m / params.tail_p) / (params.num_samples * a1 * a1)
    value = (params.proj_norm / params.grad_norm) * (
        1.0 - calibration * params.m**2 * (orth_sq / (params.m - 1)) * inner
    )
    return BoundResult(value=value, vacuous=value < 0.0)


# ---------------------------------------------------------------------------
# Optimal-scale curves: bound as a function of the subspace dimension m when
# the gradient's energy across an orthonormal basis follows a fixed profile.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyProfile:
    """Per-direction gradient energy, normalized to total 1 over n directions.

    ``quadratic`` decays polynomially: e_i proportional to (n - i + 1)^degree.
    ``exponential`` decays geometrically: e_i proportional to exp(-rate (i-1)),
    concentrating energy in the leading directions.
    """

    kind: str
    rate: float = 1.0
    degree: int = 2

    def energies(self, n: int) -> np.ndarray:
        i = np.arange(1, n + 1, dtype=np.float64)
        if self.kind == "quadratic":
            e = (n - i + 1) ** self.degree
        elif self.kind == "exponential":
            e = np.exp(-self.rate * (i - 1))
        else:
            raise InvalidDimensionError(f"unknown energy profile {self.kind!r}")
        return e / e.sum()

    def proj_norm(self, m: int, n: int) -> float:
        return float(np.sqrt(self.energies(n)[:m].sum()))


@dataclass
class CurvePoint:
    m: int
    bound: float
    vacuous: bool


def figure_curves(
    profile: EnergyProfile,
    n: int,
    beta_s: float = 0.5,
    beta_f: float = 0.0,
    delta_rule=None,
    sampling_term: bool = False,
    num_samples: int = 100,
    tail_p: float = 0.05,
) -> list[CurvePoint]:
    """Bound-versus-scale curve: for each m in [2, n] build unit-sensitivity
    params at the boundary with delta = delta_rule(m) (default 1/m) and
    evaluate the expectation bound (or the concentration bound when
    ``sampling_term`` is on)."""
    if n < 2:
        raise InvalidDimensionError("need n >= 2")
    if delta_rule is None:
        delta_rule = lambda m: 1.0 / m
    points = []
    for m in range(2, n + 1):
        params = BoundParams(
            m=m,
            n=n,
            delta=float(delta_rule(m)),
            theta=0.0,
            beta_s=beta_s,
            beta_f=beta_f,
            alphas=np.ones(m),
            grad_norm=1.0,
            proj_norm=profile.proj_norm(m, n),
            num_samples=num_samples,
            tail_p=tail_p,
        )
        res = concentration_bound(params) if sampling_term else expectation_bound(params)
        points.append(CurvePoint(m=m, bound=res.value, vacuous=res.vacuous))
    return points


def curve_argmax(points: list[CurvePoint]) -> int:
    """Scale with the highest bound; ties break toward the smaller m."""
    best = points[0]
    for pt in points[1:]:
        if pt.bound > best.bound:
            best = pt
    return best.m


@dataclass(frozen=True)
class FamilyPoint:
    """Per-scale description of a projection family member."""

    proj_norm: float
    beta_f: float = 0.0
    alphas: np.ndarray | None = None


def optimal_scale_objective(
    family,
    params: BoundParams,
    simplified: bool = False,
    calibration: float = 1.0,
    scales=None,
    delta_rule=None,
) -> int:
    """Argmax over m of the optimal-scale objective.

    ``family`` maps m -> FamilyPoint. The full objective is the order-level
    concentration form (:func:`big_o_bound`); the simplified linear-case form
    is (proj/grad) (1 - C m^2 ln(m/p)). Ties break toward smaller m.
    """
    if scales is None:
        scales = range(2, params.n + 1)
    if delta_rule is None:
        delta_rule = lambda m: params.delta
    best_m = None
    best_val = -math.inf
    for m in scales:
        pt = family(m)
        if simplified:
            val = (pt.proj_norm / params.grad_norm) * (
                1.0 - calibration * m * m * math.log(m / params.tail_p)
            )
        else:
            alphas = pt.alphas if pt.alphas is not None else np.ones(m)
            p_m = BoundParams(
                m=m,
                n=params.n,
                delta=float(delta_rule(m)),
                theta=params.theta,
                beta_s=params.beta_s,
                beta_f=pt.beta_f,
                alphas=alphas,
                grad_norm=params.grad_norm,
                proj_norm=pt.proj_norm,
                num_samples=params.num_samples,
                tail_p=params.tail_p,
            )
            val = big_o_bound(p_m, calibration).value
        if val > best_val:
            best_val = val
            best_m = m
    return best_m


def curves_to_csv(points: list[CurvePoint]) -> str:
    lines = ["m,bound,vacuous"]
    for pt in points:
        lines.append(f"{pt.m},{pt.bound!r},{int(pt.vacuous)}")
    return "\n".join(lines) + "\n"
