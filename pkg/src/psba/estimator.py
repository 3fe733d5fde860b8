"""Monte-Carlo boundary gradient estimation from label-only queries.

One estimate draws B latent directions on the unit sphere, pushes them
through the projection, probes the oracle at x_t + delta * f(u_b) / ||f(u_b)||
and averages the probe directions weighted by the observed signs. When signs
are mixed, the sample-mean sign is subtracted first (variance-reduction
balancing); when all signs agree the plain mean keeps the common sign.

Samples are generated from the seeded stream before the first oracle call, so
the trajectory is a pure function of (seed, model, config) no matter how the
oracle evaluates queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetExhaustedError, InvalidDimensionError, PartialEstimateError
from .models import AttackSpec, Classifier, MeteredOracle, sign, true_gradient
from .projections import Projection
from .tensors import SeededRng, l2, sample_unit_spheres


@dataclass
class EstimateReport:
    """Result of one gradient estimate.

    ``estimate`` is a flat n-vector living in the projection subspace.
    ``sign_counts`` is (#+1, #-1). ``queries_used`` equals B.
    """

    estimate: np.ndarray
    num_samples: int
    delta: float
    sign_counts: tuple[int, int]
    queries_used: int


def _combine(signs: np.ndarray, probes: np.ndarray) -> np.ndarray:
    phi = signs.astype(np.float64)
    if np.all(phi == phi[0]):
        return phi[0] * probes.mean(axis=0)
    balanced = phi - phi.mean()
    return (balanced[:, None] * probes).mean(axis=0)


def estimate_gradient(
    oracle: MeteredOracle,
    x_t: np.ndarray,
    projection: Projection,
    delta: float,
    num_samples: int,
    rng: SeededRng,
) -> EstimateReport:
    """Estimate the margin gradient at x_t with ``num_samples`` oracle queries.

    Raises :class:`PartialEstimateError` carrying the number of queries
    actually consumed if the oracle budget runs out mid-batch.
    """
    if num_samples < 1:
        raise InvalidDimensionError(f"num_samples={num_samples} must be >= 1")
    if delta <= 0:
        raise InvalidDimensionError(f"delta={delta} must be positive")
    x_flat = np.asarray(x_t, dtype=np.float64).reshape(-1)

    latents = sample_unit_spheres(num_samples, projection.m, rng)
    probes = projection.perturbation_batch(latents, delta)

    signs = np.empty(num_samples, dtype=np.int64)
    consumed = 0
    try:
        for b in range(num_samples):
            signs[b] = oracle.decide(x_flat + probes[b])
            consumed += 1
    except BudgetExhaustedError as exc:
        raise PartialEstimateError(
            f"oracle budget exhausted after {consumed} of {num_samples} samples", consumed
        ) from exc

    estimate = _combine(signs, probes)
    pos = int(np.sum(signs == 1))
    return EstimateReport(
        estimate=estimate,
        num_samples=num_samples,
        delta=delta,
        sign_counts=(pos, num_samples - pos),
        queries_used=num_samples,
    )


@dataclass
class SensitivityReport:
    """Empirical directional sensitivity of a projection at a point.

    ``alpha1_sq`` approximates the squared sensitivity along the projected
    true gradient; ``mean_orth`` the average over orthogonal directions.
    With a one-dimensional latent space the orthogonal average is undefined
    and reported as 0 with ``single_direction`` set.
    """

    alpha1_sq: float
    mean_orth: float
    single_direction: bool = False


def estimate_sensitivity(
    projection: Projection,
    model: Classifier,
    spec: AttackSpec,
    x_t: np.ndarray,
    delta: float,
    num_samples: int,
    rng: SeededRng,
) -> SensitivityReport:
    """Probe how the projected sampling distribution aligns with the gradient.

    alpha1_sq = mean of cos^2(q_b, proj_V grad S); mean_orth spreads the
    complementary mass over the m - 1 orthogonal directions.
    """
    grad, _ = true_gradient(model, spec, x_t)
    if l2(grad) == 0.0:
        raise InvalidDimensionError("true gradient vanishes; sensitivity undefined")
    basis = projection.subspace_basis()
    proj_grad = basis.T @ (basis @ grad.reshape(-1))
    if l2(proj_grad) == 0.0:
        raise InvalidDimensionError("gradient is orthogonal to the projection subspace")
    ghat = proj_grad / l2(proj_grad)

    latents = sample_unit_spheres(num_samples, projection.m, rng)
    probes = projection.perturbation_batch(latents, delta)
    cos = (probes @ ghat) / np.linalg.norm(probes, axis=1)
    cos_sq = cos * cos
    alpha1_sq = float(cos_sq.mean())
    if projection.m == 1:
        return SensitivityReport(alpha1_sq=1.0, mean_orth=0.0, single_direction=True)
    mean_orth = float((1.0 - cos_sq).mean() / (projection.m - 1))
    return SensitivityReport(alpha1_sq=alpha1_sq, mean_orth=mean_orth)


def adjusted_estimate(
    model: Classifier,
    spec: AttackSpec,
    x_t: np.ndarray,
    projection: Projection,
    delta: float,
    num_samples: int,
    k: float,
    rng: SeededRng,
) -> EstimateReport:
    """Gradient estimate with orthogonal components reweighted by k.

    Each probe q_b is replaced by <q_b, ghat> ghat + k (q_b - <q_b, ghat> ghat)
    with ghat the unit true gradient, then the usual sign-weighted average is
    applied. k = 1 reproduces :func:`estimate_gradient` exactly for the same
    seed. Whitebox verification experiment only; k must lie in (0, 2).
    """
    if not 0.0 < k < 2.0:
        raise InvalidDimensionError(f"k={k} must lie in (0, 2)")
    grad, _ = true_gradient(model, spec, x_t)
    gnorm = l2(grad)
    if gnorm == 0.0:
        raise InvalidDimensionError("true gradient vanishes; adjustment undefined")
    ghat = grad.reshape(-1) / gnorm
    x_flat = np.asarray(x_t, dtype=np.float64).reshape(-1)

    latents = sample_unit_spheres(num_samples, projection.m, rng)
    probes = projection.perturbation_batch(latents, delta)
    along = probes @ ghat
    # Written as k*q + (1-k)*<q, ghat> ghat so k = 1 is bit-exact identity.
    probes = k * probes + ((1.0 - k) * along)[:, None] * ghat[None, :]

    signs = np.array([sign(model, spec, x_flat + q) for q in probes], dtype=np.int64)
    estimate = _combine(signs, probes)
    pos = int(np.sum(signs == 1))
    return EstimateReport(
        estimate=estimate,
        num_samples=num_samples,
        delta=delta,
        sign_counts=(pos, num_samples - pos),
        queries_used=num_samples,
    )
