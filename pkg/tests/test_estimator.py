import numpy as np
import pytest

from psba.errors import InvalidDimensionError, PartialEstimateError
from psba.estimator import adjusted_estimate, estimate_gradient, estimate_sensitivity
from psba.models import (
    AttackSpec,
    MeteredOracle,
    make_oracle,
    make_planted_affine,
    make_two_layer_tanh,
    true_gradient,
)
from psba.projections import FreqLowPassProjection, IdentityProjection
from psba.tensors import SeededRng, cosine_similarity, sample_unit_spheres
from psba.verify import make_aligned_anisotropic


class ConstantOracle(MeteredOracle):
    def __init__(self, value, budget=None):
        super().__init__(budget)
        self.value = value

    def decide(self, x):
        self._charge()
        return self.value


def planted_boundary_setup(shape, seed=0):
    """Affine model with margin <g, x>; x_t = 0 sits exactly on the boundary."""
    rng = SeededRng(seed, (201,))
    dim = shape[0] * shape[1] * shape[2]
    g = rng.standard_normal(dim)
    model = make_planted_affine(g, shape)
    spec = AttackSpec("untargeted", 0)
    return model, spec, g, np.zeros(dim)


def test_constant_positive_oracle_gives_mean_perturbation():
    shape = (1, 4, 4)
    p = IdentityProjection(shape)
    oracle = ConstantOracle(1)
    rng = SeededRng(1)
    report = estimate_gradient(oracle, np.zeros(16), p, 0.5, 32, rng)
    assert report.sign_counts == (32, 0)
    # Degenerate branch: estimate equals the plain mean of the perturbations.
    probes = p.perturbation_batch(sample_unit_spheres(32, p.m, SeededRng(1)), 0.5)
    assert np.allclose(report.estimate, probes.mean(axis=0), atol=1e-15)


def test_boundary_identity_cosine_exceeds_090():
    shape = (1, 10, 10)
    model, spec, g, x_t = planted_boundary_setup(shape, seed=2)
    p = IdentityProjection(shape)
    oracle = make_oracle(model, spec)
    report = estimate_gradient(oracle, x_t, p, 0.01, 5000, SeededRng(3))
    assert cosine_similarity(report.estimate, g) >= 0.9
    assert oracle.query_count == 5000


def test_projected_decomposition_identity():
    # cos(est, g) factors exactly through the subspace: the ratio between
    # cos(est, g) and fraction * cos(est, proj_V g) is 1.
    shape = (3, 8, 8)
    model, spec, g, x_t = planted_boundary_setup(shape, seed=4)
    p = FreqLowPassProjection(3, shape)
    oracle = make_oracle(model, spec)
    report = estimate_gradient(oracle, x_t, p, 0.01, 2000, SeededRng(5))
    basis = p.subspace_basis()
    proj_g = basis.T @ (basis @ g)
    lhs = cosine_similarity(report.estimate, g)
    rhs = p.projected_gradient_fraction(g) * cosine_similarity(report.estimate, proj_g)
    assert lhs == pytest.approx(rhs, abs=1e-9)
    assert abs(lhs / rhs - 1.0) <= 0.05


def test_estimate_stays_in_subspace():
    shape = (2, 8, 8)
    model, spec, _, x_t = planted_boundary_setup(shape, seed=6)
    p = FreqLowPassProjection(4, shape)
    oracle = make_oracle(model, spec)
    report = estimate_gradient(oracle, x_t, p, 0.05, 200, SeededRng(7))
    basis = p.subspace_basis()
    residual = report.estimate - basis.T @ (basis @ report.estimate)
    assert np.linalg.norm(residual) <= 1e-9 * np.linalg.norm(report.estimate)


def test_grand_mean_direction_unbiased():
    shape = (1, 10, 10)
    model, spec, g, x_t = planted_boundary_setup(shape, seed=8)
    p = IdentityProjection(shape)
    total = np.zeros(p.n)
    for i in range(200):
        oracle = make_oracle(model, spec)
        report = estimate_gradient(oracle, x_t, p, 0.01, 100, SeededRng(9, (i,)))
        total += report.estimate
    assert cosine_similarity(total / 200.0, g) >= 0.99


def test_budget_exhaustion_mid_batch():
    shape = (1, 4, 4)
    model, spec, _, x_t = planted_boundary_setup(shape, seed=10)
    oracle = make_oracle(model, spec, budget=37)
    with pytest.raises(PartialEstimateError) as excinfo:
        estimate_gradient(oracle, x_t, IdentityProjection(shape), 0.01, 100, SeededRng(11))
    assert excinfo.value.consumed == 37
    assert oracle.query_count == 37


def test_estimate_deterministic_for_seed():
    shape = (1, 6, 6)
    model, spec, _, x_t = planted_boundary_setup(shape, seed=12)
    p = IdentityProjection(shape)
    r1 = estimate_gradient(make_oracle(model, spec), x_t, p, 0.02, 64, SeededRng(13))
    r2 = estimate_gradient(make_oracle(model, spec), x_t, p, 0.02, 64, SeededRng(13))
    assert r1.estimate.tobytes() == r2.estimate.tobytes()
    assert r1.sign_counts == r2.sign_counts


def test_invalid_estimator_arguments():
    shape = (1, 4, 4)
    model, spec, _, x_t = planted_boundary_setup(shape, seed=14)
    p = IdentityProjection(shape)
    oracle = make_oracle(model, spec)
    with pytest.raises(InvalidDimensionError):
        estimate_gradient(oracle, x_t, p, 0.01, 0, SeededRng(15))
    with pytest.raises(InvalidDimensionError):
        estimate_gradient(oracle, x_t, p, -1.0, 10, SeededRng(15))


def test_sensitivity_isotropic_identity():
    shape = (3, 10, 10)
    model, spec, _, x_t = planted_boundary_setup(shape, seed=16)
    p = IdentityProjection(shape)
    rep = estimate_sensitivity(p, model, spec, x_t, 0.01, 100_000, SeededRng(17))
    assert rep.alpha1_sq / rep.mean_orth == pytest.approx(1.0, abs=0.1)


def test_sensitivity_anisotropic_times_three():
    shape = (3, 10, 10)
    model, spec, g, x_t = planted_boundary_setup(shape, seed=18)
    p = make_aligned_anisotropic(g, 300, shape, scale=3.0)
    rep = estimate_sensitivity(p, model, spec, x_t, 0.01, 100_000, SeededRng(19))
    assert 7.0 <= rep.alpha1_sq / rep.mean_orth <= 11.0


def test_sensitivity_single_direction_flagged():
    shape = (1, 2, 2)
    model, spec, g, x_t = planted_boundary_setup(shape, seed=20)
    p = make_aligned_anisotropic(g, 1, shape, scale=1.0)
    rep = estimate_sensitivity(p, model, spec, x_t, 0.01, 100, SeededRng(21))
    assert rep.single_direction
    assert rep.alpha1_sq == 1.0
    assert rep.mean_orth == 0.0


def test_adjusted_k1_matches_plain_estimator_bitwise():
    shape = (1, 8, 8)
    model, spec, _, x_t = planted_boundary_setup(shape, seed=22)
    p = IdentityProjection(shape)
    plain = estimate_gradient(make_oracle(model, spec), x_t, p, 0.01, 128, SeededRng(23))
    adjusted = adjusted_estimate(model, spec, x_t, p, 0.01, 128, 1.0, SeededRng(23))
    assert plain.estimate.tobytes() == adjusted.estimate.tobytes()
    assert plain.sign_counts == adjusted.sign_counts


def test_adjusted_k_near_zero_parallel_to_gradient():
    shape = (1, 8, 8)
    model, spec, g, x_t = planted_boundary_setup(shape, seed=24)
    p = IdentityProjection(shape)
    report = adjusted_estimate(model, spec, x_t, p, 0.01, 64, 1e-9, SeededRng(25))
    assert abs(cosine_similarity(report.estimate, g)) >= 1.0 - 1e-9


def test_adjusted_k_range_enforced():
    shape = (1, 4, 4)
    model, spec, _, x_t = planted_boundary_setup(shape, seed=26)
    p = IdentityProjection(shape)
    for bad in (0.0, 2.0, -0.5, 2.5):
        with pytest.raises(InvalidDimensionError):
            adjusted_estimate(model, spec, x_t, p, 0.01, 8, bad, SeededRng(27))


def tanh_boundary_point(model, spec, x, rng):
    """Bisect between x and a sampled adversarial point down to the margin."""
    from psba.models import difference

    adv = None
    for _ in range(500):
        candidate = rng.standard_normal(model.input_dim) * 2.0
        if difference(model, spec, candidate) > 0:
            adv = candidate
            break
    assert adv is not None, "model has no reachable adversarial region"
    lo_pt, hi_pt = x, adv
    for _ in range(80):
        mid = 0.5 * (lo_pt + hi_pt)
        if difference(model, spec, mid) > 0:
            hi_pt = mid
        else:
            lo_pt = mid
    return hi_pt


def test_adjusted_lower_k_improves_cosine_on_tanh():
    model = make_two_layer_tanh(28, input_shape=(1, 10, 10), hidden=24, num_classes=2)
    rng = SeededRng(29)
    x = rng.standard_normal(model.input_dim) * 0.3
    spec = AttackSpec("untargeted", model.predict(x))
    x_t = tanh_boundary_point(model, spec, x, rng)

    p = IdentityProjection(model.input_shape)
    g, _ = true_gradient(model, spec, x_t)
    delta = np.linalg.norm(x_t) / model.input_dim
    lows, highs = [], []
    for s in range(50):
        low = adjusted_estimate(model, spec, x_t, p, delta, 300, 0.96, SeededRng(30, (s,)))
        high = adjusted_estimate(model, spec, x_t, p, delta, 300, 1.04, SeededRng(30, (s,)))
        lows.append(cosine_similarity(low.estimate, g))
        highs.append(cosine_similarity(high.estimate, g))
    assert np.mean(lows) > np.mean(highs)
