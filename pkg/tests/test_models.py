import json
import threading

import numpy as np
import pytest

from psba.errors import BudgetExhaustedError, ShapeMismatchError
from psba.models import (
    AffineClassifier,
    AttackSpec,
    difference,
    make_affine,
    make_oracle,
    make_radial,
    make_two_layer_tanh,
    model_from_json,
    model_to_json,
    sign,
    true_gradient,
)
from psba.tensors import SeededRng


def constant_logit_model(logit_values, input_shape=(1, 1, 2)):
    dim = input_shape[0] * input_shape[1] * input_shape[2]
    w = np.zeros((len(logit_values), dim))
    return AffineClassifier(w, np.array(logit_values, dtype=float), input_shape)


def test_difference_untargeted_two_class():
    model = constant_logit_model([3.0, 5.0])
    spec = AttackSpec("untargeted", 0)
    assert difference(model, spec, np.zeros(2)) == pytest.approx(2.0, abs=1e-15)


def test_difference_targeted_positive_when_target_wins():
    model = constant_logit_model([1.0, 4.0, 2.5])
    spec = AttackSpec("targeted", 1)
    assert difference(model, spec, np.zeros(2)) == pytest.approx(1.5, abs=1e-15)
    assert sign(model, spec, np.zeros(2)) == 1


def test_sign_conventions():
    spec = AttackSpec("untargeted", 0)
    assert sign(constant_logit_model([1.0, 3.0]), spec, np.zeros(2)) == 1
    # S exactly 0 counts as non-adversarial.
    assert sign(constant_logit_model([1.0, 1.0]), spec, np.zeros(2)) == -1
    assert sign(constant_logit_model([1.0, 1.0 - 1e-12]), spec, np.zeros(2)) == -1


def finite_difference_gradient(model, spec, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (difference(model, spec, x + step) - difference(model, spec, x - step)) / (
            2 * h
        )
    return grad


def test_tanh_gradient_matches_finite_differences():
    model = make_two_layer_tanh(3, input_shape=(1, 3, 3), hidden=8, num_classes=3)
    rng = SeededRng(4)
    hits = 0
    for _ in range(5):
        x = rng.standard_normal(model.input_dim)
        spec = AttackSpec("untargeted", model.predict(x))
        grad, tied = true_gradient(model, spec, x)
        if tied:
            continue
        fd = finite_difference_gradient(model, spec, x)
        assert np.linalg.norm(grad - fd) <= 1e-5 * max(1.0, np.linalg.norm(grad))
        hits += 1
    assert hits >= 3


def test_difference_gradient_finite_differences_on_margin():
    # The margin's own finite differences, independent of logit_gradient.
    model = make_two_layer_tanh(9, input_shape=(1, 2, 2), hidden=6, num_classes=2)
    x = SeededRng(10).standard_normal(model.input_dim)
    spec = AttackSpec("untargeted", model.predict(x))
    grad, _ = true_gradient(model, spec, x)
    fd = finite_difference_gradient(model, spec, x)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(grad) <= 1e-5


def test_true_gradient_affine_two_class_exact():
    model = make_affine(5, input_shape=(1, 2, 2), num_classes=2)
    x = SeededRng(6).standard_normal(4)
    spec = AttackSpec("untargeted", 0)
    grad, tied = true_gradient(model, spec, x)
    assert not tied
    assert np.array_equal(grad, model.weights[1] - model.weights[0])


def test_true_gradient_tie_flagged_lowest_index():
    model = constant_logit_model([0.0, 2.0, 2.0], input_shape=(1, 1, 3))
    spec = AttackSpec("untargeted", 0)
    grad, tied = true_gradient(model, spec, np.zeros(3))
    assert tied
    # Lowest tied class index (1) wins the tie-break.
    assert np.array_equal(grad, model.weights[1] - model.weights[0])


def test_sign_iff_positive_difference_on_grid():
    model = make_affine(7, input_shape=(1, 1, 2), num_classes=2)
    spec = AttackSpec("untargeted", 0)
    for x0 in np.linspace(-3, 3, 21):
        for x1 in np.linspace(-3, 3, 21):
            x = np.array([x0, x1])
            assert (sign(model, spec, x) == 1) == (difference(model, spec, x) > 0)


def test_affine_margin_exactly_linear():
    model = make_affine(8, input_shape=(1, 2, 2), num_classes=2)
    spec = AttackSpec("untargeted", 0)
    rng = SeededRng(9)
    a = rng.standard_normal(4)
    b = rng.standard_normal(4)
    s_a = difference(model, spec, a)
    s_b = difference(model, spec, b)
    mid = difference(model, spec, 0.5 * (a + b))
    assert mid == pytest.approx(0.5 * (s_a + s_b), rel=1e-12)


def test_tanh_empirical_smoothness_below_analytic_bound():
    model = make_two_layer_tanh(11, input_shape=(1, 3, 3), hidden=10, num_classes=2)
    spec = AttackSpec("untargeted", 0)
    bound = model.margin_smoothness_bound()
    rng = SeededRng(12)
    worst = 0.0
    for _ in range(10_000):
        x = rng.standard_normal(model.input_dim)
        z = x + rng.standard_normal(model.input_dim) * 0.1
        gx, tx = true_gradient(model, spec, x)
        gz, tz = true_gradient(model, spec, z)
        if tx or tz:
            continue
        ratio = np.linalg.norm(gx - gz) / np.linalg.norm(x - z)
        worst = max(worst, float(ratio))
    assert 0 < worst <= bound


def test_radial_equal_kappas_linear_margin():
    model = make_radial(13, input_shape=(1, 2, 2), num_classes=2, kappa_spread=0.0)
    spec = AttackSpec("untargeted", 0)
    rng = SeededRng(14)
    x = rng.standard_normal(4)
    g1, _ = true_gradient(model, spec, x)
    g2, _ = true_gradient(model, spec, x + rng.standard_normal(4))
    assert np.allclose(g1, g2, atol=1e-12)
    assert model.margin_smoothness_bound() == pytest.approx(0.0, abs=1e-15)


def test_oracle_counts_queries():
    model = make_affine(15, input_shape=(1, 1, 2))
    oracle = make_oracle(model, AttackSpec("untargeted", 0))
    for _ in range(3):
        oracle.decide(np.zeros(2))
    assert oracle.query_count == 3


def test_oracle_budget_freezes_counter():
    model = make_affine(16, input_shape=(1, 1, 2))
    oracle = make_oracle(model, AttackSpec("untargeted", 0), budget=2)
    oracle.decide(np.zeros(2))
    oracle.decide(np.zeros(2))
    with pytest.raises(BudgetExhaustedError) as excinfo:
        oracle.decide(np.zeros(2))
    assert excinfo.value.queries_used == 2
    assert oracle.query_count == 2


def test_oracle_concurrent_counting():
    model = make_affine(17, input_shape=(1, 1, 2))
    oracle = make_oracle(model, AttackSpec("untargeted", 0))

    def worker():
        for _ in range(200):
            oracle.decide(np.zeros(2))

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert oracle.query_count == 800


def test_model_json_round_trip_bit_exact():
    for model in (
        make_affine(18, input_shape=(2, 3, 3), num_classes=4),
        make_two_layer_tanh(19, input_shape=(1, 4, 4), hidden=6, num_classes=3),
        make_radial(20, input_shape=(1, 2, 2), num_classes=3),
    ):
        clone = model_from_json(model_to_json(model))
        x = SeededRng(21).standard_normal(model.input_dim)
        assert model.logits(x).tobytes() == clone.logits(x).tobytes()


def test_model_json_is_flat_row_major():
    model = make_affine(22, input_shape=(1, 2, 2), num_classes=2)
    payload = json.loads(model_to_json(model))
    assert payload["kind"] == "affine"
    assert len(payload["weights"]) == model.num_classes * model.input_dim
    assert payload["weights"][: model.input_dim] == model.weights[0].tolist()


def test_dimension_mismatch_rejected():
    model = make_affine(23, input_shape=(1, 2, 2))
    with pytest.raises(ShapeMismatchError):
        model.logits(np.zeros(5))


def test_targeted_spec_rejects_trivial_target():
    model = make_affine(24, input_shape=(1, 2, 2))
    x = np.zeros(4)
    with pytest.raises(Exception):
        AttackSpec.targeted(model, x, model.predict(x))
