"""Built-in smooth classifiers, the margin ("difference") function and its
sign, analytic gradients for verification, and the metered label-only oracle.

The attack only ever sees the +/-1 sign through a :class:`MeteredOracle`;
``true_gradient`` exists purely so tests and diagnostics can compare estimates
against ground truth.

Models serialize to flat JSON (kind, dims, row-major weight arrays) so the
oracle service and the CLI load byte-identical classifiers.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass

import numpy as np

from . import transforms
from .errors import BudgetExhaustedError, InvalidDimensionError, ShapeMismatchError
from .tensors import SeededRng, ensure_finite

UNTARGETED = "untargeted"
TARGETED = "targeted"


class Classifier:
    """Interface shared by the built-in model zoo."""

    kind: str
    input_shape: tuple[int, int, int]
    num_classes: int

    @property
    def input_dim(self) -> int:
        c, h, w = self.input_shape
        return c * h * w

    def logits(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def logit_gradient(self, class_index: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.logits(x)))

    def _flat(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64).reshape(-1)
        if arr.size != self.input_dim:
            raise ShapeMismatchError(
                f"input of size {arr.size} does not match model dim {self.input_dim}"
            )
        return arr

    def to_dict(self) -> dict:
        raise NotImplementedError


class AffineClassifier(Classifier):
    """Logits W x + b. The margin between any two classes is exactly linear."""

    kind = "affine"

    def __init__(self, weights: np.ndarray, bias: np.ndarray, input_shape):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.input_shape = tuple(input_shape)
        self.num_classes = self.weights.shape[0]
        if self.weights.shape != (self.num_classes, self.input_dim):
            raise ShapeMismatchError("affine weight shape mismatch")
        ensure_finite(self.weights, "weights")
        ensure_finite(self.bias, "bias")

    def logits(self, x):
        return self.weights @ self._flat(x) + self.bias

    def logit_gradient(self, class_index, x):
        return self.weights[class_index].copy()

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "weights": self.weights.reshape(-1).tolist(),
            "bias": self.bias.tolist(),
        }


class TwoLayerTanhClassifier(Classifier):
    """Logits W2 tanh(W1 x + b1) + b2; smooth with a bounded Hessian."""

    kind = "two_layer_tanh"

    def __init__(self, w1, b1, w2, b2, input_shape):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.input_shape = tuple(input_shape)
        self.num_classes = self.w2.shape[0]
        self.hidden = self.w1.shape[0]
        if self.w1.shape != (self.hidden, self.input_dim) or self.w2.shape != (
            self.num_classes,
            self.hidden,
        ):
            raise ShapeMismatchError("tanh layer shape mismatch")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            ensure_finite(arr)

    def logits(self, x):
        return self.w2 @ np.tanh(self.w1 @ self._flat(x) + self.b1) + self.b2

    def logit_gradient(self, class_index, x):
        z = np.tanh(self.w1 @ self._flat(x) + self.b1)
        return self.w1.T @ (self.w2[class_index] * (1.0 - z * z))

    def margin_smoothness_bound(self) -> float:
        """Analytic upper bound on the Lipschitz constant of grad S.

        For the margin between classes a and b, the Hessian is
        W1^T diag((w2a - w2b) * d/dz tanh'(z)) W1 with |d/dz tanh'| <= 0.7699,
        so its spectral norm is at most 0.7699 * max|w2a - w2b| * ||W1||_2^2,
        maximized over class pairs.
        """
        spec_norm = np.linalg.norm(self.w1, ord=2)
        max_gap = 0.0
        for a in range(self.num_classes):
            for b in range(a + 1, self.num_classes):
                max_gap = max(max_gap, float(np.max(np.abs(self.w2[a] - self.w2[b]))))
        return 0.7699 * max_gap * spec_norm**2

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "hidden": self.hidden,
            "w1": self.w1.reshape(-1).tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.reshape(-1).tolist(),
            "b2": self.b2.tolist(),
        }


class RadialClassifier(Classifier):
    """Logits -kappa_c/2 ||x - mu_c||^2 + b_c.

    The margin between classes a, b has constant Hessian (kappa_b - kappa_a) I,
    so its smoothness constant is exactly max |kappa_a - kappa_b|; with equal
    kappas the margin is exactly linear.
    """

    kind = "radial"

    def __init__(self, centers, kappas, bias, input_shape):
        self.centers = np.asarray(centers, dtype=np.float64)
        self.kappas = np.asarray(kappas, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.input_shape = tuple(input_shape)
        self.num_classes = self.centers.shape[0]
        if self.centers.shape != (self.num_classes, self.input_dim):
            raise ShapeMismatchError("radial center shape mismatch")
        for arr in (self.centers, self.kappas, self.bias):
            ensure_finite(arr)

    def logits(self, x):
        d = self._flat(x)[None, :] - self.centers
        return -0.5 * self.kappas * np.einsum("ij,ij->i", d, d) + self.bias

    def logit_gradient(self, class_index, x):
        return -self.kappas[class_index] * (self._flat(x) - self.centers[class_index])

    def margin_smoothness_bound(self) -> float:
        k = self.kappas
        return float(np.max(np.abs(k[:, None] - k[None, :])))

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "centers": self.centers.reshape(-1).tolist(),
            "kappas": self.kappas.tolist(),
            "bias": self.bias.tolist(),
        }


def model_to_json(model: Classifier) -> str:
    return json.dumps(model.to_dict())


def model_from_dict(payload: dict) -> Classifier:
    kind = payload["kind"]
    shape = tuple(payload["input_shape"])
    classes = int(payload["num_classes"])
    dim = shape[0] * shape[1] * shape[2]
    if kind == AffineClassifier.kind:
        return AffineClassifier(
            np.array(payload["weights"]).reshape(classes, dim), np.array(payload["bias"]), shape
        )
    if kind == TwoLayerTanhClassifier.kind:
        hidden = int(payload["hidden"])
        return TwoLayerTanhClassifier(
            np.array(payload["w1"]).reshape(hidden, dim),
            np.array(payload["b1"]),
            np.array(payload["w2"]).reshape(classes, hidden),
            np.array(payload["b2"]),
            shape,
        )
    if kind == RadialClassifier.kind:
        return RadialClassifier(
            np.array(payload["centers"]).reshape(classes, dim),
            np.array(payload["kappas"]),
            np.array(payload["bias"]),
            shape,
        )
    raise InvalidDimensionError(f"unknown model kind {kind!r}")


def model_from_json(text: str) -> Classifier:
    return model_from_dict(json.loads(text))


@dataclass(frozen=True)
class AttackSpec:
    """Attack mode plus the class label anchoring the margin.

    Untargeted: ``label`` is y0, the model's prediction on the reference
    input, and the attacker wants any other class on top. Targeted: ``label``
    is the adversarial target class y'.
    """

    mode: str
    label: int

    def __post_init__(self):
        if self.mode not in (UNTARGETED, TARGETED):
            raise InvalidDimensionError(f"unknown attack mode {self.mode!r}")

    @staticmethod
    def untargeted(model: Classifier, reference: np.ndarray) -> "AttackSpec":
        return AttackSpec(UNTARGETED, model.predict(reference))

    @staticmethod
    def targeted(model: Classifier, reference: np.ndarray, target_class: int) -> "AttackSpec":
        if target_class == model.predict(reference):
            raise InvalidDimensionError(
                "targeted attack is trivial: reference already predicted as target"
            )
        return AttackSpec(TARGETED, target_class)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "label": self.label}

    @staticmethod
    def from_dict(payload: dict) -> "AttackSpec":
        return AttackSpec(payload["mode"], int(payload["label"]))


def _runner_up(logits: np.ndarray, excluded: int) -> tuple[int, bool]:
    """Best class other than ``excluded``; ties break to the lowest index."""
    masked = logits.copy()
    masked[excluded] = -np.inf
    best = int(np.argmax(masked))  # argmax returns the first (lowest) maximizer
    tied = bool(np.sum(masked == masked[best]) > 1)
    return best, tied


def difference(model: Classifier, spec: AttackSpec, x: np.ndarray) -> float:
    """Margin S(x): positive exactly when x is adversarial."""
    logits = model.logits(x)
    best, _ = _runner_up(logits, spec.label)
    if spec.mode == UNTARGETED:
        return float(logits[best] - logits[spec.label])
    return float(logits[spec.label] - logits[best])


def sign(model: Classifier, spec: AttackSpec, x: np.ndarray) -> int:
    """+1 iff S(x) > 0, else -1 (an exact zero counts as non-adversarial)."""
    return 1 if difference(model, spec, x) > 0.0 else -1


def true_gradient(
    model: Classifier, spec: AttackSpec, x: np.ndarray
) -> tuple[np.ndarray, bool]:
    """Analytic gradient of S at x, whitebox verification only.

    Returns (gradient, tied). When the runner-up class is tied, the lowest
    class index wins and ``tied`` flags that the value is one generalized
    gradient among several.
    """
    logits = model.logits(x)
    best, tied = _runner_up(logits, spec.label)
    g_best = model.logit_gradient(best, x)
    g_anchor = model.logit_gradient(spec.label, x)
    grad = g_best - g_anchor if spec.mode == UNTARGETED else g_anchor - g_best
    return grad, tied


class MeteredOracle:
    """Label-only decision oracle with an exact, thread-safe query counter."""

    def __init__(self, budget: int | None = None):
        self._budget = budget
        self._count = 0
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        return self._count

    @property
    def budget(self) -> int | None:
        return self._budget

    def _charge(self) -> None:
        with self._lock:
            if self._budget is not None and self._count >= self._budget:
                raise BudgetExhaustedError(
                    f"query budget {self._budget} exhausted", self._count
                )
            self._count += 1

    def decide(self, x: np.ndarray) -> int:
        raise NotImplementedError


class LocalOracle(MeteredOracle):
    """In-process oracle over a built-in classifier.

    Every decision goes through the same single-input evaluation path the
    HTTP service uses, so local and remote runs see bit-identical signs.
    """

    def __init__(self, model: Classifier, spec: AttackSpec, budget: int | None = None):
        super().__init__(budget)
        self.model = model
        self.spec = spec

    def decide(self, x: np.ndarray) -> int:
        self._charge()
        return sign(self.model, self.spec, x)


def make_oracle(model: Classifier, spec: AttackSpec, budget: int | None = None) -> LocalOracle:
    return LocalOracle(model, spec, budget)


# ---------------------------------------------------------------------------
# Seeded model zoo, sized for desk scale (n up to 3*64*64, C up to 10).
# Weight scales below are part of the reproducibility contract.
# ---------------------------------------------------------------------------


def make_affine(
    seed: int, input_shape=(3, 16, 16), num_classes: int = 2, scale: float = 1.0
) -> AffineClassifier:
    rng = SeededRng(seed, (101,))
    dim = input_shape[0] * input_shape[1] * input_shape[2]
    w = rng.standard_normal((num_classes, dim)) * scale / np.sqrt(dim)
    b = rng.standard_normal(num_classes) * 0.1
    return AffineClassifier(w, b, input_shape)


def make_planted_affine(
    normal: np.ndarray, input_shape, offset: float = 0.0
) -> AffineClassifier:
    """Two-class affine model whose margin gradient is exactly ``normal``.

    S(x) = <normal, x> - offset, so the decision boundary is the hyperplane
    <normal, x> = offset. Used to plant gradients with known subspace energy.
    """
    w = np.stack([np.zeros_like(normal).reshape(-1), np.asarray(normal).reshape(-1)])
    b = np.array([0.0, -offset])
    return AffineClassifier(w, b, input_shape)


def make_two_layer_tanh(
    seed: int,
    input_shape=(3, 8, 8),
    hidden: int = 32,
    num_classes: int = 2,
    scale: float = 1.0,
) -> TwoLayerTanhClassifier:
    rng = SeededRng(seed, (102,))
    dim = input_shape[0] * input_shape[1] * input_shape[2]
    w1 = rng.standard_normal((hidden, dim)) * scale / np.sqrt(dim)
    b1 = rng.standard_normal(hidden) * 0.1
    w2 = rng.standard_normal((num_classes, hidden)) / np.sqrt(hidden)
    b2 = rng.standard_normal(num_classes) * 0.1
    return TwoLayerTanhClassifier(w1, b1, w2, b2, input_shape)


def make_lowfreq_tanh(
    seed: int,
    input_shape=(3, 16, 16),
    k: int = 4,
    hidden: int = 32,
    num_classes: int = 2,
) -> TwoLayerTanhClassifier:
    """Tanh model whose first-layer rows live in the k x k low-frequency
    DCT subspace of each channel, so margin gradients concentrate there."""
    rng = SeededRng(seed, (103,))
    c, h, w = input_shape
    rows = []
    for _ in range(hidden):
        img = np.zeros((c, h, w))
        for ch in range(c):
            coeffs = np.zeros((h, w))
            coeffs[:k, :k] = rng.standard_normal((k, k))
            img[ch] = transforms.idct2(coeffs)
        rows.append(img.reshape(-1))
    dim = c * h * w
    w1 = np.stack(rows) / np.sqrt(dim)
    b1 = rng.standard_normal(hidden) * 0.1
    w2 = rng.standard_normal((num_classes, hidden)) / np.sqrt(hidden)
    b2 = rng.standard_normal(num_classes) * 0.1
    return TwoLayerTanhClassifier(w1, b1, w2, b2, input_shape)


def make_radial(
    seed: int,
    input_shape=(3, 8, 8),
    num_classes: int = 3,
    kappa_spread: float = 0.5,
) -> RadialClassifier:
    rng = SeededRng(seed, (104,))
    dim = input_shape[0] * input_shape[1] * input_shape[2]
    centers = rng.standard_normal((num_classes, dim))
    kappas = 1.0 + kappa_spread * rng.generator.random(num_classes)
    bias = rng.standard_normal(num_classes) * 0.1
    return RadialClassifier(centers, kappas, bias, input_shape)
