"""Numerical verification suites: sphere-moment agreement, directional
sensitivity, and low-frequency concentration of smooth-model gradients.

Each suite returns a list of named checks with measured values, so the CLI
can print one pass/fail line per check and tests can assert on the same
results the user sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import theory
from .estimator import estimate_sensitivity
from .models import AttackSpec, make_lowfreq_tanh, true_gradient
from .projections import FreqLowPassProjection, IdentityProjection, ScaledBasisProjection
from .tensors import SeededRng, l2
from .transforms import spectrum_profile


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    expected: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured={self.measured:.6g} expected {self.expected}"


def mc_mean_abs_first_coord(m: int, samples: int, rng: SeededRng, chunk: int = 100_000) -> float:
    """Monte-Carlo E|v_1| on S^{m-1} by direct sphere sampling, chunked."""
    total = 0.0
    done = 0
    while done < samples:
        take = min(chunk, samples - done)
        x = rng.standard_normal((take, m))
        norms = np.linalg.norm(x, axis=1)
        total += float(np.sum(np.abs(x[:, 0]) / norms))
        done += take
    return total / samples


def beta_moment_suite(
    ms=(2, 10, 100), samples: int = 1_000_000, rel_tol: float = 0.01, seed: int = 2024
) -> list[CheckResult]:
    checks = []
    for i, m in enumerate(ms):
        closed = theory.beta_mean_abs_v1(m)
        mc = mc_mean_abs_first_coord(m, samples, SeededRng(seed, (m, i)))
        rel = abs(mc - closed) / closed
        checks.append(
            CheckResult(
                name=f"mean_abs_v1_m{m}",
                passed=rel <= rel_tol,
                measured=rel,
                expected=f"relative error <= {rel_tol}",
            )
        )
    # Stirling sandwich on the Beta-function normalizer.
    ok = True
    worst = 0.0
    for m in np.unique(np.geomspace(2, 10_000, 40).astype(int)):
        val = (m - 1) * theory.beta_half(int(m))
        lo = np.sqrt(2 * np.pi * (m - 1))
        if not lo <= val <= 1.26 * lo:
            ok = False
        worst = max(worst, abs(val / lo))
    checks.append(
        CheckResult(
            name="stirling_sandwich",
            passed=ok,
            measured=worst,
            expected="sqrt(2pi(m-1)) <= (m-1)B(1/2,(m-1)/2) <= 1.26 sqrt(2pi(m-1))",
        )
    )
    return checks


def make_aligned_anisotropic(
    grad: np.ndarray, m: int, out_shape, scale: float = 3.0
) -> ScaledBasisProjection:
    """Orthonormal m-frame whose first vector is the gradient direction,
    sampled ``scale`` times more strongly along it."""
    g = np.asarray(grad, dtype=np.float64).reshape(-1)
    n = g.size
    rng = SeededRng(7, (31,))
    frame = np.concatenate([g[None, :] / l2(g), rng.standard_normal((m - 1, n))])
    q, _ = np.linalg.qr(frame.T)
    rows = q.T[:m]
    # QR may flip the first vector's sign; realign with the gradient.
    if rows[0] @ g < 0:
        rows[0] = -rows[0]
    scales = np.ones(m)
    scales[0] = scale
    return ScaledBasisProjection(rows, scales, out_shape)


def sensitivity_suite(num_samples: int = 100_000, seed: int = 11) -> list[CheckResult]:
    checks = []
    shape = (3, 10, 10)
    model = make_lowfreq_tanh(seed, input_shape=shape, k=4, hidden=24)
    rng = SeededRng(seed, (1,))
    x_t = rng.standard_normal(model.input_dim) * 0.1
    spec = AttackSpec("untargeted", model.predict(x_t))
    grad, _ = true_gradient(model, spec, x_t)
    delta = l2(x_t) / model.input_dim + 1e-6

    for name, projection, window in (
        ("identity_isotropy", IdentityProjection(shape), (0.9, 1.1)),
        ("freq_lowpass_isotropy", FreqLowPassProjection(5, shape), (0.9, 1.1)),
        (
            "anisotropic_x3",
            make_aligned_anisotropic(grad, 300, shape, scale=3.0),
            (7.0, 11.0),
        ),
    ):
        rep = estimate_sensitivity(
            projection, model, spec, x_t, delta, num_samples, SeededRng(seed, (2, projection.m))
        )
        ratio = rep.alpha1_sq / rep.mean_orth
        checks.append(
            CheckResult(
                name=name,
                passed=window[0] <= ratio <= window[1],
                measured=ratio,
                expected=f"alpha1^2 / mean_orth in [{window[0]}, {window[1]}]",
            )
        )
    return checks


def spectrum_suite(seed: int = 5) -> list[CheckResult]:
    checks = []
    shape = (3, 16, 16)
    model = make_lowfreq_tanh(seed, input_shape=shape, k=4, hidden=32)
    rng = SeededRng(seed, (3,))
    grads = []
    for i in range(16):
        x = rng.standard_normal(model.input_dim) * 0.2
        spec = AttackSpec("untargeted", model.predict(x))
        g, _ = true_gradient(model, spec, x)
        grads.append(g.reshape(shape))
    profile = spectrum_profile(grads)
    decile = profile.shape[1] // 10
    low = float(profile[:, :decile].mean())
    high = float(profile[:, -decile:].mean())
    checks.append(
        CheckResult(
            name="lowfreq_concentration",
            passed=low > high,
            measured=low / max(high, 1e-300),
            expected="mean over first 10% of indices > mean over last 10%",
        )
    )

    noise = [rng.standard_normal(shape) for _ in range(200)]
    noise_profile = spectrum_profile(noise).mean(axis=0)
    bins = [b.mean() for b in np.array_split(noise_profile, 100)]
    ratio = float(max(bins) / min(bins))
    checks.append(
        CheckResult(
            name="white_noise_flatness",
            passed=ratio < 1.5,
            measured=ratio,
            expected="max/min of 100-bin means < 1.5",
        )
    )
    return checks


SUITES = {
    "beta": beta_moment_suite,
    "sensitivity": sensitivity_suite,
    "spectrum": spectrum_suite,
}


def run_suite(name: str, **kwargs) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(f"unknown verify suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](**kwargs)
