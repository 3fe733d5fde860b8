"""Deterministic numerical primitives: image arrays, norms, sphere sampling,
orthogonal projection onto spans, and the seeded RNG used everywhere.

Images are float64 numpy arrays of shape (channels, height, width), flattened
row-major (C order) whenever a flat vector is needed. All randomness flows
through :class:`SeededRng`, a Philox counter-based generator, so identical
seeds give identical sample streams on every platform.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVectorError, InvalidDimensionError, ShapeMismatchError

ImageTensor = np.ndarray  # (C, H, W) float64
LatentVector = np.ndarray  # (m,) float64


def as_image(data, shape: tuple[int, int, int]) -> ImageTensor:
    """Coerce flat or shaped data to a finite float64 (C, H, W) array."""
    arr = np.asarray(data, dtype=np.float64)
    c, h, w = shape
    if any(d < 1 for d in shape):
        raise InvalidDimensionError(f"invalid image shape {shape}")
    if arr.size != c * h * w:
        raise ShapeMismatchError(f"data of size {arr.size} does not fill shape {shape}")
    arr = arr.reshape(shape)
    ensure_finite(arr)
    return arr


def ensure_finite(arr: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains NaN or Inf")


class SeededRng:
    """Philox-backed generator with deterministic child-stream derivation.

    The stream is a pure function of ``(seed, path)``; ``child(i)`` derives an
    independent stream by extending the path, which is how parallel consumers
    split streams without coordination.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([self.seed, *self.path]))
        )

    def child(self, *path: int) -> "SeededRng":
        return SeededRng(self.seed, self.path + tuple(path))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)


def sample_unit_sphere(m: int, rng: SeededRng) -> LatentVector:
    """Draw one point uniformly from the unit sphere in R^m.

    Normalized i.i.d. standard normals; rotation invariance is exactly the
    property the downstream estimates rely on.
    """
    return sample_unit_spheres(1, m, rng)[0]


def sample_unit_spheres(count: int, m: int, rng: SeededRng) -> np.ndarray:
    """Draw ``count`` independent uniform points on S^{m-1}, one per row."""
    if m < 1:
        raise InvalidDimensionError(f"sphere dimension m={m} must be >= 1")
    if count < 0:
        raise InvalidDimensionError(f"count={count} must be >= 0")
    out = rng.standard_normal((count, m))
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    # A zero draw has probability 0 but would poison the normalization.
    bad = norms[:, 0] == 0.0
    while np.any(bad):
        out[bad] = rng.standard_normal((int(bad.sum()), m))
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        bad = norms[:, 0] == 0.0
    out /= norms
    return out


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """cos of the angle between a and b; both must be nonzero."""
    av = np.asarray(a, dtype=np.float64).reshape(-1)
    bv = np.asarray(b, dtype=np.float64).reshape(-1)
    if av.shape != bv.shape:
        raise ShapeMismatchError(f"vector sizes differ: {av.size} vs {bv.size}")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero vector is undefined")
    c = float(np.dot(av, bv) / (na * nb))
    return min(1.0, max(-1.0, c))


def project_onto_span(v: np.ndarray, basis: np.ndarray, *, check: bool = True) -> np.ndarray:
    """Orthogonal projection of v onto span(basis rows).

    ``basis`` is (k, n) with orthonormal rows. With orthonormal rows the
    projection is basis^T (basis v), no Gram inverse needed.
    """
    vv = np.asarray(v, dtype=np.float64).reshape(-1)
    bmat = np.asarray(basis, dtype=np.float64)
    if bmat.ndim != 2 or bmat.shape[1] != vv.size:
        raise ShapeMismatchError(
            f"basis shape {bmat.shape} incompatible with vector of size {vv.size}"
        )
    if check and not basis_is_orthonormal(bmat):
        raise DegenerateVectorError("basis rows are not orthonormal within 1e-10")
    return bmat.T @ (bmat @ vv)


def basis_is_orthonormal(basis: np.ndarray, tol: float = 1e-10) -> bool:
    bmat = np.asarray(basis, dtype=np.float64)
    gram = bmat @ bmat.T
    return bool(np.max(np.abs(gram - np.eye(bmat.shape[0]))) <= tol)


def mse(a: ImageTensor, b: ImageTensor) -> float:
    """Mean squared error (1/n)*||a-b||_2^2 between equal-shape arrays."""
    aa = np.asarray(a, dtype=np.float64)
    bb = np.asarray(b, dtype=np.float64)
    if aa.shape != bb.shape:
        raise ShapeMismatchError(f"shape mismatch: {aa.shape} vs {bb.shape}")
    diff = (aa - bb).reshape(-1)
    return float(np.dot(diff, diff) / diff.size)


def l2(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64).reshape(-1)))
