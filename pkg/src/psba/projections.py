"""Projection family mapping low-dimensional latent samples into image space.

Every projection here is linear with a full-rank image, so its image is an
m-dimensional subspace V of R^n. ``apply`` stays linear (apply(0) = 0);
normalization to a fixed step length happens in ``perturbation`` only, so the
subspace analysis in :mod:`psba.theory` applies verbatim.

Spatial scales use align-corners bilinear up-scaling. Two spatial scales nest
(V_s inside V_s') exactly when (s - 1) divides (s' - 1); frequency scales nest
for any k < k'. Schedule constructors validate monotone latent dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transforms
from .errors import DegenerateVectorError, InvalidDimensionError, ShapeMismatchError
from .tensors import l2


class Projection:
    """Linear map from latent space R^m to image space R^n."""

    kind: str
    out_shape: tuple[int, int, int]
    m: int

    @property
    def n(self) -> int:
        c, h, w = self.out_shape
        return c * h * w

    def apply_batch(self, latents: np.ndarray) -> np.ndarray:
        """Map (B, m) latent rows to (B, n) flat images."""
        raise NotImplementedError

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        if u.size != self.m:
            raise ShapeMismatchError(f"latent of size {u.size} does not match m={self.m}")
        return self.apply_batch(u[None, :])[0]

    def perturbation(self, u: np.ndarray, delta: float) -> np.ndarray:
        """delta * apply(u) / ||apply(u)||, the normalized probe direction."""
        img = self.apply(u)
        norm = l2(img)
        if norm == 0.0:
            raise DegenerateVectorError("projection of latent sample is zero; resample")
        return (delta / norm) * img

    def perturbation_batch(self, latents: np.ndarray, delta: float) -> np.ndarray:
        imgs = self.apply_batch(np.asarray(latents, dtype=np.float64))
        norms = np.linalg.norm(imgs, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise DegenerateVectorError("projection of latent sample is zero; resample")
        return delta * imgs / norms

    def subspace_basis(self) -> np.ndarray:
        """Orthonormal rows spanning image(apply); shape (m, n)."""
        raise NotImplementedError

    def projected_gradient_fraction(self, g: np.ndarray) -> float:
        """||proj_V g|| / ||g||, the best cosine any estimate in V can reach."""
        gv = np.asarray(g, dtype=np.float64).reshape(-1)
        norm = l2(gv)
        if norm == 0.0:
            raise DegenerateVectorError("zero gradient has no projected fraction")
        basis = self.subspace_basis()
        frac = l2(basis @ gv) / norm
        return min(1.0, frac)

    def to_dict(self) -> dict:
        raise NotImplementedError


class IdentityProjection(Projection):
    kind = "identity"

    def __init__(self, out_shape):
        self.out_shape = tuple(out_shape)
        self.m = self.n

    def apply_batch(self, latents):
        return np.asarray(latents, dtype=np.float64)

    def subspace_basis(self):
        return np.eye(self.n)

    def projected_gradient_fraction(self, g):
        if l2(g) == 0.0:
            raise DegenerateVectorError("zero gradient has no projected fraction")
        return 1.0

    def to_dict(self):
        return {"kind": self.kind, "out_shape": list(self.out_shape)}


class SpatialProjection(Projection):
    """Latents are per-channel s x s grids, bilinearly up-scaled per channel."""

    kind = "spatial"

    def __init__(self, side: int, out_shape):
        self.out_shape = tuple(out_shape)
        c, h, w = self.out_shape
        if not 1 <= side <= min(h, w):
            raise InvalidDimensionError(f"spatial side {side} out of range for {h}x{w}")
        self.side = side
        self.m = c * side * side
        self._plane = transforms.bilinear_plane_matrix(side, (h, w))  # (H*W, s*s)
        self._q = np.linalg.qr(self._plane)[0]  # orthonormal columns, same span

    def apply_batch(self, latents):
        lat = np.asarray(latents, dtype=np.float64)
        c, h, w = self.out_shape
        grids = lat.reshape(lat.shape[0], c, self.side * self.side)
        out = np.einsum("nk,bck->bcn", self._plane, grids)
        return out.reshape(lat.shape[0], self.n)

    def subspace_basis(self):
        c = self.out_shape[0]
        k = self.side * self.side
        hw = self._q.shape[0]
        basis = np.zeros((self.m, self.n))
        for ch in range(c):
            basis[ch * k : (ch + 1) * k, ch * hw : (ch + 1) * hw] = self._q.T
        return basis

    def projected_gradient_fraction(self, g):
        gv = np.asarray(g, dtype=np.float64).reshape(self.out_shape[0], -1)
        norm = l2(gv)
        if norm == 0.0:
            raise DegenerateVectorError("zero gradient has no projected fraction")
        proj_sq = float(np.sum((gv @ self._q) ** 2))
        return min(1.0, np.sqrt(proj_sq) / norm)

    def to_dict(self):
        return {"kind": self.kind, "out_shape": list(self.out_shape), "side": self.side}


class FreqLowPassProjection(Projection):
    """Latents are per-channel k x k low-frequency DCT coefficient blocks."""

    kind = "freq_lowpass"

    def __init__(self, k: int, out_shape):
        self.out_shape = tuple(out_shape)
        c, h, w = self.out_shape
        if not 1 <= k <= min(h, w):
            raise InvalidDimensionError(f"lowpass k={k} out of range for {h}x{w}")
        self.k = k
        self.m = c * k * k

    def apply_batch(self, latents):
        lat = np.asarray(latents, dtype=np.float64)
        b = lat.shape[0]
        c, h, w = self.out_shape
        coeffs = np.zeros((b, c, h, w))
        coeffs[:, :, : self.k, : self.k] = lat.reshape(b, c, self.k, self.k)
        import scipy.fft

        imgs = scipy.fft.idctn(coeffs, type=2, norm="ortho", axes=(-2, -1))
        return imgs.reshape(b, self.n)

    def subspace_basis(self):
        c, h, w = self.out_shape
        eye = np.eye(self.m)
        return self.apply_batch(eye)  # DCT basis images are already orthonormal

    def projected_gradient_fraction(self, g):
        gv = np.asarray(g, dtype=np.float64).reshape(self.out_shape)
        norm = l2(gv)
        if norm == 0.0:
            raise DegenerateVectorError("zero gradient has no projected fraction")
        corner_sq = 0.0
        for ch in range(self.out_shape[0]):
            coeffs = transforms.dct2(gv[ch])
            corner_sq += float(np.sum(coeffs[: self.k, : self.k] ** 2))
        return min(1.0, np.sqrt(corner_sq) / norm)

    def to_dict(self):
        return {"kind": self.kind, "out_shape": list(self.out_shape), "k": self.k}


class SpectrumTopKProjection(Projection):
    """Latent coordinates weight the top-k principal components."""

    kind = "spectrum_topk"

    def __init__(self, basis: transforms.PcaBasis, out_shape):
        self.out_shape = tuple(out_shape)
        comps = np.asarray(basis.components, dtype=np.float64)
        if comps.shape[1] != self.n:
            raise ShapeMismatchError(
                f"components of dim {comps.shape[1]} do not match output dim {self.n}"
            )
        self.basis = basis
        self.m = comps.shape[0]

    def apply_batch(self, latents):
        return np.asarray(latents, dtype=np.float64) @ self.basis.components

    def subspace_basis(self):
        return self.basis.components.copy()

    def to_dict(self):
        return {
            "kind": self.kind,
            "out_shape": list(self.out_shape),
            "components": self.basis.components.tolist(),
            "explained_energy": self.basis.explained_energy.tolist(),
        }


class ScaledBasisProjection(Projection):
    """Orthonormal basis with per-direction scale factors.

    A deliberately anisotropic linear projection: direction i of the latent
    space maps to scales[i] * basis_row_i. Used by the sensitivity
    verification experiments; not part of the serialized config kinds.
    """

    kind = "scaled_basis"

    def __init__(self, basis_rows: np.ndarray, scales: np.ndarray, out_shape):
        self.out_shape = tuple(out_shape)
        rows = np.asarray(basis_rows, dtype=np.float64)
        sc = np.asarray(scales, dtype=np.float64)
        if rows.shape[0] != sc.size:
            raise ShapeMismatchError("one scale per basis row required")
        if rows.shape[1] != self.n:
            raise ShapeMismatchError("basis rows do not match output dim")
        if np.any(sc <= 0):
            raise InvalidDimensionError("scales must be positive")
        self._rows = rows
        self.scales = sc
        self.m = rows.shape[0]

    def apply_batch(self, latents):
        lat = np.asarray(latents, dtype=np.float64)
        return (lat * self.scales[None, :]) @ self._rows

    def subspace_basis(self):
        return self._rows.copy()

    def to_dict(self):
        raise NotImplementedError("scaled-basis projections are test constructions")


def projection_from_dict(payload: dict) -> Projection:
    kind = payload["kind"]
    shape = tuple(payload["out_shape"])
    if kind == IdentityProjection.kind:
        return IdentityProjection(shape)
    if kind == SpatialProjection.kind:
        return SpatialProjection(int(payload["side"]), shape)
    if kind == FreqLowPassProjection.kind:
        return FreqLowPassProjection(int(payload["k"]), shape)
    if kind == SpectrumTopKProjection.kind:
        basis = transforms.PcaBasis(
            components=np.array(payload["components"], dtype=np.float64),
            explained_energy=np.array(payload["explained_energy"], dtype=np.float64),
        )
        return SpectrumTopKProjection(basis, shape)
    raise InvalidDimensionError(f"unknown projection kind {kind!r}")


@dataclass
class ScaleSchedule:
    """Ordered projections with strictly increasing latent dimension."""

    entries: list[tuple[int, Projection]]  # (scale label, projection)

    def __post_init__(self):
        if not self.entries:
            raise InvalidDimensionError("schedule must contain at least one scale")
        dims = [p.m for _, p in self.entries]
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise InvalidDimensionError(f"latent dims must strictly increase, got {dims}")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> list[int]:
        return [label for label, _ in self.entries]


def spatial_schedule(sides: list[int], out_shape) -> ScaleSchedule:
    return ScaleSchedule([(s, SpatialProjection(s, out_shape)) for s in sides])


def freq_schedule(ks: list[int], out_shape) -> ScaleSchedule:
    return ScaleSchedule([(k, FreqLowPassProjection(k, out_shape)) for k in ks])


def spectrum_schedule(basis: transforms.PcaBasis, ks: list[int], out_shape) -> ScaleSchedule:
    entries = []
    for k in ks:
        truncated = transforms.PcaBasis(
            components=basis.components[:k], explained_energy=basis.explained_energy[:k]
        )
        entries.append((k, SpectrumTopKProjection(truncated, out_shape)))
    return ScaleSchedule(entries)


# Spec-facing aliases for the operation names.
def apply(p: Projection, u: np.ndarray) -> np.ndarray:
    return p.apply(u)


def perturbation(p: Projection, u: np.ndarray, delta: float) -> np.ndarray:
    return p.perturbation(u, delta)


def subspace_basis(p: Projection) -> np.ndarray:
    return p.subspace_basis()


def projected_gradient_fraction(p: Projection, g: np.ndarray) -> float:
    return p.projected_gradient_fraction(g)
