"""Linear image-domain transforms backing the projection subspaces.

Conventions, fixed once for the whole toolkit:

* DCT is the orthonormal (norm="ortho") 2D DCT-II, DC coefficient at (0, 0).
  Orthonormality gives exact Parseval identities, which the invariant tests
  lean on.
* Bilinear up-scaling uses align-corners: source coordinate of output row i is
  i * (s - 1) / (H - 1), so corners anchor exactly and constants are preserved.
* The low-to-high frequency order used by spectrum profiles is the standard
  JPEG zigzag, generalized to rectangular planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import InvalidDimensionError, RankError, ShapeMismatchError
from .tensors import ImageTensor


def dct2(plane: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DCT-II of one channel plane."""
    p = np.asarray(plane, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise InvalidDimensionError(f"dct2 expects a nonempty 2D plane, got shape {p.shape}")
    return scipy.fft.dctn(p, type=2, norm="ortho")


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal 2D DCT-III)."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise InvalidDimensionError(f"idct2 expects a nonempty 2D plane, got shape {c.shape}")
    return scipy.fft.idctn(c, type=2, norm="ortho")


def lowpass_filter(coeffs: np.ndarray, k: int) -> np.ndarray:
    """Zero every DCT coefficient outside the upper-left k x k corner."""
    c = np.asarray(coeffs, dtype=np.float64)
    h, w = c.shape
    if not 1 <= k <= min(h, w):
        raise InvalidDimensionError(f"lowpass k={k} out of range for {h}x{w} plane")
    out = np.zeros_like(c)
    out[:k, :k] = c[:k, :k]
    return out


def bilinear_axis_matrix(src: int, dst: int) -> np.ndarray:
    """1D align-corners interpolation matrix of shape (dst, src)."""
    if src < 1 or dst < src:
        raise InvalidDimensionError(f"cannot upscale axis from {src} to {dst}")
    mat = np.zeros((dst, src))
    if src == 1:
        mat[:, 0] = 1.0
        return mat
    if dst == 1:
        mat[0, 0] = 1.0
        return mat
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    lo = np.minimum(np.floor(pos).astype(int), src - 2)
    frac = pos - lo
    mat[np.arange(dst), lo] = 1.0 - frac
    mat[np.arange(dst), lo + 1] += frac
    return mat


def bilinear_upscale(small: ImageTensor, target_hw: tuple[int, int]) -> ImageTensor:
    """Upscale a (C, s, s) image to (C, H, W) with align-corners bilinear."""
    img = np.asarray(small, dtype=np.float64)
    if img.ndim != 3:
        raise InvalidDimensionError(f"expected (C, s, s) image, got shape {img.shape}")
    _, sh, sw = img.shape
    new_h, new_w = target_hw
    if new_h < sh or new_w < sw:
        raise InvalidDimensionError(
            f"target {target_hw} smaller than source ({sh}, {sw}); use avgpool_downscale"
        )
    mh = bilinear_axis_matrix(sh, new_h)
    mw = bilinear_axis_matrix(sw, new_w)
    return np.einsum("ij,cjk,lk->cil", mh, img, mw)


def bilinear_plane_matrix(s: int, target_hw: tuple[int, int]) -> np.ndarray:
    """The upscale map for one channel as a dense (H*W, s*s) matrix."""
    mh = bilinear_axis_matrix(s, target_hw[0])
    mw = bilinear_axis_matrix(s, target_hw[1])
    return np.kron(mh, mw)


def avgpool_downscale(img: ImageTensor, factor: int) -> ImageTensor:
    """Average-pool each factor x factor block of every channel."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidDimensionError(f"expected (C, H, W) image, got shape {arr.shape}")
    c, h, w = arr.shape
    if factor < 1:
        raise InvalidDimensionError(f"pool factor {factor} must be >= 1")
    if h % factor or w % factor:
        raise ShapeMismatchError(f"({h}, {w}) not divisible by pool factor {factor}")
    return arr.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


@dataclass
class PcaBasis:
    """Top-k principal directions of a sample cloud.

    ``components`` has orthonormal rows; ``explained_energy`` holds the
    matching covariance eigenvalues, sorted non-increasing. Component signs
    are canonicalized so each row's largest-magnitude entry is positive.
    """

    components: np.ndarray
    explained_energy: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]


# Above this input dimension the n x n covariance no longer fits desk scale;
# the Gram (sample x sample) eigenproblem gives the same leading components.
_PCA_COVARIANCE_MAX_DIM = 4096


def pca_fit(samples: list[ImageTensor], k: int) -> PcaBasis:
    """Fit the top-k principal components of mean-centered samples."""
    if k < 1:
        raise InvalidDimensionError(f"k={k} must be >= 1")
    if len(samples) < k:
        raise RankError(f"need at least k={k} samples, got {len(samples)}", len(samples))
    x = np.stack([np.asarray(s, dtype=np.float64).reshape(-1) for s in samples])
    n_samples, dim = x.shape
    if k > dim:
        raise RankError(f"k={k} exceeds input dimension {dim}", dim)
    centered = x - x.mean(axis=0)

    if dim <= _PCA_COVARIANCE_MAX_DIM:
        cov = centered.T @ centered / n_samples
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        energy = eigvals[order]
        comps = eigvecs[:, order].T
    else:
        gram = centered @ centered.T / n_samples
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1]
        energy = eigvals[order]
        comps = np.zeros((len(order), dim))
        for row, idx in enumerate(order):
            if eigvals[idx] > 0:
                v = centered.T @ eigvecs[:, idx]
                norm = np.linalg.norm(v)
                if norm > 0:
                    comps[row] = v / norm

    energy = np.maximum(energy, 0.0)
    tol = max(energy[0], 1.0) * 1e-12 if energy.size else 0.0
    rank = int(np.sum(energy > tol))
    if k > rank:
        raise RankError(f"k={k} exceeds sample rank {rank}", rank)
    comps = comps[:k]
    energy = energy[:k]
    # Canonical sign: largest-magnitude entry of each component positive.
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaBasis(components=comps, explained_energy=energy)


def zigzag_indices(h: int, w: int) -> np.ndarray:
    """(i, j) pairs of an h x w plane in JPEG zigzag order, low to high frequency."""
    idx = []
    for d in range(h + w - 1):
        if d % 2:  # odd diagonals run top-right to bottom-left
            i_start = max(0, d - w + 1)
            for i in range(i_start, min(d, h - 1) + 1):
                idx.append((i, d - i))
        else:
            j_start = max(0, d - h + 1)
            for j in range(j_start, min(d, w - 1) + 1):
                idx.append((d - j, j))
    return np.array(idx, dtype=np.intp)


def spectrum_profile(gradients: list[ImageTensor], window: int | None = None) -> np.ndarray:
    """Per-channel mean absolute DCT coefficient, zigzag ordered.

    Returns an array of shape (C, H*W) running low to high frequency. With
    ``window`` set, applies a centered moving average of that length (simple
    rectangular window, edges normalized by actual overlap).
    """
    if not gradients:
        raise InvalidDimensionError("spectrum_profile needs at least one gradient")
    shape = np.asarray(gradients[0]).shape
    if len(shape) != 3:
        raise InvalidDimensionError(f"expected (C, H, W) gradients, got shape {shape}")
    c, h, w = shape
    acc = np.zeros((c, h, w))
    for g in gradients:
        arr = np.asarray(g, dtype=np.float64)
        if arr.shape != shape:
            raise ShapeMismatchError(f"gradient shape {arr.shape} != {shape}")
        for ch in range(c):
            acc[ch] += np.abs(dct2(arr[ch]))
    acc /= len(gradients)
    zz = zigzag_indices(h, w)
    profile = acc[:, zz[:, 0], zz[:, 1]]
    if window is not None and window > 1:
        kernel = np.ones(window)
        overlap = np.convolve(np.ones(profile.shape[1]), kernel, mode="same")
        profile = np.stack(
            [np.convolve(row, kernel, mode="same") / overlap for row in profile]
        )
    return profile
