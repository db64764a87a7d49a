"""Block geometry, sensing matrices, and compression-ratio bookkeeping.

An image is tiled into non-overlapping BxBx3 blocks; each block is
flattened in raster order (rows, then columns, channels innermost) and
sensed by dense measurement matrices. Sensing runs as a stride-B
convolution, which must agree with the explicit per-block matrix-vector
product to floating-point accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class BlockGeometry:
    """Image/block dimensions. B must divide both H and W."""

    H: int
    W: int
    B: int

    def __post_init__(self):
        if self.B < 1 or self.H < 1 or self.W < 1:
            raise ValueError(f"geometry must be positive, got H={self.H} W={self.W} B={self.B}")
        if self.H % self.B or self.W % self.B:
            raise ValueError(
                f"block side {self.B} must divide image dims {self.H}x{self.W}"
            )

    @property
    def rows(self) -> int:
        return self.H // self.B

    @property
    def cols(self) -> int:
        return self.W // self.B

    @property
    def block_dim(self) -> int:
        return 3 * self.B * self.B


@dataclass
class SensingBank:
    """Trainable measurement matrices: base, shared full, optional baseline."""

    phi_base: Tensor
    phi_full: Tensor
    phi_baseline: Tensor | None = None
    geom: BlockGeometry = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n_b, d_b = self.phi_base.shape
        n_max, d_f = self.phi_full.shape
        if self.geom is not None and d_b != self.geom.block_dim:
            raise ValueError(f"phi_base width {d_b} != block dim {self.geom.block_dim}")
        if d_b != d_f:
            raise ValueError(f"matrix widths differ: {d_b} vs {d_f}")
        if n_b < 1 or n_max < 1:
            raise ValueError(f"need at least one row per matrix, got {n_b} and {n_max}")
        if n_b + n_max > d_b:
            raise ValueError(
                f"n_b + n_max = {n_b + n_max} exceeds block dimension {d_b} (full sampling)"
            )

    @property
    def n_b(self) -> int:
        return self.phi_base.shape[0]

    @property
    def n_max(self) -> int:
        return self.phi_full.shape[0]


def init_sensing_bank(geom: BlockGeometry, n_b: int, n_max: int,
                      rng: np.random.Generator) -> SensingBank:
    """Gaussian init, zero mean, variance 1/(3B^2); keeps measurements O(1)."""
    d = geom.block_dim
    std = 1.0 / np.sqrt(d)
    phi_b = Tensor(rng.normal(0.0, std, size=(n_b, d)), requires_grad=True)
    phi_f = Tensor(rng.normal(0.0, std, size=(n_max, d)), requires_grad=True)
    return SensingBank(phi_base=phi_b, phi_full=phi_f, geom=geom)


def split_blocks(image: np.ndarray, geom: BlockGeometry) -> np.ndarray:
    """[H,W,3] -> [rows, cols, 3B^2] with the canonical vectorization order."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (geom.H, geom.W, 3):
        raise ValueError(f"image shape {image.shape} does not match geometry "
                         f"({geom.H}, {geom.W}, 3)")
    b = geom.B
    out = image.reshape(geom.rows, b, geom.cols, b, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(out).reshape(geom.rows, geom.cols, geom.block_dim)


def merge_blocks(grid: np.ndarray, geom: BlockGeometry) -> np.ndarray:
    """Inverse of :func:`split_blocks`; exact bit-for-bit round trip."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape != (geom.rows, geom.cols, geom.block_dim):
        raise ValueError(f"grid shape {grid.shape} does not match geometry "
                         f"({geom.rows}, {geom.cols}, {geom.block_dim})")
    b = geom.B
    out = grid.reshape(geom.rows, geom.cols, b, b, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(out).reshape(geom.H, geom.W, 3)


def matrix_as_kernel(matrix: Tensor, geom: BlockGeometry) -> Tensor:
    """View an [n, 3B^2] measurement matrix as a [B, B, 3, n] conv kernel.

    Differentiable, so the matrix stays the single trainable object no
    matter which sensing path runs.
    """
    n = matrix.shape[0]
    return T.reshape(T.transpose(matrix, (1, 0)), (geom.B, geom.B, 3, n))


def sense_grid(images: Tensor, matrix: Tensor, geom: BlockGeometry) -> Tensor:
    """Batched sensing: [N,H,W,3] -> [N, rows, cols, n] via stride-B conv."""
    kernel = matrix_as_kernel(matrix, geom)
    return T.conv2d(images, kernel, stride=geom.B)


def _sense_single(image, matrix: Tensor, geom: BlockGeometry) -> Tensor:
    img = image if isinstance(image, Tensor) else Tensor(image)
    if img.shape != (geom.H, geom.W, 3):
        raise ValueError(f"image shape {img.shape} does not match geometry "
                         f"({geom.H}, {geom.W}, 3)")
    out = sense_grid(T.reshape(img, (1, geom.H, geom.W, 3)), matrix, geom)
    return T.reshape(out, (geom.rows, geom.cols, matrix.shape[0]))


def sense_base(image, bank: SensingBank, geom: BlockGeometry) -> Tensor:
    """First-stage measurements: [rows, cols, n_b]."""
    return _sense_single(image, bank.phi_base, geom)


def sense_full(image, bank: SensingBank, geom: BlockGeometry) -> Tensor:
    """Sensing with every row of the shared full matrix: [rows, cols, n_max]."""
    return _sense_single(image, bank.phi_full, geom)


def select_rows(phi_full, mask) -> np.ndarray:
    """Rows of the full matrix where mask==1, order preserved.

    Test-path construction of the per-block measurement matrix; an
    all-zero mask yields a 0-row matrix.
    """
    mat = phi_full.data if isinstance(phi_full, Tensor) else np.asarray(phi_full)
    mask = np.asarray(mask)
    if mask.shape != (mat.shape[0],):
        raise ValueError(f"mask shape {mask.shape} does not match {mat.shape[0]} rows")
    return mat[mask > 0.5].copy()


def average_ratio(masks, n_b: int, geom: BlockGeometry) -> float:
    """Realized average compression ratio over a dataset of block masks.

    masks: array-like [..., n_max]; every leading cell is one block.
    Returns (n_b + mean popcount) / 3B^2.
    """
    arr = np.asarray(masks, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("average_ratio: empty mask set")
    n_max = arr.shape[-1]
    blocks = arr.reshape(-1, n_max)
    n_avg = n_b + float(blocks.sum(axis=1).mean())
    return n_avg / geom.block_dim
