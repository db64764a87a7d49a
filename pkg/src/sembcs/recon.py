"""Initial reconstruction with generated per-block weights, deep refinement.

The initial stage inverts the two-stage measurements linearly: a learned
matrix pair handles the base and second-stage paths, and a small
weight-generation network produces a per-block mixing matrix so one
shared second-stage matrix can serve every mask. The refinement network
rearranges the block grid back to pixel space with depth-to-space stages
interleaved with convolutions and residual blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import BlockGeometry
from .layers import Conv, ResBlock
from .tensor import Tensor


@dataclass
class InitBank:
    """Linear initial-reconstruction matrices (base and shared full)."""

    theta_base: Tensor    # [3B^2, n_b]
    theta_shared: Tensor  # [3B^2, n_max]

    @property
    def n_b(self) -> int:
        return self.theta_base.shape[1]

    @property
    def n_max(self) -> int:
        return self.theta_shared.shape[1]


def init_init_bank(geom: BlockGeometry, n_b: int, n_max: int,
                   rng: np.random.Generator) -> InitBank:
    d = geom.block_dim
    std = 1.0 / np.sqrt(n_b + n_max)
    return InitBank(
        theta_base=Tensor(rng.normal(0.0, std, size=(d, n_b)), requires_grad=True),
        theta_shared=Tensor(rng.normal(0.0, std, size=(d, n_max)), requires_grad=True),
    )


class WeightGenNet:
    """Maps policy features to one n_max x n_max mixing matrix per block."""

    def __init__(self, feat_width: int, n_max: int, rng: np.random.Generator):
        self.feat_width = feat_width
        self.n_max = n_max
        self.conv1 = Conv(3, feat_width, feat_width, rng)
        self.conv2 = Conv(3, feat_width, feat_width, rng)
        # final projection emits the flattened matrices; no nonlinearity
        self.proj = Conv(1, feat_width, n_max * n_max, rng)

    def forward(self, features: Tensor) -> Tensor:
        """[N, rows, cols, feat_width] -> [N, rows, cols, n_max, n_max]."""
        h = T.relu(self.conv1(features))
        h = T.relu(self.conv2(h))
        w = self.proj(h)
        n, rows, cols = w.shape[0], w.shape[1], w.shape[2]
        return T.reshape(w, (n, rows, cols, self.n_max, self.n_max))

    def named_params(self, prefix: str = "anet") -> dict[str, Tensor]:
        return {**self.conv1.named_params(f"{prefix}.conv1"),
                **self.conv2.named_params(f"{prefix}.conv2"),
                **self.proj.named_params(f"{prefix}.proj")}


def anet_forward(features, net: WeightGenNet) -> Tensor:
    """Single-image wrapper: [rows, cols, feat_width] -> [rows, cols, n, n]."""
    f = features if isinstance(features, Tensor) else Tensor(features)
    if f.ndim != 3 or f.shape[2] != net.feat_width:
        raise ValueError(f"feature shape {f.shape} does not match width {net.feat_width}")
    rows, cols = f.shape[0], f.shape[1]
    w = net.forward(T.reshape(f, (1, rows, cols, net.feat_width)))
    return T.reshape(w, (rows, cols, net.n_max, net.n_max))


def recon_kernel(bank: InitBank) -> Tensor:
    """1x1 conv kernel holding [theta_base, theta_shared], bias-free."""
    cin = bank.n_b + bank.n_max
    cout = bank.theta_base.shape[0]
    stacked = T.concat(
        [T.transpose(bank.theta_base, (1, 0)), T.transpose(bank.theta_shared, (1, 0))],
        axis=0,
    )
    return T.reshape(stacked, (1, 1, cin, cout))


def initial_reconstruct_grid(c: Tensor, e: Tensor, w: Tensor, bank: InitBank) -> Tensor:
    """Batched: per block, xhat = theta_base c + theta_shared (w e)."""
    f = T.block_matvec(w, e)
    cat = T.concat([c, f], axis=3)
    return T.conv2d(cat, recon_kernel(bank), stride=1)


def initial_reconstruct(c, e, w, bank: InitBank) -> Tensor:
    """Single-image wrapper over [rows, cols, ...] grids -> [rows, cols, 3B^2]."""
    c = c if isinstance(c, Tensor) else Tensor(c)
    e = e if isinstance(e, Tensor) else Tensor(e)
    w = w if isinstance(w, Tensor) else Tensor(w)
    if c.ndim != 3 or e.ndim != 3 or w.ndim != 4:
        raise ValueError(f"expected grid-shaped inputs, got {c.shape}, {e.shape}, {w.shape}")
    rows, cols = c.shape[0], c.shape[1]
    out = initial_reconstruct_grid(
        T.reshape(c, (1, *c.shape)), T.reshape(e, (1, *e.shape)),
        T.reshape(w, (1, *w.shape)), bank,
    )
    return T.reshape(out, (rows, cols, out.shape[3]))


def dnet_stage_plan(b: int) -> list[int]:
    """Depth-to-space factors per refinement stage; product must equal B."""
    if b >= 16 and b % 8 == 0:
        return [b // 8, 2, 4]
    if b == 8:
        return [4, 2]
    if b == 4:
        return [2, 2]
    if b == 2:
        return [2]
    raise ValueError(f"no refinement-stage plan for block side {b}")


class DeepReconNet:
    """Refinement pipeline: per stage, depth-to-space, conv, resblock, conv.

    The bridge conv after each non-final stage restores exactly the
    channel count the next depth-to-space needs; the final stage ends in
    a 3-channel conv. All convs are 3x3 stride 1 with bias.
    """

    def __init__(self, geom: BlockGeometry, widths: list[int], rng: np.random.Generator,
                 factors: list[int] | None = None):
        self.geom = geom
        self.factors = list(factors) if factors is not None else dnet_stage_plan(geom.B)
        if math.prod(self.factors) != geom.B:
            raise ValueError(
                f"stage factors {self.factors} do not multiply to block side {geom.B}"
            )
        if len(widths) != len(self.factors):
            raise ValueError(f"need one width per stage: {widths} vs {self.factors}")
        self.widths = list(widths)

        self.stages = []
        cin = geom.block_dim
        for i, (f, w) in enumerate(zip(self.factors, self.widths)):
            cin //= f * f
            rest = math.prod(self.factors[i + 1:])
            bridge = 3 * rest * rest if rest > 1 else 3
            conv_in = Conv(3, cin, w, rng)
            block = ResBlock(3, w, rng)
            conv_out = Conv(3, w, bridge, rng)
            self.stages.append((f, conv_in, block, conv_out))
            cin = bridge

    def forward(self, grid: Tensor) -> Tensor:
        """[N, rows, cols, 3B^2] -> [N, H, W, 3]."""
        if grid.ndim != 4 or grid.shape[3] != self.geom.block_dim:
            raise ValueError(f"grid shape {grid.shape} does not match geometry "
                             f"(*, {self.geom.rows}, {self.geom.cols}, {self.geom.block_dim})")
        h = grid
        for f, conv_in, block, conv_out in self.stages:
            h = T.depth_to_space(h, f)
            h = conv_in(h)
            h = block(h)
            h = conv_out(h)
        return h

    def named_params(self, prefix: str = "dnet") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (_, conv_in, block, conv_out) in enumerate(self.stages):
            out.update(conv_in.named_params(f"{prefix}.s{i}.conv_in"))
            out.update(block.named_params(f"{prefix}.s{i}.res"))
            out.update(conv_out.named_params(f"{prefix}.s{i}.conv_out"))
        return out


def dnet_forward(grid, net: DeepReconNet) -> Tensor:
    """Single-image wrapper: [rows, cols, 3B^2] -> [H, W, 3]."""
    g = grid if isinstance(grid, Tensor) else Tensor(grid)
    if g.ndim != 3:
        raise ValueError(f"expected [rows, cols, 3B^2] grid, got {g.shape}")
    out = net.forward(T.reshape(g, (1, *g.shape)))
    return T.reshape(out, (net.geom.H, net.geom.W, 3))


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    if peak <= 0:
        raise ValueError(f"psnr: peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
