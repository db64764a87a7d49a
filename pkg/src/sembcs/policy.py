"""Policy network: semantic scores from base measurements, hard row masks.

The network maps the [rows, cols, n_b] base-measurement grid to soft
scores G in (0,1) per candidate measurement row; thresholding at 0.5
yields the 0-1 mask M. The threshold is not differentiable, so the
backward pass uses the straight-through rule: gradients reaching M are
handed to G unchanged.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Conv
from .tensor import Tensor


class PolicyNet:
    """Three-layer feature extractor plus a sigmoid scoring head.

    The intermediate features are exposed because the weight-generation
    network consumes them on the decoder side.
    """

    def __init__(self, n_b: int, n_max: int, width: int, rng: np.random.Generator):
        self.n_b = n_b
        self.n_max = n_max
        self.width = width
        self.fen = [
            Conv(3, n_b, width, rng),
            Conv(3, width, width, rng),
            Conv(3, width, width, rng),
        ]
        self.head = Conv(3, width, n_max, rng)

    def forward(self, c: Tensor) -> tuple[Tensor, Tensor]:
        """[N, rows, cols, n_b] -> (scores G, features), both grid-shaped."""
        h = c
        for conv in self.fen:
            h = T.relu(conv(h))
        return T.sigmoid(self.head(h)), h

    def named_params(self, prefix: str = "pnet") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, conv in enumerate(self.fen):
            out.update(conv.named_params(f"{prefix}.fen{i}"))
        out.update(self.head.named_params(f"{prefix}.head"))
        return out


def pnet_forward(c, net: PolicyNet) -> tuple[Tensor, Tensor]:
    """Single-image wrapper: [rows, cols, n_b] -> (G, features)."""
    c = c if isinstance(c, Tensor) else Tensor(c)
    if c.ndim != 3 or c.shape[2] != net.n_b:
        raise ValueError(f"policy input {c.shape} does not match width n_b={net.n_b}")
    rows, cols = c.shape[0], c.shape[1]
    g, f = net.forward(T.reshape(c, (1, rows, cols, net.n_b)))
    return (T.reshape(g, (rows, cols, net.n_max)),
            T.reshape(f, (rows, cols, net.width)))


def binarize(g: Tensor) -> Tensor:
    """Hard threshold: 1 where G > 0.5 (strict), else 0.

    Straight-through backward: the output gradient is passed to G
    unchanged, so dL/dG == dL/dM identically.
    """
    g = g if isinstance(g, Tensor) else Tensor(g)
    bits = (g.data > 0.5).astype(np.float64)
    return T.node(bits, (g,), lambda grad: (grad,))


def apply_mask(d: Tensor, m: Tensor) -> Tensor:
    """Zero-padded second-stage measurements: E = D * M elementwise."""
    return T.mul(d, m)


def popcounts(m) -> np.ndarray:
    """Per-block count of selected rows; single source of truth downstream."""
    data = m.data if isinstance(m, Tensor) else np.asarray(m)
    return data.sum(axis=-1)
