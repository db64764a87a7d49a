"""Conv layer and residual block shared by the three networks."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Conv:
    """kxk convolution with He-normal kernel init and zero bias init."""

    def __init__(self, ksize: int, cin: int, cout: int, rng: np.random.Generator,
                 *, stride: int = 1, padding: str = "same", bias: bool = True):
        std = np.sqrt(2.0 / (ksize * ksize * cin))
        self.kernel = Tensor(rng.normal(0.0, std, size=(ksize, ksize, cin, cout)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, stride=self.stride, bias=self.bias,
                        padding=self.padding)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.kernel": self.kernel}
        if self.bias is not None:
            out[f"{prefix}.bias"] = self.bias
        return out


class ResBlock:
    """conv -> relu -> conv plus the identity skip."""

    def __init__(self, ksize: int, width: int, rng: np.random.Generator):
        self.conv1 = Conv(ksize, width, width, rng)
        self.conv2 = Conv(ksize, width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(x, self.conv2(T.relu(self.conv1(x))))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.conv1.named_params(f"{prefix}.conv1"),
                **self.conv2.named_params(f"{prefix}.conv2")}
