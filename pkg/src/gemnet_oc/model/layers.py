from __future__ import annotations

import math

import torch
from torch import nn

from ..tensor import ACTIVATIONS, he_orthogonal_


class Dense(nn.Module):
    def __init__(self, n_in, n_out, generator, bias=False, activation=None):
        super().__init__()
        self.linear = nn.Linear(n_in, n_out, bias=bias)
        with torch.no_grad():
            he_orthogonal_(self.linear.weight, generator)
            if bias:
                self.linear.bias.zero_()
        self.act = ACTIVATIONS[activation] if activation else None

    def forward(self, x):
        x = self.linear(x)
        return self.act(x) if self.act is not None else x


class ResidualLayer(nn.Module):
    """Two dense layers with a skip connection, rescaled to keep variance."""

    def __init__(self, size, generator, activation, scale):
        super().__init__()
        self.dense1 = Dense(size, size, generator, activation=activation)
        self.dense2 = Dense(size, size, generator, activation=activation)
        self.scale = scale

    def forward(self, x):
        return (x + self.dense2(self.dense1(x))) * self.scale


def residual_stack(n, size, generator, activation, scale):
    return nn.ModuleList(ResidualLayer(size, generator, activation, scale) for _ in range(n))


class ScaleFactor(nn.Module):
    """Fixed multiplier at an aggregation site, fitted once on data.

    While fitting, the standard deviations of the pre-aggregation input
    (``ref``) and of the aggregated output are accumulated; the factor is
    their ratio, so the output matches the input's spread.
    """

    def __init__(self):
        super().__init__()
        self.register_buffer("scale", torch.ones(()))
        self._records = None

    def start_fit(self):
        self._records = []

    def finish_fit(self) -> float:
        records, self._records = self._records, None
        if not records:
            return float(self.scale)
        var_in = sum(r[0] for r in records) / len(records)
        var_out = sum(r[1] for r in records) / len(records)
        if any(r[0] == 0 or r[1] == 0 for r in records):
            var_in = var_out = 1.0
        factor = math.sqrt(var_in / var_out)
        with torch.no_grad():
            self.scale.fill_(factor)
        return factor

    @property
    def fitting(self) -> bool:
        return self._records is not None

    def forward(self, x, ref):
        if self._records is not None and x.numel() > 1 and ref.numel() > 1:
            self._records.append((float(ref.detach().var(unbiased=False)), float(x.detach().var(unbiased=False))))
        return x * self.scale

