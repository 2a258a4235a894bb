"""Dense tensor primitives with reverse-mode differentiation.

The substrate is torch's define-by-run autograd: every primitive below records
onto the autograd tape when any input requires grad, and the tape is rebuilt
on each forward pass. This module pins down the small closure of operations
the network uses and enforces their shape contracts.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import ContractViolation

Tensor = torch.Tensor

_SILU_SCALE = 1.0 / 0.6


def set_precision(precision: str) -> torch.dtype:
    """Set the default floating dtype ("double" or "single") and return it."""
    dtypes = {"double": torch.float64, "single": torch.float32}
    if precision not in dtypes:
        raise ContractViolation(f"unknown precision {precision!r}")
    torch.set_default_dtype(dtypes[precision])
    return dtypes[precision]


def tensor(values, requires_grad: bool = False, dtype=None) -> Tensor:
    dtype = dtype or torch.get_default_dtype()
    t = torch.as_tensor(np.asarray(values), dtype=dtype).clone()
    t.requires_grad_(requires_grad)
    return t


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for a vector or a batch of row vectors."""
    if weight.dim() != 2 or x.shape[-1] != weight.shape[1]:
        raise ContractViolation(
            f"affine: input {tuple(x.shape)} does not match weight {tuple(weight.shape)}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ContractViolation(f"affine: bias {tuple(bias.shape)} for weight {tuple(weight.shape)}")
    return torch.nn.functional.linear(x, weight, bias)


def scaled_silu(x: Tensor) -> Tensor:
    return torch.nn.functional.silu(x) * _SILU_SCALE


def silu(x: Tensor) -> Tensor:
    return torch.nn.functional.silu(x)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "scaled_silu": scaled_silu,
    "silu": silu,
    "identity": lambda x: x,
}


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ContractViolation(f"hadamard: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    return a * b


def gather_rows(x: Tensor, index) -> Tensor:
    index = torch.as_tensor(index, dtype=torch.long)
    if index.numel() and (int(index.min()) < 0 or int(index.max()) >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")
    return x.index_select(0, index)


def segment_sum(values: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Sum rows of ``values`` into ``n_segments`` buckets.

    Accumulation runs in ascending row order, so results are reproducible
    bit for bit on a single thread.
    """
    segment_ids = torch.as_tensor(segment_ids, dtype=torch.long)
    if segment_ids.dim() != 1 or segment_ids.shape[0] != values.shape[0]:
        raise ContractViolation(
            f"segment_sum: {segment_ids.shape[0] if segment_ids.dim() else 0} ids for {values.shape[0]} rows"
        )
    if segment_ids.numel() and (int(segment_ids.min()) < 0 or int(segment_ids.max()) >= n_segments):
        raise IndexError(f"segment_sum: segment id outside [0, {n_segments})")
    out = values.new_zeros((n_segments,) + tuple(values.shape[1:]))
    return out.index_add(0, segment_ids, values)


def concatenate(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ContractViolation("concatenate: non-matching shapes")
    return torch.cat(list(tensors), dim=axis)


def backward(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to each tracked input.

    Inputs that do not influence the output get a zero gradient.
    """
    if output.numel() != 1:
        raise ContractViolation(f"backward needs a scalar output, got shape {tuple(output.shape)}")
    grads = torch.autograd.grad(
        output.reshape(()), list(inputs), create_graph=create_graph, allow_unused=True
    )
    return [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)
        flat[i] = orig - step
        fm = fn(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.max(np.abs(b))), floor)
    return float(np.max(np.abs(a - b))) / denom


def he_orthogonal_(weight: Tensor, generator: torch.Generator | None = None) -> Tensor:
    """Orthogonal init rescaled to unit input variance (fan-in)."""
    with torch.no_grad():
        rows, cols = weight.shape
        a = torch.randn(max(rows, cols), min(rows, cols), generator=generator, dtype=weight.dtype)
        q, r = torch.linalg.qr(a)
        q = q * torch.sign(torch.diagonal(r))
        if rows < cols:
            q = q.T
        q = q[:rows, :cols]
        if cols > 1:
            q = q - q.mean(dim=1, keepdim=True)
            q = q / q.std(dim=1, keepdim=True, unbiased=False).clamp_min(1e-12)
        weight.copy_(q / math.sqrt(cols))
    return weight
