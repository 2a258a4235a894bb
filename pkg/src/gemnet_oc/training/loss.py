from __future__ import annotations

import torch

from ..tensor import segment_sum


def loss(e_pred, e_true, f_pred, f_true, atom_system, energy_coef: float, force_coef: float):
    """Per-system ``lambda |dE| + rho/N sum_n |dF_n|``, averaged over systems.

    ``atom_system`` maps each force row to its system index.
    """
    e_pred, e_true = torch.as_tensor(e_pred), torch.as_tensor(e_true)
    f_pred, f_true = torch.as_tensor(f_pred), torch.as_tensor(f_true)
    atom_system = torch.as_tensor(atom_system, dtype=torch.long)
    n_sys = e_pred.shape[0]
    energy_term = (e_pred - e_true).abs()
    if force_coef == 0:
        return (energy_coef * energy_term).mean()
    err = torch.linalg.norm(f_pred - f_true, dim=-1)
    counts = torch.bincount(atom_system, minlength=n_sys).to(err.dtype)
    force_term = segment_sum(err, atom_system, n_sys) / counts.clamp_min(1)
    return (energy_coef * energy_term + force_coef * force_term).mean()
