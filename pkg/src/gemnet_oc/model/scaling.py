from __future__ import annotations

import warnings

import torch

from .layers import ScaleFactor


def _execution_order(model, batch) -> list[str]:
    names = {id(mod): name for name, mod in model.named_modules() if isinstance(mod, ScaleFactor)}
    order = []
    hooks = []

    def hook(mod, args):
        name = names[id(mod)]
        if name not in order:
            order.append(name)

    for mod in model.modules():
        if isinstance(mod, ScaleFactor):
            hooks.append(mod.register_forward_pre_hook(hook))
    try:
        with torch.no_grad():
            model(batch)
    finally:
        for h in hooks:
            h.remove()
    return order


def fit_scaling_factors(model, batches) -> dict:
    """Calibrate every scale factor in execution order and return the values.

    Each site is fitted with all upstream sites already fixed, so its
    statistics reflect the final network. With ``scaling_factors`` off the
    model is left untouched and all factors stay at 1.
    """
    batches = list(batches)
    if not batches:
        raise ValueError("need at least one batch to fit scaling factors")
    sites = model.scale_factors()
    if not model.config.scaling_factors:
        return {name: float(mod.scale) for name, mod in sites.items()}
    was_training = model.training
    model.eval()
    fitted = {}
    try:
        for name in _execution_order(model, batches[0]):
            site = sites[name]
            site.start_fit()
            with torch.no_grad():
                for batch in batches:
                    model(batch)
            records = list(site._records)
            value = site.finish_fit()
            if not records or any(r[0] == 0 or r[1] == 0 for r in records):
                warnings.warn(f"scale factor {name}: zero-variance activations, factor left at {value:g}")
            fitted[name] = value
    finally:
        model.train(was_training)
    return fitted
