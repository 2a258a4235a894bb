from __future__ import annotations

import numpy as np
import torch

from .. import checkpoint
from ..errors import ContractViolation
from .config import ModelConfig
from .network import GemNetOC


def model_state(model: GemNetOC) -> dict[str, np.ndarray]:
    return {name: t.detach().cpu().numpy().astype(np.float64) for name, t in model.state_dict().items()}


def load_state(model: GemNetOC, params: dict) -> None:
    own = model.state_dict()
    missing = sorted(set(own) - set(params))
    extra = sorted(set(params) - set(own))
    if missing or extra:
        raise ContractViolation(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    model.load_state_dict({k: torch.as_tensor(v, dtype=own[k].dtype).reshape(own[k].shape) for k, v in params.items()})


def save_model(path, model: GemNetOC, extra_meta: dict | None = None, extra_params: dict | None = None) -> str:
    """Self-describing archive: parameters plus the model config."""
    params = model_state(model)
    for name, value in (extra_params or {}).items():
        params[name] = np.asarray(value, dtype=np.float64)
    meta = {"model_config": model.config.to_dict(), **(extra_meta or {})}
    return checkpoint.save(path, params, meta)


def load_model(path) -> tuple[GemNetOC, dict, dict]:
    """Return ``(model, meta, extra_params)`` from an archive."""
    params, meta = checkpoint.load(path)
    config = ModelConfig.from_dict(meta["model_config"])
    model = GemNetOC(config, seed=0)
    own = set(model.state_dict())
    load_state(model, {k: v for k, v in params.items() if k in own})
    extra = {k: v for k, v in params.items() if k not in own}
    return model, meta, extra
