"""Dataset restrictions that isolate one aspect at a time.

Element, size and random subsets mirror restricting catalyst chemistry,
system size and dataset size; the same-trajectory split mirrors easier
validation sets drawn from the training trajectories themselves.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractViolation, DatasetError
from .dataset import Dataset
from .synthetic import ADSORBATE_TAG


def _nonempty(result: Dataset, what: str) -> Dataset:
    if len(result) == 0:
        raise DatasetError(f"{what} left no systems")
    return result


def subset_by_elements(dataset: Dataset, allowed, mode: str = "catalyst") -> Dataset:
    """Keep systems whose elements lie in ``allowed``.

    In "catalyst" mode only non-adsorbate atoms are checked; in "all" mode
    every atom is.
    """
    if mode not in ("catalyst", "all"):
        raise ContractViolation(f"mode must be 'catalyst' or 'all', got {mode!r}")
    allowed = {int(z) for z in allowed}
    keep = []
    for s in dataset.systems:
        z = s.numbers if mode == "all" else s.numbers[s.tags != ADSORBATE_TAG]
        keep.append(set(int(v) for v in z) <= allowed)
    note = {"op": "subset_by_elements", "allowed": sorted(allowed), "mode": mode}
    return _nonempty(dataset.select(keep, note), "element restriction")


def subset_by_size(dataset: Dataset, max_atoms: int) -> Dataset:
    """Keep systems with at most ``max_atoms`` atoms (fixed atoms included)."""
    keep = [s.n_atoms <= max_atoms for s in dataset.systems]
    note = {"op": "subset_by_size", "max_atoms": int(max_atoms)}
    return _nonempty(dataset.select(keep, note), "size restriction")


def subset_random(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Uniform sample of ``n`` training systems; other splits untouched, order kept."""
    train_idx = [i for i, sp in enumerate(dataset.splits) if sp == "train"]
    if n > len(train_idx):
        raise DatasetError(f"requested {n} training systems but only {len(train_idx)} exist")
    if n < 1:
        raise DatasetError("random subset needs n >= 1")
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(train_idx, size=n, replace=False).tolist())
    keep = [sp != "train" or i in chosen for i, sp in enumerate(dataset.splits)]
    note = {"op": "subset_random", "n": int(n), "seed": int(seed)}
    return dataset.select(keep, note)


def split_same_vs_separate_trajectory(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Move about ``fraction`` of training frames into ``val_same_traj``.

    Every trajectory keeps at least one training frame; frames in other
    splits are never touched.
    """
    if not 0.0 <= fraction < 1.0:
        raise ContractViolation("fraction must be in [0, 1)")
    by_traj = {}
    for i, (s, sp) in enumerate(zip(dataset.systems, dataset.splits)):
        if sp == "train":
            by_traj.setdefault(s.trajectory_id, []).append(i)
    short = [t for t, idx in by_traj.items() if len(idx) < 2]
    if short:
        raise DatasetError(f"trajectories with fewer than 2 training frames: {short[:5]}")
    total = sum(len(v) for v in by_traj.values())
    target = int(math.floor(fraction * total + 0.5))
    # candidates: all but one (randomly kept) frame of each trajectory
    rng = np.random.default_rng(seed)
    candidates = []
    for traj in sorted(by_traj):
        idx = by_traj[traj]
        keeper = idx[int(rng.integers(len(idx)))]
        candidates.extend(i for i in idx if i != keeper)
    if target > len(candidates):
        raise DatasetError("fraction too large to keep one training frame per trajectory")
    moved = set(rng.choice(candidates, size=target, replace=False).tolist()) if target else set()
    splits = ["val_same_traj" if i in moved else sp for i, sp in enumerate(dataset.splits)]
    prov = dict(dataset.provenance)
    prov.setdefault("operations", []).append({"op": "split_same_trajectory", "fraction": fraction, "seed": int(seed)})
    return Dataset(dataset.systems, splits, prov)
