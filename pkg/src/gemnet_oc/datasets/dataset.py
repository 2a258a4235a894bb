from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

from ..errors import DatasetError
from ..geometry import AtomicSystem
from .io import SPLITS, format_frame


def frame_hash(system: AtomicSystem, split: str) -> str:
    h = hashlib.sha256()
    h.update(f"{system.trajectory_id}\t{system.frame}\t{split}\n".encode())
    h.update(format_frame(system).encode())
    return h.hexdigest()


@dataclass
class Dataset:
    """Labeled frames with a split name per frame."""

    systems: list
    splits: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.systems = list(self.systems)
        self.splits = list(self.splits)
        if len(self.systems) != len(self.splits):
            raise DatasetError("one split label per system required")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise DatasetError(f"unknown split names {sorted(bad)}")

    def __len__(self):
        return len(self.systems)

    def split(self, name: str) -> list:
        return [s for s, sp in zip(self.systems, self.splits) if sp == name]

    def counts(self) -> dict:
        c = Counter(self.splits)
        return {name: c.get(name, 0) for name in SPLITS}

    def select(self, keep, provenance_note: dict | None = None) -> "Dataset":
        keep = list(keep)
        systems = [s for s, k in zip(self.systems, keep) if k]
        splits = [sp for sp, k in zip(self.splits, keep) if k]
        prov = dict(self.provenance)
        if provenance_note:
            prov.setdefault("operations", []).append(provenance_note)
        return Dataset(systems, splits, prov)

    def frame_hashes(self) -> list[str]:
        return [frame_hash(s, sp) for s, sp in zip(self.systems, self.splits)]

    def digest(self) -> str:
        """Order-independent hash over frames and their split labels."""
        h = hashlib.sha256()
        for fh in sorted(self.frame_hashes()):
            h.update(fh.encode())
        return h.hexdigest()

    def trajectories(self) -> dict:
        out = {}
        for i, s in enumerate(self.systems):
            out.setdefault(s.trajectory_id, []).append(i)
        return out

    def elements(self) -> list[int]:
        return sorted({int(z) for s in self.systems for z in s.numbers})
