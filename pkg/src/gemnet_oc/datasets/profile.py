from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..errors import DatasetError
from ..geometry import build_cutoff_graph
from .dataset import Dataset

PAIR_RADIUS = 5.0


@dataclass
class ProfileReport:
    elements: list
    neighbor_pairs: list  # distinct (z1, z2) with z1 <= z2 found within PAIR_RADIUS
    mean_atoms: float
    max_atoms: int
    n_systems: int
    split_counts: dict

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_neighbor_pairs(self) -> int:
        return len(self.neighbor_pairs)

    def rows(self) -> list[tuple]:
        rows = [
            ("n_elements", self.n_elements),
            ("elements", " ".join(map(str, self.elements))),
            ("n_neighbor_pairs", self.n_neighbor_pairs),
            ("neighbor_pairs", " ".join(f"{a}-{b}" for a, b in self.neighbor_pairs)),
            ("mean_atoms", f"{self.mean_atoms:.6g}"),
            ("max_atoms", self.max_atoms),
            ("n_systems", self.n_systems),
        ]
        rows += [(f"n_{name}", count) for name, count in self.split_counts.items()]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["quantity", "value"])
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_table(self) -> str:
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def neighbor_element_pairs(system, radius: float = PAIR_RADIUS) -> set:
    graph = build_cutoff_graph(system, radius)
    z = system.numbers
    a, b = z[graph.target], z[graph.source]
    return {(int(x), int(y)) for x, y in zip(np.minimum(a, b), np.maximum(a, b))}


def profile(dataset: Dataset, radius: float = PAIR_RADIUS) -> ProfileReport:
    """Element inventory, distinct element pairs within ``radius`` (minimum image), sizes and split counts."""
    if len(dataset) == 0:
        raise DatasetError("cannot profile an empty dataset")
    pairs = set()
    for s in dataset.systems:
        pairs |= neighbor_element_pairs(s, radius)
    sizes = np.array([s.n_atoms for s in dataset.systems])
    return ProfileReport(
        elements=dataset.elements(),
        neighbor_pairs=sorted(pairs),
        mean_atoms=float(sizes.mean()),
        max_atoms=int(sizes.max()),
        n_systems=len(dataset),
        split_counts=dataset.counts(),
    )
