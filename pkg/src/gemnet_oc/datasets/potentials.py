"""Closed-form pair potentials used to label synthetic data.

Each element pair has a Morse or Lennard-Jones term, truncated with a
shifted-force cutoff so energy and force both go continuously to zero at
``cutoff``. Periodic images within the cutoff are all summed, which equals
the minimum-image sum whenever the cutoff is below half the cell width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import AtomicSystem, build_cutoff_graph


@dataclass(frozen=True)
class PairTerm:
    kind: str  # "morse" or "lj"
    depth: float  # well depth, eV
    r0: float  # equilibrium distance, Angstrom
    width: float = 1.5  # Morse steepness, 1/Angstrom

    def __post_init__(self):
        if self.kind not in ("morse", "lj"):
            raise ConfigError(f"pair kind must be 'morse' or 'lj', got {self.kind!r}")
        if not self.depth > 0:
            raise ConfigError("well depth must be positive")
        if not self.r0 > 0 or not self.width > 0:
            raise ConfigError("r0 and width must be positive")

    def value_and_slope(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "morse":
            e = np.exp(-self.width * (r - self.r0))
            v = self.depth * ((1.0 - e) ** 2 - 1.0)
            dv = 2.0 * self.depth * self.width * (1.0 - e) * e
        else:
            s6 = (self.r0 / r) ** 6
            v = self.depth * (s6 * s6 - 2.0 * s6)
            dv = self.depth * (-12.0 * s6 * s6 + 12.0 * s6) / r
        return v, dv


class PairPotential:
    """Element-pair keyed mixture with shifted-force truncation."""

    def __init__(self, terms: dict, cutoff: float):
        if not cutoff > 0:
            raise ConfigError("potential cutoff must be positive")
        self.cutoff = float(cutoff)
        self.terms = {}
        for (a, b), term in terms.items():
            key = (min(a, b), max(a, b))
            self.terms[key] = term
        self._shift = {k: t.value_and_slope(self.cutoff) for k, t in self.terms.items()}

    def term(self, za: int, zb: int) -> PairTerm:
        key = (min(za, zb), max(za, zb))
        if key not in self.terms:
            raise ConfigError(f"no pair term for elements {key}")
        return self.terms[key]

    def pair(self, za, zb, r):
        """Truncated pair energy and its radial derivative."""
        za, zb, r = np.broadcast_arrays(np.asarray(za), np.asarray(zb), np.asarray(r, dtype=np.float64))
        v = np.zeros(r.shape)
        dv = np.zeros(r.shape)
        lo, hi = np.minimum(za, zb), np.maximum(za, zb)
        for key, term in self.terms.items():
            mask = (lo == key[0]) & (hi == key[1]) & (r < self.cutoff)
            if not mask.any():
                continue
            vc, dvc = self._shift[key]
            rv, rdv = term.value_and_slope(r[mask])
            v[mask] = rv - vc - (r[mask] - self.cutoff) * dvc
            dv[mask] = rdv - dvc
        return v, dv

    def energy_forces(self, system: AtomicSystem, positions=None):
        if positions is not None:
            system = system.replace(positions=np.asarray(positions, dtype=np.float64).reshape(-1, 3))
        graph = build_cutoff_graph(system, self.cutoff)
        z = system.numbers
        v, dv = self.pair(z[graph.target], z[graph.source], graph.distances)
        energy = 0.5 * float(v.sum())
        contrib = dv[:, None] * graph.directions
        forces = np.zeros((system.n_atoms, 3))
        np.add.at(forces, graph.target, contrib)
        return energy, forces

    def label(self, system: AtomicSystem) -> AtomicSystem:
        energy, forces = self.energy_forces(system)
        return system.replace(energy=energy, forces=forces)

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "terms": [
                {"elements": list(k), "kind": t.kind, "depth": t.depth, "r0": t.r0, "width": t.width}
                for k, t in sorted(self.terms.items())
            ],
        }
