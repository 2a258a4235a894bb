"""Synthetic multi-element toy-potential datasets.

Trajectories start from random non-overlapping placements (isolated clusters
or periodic boxes) and follow noisy steepest descent on a pair potential.
Every frame carries the exact energy and analytic forces. Atoms are tagged
as catalyst (1) or adsorbate (2); element combinations listed in
``holdout_combos`` never appear in training or in-domain validation and are
used only for the out-of-domain split.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..geometry import AtomicSystem
from .dataset import Dataset
from .potentials import PairPotential, PairTerm

CATALYST_TAG = 1
ADSORBATE_TAG = 2


@dataclass(frozen=True)
class ElementSpec:
    z: int
    radius: float  # half the equilibrium distance to a like atom
    depth: float  # like-pair well depth, eV
    role: str = "catalyst"

    def __post_init__(self):
        if self.role not in ("catalyst", "adsorbate"):
            raise ConfigError(f"element role must be catalyst or adsorbate, got {self.role!r}")
        if self.z < 1:
            raise ConfigError("atomic numbers must be positive")
        if not self.depth > 0:
            raise ConfigError(f"element {self.z}: well depth must be positive")
        if not self.radius > 0:
            raise ConfigError(f"element {self.z}: radius must be positive")


@dataclass(frozen=True)
class PairSpec:
    elements: tuple
    kind: str = "morse"
    depth: float = 0.5
    r0: float = 2.0
    width: float = 1.5


def _default_elements():
    return (
        ElementSpec(13, 1.40, 0.30, "catalyst"),
        ElementSpec(29, 1.25, 0.40, "catalyst"),
        ElementSpec(8, 0.70, 0.60, "adsorbate"),
    )


@dataclass(frozen=True)
class SyntheticConfig:
    elements: tuple = field(default_factory=_default_elements)
    pairs: tuple = ()
    pair_kind: str = "morse"
    morse_width: float = 1.5
    cutoff: float = 6.0
    min_atoms: int = 4
    max_atoms: int = 12
    periodic_fraction: float = 0.0
    density: float = 0.06
    n_train_trajectories: int = 100
    n_val_trajectories: int = 10
    n_ood_trajectories: int = 0
    trajectory_length: int = 20
    step_size: float = 0.01
    noise: float = 0.02
    max_displacement: float = 0.2
    max_adsorbates: int = 2
    holdout_combos: tuple = ()
    fixed_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.elements:
            raise ConfigError("element inventory is empty")
        zs = [e.z for e in self.elements]
        if len(set(zs)) != len(zs):
            raise ConfigError("duplicate element in inventory")
        for p in self.pairs:
            if not p.depth > 0:
                raise ConfigError(f"pair {tuple(p.elements)}: well depth must be positive")
            if not set(p.elements) <= set(zs):
                raise ConfigError(f"pair {tuple(p.elements)} references an element outside the inventory")
        if not 1 <= self.min_atoms <= self.max_atoms <= 200:
            raise ConfigError("size range must satisfy 1 <= min_atoms <= max_atoms <= 200")
        if not 0.0 <= self.periodic_fraction <= 1.0:
            raise ConfigError("periodic_fraction must be in [0, 1]")
        if not self.density > 0 or not self.cutoff > 0:
            raise ConfigError("density and cutoff must be positive")
        if self.trajectory_length < 1:
            raise ConfigError("trajectory_length must be >= 1")
        if min(self.n_train_trajectories, self.n_val_trajectories, self.n_ood_trajectories) < 0:
            raise ConfigError("trajectory counts must be non-negative")
        if self.n_ood_trajectories and not self.holdout_combos:
            raise ConfigError("out-of-domain trajectories need holdout_combos")
        for combo in self.holdout_combos:
            if not set(combo) <= set(zs):
                raise ConfigError(f"holdout combo {tuple(combo)} references an element outside the inventory")
        if not any(e.role == "catalyst" for e in self.elements):
            raise ConfigError("at least one catalyst element is required")
        if not 0.0 <= self.fixed_fraction < 1.0:
            raise ConfigError("fixed_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {', '.join(unknown)}")
        if "elements" in data:
            data["elements"] = tuple(_build(ElementSpec, e, "elements") for e in data["elements"])
        if "pairs" in data:
            pairs = []
            for p in data["pairs"]:
                p = dict(p)
                p["elements"] = tuple(p.get("elements", ()))
                pairs.append(_build(PairSpec, p, "pairs"))
            data["pairs"] = tuple(pairs)
        if "holdout_combos" in data:
            data["holdout_combos"] = tuple(tuple(int(z) for z in c) for c in data["holdout_combos"])
        return cls(**data)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
    return cls(**data)


def build_potential(config: SyntheticConfig) -> PairPotential:
    """Pair terms from mixing rules, overridden by explicit ``pairs`` entries."""
    spec = {e.z: e for e in config.elements}
    terms = {}
    zs = sorted(spec)
    for i, a in enumerate(zs):
        for b in zs[i:]:
            depth = math.sqrt(spec[a].depth * spec[b].depth)
            terms[(a, b)] = PairTerm(config.pair_kind, depth, spec[a].radius + spec[b].radius, config.morse_width)
    for p in config.pairs:
        a, b = sorted(p.elements)
        terms[(a, b)] = PairTerm(p.kind, p.depth, p.r0, p.width)
    return PairPotential(terms, config.cutoff)


def _contains(elements: set, combos) -> bool:
    return any(set(c) <= elements for c in combos)


def _composition(rng, config: SyntheticConfig, n: int, ood: bool):
    catalysts = [e.z for e in config.elements if e.role == "catalyst"]
    adsorbates = [e.z for e in config.elements if e.role == "adsorbate"]
    for _ in range(1000):
        n_cat_el = int(rng.integers(1, min(2, len(catalysts)) + 1))
        cat_el = list(rng.choice(catalysts, size=n_cat_el, replace=False))
        n_ads = int(rng.integers(0, min(config.max_adsorbates, n - 1) + 1)) if adsorbates else 0
        ads = [int(z) for z in rng.choice(adsorbates, size=n_ads)] if n_ads else []
        if ood:
            combo = config.holdout_combos[int(rng.integers(len(config.holdout_combos)))]
            need_ads = [z for z in combo if z in adsorbates and z not in ads]
            need_cat = [z for z in combo if z in catalysts and z not in cat_el]
            cat_el += need_cat
            ads = ads + need_ads
            if len(ads) > n - len(cat_el):
                continue
        n_cat = n - len(ads)
        if n_cat < len(cat_el):
            continue
        cat = list(cat_el) + [int(z) for z in rng.choice(cat_el, size=n_cat - len(cat_el))]
        numbers = np.array(cat + ads, dtype=np.int64)
        tags = np.array([CATALYST_TAG] * len(cat) + [ADSORBATE_TAG] * len(ads), dtype=np.int64)
        present = {int(z) for z in numbers}
        if ood == _contains(present, config.holdout_combos):
            return numbers, tags
    raise ConfigError("could not draw a composition consistent with holdout_combos")


def _place(rng, numbers, potential: PairPotential, config: SyntheticConfig, periodic: bool):
    n = len(numbers)
    volume = n / config.density
    cell = np.zeros((3, 3))
    if periodic:
        length = volume ** (1.0 / 3.0)
        cell = np.eye(3) * length
    radius = (3.0 * volume / (4.0 * math.pi)) ** (1.0 / 3.0)
    for _ in range(200):
        pos = np.zeros((n, 3))
        ok = True
        for i in range(n):
            for _ in range(500):
                if periodic:
                    trial = rng.uniform(0.0, cell[0, 0], 3)
                else:
                    v = rng.normal(size=3)
                    trial = v / np.linalg.norm(v) * radius * rng.uniform() ** (1.0 / 3.0)
                if i == 0:
                    break
                d = pos[:i] - trial
                if periodic:
                    d -= cell[0, 0] * np.round(d / cell[0, 0])
                dist = np.linalg.norm(d, axis=1)
                dmin = np.array([0.85 * potential.term(numbers[i], numbers[j]).r0 for j in range(i)])
                if np.all(dist >= dmin):
                    break
            else:
                ok = False
                break
            pos[i] = trial
        if ok:
            return pos, cell
        radius *= 1.05
        if periodic:
            cell = cell * 1.05
    raise ConfigError("could not place atoms without overlap; lower the density")


def generate_trajectory(config: SyntheticConfig, potential: PairPotential, role: str, index: int) -> list:
    role_code = {"train": 0, "val_id": 1, "val_ood": 2}[role]
    rng = np.random.default_rng([config.seed, role_code, index])
    n = int(rng.integers(config.min_atoms, config.max_atoms + 1))
    numbers, tags = _composition(rng, config, n, role == "val_ood")
    periodic = bool(rng.uniform() < config.periodic_fraction)
    positions, cell = _place(rng, numbers, potential, config, periodic)
    fixed = np.zeros(n, dtype=bool)
    n_fix = int(math.floor(config.fixed_fraction * int((tags == CATALYST_TAG).sum())))
    if n_fix:
        fixed[rng.choice(np.flatnonzero(tags == CATALYST_TAG), size=n_fix, replace=False)] = True
    traj_id = f"{role}-{index:05d}"
    system = AtomicSystem(numbers=numbers, positions=positions, cell=cell, pbc=periodic, tags=tags,
                          fixed=fixed, trajectory_id=traj_id)
    frames = []
    for t in range(config.trajectory_length):
        energy, forces = potential.energy_forces(system)
        frames.append(system.replace(energy=energy, forces=forces, frame=t))
        step = config.step_size * forces
        norms = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, config.max_displacement / np.maximum(norms, 1e-300))
        step += config.noise * rng.normal(size=step.shape)
        step[fixed] = 0.0
        system = system.replace(positions=system.positions + step)
    return frames


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    potential = build_potential(config)
    systems, splits = [], []
    for role, count in (("train", config.n_train_trajectories), ("val_id", config.n_val_trajectories),
                        ("val_ood", config.n_ood_trajectories)):
        for index in range(count):
            frames = generate_trajectory(config, potential, role, index)
            systems.extend(frames)
            splits.extend([role] * len(frames))
    provenance = {"generator": "synthetic", "config": config.to_dict(), "potential": potential.to_dict()}
    return Dataset(systems, splits, provenance)


def potential_from_provenance(provenance: dict) -> PairPotential:
    """Rebuild the labeling potential recorded in a synthetic dataset's provenance."""
    if "potential" not in provenance:
        raise ConfigError("dataset provenance has no potential (not a synthetic dataset)")
    spec = provenance["potential"]
    terms = {
        tuple(t["elements"]): PairTerm(t["kind"], t["depth"], t["r0"], t["width"]) for t in spec["terms"]
    }
    return PairPotential(terms, spec["cutoff"])
