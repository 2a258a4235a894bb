from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Optional

from ..basis import ANGULAR_KINDS, RADIAL_KINDS, BasisConfig
from ..errors import ConfigError

TOGGLES = (
    "quadruplets",
    "atom_edge",
    "edge_atom",
    "atom_atom",
    "atom_mlp",
    "atom_emb_in_output",
    "global_output_mlp",
    "symmetric_mp",
    "scaling_factors",
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters and ablation switches.

    Every ``TOGGLES`` entry switches one component of the network on or off.
    ``graph`` selects nearest-neighbor ("knn") or distance-cutoff ("cutoff")
    edge construction; ``cutoff`` bounds both.
    """

    emb_size_atom: int = 256
    emb_size_edge: int = 512
    emb_size_rbf: int = 16
    emb_size_cbf: int = 16
    emb_size_trip_in: int = 64
    emb_size_trip_out: int = 64
    emb_size_quad_in: int = 32
    emb_size_quad_out: int = 32
    emb_size_aint_in: int = 64
    emb_size_aint_out: int = 64
    num_blocks: int = 4
    num_before_skip: int = 2
    num_after_skip: int = 2
    num_concat: int = 1
    num_atom: int = 3
    num_atom_emb_layers: int = 2
    num_global_out_layers: int = 2

    graph: str = "knn"
    k_emb: int = 30
    k_qint: int = 8
    cutoff: float = 12.0
    max_neighbors: Optional[int] = None
    cutoff_aint: float = 12.0
    max_neighbors_aint: Optional[int] = None

    radial_kind: str = "gaussian"
    n_radial: int = 128
    envelope_exponent: int = 5
    angular_kind: str = "legendre_product"
    max_degree: int = 6

    quadruplets: bool = True
    atom_edge: bool = True
    edge_atom: bool = True
    atom_atom: bool = True
    atom_mlp: bool = True
    atom_emb_in_output: bool = True
    global_output_mlp: bool = True
    symmetric_mp: bool = True
    scaling_factors: bool = True

    force_mode: str = "direct"
    activation: str = "scaled_silu"
    residual_scale: float = 0.7071067811865476
    max_z: int = 100
    precision: str = "double"

    def __post_init__(self):
        sizes = [f.name for f in fields(self) if f.name.startswith(("emb_size", "num_")) or f.name == "max_z"]
        for name in sizes:
            value = getattr(self, name)
            minimum = 0 if name in ("num_before_skip", "num_after_skip", "num_concat", "num_atom",
                                   "num_atom_emb_layers", "num_global_out_layers") else 1
            if not isinstance(value, int) or value < minimum:
                raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
        for name in ("k_emb", "k_qint"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.k_qint > self.k_emb:
            raise ConfigError(f"k_qint ({self.k_qint}) must not exceed k_emb ({self.k_emb})")
        if self.graph not in ("knn", "cutoff"):
            raise ConfigError(f"graph must be 'knn' or 'cutoff', got {self.graph!r}")
        if self.force_mode not in ("direct", "gradient"):
            raise ConfigError(f"force_mode must be 'direct' or 'gradient', got {self.force_mode!r}")
        if self.radial_kind not in RADIAL_KINDS:
            raise ConfigError(f"radial_kind must be one of {', '.join(RADIAL_KINDS)}")
        if self.angular_kind not in ANGULAR_KINDS:
            raise ConfigError(f"angular_kind must be one of {', '.join(ANGULAR_KINDS)}")
        if self.precision not in ("double", "single"):
            raise ConfigError("precision must be 'double' or 'single'")
        for name in ("cutoff", "cutoff_aint"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.residual_scale > 0:
            raise ConfigError("residual_scale must be positive")

    @property
    def edge_basis(self) -> BasisConfig:
        return BasisConfig(self.radial_kind, self.n_radial, self.cutoff, self.envelope_exponent,
                           self.angular_kind, self.max_degree)

    @property
    def atom_basis(self) -> BasisConfig:
        return dataclasses.replace(self.edge_basis, cutoff=self.cutoff_aint)

    def graph_signature(self) -> dict:
        """The subset of fields that determines graph construction."""
        return {
            "graph": self.graph,
            "k_emb": self.k_emb,
            "k_qint": self.k_qint if self.quadruplets else None,
            "cutoff": self.cutoff,
            "max_neighbors": self.max_neighbors,
            "cutoff_aint": self.cutoff_aint if self.atom_atom else None,
            "max_neighbors_aint": self.max_neighbors_aint if self.atom_atom else None,
            "pairs": self.atom_edge or self.edge_atom,
        }

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)
