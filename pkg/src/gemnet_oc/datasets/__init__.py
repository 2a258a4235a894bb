from .dataset import Dataset, frame_hash
from .io import read_dataset, read_trajectory, write_dataset, write_trajectory
from .potentials import PairPotential, PairTerm
from .profile import ProfileReport, profile
from .subsets import split_same_vs_separate_trajectory, subset_by_elements, subset_by_size, subset_random
from .synthetic import ElementSpec, PairSpec, SyntheticConfig, build_potential, generate_synthetic, potential_from_provenance

__all__ = [
    "Dataset",
    "ElementSpec",
    "PairPotential",
    "PairSpec",
    "PairTerm",
    "ProfileReport",
    "SyntheticConfig",
    "build_potential",
    "frame_hash",
    "generate_synthetic",
    "potential_from_provenance",
    "profile",
    "read_dataset",
    "read_trajectory",
    "split_same_vs_separate_trajectory",
    "subset_by_elements",
    "subset_by_size",
    "subset_random",
    "write_dataset",
    "write_trajectory",
]
