import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gemnet_oc.datasets import (
    Dataset,
    PairPotential,
    PairTerm,
    SyntheticConfig,
    generate_synthetic,
    potential_from_provenance,
    profile,
    read_dataset,
    read_trajectory,
    split_same_vs_separate_trajectory,
    subset_by_elements,
    subset_by_size,
    subset_random,
    write_dataset,
    write_trajectory,
)
from gemnet_oc.datasets.io import format_frame, parse_frames
from gemnet_oc.datasets.synthetic import ADSORBATE_TAG, ElementSpec, build_potential
from gemnet_oc.errors import ConfigError, ContractViolation, DatasetError
from gemnet_oc.geometry import AtomicSystem

HOLDOUT = ((29, 8),)


def make_config(**changes):
    base = dict(n_train_trajectories=40, n_val_trajectories=6, n_ood_trajectories=4, trajectory_length=4,
                min_atoms=2, max_atoms=8, holdout_combos=HOLDOUT, periodic_fraction=0.3, fixed_fraction=0.25,
                seed=5)
    base.update(changes)
    return SyntheticConfig(**base)


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(make_config())


def key(system):
    return system.trajectory_id, system.frame


def keys(dataset, split=None):
    return {key(s) for s, sp in zip(dataset.systems, dataset.splits) if split is None or sp == split}


# --------------------------------------------------------------------------- generator


def test_generator_shape(data):
    counts = data.counts()
    assert counts == {"train": 160, "val_id": 24, "val_ood": 16, "val_same_traj": 0}
    assert data.elements() == [8, 13, 29]
    assert all(2 <= s.n_atoms <= 8 for s in data.systems)
    assert any(s.pbc.any() for s in data.systems) and any(not s.pbc.any() for s in data.systems)


def test_labels_are_negative_energy_gradient(data):
    potential = potential_from_provenance(data.provenance)
    h = 1e-5
    for system in data.systems[::7]:
        energy, forces = potential.energy_forces(system)
        assert energy == system.energy and np.array_equal(forces, system.forces)
        numeric = np.zeros_like(forces)
        for i in range(system.n_atoms):
            for k in range(3):
                plus, minus = system.positions.copy(), system.positions.copy()
                plus[i, k] += h
                minus[i, k] -= h
                numeric[i, k] = -(potential.energy_forces(system, plus)[0]
                                  - potential.energy_forces(system, minus)[0]) / (2 * h)
        scale = max(np.abs(forces).max(), 1e-3)
        assert np.abs(numeric - forces).max() / scale <= 1e-8


def test_holdout_combination_only_in_ood_split(data):
    for system, split in zip(data.systems, data.splits):
        present = set(system.numbers.tolist())
        assert ({29, 8} <= present) == (split == "val_ood")


def test_generation_is_deterministic_and_seeded(data):
    assert generate_synthetic(make_config()).digest() == data.digest()
    assert generate_synthetic(make_config(seed=6)).digest() != data.digest()


def test_trajectories_are_contiguous_and_fixed_atoms_stay(data):
    for traj, idx in data.trajectories().items():
        frames = [data.systems[i] for i in idx]
        assert [f.frame for f in frames] == list(range(4))
        for f in frames[1:]:
            assert np.array_equal(f.positions[f.fixed], frames[0].positions[frames[0].fixed])
        assert len({data.splits[i] for i in idx}) == 1


def test_fixed_atoms_are_catalysts(data):
    assert any(s.fixed.any() for s in data.systems)
    for s in data.systems:
        assert not np.any(s.fixed & (s.tags == ADSORBATE_TAG))


def test_synthetic_config_invariants():
    with pytest.raises(ConfigError):
        SyntheticConfig(min_atoms=0)
    with pytest.raises(ConfigError):
        SyntheticConfig(max_atoms=201)
    with pytest.raises(ConfigError):
        ElementSpec(1, 0.5, 0.0)
    with pytest.raises(ConfigError):
        SyntheticConfig(n_ood_trajectories=2)
    with pytest.raises(ConfigError):
        SyntheticConfig.from_dict({"temperature": 300})
    with pytest.raises(ConfigError):
        SyntheticConfig(holdout_combos=((1, 2),))


def test_pair_potential_truncation_is_smooth():
    term = PairTerm("morse", 0.5, 2.0, 1.5)
    pot = PairPotential({(1, 1): term}, cutoff=5.0)
    v, dv = pot.pair(1, 1, np.array([5.0 - 1e-9, 5.0, 7.0]))
    assert abs(v[0]) < 1e-12 and abs(dv[0]) < 1e-8
    assert v[1] == dv[1] == v[2] == 0.0
    lj = PairTerm("lj", 1.0, 1.5)
    v, dv = lj.value_and_slope(1.5)
    assert v == pytest.approx(-1.0) and dv == pytest.approx(0.0, abs=1e-12)


def test_build_potential_has_every_pair():
    pot = build_potential(SyntheticConfig())
    for a in (8, 13, 29):
        for b in (8, 13, 29):
            assert pot.term(a, b).depth > 0


# --------------------------------------------------------------------------- trajectory format


def test_frame_text_layout():
    s = AtomicSystem(numbers=[1, 8], positions=[[0, 0, 0], [0.1, 0.2, 0.3]], energy=-1.5,
                     forces=[[1, 0, 0], [-1, 0, 0]], tags=[2, 1], fixed=[False, True])
    lines = format_frame(s).splitlines()
    assert lines[0] == "2 0 0 0 0 0 0 0 0 0 0 0 0 -1.5"
    assert lines[2] == "8 0.10000000000000001 0.20000000000000001 0.29999999999999999 -1 0 0 1 1"


def test_parser_accepts_comments_and_short_atom_lines():
    text = "# header comment\n\n1 10 0 0 0 10 0 0 0 10 1 1 1 nan\n\n6 1 2 3 nan nan nan\n"
    (frame,) = parse_frames(text)
    assert frame.energy is None and frame.forces is None
    assert frame.pbc.all() and frame.numbers.tolist() == [6]
    assert frame.tags.tolist() == [0] and not frame.fixed.any()


@pytest.mark.parametrize("text, line", [
    ("2 0 0 0 0 0 0 0 0 0 0 0 0\n", 1),
    ("1 0 0 0 0 0 0 0 0 0 0 0 0 1.0\n6 1 2\n", 2),
    ("1 0 0 0 0 0 0 0 0 0 0 0 0 x\n", 1),
])
def test_parser_errors_carry_line_numbers(text, line):
    with pytest.raises(DatasetError, match=f"<string>:{line}:"):
        parse_frames(text)


def test_truncated_frame_rejected():
    with pytest.raises(DatasetError, match="ends after 1 of 2 atoms"):
        parse_frames("2 0 0 0 0 0 0 0 0 0 0 0 0 1.0\n6 1 2 3 0 0 0\n")


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(1, 100), finite, finite, finite, finite, finite, finite), min_size=1,
                max_size=6), finite, st.lists(finite, min_size=9, max_size=9), st.booleans())
def test_frame_round_trip_is_exact(atoms, energy, cell, periodic):
    z = [a[0] for a in atoms]
    pos = [a[1:4] for a in atoms]
    forces = [a[4:7] for a in atoms]
    cell = np.reshape(cell, (3, 3)) + np.eye(3) * 3e6  # keeps every lattice vector non-zero
    s = AtomicSystem(numbers=z, positions=pos, cell=cell, pbc=[periodic, False, True],
                     energy=energy, forces=forces)
    (back,) = parse_frames(format_frame(s))
    assert np.array_equal(back.positions, s.positions) and np.array_equal(back.forces, s.forces)
    assert np.array_equal(back.cell, s.cell) and back.energy == s.energy
    assert np.array_equal(back.pbc, s.pbc) and np.array_equal(back.numbers, s.numbers)


def test_trajectory_file_round_trip(tmp_path, data):
    frames = [data.systems[i] for i in data.trajectories()["train-00003"]]
    path = tmp_path / "train-00003.traj"
    write_trajectory(path, frames)
    back = read_trajectory(path)
    assert [format_frame(f) for f in back] == [format_frame(f) for f in frames]
    assert [(f.trajectory_id, f.frame) for f in back] == [key(f) for f in frames]


def test_dataset_directory_round_trip_keeps_digest(tmp_path, data):
    write_dataset(data, tmp_path / "ds")
    back = read_dataset(tmp_path / "ds")
    assert back.digest() == data.digest()
    assert back.counts() == data.counts()
    assert back.provenance["config"]["seed"] == 5
    potential_from_provenance(back.provenance)


def test_digest_ignores_order_but_not_content(data):
    order = np.random.default_rng(0).permutation(len(data))
    shuffled = Dataset([data.systems[i] for i in order], [data.splits[i] for i in order])
    assert shuffled.digest() == data.digest()
    relabeled = Dataset(data.systems, ["val_id"] + data.splits[1:])
    assert relabeled.digest() != data.digest()


def test_read_dataset_errors(tmp_path):
    with pytest.raises(DatasetError):
        read_dataset(tmp_path / "missing")
    with pytest.raises(DatasetError):
        read_dataset(tmp_path)


def test_dataset_rejects_unknown_split():
    with pytest.raises(DatasetError):
        Dataset([AtomicSystem(numbers=[1], positions=[[0, 0, 0]])], ["test"])


# --------------------------------------------------------------------------- subsets


def test_element_subset_identity_and_unary(data):
    assert subset_by_elements(data, [8, 13, 29]).digest() == data.digest()
    unary = subset_by_elements(data, [13], mode="all")
    assert len(unary) > 0
    assert all(set(s.numbers.tolist()) == {13} for s in unary.systems)


def test_element_subset_matches_linear_scan(data):
    for allowed in ([13], [29], [13, 29], [8, 13]):
        for mode in ("catalyst", "all"):
            try:
                result = subset_by_elements(data, allowed, mode=mode)
            except DatasetError:
                result = None
            expected = set()
            for s in data.systems:
                atoms = [int(z) for z, t in zip(s.numbers, s.tags) if mode == "all" or t != ADSORBATE_TAG]
                if all(z in allowed for z in atoms):
                    expected.add(key(s))
            if result is None:
                assert not expected
                continue
            assert keys(result) == expected
            hist = Counter(int(z) for s in result.systems for z, t in zip(s.numbers, s.tags)
                           if mode == "all" or t != ADSORBATE_TAG)
            assert set(hist) <= set(allowed)
            assert [sp for sp in result.splits] == [data.splits[i] for i, s in enumerate(data.systems)
                                                   if key(s) in expected]


def test_subset_errors(data):
    with pytest.raises(DatasetError):
        subset_by_elements(data, [1])
    with pytest.raises(DatasetError):
        subset_by_size(data, 1)
    with pytest.raises(ContractViolation):
        subset_by_elements(data, [13], mode="adsorbate")
    with pytest.raises(DatasetError):
        subset_random(data, 161, seed=0)


def test_size_subset_matches_scan(data):
    assert subset_by_size(data, 8).digest() == data.digest()
    for cap in (2, 4, 6):
        result = subset_by_size(data, cap)
        assert keys(result) == {key(s) for s in data.systems if s.n_atoms <= cap}


def test_subsets_idempotent_and_commuting(data):
    once = subset_by_elements(data, [13, 29])
    assert subset_by_elements(once, [13, 29]).digest() == once.digest()
    a = subset_by_size(subset_by_elements(data, [13, 29]), 5)
    b = subset_by_elements(subset_by_size(data, 5), [13, 29])
    assert a.digest() == b.digest()
    assert subset_by_size(subset_by_size(data, 5), 5).digest() == subset_by_size(data, 5).digest()


def test_composed_restriction_single_catalyst_small_systems(data):
    xs = subset_by_size(subset_by_elements(data, [13]), 6)
    assert all(s.n_atoms <= 6 for s in xs.systems)
    assert all(set(s.numbers[s.tags != ADSORBATE_TAG].tolist()) == {13} for s in xs.systems)
    assert [op["op"] for op in xs.provenance["operations"]] == ["subset_by_elements", "subset_by_size"]


def test_random_subset_contract(data):
    full = subset_random(data, 160, seed=1)
    assert full.digest() == data.digest()
    a, b = subset_random(data, 16, seed=1), subset_random(data, 16, seed=2)
    assert a.counts()["train"] == 16
    assert keys(a, "train") != keys(b, "train")
    assert keys(a, "train") == keys(subset_random(data, 16, seed=1), "train")
    for split in ("val_id", "val_ood"):
        assert keys(a, split) == keys(data, split)


def test_random_subset_element_frequency_within_hypergeometric_bound():
    ds = generate_synthetic(make_config(n_train_trajectories=200, trajectory_length=5, n_val_trajectories=0,
                                        n_ood_trajectories=0, holdout_combos=()))
    train = ds.split("train")
    n_pop, n = len(train), len(train) // 10
    for seed in range(5):
        sample = subset_random(ds, n, seed=seed).split("train")
        for z in ds.elements():
            successes = sum(z in s.numbers for s in train)
            observed = sum(z in s.numbers for s in sample)
            mean = n * successes / n_pop
            var = n * successes / n_pop * (n_pop - successes) / n_pop * (n_pop - n) / (n_pop - 1)
            assert abs(observed - mean) <= 3 * math.sqrt(var)


@pytest.mark.parametrize("fraction", [0.0, 0.1, 0.25, 0.5])
def test_same_trajectory_split(data, fraction):
    out = split_same_vs_separate_trajectory(data, fraction, seed=3)
    total_train = data.counts()["train"]
    moved = keys(out, "val_same_traj")
    assert abs(len(moved) - fraction * total_train) <= 1
    assert moved <= keys(data, "train")
    assert moved.isdisjoint(keys(out, "train"))
    train_traj = {t for t, _ in keys(out, "train")}
    assert {t for t, _ in moved} <= train_traj
    for split in ("val_id", "val_ood"):
        assert keys(out, split) == keys(data, split)
        assert {t for t, _ in keys(out, split)}.isdisjoint(train_traj)
    assert out.digest() == split_same_vs_separate_trajectory(data, fraction, seed=3).digest()


def test_same_trajectory_split_errors(data):
    with pytest.raises(ContractViolation):
        split_same_vs_separate_trajectory(data, 1.0, seed=0)
    short = generate_synthetic(make_config(trajectory_length=1))
    with pytest.raises(DatasetError):
        split_same_vs_separate_trajectory(short, 0.1, seed=0)


# --------------------------------------------------------------------------- profile


def test_profile_hydrogen_molecule():
    h2 = AtomicSystem(numbers=[1, 1], positions=[[0, 0, 0], [0.74, 0, 0]])
    report = profile(Dataset([h2], ["train"]))
    assert report.n_elements == 1 and report.neighbor_pairs == [(1, 1)]


def test_profile_counts_only_pairs_within_radius():
    ho = AtomicSystem(numbers=[1, 8], positions=[[0, 0, 0], [8.0, 0, 0]])
    nacl = AtomicSystem(numbers=[11, 17], positions=[[0, 0, 0], [2.8, 0, 0]])
    report = profile(Dataset([ho, nacl], ["train", "val_id"]))
    assert report.elements == [1, 8, 11, 17]
    assert report.neighbor_pairs == [(11, 17)]
    assert report.mean_atoms == 2.0 and report.max_atoms == 2
    assert report.split_counts["train"] == 1 and report.split_counts["val_id"] == 1


def test_profile_uses_minimum_image():
    cell = np.eye(3) * 20
    s = AtomicSystem(numbers=[1, 8], positions=[[0.5, 0, 0], [19.0, 0, 0]], cell=cell, pbc=True)
    assert profile(Dataset([s], ["train"])).neighbor_pairs == [(1, 8)]


def test_profile_matches_brute_force(data):
    expected = set()
    for s in data.systems:
        for i in range(s.n_atoms):
            for j in range(s.n_atoms):
                if i == j:
                    continue
                d = s.positions[j] - s.positions[i]
                if s.pbc.any():
                    length = s.cell[0, 0]
                    d = d - length * np.round(d / length)
                if np.linalg.norm(d) < 5.0:
                    a, b = sorted((int(s.numbers[i]), int(s.numbers[j])))
                    expected.add((a, b))
    assert set(profile(data).neighbor_pairs) == expected


def test_profile_outputs(data):
    report = profile(data)
    csv_text = report.to_csv()
    assert csv_text.splitlines()[0] == "quantity,value"
    assert "n_elements,3" in csv_text
    assert report.to_table().splitlines()[0].startswith("n_elements")
    with pytest.raises(DatasetError):
        profile(Dataset([], []))
