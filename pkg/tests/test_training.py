import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_config
from gemnet_oc import checkpoint
from gemnet_oc.datasets import PairPotential, PairTerm, SyntheticConfig, generate_synthetic
from gemnet_oc.errors import ConfigError, ContractViolation, NormalizationError, NumericError, RelaxationError
from gemnet_oc.geometry import AtomicSystem
from gemnet_oc.model import init_model
from gemnet_oc.training import (
    CURVE_COLUMNS,
    LRSchedule,
    MetricAccumulator,
    Normalizer,
    TrainConfig,
    adwt_afbt,
    compute_metrics,
    evaluate,
    fit_normalizer,
    loss,
    relax,
    train,
)


def tensors(*arrays):
    return [torch.as_tensor(np.asarray(a, dtype=np.float64)) for a in arrays]


# --------------------------------------------------------------------------- loss


def test_loss_energy_only():
    value = loss(*tensors([1.0], [0.0], [[0, 0, 0]], [[0, 0, 0]]), [0], 1.0, 0.0)
    assert float(value) == 1.0


def test_loss_force_only_three_four_five():
    value = loss(*tensors([0.0], [0.0], [[3.0, 4.0, 0.0]], [[0.0, 0.0, 0.0]]), [0], 0.0, 1.0)
    assert float(value) == pytest.approx(5.0, abs=1e-12)


def test_loss_hand_evaluated_mixed_case():
    e_pred, e_true, f_pred, f_true = tensors([0.5], [0.0], [[1.0, 0, 0], [0, 0, 0]], [[0, 0, 0], [0, 0, 0]])
    value = loss(e_pred, e_true, f_pred, f_true, [0, 0], 1.0, 2.0)
    assert float(value) == pytest.approx(0.5 + 2.0 * (1.0 + 0.0) / 2, abs=1e-12)


def test_loss_averages_over_systems():
    e_pred, e_true, f_pred, f_true = tensors([1.0, 0.0], [0.0, 0.0], [[0, 0, 0], [0, 0, 2.0], [0, 0, 0]], np.zeros((3, 3)))
    value = loss(e_pred, e_true, f_pred, f_true, [0, 1, 1], 1.0, 1.0)
    # system 0: 1 + 0; system 1: 0 + (2 + 0)/2
    assert float(value) == pytest.approx((1.0 + 1.0) / 2, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_loss_non_negative_and_zero_only_at_labels(seed):
    rng = np.random.default_rng(seed)
    n_sys = int(rng.integers(1, 4))
    counts = rng.integers(1, 4, n_sys)
    atom_system = np.repeat(np.arange(n_sys), counts)
    e, f = rng.normal(size=n_sys), rng.normal(size=(len(atom_system), 3))
    assert float(loss(*tensors(e, e, f, f), atom_system, 1.0, 3.0)) == 0.0
    e2, f2 = e.copy(), f.copy()
    if rng.uniform() < 0.5:
        e2[rng.integers(n_sys)] += rng.uniform(0.1, 1)
    else:
        f2[rng.integers(len(f2)), rng.integers(3)] += rng.uniform(0.1, 1)
    assert float(loss(*tensors(e2, e, f2, f), atom_system, 1.0, 3.0)) > 0.0


def test_train_config_invariants():
    with pytest.raises(ConfigError):
        TrainConfig(energy_coef=0.0, force_coef=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(energy_coef=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 1.0})


# --------------------------------------------------------------------------- normalizer


def test_normalizer_population_std():
    n = fit_normalizer([1.0, 3.0])
    assert (n.mean, n.std) == (2.0, 1.0)


def test_normalizer_mean_only_leaves_forces():
    n = fit_normalizer([1.0, 3.0, 8.0], mode="mean_only")
    f = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(n.apply_forces(f), f)
    assert n.apply_energy(4.0) == 0.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20).filter(lambda v: np.std(v) > 1e-3),
       st.floats(-1e4, 1e4))
def test_normalizer_round_trip(energies, e):
    n = fit_normalizer(energies)
    assert n.invert_energy(n.apply_energy(e)) == pytest.approx(e, rel=1e-12, abs=1e-12)
    f = np.array([e, -e, 0.5])
    assert np.allclose(n.invert_forces(n.apply_forces(f)), f, rtol=1e-12, atol=1e-12)


def test_normalizer_keeps_force_energy_consistency():
    # F = -dE/dx for E = k x^2 survives normalization because both share the scale
    n = fit_normalizer([1.0, 5.0, 9.0])
    x, k, h = 0.7, 2.5, 1e-6
    e = lambda y: n.apply_energy(k * y * y)  # noqa: E731
    numeric = -(e(x + h) - e(x - h)) / (2 * h)
    assert n.apply_forces(np.array([-2 * k * x]))[0] == pytest.approx(numeric, rel=1e-8)


def test_normalizer_errors():
    with pytest.raises(NormalizationError):
        fit_normalizer([2.0, 2.0, 2.0])
    with pytest.raises(NormalizationError):
        fit_normalizer([2.0])
    with pytest.raises(NormalizationError):
        Normalizer(0.0, 0.0, "standardize")


# --------------------------------------------------------------------------- metrics


def hand_fixture():
    e_pred = [1.00, 0.0, -2.0]
    e_true = [1.01, 0.5, -2.0]
    f_pred = [np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0], [0, 0, 0]]), np.array([[0, 0, -1.0]])]
    f_true = [np.array([[1.0, 0, 0.02]]), np.array([[0, 1.0, 0], [0, 0, 1.0]]), np.array([[0, 0, 1.0]])]
    return e_pred, e_true, f_pred, f_true


def test_metrics_hand_table():
    m = compute_metrics(*hand_fixture())
    assert m.energy_mae == pytest.approx((0.01 + 0.5 + 0.0) / 3, abs=1e-12)
    assert m.force_mae == pytest.approx((0.02 + 1.0 + 2.0) / 12, abs=1e-12)
    # atom 2 of system 2 has a zero predicted force and is skipped
    assert m.force_cos == pytest.approx((1 / math.sqrt(1.0004) + 1.0 - 1.0) / 3, abs=1e-12)
    assert m.efwt == pytest.approx(1 / 3, abs=1e-12)
    assert m.n_samples == 3


def test_metrics_perfect_and_antiparallel():
    e, _, f, _ = hand_fixture()
    perfect = compute_metrics(e, e, f, f)
    assert (perfect.energy_mae, perfect.force_mae, perfect.force_cos, perfect.efwt) == (0.0, 0.0, 1.0, 1.0)
    anti = compute_metrics(e, e, [-x for x in f], f)
    assert anti.force_cos == pytest.approx(-1.0, abs=1e-15)


def test_metrics_order_invariant_and_mergeable():
    e_pred, e_true, f_pred, f_true = hand_fixture()
    full = compute_metrics(e_pred, e_true, f_pred, f_true)
    order = [2, 0, 1]
    shuffled = compute_metrics(*[[x[i] for i in order] for x in (e_pred, e_true, f_pred, f_true)])
    assert shuffled == full
    a, b = MetricAccumulator(), MetricAccumulator()
    a.add(e_pred[0], e_true[0], f_pred[0], f_true[0])
    for i in (1, 2):
        b.add(e_pred[i], e_true[i], f_pred[i], f_true[i])
    assert b.merge(a).result() == full


def test_metrics_in_normalized_space_match_original_units():
    rng = np.random.default_rng(0)
    n = fit_normalizer(rng.normal(-40, 7, 50))
    e_true = list(rng.normal(-40, 7, 6))
    f_true = [rng.normal(size=(k, 3)) for k in (2, 3, 4, 2, 5, 1)]
    e_pred_n = [n.apply_energy(e) + rng.normal(0, 0.05) for e in e_true]
    f_pred_n = [n.apply_forces(f) + rng.normal(0, 0.05, f.shape) for f in f_true]
    original = compute_metrics([n.invert_energy(e) for e in e_pred_n], e_true,
                               [n.invert_forces(f) for f in f_pred_n], f_true)
    scaled = compute_metrics(e_pred_n, [n.apply_energy(e) for e in e_true], f_pred_n,
                             [n.apply_forces(f) for f in f_true])
    assert abs(scaled.energy_mae * n.std - original.energy_mae) <= 1e-10
    assert abs(scaled.force_mae * n.std - original.force_mae) <= 1e-10
    assert abs(scaled.force_cos - original.force_cos) <= 1e-10


def test_adwt_afbt_hand_table():
    base = AtomicSystem(numbers=[1, 1], positions=[[0, 0, 0], [1, 0, 0]])
    refs = [base] * 3
    moved = [base.replace(positions=base.positions + np.array([d, 0, 0])) for d in (0.0, 0.05, 1.0)]
    max_forces = {0.0: 0.005, 0.05: 0.2, 1.0: 1.0}

    def oracle(system):
        f = np.zeros((2, 3))
        f[1, 2] = max_forces[round(float(system.positions[0, 0]), 6)]
        return 0.0, f

    adwt, afbt = adwt_afbt(moved, refs, oracle, distance_thresholds=(0.01, 0.1, 0.5), force_thresholds=(0.01, 0.1, 0.5))
    assert adwt == pytest.approx((1 / 3 + 2 / 3 + 2 / 3) / 3, abs=1e-12)
    assert afbt == pytest.approx((1 / 3 + 1 / 3 + 2 / 3) / 3, abs=1e-12)
    assert adwt_afbt(refs, refs)[0] == 1.0
    far = [base.replace(positions=base.positions + 5.0)] * 3
    assert adwt_afbt(far, refs)[0] == 0.0


def test_adwt_uses_minimum_image():
    cell = np.eye(3) * 10
    a = AtomicSystem(numbers=[1], positions=[[0.01, 0, 0]], cell=cell, pbc=True)
    b = AtomicSystem(numbers=[1], positions=[[9.99, 0, 0]], cell=cell, pbc=True)
    assert adwt_afbt([a], [b], distance_thresholds=(0.05,))[0] == 1.0


# --------------------------------------------------------------------------- schedule


def test_schedule_warmup_and_decay():
    s = LRSchedule(1e-3, warmup_steps=4, decay_rate=0.1, decay_steps=10, min_lr=0.0)
    assert s.lr(0) == pytest.approx(0.25e-3 * 0.1 ** 0)
    assert s.lr(3) == pytest.approx(1e-3 * 0.1 ** 0.3)
    assert s.lr(20) == pytest.approx(1e-3 * 0.01)


def test_plateau_reduces_after_patience_bad_evals():
    s = LRSchedule(1.0, patience=3, plateau_factor=0.5, min_lr=0.0)
    assert s.observe(1.0) is False
    assert [s.observe(1.0) for _ in range(3)] == [False, False, True]
    assert s.lr(0) == 0.5
    assert s.observe(0.5) is False and s.lr(0) == 0.5
    state = s.state()
    t = LRSchedule(1.0, patience=3, plateau_factor=0.5, min_lr=0.0)
    t.load_state(state)
    assert t.lr(7) == s.lr(7)


def test_schedule_respects_min_lr():
    s = LRSchedule(1.0, patience=1, plateau_factor=0.1, min_lr=0.05)
    for _ in range(5):
        s.observe(1.0)
    assert s.lr(0) == 0.05


# --------------------------------------------------------------------------- training loop


@pytest.fixture(scope="module")
def tiny_data():
    ds = generate_synthetic(SyntheticConfig(n_train_trajectories=3, n_val_trajectories=1, trajectory_length=4,
                                            min_atoms=3, max_atoms=5, seed=3))
    return ds.split("train"), ds.split("val_id")


def tiny_train_config(**changes):
    base = dict(batch_size=4, max_epochs=3, warmup_steps=2, lr=2e-3, scaling_batches=1, throughput_warmup=1,
                eval_interval=0, seed=11)
    base.update(changes)
    return TrainConfig(**base)


def test_memorizes_constant_energy_of_one_system():
    ds = generate_synthetic(SyntheticConfig(n_train_trajectories=1, n_val_trajectories=0, trajectory_length=1,
                                            min_atoms=4, max_atoms=4))
    s = ds.systems[0]
    cfg = TrainConfig(energy_coef=1.0, force_coef=0.0, lr=5e-3, warmup_steps=0, decay_steps=100, decay_rate=0.01,
                      batch_size=1, max_epochs=1000, max_steps=200, eval_interval=25, normalization="none",
                      scaling_batches=1, throughput_warmup=0, plateau_patience=1000, seed=0)
    result = train(init_model(small_config(), seed=0), [s], [s], cfg)
    assert result.steps == 200
    assert result.initial_metrics.energy_mae > 1.0
    # the best checkpoint is chosen on force error; with forces switched off judge the final state
    assert result.curves[-1]["val_energy_mae"] <= 1e-3


def test_training_outputs_and_best_checkpoint(tmp_path, tiny_data):
    train_set, val_set = tiny_data
    result = train(init_model(small_config(), seed=1), train_set, val_set, tiny_train_config(), out_dir=tmp_path)
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "latest.ckpt").exists()
    header = (tmp_path / "curves.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == CURVE_COLUMNS
    assert len(result.curves) == 1 + 3  # untrained row plus one per epoch
    assert result.steps == 3 * math.ceil(len(train_set) / 4)
    assert result.best_metrics.force_mae == min(r["val_force_mae"] for r in result.curves[1:])
    # the returned model holds the best parameters
    again = evaluate(result.model, val_set, result.normalizer)
    assert again.force_mae == pytest.approx(result.best_metrics.force_mae, rel=1e-12)
    assert result.throughput["warmup_batches"] == 1
    assert result.throughput["timed_batches"] == result.steps - 1
    assert result.throughput["samples_per_sec"] > 0
    params, meta = checkpoint.load(tmp_path / "best.ckpt")
    assert meta["step"] == result.best_step
    assert meta["normalizer"] == result.normalizer.to_dict()


def test_training_is_bit_reproducible(tmp_path, tiny_data):
    train_set, val_set = tiny_data
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        train(init_model(small_config(), seed=2), train_set, val_set, tiny_train_config(), out_dir=out)
        digests.append((checkpoint.digest(out / "best.ckpt"), checkpoint.digest(out / "latest.ckpt")))
    assert digests[0] == digests[1]


def test_resume_matches_uninterrupted_run(tmp_path, tiny_data):
    train_set, val_set = tiny_data
    cfg = tiny_train_config(eval_interval=2, max_epochs=3)
    full = tmp_path / "full"
    train(init_model(small_config(), seed=4), train_set, val_set, cfg, out_dir=full)
    # interrupt at an evaluation boundary in the middle of the second epoch
    part = tmp_path / "part"
    train(init_model(small_config(), seed=4), train_set, val_set, cfg.replace(max_steps=4), out_dir=part)
    assert json.loads(json.dumps(checkpoint.load(part / "latest.ckpt")[1]["train_state"]))["batch_in_epoch"] == 1
    resumed = train(init_model(small_config(), seed=99), train_set, val_set, cfg, out_dir=part, resume=True)
    assert checkpoint.digest(part / "latest.ckpt") == checkpoint.digest(full / "latest.ckpt")
    assert checkpoint.digest(part / "best.ckpt") == checkpoint.digest(full / "best.ckpt")
    assert resumed.steps == 9


def test_resume_without_checkpoint_fails(tmp_path, tiny_data):
    train_set, val_set = tiny_data
    with pytest.raises(ContractViolation):
        train(init_model(small_config()), train_set, val_set, tiny_train_config(), out_dir=tmp_path, resume=True)


def test_non_finite_loss_dumps_state(tmp_path, tiny_data):
    train_set, val_set = tiny_data
    poisoned = [s.replace(energy=float("inf")) for s in train_set]
    cfg = tiny_train_config(normalization="none")
    with pytest.raises(NumericError):
        train(init_model(small_config()), poisoned, val_set, cfg, out_dir=tmp_path)
    record = json.loads((tmp_path / "numeric_failure.json").read_text())
    assert record["step"] == 0 and record["systems"]


def test_empty_split_rejected(tiny_data):
    train_set, _ = tiny_data
    with pytest.raises(ContractViolation):
        train(init_model(small_config()), train_set, [], tiny_train_config())


# --------------------------------------------------------------------------- relaxation

SIGMA = 1.0
R_MIN = 2 ** (1 / 6) * SIGMA


def lj_potential():
    return PairPotential({(1, 1): PairTerm("lj", 1.0, R_MIN)}, cutoff=20.0)


def dimer(r, fixed=None):
    return AtomicSystem(numbers=[1, 1], positions=[[0, 0, 0], [r, 0, 0]], fixed=fixed)


@pytest.mark.parametrize("rule", ["lbfgs", "gd"])
def test_lj_dimer_relaxes_to_analytic_minimum(rule):
    result = relax(lj_potential().energy_forces, dimer(1.2 * R_MIN), max_steps=2000, fmax=1e-5, step_rule=rule)
    assert result.converged
    r = np.linalg.norm(result.final.positions[1] - result.final.positions[0])
    assert abs(r - R_MIN) <= 1e-3
    assert all(b <= a + 1e-12 for a, b in zip(result.energies, result.energies[1:]))


def test_minimum_is_a_fixed_point():
    start = dimer(R_MIN)
    result = relax(lj_potential().energy_forces, start, fmax=1e-3)
    assert result.converged and result.steps == 0
    assert np.array_equal(result.final.positions, start.positions)


def test_fixed_atoms_do_not_move():
    start = dimer(1.3 * R_MIN, fixed=[True, False])
    result = relax(lj_potential().energy_forces, start, fmax=1e-6, max_steps=500)
    assert np.array_equal(result.final.positions[0], start.positions[0])
    assert result.final.positions[1, 0] == pytest.approx(R_MIN, abs=1e-3)


def uphill(system):
    x = system.positions
    return float(np.sum(x * x)), x.copy()  # forces point up the energy slope


def test_divergence_raises_with_trajectory_gd():
    with pytest.raises(RelaxationError) as info:
        relax(uphill, dimer(1.0), max_steps=100, divergence_patience=5, step_rule="gd")
    # the start plus five accepted uphill steps
    assert len(info.value.trajectory) == 6


def test_divergence_raises_lbfgs_without_moving():
    start = dimer(1.0)
    with pytest.raises(RelaxationError) as info:
        relax(uphill, start, max_steps=100, divergence_patience=5)
    # every uphill trial was rejected, so only the start was ever accepted
    assert len(info.value.trajectory) == 1
    assert np.array_equal(info.value.trajectory[0].positions, start.positions)


def test_relax_argument_contract():
    with pytest.raises(ContractViolation):
        relax(lj_potential().energy_forces, dimer(1.5), step_rule="newton")
