"""Training loop with validation, checkpointing and resume."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import checkpoint
from ..errors import ContractViolation, NumericError
from ..model.batching import build_graph_data, collate, to_batch
from ..model.io import load_state, model_state
from ..model.scaling import fit_scaling_factors
from .config import TrainConfig
from .loss import loss as loss_fn
from .metrics import Metrics, evaluate
from .normalizer import Normalizer, fit_normalizer
from .schedule import LRSchedule

CURVE_COLUMNS = ("step", "lr", "train_loss", "val_energy_mae", "val_force_mae", "val_force_cos",
                 "val_efwt", "samples_per_sec")
BEST_NAME = "best.ckpt"
LATEST_NAME = "latest.ckpt"
CURVES_NAME = "curves.csv"


@dataclass
class TrainResult:
    model: object
    normalizer: Normalizer
    curves: list
    initial_metrics: Metrics
    best_metrics: Metrics
    best_step: int
    steps: int
    throughput: dict
    wall_time: float
    best_digest: str | None = None
    extra: dict = field(default_factory=dict)


def _metrics_from(row: dict) -> Metrics:
    return Metrics(row["val_energy_mae"], row["val_force_mae"], row["val_force_cos"], row["val_efwt"], 0)


class _Targets:
    """Normalized labels per system, as numpy arrays."""

    def __init__(self, systems, normalizer: Normalizer):
        self.energy = np.array([normalizer.apply_energy(s.energy) for s in systems])
        self.forces = [normalizer.apply_forces(s.forces) for s in systems]

    def batch(self, idx, dtype):
        e = torch.as_tensor(self.energy[idx], dtype=dtype)
        f = torch.as_tensor(np.concatenate([self.forces[i] for i in idx]), dtype=dtype)
        return e, f


def _optimizer_arrays(model, optimizer) -> dict:
    names = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            for key, value in optimizer.state.get(p, {}).items():
                out[f"optim/{names[id(p)]}/{key}"] = np.asarray(value.detach().double().numpy())
    return out


def _load_optimizer(model, optimizer, arrays: dict) -> None:
    params = list(model.named_parameters())
    sd = optimizer.state_dict()
    state = {}
    for index, (name, p) in enumerate(params):
        entries = {k.split("/")[-1]: v for k, v in arrays.items() if k.startswith(f"optim/{name}/")}
        if entries:
            state[index] = {
                key: torch.as_tensor(v, dtype=torch.float32 if key == "step" else p.dtype).reshape(
                    () if key == "step" else p.shape)
                for key, v in entries.items()
            }
    sd["state"] = state
    optimizer.load_state_dict(sd)


def _write_curves(path: Path, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k]) for k in CURVE_COLUMNS})


def _read_curves(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def train(model, train_systems, val_systems, config: TrainConfig, out_dir=None, resume: bool = False,
          log=None, train_graphs=None, val_graphs=None) -> TrainResult:
    """Fit ``model`` on ``train_systems``; keep the parameters with the best validation force MAE.

    With ``out_dir`` the learning curves, ``best.ckpt`` and a resumable
    ``latest.ckpt`` are written there; ``resume`` continues from the latter.
    """
    if not train_systems or not val_systems:
        raise ContractViolation("training needs non-empty train and validation splits")
    log = log or (lambda msg: None)
    start_wall = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    cfg = model.config
    dtype = model.dtype
    if train_graphs is None:
        train_graphs = [build_graph_data(s, cfg) for s in train_systems]
    if val_graphs is None:
        val_graphs = [build_graph_data(s, cfg) for s in val_systems]
    normalizer = fit_normalizer([s.energy for s in train_systems], config.normalization)
    targets = _Targets(train_systems, normalizer)
    n_train = len(train_systems)
    batches_per_epoch = math.ceil(n_train / config.batch_size)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2),
                                 eps=config.eps, weight_decay=config.weight_decay, amsgrad=True, foreach=False)
    schedule = LRSchedule(config.lr, config.warmup_steps, config.decay_rate, config.decay_steps,
                          config.plateau_factor, config.plateau_patience, config.plateau_threshold, config.min_lr)
    rng = np.random.default_rng(config.seed)

    def run_eval():
        return evaluate(model, val_systems, normalizer, config.energy_threshold, config.force_threshold,
                        config.eval_batch_size, val_graphs)

    step = 0
    epoch = 0
    batch_in_epoch = 0
    epoch_rng_state = rng.bit_generator.state
    curves: list = []
    best_value = float("inf")
    best_step = 0
    best_params = None
    initial = None
    latest = out / LATEST_NAME if out is not None else None

    if resume:
        if latest is None or not latest.exists():
            raise ContractViolation("nothing to resume: no latest checkpoint in the output directory")
        params, meta = checkpoint.load(latest)
        own = set(model.state_dict())
        load_state(model, {k: v for k, v in params.items() if k in own})
        _load_optimizer(model, optimizer, {k: v for k, v in params.items() if k.startswith("optim/")})
        state = meta["train_state"]
        step, epoch, batch_in_epoch = state["step"], state["epoch"], state["batch_in_epoch"]
        epoch_rng_state = state["epoch_rng_state"]
        schedule.load_state(state["schedule"])
        best_value, best_step = state["best_value"], state["best_step"]
        normalizer = Normalizer.from_dict(meta["normalizer"])
        curves = _read_curves(out / CURVES_NAME)
        initial = _metrics_from(curves[0])
        best_params = {k[len("best/"):]: v for k, v in params.items() if k.startswith("best/")}
        log(f"resumed at step {step} (epoch {epoch}, batch {batch_in_epoch})")
    else:
        if cfg.scaling_factors:
            k = min(config.scaling_batches, batches_per_epoch)
            batches = [
                to_batch(collate(train_graphs[b * config.batch_size : (b + 1) * config.batch_size]), dtype)
                for b in range(k)
            ]
            fit_scaling_factors(model, batches)
        initial = run_eval()
        curves.append({"step": 0, "lr": schedule.lr(0), "train_loss": float("nan"),
                       "val_energy_mae": initial.energy_mae, "val_force_mae": initial.force_mae,
                       "val_force_cos": initial.force_cos, "val_efwt": initial.efwt, "samples_per_sec": 0.0})
        log(f"untrained: force MAE {initial.force_mae:.5g}, energy MAE {initial.energy_mae:.5g}")

    def snapshot():
        return {k: v.detach().clone() for k, v in model.state_dict().items()}

    if best_params is not None and best_params:
        best_tensors = {k: torch.as_tensor(v) for k, v in best_params.items()}
    else:
        best_tensors = snapshot()

    meta_common = {
        "model_config": cfg.to_dict(),
        "train_config": config.to_dict(),
        "normalizer": normalizer.to_dict(),
    }

    def save_best():
        if out is None:
            return None
        params = {k: v.detach().double().numpy() for k, v in best_tensors.items()}
        return checkpoint.save(out / BEST_NAME, params, {**meta_common, "step": best_step})

    def save_latest():
        if out is None:
            return
        params = model_state(model)
        params.update(_optimizer_arrays(model, optimizer))
        params.update({f"best/{k}": v.detach().double().numpy() for k, v in best_tensors.items()})
        state = {"step": step, "epoch": epoch, "batch_in_epoch": batch_in_epoch,
                 "epoch_rng_state": epoch_rng_state, "schedule": schedule.state(),
                 "best_value": best_value, "best_step": best_step}
        checkpoint.save(latest, params, {**meta_common, "train_state": state})
        _write_curves(out / CURVES_NAME, curves)

    if out is not None and not resume:
        save_latest()

    timed_samples = 0
    timed_seconds = 0.0
    batches_seen = 0
    loss_sum, loss_count = 0.0, 0
    max_steps = config.max_steps if config.max_steps is not None else config.max_epochs * batches_per_epoch
    model.train()

    def evaluate_and_record():
        nonlocal best_value, best_step, best_tensors, loss_sum, loss_count
        metrics = run_eval()
        rate = timed_samples / timed_seconds if timed_seconds > 0 else 0.0
        row = {"step": step, "lr": schedule.lr(max(step - 1, 0)),
               "train_loss": loss_sum / loss_count if loss_count else float("nan"),
               "val_energy_mae": metrics.energy_mae, "val_force_mae": metrics.force_mae,
               "val_force_cos": metrics.force_cos, "val_efwt": metrics.efwt, "samples_per_sec": rate}
        curves.append(row)
        loss_sum, loss_count = 0.0, 0
        if metrics.force_mae < best_value:
            best_value, best_step = metrics.force_mae, step
            best_tensors = snapshot()
            save_best()
        if schedule.observe(metrics.force_mae):
            log(f"step {step}: plateau, learning rate scale now {schedule.plateau_scale:g}")
        model.train()
        log(f"step {step} epoch {epoch}: loss {row['train_loss']:.5g} val force MAE {metrics.force_mae:.5g} "
            f"energy MAE {metrics.energy_mae:.5g} ({rate:.1f} samples/s)")

    while epoch < config.max_epochs and step < max_steps:
        rng.bit_generator.state = epoch_rng_state
        perm = rng.permutation(n_train)
        next_epoch_state = rng.bit_generator.state
        while batch_in_epoch < batches_per_epoch and step < max_steps:
            idx = perm[batch_in_epoch * config.batch_size : (batch_in_epoch + 1) * config.batch_size]
            t0 = time.perf_counter()
            batch = to_batch(collate([train_graphs[i] for i in idx]), dtype)
            e_true, f_true = targets.batch(idx, dtype)
            lr = schedule.lr(step)
            for group in optimizer.param_groups:
                group["lr"] = lr
            try:
                pred = model(batch)
            except NumericError as exc:
                _dump_failure(out, step, epoch, idx, train_systems, float("nan"), exc.block, lr)
                raise
            value = loss_fn(pred["energy"], e_true, pred["forces"], f_true, batch.atom_system,
                            config.energy_coef, config.force_coef)
            if not torch.isfinite(value):
                bad = float(value.detach())
                _dump_failure(out, step, epoch, idx, train_systems, bad, None, lr, pred.get("diagnostics"))
                raise NumericError(f"non-finite loss at step {step}", block=None, state={"step": step, "loss": bad})
            optimizer.zero_grad(set_to_none=True)
            value.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            elapsed = time.perf_counter() - t0
            batches_seen += 1
            if batches_seen > config.throughput_warmup:
                timed_samples += len(idx)
                timed_seconds += elapsed
            loss_sum += float(value.detach())
            loss_count += 1
            step += 1
            batch_in_epoch += 1
            if config.eval_interval and step % config.eval_interval == 0:
                evaluate_and_record()
                save_latest()
        if batch_in_epoch >= batches_per_epoch:
            epoch += 1
            batch_in_epoch = 0
            epoch_rng_state = next_epoch_state
            if not config.eval_interval:
                evaluate_and_record()
            save_latest()

    if loss_count and (not curves or curves[-1]["step"] != step):
        evaluate_and_record()
        save_latest()

    model.load_state_dict(best_tensors)
    digest = save_best()
    best_row = min(curves[1:], key=lambda r: r["val_force_mae"]) if len(curves) > 1 else curves[0]
    throughput = {
        "samples_per_sec": timed_samples / timed_seconds if timed_seconds > 0 else float("nan"),
        "timed_batches": max(batches_seen - config.throughput_warmup, 0),
        "warmup_batches": min(batches_seen, config.throughput_warmup),
    }
    return TrainResult(
        model=model,
        normalizer=normalizer,
        curves=curves,
        initial_metrics=initial,
        best_metrics=_metrics_from(best_row),
        best_step=best_step,
        steps=step,
        throughput=throughput,
        wall_time=time.perf_counter() - start_wall,
        best_digest=digest,
    )


def _dump_failure(out, step, epoch, idx, systems, loss_value, block, lr, diagnostics=None):
    if out is None:
        return
    record = {
        "step": step,
        "epoch": epoch,
        "loss": loss_value if math.isfinite(loss_value) else str(loss_value),
        "block": block,
        "lr": lr,
        "systems": [{"trajectory": systems[i].trajectory_id, "frame": int(systems[i].frame)} for i in idx],
        "diagnostics": diagnostics,
    }
    (Path(out) / "numeric_failure.json").write_text(json.dumps(record, indent=2, default=str), encoding="utf-8")
