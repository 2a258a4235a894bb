"""Structure-to-energy-and-forces metrics and relaxation quality scores."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import ContractViolation
from ..geometry import minimum_image_displacement
from ..model.batching import build_graph_data, collate, to_batch

DEFAULT_DISTANCE_THRESHOLDS = tuple(np.logspace(np.log10(0.01), np.log10(0.5), 10))
DEFAULT_FORCE_THRESHOLDS = tuple(np.logspace(np.log10(0.01), np.log10(0.5), 10))


@dataclass
class Metrics:
    energy_mae: float
    force_mae: float
    force_cos: float
    efwt: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "energy_mae": self.energy_mae,
            "force_mae": self.force_mae,
            "force_cos": self.force_cos,
            "efwt": self.efwt,
            "n_samples": self.n_samples,
        }


@dataclass
class MetricAccumulator:
    """Per-system terms kept separately; merging shards is concatenation.

    Totals use exactly rounded summation, so the result does not depend on
    the order in which systems or shards arrive.
    """

    energy_threshold: float = 0.02
    force_threshold: float = 0.03
    energy_err: list = field(default_factory=list)
    force_abs_sum: list = field(default_factory=list)
    force_count: list = field(default_factory=list)
    cos_sum: list = field(default_factory=list)
    cos_count: list = field(default_factory=list)
    within: list = field(default_factory=list)

    def add(self, e_pred, e_true, f_pred, f_true):
        f_pred = np.asarray(f_pred, dtype=np.float64).reshape(-1, 3)
        f_true = np.asarray(f_true, dtype=np.float64).reshape(-1, 3)
        if f_pred.shape != f_true.shape:
            raise ContractViolation("predicted and true forces differ in shape")
        de = abs(float(e_pred) - float(e_true))
        diff = np.abs(f_pred - f_true)
        self.energy_err.append(de)
        self.force_abs_sum.append(math.fsum(diff.ravel()))
        self.force_count.append(diff.size)
        np_ = np.linalg.norm(f_pred, axis=1)
        nt = np.linalg.norm(f_true, axis=1)
        ok = (np_ > 0) & (nt > 0)
        cos = np.einsum("ij,ij->i", f_pred[ok], f_true[ok]) / (np_[ok] * nt[ok])
        self.cos_sum.append(math.fsum(np.clip(cos, -1.0, 1.0)))
        self.cos_count.append(int(ok.sum()))
        max_err = float(diff.max()) if diff.size else 0.0
        self.within.append(de <= self.energy_threshold and max_err <= self.force_threshold)

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        out = MetricAccumulator(self.energy_threshold, self.force_threshold)
        for name in ("energy_err", "force_abs_sum", "force_count", "cos_sum", "cos_count", "within"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        return out

    def result(self) -> Metrics:
        n = len(self.energy_err)
        if n == 0:
            raise ContractViolation("no systems evaluated")
        n_comp = sum(self.force_count)
        n_cos = sum(self.cos_count)
        return Metrics(
            energy_mae=math.fsum(self.energy_err) / n,
            force_mae=math.fsum(self.force_abs_sum) / n_comp if n_comp else float("nan"),
            force_cos=math.fsum(self.cos_sum) / n_cos if n_cos else float("nan"),
            efwt=sum(self.within) / n,
            n_samples=n,
        )


def compute_metrics(e_pred, e_true, f_pred, f_true, energy_threshold=0.02, force_threshold=0.03) -> Metrics:
    """Metrics from per-system energies and per-system ``(N_i, 3)`` force arrays.

    Force MAE averages over every atom-component; the cosine averages over
    atoms where neither force is zero; EFwT counts systems whose energy error
    and largest force-component error are both within threshold.
    """
    if len(e_pred) != len(e_true) or len(f_pred) != len(f_true) or len(e_pred) != len(f_pred):
        raise ContractViolation("prediction and label counts differ")
    acc = MetricAccumulator(energy_threshold, force_threshold)
    for ep, et, fp, ft in zip(e_pred, e_true, f_pred, f_true):
        acc.add(ep, et, fp, ft)
    return acc.result()


def _canonical_key(system) -> str:
    h = hashlib.sha256()
    h.update(system.trajectory_id.encode())
    h.update(np.int64(system.frame).tobytes())
    h.update(np.ascontiguousarray(system.numbers).tobytes())
    h.update(np.ascontiguousarray(system.positions).tobytes())
    h.update(np.ascontiguousarray(system.cell).tobytes())
    return h.hexdigest()


def predict_systems(model, systems, normalizer=None, batch_size: int = 32, graph_data=None):
    """Denormalized ``(energies, forces_list)`` in input order.

    Systems are batched in a canonical order so each prediction is the same
    whatever order the caller passes them in.
    """
    if graph_data is None:
        graph_data = [build_graph_data(s, model.config) for s in systems]
    order = sorted(range(len(systems)), key=lambda i: _canonical_key(systems[i]))
    energies = [None] * len(systems)
    forces = [None] * len(systems)
    was_training = model.training
    model.eval()
    try:
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            batch = to_batch(collate([graph_data[i] for i in idx]), model.dtype)
            with torch.no_grad():
                out = model(batch)
            e = out["energy"].detach().double().numpy()
            f = out["forces"].detach().double().numpy()
            offset = 0
            for k, i in enumerate(idx):
                n = systems[i].n_atoms
                ei, fi = float(e[k]), f[offset : offset + n]
                if normalizer is not None:
                    ei, fi = normalizer.invert_energy(ei), normalizer.invert_forces(fi)
                energies[i], forces[i] = ei, np.array(fi)
                offset += n
    finally:
        model.train(was_training)
    return energies, forces


def evaluate(model, systems, normalizer=None, energy_threshold=0.02, force_threshold=0.03,
             batch_size: int = 32, graph_data=None) -> Metrics:
    if len(systems) == 0:
        raise ContractViolation("evaluation split is empty")
    energies, forces = predict_systems(model, systems, normalizer, batch_size, graph_data)
    return compute_metrics(energies, [s.energy for s in systems], forces, [s.forces for s in systems],
                           energy_threshold, force_threshold)


def structure_distance(a, b) -> float:
    """Mean minimum-image distance between corresponding atoms of two structures."""
    if a.n_atoms != b.n_atoms:
        raise ContractViolation("structures have different atom counts")
    d = [np.linalg.norm(minimum_image_displacement(b.positions[i], a.positions[i], b.cell, b.pbc)[0])
         for i in range(a.n_atoms)]
    return float(np.mean(d))


def adwt_afbt(relaxed, reference, oracle_force_fn=None, distance_thresholds=DEFAULT_DISTANCE_THRESHOLDS,
              force_thresholds=DEFAULT_FORCE_THRESHOLDS):
    """Average distance within threshold and average force below threshold.

    ADwT averages, over distance thresholds, the fraction of structures whose
    mean per-atom (minimum-image) distance to the reference is below the
    threshold. AFbT averages, over force thresholds, the fraction whose
    largest oracle force on a free atom is below the threshold; it is ``None``
    without an oracle.
    """
    relaxed, reference = list(relaxed), list(reference)
    if len(relaxed) != len(reference) or not relaxed:
        raise ContractViolation("need matching, non-empty lists of structures")
    dist = np.array([structure_distance(r, ref) for r, ref in zip(relaxed, reference)])
    adwt = float(np.mean([np.mean(dist < t) for t in distance_thresholds]))
    afbt = None
    if oracle_force_fn is not None:
        fmax = []
        for r in relaxed:
            _, f = oracle_force_fn(r)
            norms = np.linalg.norm(np.asarray(f).reshape(-1, 3), axis=1)[~r.fixed]
            fmax.append(float(norms.max()) if norms.size else 0.0)
        fmax = np.array(fmax)
        afbt = float(np.mean([np.mean(fmax < t) for t in force_thresholds]))
    return adwt, afbt
