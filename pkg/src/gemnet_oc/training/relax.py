"""Structure relaxation driven by a force function (oracle or model)."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, RelaxationError
from ..geometry import AtomicSystem
from ..model.batching import build_graph_data
from .metrics import predict_systems

STEP_RULES = ("lbfgs", "gd")


@dataclass
class RelaxResult:
    final: AtomicSystem
    trajectory: list
    energies: list
    max_forces: list
    converged: bool
    steps: int
    reason: str = ""
    extra: dict = field(default_factory=dict)


def _max_force(forces, free) -> float:
    f = np.linalg.norm(forces[free], axis=1)
    return float(f.max()) if f.size else 0.0


def _cap(step, max_step):
    norms = np.linalg.norm(step, axis=1)
    biggest = norms.max() if norms.size else 0.0
    if biggest > max_step:
        step = step * (max_step / biggest)
    return step


def relax(force_fn, system: AtomicSystem, max_steps: int = 300, fmax: float = 0.01, step_rule: str = "lbfgs",
          max_step: float = 0.2, memory: int = 20, divergence_patience: int = 10, gd_step: float = 0.05,
          max_halvings: int = 30) -> RelaxResult:
    """Move free atoms downhill until the largest free-atom force is below ``fmax``.

    ``force_fn(system) -> (energy, forces)``. ``lbfgs`` uses a limited-memory
    inverse-Hessian estimate with a per-atom step cap and rejects (and
    shrinks) any trial step that raises the energy; ``gd`` follows the forces,
    halving the step until the energy decreases. Atoms with ``system.fixed``
    set never move. ``divergence_patience`` consecutive steps that raise the
    energy (rejected trials for ``lbfgs``, accepted steps for ``gd``) raise
    :class:`RelaxationError` carrying the trajectory so far.
    """
    if step_rule not in STEP_RULES:
        raise ContractViolation(f"step_rule must be one of {STEP_RULES}, got {step_rule!r}")
    if max_steps < 0 or not fmax > 0 or not max_step > 0:
        raise ContractViolation("max_steps >= 0, fmax > 0 and max_step > 0 required")
    free = ~np.asarray(system.fixed, dtype=bool)
    current = system
    energy, forces = force_fn(current)
    forces = np.asarray(forces, dtype=np.float64).reshape(-1, 3)
    trajectory = [current.replace(energy=float(energy), forces=forces)]
    energies = [float(energy)]
    max_forces = [_max_force(forces, free)]
    history: deque = deque(maxlen=memory)
    increases = 0
    alpha = gd_step
    trust = 1.0
    steps = 0
    reason = "max_steps"

    while steps < max_steps:
        if max_forces[-1] < fmax:
            reason = "converged"
            break
        g = -forces[free].ravel()
        if step_rule == "lbfgs":
            q = g.copy()
            coeffs = []
            for s, y, rho in reversed(history):
                a = rho * s.dot(q)
                coeffs.append(a)
                q -= a * y
            if history:
                s, y, _ = history[-1]
                q *= s.dot(y) / y.dot(y)
            else:
                q *= 0.1  # initial inverse-curvature guess, Å²/eV
            for (s, y, rho), a in zip(history, reversed(coeffs)):
                b = rho * y.dot(q)
                q += (a - b) * s
            direction = -q
            if direction.dot(g) >= 0:  # not a descent direction: restart from the gradient
                history.clear()
                direction = -0.1 * g
            step = np.zeros_like(forces)
            step[free] = direction.reshape(-1, 3) * trust
            step = _cap(step, max_step)
            trial = current.replace(positions=current.positions + step)
            e_new, f_new = force_fn(trial)
            f_new = np.asarray(f_new, dtype=np.float64).reshape(-1, 3)
            s_vec = step[free].ravel()
            y_vec = (-f_new[free].ravel()) - g
            sy = s_vec.dot(y_vec)
            if sy > 1e-12:  # a rejected trial still yields a valid secant pair
                history.append((s_vec, y_vec, 1.0 / sy))
            if e_new > energies[-1]:
                # reject the trial: stay put and shrink the next step
                increases += 1
                trust *= 0.5
                steps += 1
                if increases >= divergence_patience:
                    raise RelaxationError(
                        f"energy rose on {increases} consecutive trial steps (last {float(e_new):.6g} eV)",
                        trajectory=trajectory)
                continue
            increases = 0
            trust = min(1.0, trust * 2.0)
        else:
            halvings = 0
            while True:
                step = np.zeros_like(forces)
                step[free] = alpha * forces[free]
                step = _cap(step, max_step)
                trial = current.replace(positions=current.positions + step)
                e_new, f_new = force_fn(trial)
                if e_new <= energies[-1] or halvings >= max_halvings:
                    break
                alpha *= 0.5
                halvings += 1
            f_new = np.asarray(f_new, dtype=np.float64).reshape(-1, 3)
            if e_new > energies[-1]:
                increases += 1
                alpha = gd_step  # halving could not find descent: start the next search afresh
            else:
                increases = 0
                alpha = min(alpha * 1.5, gd_step * 8)
        current, energy, forces = trial, float(e_new), f_new
        steps += 1
        trajectory.append(current.replace(energy=energy, forces=forces))
        energies.append(energy)
        max_forces.append(_max_force(forces, free))
        if increases >= divergence_patience:
            raise RelaxationError(
                f"energy rose for {increases} consecutive steps (last {energy:.6g} eV)", trajectory=trajectory)
    else:
        if max_forces[-1] < fmax:
            reason = "converged"
    return RelaxResult(final=trajectory[-1], trajectory=trajectory, energies=energies, max_forces=max_forces,
                       converged=reason == "converged", steps=steps, reason=reason)


def model_force_fn(model, normalizer=None):
    """``system -> (energy, forces)`` from a trained model; the graph is rebuilt every call."""

    def fn(system: AtomicSystem):
        data = build_graph_data(system, model.config)
        energies, forces = predict_systems(model, [system], normalizer, 1, [data])
        return energies[0], forces[0]

    return fn


def relax_many(force_fn, systems, **kwargs) -> list:
    return [relax(force_fn, s, **kwargs) for s in systems]
