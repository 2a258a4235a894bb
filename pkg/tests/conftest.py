import os
import sys

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from gemnet_oc.geometry import AtomicSystem  # noqa: E402
from gemnet_oc.model import ModelConfig  # noqa: E402
from gemnet_oc.tensor import set_precision  # noqa: E402

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(1)
set_precision("double")


def random_cell(rng, skew=0.3, length=(6.0, 9.0)):
    """Random (possibly strongly skewed) lattice with positive volume."""
    base = np.diag(rng.uniform(*length, 3))
    return base + skew * rng.uniform(-1.0, 1.0, (3, 3)) * base.max()


def random_system(rng, n, periodic=False, box=4.0, min_dist=0.7, numbers=(1, 6, 8), skew=0.3):
    """Random atoms with a minimum separation (minimum-image when periodic)."""
    cell = random_cell(rng, skew) if periodic else np.zeros((3, 3))
    pos = []
    while len(pos) < n:
        if periodic:
            trial = rng.uniform(0, 1, 3) @ cell
        else:
            trial = rng.uniform(0, box, 3)
        ok = True
        for p in pos:
            d = trial - p
            if periodic:
                frac = d @ np.linalg.inv(cell)
                d = (frac - np.round(frac)) @ cell
            if np.linalg.norm(d) < min_dist:
                ok = False
                break
        if ok:
            pos.append(trial)
    return AtomicSystem(
        numbers=rng.choice(numbers, n), positions=np.array(pos), cell=cell, pbc=periodic
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(**changes):
    """A model small enough for unit tests; every component stays enabled."""
    base = dict(
        emb_size_atom=16, emb_size_edge=24, emb_size_rbf=8, emb_size_cbf=8,
        emb_size_trip_in=8, emb_size_trip_out=8, emb_size_quad_in=4, emb_size_quad_out=4,
        emb_size_aint_in=8, emb_size_aint_out=8, num_blocks=2, num_before_skip=1, num_after_skip=1,
        num_atom=1, num_atom_emb_layers=1, num_global_out_layers=1,
        k_emb=6, k_qint=3, cutoff=6.0, cutoff_aint=6.0, n_radial=12, max_degree=3, max_z=30,
    )
    base.update(changes)
    return ModelConfig(**base)


# --------------------------------------------------------------------------- acceptance report

ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, title, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} -- {detail}")
