"""Line-oriented trajectory text format.

One frame is a header line followed by one line per atom::

    N  c11 c12 c13 c21 c22 c23 c31 c32 c33  pbc1 pbc2 pbc3  energy
    Z  x y z  fx fy fz  tag fixed

Floats use 17 significant digits so values round-trip exactly. Missing
energy or forces are written as ``nan``. The trailing ``tag fixed`` columns
are optional on input (default 0). A trajectory file is frames back to back;
blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import DatasetError
from ..geometry import AtomicSystem

SPLITS = ("train", "val_id", "val_ood", "val_same_traj")


def _f(x: float) -> str:
    return format(float(x), ".17g")


def format_frame(system: AtomicSystem) -> str:
    n = system.n_atoms
    energy = "nan" if system.energy is None else _f(system.energy)
    header = " ".join([str(n), *(_f(v) for v in system.cell.ravel()), *(str(int(p)) for p in system.pbc), energy])
    forces = system.forces if system.forces is not None else np.full((n, 3), np.nan)
    lines = [header]
    for i in range(n):
        cols = [str(int(system.numbers[i]))]
        cols += [_f(v) for v in system.positions[i]]
        cols += [_f(v) for v in forces[i]]
        cols += [str(int(system.tags[i])), str(int(system.fixed[i]))]
        lines.append(" ".join(cols))
    return "\n".join(lines) + "\n"


def _lines(text: str):
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield number, line


def parse_frames(text: str, trajectory_id: str = "", source: str = "<string>") -> list[AtomicSystem]:
    frames = []
    it = _lines(text)
    for number, line in it:
        parts = line.split()
        if len(parts) != 14:
            raise DatasetError(f"{source}:{number}: frame header needs 14 fields, got {len(parts)}")
        try:
            n = int(parts[0])
            cell = np.array([float(v) for v in parts[1:10]]).reshape(3, 3)
            pbc = np.array([int(v) for v in parts[10:13]], dtype=bool)
            energy = float(parts[13])
        except ValueError as exc:
            raise DatasetError(f"{source}:{number}: bad frame header ({exc})") from None
        if n < 1:
            raise DatasetError(f"{source}:{number}: atom count must be positive")
        numbers, pos, forces, tags, fixed = [], [], [], [], []
        for _ in range(n):
            try:
                anumber, aline = next(it)
            except StopIteration:
                raise DatasetError(f"{source}: frame at line {number} ends after {len(numbers)} of {n} atoms") from None
            cols = aline.split()
            if len(cols) not in (7, 9):
                raise DatasetError(f"{source}:{anumber}: atom line needs 7 or 9 fields, got {len(cols)}")
            try:
                numbers.append(int(cols[0]))
                pos.append([float(v) for v in cols[1:4]])
                forces.append([float(v) for v in cols[4:7]])
                tags.append(int(cols[7]) if len(cols) == 9 else 0)
                fixed.append(bool(int(cols[8])) if len(cols) == 9 else False)
            except ValueError as exc:
                raise DatasetError(f"{source}:{anumber}: bad atom line ({exc})") from None
        forces = np.array(forces)
        frames.append(
            AtomicSystem(
                numbers=numbers,
                positions=pos,
                cell=cell,
                pbc=pbc,
                energy=None if np.isnan(energy) else energy,
                forces=None if np.isnan(forces).all() else forces,
                tags=tags,
                fixed=fixed,
                trajectory_id=trajectory_id,
                frame=len(frames),
            )
        )
    return frames


def read_trajectory(path) -> list[AtomicSystem]:
    path = Path(path)
    return parse_frames(path.read_text(encoding="utf-8"), trajectory_id=path.stem, source=str(path))


def write_trajectory(path, frames) -> None:
    Path(path).write_text("".join(format_frame(f) for f in frames), encoding="utf-8")


def write_dataset(dataset, directory) -> Path:
    """One ``<trajectory>.traj`` file per trajectory, plus ``splits.csv`` and ``provenance.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_traj: dict[str, list] = {}
    for system, split in zip(dataset.systems, dataset.splits):
        by_traj.setdefault(system.trajectory_id, []).append((system, split))
    rows = []
    for traj, items in sorted(by_traj.items()):
        items.sort(key=lambda item: item[0].frame)
        write_trajectory(directory / f"{traj}.traj", [s for s, _ in items])
        rows.extend((traj, s.frame, split) for s, split in items)
    with open(directory / "splits.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trajectory", "frame", "split"])
        writer.writerows(rows)
    with open(directory / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump({**dataset.provenance, "digest": dataset.digest()}, fh, indent=2, sort_keys=True)
    return directory


def read_dataset(directory):
    """Read a directory written by :func:`write_dataset`.

    Without ``splits.csv`` every frame is assigned to the training split.
    """
    from .dataset import Dataset

    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory {directory} does not exist")
    files = sorted(directory.glob("*.traj"))
    if not files:
        raise DatasetError(f"no .traj files in {directory}")
    frames = {}
    for path in files:
        for frame in read_trajectory(path):
            frames[(frame.trajectory_id, frame.frame)] = frame
    split_file = directory / "splits.csv"
    assignments = {}
    if split_file.exists():
        with open(split_file, newline="", encoding="utf-8") as fh:
            for line, row in enumerate(csv.DictReader(fh), start=2):
                if row["split"] not in SPLITS:
                    raise DatasetError(f"{split_file}:{line}: unknown split {row['split']!r}")
                assignments[(row["trajectory"], int(row["frame"]))] = row["split"]
    provenance = {}
    prov_file = directory / "provenance.json"
    if prov_file.exists():
        provenance = json.loads(prov_file.read_text(encoding="utf-8"))
        provenance.pop("digest", None)
    keys = sorted(frames)
    systems = [frames[k] for k in keys]
    splits = [assignments.get(k, "train") for k in keys]
    return Dataset(systems, splits, provenance)
