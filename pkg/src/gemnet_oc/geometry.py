"""Periodic neighbor search and the edge/triplet/quadruplet index structures.

Edge convention: an edge ``b -> a`` has target ``a``, source ``b`` and an
integer image offset ``o`` so that its vector is ``(x_b - x_a) + o @ cell``,
pointing from the target to the (imaged) source. Edges are always sorted by
target, then distance, then source index, then offset, which makes each
atom's incoming list its nearest-neighbor ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, GeometryError

BRUTE_FORCE_MAX_ATOMS = 32
DEGENERATE_SIN2 = 1e-12


@dataclass
class AtomicSystem:
    numbers: np.ndarray
    positions: np.ndarray
    cell: np.ndarray = None
    pbc: np.ndarray = None
    energy: float | None = None
    forces: np.ndarray | None = None
    tags: np.ndarray | None = None
    fixed: np.ndarray | None = None
    trajectory_id: str = ""
    frame: int = 0

    def __post_init__(self):
        self.numbers = np.asarray(self.numbers, dtype=np.int64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.numbers)
        if n < 1:
            raise ContractViolation("a system needs at least one atom")
        if self.positions.shape[0] != n:
            raise ContractViolation(f"{n} atomic numbers but {self.positions.shape[0]} positions")
        if np.any(self.numbers < 1):
            raise ContractViolation("atomic numbers must be positive")
        self.cell = np.zeros((3, 3)) if self.cell is None else np.asarray(self.cell, dtype=np.float64).reshape(3, 3)
        self.pbc = np.zeros(3, dtype=bool) if self.pbc is None else np.broadcast_to(np.asarray(self.pbc, dtype=bool), (3,)).copy()
        for axis in np.flatnonzero(self.pbc):
            if not np.linalg.norm(self.cell[axis]) > 0:
                raise GeometryError(f"periodic axis {axis} has a zero lattice vector")
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64).reshape(-1, 3)
            if self.forces.shape[0] != n:
                raise ContractViolation(f"{self.forces.shape[0]} force rows for {n} atoms")
        if self.energy is not None:
            self.energy = float(self.energy)
        self.tags = np.zeros(n, dtype=np.int64) if self.tags is None else np.asarray(self.tags, dtype=np.int64).reshape(n)
        self.fixed = np.zeros(n, dtype=bool) if self.fixed is None else np.asarray(self.fixed, dtype=bool).reshape(n)

    @property
    def n_atoms(self) -> int:
        return len(self.numbers)

    @property
    def periodic(self) -> bool:
        return bool(self.pbc.any())

    def replace(self, **changes) -> "AtomicSystem":
        return replace(self, **changes)

    def permuted(self, perm) -> "AtomicSystem":
        perm = np.asarray(perm)
        return replace(
            self,
            numbers=self.numbers[perm],
            positions=self.positions[perm],
            forces=None if self.forces is None else self.forces[perm],
            tags=self.tags[perm],
            fixed=self.fixed[perm],
        )


@dataclass
class Triplets:
    """Edge pairs ``(c -> b, b -> a)`` sharing atom ``b``."""

    in_edge: np.ndarray
    out_edge: np.ndarray
    cos_angle: np.ndarray

    def __len__(self):
        return len(self.in_edge)


@dataclass
class Quadruplets:
    """Edge triples ``c -> a``, ``b -> a``, ``d -> b`` around the axis ``a-b``.

    ``edge_ba`` is restricted to each atom's ``k_qint`` nearest neighbors.
    ``qint_edges`` lists those intermediate edges; ``qint_id`` indexes it.
    """

    edge_ca: np.ndarray
    edge_ba: np.ndarray
    edge_db: np.ndarray
    qint_id: np.ndarray
    qint_edges: np.ndarray
    cos_dihedral: np.ndarray
    cos_cab: np.ndarray
    cos_abd: np.ndarray
    k_qint: int = 0

    def __len__(self):
        return len(self.edge_ca)


@dataclass
class NeighborGraph:
    n_atoms: int
    target: np.ndarray
    source: np.ndarray
    offsets: np.ndarray
    vectors: np.ndarray
    distances: np.ndarray
    kind: str = "knn"
    k: int | None = None
    cutoff: float = 0.0
    triplets: Triplets | None = None
    quadruplets: Quadruplets | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_edges(self) -> int:
        return len(self.target)

    @property
    def directions(self) -> np.ndarray:
        return self.vectors / self.distances[:, None]

    @property
    def neighbor_counts(self) -> np.ndarray:
        return np.bincount(self.target, minlength=self.n_atoms)

    @property
    def indptr(self) -> np.ndarray:
        return np.searchsorted(self.target, np.arange(self.n_atoms + 1), side="left")

    def edge_set(self) -> set:
        return {(int(t), int(s), *map(int, o)) for t, s, o in zip(self.target, self.source, self.offsets)}

    def stats(self) -> dict:
        counts = self.neighbor_counts
        return {
            "n_atoms": self.n_atoms,
            "n_edges": self.n_edges,
            "isolated_atoms": int(np.sum(counts == 0)),
            "mean_degree": float(counts.mean()) if self.n_atoms else 0.0,
            "max_degree": int(counts.max()) if self.n_atoms else 0,
            "n_triplets": len(self.triplets) if self.triplets is not None else None,
            "n_quadruplets": len(self.quadruplets) if self.quadruplets is not None else None,
        }


# --------------------------------------------------------------------------
# cell handling


def completed_cell(cell, pbc) -> np.ndarray:
    """Cell whose non-periodic rows are replaced by an orthonormal complement.

    Only the periodic rows carry meaning; the completion makes fractional
    coordinates along periodic axes well defined for partially periodic
    systems.
    """
    cell = np.asarray(cell, dtype=np.float64)
    pbc = np.asarray(pbc, dtype=bool)
    rows = cell[pbc]
    out = np.eye(3)
    if len(rows):
        sv = np.linalg.svd(rows, compute_uv=False)
        if sv.min() <= 1e-10 * max(sv.max(), 1e-300):
            raise GeometryError("cell is singular along its periodic axes")
        _, _, vt = np.linalg.svd(np.vstack([rows, np.zeros((3 - len(rows), 3))]))
        complement = vt[len(rows):]
        out = cell.copy()
        out[~pbc] = complement
    return out


def _image_ranges(inv_cell: np.ndarray, pbc, radius: float) -> np.ndarray:
    recip_norms = np.linalg.norm(inv_cell, axis=0)
    n = np.ceil(radius * recip_norms - 1e-12).astype(np.int64)
    return np.where(pbc, np.maximum(n, 0), 0)


def _offset_grid(ranges) -> np.ndarray:
    axes = [np.arange(-r, r + 1) for r in ranges]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid.astype(np.int64)


def minimum_image_displacement(xi, xj, cell, pbc, search: int = 1):
    """Shortest displacement from ``xi`` to any periodic image of ``xj``.

    Returns ``(displacement, offset)`` with ``displacement = (xj - xi) +
    offset @ cell``. The search covers ``search`` images on either side of
    the wrapped fractional difference along each periodic axis.
    """
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    pbc = np.broadcast_to(np.asarray(pbc, dtype=bool), (3,))
    d = xj - xi
    if not pbc.any():
        return d, np.zeros(3, dtype=np.int64)
    cell = np.asarray(cell, dtype=np.float64)
    inv = np.linalg.inv(completed_cell(cell, pbc))
    frac = d @ inv
    base = np.where(pbc, -np.round(frac), 0).astype(np.int64)
    cand = base + _offset_grid(np.where(pbc, search, 0))
    disp = d + cand @ cell
    norms = np.sqrt(np.sum(disp * disp, axis=1))
    order = np.lexsort((cand[:, 2], cand[:, 1], cand[:, 0], norms))
    best = order[0]
    return disp[best], cand[best]


# --------------------------------------------------------------------------
# pair search


@dataclass
class _Prepared:
    positions: np.ndarray
    wrapped: np.ndarray
    shift: np.ndarray
    cell: np.ndarray
    inv: np.ndarray
    frac: np.ndarray
    pbc: np.ndarray


def _prepare(system: AtomicSystem) -> _Prepared:
    pos = system.positions
    if system.periodic:
        full = completed_cell(system.cell, system.pbc)
        inv = np.linalg.inv(full)
        frac = pos @ inv
        shift = np.where(system.pbc, np.floor(frac), 0).astype(np.int64)
        wrapped = pos - shift @ system.cell
        frac = frac - shift
    else:
        full = np.eye(3)
        inv = np.eye(3)
        shift = np.zeros((len(pos), 3), dtype=np.int64)
        wrapped = pos
        frac = pos
    return _Prepared(pos, wrapped, shift, system.cell, inv, frac, system.pbc)


def _displacements(prep: _Prepared, i, j, offsets) -> np.ndarray:
    return (prep.positions[j] - prep.positions[i]) + offsets @ prep.cell


def _pairs_brute(prep: _Prepared, queries: np.ndarray, radius: float):
    # wrapped fractional differences lie in (-1, 1): one extra image layer is needed
    ranges = _image_ranges(prep.inv, prep.pbc, radius)
    images = _offset_grid(np.where(prep.pbc, ranges + 1, 0))
    n = len(prep.positions)
    out_i, out_j, out_o = [], [], []
    # chunk over images to bound memory
    for o in images:
        shifted = prep.wrapped + o @ prep.cell
        d = shifted[None, :, :] - prep.wrapped[queries][:, None, :]
        dist2 = np.einsum("ijk,ijk->ij", d, d)
        qi, jj = np.nonzero(dist2 <= (radius * (1 + 1e-9)) ** 2)
        i = queries[qi]
        if not o.any():
            keep = i != jj
            i, jj = i[keep], jj[keep]
        out_i.append(i)
        out_j.append(jj)
        out_o.append(np.broadcast_to(o, (len(i), 3)))
    i = np.concatenate(out_i) if out_i else np.zeros(0, np.int64)
    j = np.concatenate(out_j) if out_j else np.zeros(0, np.int64)
    o = np.concatenate(out_o) if out_o else np.zeros((0, 3), np.int64)
    o = o - prep.shift[j] + prep.shift[i]
    return _exact_filter(prep, i.astype(np.int64), j.astype(np.int64), o.astype(np.int64), radius)


def _pairs_cell_list(prep: _Prepared, queries: np.ndarray, radius: float):
    images = _offset_grid(_image_ranges(prep.inv, prep.pbc, radius))
    n = len(prep.positions)
    margin = radius * np.linalg.norm(prep.inv, axis=0)
    copy_atom = np.tile(np.arange(n), len(images))
    copy_off = np.repeat(images, n, axis=0)
    copy_frac = prep.frac[copy_atom] + copy_off
    keep = np.ones(len(copy_atom), dtype=bool)
    for axis in np.flatnonzero(prep.pbc):
        keep &= (copy_frac[:, axis] >= -margin[axis] - 1e-9) & (copy_frac[:, axis] <= 1 + margin[axis] + 1e-9)
    copy_atom, copy_off = copy_atom[keep], copy_off[keep]
    copy_pos = prep.wrapped[copy_atom] + copy_off @ prep.cell

    qpos = prep.wrapped[queries]
    origin = np.minimum(copy_pos.min(axis=0), qpos.min(axis=0))
    copy_bin = np.floor((copy_pos - origin) / radius).astype(np.int64)
    q_bin = np.floor((qpos - origin) / radius).astype(np.int64)
    dims = np.maximum(copy_bin.max(axis=0), q_bin.max(axis=0)) + 1
    strides = np.array([dims[1] * dims[2], dims[2], 1], dtype=np.int64)
    copy_key = copy_bin @ strides
    order = np.argsort(copy_key, kind="stable")
    sorted_key = copy_key[order]

    deltas = _offset_grid([1, 1, 1])
    nb = q_bin[:, None, :] + deltas[None, :, :]
    valid = np.all((nb >= 0) & (nb < dims), axis=-1)
    nb_key = np.where(valid, nb @ strides, -1)
    start = np.searchsorted(sorted_key, nb_key, side="left")
    stop = np.searchsorted(sorted_key, nb_key, side="right")
    counts = np.where(valid, stop - start, 0).reshape(-1)
    start = start.reshape(-1)
    total = int(counts.sum())
    q_rep = np.repeat(np.repeat(queries, len(deltas)), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    cand = order[np.repeat(start, counts) + (np.arange(total) - first)]
    j = copy_atom[cand]
    o_img = copy_off[cand]
    d = copy_pos[cand] - prep.wrapped[q_rep]
    dist2 = np.einsum("ij,ij->i", d, d)
    sel = dist2 <= (radius * (1 + 1e-9)) ** 2
    sel &= ~((q_rep == j) & ~o_img.any(axis=1))
    i, j, o_img = q_rep[sel], j[sel], o_img[sel]
    o = o_img - prep.shift[j] + prep.shift[i]
    return _exact_filter(prep, i, j, o, radius)


def _exact_filter(prep, i, j, o, radius):
    disp = _displacements(prep, i, j, o)
    dist = np.sqrt(np.einsum("ij,ij->i", disp, disp))
    keep = dist <= radius
    return i[keep], j[keep], o[keep], disp[keep], dist[keep]


def _pairs_within(prep: _Prepared, queries: np.ndarray, radius: float, method: str):
    if method == "brute" or (method == "auto" and len(prep.positions) < BRUTE_FORCE_MAX_ATOMS):
        return _pairs_brute(prep, queries, radius)
    return _pairs_cell_list(prep, queries, radius)


def _sorted_graph(n_atoms, i, j, o, disp, dist, kind, k, cutoff, cap=None) -> NeighborGraph:
    order = np.lexsort((o[:, 2], o[:, 1], o[:, 0], j, dist, i))
    i, j, o, disp, dist = i[order], j[order], o[order], disp[order], dist[order]
    if cap is not None and len(i):
        starts = np.searchsorted(i, np.arange(n_atoms), side="left")
        rank = np.arange(len(i)) - starts[i]
        keep = rank < cap
        i, j, o, disp, dist = i[keep], j[keep], o[keep], disp[keep], dist[keep]
    return NeighborGraph(
        n_atoms=n_atoms,
        target=i.astype(np.int64),
        source=j.astype(np.int64),
        offsets=o.astype(np.int64).reshape(-1, 3),
        vectors=disp.reshape(-1, 3),
        distances=dist,
        kind=kind,
        k=k,
        cutoff=float(cutoff),
    )


def _initial_radius(prep: _Prepared, system: AtomicSystem, k: int, max_cutoff: float) -> float:
    n = system.n_atoms
    if system.pbc.all():
        volume = abs(np.linalg.det(system.cell))
    else:
        extent = np.ptp(prep.wrapped, axis=0) + 1.0
        if system.periodic:
            lengths = np.linalg.norm(system.cell, axis=1)
            extent = np.where(system.pbc, np.maximum(lengths, extent), extent)
        volume = float(np.prod(extent))
    density = n / max(volume, 1e-12)
    radius = (3.0 * 2.0 * (k + 1) / (4.0 * math.pi * density)) ** (1.0 / 3.0)
    return float(min(max(radius, 1.0), max_cutoff))


def build_knn_graph(system: AtomicSystem, k: int, max_cutoff: float, method: str = "auto") -> NeighborGraph:
    """Each atom receives edges from its ``k`` nearest neighbors within ``max_cutoff``.

    ``method`` is "auto" (brute force below 32 atoms, cell lists above),
    "brute" or "cell".
    """
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if max_cutoff <= 0:
        raise ContractViolation("max_cutoff must be positive")
    prep = _prepare(system)
    n = system.n_atoms
    use_brute = method == "brute" or (method == "auto" and n < BRUTE_FORCE_MAX_ATOMS)
    if use_brute:
        i, j, o, disp, dist = _pairs_brute(prep, np.arange(n), max_cutoff)
        graph = _sorted_graph(n, i, j, o, disp, dist, "knn", k, max_cutoff, cap=k)
        return graph

    pending = np.arange(n)
    radius = _initial_radius(prep, system, k, max_cutoff)
    parts = []
    while len(pending):
        i, j, o, disp, dist = _pairs_cell_list(prep, pending, radius)
        counts = np.bincount(i, minlength=n)[pending]
        done = pending[(counts >= k) | (radius >= max_cutoff)]
        mask = np.isin(i, done)
        parts.append((i[mask], j[mask], o[mask], disp[mask], dist[mask]))
        pending = np.setdiff1d(pending, done)
        radius = min(2.0 * radius, max_cutoff)
    i, j, o, disp, dist = (np.concatenate(a) for a in zip(*parts))
    return _sorted_graph(n, i, j, o.reshape(-1, 3), disp.reshape(-1, 3), dist, "knn", k, max_cutoff, cap=k)


def build_cutoff_graph(
    system: AtomicSystem, cutoff: float, max_neighbors: int | None = None, method: str = "auto"
) -> NeighborGraph:
    """All minimum-image pairs within ``cutoff``; optionally keep only the nearest ``max_neighbors``."""
    if cutoff <= 0:
        raise ContractViolation("cutoff must be positive")
    prep = _prepare(system)
    n = system.n_atoms
    i, j, o, disp, dist = _pairs_within(prep, np.arange(n), cutoff, method)
    return _sorted_graph(n, i, j, o, disp, dist, "cutoff", max_neighbors, cutoff, cap=max_neighbors)


# --------------------------------------------------------------------------
# index structures


def reverse_edges(graph: NeighborGraph) -> np.ndarray:
    """Index of the reverse edge ``a -> b`` for every ``b -> a``, or -1 if absent."""
    if graph.n_edges == 0:
        return np.zeros(0, dtype=np.int64)
    span = int(np.abs(graph.offsets).max()) if graph.n_edges else 0
    base = 2 * span + 1
    n = graph.n_atoms

    def encode(t, s, off):
        o = off + span
        return (((t * n + s) * base + o[:, 0]) * base + o[:, 1]) * base + o[:, 2]

    keys = encode(graph.target, graph.source, graph.offsets)
    rev = encode(graph.source, graph.target, -graph.offsets)
    order = np.argsort(keys)
    pos = np.searchsorted(keys[order], rev)
    pos = np.minimum(pos, len(keys) - 1)
    found = keys[order][pos] == rev
    return np.where(found, order[pos], -1)


def _ragged(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    total = int(counts.sum())
    first = np.repeat(np.cumsum(counts) - counts, counts)
    return np.repeat(starts, counts) + (np.arange(total) - first)


def enumerate_triplets(graph: NeighborGraph) -> Triplets:
    """Triplets ``(c -> b, b -> a)``, skipping the back-tracking edge ``a -> b``."""
    ptr = graph.indptr
    indeg = np.diff(ptr)
    counts = indeg[graph.source]
    out_edge = np.repeat(np.arange(graph.n_edges), counts)
    in_edge = _ragged(ptr[graph.source], counts)
    back = (graph.source[in_edge] == graph.target[out_edge]) & np.all(
        graph.offsets[in_edge] == -graph.offsets[out_edge], axis=1
    )
    in_edge, out_edge = in_edge[~back], out_edge[~back]
    u = graph.directions
    cos = -np.einsum("ij,ij->i", u[in_edge], u[out_edge])
    trip = Triplets(in_edge=in_edge, out_edge=out_edge, cos_angle=np.clip(cos, -1.0, 1.0))
    graph.triplets = trip
    return trip


def enumerate_target_pairs(graph: NeighborGraph, out_edges: np.ndarray | None = None):
    """Pairs of distinct incoming edges ``(c -> a, b -> a)`` at a common target.

    Returns ``(in_edge, out_edge, cos_cab)`` where the cosine is the angle at
    ``a`` between the two edge vectors.
    """
    ptr = graph.indptr
    indeg = np.diff(ptr)
    if out_edges is None:
        out_edges = np.arange(graph.n_edges)
    tgt = graph.target[out_edges]
    counts = indeg[tgt]
    out_rep = np.repeat(out_edges, counts)
    in_edge = _ragged(ptr[tgt], counts)
    keep = in_edge != out_rep
    in_edge, out_rep = in_edge[keep], out_rep[keep]
    u = graph.directions
    cos = np.clip(np.einsum("ij,ij->i", u[in_edge], u[out_rep]), -1.0, 1.0)
    return in_edge, out_rep, cos


def qint_edges(graph: NeighborGraph, k_qint: int) -> np.ndarray:
    """Edges whose source is among the target's ``k_qint`` nearest neighbors."""
    if k_qint < 1:
        raise ContractViolation("k_qint must be >= 1")
    ptr = graph.indptr
    rank = np.arange(graph.n_edges) - ptr[graph.target]
    return np.flatnonzero(rank < k_qint)


def enumerate_quadruplets(graph: NeighborGraph, k_qint: int) -> Quadruplets:
    """Quadruplets ``c -> a <- b <- d`` with ``b`` among ``a``'s ``k_qint`` nearest.

    Excludes ``c`` coinciding with ``b``, ``d`` coinciding with ``a``, and
    ``c`` coinciding with ``d`` (same atom and same image). Quadruplets whose
    flanking angle is degenerate (sine squared below 1e-12) are dropped.
    """
    ptr = graph.indptr
    indeg = np.diff(ptr)
    q_edges = qint_edges(graph, k_qint)
    a = graph.target[q_edges]
    b = graph.source[q_edges]
    n_c = indeg[a]
    n_d = indeg[b]
    per_q = n_c * n_d
    qid = np.repeat(np.arange(len(q_edges)), per_q)
    local = np.arange(int(per_q.sum())) - np.repeat(np.cumsum(per_q) - per_q, per_q)
    c_slot = local // n_d[qid]
    d_slot = local % n_d[qid]
    e_ba = q_edges[qid]
    e_ca = ptr[a[qid]] + c_slot
    e_db = ptr[b[qid]] + d_slot
    off = graph.offsets
    src = graph.source
    keep = e_ca != e_ba
    keep &= ~((src[e_db] == graph.target[e_ba]) & np.all(off[e_db] == -off[e_ba], axis=1))
    keep &= ~((src[e_ca] == src[e_db]) & np.all(off[e_ca] == off[e_db] + off[e_ba], axis=1))
    qid, e_ca, e_ba, e_db = qid[keep], e_ca[keep], e_ba[keep], e_db[keep]

    u = graph.directions
    c1 = np.einsum("ij,ij->i", u[e_ca], u[e_ba])
    c2 = np.einsum("ij,ij->i", u[e_db], u[e_ba])
    s1 = 1.0 - c1 * c1
    s2 = 1.0 - c2 * c2
    ok = (s1 >= DEGENERATE_SIN2) & (s2 >= DEGENERATE_SIN2)
    qid, e_ca, e_ba, e_db = qid[ok], e_ca[ok], e_ba[ok], e_db[ok]
    c1, c2, s1, s2 = c1[ok], c2[ok], s1[ok], s2[ok]
    cross = np.einsum("ij,ij->i", u[e_ca], u[e_db])
    cos_t = np.clip((cross - c1 * c2) / np.sqrt(s1 * s2), -1.0, 1.0)
    quad = Quadruplets(
        edge_ca=e_ca,
        edge_ba=e_ba,
        edge_db=e_db,
        qint_id=qid,
        qint_edges=q_edges,
        cos_dihedral=cos_t,
        cos_cab=np.clip(c1, -1.0, 1.0),
        cos_abd=np.clip(-c2, -1.0, 1.0),
        k_qint=k_qint,
    )
    graph.quadruplets = quad
    return quad
