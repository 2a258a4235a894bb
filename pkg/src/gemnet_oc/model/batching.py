"""Per-system interaction indices and their concatenation into batches.

Graph construction is numpy work done once per structure. The network only
needs integer index arrays plus positions and cells; geometry (vectors,
distances, angles) is recomputed differentiably from positions at forward
time.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch

from ..geometry import (
    AtomicSystem,
    build_cutoff_graph,
    build_knn_graph,
    enumerate_quadruplets,
    enumerate_target_pairs,
    enumerate_triplets,
    reverse_edges,
)
from .config import ModelConfig

# index arrays and what they point into; used to shift indices when collating
_ATOM = "atom"
_EDGE = "edge"
_QINT = "qint"
_QTRIP = "qtrip"
_QPAIR = "qpair"
_SYSTEM = "system"

_INDEX_FIELDS = {
    "atom_system": _SYSTEM,
    "edge_target": _ATOM,
    "edge_source": _ATOM,
    "edge_system": _SYSTEM,
    "id_swap": _EDGE,
    "trip_in": _EDGE,
    "trip_out": _EDGE,
    "pair_in": _EDGE,
    "pair_out": _EDGE,
    "qint_edge": _EDGE,
    "qtrip_qint": _QINT,
    "qtrip_in": _EDGE,
    "qpair_qint": _QINT,
    "qpair_in": _EDGE,
    "quad_qint": _QINT,
    "quad_qtrip": _QTRIP,
    "quad_qpair": _QPAIR,
    "aint_target": _ATOM,
    "aint_source": _ATOM,
}
_PLAIN_FIELDS = ("numbers", "positions", "cells", "edge_offset", "aint_offset",
                 "trip_slot", "pair_slot", "qtrip_slot", "qpair_slot", "quad_cslot", "quad_dslot")
_WIDTHS = ("trip_width", "pair_width", "qtrip_width", "qpair_width")


def _empty(width=None):
    return np.zeros((0,) if width is None else (0, width), dtype=np.int64)


@dataclass
class GraphData:
    """Index structures for one system or a collated batch (numpy arrays).

    Slots give the position of an incoming edge within its target atom's
    incoming list, so per-edge neighborhoods can be laid out densely with
    width ``*_width``. Quadruplets factor into (intermediate edge, d edge)
    and (intermediate edge, c edge) pairs that each quadruplet references.
    """

    n_atoms: int
    n_systems: int
    numbers: np.ndarray
    positions: np.ndarray
    cells: np.ndarray
    atom_system: np.ndarray
    edge_target: np.ndarray
    edge_source: np.ndarray
    edge_offset: np.ndarray
    edge_system: np.ndarray
    id_swap: np.ndarray
    trip_in: np.ndarray
    trip_out: np.ndarray
    trip_slot: np.ndarray
    trip_width: int
    pair_in: np.ndarray
    pair_out: np.ndarray
    pair_slot: np.ndarray
    pair_width: int
    qint_edge: np.ndarray
    qtrip_qint: np.ndarray
    qtrip_in: np.ndarray
    qtrip_slot: np.ndarray
    qtrip_width: int
    qpair_qint: np.ndarray
    qpair_in: np.ndarray
    qpair_slot: np.ndarray
    qpair_width: int
    quad_qint: np.ndarray
    quad_qtrip: np.ndarray
    quad_qpair: np.ndarray
    quad_cslot: np.ndarray
    quad_dslot: np.ndarray
    aint_target: np.ndarray
    aint_source: np.ndarray
    aint_offset: np.ndarray
    signature: tuple = ()

    @property
    def n_edges(self) -> int:
        return len(self.edge_target)

    def counts(self) -> dict:
        return {
            _ATOM: self.n_atoms,
            _EDGE: self.n_edges,
            _QINT: len(self.qint_edge),
            _QTRIP: len(self.qtrip_in),
            _QPAIR: len(self.qpair_in),
            _SYSTEM: self.n_systems,
        }

    def with_positions(self, positions) -> "GraphData":
        out = GraphData(**{f.name: getattr(self, f.name) for f in fields(self)})
        out.positions = np.asarray(positions, dtype=np.float64).reshape(self.n_atoms, 3)
        return out


def graph_signature(config: ModelConfig) -> tuple:
    return tuple(sorted(config.graph_signature().items()))


def build_graph_data(system: AtomicSystem, config: ModelConfig) -> GraphData:
    """Neighbor graph and every index structure the configured network uses."""
    if config.graph == "knn":
        graph = build_knn_graph(system, config.k_emb, config.cutoff)
    else:
        graph = build_cutoff_graph(system, config.cutoff, config.max_neighbors)
    n = system.n_atoms
    ptr = graph.indptr
    e = graph.n_edges

    rev = reverse_edges(graph)
    id_swap = np.where(rev >= 0, rev, np.arange(e))

    trip = enumerate_triplets(graph)
    trip_slot = trip.in_edge - ptr[graph.target[trip.in_edge]]
    width = int(np.diff(ptr).max()) if n else 0

    if config.atom_edge or config.edge_atom:
        pair_in, pair_out, _ = enumerate_target_pairs(graph)
        pair_slot = pair_in - ptr[graph.target[pair_in]]
    else:
        pair_in, pair_out, pair_slot = _empty(), _empty(), _empty()

    if config.quadruplets:
        quad = enumerate_quadruplets(graph, config.k_qint)
        q_edges = quad.qint_edges
        # (qint, d) and (qint, c) pairs actually used by some quadruplet
        d_key = quad.qint_id * max(e, 1) + quad.edge_db
        c_key = quad.qint_id * max(e, 1) + quad.edge_ca
        d_uniq, quad_qtrip = np.unique(d_key, return_inverse=True)
        c_uniq, quad_qpair = np.unique(c_key, return_inverse=True)
        qtrip_qint, qtrip_in = d_uniq // max(e, 1), d_uniq % max(e, 1)
        qpair_qint, qpair_in = c_uniq // max(e, 1), c_uniq % max(e, 1)
        qtrip_slot = qtrip_in - ptr[graph.source[q_edges[qtrip_qint]]]
        qpair_slot = qpair_in - ptr[graph.target[q_edges[qpair_qint]]]
        quad_cslot = qpair_slot[quad_qpair]
        quad_dslot = qtrip_slot[quad_qtrip]
        quad_qint = quad.qint_id
    else:
        q_edges = qtrip_qint = qtrip_in = qtrip_slot = _empty()
        qpair_qint = qpair_in = qpair_slot = _empty()
        quad_qint = quad_qtrip = quad_qpair = quad_cslot = quad_dslot = _empty()

    if config.atom_atom:
        agraph = build_cutoff_graph(system, config.cutoff_aint, config.max_neighbors_aint)
        aint_target, aint_source, aint_offset = agraph.target, agraph.source, agraph.offsets
    else:
        aint_target, aint_source, aint_offset = _empty(), _empty(), _empty(3)

    return GraphData(
        n_atoms=n,
        n_systems=1,
        numbers=system.numbers.copy(),
        positions=system.positions.copy(),
        cells=system.cell.reshape(1, 3, 3).copy(),
        atom_system=np.zeros(n, dtype=np.int64),
        edge_target=graph.target,
        edge_source=graph.source,
        edge_offset=graph.offsets.astype(np.int64),
        edge_system=np.zeros(e, dtype=np.int64),
        id_swap=id_swap,
        trip_in=trip.in_edge,
        trip_out=trip.out_edge,
        trip_slot=trip_slot,
        trip_width=width,
        pair_in=pair_in,
        pair_out=pair_out,
        pair_slot=pair_slot,
        pair_width=width,
        qint_edge=q_edges,
        qtrip_qint=qtrip_qint,
        qtrip_in=qtrip_in,
        qtrip_slot=qtrip_slot,
        qtrip_width=width,
        qpair_qint=qpair_qint,
        qpair_in=qpair_in,
        qpair_slot=qpair_slot,
        qpair_width=width,
        quad_qint=quad_qint,
        quad_qtrip=quad_qtrip,
        quad_qpair=quad_qpair,
        quad_cslot=quad_cslot,
        quad_dslot=quad_dslot,
        aint_target=aint_target,
        aint_source=aint_source,
        aint_offset=aint_offset.astype(np.int64).reshape(-1, 3),
        signature=graph_signature(config),
    )


def collate(items: list[GraphData]) -> GraphData:
    """Concatenate systems into one disjoint graph with shifted indices."""
    if not items:
        raise ValueError("cannot collate an empty list")
    if len(items) == 1:
        return items[0]
    sig = items[0].signature
    if any(item.signature != sig for item in items):
        raise ValueError("graph data built with different model configurations")
    shifts = {k: 0 for k in (_ATOM, _EDGE, _QINT, _QTRIP, _QPAIR, _SYSTEM)}
    parts = {name: [] for name in list(_INDEX_FIELDS) + list(_PLAIN_FIELDS)}
    for item in items:
        for name, kind in _INDEX_FIELDS.items():
            parts[name].append(getattr(item, name) + shifts[kind])
        for name in _PLAIN_FIELDS:
            parts[name].append(getattr(item, name))
        for kind, count in item.counts().items():
            shifts[kind] += count
    merged = {name: np.concatenate(arrs, axis=0) for name, arrs in parts.items()}
    widths = {name: max(getattr(item, name) for item in items) for name in _WIDTHS}
    return GraphData(n_atoms=shifts[_ATOM], n_systems=shifts[_SYSTEM], signature=sig, **merged, **widths)


@dataclass
class Batch:
    """Torch view of :class:`GraphData` used by the network."""

    n_atoms: int
    n_systems: int
    n_edges: int
    tensors: dict
    widths: dict
    signature: tuple = ()

    def __getattr__(self, name):
        try:
            return self.__dict__["tensors"][name]
        except KeyError:
            raise AttributeError(name) from None


def to_batch(data: GraphData, dtype=None) -> Batch:
    dtype = dtype or torch.get_default_dtype()
    tensors = {}
    for name in _INDEX_FIELDS:
        tensors[name] = torch.as_tensor(getattr(data, name), dtype=torch.long)
    for name in _PLAIN_FIELDS:
        value = getattr(data, name)
        if name in ("positions", "cells", "edge_offset", "aint_offset"):
            tensors[name] = torch.as_tensor(np.asarray(value, dtype=np.float64), dtype=dtype)
        else:
            tensors[name] = torch.as_tensor(value, dtype=torch.long)
    widths = {name: getattr(data, name) for name in _WIDTHS}
    return Batch(data.n_atoms, data.n_systems, data.n_edges, tensors, widths, data.signature)
