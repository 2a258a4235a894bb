"""Analytic multiply-add counts per interaction type."""

from __future__ import annotations

from .config import ModelConfig


def graph_stats(data) -> dict:
    """Structure counts of a :class:`GraphData` used by :func:`count_flops_estimate`."""
    return {
        "n_atoms": data.n_atoms,
        "n_edges": data.n_edges,
        "n_triplets": len(data.trip_in),
        "n_pairs": len(data.pair_in),
        "n_qint": len(data.qint_edge),
        "n_qtrip": len(data.qtrip_in),
        "n_qpair": len(data.qpair_in),
        "n_quadruplets": len(data.quad_qint),
        "n_aint": len(data.aint_target),
    }


def count_flops_estimate(config: ModelConfig, stats: dict) -> dict:
    """Multiply-adds of one forward pass, split by component.

    Every term is a sum of (structure count x layer width products), so it
    scales linearly with the counts in ``stats``. The quadruplet term is
    dominated by the quadruplet count, which grows as N k_qint k_emb^2; the
    atom-atom term by the atom-graph edge count.
    """
    c = config
    N, E = stats["n_atoms"], stats["n_edges"]
    H, Hm, R, C = c.emb_size_atom, c.emb_size_edge, c.emb_size_rbf, c.emb_size_cbf
    L1 = c.max_degree + 1
    n_rbf = c.edge_basis.radial_size
    B = c.num_blocks

    out = {"embedding": E * (2 * H + n_rbf) * Hm + E * n_rbf * R * 3}
    Ti, To = c.emb_size_trip_in, c.emb_size_trip_out
    sym = 2 if c.symmetric_mp else 1
    out["triplet"] = B * (
        E * Hm * Hm + E * R * Hm + E * Hm * Ti
        + stats["n_triplets"] * L1 * Ti + E * L1 * C * Ti + E * C * Ti * To + sym * E * To * Hm
    )
    if c.quadruplets:
        Qi, Qo = c.emb_size_quad_in, c.emb_size_quad_out
        out["quadruplet"] = B * (
            E * Hm * Hm + E * R * Hm + E * Hm * Qi
            + stats["n_qtrip"] * L1 * Qi
            + stats["n_quadruplets"] * L1 * Qi
            + stats["n_qpair"] * (L1 * L1 * Qi + L1 * Qi)
            + E * Qi * Qo + sym * E * Qo * Hm
        )
    Ai, Ao = c.emb_size_aint_in, c.emb_size_aint_out
    pair_terms = stats["n_pairs"] * L1 * Ai + E * L1 * C * Ai + E * C * Ai * Ao
    if c.atom_edge:
        out["atom_edge"] = B * (E * R * H + E * H * Ai + pair_terms + E * Ao * Hm)
    if c.edge_atom:
        out["edge_atom"] = B * (E * R * Hm + E * Hm * Ai + pair_terms + N * Ao * H)
    if c.atom_atom:
        A = stats["n_aint"]
        out["atom_atom"] = B * (N * H * Ai + A * (R * Ai + Ai) + N * Ai * H) + A * n_rbf * R
    edge_layers = 1 + 2 * (c.num_before_skip + c.num_after_skip + c.num_concat)
    atom_layers = 1 + 2 * c.num_atom + (2 * c.num_atom_emb_layers if c.atom_mlp else 0)
    out["edge_update"] = B * (E * Hm * Hm * edge_layers + E * (2 * H) * Hm)
    out["atom_update"] = B * (E * R * Hm + N * Hm * H * 1 + N * H * H * (atom_layers - 1))
    heads = (B + 1) * (E * R * Hm + N * Hm * H + N * H * H * 2 * c.num_atom)
    if c.force_mode == "direct":
        heads += (B + 1) * (E * R * Hm + E * Hm * Hm * 2 * c.num_atom)
    if c.global_output_mlp:
        heads += N * ((B + 1) * H * H + 2 * c.num_global_out_layers * H * H + H)
        if c.force_mode == "direct":
            heads += E * ((B + 1) * Hm * Hm + 2 * c.num_global_out_layers * Hm * Hm + Hm)
    out["output"] = heads
    out["total"] = sum(out.values())
    return out
