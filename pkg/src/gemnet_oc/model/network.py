"""The interaction network: embeddings, interaction blocks, output heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..basis import legendre, radial_basis, spherical_harmonics_cs, zonal_norms
from ..errors import ContractViolation, GeometryError, NumericError
from ..geometry import AtomicSystem
from ..tensor import segment_sum
from .batching import Batch, GraphData, build_graph_data, collate, graph_signature, to_batch
from .config import ModelConfig
from .layers import Dense, ScaleFactor, residual_stack

_MIN_SIN = 1e-6


# --------------------------------------------------------------------------
# geometry on tensors


def _shift(offsets, cells, system):
    return torch.einsum("ei,eij->ej", offsets, cells[system])


def _unit(v):
    d = torch.linalg.norm(v, dim=-1)
    if d.numel() and float(d.detach().min()) <= 0.0:
        raise GeometryError("zero-length edge (coincident atoms)")
    return d, v / d.unsqueeze(-1)


def _dot(a, b):
    return (a * b).sum(-1)


@dataclass
class Geometry:
    dist: torch.Tensor
    unit: torch.Tensor
    rbf: torch.Tensor
    trip_basis: torch.Tensor
    pair_basis: torch.Tensor
    qtrip_basis: torch.Tensor
    qpair_basis: torch.Tensor
    quad_basis: torch.Tensor
    aint_rbf: torch.Tensor


def compute_geometry(batch: Batch, positions: torch.Tensor, config: ModelConfig) -> Geometry:
    """Distances, directions and all basis values for a batch."""
    L = config.max_degree
    sh = config.angular_kind == "spherical_harmonics"
    norms = zonal_norms(L).to(positions.dtype) if sh else None

    def zonal(cos):
        p = legendre(cos, L)
        return p * norms if sh else p

    vec = positions[batch.edge_source] - positions[batch.edge_target]
    vec = vec + _shift(batch.edge_offset, batch.cells, batch.edge_system)
    dist, unit = _unit(vec)
    rbf = radial_basis(dist, config.edge_basis)

    trip_basis = zonal(-_dot(unit[batch.trip_in], unit[batch.trip_out]))
    pair_basis = zonal(_dot(unit[batch.pair_in], unit[batch.pair_out])) if len(batch.pair_in) else positions.new_zeros(0, L + 1)

    qtrip_basis = qpair_basis = quad_basis = positions.new_zeros(0, L + 1)
    if config.quadruplets and len(batch.qint_edge):
        u_ba = unit[batch.qint_edge]
        qtrip_basis = zonal(-_dot(unit[batch.qtrip_in], u_ba[batch.qtrip_qint]))
        cos_cab = _dot(unit[batch.qpair_in], u_ba[batch.qpair_qint])
        qpair_basis = zonal(cos_cab)
        u_ab = u_ba[batch.quad_qint]
        u_ca = unit[batch.qpair_in][batch.quad_qpair]
        u_db = unit[batch.qtrip_in][batch.quad_qtrip]
        c1 = cos_cab[batch.quad_qpair]
        c2 = _dot(u_db, u_ab)
        s1 = torch.sqrt((1.0 - c1 * c1).clamp_min(_MIN_SIN**2))
        s2 = torch.sqrt((1.0 - c2 * c2).clamp_min(_MIN_SIN**2))
        cos_t = ((_dot(u_ca, u_db) - c1 * c2) / (s1 * s2)).clamp(-1.0, 1.0)
        if sh:
            sin_t = _dot(torch.linalg.cross(u_ca, u_db), u_ab) / (s1 * s2)
            quad_basis = spherical_harmonics_cs(c1, s1, cos_t, sin_t, L)
        else:
            quad_basis = legendre(cos_t, L)

    aint_rbf = positions.new_zeros(0, config.n_radial)
    if config.atom_atom and len(batch.aint_target):
        avec = positions[batch.aint_source] - positions[batch.aint_target]
        avec = avec + _shift(batch.aint_offset, batch.cells, batch.atom_system[batch.aint_target])
        adist, _ = _unit(avec)
        aint_rbf = radial_basis(adist, config.atom_basis)
    return Geometry(dist, unit, rbf, trip_basis, pair_basis, qtrip_basis, qpair_basis, quad_basis, aint_rbf)


# --------------------------------------------------------------------------
# dense neighborhood aggregation


def _dense_basis(basis, row, slot, n_rows, width):
    out = basis.new_zeros(n_rows, basis.shape[-1], width)
    out[row, :, slot] = basis
    return out


def _gather_index(src, row, slot, n_rows, width, pad):
    idx = torch.full((n_rows, width), pad, dtype=torch.long)
    idx[row, slot] = src
    return idx


def neighborhood_sum(x, basis_dense, gather_idx):
    """``Y[e] = sum_k basis[e, k] (outer) x[idx[e, k]]`` with zero padding.

    ``basis_dense`` is stored transposed, ``[rows, n_basis, width]``.
    """
    xp = torch.cat([x, x.new_zeros(1, x.shape[-1])], dim=0)
    return torch.bmm(basis_dense, xp[gather_idx])


def project_basis(y, layer):
    """Apply a bias-free linear map to the basis axis of ``y[rows, n_basis, H]``.

    Equal to projecting the basis before aggregation, but cheaper.
    """
    return torch.einsum("rbh,cb->rch", y, layer.linear.weight)


# --------------------------------------------------------------------------
# interaction pieces


class TripletInteraction(nn.Module):
    """Edge-to-edge messages over triplets ``c -> b -> a``."""

    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        act = cfg.activation
        Hm, Hi, Ho = cfg.emb_size_edge, cfg.emb_size_trip_in, cfg.emb_size_trip_out
        self.dense_ba = Dense(Hm, Hm, gen, activation=act)
        self.mlp_rbf = Dense(cfg.emb_size_rbf, Hm, gen)
        self.scale_rbf = ScaleFactor()
        self.mlp_cbf = Dense(cfg.max_degree + 1, cfg.emb_size_cbf, gen)
        self.down = Dense(Hm, Hi, gen, activation=act)
        self.bilinear = Dense(cfg.emb_size_cbf * Hi, Ho, gen)
        self.scale_sum = ScaleFactor()
        self.up_ca = Dense(Ho, Hm, gen, activation=act)
        self.symmetric = cfg.symmetric_mp
        if self.symmetric:
            self.up_ac = Dense(Ho, Hm, gen, activation=act)
        self.res = cfg.residual_scale

    def forward(self, m, rbf_proj, batch, geo, cache):
        x = self.dense_ba(m)
        x = self.scale_rbf(x * self.mlp_rbf(rbf_proj), ref=x)
        x = self.down(x)
        y = project_basis(neighborhood_sum(x, cache["trip_basis"], cache["trip_idx"]), self.mlp_cbf)
        y = self.scale_sum(y, ref=x)
        out = self.bilinear(y.flatten(1))
        x_ca = self.up_ca(out)
        if not self.symmetric:
            return x_ca
        return (x_ca + self.up_ac(out)[batch.id_swap]) * self.res


class QuadrupletInteraction(nn.Module):
    """Edge-to-edge messages over quadruplets ``d -> b -> a <- c``.

    The (d, b, a) part is aggregated per intermediate edge into a dense
    ``(c slot, d slot)`` layout; the dihedral basis couples the slots.
    """

    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        act = cfg.activation
        Hm, Hq, Ho = cfg.emb_size_edge, cfg.emb_size_quad_in, cfg.emb_size_quad_out
        L1 = cfg.max_degree + 1
        self.sh = cfg.angular_kind == "spherical_harmonics"
        self.dense_db = Dense(Hm, Hm, gen, activation=act)
        self.mlp_rbf = Dense(cfg.emb_size_rbf, Hm, gen)
        self.scale_rbf = ScaleFactor()
        self.down = Dense(Hm, Hq, gen, activation=act)
        self.mlp_cbf = Dense(L1, Hq, gen)
        self.scale_cbf = ScaleFactor()
        n_sbf = L1 * L1
        weight = torch.empty(n_sbf, Hq)
        nn.init.normal_(weight, std=1.0 / math.sqrt(n_sbf), generator=gen)
        self.w_sbf = nn.Parameter(weight)
        self.scale_sum = ScaleFactor()
        self.out = Dense(Hq, Ho, gen)
        self.up_ca = Dense(Ho, Hm, gen, activation=act)
        self.symmetric = cfg.symmetric_mp
        if self.symmetric:
            self.up_ac = Dense(Ho, Hm, gen, activation=act)
        self.res = cfg.residual_scale
        self.L1 = L1
        # None: dense layout for Legendre bases, per-quadruplet for harmonics
        self.dense = None

    def _aggregate_dense(self, v_t, batch, geo, cache):
        n_q = len(batch.qint_edge)
        kc, kd = batch.widths["qpair_width"], batch.widths["qtrip_width"]
        Hq = v_t.shape[-1]
        xt = v_t.new_zeros(n_q, kd, Hq)
        xt[batch.qtrip_qint, batch.qtrip_slot] = v_t
        y = torch.bmm(cache["quad_basis"], xt).reshape(n_q, kc, self.L1, Hq)
        y = y[batch.qpair_qint, batch.qpair_slot]  # [n_qpair, L+1 (theta), Hq]
        w = self.w_sbf.reshape(self.L1, self.L1, Hq)
        coef = torch.einsum("pl,lmh->pmh", geo.qpair_basis, w)
        return (coef * y).sum(1)

    def _aggregate_sparse(self, v_t, batch, geo):
        if self.sh:
            sbf = geo.quad_basis @ self.w_sbf
        else:
            w = self.w_sbf.reshape(self.L1, self.L1, -1)
            sbf = torch.einsum("ql,qm,lmh->qh", geo.qpair_basis[batch.quad_qpair], geo.quad_basis, w)
        return segment_sum(sbf * v_t[batch.quad_qtrip], batch.quad_qpair, len(batch.qpair_in))

    def forward(self, m, rbf_proj, batch, geo, cache):
        x = self.dense_db(m)
        x = self.scale_rbf(x * self.mlp_rbf(rbf_proj), ref=x)
        x = self.down(x)
        x_d = x[batch.qtrip_in]
        v_t = self.scale_cbf(x_d * self.mlp_cbf(geo.qtrip_basis), ref=x_d)
        dense = (not self.sh) if self.dense is None else self.dense
        z = self._aggregate_dense(v_t, batch, geo, cache) if dense else self._aggregate_sparse(v_t, batch, geo)
        out = segment_sum(z, batch.qpair_in, batch.n_edges)
        out = self.scale_sum(out, ref=v_t)
        out = self.out(out)
        x_ca = self.up_ca(out)
        if not self.symmetric:
            return x_ca
        return (x_ca + self.up_ac(out)[batch.id_swap]) * self.res


class AtomEdgeInteraction(nn.Module):
    """Atom embeddings of neighbors ``c`` update the edge ``b -> a`` via the angle at ``a``."""

    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        act = cfg.activation
        H, Hi, Ho = cfg.emb_size_atom, cfg.emb_size_aint_in, cfg.emb_size_aint_out
        self.mlp_rbf = Dense(cfg.emb_size_rbf, H, gen)
        self.scale_rbf = ScaleFactor()
        self.mlp_cbf = Dense(cfg.max_degree + 1, cfg.emb_size_cbf, gen)
        self.down = Dense(H, Hi, gen, activation=act)
        self.bilinear = Dense(cfg.emb_size_cbf * Hi, Ho, gen)
        self.scale_sum = ScaleFactor()
        self.up = Dense(Ho, cfg.emb_size_edge, gen, activation=act)

    def forward(self, h, rbf_proj, batch, geo, cache):
        x = h[batch.edge_source]
        x = self.scale_rbf(x * self.mlp_rbf(rbf_proj), ref=x)
        x = self.down(x)
        y = project_basis(neighborhood_sum(x, cache["pair_basis"], cache["pair_idx"]), self.mlp_cbf)
        y = self.scale_sum(y, ref=x)
        return self.up(self.bilinear(y.flatten(1)))


class EdgeAtomInteraction(nn.Module):
    """Edge embeddings around ``a`` update atom ``a`` with angular resolution."""

    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        act = cfg.activation
        Hm, Hi, Ho = cfg.emb_size_edge, cfg.emb_size_aint_in, cfg.emb_size_aint_out
        self.mlp_rbf = Dense(cfg.emb_size_rbf, Hm, gen)
        self.scale_rbf = ScaleFactor()
        self.mlp_cbf = Dense(cfg.max_degree + 1, cfg.emb_size_cbf, gen)
        self.down = Dense(Hm, Hi, gen, activation=act)
        self.bilinear = Dense(cfg.emb_size_cbf * Hi, Ho, gen)
        self.scale_pair = ScaleFactor()
        self.scale_sum = ScaleFactor()
        self.up = Dense(Ho, cfg.emb_size_atom, gen, activation=act)

    def forward(self, m, rbf_proj, batch, geo, cache):
        x = self.scale_rbf(m * self.mlp_rbf(rbf_proj), ref=m)
        x = self.down(x)
        y = project_basis(neighborhood_sum(x, cache["pair_basis"], cache["pair_idx"]), self.mlp_cbf)
        y = self.scale_pair(y, ref=x)
        y = self.bilinear(y.flatten(1))
        out = self.scale_sum(segment_sum(y, batch.edge_target, batch.n_atoms), ref=y)
        return self.up(out)


class AtomAtomInteraction(nn.Module):
    """Distance-only messages on a separate long-range atom graph."""

    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        act = cfg.activation
        H, Hi = cfg.emb_size_atom, cfg.emb_size_aint_in
        self.down = Dense(H, Hi, gen, activation=act)
        self.mlp_rbf = Dense(cfg.emb_size_rbf, Hi, gen)
        self.scale_sum = ScaleFactor()
        self.up = Dense(Hi, H, gen, activation=act)

    def forward(self, h, rbf_proj, batch):
        x = self.down(h)[batch.aint_source] * self.mlp_rbf(rbf_proj)
        out = self.scale_sum(segment_sum(x, batch.aint_target, batch.n_atoms), ref=x)
        return self.up(out)


class AtomUpdate(nn.Module):
    """Sum of incoming edge embeddings, modulated radially, into an atom vector."""

    def __init__(self, cfg: ModelConfig, gen, n_in):
        super().__init__()
        self.mlp_rbf = Dense(cfg.emb_size_rbf, n_in, gen)
        self.scale_sum = ScaleFactor()
        self.dense = Dense(n_in, cfg.emb_size_atom, gen, activation=cfg.activation)
        self.layers = residual_stack(cfg.num_atom, cfg.emb_size_atom, gen, cfg.activation, cfg.residual_scale)

    def forward(self, m, rbf_proj, batch):
        x = m * self.mlp_rbf(rbf_proj)
        x = self.scale_sum(segment_sum(x, batch.edge_target, batch.n_atoms), ref=x)
        x = self.dense(x)
        for layer in self.layers:
            x = layer(x)
        return x


class InteractionBlock(nn.Module):
    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        act, Hm, H = cfg.activation, cfg.emb_size_edge, cfg.emb_size_atom
        self.cfg = cfg
        self.dense_skip = Dense(Hm, Hm, gen, activation=act)
        self.trip = TripletInteraction(cfg, gen)
        self.quad = QuadrupletInteraction(cfg, gen) if cfg.quadruplets else None
        self.atom_edge = AtomEdgeInteraction(cfg, gen) if cfg.atom_edge else None
        self.edge_atom = EdgeAtomInteraction(cfg, gen) if cfg.edge_atom else None
        self.atom_atom = AtomAtomInteraction(cfg, gen) if cfg.atom_atom else None
        self.before_skip = residual_stack(cfg.num_before_skip, Hm, gen, act, cfg.residual_scale)
        self.after_skip = residual_stack(cfg.num_after_skip, Hm, gen, act, cfg.residual_scale)
        self.atom_update = AtomUpdate(cfg, gen, Hm)
        self.atom_layers = residual_stack(cfg.num_atom_emb_layers, H, gen, act, cfg.residual_scale) if cfg.atom_mlp else None
        self.concat = Dense(2 * H + Hm, Hm, gen, activation=act)
        self.concat_layers = residual_stack(cfg.num_concat, Hm, gen, act, cfg.residual_scale)
        self.res = cfg.residual_scale

    def forward(self, h, m, proj, batch, geo, cache):
        parts = [self.dense_skip(m), self.trip(m, proj["trip"], batch, geo, cache)]
        if self.quad is not None:
            parts.append(self.quad(m, proj["quad"], batch, geo, cache))
        if self.atom_edge is not None:
            parts.append(self.atom_edge(h, proj["atom_edge"], batch, geo, cache))
        x = sum(parts) / math.sqrt(len(parts))
        for layer in self.before_skip:
            x = layer(x)
        m = (m + x) * self.res
        for layer in self.after_skip:
            m = layer(m)

        atom_parts = [self.atom_update(m, proj["atom"], batch)]
        if self.edge_atom is not None:
            atom_parts.append(self.edge_atom(m, proj["edge_atom"], batch, geo, cache))
        if self.atom_atom is not None:
            atom_parts.append(self.atom_atom(h, proj["atom_atom"], batch))
        h = (h + sum(atom_parts)) / math.sqrt(1 + len(atom_parts))
        if self.atom_layers is not None:
            for layer in self.atom_layers:
                h = layer(h)

        x = self.concat(torch.cat([h[batch.edge_target], h[batch.edge_source], m], dim=-1))
        for layer in self.concat_layers:
            x = layer(x)
        m = (m + x) * self.res
        return h, m


class OutputBlock(nn.Module):
    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        act, Hm, H = cfg.activation, cfg.emb_size_edge, cfg.emb_size_atom
        self.energy_update = AtomUpdate(cfg, gen, Hm)
        self.atom_emb = cfg.atom_emb_in_output
        self.direct = cfg.force_mode == "direct"
        if self.direct:
            self.mlp_rbf_f = Dense(cfg.emb_size_rbf, Hm, gen)
            self.scale_rbf_f = ScaleFactor()
            self.force_layers = residual_stack(cfg.num_atom, Hm, gen, act, cfg.residual_scale)
        if not cfg.global_output_mlp:
            self.energy_head = Dense(H, 1, gen)
            if self.direct:
                self.force_head = Dense(Hm, 1, gen)
        self.res = cfg.residual_scale

    def forward(self, h, m, rbf_proj, batch):
        x_e = self.energy_update(m, rbf_proj, batch)
        if self.atom_emb:
            x_e = (x_e + h) * self.res
        x_f = None
        if self.direct:
            x_f = self.scale_rbf_f(m * self.mlp_rbf_f(rbf_proj), ref=m)
            for layer in self.force_layers:
                x_f = layer(x_f)
        return x_e, x_f


class GemNetOC(nn.Module):
    """Energy and force model on periodic neighbor graphs.

    ``forward`` takes a :class:`Batch` and returns per-system energies,
    per-atom forces and per-atom energy contributions, all in the model's
    internal (normalized) units.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        cfg = config
        gen = torch.Generator().manual_seed(int(seed))
        act, H, Hm, R = cfg.activation, cfg.emb_size_atom, cfg.emb_size_edge, cfg.emb_size_rbf
        n_rbf = cfg.edge_basis.radial_size

        self.atom_embedding = nn.Embedding(cfg.max_z + 1, H)
        with torch.no_grad():
            self.atom_embedding.weight.uniform_(-math.sqrt(3.0), math.sqrt(3.0), generator=gen)
        self.edge_embedding = Dense(2 * H + n_rbf, Hm, gen, activation=act)

        # radial projections shared by all blocks
        proj = {"trip": Dense(n_rbf, R, gen), "atom": Dense(n_rbf, R, gen), "out": Dense(n_rbf, R, gen)}
        if cfg.quadruplets:
            proj["quad"] = Dense(n_rbf, R, gen)
        if cfg.atom_edge:
            proj["atom_edge"] = Dense(n_rbf, R, gen)
        if cfg.edge_atom:
            proj["edge_atom"] = Dense(n_rbf, R, gen)
        if cfg.atom_atom:
            proj["atom_atom"] = Dense(cfg.atom_basis.radial_size, R, gen)
        self.rbf_proj = nn.ModuleDict(proj)

        self.blocks = nn.ModuleList(InteractionBlock(cfg, gen) for _ in range(cfg.num_blocks))
        self.outputs = nn.ModuleList(OutputBlock(cfg, gen) for _ in range(cfg.num_blocks + 1))
        n_out = cfg.num_blocks + 1
        if cfg.global_output_mlp:
            self.out_energy = Dense(n_out * H, H, gen, activation=act)
            self.out_energy_layers = residual_stack(cfg.num_global_out_layers, H, gen, act, cfg.residual_scale)
            self.energy_head = Dense(H, 1, gen)
            if cfg.force_mode == "direct":
                self.out_force = Dense(n_out * Hm, Hm, gen, activation=act)
                self.out_force_layers = residual_stack(cfg.num_global_out_layers, Hm, gen, act, cfg.residual_scale)
                self.force_head = Dense(Hm, 1, gen)
        self.to(torch.float64 if cfg.precision == "double" else torch.float32)

    @property
    def dtype(self):
        return self.atom_embedding.weight.dtype

    def scale_factors(self) -> dict:
        return {name: mod for name, mod in self.named_modules() if isinstance(mod, ScaleFactor)}

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _check(self, where, block, **tensors):
        for name, t in tensors.items():
            if not torch.isfinite(t).all():
                state = {k: v.detach().clone() for k, v in tensors.items()}
                raise NumericError(f"non-finite {name} {where}", block=block, state=state)

    def _cache(self, batch: Batch, geo: Geometry) -> dict:
        """Dense neighborhood layouts shared by all blocks."""
        cache = {}
        e, w = batch.n_edges, batch.widths
        cache["trip_idx"] = _gather_index(batch.trip_in, batch.trip_out, batch.trip_slot, e, w["trip_width"], e)
        cache["trip_basis"] = _dense_basis(geo.trip_basis, batch.trip_out, batch.trip_slot, e, w["trip_width"])
        if self.config.atom_edge or self.config.edge_atom:
            cache["pair_idx"] = _gather_index(batch.pair_in, batch.pair_out, batch.pair_slot, e, w["pair_width"], e)
            cache["pair_basis"] = _dense_basis(geo.pair_basis, batch.pair_out, batch.pair_slot, e, w["pair_width"])
        if self.config.quadruplets and self.config.angular_kind == "legendre_product":
            n_q, kc, kd = len(batch.qint_edge), w["qpair_width"], w["qtrip_width"]
            L1 = self.config.max_degree + 1
            basis = geo.quad_basis.new_zeros(n_q, kc, L1, kd)
            basis[batch.quad_qint, batch.quad_cslot, :, batch.quad_dslot] = geo.quad_basis
            cache["quad_basis"] = basis.reshape(n_q, kc * L1, kd)
        return cache

    def set_quadruplet_layout(self, dense: bool | None):
        """Force the dense or per-quadruplet aggregation (``None`` = automatic)."""
        for block in self.blocks:
            if block.quad is not None:
                block.quad.dense = dense

    def forward(self, batch: Batch) -> dict:
        cfg = self.config
        if batch.signature and batch.signature != graph_signature(cfg):
            raise ContractViolation("graph was built for a different model configuration")
        if batch.numbers.numel() and int(batch.numbers.max()) > cfg.max_z:
            raise ContractViolation(f"atomic number {int(batch.numbers.max())} exceeds max_z={cfg.max_z}")
        gradient = cfg.force_mode == "gradient"
        create_graph = torch.is_grad_enabled()
        positions = batch.positions.to(self.dtype)
        if gradient:
            positions = positions.detach().requires_grad_(True)
        with torch.set_grad_enabled(create_graph or gradient):
            geo = compute_geometry(batch, positions, cfg)
            proj = {name: layer(geo.aint_rbf if name == "atom_atom" else geo.rbf)
                    for name, layer in self.rbf_proj.items()}
            cache = self._cache(batch, geo)

            h = self.atom_embedding(batch.numbers)
            m = self.edge_embedding(torch.cat([h[batch.edge_target], h[batch.edge_source], geo.rbf], dim=-1))
            self._check("after embedding", 0, h=h, m=m)
            diagnostics = [_stats(0, h, m)]
            outs = [self.outputs[0](h, m, proj["out"], batch)]
            for i, block in enumerate(self.blocks):
                h, m = block(h, m, proj, batch, geo, cache)
                self._check(f"after interaction block {i + 1}", i + 1, h=h, m=m)
                diagnostics.append(_stats(i + 1, h, m))
                outs.append(self.outputs[i + 1](h, m, proj["out"], batch))

            if cfg.global_output_mlp:
                x = self.out_energy(torch.cat([o[0] for o in outs], dim=-1))
                for layer in self.out_energy_layers:
                    x = layer(x)
                atom_energy = self.energy_head(x).squeeze(-1)
            else:
                atom_energy = sum(out.energy_head(o[0]) for out, o in zip(self.outputs, outs)).squeeze(-1)
            energy = segment_sum(atom_energy, batch.atom_system, batch.n_systems)

            if gradient:
                (grad,) = torch.autograd.grad(energy.sum(), positions, create_graph=create_graph)
                forces = -grad
            else:
                if cfg.global_output_mlp:
                    x = self.out_force(torch.cat([o[1] for o in outs], dim=-1))
                    for layer in self.out_force_layers:
                        x = layer(x)
                    f_edge = self.force_head(x)
                else:
                    f_edge = sum(out.force_head(o[1]) for out, o in zip(self.outputs, outs))
                forces = segment_sum(f_edge * geo.unit, batch.edge_target, batch.n_atoms)
            self._check("in outputs", cfg.num_blocks + 1, energy=energy, forces=forces)
        return {"energy": energy, "forces": forces, "atom_energy": atom_energy, "diagnostics": diagnostics}


def _stats(block, h, m) -> dict:
    h, m = h.detach(), m.detach()
    return {
        "block": block,
        "atom_rms": float(h.square().mean().sqrt()) if h.numel() else 0.0,
        "edge_rms": float(m.square().mean().sqrt()) if m.numel() else 0.0,
    }


# --------------------------------------------------------------------------
# functional entry points


def init_model(config: ModelConfig, seed: int = 0) -> GemNetOC:
    """Fresh parameters, deterministic given ``seed``."""
    return GemNetOC(config, seed)


def prepare(systems, config: ModelConfig) -> GraphData:
    if isinstance(systems, AtomicSystem):
        systems = [systems]
    return collate([build_graph_data(s, config) for s in systems])


def predict(model: GemNetOC, systems, data: GraphData | None = None) -> dict:
    """Energies ``[S]`` and forces ``[N, 3]`` as numpy arrays (internal units)."""
    if data is None:
        data = prepare(systems, model.config)
    batch = to_batch(data, model.dtype)
    with torch.no_grad():
        out = model(batch)
    result = {k: v.detach().cpu().numpy().astype(np.float64) for k, v in out.items() if k != "diagnostics"}
    result["diagnostics"] = out["diagnostics"]
    return result
