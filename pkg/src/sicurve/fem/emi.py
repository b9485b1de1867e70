"""Mixed RT0-P0-P1 backward-Euler system for the cell-resolved tissue model.

Unknowns per implicit step: the global current flux q (lowest-order
Raviart-Thomas, one dof per non-exterior facet, normal component continuous
across membranes), the piecewise-constant potential u per tet, the membrane
potential trace v on the membrane skeleton, and the trans-junction potential
trace w on the gap skeleton.

With facet normals oriented out of the intracellular side, the step solves
the symmetric (indefinite) system

    (1/sigma) (q, p) + (u, div p) - <v, p.n>_Gm - <w, p.n>_Gg = 0
    (div q, r)                                                = 0
    -<s, q.n>_Gm - (C_m/dt) (v, s)_Gm                         = -(C_m/dt) (v~, s)_Gm
    -<z, q.n>_Gg - (C_g/dt) gf (w, z)_Gg                      = -(C_g/dt) (w^n, z)_Gg

which realizes the membrane/junction dynamics C dv/dt = -q.n (plus the gap's
ohmic leak folded into the factor gf).  ``gap_form`` selects gf:
"literal" uses (1 + 1/R_g); "dimensional" uses (1 + dt/(R_g C_g)).

The exterior boundary carries q.n = 0, imposed by dropping exterior facet
dofs; the remaining constant null space in u is removed by pinning the
first extracellular tet's potential to zero.

Solves use an exactly equivalent hybridized form: flux dofs are duplicated
per tet, normal continuity is enforced through a facet multiplier (the
potential trace), and the per-tet flux/potential pair is eliminated locally.
The condensed system on (trace, v, w) is symmetric positive definite, so a
sparse Cholesky factorization can be built once and reused every step; tet
potentials and fluxes are recovered element-wise afterwards.  On membrane
and gap facets the trace is single-valued on the extracellular (resp.
higher-indexed cell) side while the other side sees trace + jump, which is
where v and w enter the local problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..cell_model import CellState
from ..geometry import EXTERIOR, EXTRACELLULAR, GAP, MEMBRANE, TaggedMesh
from .linsys import AssemblyError, LinearSystem


@dataclass(frozen=True)
class EmiParams:
    sigma_i: float = 0.5   # uA/(mV*mm)
    sigma_e: float = 2.0
    C_m: float = 0.01      # uF/mm^2 (membranes)
    C_gap: float = 0.01    # uF/mm^2 (gap junctions)
    R_gap: float = 0.15    # mV*mm^2/uA
    gap_form: str = "literal"

    def __post_init__(self):
        if min(self.sigma_i, self.sigma_e, self.C_m, self.C_gap, self.R_gap) <= 0:
            raise ValueError("all parameters must be positive")
        if self.gap_form not in ("literal", "dimensional"):
            raise ValueError("gap_form must be 'literal' or 'dimensional'")


@dataclass
class EmiField:
    q: np.ndarray
    u: np.ndarray
    v_m: np.ndarray
    w_g: np.ndarray
    cells: CellState


def tet_facet_incidence(mesh: TaggedMesh):
    """Per tet: global facet index and orientation sign of each local face.

    Local face i is opposite vertex i.  Sign is +1 when the global facet
    normal points out of the tet.
    """
    nv = len(mesh.vertices)
    faces = mesh.tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]]
    faces = np.sort(faces.reshape(-1, 3), axis=1).astype(np.int64)
    key = (faces[:, 0] * nv + faces[:, 1]) * nv + faces[:, 2]
    gf = mesh.facets.astype(np.int64)
    gkey = (gf[:, 0] * nv + gf[:, 1]) * nv + gf[:, 2]
    order = np.argsort(gkey)
    idx = order[np.searchsorted(gkey[order], key)]
    tet_facets = idx.reshape(-1, 4)
    tet_ids = np.repeat(np.arange(len(mesh.tets)), 4).reshape(-1, 4)
    signs = np.where(mesh.facet_tets[tet_facets, 0] == tet_ids, 1.0, -1.0)
    return tet_facets, signs


def _surface_p1_mass(mesh: TaggedMesh, facet_sel: np.ndarray, node_index: np.ndarray,
                     n: int) -> sp.csr_matrix:
    """P1 mass matrix on the facet subset, in skeleton-local node numbering."""
    if n == 0:
        return sp.csr_matrix((0, 0))
    tri = node_index[mesh.facets[facet_sel]]
    area = mesh.facet_areas[facet_sel]
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = area[:, None, None] * base[None, :, :]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


class EmiSystem:
    """Assembled implicit operator; constant for fixed (mesh, params, dt)."""

    def __init__(self, mesh: TaggedMesh, params: EmiParams, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if mesh.num_cells < 1:
            raise AssemblyError("mesh has no intracellular subdomain")
        self.mesh = mesh
        self.params = params
        self.dt = dt

        kind = mesh.facet_kind
        self.qdof = -np.ones(len(mesh.facets), dtype=np.int64)
        interior = np.nonzero(kind != EXTERIOR)[0]
        self.qdof[interior] = np.arange(len(interior))
        nq = len(interior)
        nt = len(mesh.tets)

        self.memb_nodes = mesh.membrane_nodes
        self.gap_nodes = mesh.gap_nodes
        nvert = len(mesh.vertices)
        self.vdof_of_node = -np.ones(nvert, dtype=np.int64)
        self.vdof_of_node[self.memb_nodes] = np.arange(len(self.memb_nodes))
        self.wdof_of_node = -np.ones(nvert, dtype=np.int64)
        self.wdof_of_node[self.gap_nodes] = np.arange(len(self.gap_nodes))
        nv, nw = len(self.memb_nodes), len(self.gap_nodes)

        sigma = np.where(mesh.tet_tag == EXTRACELLULAR, params.sigma_e, params.sigma_i)
        A = self._rt0_mass(sigma)
        B = self._div_coupling(nq, nt)
        Mm = self._trace_coupling(kind == MEMBRANE, self.vdof_of_node, nq, nv)
        Mg = self._trace_coupling(kind == GAP, self.wdof_of_node, nq, nw)
        self.Sm = _surface_p1_mass(mesh, np.nonzero(kind == MEMBRANE)[0], self.vdof_of_node, nv)
        self.Sg = _surface_p1_mass(mesh, np.nonzero(kind == GAP)[0], self.wdof_of_node, nw)

        cm_dt = params.C_m / dt
        cg_dt = params.C_gap / dt
        if params.gap_form == "literal":
            gf = 1.0 + 1.0 / params.R_gap
        else:
            gf = 1.0 + dt / (params.R_gap * params.C_gap)
        zt = None
        blocks = [
            [A, B, -Mm, -Mg if nw else None],
            [B.T, zt, zt, zt],
            [-Mm.T, zt, -cm_dt * self.Sm, zt],
        ]
        if nw:
            blocks.append([-Mg.T, zt, zt, -cg_dt * gf * self.Sg])
        else:
            blocks = [row[:3] for row in blocks]
        matrix = sp.bmat(blocks, format="csr")

        self.nq, self.nt, self.nv, self.nw = nq, nt, nv, nw
        dof_map = {
            "q": slice(0, nq),
            "u": slice(nq, nq + nt),
            "v_m": slice(nq + nt, nq + nt + nv),
            "w_g": slice(nq + nt + nv, nq + nt + nv + nw),
        }
        self.dof_map = dof_map
        extx = np.nonzero(mesh.tet_tag == EXTRACELLULAR)[0]
        self._gauge_tet = int(extx[0]) if len(extx) else 0
        pin = nq + self._gauge_tet
        self.system = LinearSystem(matrix, dof_map, pinned=[pin])
        self._gf = gf
        self._assemble_condensed()

    def _rt0_mass(self, sigma: np.ndarray) -> sp.csr_matrix:
        mesh = self.mesh
        tet_facets, signs = tet_facet_incidence(mesh)
        self.tet_facets, self.tet_signs = tet_facets, signs
        verts = mesh.vertices[mesh.tets]          # (nt, 4, 3)
        vol = mesh.tet_volumes
        cent = verts.mean(axis=1)                 # (nt, 3)
        c = cent[:, None, :] - verts              # c_a = centroid - P_a
        d = verts[:, None, :, :] - verts[:, :, None, :]  # d[t, a, i, :] = P_i - P_a
        s_ab = np.einsum("taid,tbid->tab", d, d)
        cc = np.einsum("tad,tbd->tab", c, c)
        integral = (vol / 20.0)[:, None, None] * (16.0 * cc + s_ab)
        coeff = (signs[:, :, None] * signs[:, None, :]) / (9.0 * vol**2 * sigma)[:, None, None]
        local = coeff * integral
        self._local_mass = local
        rows = np.repeat(self.qdof[tet_facets], 4, axis=1).ravel()
        cols = np.tile(self.qdof[tet_facets], (1, 4)).ravel()
        vals = local.ravel()
        keep = (rows >= 0) & (cols >= 0)
        nq = int(self.qdof.max()) + 1
        return sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nq, nq)).tocsr()

    def _div_coupling(self, nq: int, nt: int) -> sp.csr_matrix:
        rows = self.qdof[self.tet_facets].ravel()
        cols = np.repeat(np.arange(nt), 4)
        vals = self.tet_signs.ravel()
        keep = rows >= 0
        return sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nq, nt)).tocsr()

    def _trace_coupling(self, facet_sel: np.ndarray, node_index: np.ndarray,
                        nq: int, ncols: int) -> sp.csr_matrix:
        """<trace, p.n> on the selected facets: 1/3 per facet node."""
        if ncols == 0:
            return sp.csr_matrix((nq, 0))
        fids = np.nonzero(facet_sel)[0]
        tri = node_index[self.mesh.facets[fids]]
        rows = np.repeat(self.qdof[fids], 3)
        cols = tri.ravel()
        vals = np.full(rows.shape, 1.0 / 3.0)
        return sp.coo_matrix((vals, (rows, cols)), shape=(nq, ncols)).tocsr()

    def _assemble_condensed(self):
        """Hybridize: per-tet elimination onto the facet-trace skeleton."""
        mesh = self.mesh
        nt, nq, nv, nw = self.nt, self.nq, self.nv, self.nw
        inc, sgn = self.tet_facets, self.tet_signs
        drop = self.qdof[inc] < 0
        off = np.broadcast_to(drop[:, :, None], (nt, 4, 4)) \
            | np.broadcast_to(drop[:, None, :], (nt, 4, 4))
        Aloc = np.where(off, 0.0, self._local_mass)
        idx = np.arange(4)
        Aloc[:, idx, idx] += np.where(drop, 1.0, 0.0)
        svec = np.where(drop, 0.0, sgn)
        Ainv = np.linalg.inv(Aloc)
        As = np.einsum("tij,tj->ti", Ainv, svec)
        sAs = np.einsum("ti,ti->t", svec, As)
        Eloc = Ainv - As[:, :, None] * As[:, None, :] / sAs[:, None, None]
        self._cond = (Eloc, As, sAs, svec)
        del self._local_mass

        # trace gather: rows are local (tet, face) slots, columns the global
        # unknowns (facet trace; +1/3 per node of the jump seen from the
        # plus side of membrane/gap facets)
        nH = nq + nv + nw
        tt = np.repeat(np.arange(nt), 4)
        ff = inc.ravel()
        keep = ~drop.ravel()
        slot = 4 * tt + np.tile(np.arange(4), nt)
        rows = [slot[keep]]
        cols = [self.qdof[ff[keep]]]
        vals = [np.ones(keep.sum())]
        own = mesh.facet_tets[ff, 0] == tt
        kind = mesh.facet_kind
        for sel, base, nodemap in (
            (keep & own & (kind[ff] == MEMBRANE), nq, self.vdof_of_node),
            (keep & own & (kind[ff] == GAP), nq + nv, self.wdof_of_node),
        ):
            rows.append(np.repeat(slot[sel], 3))
            cols.append(base + nodemap[mesh.facets[ff[sel]]].ravel())
            vals.append(np.full(3 * sel.sum(), 1.0 / 3.0))
        G = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(4 * nt, nH),
        ).tocsr()
        self._gather = G

        Ep = Eloc * (svec[:, :, None] * svec[:, None, :])
        t16 = np.repeat(np.arange(nt), 16)
        a16 = np.tile(np.repeat(idx, 4), nt)
        b16 = np.tile(np.tile(idx, 4), nt)
        Ebd = sp.coo_matrix(
            (Ep.ravel(), (4 * t16 + a16, 4 * t16 + b16)), shape=(4 * nt, 4 * nt)
        ).tocsr()
        H = (G.T @ Ebd @ G).tocsr()
        cm_dt = self.params.C_m / self.dt
        cg_dt = self.params.C_gap / self.dt
        parts = [sp.csr_matrix((nq, nq)), cm_dt * self.Sm]
        if nw:
            parts.append(cg_dt * self._gf * self.Sg)
        H = H + sp.block_diag(parts, format="csr")
        cond_map = {
            "trace": slice(0, nq),
            "v_m": slice(nq, nq + nv),
            "w_g": slice(nq + nv, nH),
        }
        self.condensed = LinearSystem(H, cond_map, pinned=[0])

    def _condensed_rhs(self, v_tilde: np.ndarray, w_prev: np.ndarray) -> np.ndarray:
        rhs = np.zeros(self.nq + self.nv + self.nw)
        cm_dt = self.params.C_m / self.dt
        rhs[self.nq:self.nq + self.nv] = cm_dt * (self.Sm @ v_tilde)
        if self.nw:
            cg_dt = self.params.C_gap / self.dt
            rhs[self.nq + self.nv:] = cg_dt * (self.Sg @ w_prev)
        return rhs

    def advance(self, v_tilde: np.ndarray, w_prev: np.ndarray):
        """One implicit solve; returns (v, w) and keeps the trace solution."""
        y = self.condensed.solve(self._condensed_rhs(v_tilde, w_prev))
        self._last_trace = y
        return y[self.nq:self.nq + self.nv], y[self.nq + self.nv:]

    def recover(self):
        """Tet potentials and facet fluxes from the last condensed solve.

        Before any solve (e.g. a frame at t0) the fields are identically
        zero up to the potential gauge, so zeros are returned.
        """
        y = getattr(self, "_last_trace", None)
        if y is None:
            return np.zeros(self.nq), np.zeros(self.nt)
        Eloc, As, sAs, svec = self._cond
        lamhat = (self._gather @ y).reshape(self.nt, 4)
        qhat = np.einsum("tij,tj->ti", Eloc, svec * lamhat)
        u = np.einsum("ti,ti->t", As, svec * lamhat) / sAs
        u -= u[self._gauge_tet]
        q = np.zeros(self.nq)
        inc = self.tet_facets.ravel()
        side0 = (self.mesh.facet_tets[inc, 0] == np.repeat(np.arange(self.nt), 4)) \
            & (self.qdof[inc] >= 0)
        q[self.qdof[inc[side0]]] = qhat.ravel()[side0]
        return q, u

    def step_rhs(self, v_tilde: np.ndarray, w_prev: np.ndarray) -> np.ndarray:
        n = self.nq + self.nt + self.nv + self.nw
        rhs = np.zeros(n)
        sl = self.dof_map["v_m"]
        rhs[sl] = -(self.params.C_m / self.dt) * (self.Sm @ v_tilde)
        if self.nw:
            sl = self.dof_map["w_g"]
            rhs[sl] = -(self.params.C_gap / self.dt) * (self.Sg @ w_prev)
        return rhs

    def implicit_step(self, v_tilde: np.ndarray, w_prev: np.ndarray):
        v, w = self.advance(v_tilde, w_prev)
        q, u = self.recover()
        return q, u, v, w


def assemble_emi(mesh: TaggedMesh, params: EmiParams, dt: float) -> LinearSystem:
    return EmiSystem(mesh, params, dt).system
