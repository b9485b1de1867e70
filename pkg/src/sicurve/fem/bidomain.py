"""P1-P1 backward-Euler system for the homogenized two-potential tissue model.

Unknowns are nodal (v, u_e).  One implicit step solves

    (M/dt) v + a K_i (v + u_e)            = (M/dt) v_tilde
    a K_i v + a (K_i + K_e) u_e           = 0,          a = 1 / (chi * C_m)

with natural zero-flux boundaries.  u_e is determined up to a constant, so
one extracellular dof is pinned to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..cell_model import CellState
from ..geometry import TaggedMesh
from .linsys import LinearSystem


@dataclass(frozen=True)
class BidomainParams:
    sigma_i: tuple[float, float, float] = (0.2525, 0.0222, 0.0222)  # uA/(mV*mm)
    sigma_e: tuple[float, float, float] = (0.821, 0.215, 0.215)
    C_m: float = 0.01    # uF/mm^2
    chi: float = 150.0   # 1/mm

    def __post_init__(self):
        if any(s <= 0 for s in self.sigma_i + self.sigma_e):
            raise ValueError("conductivity entries must be positive")
        if self.C_m <= 0 or self.chi <= 0:
            raise ValueError("C_m and chi must be positive")


@dataclass
class BidomainField:
    v: np.ndarray
    u_e: np.ndarray
    cells: CellState


def p1_gradients(mesh: TaggedMesh):
    """Per-tet constant gradients of the four P1 basis functions: (nt, 4, 3)."""
    verts = mesh.vertices[mesh.tets]  # (nt, 4, 3)
    e = verts[:, 1:] - verts[:, 0:1]  # (nt, 3, 3): edge matrix rows
    einv = np.linalg.inv(e)           # columns are gradients of lambda_1..3
    g123 = np.transpose(einv, (0, 2, 1))
    g0 = -g123.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g123], axis=1)


def stiffness_matrix(mesh: TaggedMesh, sigma_diag) -> sp.csr_matrix:
    """Anisotropic P1 stiffness with a constant diagonal conductivity tensor."""
    grads = p1_gradients(mesh)
    vol = mesh.tet_volumes
    sig = np.asarray(sigma_diag, dtype=float)
    k_loc = np.einsum("t,tid,d,tjd->tij", vol, grads, sig, grads)
    return _scatter(mesh, k_loc)


def mass_matrix(mesh: TaggedMesh) -> sp.csr_matrix:
    vol = mesh.tet_volumes
    base = (np.ones((4, 4)) + np.eye(4)) / 20.0
    m_loc = vol[:, None, None] * base[None, :, :]
    return _scatter(mesh, m_loc)


def _scatter(mesh: TaggedMesh, local: np.ndarray) -> sp.csr_matrix:
    n = len(mesh.vertices)
    t = mesh.tets
    rows = np.repeat(t, 4, axis=1).ravel()
    cols = np.tile(t, (1, 4)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


class BidomainSystem:
    """Assembled implicit step operator; constant for fixed (mesh, params, dt)."""

    def __init__(self, mesh: TaggedMesh, params: BidomainParams, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.mesh = mesh
        self.params = params
        self.dt = dt
        n = len(mesh.vertices)
        self.n_nodes = n
        a = 1.0 / (params.chi * params.C_m)
        ki = stiffness_matrix(mesh, params.sigma_i) * a
        kie = stiffness_matrix(
            mesh, np.asarray(params.sigma_i) + np.asarray(params.sigma_e)
        ) * a
        self.mass = mass_matrix(mesh)
        top = sp.hstack([self.mass / dt + ki, ki])
        bot = sp.hstack([ki, kie])
        matrix = sp.vstack([top, bot]).tocsr()
        dof_map = {"v": slice(0, n), "u_e": slice(n, 2 * n)}
        # all-Neumann problem fixes u_e only up to a constant: pin the last dof
        self.system = LinearSystem(matrix, dof_map, pinned=[2 * n - 1])

    def step_rhs(self, v_tilde: np.ndarray) -> np.ndarray:
        rhs = np.zeros(2 * self.n_nodes)
        rhs[: self.n_nodes] = self.mass @ (v_tilde / self.dt)
        return rhs

    def implicit_step(self, v_tilde: np.ndarray):
        x = self.system.solve(self.step_rhs(v_tilde))
        return x[: self.n_nodes], x[self.n_nodes:]


def assemble_bidomain(mesh: TaggedMesh, params: BidomainParams, dt: float) -> LinearSystem:
    return BidomainSystem(mesh, params, dt).system
