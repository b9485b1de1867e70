import logging

import numpy as np
import pytest
import scipy.sparse as sp

from sicurve.cell_model import CellParams
from sicurve.fem.bidomain import (BidomainParams, BidomainSystem, mass_matrix,
                                  p1_gradients, stiffness_matrix)
from sicurve.fem.emi import EmiParams, EmiSystem
from sicurve.fem.linsys import (AssemblyError, LinearSystem, SolverError,
                                check_symmetry)
from sicurve.geometry import BoxSpec, EmiCellLayout, build_bidomain_mesh


def test_p1_gradients_reproduce_linear_fields(small_bidomain_mesh):
    mesh = small_bidomain_mesh
    grads = p1_gradients(mesh)
    coeff = np.array([0.3, -1.2, 2.5])
    nodal = mesh.vertices @ coeff
    per_tet = np.einsum("tid,ti->td", grads, nodal[mesh.tets])
    np.testing.assert_allclose(per_tet, np.tile(coeff, (len(mesh.tets), 1)),
                               atol=1e-10)


def test_stiffness_annihilates_constants(small_bidomain_mesh):
    K = stiffness_matrix(small_bidomain_mesh, (1.0, 2.0, 3.0))
    ones = np.ones(K.shape[0])
    assert np.max(np.abs(K @ ones)) < 1e-12
    # Dirichlet energy of a linear field: integral of sigma |grad u|^2
    coeff = np.array([1.0, 0.5, -2.0])
    u = small_bidomain_mesh.vertices @ coeff
    vol = small_bidomain_mesh.tet_volumes.sum()
    energy = float(u @ (K @ u))
    assert energy == pytest.approx(vol * float(coeff @ (np.array([1, 2, 3.0]) * coeff)))


def test_mass_matrix_row_sums(small_bidomain_mesh):
    M = mass_matrix(small_bidomain_mesh)
    assert M.sum() == pytest.approx(small_bidomain_mesh.tet_volumes.sum())
    assert np.all(M.diagonal() > 0)


def test_bidomain_system_symmetric_and_definite(small_bidomain_mesh):
    system = BidomainSystem(small_bidomain_mesh, BidomainParams(), 0.1)
    assert check_symmetry(system.system.matrix) < 1e-12
    x = system.system.solve(np.random.default_rng(0).standard_normal(
        system.system.matrix.shape[0]))
    assert np.all(np.isfinite(x))
    assert system.system._mode == "cholesky"


def test_bidomain_uniform_state_is_stationary(small_bidomain_mesh):
    system = BidomainSystem(small_bidomain_mesh, BidomainParams(), 0.1)
    v0 = np.full(system.n_nodes, -83.0)
    v, u_e = system.implicit_step(v0)
    np.testing.assert_allclose(v, v0, atol=1e-9)
    np.testing.assert_allclose(u_e, 0.0, atol=1e-9)


def test_solve_roundtrip_residual(small_bidomain_mesh):
    system = BidomainSystem(small_bidomain_mesh, BidomainParams(), 0.1)
    rng = np.random.default_rng(3)
    b = rng.standard_normal(system.system.matrix.shape[0])
    b[system.system.pinned] = 0.0
    x = system.system.solve(b, check=True)   # raises if residual > 1e-10
    assert np.all(np.isfinite(x))


def test_linsys_rejects_asymmetry():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [0.5, 2.0]]))
    with pytest.raises((SolverError, AssemblyError, ValueError)):
        LinearSystem(A, {"x": slice(0, 2)})


def test_indefinite_matrix_falls_back_to_lu(caplog):
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    system = LinearSystem(A, {"x": slice(0, 2)})
    with caplog.at_level(logging.WARNING):
        x = system.solve(np.array([1.0, 2.0]))
    assert system._mode == "lu"
    np.testing.assert_allclose(x, [2.0, 1.0])
    assert any("positive definite" in r.message.lower() or "cholesky" in
               r.message.lower() for r in caplog.records)


def test_singular_system_raises():
    A = sp.csr_matrix(np.zeros((3, 3)))
    system = LinearSystem(A + sp.eye(3) * 0, {"x": slice(0, 3)})
    with pytest.raises((AssemblyError, SolverError, RuntimeError)):
        system.solve(np.ones(3))


def test_emi_mixed_system_symmetric(two_cell_mesh):
    system = EmiSystem(two_cell_mesh, EmiParams(), 0.1)
    assert check_symmetry(system.system.matrix) < 1e-12
    assert check_symmetry(system.condensed.matrix) < 1e-12


def test_emi_hybrid_matches_mixed(two_cell_mesh, cell_params):
    """The condensed solve must reproduce the mixed saddle-point solve."""
    system = EmiSystem(two_cell_mesh, EmiParams(), 0.1)
    rng = np.random.default_rng(7)
    v = -83.0 + 5.0 * rng.standard_normal(system.nv)
    w = 0.5 * rng.standard_normal(system.nw)
    # mixed path
    x = system.system.solve(system.step_rhs(v, w))
    sl = system.system.dof_map
    v_mixed = x[sl["v_m"]]
    u_mixed = x[sl["u"]]
    # hybrid path
    v_hyb, w_hyb = system.advance(v, w)
    q_hyb, u_hyb = system.recover()
    np.testing.assert_allclose(v_hyb, v_mixed, atol=1e-8)
    u_shift = u_mixed - u_mixed[system._gauge_tet]
    np.testing.assert_allclose(u_hyb, u_shift, atol=1e-8)
    w_mixed = x[sl["w_g"]]
    np.testing.assert_allclose(w_hyb, w_mixed, atol=1e-8)


def test_emi_uniform_membrane_potential_is_stationary(two_cell_mesh):
    system = EmiSystem(two_cell_mesh, EmiParams(), 0.1)
    v = np.full(system.nv, -83.0)
    w = np.zeros(system.nw)
    v1, w1 = system.advance(v, w)
    np.testing.assert_allclose(v1, v, atol=1e-8)
    np.testing.assert_allclose(w1, 0.0, atol=1e-8)


def test_emi_gap_decay_rate(two_cell_mesh):
    """With v clamped uniform, a uniform gap potential decays geometrically."""
    params = EmiParams()
    system = EmiSystem(two_cell_mesh, params, 0.1)
    v = np.full(system.nv, -83.0)
    w = np.ones(system.nw)
    _, w1 = system.advance(v, w)
    ratios = w1 / w
    # the RC interface drains a uniform gap potential fast but never flips it
    assert np.all((ratios > 0) & (ratios < 0.1))


def test_diffusion_smooths_perturbation(small_bidomain_mesh):
    system = BidomainSystem(small_bidomain_mesh, BidomainParams(), 0.1)
    v = np.full(system.n_nodes, -83.0)
    v[0] += 10.0
    v1, _ = system.implicit_step(v)
    assert v1[0] < v[0]                        # peak decays
    assert v1.min() > -83.0 - 1e-3             # tiny P1 undershoot only
    # the mass-weighted integral of v is conserved by pure diffusion
    total0 = float(system.mass @ v @ np.ones_like(v))
    total1 = float(system.mass @ v1 @ np.ones_like(v1))
    assert total1 == pytest.approx(total0, rel=1e-9)
