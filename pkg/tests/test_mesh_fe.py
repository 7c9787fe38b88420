import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from crossdiff.errors import MeshMismatch
from crossdiff.mesh_fe import (
    Mesh1D,
    NodalField,
    assemble_banded,
    deinterleave,
    element_gradient,
    interleave,
    interpolate,
    l2_project,
    lumped_inner,
)


def dense_oracle(blocks, reaction, weight, mesh, advection=None):
    """Element-by-element dense assembly, written independently of the
    banded code: lumped mass, local stiffness [[1,-1],[-1,1]]/h per block and
    a centered advective flux g*(u_k + u_{k+1})/2 tested with chi_{k+1}-chi_k."""
    M, h, w = mesh.num_cells, mesh.h, mesh.weights
    n = 2 * (M + 1)
    A = np.zeros((n, n))
    for node in range(M + 1):
        for i in range(2):
            A[2 * node + i, 2 * node + i] += (weight + reaction[i, node]) * w[node]
    local = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    for k in range(M):
        for i in range(2):
            for j in range(2):
                for p in range(2):
                    for r in range(2):
                        A[2 * (k + p) + i, 2 * (k + r) + j] += blocks[k, i, j] * local[p, r]
            if advection is not None:
                g = 0.5 * advection[k, i]
                for p, sign in ((0, -1.0), (1, 1.0)):
                    for r in range(2):
                        A[2 * (k + p) + i, 2 * (k + r) + i] += sign * g
    return A


def test_mesh_geometry():
    mesh = Mesh1D(0.0, 3.0, 3)
    assert mesh.h == 1.0
    np.testing.assert_array_equal(mesh.nodes, [0, 1, 2, 3])
    np.testing.assert_array_equal(mesh.weights, [0.5, 1, 1, 0.5])
    assert mesh.measure == 3.0


@pytest.mark.parametrize("args", [(1.0, 0.0, 4), (0.0, 1.0, 1), (0.0, 1.0, 2.5), (0.0, np.inf, 3)])
def test_mesh_rejects_bad_input(args):
    with pytest.raises(ValueError):
        Mesh1D(*args)


def test_lumped_inner_of_ones_is_measure():
    mesh = Mesh1D(0.0, 3.0, 3)
    one = NodalField.constant(mesh, 1.0)
    assert lumped_inner(one, one) == pytest.approx(3.0, abs=1e-14)


def test_lumped_inner_initial_mass_of_first_setup():
    # u_i0 = 10 on (0, 3)
    for M in (3, 17, 301):
        mesh = Mesh1D(0.0, 3.0, M)
        val = lumped_inner(NodalField.constant(mesh, 10.0), NodalField.constant(mesh, 1.0))
        assert val == pytest.approx(30.0, rel=1e-13)


def test_lumped_inner_single_interior_node():
    mesh = Mesh1D(0.0, 1.0, 2)
    f = NodalField(mesh, [0.0, 1.0, 0.0])
    assert lumped_inner(f, NodalField.constant(mesh, 1.0)) == pytest.approx(0.5)


def test_lumped_inner_mesh_mismatch():
    a = NodalField.constant(Mesh1D(0.0, 1.0, 4), 1.0)
    b = NodalField.constant(Mesh1D(0.0, 1.0, 5), 1.0)
    with pytest.raises(MeshMismatch):
        lumped_inner(a, b)


def test_nodal_field_rejects_wrong_shape_and_nan():
    mesh = Mesh1D(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        NodalField(mesh, [1.0, 2.0])
    with pytest.raises(ValueError):
        NodalField(mesh, [1.0, np.nan, 2.0])


def test_interpolate_drift_root():
    mesh = Mesh1D(0.0, 3.0, 6)
    q = interpolate(lambda x: -3 * (x - 0.5), mesh)
    assert q.values[1] == 0.0  # node x = 0.5


def test_interpolate_examples():
    mesh = Mesh1D(0.0, 1.0, 2)
    np.testing.assert_array_equal(interpolate(lambda x: x**2, mesh).values, [0, 0.25, 1])
    np.testing.assert_array_equal(interpolate(lambda x: 10.0 + 0 * x, mesh).values, [10, 10, 10])


def test_l2_project_matches_interpolation_for_continuous_data():
    mesh = Mesh1D(0.0, 1.0, 1000)
    bump = lambda x: np.exp(-((x - 0.4) ** 2) / 0.001)  # noqa: E731
    p = l2_project(bump, mesh)
    np.testing.assert_array_equal(p.values, interpolate(bump, mesh).values)
    assert p.values[400] == 1.0


def test_element_gradient_examples():
    mesh = Mesh1D(0.0, 1.0, 2)
    np.testing.assert_array_equal(element_gradient(NodalField.constant(mesh, 3.0)), [0, 0])
    np.testing.assert_allclose(element_gradient(interpolate(lambda x: x, Mesh1D(0, 1, 7))), 1.0)
    np.testing.assert_array_equal(element_gradient(NodalField(mesh, [0, 1, 0])), [2, -2])


def test_assembly_zero_blocks_is_scaled_mass():
    mesh = Mesh1D(0.0, 1.0, 4)
    tau = 1e-3
    S = assemble_banded(np.zeros((4, 2, 2)), np.zeros((2, 5)), 1 / tau, mesh).to_dense()
    np.testing.assert_allclose(S, np.diag(np.repeat(mesh.weights, 2)) / tau)


def test_assembly_single_species_stiffness_by_hand():
    mesh = Mesh1D(0.0, 1.0, 2)
    blocks = np.zeros((2, 2, 2))
    blocks[:, 0, 0] = 1.0
    S = assemble_banded(blocks, np.zeros((2, 3)), 1.0, mesh).to_dense()
    h = 0.5
    K = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]]) / h
    expected = K + np.diag([0.25, 0.5, 0.25])
    np.testing.assert_allclose(S[0::2, 0::2], expected, atol=1e-14)


def test_assembly_cross_block_couples_species():
    mesh = Mesh1D(0.0, 1.0, 3)
    blocks = np.zeros((3, 2, 2))
    blocks[:, 0, 1] = 0.7
    S = assemble_banded(blocks, np.zeros((2, 4)), 1.0, mesh).to_dense()
    assert np.any(S[0::2, 1::2] != 0)
    assert not np.any(S[1::2, 0::2])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.booleans())
def test_assembly_matches_dense_oracle(M, seed, with_adv):
    rng = np.random.default_rng(seed)
    mesh = Mesh1D(-0.5, 2.0, M)
    blocks = rng.normal(size=(M, 2, 2))
    reaction = rng.normal(size=(2, M + 1))
    adv = rng.normal(size=(M, 2)) if with_adv else None
    S = assemble_banded(blocks, reaction, 7.0, mesh, adv)
    A = dense_oracle(blocks, reaction, 7.0, mesh, adv)
    np.testing.assert_allclose(S.to_dense(), A, atol=1e-12)
    x = rng.normal(size=S.size)
    np.testing.assert_allclose(S.matvec(x), A @ x, atol=1e-11)


def test_assembly_shape_checks():
    mesh = Mesh1D(0.0, 1.0, 3)
    with pytest.raises(ValueError):
        assemble_banded(np.zeros((2, 2, 2)), np.zeros((2, 4)), 1.0, mesh)
    with pytest.raises(ValueError):
        assemble_banded(np.zeros((3, 2, 2)), np.zeros((2, 3)), 1.0, mesh)
    with pytest.raises(ValueError):
        assemble_banded(np.zeros((3, 2, 2)), np.zeros((2, 4)), 0.0, mesh)


@given(arrays(float, st.tuples(st.just(2), st.integers(1, 30)), elements=st.floats(-1e3, 1e3)))
def test_interleave_round_trip(u):
    x = interleave(u)
    assert x[0] == u[0, 0] and x[1] == u[1, 0]
    np.testing.assert_array_equal(deinterleave(x), u)
