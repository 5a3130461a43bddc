import itertools
from collections import defaultdict
from math import comb, factorial, sqrt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from photonic_qt.errors import DimensionMismatchError, InvalidParameterError, NumericalIntegrityError
from photonic_qt.linear_optics import (
    MeshParams,
    beam_splitter_2x2,
    check_unitary,
    clements_mesh,
    collision_free_count,
    default_input_state,
    distinguishable_output_distribution,
    enumerate_fock_basis,
    mesh_layout,
    mesh_placements,
    mzi_count,
    output_distribution,
    permanent,
    trainable_count,
)


def brute_permanent(a):
    n = a.shape[0]
    return sum(np.prod([a[i, p[i]] for i in range(n)]) for p in itertools.permutations(range(n)))


def haar_unitary(n, rng):
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def expand_creation_operators(u, state):
    """Oracle: multiply out prod_k (sum_j U[j, s_k] a_j^dag) over all output mode tuples."""
    modes_in = np.repeat(np.arange(len(state)), state)
    amp = defaultdict(complex)
    for outs in itertools.product(range(u.shape[0]), repeat=len(modes_in)):
        occ = tuple(np.bincount(outs, minlength=u.shape[0]))
        amp[occ] += np.prod([u[o, i] for o, i in zip(outs, modes_in)])
    norm_in = np.prod([factorial(s) for s in state])
    return {occ: abs(a) ** 2 * np.prod([factorial(t) for t in occ]) / norm_in for occ, a in amp.items()}


def independent_photons(u, state):
    """Oracle for distinguishable photons: each photon scatters on its own."""
    modes_in = np.repeat(np.arange(len(state)), state)
    probs = defaultdict(float)
    for outs in itertools.product(range(u.shape[0]), repeat=len(modes_in)):
        occ = tuple(np.bincount(outs, minlength=u.shape[0]))
        probs[occ] += np.prod([abs(u[o, i]) ** 2 for o, i in zip(outs, modes_in)])
    return probs


class TestCounts:
    def test_mesh_parameter_counts(self):
        assert trainable_count(9) == 108
        assert trainable_count(8) == 84
        assert trainable_count(9) + trainable_count(8) == 192

    def test_minimal_convention(self):
        assert trainable_count(9, "clements_minimal") == 45
        assert trainable_count(8, "clements_minimal") == 36

    def test_collision_free_counts(self):
        assert collision_free_count(9, 4) == 126
        assert collision_free_count(8, 4) == 70

    def test_unknown_convention(self):
        with pytest.raises(InvalidParameterError):
            trainable_count(4, "bogus")

    @given(st.integers(1, 12))
    def test_layout_covers_every_mzi_once(self, m):
        layout = mesh_layout(m)
        assert len(layout) == mzi_count(m)
        assert all(q == p + 1 and 0 <= p < m - 1 for _, p, q in layout)

    def test_layout_is_checkerboard(self):
        layers = defaultdict(list)
        for layer, p, _ in mesh_layout(5):
            layers[layer].append(p)
        assert layers[0] == [0, 2] and layers[1] == [1, 3]


class TestMesh:
    def test_unitarity_over_random_draws(self, rng):
        worst = 0.0
        for _ in range(100):
            m = int(rng.integers(2, 10))
            u = clements_mesh(m, MeshParams.random(m, rng))
            worst = max(worst, check_unitary(u))
        assert worst < 1e-10

    def test_zero_phases_give_identity(self):
        assert np.allclose(clements_mesh(6, MeshParams.zeros(6)), np.eye(6))

    def test_two_mode_mesh_is_one_block(self):
        theta, phi_in, phi_out = 0.3, 1.1, -0.4
        u = clements_mesh(2, [theta, phi_in, phi_out])
        expected = np.diag([np.exp(1j * phi_out), 1.0]) @ beam_splitter_2x2(theta, phi_in)
        assert np.allclose(u, expected)

    def test_placements_match_layout(self, rng):
        params = MeshParams.random(5, rng)
        placements = mesh_placements(params)
        assert [pl.mode_pair for pl in placements] == [(p, q) for _, p, q in mesh_layout(5)]
        assert placements[0].theta == params.phases[0]

    def test_wrong_length_rejected(self):
        with pytest.raises(DimensionMismatchError):
            MeshParams(4, np.zeros(5))

    def test_non_finite_rejected(self):
        bad = np.zeros(trainable_count(3))
        bad[2] = np.nan
        with pytest.raises(InvalidParameterError):
            MeshParams(3, bad)

    def test_check_unitary_rejects(self):
        with pytest.raises(NumericalIntegrityError):
            check_unitary(np.array([[1.0, 0.1], [0.0, 1.0]]))

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_beam_splitter_unitary(self, theta, phi):
        b = beam_splitter_2x2(theta, phi)
        assert np.allclose(b.conj().T @ b, np.eye(2), atol=1e-12)


class TestPermanent:
    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_ryser_matches_brute_force(self, n, rng):
        for _ in range(5):
            a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            ref = brute_permanent(a)
            assert abs(permanent(a) - ref) <= 1e-10 * max(abs(ref), 1e-300)

    def test_identity_and_ones(self):
        assert permanent(np.eye(4)) == pytest.approx(1.0)
        assert permanent(np.ones((4, 4))) == pytest.approx(24.0)

    def test_real_input(self):
        a = np.arange(9.0).reshape(3, 3)
        assert permanent(a) == pytest.approx(brute_permanent(a))

    def test_non_square_rejected(self):
        with pytest.raises(DimensionMismatchError):
            permanent(np.zeros((2, 3)))

    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_row_permutation_invariance(self, n, seed):
        r = np.random.default_rng(seed)
        a = r.standard_normal((n, n))
        assert permanent(a[r.permutation(n)]) == pytest.approx(permanent(a), rel=1e-9, abs=1e-12)


class TestDistributions:
    def test_hong_ou_mandel(self):
        u = beam_splitter_2x2(np.pi / 4, 0.0)
        probs = output_distribution(u, [1, 1])
        basis = enumerate_fock_basis(2, 2)
        assert probs[basis.index((1, 1))] < 1e-12
        assert probs[basis.index((2, 0))] == pytest.approx(0.5)

    def test_distinguishable_photons_do_not_bunch(self):
        u = beam_splitter_2x2(np.pi / 4, 0.0)
        probs = distinguishable_output_distribution(u, [1, 1])
        assert probs[enumerate_fock_basis(2, 2).index((1, 1))] == pytest.approx(0.5)

    def test_basis_order_and_size(self):
        basis = enumerate_fock_basis(3, 2)
        assert len(basis) == comb(4, 2)
        assert tuple(basis.states[0]) == (2, 0, 0)
        assert basis.collision_free_mask().sum() == 3

    @pytest.mark.parametrize("m,state", [(3, (1, 1, 0)), (3, (2, 1, 0)), (4, (1, 1, 1, 0)), (4, (1, 0, 1, 1))])
    def test_matches_creation_operator_expansion(self, m, state, rng):
        u = haar_unitary(m, rng)
        probs = output_distribution(u, state)
        oracle = expand_creation_operators(u, np.array(state))
        basis = enumerate_fock_basis(m, sum(state))
        for occ, p in oracle.items():
            assert probs[basis.index(occ)] == pytest.approx(p, abs=1e-12)

    @pytest.mark.parametrize("m,state", [(3, (1, 1, 0)), (4, (1, 1, 1, 0))])
    def test_distinguishable_matches_independent_scattering(self, m, state, rng):
        u = haar_unitary(m, rng)
        probs = distinguishable_output_distribution(u, state)
        oracle = independent_photons(u, np.array(state))
        basis = enumerate_fock_basis(m, sum(state))
        for occ, p in oracle.items():
            assert probs[basis.index(occ)] == pytest.approx(p, abs=1e-12)

    def test_single_photon_is_column_modulus(self, rng):
        u = haar_unitary(5, rng)
        probs = output_distribution(u, [1, 0, 0, 0, 0])
        assert np.allclose(probs, np.abs(u[:, 0]) ** 2)

    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_normalized(self, m, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, min(m, 4) + 1))
        u = clements_mesh(m, MeshParams.random(m, r))
        state = default_input_state(m, n)
        assert abs(output_distribution(u, state).sum() - 1.0) < 1e-9
        assert abs(distinguishable_output_distribution(u, state).sum() - 1.0) < 1e-9

    def test_input_validation(self):
        with pytest.raises(DimensionMismatchError):
            output_distribution(np.eye(3), [1, 1])
        with pytest.raises(InvalidParameterError):
            default_input_state(2, 3)
