import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twapt.corr import basis_kernels
from twapt.model import ValidationError
from twapt.pathways import (LiouvillePathway, chi1_direct, chi1_kernel, chi2_direct, chi2_kernel,
                            enumerate_pathways, mode_set, theta_envfree)

from conftest import random_discrete_system


@pytest.mark.parametrize("M,N", [(2, 0), (2, 1), (2, 3), (3, 2), (4, 2)])
def test_pathway_counts(M, N):
    paths = enumerate_pathways(M, N, (0, M - 1))
    assert len(paths) == (2 * (M - 1)) ** N
    assert len(set(paths)) == len(paths)
    for p in paths:
        assert p.order == N and p.pairs[-1] == (0, M - 1)


def test_two_state_pathways_are_binary():
    paths = enumerate_pathways(2, 3, (0, 0))
    assert len(paths) == 8
    # every pathway alternates parity, so a diagonal end starts from a coherence
    assert all(p.pairs[0][0] != p.pairs[0][1] for p in paths)


def test_pathway_validation():
    with pytest.raises(ValidationError):
        LiouvillePathway((0, 1), (0, 1))
    with pytest.raises(ValidationError):
        LiouvillePathway((0, 0), (1, 1))
    with pytest.raises(ValidationError):
        LiouvillePathway((), ())
    with pytest.raises(ValidationError):
        enumerate_pathways(2, -1, (0, 0))
    with pytest.raises(ValidationError):
        enumerate_pathways(2, 1, (0, 2))


def test_signs_and_steps():
    p = LiouvillePathway((0, 1, 1, 2), (2, 2, 0, 0))
    assert p.signs == (1, -1, 1)
    assert p.step_indices(1) == (1, 0)
    assert p.step_indices(2) == (2, 0)
    assert p.step_indices(3) == (2, 1)
    assert "[LRL]" in str(p)


def test_filters():
    V = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    paths = enumerate_pathways(3, 2, (0, 0), couplings=V)
    for p in paths:
        for j in (1, 2):
            assert V[p.step_indices(j)] != 0
    donor = enumerate_pathways(3, 2, (0, 0), initial_filter=lambda a, b: a == b == 1)
    assert all(p.pairs[0] == (1, 1) for p in donor)
    assert len(donor) == 2


def test_theta_envfree_sign_rule():
    V = np.array([[0, 2 + 1j], [2 - 1j, 0]])
    assert theta_envfree(LiouvillePathway((0, 1), (0, 0)), V) == V[1, 0]
    assert theta_envfree(LiouvillePathway((0, 0), (1, 0)), V) == -V[1, 0]
    assert theta_envfree(LiouvillePathway((1, 0, 0), (1, 1, 0)), V) == pytest.approx(-V[0, 1] * V[1, 0])
    assert theta_envfree(LiouvillePathway((1,), (0,)), V) == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 3), st.booleans())
def test_chi_direct_matches_kernel_route(seed, M, centers):
    rng = np.random.default_rng(seed)
    osys = random_discrete_system(rng, M, 4, centers=centers)
    modes = mode_set(osys, "eigen")
    kern = basis_kernels(osys, "eigen")
    final = (int(rng.integers(M)), int(rng.integers(M)))
    for N, direct, kernel in ((1, chi1_direct, chi1_kernel), (2, chi2_direct, chi2_kernel)):
        paths = enumerate_pathways(M, N, final)
        p = paths[int(rng.integers(len(paths)))]
        tau = np.concatenate([[0.0], np.sort(rng.uniform(0, 250, N + 1))])
        a, b = direct(p, tau, modes), kernel(kern, p, tau)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


def test_chi_wrong_order():
    osys = random_discrete_system(np.random.default_rng(1), 2, 2)
    modes = mode_set(osys, "eigen")
    p = LiouvillePathway((0, 1, 1), (0, 0, 1))
    with pytest.raises(ValidationError):
        chi1_direct(p, [0, 1, 2, 3], modes)
    with pytest.raises(ValidationError):
        chi2_kernel(basis_kernels(osys, "eigen"), LiouvillePathway((0,), (0,)), [0, 1])
