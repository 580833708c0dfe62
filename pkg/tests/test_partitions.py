import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.errors import ContractError, MalformedPartitionError
from artifact.families import random_standard_family
from artifact.geometry import Space
from artifact.partitions import (PartitionSpec, cell_of, cells_of, equidistant_points, estimate_volumes,
                                 interface_samples, interface_sphere, make_partition, nonempty_pairs,
                                 nonempty_triples, scores, sphere_lift, standard_flat_partition,
                                 triple_points)
from artifact.mobius import stereo_H, stereo_R


@pytest.mark.parametrize("n,q", [(2, 2), (2, 3), (2, 4), (3, 5), (4, 6)])
def test_equidistant_points(n, q):
    Z = equidistant_points(q, n)
    assert Z.shape == (q, n + 1)
    assert np.allclose(Z.sum(0), 0, atol=1e-14)
    G = Z @ Z.T
    assert np.allclose(np.diag(G), 1)
    assert np.allclose(G[~np.eye(q, dtype=bool)], -1 / (q - 1))


def test_standard_partition_is_flat_and_consistent():
    part = standard_flat_partition(3, 5)
    assert np.all(part.K == 0)
    for i in range(5):
        for j in range(i + 1, 5):
            sph = interface_sphere(part, i, j)
            assert abs(np.linalg.norm(sph.c) - 1) < 1e-14
    assert len(nonempty_pairs(part)) == 10


def test_partition_validation():
    with pytest.raises(ContractError):
        make_partition(Space("S", 2), [[1, 0, 0]], [0])
    with pytest.raises(ContractError):
        make_partition(Space("S", 2), [[1, 0, 0], [1, 0, 0]], [0, 0])
    with pytest.raises(ContractError):
        make_partition(Space("R", 2), [[1, 0], [0, 0]], [0, 0])          # kS missing
    with pytest.raises(ContractError):
        make_partition(Space("S", 2), [[1, 0], [0, 0]], [0, 0])          # wrong length
    bad = make_partition(Space("S", 2), [[0, 0, 2.0], [0, 0, 0]], [0.5, 0])
    with pytest.raises(MalformedPartitionError):
        interface_sphere(bad, 0, 1)


def test_json_roundtrip():
    part, = random_standard_family("R", 3, 4, 1, seed=7)
    again = PartitionSpec.from_json(json.loads(json.dumps(part.to_json())))
    assert np.array_equal(again.C, part.C) and np.array_equal(again.KS, part.KS)
    with pytest.raises(ContractError):
        PartitionSpec.from_json({"space": {"kind": "S"}, "cells": []})


@pytest.mark.parametrize("kind", "RH")
@given(seed=st.integers(0, 2 ** 31))
def test_lifted_scores_are_positive_multiples(kind, seed):
    part, = random_standard_family(kind, 3, 4, 1, seed=seed % 1000)
    rng = np.random.default_rng(seed)
    if kind == "R":
        P = rng.standard_normal((50, 3))
        L = stereo_R(P)
        factor = 1 + np.einsum("mi,mi->m", P, P)
    else:
        v = rng.standard_normal((50, 3))
        P = np.hstack([v, np.sqrt(1 + np.einsum("mi,mi->m", v, v))[:, None]])
        L = stereo_H(P)
        factor = P[:, -1]
    C, K = sphere_lift(part)
    native = scores(part, P)
    lifted = L @ C.T + K
    assert np.allclose(lifted * factor[:, None], native, atol=1e-9 * np.abs(native).max())


def test_cell_of_and_ties():
    part = standard_flat_partition(2, 3)
    p = -part.C[0] / np.linalg.norm(part.C[0])
    assert cell_of(part, p) == 0
    tie = np.array([0, 0, 1.0])
    assert cell_of(part, tie) is None
    assert cells_of(part, tie[None])[0] == -1
    with pytest.raises(ContractError):
        cell_of(part, np.array([0, 0, 2.0]))


@pytest.mark.parametrize("kind", "SRH")
def test_interface_samples_lie_on_interface(kind):
    part, = random_standard_family(kind, 3, 4, 1, seed=11)
    for i, j in nonempty_pairs(part):
        P = interface_samples(part, i, j, 512, seed=1, radius=4.0)
        s = scores(part, P)
        assert np.allclose(s[:, i], s[:, j], atol=1e-8 * (1 + np.abs(s).max()))
        assert np.all(np.delete(s, [i, j], 1).min(1) > s[:, i] - 1e-12)


def test_triple_points_equal_scores():
    part, = random_standard_family("S", 3, 5, 1, seed=3)
    trip = nonempty_triples(part)
    assert len(trip) == 10
    P = triple_points(part, *trip[0], count=16)
    s = scores(part, P)[:, list(trip[0])]
    assert np.ptp(s, axis=1).max() < 1e-10


def test_volumes_of_standard_partition():
    part = standard_flat_partition(2, 4)
    est = estimate_volumes(part, 10 ** 5, seed=0)
    assert np.allclose(est.values, np.pi, atol=5 * est.stderr.max())
    assert not est.unbounded.any()
    with pytest.raises(ContractError):
        estimate_volumes(part, 100)


def test_volumes_gaussian_halfplanes():
    part = make_partition(Space("G", 2), [[1.0, 0], [-1.0, 0]], [0, 0])
    est = estimate_volumes(part, 10 ** 5, seed=5)
    assert abs(est.values[0] - 0.5) < 5 * est.stderr[0]
    assert est.unbounded.all()
