import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.errors import ContractError, InfeasibleError
from artifact.families import geodesic_ball, h_cluster, hypo_flat_H, random_standard_family
from artifact.flatness import (FlatnessCertificate, PotentialSpec, build_potential, check_positive,
                               classify_hypo_epi, potential_ambient_grad, potential_eval,
                               potential_normal_derivative, sample_model_space, solve_flatness)
from artifact.geometry import Space, inner
from artifact.partitions import make_partition, nonempty_pairs, sphere_lift, standard_flat_partition


@pytest.mark.parametrize("kind", "SRH")
def test_standard_images_are_flat(kind):
    for part in random_standard_family(kind, 3, 4, 3, seed=21):
        cert = solve_flatness(part)
        assert cert.feasible and cert.status == "feasible"
        C, K = sphere_lift(part)
        for i, j in nonempty_pairs(part):
            assert abs((C[i] - C[j]) @ cert.xi + K[i] - K[j]) < 1e-9
        V = build_potential(part.space, cert)
        P = sample_model_space(part.space, 2000, np.random.default_rng(0), radius=4.0)
        assert check_positive(V, P)


def test_standard_partition_certificate_is_origin():
    cert = solve_flatness(standard_flat_partition(3, 5))
    assert np.allclose(cert.xi, 0) and cert.dim == 0


def test_certificate_json_roundtrip():
    cert = solve_flatness(standard_flat_partition(2, 3))
    again = FlatnessCertificate.from_json(cert.to_json())
    assert again.feasible and np.array_equal(again.xi, cert.xi)
    with pytest.raises(ContractError):
        FlatnessCertificate.from_json({"xi": [0, 0, 0]})


def test_infeasible_configuration():
    # three caps with incompatible curvature pattern
    part = make_partition(Space("S", 2), [[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [0, 0, 0]],
                          [0.3, -0.5, 0.7, 0.0])
    cert = solve_flatness(part, pairs=[(0, 3), (1, 3), (2, 3), (0, 1), (1, 2), (0, 2)])
    assert not cert.feasible
    with pytest.raises(InfeasibleError):
        build_potential(part.space, cert)


def test_outside_ball_status():
    # three consistent caps whose common flat witness has |xi| > 1
    k = 0.9
    a = np.sqrt(1 + k * k)
    part = make_partition(Space("S", 2), np.vstack([a * np.eye(3), np.zeros(3)]), [k, k, k, 0.0])
    cert = solve_flatness(part, pairs=[(0, 3), (1, 3), (2, 3)])
    assert np.allclose(cert.xi, -k / a)
    assert cert.residual < 1e-12 and not cert.feasible and cert.status == "outside-ball"


def test_hypo_epi_dichotomy():
    for seed in range(3):
        assert classify_hypo_epi(h_cluster(3, 4, seed=seed)).classification == "Epi"
    assert classify_hypo_epi(geodesic_ball(3, 1.0)).classification == "Epi"
    he = classify_hypo_epi(hypo_flat_H(3, 3))
    assert he.classification == "Hypo" and he.witness[-1] == 0.0
    with pytest.raises(ContractError):
        classify_hypo_epi(standard_flat_partition(2, 3))


def test_potential_validation():
    with pytest.raises(ContractError):
        PotentialSpec(Space("S", 2), "SphereAffine", xi=[0, 0, 1.0])
    with pytest.raises(ContractError):
        PotentialSpec(Space("S", 2), "EuclidQuadratic", theta=[0, 0], eta=1.0)
    with pytest.raises(ContractError):
        PotentialSpec(Space("R", 2), "EuclidQuadratic", theta=[2.0, 0], eta=1.0)
    V = PotentialSpec(Space("H", 3), "MinkowskiAffine", xi=[0.1, 0, 0, -0.2])
    assert np.array_equal(PotentialSpec.from_json(V.to_json()).xi, V.xi)


@pytest.mark.parametrize("kind", "SRH")
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_gradient_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    n = 3
    xi = rng.uniform(-0.4, 0.4, n + 1)
    space = Space(kind, n)
    cert = FlatnessCertificate(xi, 0.0, True, 0)
    V = build_potential(space, cert)
    p = sample_model_space(space, 1, rng, radius=2.0)[0]
    g = potential_ambient_grad(V, p)
    v = rng.standard_normal(space.dim)
    if kind == "S":
        v -= (v @ p) * p
        curve = lambda t: (p + t * v) / np.linalg.norm(p + t * v)
    elif kind == "H":
        v += inner(v, p, "lorentzian") * p
        curve = lambda t: (p + t * v) / np.sqrt(-inner(p + t * v, p + t * v, "lorentzian"))
    else:
        curve = lambda t: p + t * v
    h = 1e-5
    fd = (potential_eval(V, curve(h)) - potential_eval(V, curve(-h))) / (2 * h)
    assert abs(fd - inner(g, v, space.signature)) < 1e-6 * (1 + abs(fd))


def test_normal_derivative_requires_point_on_sphere():
    from artifact.partitions import interface_sphere
    part = standard_flat_partition(2, 3)
    V = build_potential(part.space, solve_flatness(part))
    with pytest.raises(ContractError):
        potential_normal_derivative(V, interface_sphere(part, 0, 1), np.array([1.0, 0, 0]) * 0.3)
