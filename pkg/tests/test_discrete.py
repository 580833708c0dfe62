import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.discrete import (assemble_operators, bl_check, build_complex_1d, delta1_vol, end_stencil,
                               icosphere, kirchhoff_residual, mesh_sphere, project_kirchhoff, q0_eval,
                               random_admissible, smooth_field, spectrum, stability_margin)
from artifact.errors import ConstraintViolation, ContractError, MalformedPartitionError, MeshError
from artifact.families import (gaussian_parallel_lines, gaussian_Y, geodesic_ball, hex_patch, lattice_patch,
                               random_standard_family)
from artifact.flatness import PotentialSpec, build_potential, solve_flatness
from artifact.geometry import Space
from artifact.partitions import interface_sphere, make_partition
from artifact.verification import check_volume_first_variation


def strip():
    """Two parallel lines in R^2 with V = |x|^2/2 + 1/2."""
    part = make_partition(Space("R", 2), [[1, 0], [0, 0], [-1, 0]], [0, 0, 0], [0.5, 0, 0.5])
    return part, PotentialSpec(part.space, "EuclidQuadratic", theta=[0.0, 0.0], eta=0.5)


# ---------------------------------------------------------------------------
# 1D complexes

def test_end_stencil_is_exact_on_quadratics():
    h = 0.1
    ex, dv = end_stencil(h)
    d = np.array([0.5, 1.5, 2.5]) * h
    for f, f0, df in ((lambda x: 1 + 0 * x, 1, 0), (lambda x: 2 - 3 * x, 2, -3),
                      (lambda x: x * x - x, 0, -1)):
        assert abs(ex @ f(d) - f0) < 1e-13
        assert abs(dv @ f(d) - df) < 1e-11


@pytest.mark.parametrize("factory,edges,junctions", [
    (gaussian_Y, 3, 1), (gaussian_parallel_lines, 2, 0), (hex_patch, 12, 6),
    (lambda: lattice_patch(2, 2), 5, 2), (lattice_patch, 23, 12)])
def test_gaussian_complex_topology(factory, edges, junctions):
    cx = build_complex_1d(factory(), resolution=10)
    assert (len(cx.edges), len(cx.junctions)) == (edges, junctions)
    for J in cx.junctions:
        assert len(J.ends) == 3 and sorted(e.sign for e in J.ends) == [-1, 1, 1]


def test_quadruple_point_is_rejected():
    part = make_partition(Space("G", 2), np.array([[1, 0], [0, 1], [-1, 0], [0, -1]]) / np.sqrt(2), [0] * 4)
    with pytest.raises(MalformedPartitionError, match="quadruple"):
        build_complex_1d(part)


def test_complex_needs_planar_space():
    part, = random_standard_family("S", 3, 3, 1)
    with pytest.raises(ContractError):
        build_complex_1d(part)


def test_circle_laplacian_second_order():
    part = make_partition(Space("R", 2), [[0, 0], [0, 0]], [1, 0], [0, 0])
    errs = []
    for N in (50, 100):
        cx = build_complex_1d(part, cells_per_edge=N)
        assert cx.edges[0].periodic and abs(cx.edges[0].length - 2 * np.pi) < 1e-12
        ops = assemble_operators(cx)
        x = cx.points[:, 0]
        errs.append(np.abs(ops.laplacian @ x + x).max())
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_gaussian_line_hermite_oracle():
    # Delta_mu x2 = -x2 along the vertical lines, second order away from the free ends
    errs = []
    for N in (200, 400):
        cx = build_complex_1d(gaussian_parallel_lines(), cells_per_edge=N)
        ops = assemble_operators(cx)
        x2 = cx.points[:, 1]
        r = ops.laplacian @ x2 + x2
        errs.append(np.abs(r[np.abs(x2) < 5]).max())
    assert errs[1] < 0.01 and 3.5 < errs[0] / errs[1] < 4.5


def test_admissible_fields_preserve_volume():
    cx = build_complex_1d(gaussian_Y(), cells_per_edge=60)
    ops = assemble_operators(cx)
    U = random_admissible(ops, 20, seed=4)
    F = ops.LV @ U
    assert max(kirchhoff_residual(ops, F[:, r]) for r in range(20)) < 1e-10
    assert check_volume_first_variation(cx, ops, U).max < 1e-12
    for r in range(3):
        assert abs(delta1_vol(cx, F[:, r]).sum()) < 1e-14


def test_q0_rejects_broken_kirchhoff():
    cx = build_complex_1d(gaussian_Y(), cells_per_edge=40)
    ops = assemble_operators(cx)
    f = np.ones(cx.size)
    with pytest.raises(ConstraintViolation):
        q0_eval(cx, ops, f)
    g = project_kirchhoff(ops, f)
    assert kirchhoff_residual(ops, g) < 1e-12
    q0_eval(cx, ops, g)
    with pytest.raises(ContractError):
        q0_eval(cx, ops, g, mode="Bogus")


def _form_gaps(part, N, seed=3, **kw):
    cx = build_complex_1d(part, cells_per_edge=N, **kw)
    ops = assemble_operators(cx)
    f = project_kirchhoff(ops, smooth_field(cx, seed))
    E = f @ (ops.stiffness @ f) + f @ (ops.mass * f)
    q = {m: q0_eval(cx, ops, f, m) for m in ("LJacForm", "GradientForm", "ConjugatedForm")}
    return (abs(q["LJacForm"] - q["GradientForm"]) / E, abs(q["ConjugatedForm"] - q["GradientForm"]) / E)


def test_form_equivalence_converges_on_y():
    a = _form_gaps(gaussian_Y(), 100)
    b = _form_gaps(gaussian_Y(), 200)
    assert max(b) < 1e-3
    assert b[0] < a[0] / 3


def test_form_equivalence_closed_curved_complex():
    part, = random_standard_family("S", 2, 3, 1, seed=1)
    a = _form_gaps(part, 60)
    b = _form_gaps(part, 120)
    # the conjugated form agrees with the gradient form to roundoff on closed arcs
    assert max(b) < 1e-3 and b[0] < a[0] / 3 and b[1] < 1e-12


@given(seed=st.integers(0, 1000))
def test_random_fields_margin_bound(seed):
    cx = build_complex_1d(gaussian_Y(), cells_per_edge=50)
    ops = assemble_operators(cx)
    rep = stability_margin(cx, ops)
    U = random_admissible(ops, 5, seed=seed)
    for r in range(5):
        f = ops.LV @ U[:, r]
        # ||f||_{1/V} = 1, so Q0(f) is bounded below by the margin
        assert q0_eval(cx, ops, f) >= rep.margin - 1e-9


def test_y_is_stable():
    cx = build_complex_1d(gaussian_Y(), cells_per_edge=100)
    ops = assemble_operators(cx)
    for mode in ("ImageOfLV", "VolumeKernel"):
        assert stability_margin(cx, ops, mode).margin > -1e-4


def test_jacobi_override_negative_control():
    part, V = strip()
    cx = build_complex_1d(part, cells_per_edge=60)
    assert stability_margin(cx, assemble_operators(cx, V), "ImageOfLV").margin > 0
    bad = assemble_operators(cx, V, jacobi_override=1.0)
    for mode in ("ImageOfLV", "VolumeKernel"):
        assert stability_margin(cx, bad, mode).margin < -100 * 1e-4


# ---------------------------------------------------------------------------
# 2D meshes

@pytest.mark.parametrize("level", [0, 1, 3])
def test_icosphere_counts(level):
    X, F = icosphere(level)
    assert len(X) == 10 * 4 ** level + 2 and len(F) == 20 * 4 ** level
    assert np.allclose(np.linalg.norm(X, axis=1), 1)


def test_unit_sphere_spectrum():
    part = make_partition(Space("R", 3), [[0, 0, 0], [0, 0, 0]], [1, 0], [0, 0])
    mesh = mesh_sphere(interface_sphere(part, 0, 1), 4)
    assert abs(mesh.areas.sum() - 4 * np.pi) < 0.01 * 4 * np.pi
    ev = spectrum(mesh, 4)
    assert abs(ev[0]) < 1e-8
    assert np.all(np.abs(ev[1:] - 2) < 0.02)
    with pytest.raises(MeshError):
        spectrum(mesh_sphere(interface_sphere(part, 0, 1), 5))


def test_hyperbolic_geodesic_sphere_spectrum():
    rho = 1.0
    mesh = mesh_sphere(interface_sphere(geodesic_ball(3, rho), 0, 1), 3)
    assert abs(mesh.areas.sum() / (4 * np.pi * np.sinh(rho) ** 2) - 1) < 0.01
    assert abs(spectrum(mesh, 2)[1] * np.sinh(rho) ** 2 / 2 - 1) < 0.01


def test_open_interface_cannot_be_meshed():
    part = make_partition(Space("R", 3), [[1.0, 0, 0], [0, 0, 0]], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(MeshError):
        mesh_sphere(interface_sphere(part, 0, 1), 2)


@pytest.mark.parametrize("kind", "SRH")
def test_bl_curved_spheres(kind):
    if kind == "H":
        part = geodesic_ball(3, 0.8)
    else:
        part, = random_standard_family(kind, 3, 2, 1, seed=9)
    V = build_potential(part.space, solve_flatness(part))
    rep = bl_check(mesh_sphere(interface_sphere(part, 0, 1), 3), V, trials=10)
    assert rep.passed and rep.trials == 10


@pytest.mark.parametrize("which", ["loop", "lines"])
def test_summation_by_parts_without_junctions(which):
    # without junctions -M Delta_mu equals the stiffness matrix exactly
    if which == "loop":
        part = make_partition(Space("R", 2), [[0, 0], [0, 0]], [1, 0], [0, 0])
    else:
        part = gaussian_parallel_lines(0.3)
    cx = build_complex_1d(part, cells_per_edge=80)
    ops = assemble_operators(cx)
    D = ops.stiffness.toarray() + ops.mass[:, None] * ops.laplacian.toarray()
    assert np.abs(D).max() < 1e-12 * np.abs(ops.stiffness.toarray()).max()


def test_gaussian_truncation_radius_sweep():
    vals = []
    for R in (6.0, 7.0, 8.0):
        cx = build_complex_1d(gaussian_Y(), resolution=25.0, radius=R)
        ops = assemble_operators(cx)
        vals.append(stability_margin(cx, ops, "VolumeKernel").margin)
    assert abs(vals[1] - vals[2]) < 1e-6 and abs(vals[0] - vals[2]) < 1e-4
