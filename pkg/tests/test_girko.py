from __future__ import annotations

import numpy as np
import pytest

from autocov.fixedpoint import Quadrature
from autocov.girko import (
    AtomHit,
    Grid,
    PotentialField,
    SignedAtomMeasure,
    circular_law_error,
    circular_law_field,
    compare_fields,
    deterministic_im_g,
    density_from_potential,
    empirical_nu,
    log_potential_deterministic,
    log_potential_empirical,
    log_potential_via_y,
    potential_field_deterministic,
    potential_field_empirical,
    read_field,
    symmetrized,
    write_field,
    y_grid,
)
from autocov.linalg import ContractViolation, hermitian_eigenvalues, hermitize
from autocov.models import moving_average, white_noise
from autocov.sampling import SampleBlock, empirical_autocov, sample


def test_zero_matrix_measure_and_potential():
    b = SampleBlock.from_X(np.zeros((1, 3)))
    nu = empirical_nu(b, 1, 1.0)
    assert sorted(nu.atoms) == [-1.0, 1.0] and np.allclose(nu.weights, 0.5)
    assert log_potential_empirical(b, 1, 2.0 + 1j) == pytest.approx(-np.log(abs(2 + 1j)))


def test_unitary_potential_zero():
    n = 8
    X = np.eye(n, dtype=complex)  # Rhat_1 = J (cyclic shift), unitary
    b = SampleBlock.from_X(X)
    assert abs(log_potential_empirical(b, 1, 0.0, check=True)) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_atoms_are_hermitized_eigenvalues(seed):
    b = sample(moving_average([0.4 * np.eye(6)]), 12, seed)
    z = 0.3 - 0.2j
    nu = empirical_nu(b, 1, z)
    ref = hermitian_eigenvalues(hermitize(empirical_autocov(b, 1) - z * np.eye(6)))
    assert np.abs(np.sort(nu.atoms) - np.sort(ref)).max() <= 1e-10
    assert nu.is_symmetric()


def test_dual_routes_on_random_16():
    b = sample(white_noise(16), 32, 4)
    for z in (0.2, 0.5 + 0.5j, 1.3):
        U = log_potential_empirical(b, 1, z, check=True)
        via = log_potential_via_y(empirical_nu(b, 1, z))
        assert abs(via.U - U) <= 1e-3


def test_atom_hit():
    b = SampleBlock.from_X(np.zeros((2, 4)))
    with pytest.raises(AtomHit):
        log_potential_empirical(b, 1, 0.0)


def test_synthetic_pm1_and_far_field():
    assert abs(log_potential_via_y(symmetrized([1.0])).U) <= 1e-3
    pv = log_potential_deterministic(white_noise(16), 50.0, 1, 32)
    assert abs(pv.U + np.log(50.0)) <= 1e-2


def test_measure_validation():
    with pytest.raises(ContractViolation):
        SignedAtomMeasure([1.0, 2.0], [0.7, 0.7])
    assert not SignedAtomMeasure([1.0, 2.0], [0.5, 0.5]).is_symmetric()


def test_deterministic_im_g_properties():
    ys = y_grid(1e-3, 1e2, 40)
    for m in (white_noise(8), moving_average([0.5 * np.eye(8)])):
        im_g, ok = deterministic_im_g(m, np.array([0.0, 0.7 + 0.2j]), 1, 16, ys)
        assert ok.all() and np.all(im_g > 0) and np.all(ys[:, None] * im_g <= 1 + 1e-12)


def test_exact_and_quadrature_white_noise_routes_agree():
    ys = y_grid(1e-3, 1e2, 30)
    a, _ = deterministic_im_g(white_noise(8), np.array([0.4]), 1, 16, ys)
    b, _ = deterministic_im_g(white_noise(8), np.array([0.4]), 1, 16, ys, Quadrature.continuous(1024))
    assert np.abs(a - b).max() <= 1e-10


def test_density_harmonic_and_linear():
    g = Grid(1.0, 2.0, 1.0, 2.0, 21, 21)
    pts = g.points()
    f1 = PotentialField(g, -np.log(np.abs(pts)), np.ones(pts.shape, bool))
    d1 = density_from_potential(f1).density[1:-1, 1:-1]
    assert np.abs(d1).max() <= 1e-3
    f2 = PotentialField(g, np.real(pts) ** 2, np.ones(pts.shape, bool))
    f12 = PotentialField(g, f1.U + f2.U, f1.valid)
    lhs = density_from_potential(f12).density[1:-1, 1:-1]
    rhs = d1 + density_from_potential(f2).density[1:-1, 1:-1]
    assert np.abs(lhs - rhs).max() <= 1e-9


def test_circular_law_recovery():
    fld = density_from_potential(circular_law_field(Grid.parse("-1.5,1.5,-1.5,1.5,81,81")))
    assert abs(fld.diagnostics["mass"] - 1) <= 0.05
    assert circular_law_error(fld) <= 0.05


def test_unpopulated_field_rejected():
    g = Grid(0, 1, 0, 1, 5, 5)
    U = np.zeros((5, 5))
    U[2, 2] = np.nan
    with pytest.raises(ContractViolation):
        density_from_potential(PotentialField(g, U, np.ones((5, 5), bool)))


def test_grid_parse_errors():
    with pytest.raises(ContractViolation):
        Grid.parse("0,1,0,1,5")
    with pytest.raises(ContractViolation):
        Grid(1, 0, 0, 1, 5, 5)


def test_compare_self_zero_and_grid_mismatch(tmp_path):
    g = Grid.parse("-1.2,1.2,-1.2,1.2,9,9")
    det = density_from_potential(potential_field_deterministic(white_noise(16), 1, 32, g))
    rep = compare_fields(det, det)
    assert rep["U_sup"] == 0.0 and rep["density_sup"] == 0.0
    other = circular_law_field(Grid.parse("-1,1,-1,1,9,9"))
    with pytest.raises(ContractViolation):
        compare_fields(det, other)
    write_field(det, tmp_path / "f.csv")
    back = read_field(tmp_path / "f.csv")
    assert np.array_equal(back.U, det.U) and back.grid == det.grid
    assert np.array_equal(np.isnan(back.density), np.isnan(det.density))


def test_mismatched_lag_gap_exceeds_matched():
    m = moving_average([0.8 * np.eye(32)])
    g = Grid.parse("-1.5,1.5,-1.5,1.5,9,9")
    blocks = [sample(m, 64, 0, stream=s) for s in range(4)]
    emp = potential_field_empirical(blocks, 1, g)
    same = potential_field_deterministic(m, 1, 64, g)
    other = potential_field_deterministic(m, 2, 64, g)
    assert compare_fields(emp, other)["U_sup"] > compare_fields(emp, same)["U_sup"]


def test_field_gap_shrinks_with_N():
    g = Grid.parse("-1.2,1.2,-1.2,1.2,7,7")
    gaps = []
    for N in (32, 64, 128):
        blocks = [sample(white_noise(N), 2 * N, 1, stream=s) for s in range(3)]
        emp = potential_field_empirical(blocks, 1, g)
        det = potential_field_deterministic(white_noise(N), 1, 2 * N, g)
        gaps.append(compare_fields(emp, det)["U_sup"])
    assert gaps[0] > gaps[1] > gaps[2]
