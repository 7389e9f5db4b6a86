from __future__ import annotations

import numpy as np
import pytest

from autocov.fixedpoint import (
    FixedPointMap,
    Quadrature,
    apply_F,
    contraction_bound,
    isotropic_path,
    solve_G,
    solve_path,
    stieltjes_trace,
    symmetry_gap,
    white_noise_integrals,
    white_noise_path,
    white_noise_system,
)
from autocov.linalg import ContractViolation, ConvergenceError, trace_op_T
from autocov.models import moving_average, white_noise

from oracles import white_noise_scalar

# (z, t, gamma) -> (h, g01) frozen from the quadrature/root-finding oracle
ORACLE = {
    (0.8, 1.0, 0.5): (0.2796653075806769, -0.17951841370207483),
    (0.3, 0.2, 1.0): (0.966127393395212, -0.6838605815117482),
    (1.5 + 0.5j, 5.0, 0.5): (0.08960010115504147, -0.026413853137540737 - 0.00880461771251358j),
}


@pytest.mark.parametrize("key", list(ORACLE))
def test_white_noise_system_frozen(key):
    z, t, gamma = key
    h, g01 = ORACLE[key]
    s = white_noise_system(z, t, gamma, None)
    assert abs(s.h - h) <= 1e-10 and abs(s.g01 - g01) <= 1e-10
    q = white_noise_system(z, t, gamma, 1024)
    assert abs(q.h - h) <= 1e-10


def test_oracle_live_agreement():
    h, g01, res = white_noise_scalar(0.5 + 0.2j, 0.7, 0.75)
    s = white_noise_system(0.5 + 0.2j, 0.7, 0.75, None)
    assert res <= 1e-12 and abs(s.h - h) <= 1e-10 and abs(s.g01 - g01) <= 1e-10


def test_exact_integrals_vs_quadrature():
    rng = np.random.default_rng(0)
    T = rng.standard_normal((5, 2, 2)) + 1j * rng.standard_normal((5, 2, 2))
    T[:, 0, 0] = 1j * (0.5 + rng.random(5))
    T[:, 1, 1] = 1j * (0.5 + rng.random(5))
    th = 2 * np.pi * np.arange(4096) / 4096
    U = np.zeros((th.size, 2, 2), dtype=complex)
    U[:, 0, 1], U[:, 1, 0] = np.exp(-1j * th), np.exp(1j * th)
    ref = np.linalg.inv(T[:, None] + U[None]).mean(axis=1)
    assert np.abs(white_noise_integrals(T) - ref).max() <= 1e-12


@pytest.mark.parametrize("model", [white_noise(8), moving_average([0.5 * np.eye(8)])], ids=["wn", "ma1"])
def test_solution_is_fixed_point_with_positive_imaginary_part(model):
    st = solve_G(model, 0.4 + 0.1j, 0.3j, 1, 16)
    assert st.residual <= 1e-10
    G = st.G
    FG = apply_F(G, model, 0.4 + 0.1j, 0.3j, 1, 16)
    assert np.abs(FG - G).max() <= 1e-9
    assert np.linalg.eigvalsh((G - G.conj().T) / 2j)[0] > 0
    assert stieltjes_trace(st).imag > 0


def test_matrix_solve_matches_scalar_reduction():
    z, t = 1.0, 1.0
    st = solve_G(white_noise(16), z, 1j * t, 1, 32)
    T = trace_op_T(st.G, 32)  # G = (1/gamma) T (x) I_N, so tr G_uv / n = T_uv
    s = white_noise_system(z, t, 0.5, None)
    assert abs(T[0, 0] - 1j * s.h) <= 1e-8 and abs(T[0, 1] - s.g01) <= 1e-8


def test_isotropic_batch_matches_matrix_solver():
    m = moving_average([0.5 * np.eye(8)])
    ys = np.geomspace(10, 0.1, 15)
    T, res = isotropic_path(m, np.array([0.5, 0.2 + 0.6j]), ys, 1, 16)
    assert res.max() <= 1e-10
    for j, z in enumerate([0.5, 0.2 + 0.6j]):
        ref = np.array([stieltjes_trace(s) for s in solve_path(m, z, 1j * ys, 1, 16)])
        g = (T[:, j, 0, 0] + T[:, j, 1, 1]) / (2 * 0.5)
        assert np.abs(g - ref).max() <= 1e-8


def test_discrete_quadrature_differs_but_solves():
    m = moving_average([0.5 * np.eye(4)])
    a = solve_G(m, 0.3, 0.05j, 1, 8, quad=Quadrature.discrete(8))
    b = solve_G(m, 0.3, 0.05j, 1, 8)
    assert a.residual <= 1e-10 and abs(stieltjes_trace(a) - stieltjes_trace(b)) > 1e-8


def test_large_eta_asymptotics():
    m = white_noise(4)
    for t in (10.0, 100.0, 1000.0):
        g = stieltjes_trace(solve_G(m, 0.5, 1j * t, 1, 8))
        assert abs(-1j * t * g - 1) <= 2 / t


def test_symmetry_and_reflection():
    m = moving_average([0.3 * np.eye(4)])
    assert symmetry_gap(m, 0.3 + 0.2j, 0.1 + 0.8j, 1, 8) <= 1e-10
    lo = solve_G(m, 0.3, -0.5j, 1, 8)
    hi = solve_G(m, 0.3, 0.5j, 1, 8)
    assert abs(stieltjes_trace(lo) - np.conj(stieltjes_trace(hi))) <= 1e-10


def test_contraction_in_domain():
    m = white_noise(8)
    st = solve_G(m, 0.5, 1j * 2 * contraction_bound(m, 0.5), 1, 16)
    assert st.contraction and max(st.contraction) <= 0.5 + 1e-12


def test_contracts_and_failure():
    with pytest.raises(ContractViolation):
        FixedPointMap(white_noise(2), 1, 0)
    with pytest.raises(ContractViolation):
        white_noise_path([0.1], [1.0, 2.0], 0.5)
    with pytest.raises(ConvergenceError) as exc:
        solve_G(white_noise(4), 0.5, 0.01j, 1, 8, max_iter=1, continuation=False)
    assert exc.value.residual > 0 and exc.value.trace


def test_state_invariants():
    m = moving_average([0.4 * np.eye(6)])
    eta = 0.2 + 0.4j
    st = solve_G(m, 0.7, eta, 1, 12)
    G, N = st.G, 6
    assert np.linalg.norm(G, 2) <= 1 / eta.imag + 1e-10
    assert abs(np.trace(G[:N, :N]) - np.trace(G[N:, N:])) / N <= 1e-8
    g = stieltjes_trace(st)
    assert abs(g - np.trace(G[:N, :N]) / N) <= 1e-8
    FG = apply_F(G, m, 0.7, eta, 1, 12)
    assert np.linalg.norm(FG - G, 2) <= 2 * 1e-10


def test_apply_F_closed_form_white_discrete():
    N, n, eta, z, L = 3, 6, 0.5 + 2j, 0.4, 1
    m = white_noise(N)
    M = -np.eye(2 * N) / eta
    quad = Quadrature.discrete(n)
    th = quad.theta
    T = np.zeros((n, 2, 2), dtype=complex)
    T[:, 0, 0] = T[:, 1, 1] = -N / (n * eta)
    T[:, 0, 1], T[:, 1, 0] = np.exp(-1j * L * th), np.exp(1j * L * th)
    small = np.linalg.inv(T).mean(axis=0) - np.array([[eta, z], [z, eta]])
    ref = np.kron(np.linalg.inv(small), np.eye(N))
    assert np.abs(apply_F(M, m, z, eta, L, n, quad) - ref).max() <= 1e-13


def test_apply_F_large_eta_limit():
    m = moving_average([0.5 * np.eye(2)])
    t, z, gamma = 1e3, 0.5, 0.5
    out = -1j * t * apply_F(-np.eye(4) / (1j * t), m, z, 1j * t, 1, 4)
    assert np.abs(out - np.eye(4)).max() <= 2 * (abs(z) + m.sup_norm() * gamma) / t


def test_continuous_with_n_nodes_equals_discrete():
    m = moving_average([0.3 * np.eye(2)])
    M = -np.eye(4) / (1j * 0.7)
    a = apply_F(M, m, 0.2, 0.7j, 1, 8, Quadrature.continuous(8))
    b = apply_F(M, m, 0.2, 0.7j, 1, 8, Quadrature.discrete(8))
    assert np.abs(a - b).max() <= 1e-14


def test_first_order_expansion_large_eta():
    m = moving_average([0.5 * np.eye(4)])
    for eta in (50j, 30 + 40j):
        G = solve_G(m, 0.5, eta, 1, 8).G
        bound = 2 * (0.5 * m.sup_norm() + 0.5 + 1) / abs(eta) ** 2
        assert np.linalg.norm(G + np.eye(8) / eta, 2) <= bound


def test_white_noise_large_t_and_zero_z():
    s = white_noise_system(1.0, 1e3, 1.0, None)
    assert 0.9 <= s.h * 1e3 / 1.0 <= 1.1
    s0 = white_noise_system(0.0, 0.5, 0.5, None)
    st = solve_G(white_noise(8), 0.0, 0.5j, 1, 16)
    T = trace_op_T(st.G, 16)
    assert abs(T[0, 0] - 1j * s0.h) <= 1e-8 and abs(T[0, 1] - s0.g01) <= 1e-8
    a = white_noise_system(0.4 + 0.3j, 0.3, 0.5, 512)
    b = white_noise_system(0.4 + 0.3j, 0.3, 0.5, 1024)
    assert abs(a.h - b.h) <= 1e-9 and abs(a.g01 - b.g01) <= 1e-9


def test_uniqueness_from_two_starts():
    m = moving_average([0.5 * np.eye(4)])
    eta = 1j * 2 * contraction_bound(m, 0.5)
    a = solve_G(m, 0.3, eta, 1, 8, G0=-np.eye(8) / eta)
    b = solve_G(m, 0.3, eta, 1, 8, G0=-np.eye(8) / (eta + 1j))
    assert np.abs(a.G - b.G).max() <= 10 * 1e-10


def test_mct_bound_along_iterates():
    for m in (white_noise(8), moving_average([0.5 * np.eye(8)])):
        st = solve_G(m, 0.5, 0.05j, 1, 16)
        assert st.mct_max <= 1 + 1e-12


def test_stieltjes_properties_on_y_path():
    m = moving_average([0.5 * np.eye(4)])
    ys = np.geomspace(100, 0.01, 12)
    gs = np.array([stieltjes_trace(s) for s in solve_path(m, 0.6, 1j * ys, 1, 8)])
    assert np.all(gs.imag > 0) and np.all(ys * gs.imag <= 1 + 1e-12)
    up = stieltjes_trace(solve_G(m, 0.6, 0.3 + 0.5j, 1, 8))
    down = stieltjes_trace(solve_G(m, 0.6, 0.3 - 0.5j, 1, 8))
    assert abs(down - np.conj(up)) <= 1e-10
