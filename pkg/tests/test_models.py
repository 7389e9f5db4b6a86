from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from autocov.linalg import ContractViolation
from autocov.models import (
    ModelError,
    assumption_report,
    autocovariance,
    autocovariance_quadrature,
    block_diag,
    block_toeplitz_cov,
    fejer_kernel,
    fejer_smooth,
    load_model,
    model_from_dict,
    moving_average,
    save_model,
    tabulated,
    toeplitz_ma1,
    white_noise,
)

from oracles import stacked_covariance


def test_white_noise_is_identity():
    m = white_noise(4)
    assert np.allclose(m.evaluate(np.linspace(0, 6, 7)), np.eye(4))
    assert m.sup_norm() == 1.0


@given(st.floats(-0.95, 0.95), st.floats(0, 2 * np.pi))
def test_scalar_ma1_symbol(a, th):
    m = moving_average([[[a]]])
    assert np.isclose(m.evaluate(th)[0, 0].real, abs(1 + a * np.exp(1j * th)) ** 2, atol=1e-12)


def test_ma_density_is_factor_outer_product():
    rng = np.random.default_rng(1)
    A = [rng.standard_normal((3, 3)) * 0.3 for _ in range(2)]
    m = moving_average(A)
    th = np.linspace(0, 2 * np.pi, 9)
    P = m.factor_at(th)
    assert np.abs(m.evaluate(th) - P @ np.conj(np.swapaxes(P, 1, 2))).max() <= 1e-12


@pytest.mark.parametrize("L", [0, 1, 2, -1, 5])
def test_autocovariance_exact_vs_quadrature(L):
    rng = np.random.default_rng(2)
    m = moving_average([rng.standard_normal((2, 2)) * 0.4 + 0.1j, 0.2 * np.eye(2)])
    assert np.abs(autocovariance(m, L) - autocovariance_quadrature(m, L)).max() <= 1e-12


def test_autocovariance_max_lag():
    with pytest.raises(ContractViolation):
        autocovariance(white_noise(2), 4, max_lag=3)


def test_block_toeplitz_matches_oracle():
    m = moving_average([np.array([[0.5, 0.1j], [0.0, -0.3]])])
    R = [m.coeffs[0], m.coeffs[1]]
    assert np.abs(block_toeplitz_cov(m, 5) - stacked_covariance(R, 5)).max() <= 1e-14
    with pytest.raises(ContractViolation):
        block_toeplitz_cov(white_noise(200), 200)


def test_fejer_kernel_normalized_and_smoothing():
    th = 2 * np.pi * np.arange(2048) / 2048
    assert np.isclose(fejer_kernel(th, 7).mean(), 1.0)
    m = moving_average([[[0.5]], [[0.25]]])
    sm = fejer_smooth(m, 1)
    # triangular weights 1, 1/2, 0
    assert np.isclose(sm.coeffs[1, 0, 0], 0.5 * m.coeffs[1, 0, 0])
    assert sm.order == 1


def test_toeplitz_and_block_diag_constructors():
    m = toeplitz_ma1([0.1, 0.5, 0.2])  # N = 2
    assert m.N == 2 and np.isclose(m.factor[1][0, 1], 0.1) and np.isclose(m.factor[1][1, 0], 0.2)
    b = block_diag(3, [[[0.5]]])
    assert b.N == 3 and np.allclose(b.coeffs[1], 0.5 * np.eye(3))


def test_tabulated_rejects_non_psd():
    with pytest.raises(ModelError):
        tabulated([[[1.0]], [[0.8]]])  # 1 + 1.6 cos(theta) < 0 somewhere
    ok = tabulated([[[1.0]], [[0.4]]])
    assert ok.sup_norm() == pytest.approx(1.8, rel=1e-6)


def test_assumption_report_white_and_ma():
    r = assumption_report(white_noise(3))
    assert r.sup_norm == 1.0 and r.smin_R0 == pytest.approx(1.0) and abs(r.log_integral) < 1e-12
    r = assumption_report(moving_average([[[0.5]]]))
    assert r.sup_norm == pytest.approx(2.25, rel=1e-6)
    # Jensen: (1/2pi) int log |1 + a e^{it}|^2 = 0 for |a| < 1
    assert abs(r.log_integral) < 1e-8
    assert r.extras["ma_coefficient_norm_sum"] == pytest.approx(0.5)


def test_json_round_trip(tmp_path):
    m = moving_average([np.array([[0.5, 0.2j], [0.1, 0.0]])])
    p = tmp_path / "m.json"
    save_model(m, p)
    back = load_model(p)
    assert np.array_equal(back.coeffs, m.coeffs)
    wn = model_from_dict({"kind": "white_noise", "N": 5})
    assert wn.N == 5
    iso = model_from_dict({"kind": "ma", "N": 4, "A": [0.5]})
    assert np.allclose(iso.coeffs[1], 0.5 * np.eye(4))


@pytest.mark.parametrize(
    "bad",
    [
        {"N": 3},
        {"kind": "nope", "N": 3},
        {"kind": "ma"},
        {"kind": "ma", "N": 3, "A": [[[0.5, 0.0], [0.0, 0.5]]]},
        {"kind": "ma", "N": 2, "A": [[0.5], [1, 2, 3]]},
        {"kind": "ma", "N": 2, "A": ["x"]},
    ],
)
def test_invalid_model_dicts(bad):
    with pytest.raises(ModelError):
        model_from_dict(json.loads(json.dumps(bad)))


def test_two_number_list_is_one_complex_coefficient():
    pair = model_from_dict({"kind": "ma", "N": 2, "A": [0.5, 0.3]})
    assert len(pair.params["A"]) == 1 and np.allclose(pair.params["A"][0], (0.5 + 0.3j) * np.eye(2))
    two = model_from_dict({"kind": "ma", "N": 2, "A": [[0.5, 0], [0.3, 0]]})
    assert len(two.params["A"]) == 2 and np.allclose(two.params["A"][1], 0.3 * np.eye(2))


def test_reference_ma1_values():
    m = moving_average([[[0.5]]])
    assert m.evaluate(0.0)[0, 0].real == pytest.approx(2.25)
    a = 0.3 - 0.4j
    m = moving_average([[[a]]])
    assert autocovariance(m, 0)[0, 0] == pytest.approx(1 + abs(a) ** 2)
    assert autocovariance(m, 1)[0, 0] == pytest.approx(a)
    assert autocovariance(m, -1)[0, 0] == pytest.approx(np.conj(a))
    C = block_toeplitz_cov(m, 2)
    ref = 0.5 * np.array([[1 + abs(a) ** 2, np.conj(a)], [a, 1 + abs(a) ** 2]])
    assert np.abs(C - ref).max() <= 1e-15


def test_tabulated_round_trip_and_psd_random():
    rng = np.random.default_rng(7)
    B = rng.standard_normal((3, 3)) * 0.2
    R = moving_average([B]).coeffs
    t = tabulated(list(R))
    for L in (0, 1):
        assert np.abs(autocovariance(t, L) - R[L]).max() <= 1e-12
    th = 2 * np.pi * rng.random(16)
    assert np.linalg.eigvalsh(t.evaluate(th)).min() >= -1e-10 * t.sup_norm()


def test_fejer_k1_and_convergence_in_k():
    m = tabulated([[[2.0]], [[1.0]]])  # 2 + 2 cos theta
    sm = fejer_smooth(m, 1)
    th = np.linspace(0, 2 * np.pi, 13)
    assert np.abs(sm.evaluate(th)[:, 0, 0] - (2 + np.cos(th))).max() <= 1e-14
    band = moving_average([[[0.5]], [[0.3]]])
    errs = [np.abs(fejer_smooth(band, K).evaluate(th) - band.evaluate(th)).max() for K in (2, 8, 32, 128)]
    assert all(a > b for a, b in zip(errs, errs[1:])) and errs[-1] < 0.02
    assert fejer_smooth(white_noise(3), 5).kind == "white_noise"


def test_fejer_kernel_pointwise_bound():
    n = 9
    th = np.linspace(1e-3, np.pi, 2000)
    bound = n * np.minimum(np.pi**2 / (n**2 * th**2), np.pi**2 / 4)
    assert np.all(fejer_kernel(th, n) <= bound + 1e-12)


def test_block_diag_pattern():
    B = np.array([[0.2, 0.1], [0.0, 0.3]])
    m = block_diag(3, [B])
    small = moving_average([B])
    th = 0.7
    assert np.abs(m.evaluate(th) - np.kron(np.eye(3), small.evaluate(th))).max() <= 1e-14


def test_log_integral_jensen_a09_and_block_bound():
    r = assumption_report(moving_average([[[0.9]]]))
    assert abs(r.log_integral) <= 1e-6
    assert all(0.0 <= f <= 1.0 for _, f in r.lebesgue_small_sv)
    vals = [assumption_report(block_diag(M, [[[0.5]]]), grid=1024).extras["block_log_bound"] for M in (4, 16, 64)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_every_model_psd_on_grid():
    th = np.linspace(0, 2 * np.pi, 64)
    for m in (white_noise(2), moving_average([[[0.9]]]), toeplitz_ma1([0.2, 0.4, 0.1]), block_diag(2, [[[0.7]]])):
        S = m.evaluate(th)
        assert np.abs(S - np.conj(np.swapaxes(S, 1, 2))).max() <= 1e-14
        assert np.linalg.eigvalsh(S).min() >= -1e-10 * m.sup_norm()
