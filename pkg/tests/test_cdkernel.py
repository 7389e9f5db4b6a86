from __future__ import annotations

import numpy as np
import pytest

from autocov.cdkernel import (
    cd_convergence_report,
    cd_report,
    conditional_covariance,
    marginal_covariance,
    marginal_covariance_fejer,
    write_cd_csv,
)
from autocov.linalg import ContractViolation
from autocov.models import moving_average, tabulated, white_noise

from oracles import conditional_covariance_bruteforce


@pytest.mark.parametrize("k", [0, 3, 5])
def test_conditional_matches_schur_complement(k):
    m = moving_average([np.array([[0.5, 0.2], [0.1j, -0.3]])])
    ref = conditional_covariance_bruteforce([m.coeffs[0], m.coeffs[1]], 6, k)
    assert np.abs(conditional_covariance(m, 6, k) - ref).max() <= 1e-12


def test_white_noise_exact():
    r = cd_report(white_noise(3), 12)
    assert np.abs(r.conditional - np.eye(3)).max() <= 1e-12
    assert np.abs(r.marginal - np.eye(3)).max() <= 1e-12


def test_marginal_is_fejer_smoothed_density():
    m = moving_average([[[0.5]], [[0.2]]])
    for k in (0, 3, 7):
        assert np.abs(marginal_covariance(m, 10, k) - marginal_covariance_fejer(m, 10, k)).max() <= 1e-12


def test_conditional_below_marginal():
    r = cd_report(moving_average([[[0.5]]]), 16)
    assert r.ordering_gap() <= 1e-12


def test_ma1_convergence_and_csv(tmp_path):
    reps = cd_convergence_report(moving_average([[[0.5]]]), [16, 32, 64])
    errs = [r.max_good_error for r in reps]
    assert errs[0] > errs[1] > errs[2]
    write_cd_csv(reps[0], tmp_path / "cd.csv")
    lines = (tmp_path / "cd.csv").read_text().splitlines()
    assert lines[0] == "k,theta,err_marginal,err_conditional,good_flag" and len(lines) == 17


def test_good_mask_excludes_near_zero():
    r = cd_report(moving_average([[[0.999]]]), 16)
    assert not r.good[8] and r.good[0]


def test_contracts():
    with pytest.raises(ContractViolation):
        cd_convergence_report(white_noise(2), [16, 8])
    with pytest.raises(ContractViolation):
        conditional_covariance(white_noise(2), 4, 4)
    # a density vanishing identically in one coordinate makes the window covariance singular
    degenerate = tabulated([np.diag([1.0, 0.0])])
    with pytest.raises(ContractViolation):
        conditional_covariance(degenerate, 4, 0)
