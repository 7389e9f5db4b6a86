from __future__ import annotations

import numpy as np
import pytest

from autocov.linalg import ContractViolation
from autocov.models import moving_average, white_noise
from autocov.sampling import SampleBlock
from autocov.smallsv import (
    ExperimentConfig,
    distance_formula,
    distance_identity_check,
    k_range,
    linear_envelope,
    linearization,
    resolvent_variance_check,
    tail_intermediate,
    tail_smallest,
    trial_singular_values,
    wilson_interval,
)

from oracles import distance_to_span


def test_distance_formula_against_least_squares():
    rng = np.random.default_rng(0)
    Y = (rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))) / np.sqrt(12)
    H = linearization(Y, 1, 0.7)
    for k in range(6):
        ref = distance_to_span(H, k)
        assert abs(distance_formula(H, Y, 1, k) - ref) <= 1e-10 * max(ref, 1.0)


@pytest.mark.parametrize("model", [white_noise(8), moving_average([0.5 * np.eye(8)])], ids=["wn", "ma1"])
def test_distance_identity_report(model):
    rep = distance_identity_check(ExperimentConfig(model, 16, 1, 1.0, 1, 3), instances=10)
    assert rep.max_rel_error <= 1e-8 and rep.lin_ok and rep.htronc_ok and rep.ok


def test_distance_size_contract():
    with pytest.raises(ContractViolation):
        distance_identity_check(ExperimentConfig(white_noise(64), 128, trials=1))


def test_tail_monotone_and_envelope():
    cfg = ExperimentConfig(white_noise(32), 64, 1, 0.5, 200, 1)
    sv = trial_singular_values(cfg)
    te = tail_smallest(cfg, [10, 0.1, 1, 5], svals=sv)
    assert list(te.grid) == sorted(te.grid)
    assert np.all(np.diff(te.exceedance) >= 0) and np.all((te.exceedance >= 0) & (te.exceedance <= 1))
    assert te.extra["inside"]
    ti = tail_intermediate(cfg, 0.5, svals=sv)
    kmin, kmax = k_range(32, 0.5)
    # order statistics: s_{N-kmax-1} >= s_{N-kmin-1}
    assert np.all(sv[:, 32 - kmax - 1] >= sv[:, 32 - kmin - 1])
    assert ti.grid.min() >= kmin and ti.grid.max() <= kmax
    with pytest.raises(ContractViolation):
        tail_intermediate(cfg, 0.5, [1], svals=sv)


def test_tail_contracts():
    with pytest.raises(ContractViolation):
        tail_smallest(ExperimentConfig(white_noise(4), 8, z=0.0, trials=200), [1.0])
    with pytest.raises(ContractViolation):
        tail_smallest(ExperimentConfig(white_noise(4), 8, trials=10), [1.0])


def test_parallel_matches_serial():
    cfg = ExperimentConfig(white_noise(8), 16, 1, 0.5, 8, 2)
    assert np.array_equal(trial_singular_values(cfg, 1), trial_singular_values(cfg, 2))


def test_fitted_c_stable_under_doubling():
    cs = []
    for N in (32, 64):
        cfg = ExperimentConfig(white_noise(N), 2 * N, 1, 0.5, 100, 0)
        ti = tail_intermediate(cfg, 0.5, c_grid=np.geomspace(0.01, 3, 25))
        cs.append(float(np.median(ti.extra["largest_c"])))
    assert 0.5 <= cs[1] / cs[0] <= 2


def test_wilson_and_envelope_helpers():
    lo, hi = wilson_interval(np.array([0, 50, 100]), 100)
    assert lo[0] == pytest.approx(0, abs=1e-15) and hi[-1] == pytest.approx(1) and lo[1] < 0.5 < hi[1]
    env = linear_envelope(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]))
    assert env["intercept"] == pytest.approx(0, abs=1e-9) and env["slope"] == pytest.approx(0.1)


def test_variance_degenerate_and_scaling():
    X = np.random.default_rng(0).standard_normal((4, 8)) / 8
    blocks = [SampleBlock.from_X(X)] * 5
    rep = resolvent_variance_check(ExperimentConfig(white_noise(4), 8, z=0.5, trials=5), None, 2j, blocks=blocks)
    assert np.all(rep.variance <= 1e-28)
    cfg = ExperimentConfig(white_noise(32), 64, 1, 0.8, 200, 0)
    v5 = resolvent_variance_check(cfg, None, 5j)
    v10 = resolvent_variance_check(cfg, None, 10j)
    assert v5.ok and v10.ok
    ratio = v5.variance[0, 1] / v10.variance[0, 1]
    assert 16 / 3 <= ratio <= 16 * 3
    with pytest.raises(ContractViolation):
        resolvent_variance_check(cfg, 2 * np.eye(32), 5j)
