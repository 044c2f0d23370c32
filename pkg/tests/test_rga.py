"""Coupling-analysis and identification checks."""

import math

import numpy as np
import pytest

from coldstart import rga
from coldstart.errors import IdentificationError, SingularGainError, SingularMatrixError
from coldstart.rga import (
    FirstOrderTF,
    TFMatrix,
    closed_loop_gains,
    default_coupling_matrix,
    freq_response,
    from_gain_time_constant,
    identify_first_order,
    identify_mimo,
    open_loop_matrix,
    rga_at,
    rga_of_matrix,
    rga_sweep,
    simulate_first_order,
    to_gain_time_constant,
)


def random_well_conditioned(n, rng, tries=50):
    for _ in range(tries):
        p = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        if np.linalg.cond(p) < 50.0:
            return p
    raise AssertionError("could not draw a well-conditioned matrix")


# ---------------------------------------------------------------------------
# first-order channels


def test_tf_rejects_double_zero():
    with pytest.raises(ValueError):
        FirstOrderTF(0.0, 0.0)


def test_freq_response_unit_values():
    tf = FirstOrderTF(tau=1.0, k=1.0)
    assert freq_response(tf, 1.0) == pytest.approx(0.5 - 0.5j, rel=1e-15)
    assert freq_response(tf, 0.0) == pytest.approx(1.0, rel=1e-15)


def test_freq_response_dc_is_inverse_k():
    tf = FirstOrderTF(tau=3.0, k=0.25)
    assert freq_response(tf, 0.0) == pytest.approx(4.0, rel=1e-15)


def test_freq_response_singular_at_dc_with_zero_k():
    tf = FirstOrderTF(tau=1.0, k=0.0)
    with pytest.raises(SingularGainError):
        freq_response(tf, 0.0)
    # away from DC the integrator-like channel responds fine
    assert abs(freq_response(tf, 2.0)) == pytest.approx(0.5, rel=1e-15)


def test_freq_response_vectorized():
    tf = FirstOrderTF(tau=0.5, k=2.0)
    w = np.array([0.1, 1.0, 10.0])
    got = freq_response(tf, w)
    want = 1.0 / (1j * w * 0.5 + 2.0)
    assert np.allclose(got, want, rtol=1e-15)


def test_gain_time_constant_round_trip():
    gain, t_const = to_gain_time_constant(FirstOrderTF(tau=0.4, k=0.5))
    assert gain == pytest.approx(2.0, rel=1e-15)
    assert t_const == pytest.approx(0.8, rel=1e-15)
    back = from_gain_time_constant(gain, t_const)
    assert back.tau == pytest.approx(0.4, rel=1e-15)
    assert back.k == pytest.approx(0.5, rel=1e-15)


# ---------------------------------------------------------------------------
# transfer matrix container


def test_open_loop_matrix_rejects_ragged_and_empty():
    g = FirstOrderTF(1.0, 1.0)
    with pytest.raises(ValueError):
        open_loop_matrix([[g, g], [g]])
    with pytest.raises(ValueError):
        open_loop_matrix([])


def test_response_uses_zero_for_explicit_no_coupling():
    g = FirstOrderTF(1.0, 1.0)
    tfm = open_loop_matrix([[g, None], [None, g]])
    p = tfm.response(0.0)
    assert p[0, 1] == 0.0 and p[1, 0] == 0.0
    assert p[0, 0] == pytest.approx(1.0)


def test_tfmatrix_json_round_trip():
    tfm = default_coupling_matrix()
    back = TFMatrix.from_json(tfm.to_json())
    assert back == tfm


def test_tfmatrix_csv_round_trip():
    tfm = default_coupling_matrix()
    back = TFMatrix.from_csv(tfm.to_csv())
    assert back == tfm


# ---------------------------------------------------------------------------
# relative gain array algebra


def test_rga_of_identity_is_identity():
    lam = rga_of_matrix(np.eye(3))
    assert np.allclose(lam, np.eye(3), atol=1e-14)


def test_rga_two_by_two_closed_form():
    p = np.array([[2.0, 0.5], [1.0, 3.0]])
    lam = rga_of_matrix(p)
    lam11 = 1.0 / (1.0 - (p[0, 1] * p[1, 0]) / (p[0, 0] * p[1, 1]))
    assert lam[0, 0] == pytest.approx(lam11, rel=1e-12)
    assert lam[0, 1] == pytest.approx(1.0 - lam11, rel=1e-12)
    assert lam[1, 0] == pytest.approx(1.0 - lam11, rel=1e-12)
    assert lam[1, 1] == pytest.approx(lam11, rel=1e-12)


def test_rga_rows_and_columns_sum_to_one():
    rng = np.random.default_rng(5)
    for n in (2, 3, 4):
        for _ in range(20):
            p = random_well_conditioned(n, rng)
            lam = rga_of_matrix(p)
            assert np.allclose(lam.sum(axis=0), 1.0, atol=1e-10)
            assert np.allclose(lam.sum(axis=1), 1.0, atol=1e-10)


def test_rga_invariant_under_diagonal_scaling():
    rng = np.random.default_rng(6)
    for _ in range(20):
        p = random_well_conditioned(3, rng)
        d1 = np.diag(rng.uniform(0.2, 5.0, size=3))
        d2 = np.diag(rng.uniform(0.2, 5.0, size=3))
        assert np.allclose(rga_of_matrix(d1 @ p @ d2), rga_of_matrix(p), atol=1e-10)


def test_rga_permutation_equivariance():
    rng = np.random.default_rng(7)
    p = random_well_conditioned(3, rng)
    perm = np.eye(3)[[2, 0, 1]]
    lam = rga_of_matrix(p)
    assert np.allclose(rga_of_matrix(p @ perm), lam @ perm, atol=1e-10)
    assert np.allclose(rga_of_matrix(perm @ p), perm @ lam, atol=1e-10)


def test_rga_times_closed_loop_gain_recovers_open_loop():
    rng = np.random.default_rng(8)
    for _ in range(10):
        p = random_well_conditioned(3, rng)
        lam = rga_of_matrix(p)
        q = closed_loop_gains(p)
        finite = np.isfinite(q.real)
        assert np.allclose((lam * q)[finite], p[finite], atol=1e-10)


def test_rga_rejects_singular_matrix():
    with pytest.raises(SingularMatrixError):
        rga_of_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(ValueError):
        rga_of_matrix(np.ones((2, 3)))


def test_rga_at_decoupled_plant():
    g = FirstOrderTF(1.0, 1.0)
    tfm = open_loop_matrix([[g, None], [None, FirstOrderTF(0.3, 2.0)]])
    lam = rga_at(tfm, 0.5)
    assert np.allclose(lam, np.eye(2), atol=1e-14)


# ---------------------------------------------------------------------------
# frequency sweep


def test_sweep_grid_defaults():
    res = rga_sweep(default_coupling_matrix())
    assert len(res.omegas) == 200
    assert res.omegas[0] == pytest.approx(1e-2, rel=1e-12)
    assert res.omegas[-1] == pytest.approx(1e2, rel=1e-12)
    assert not res.gaps.any()


def test_sweep_decoupled_dominance_is_unity():
    g1, g2 = FirstOrderTF(1.0, 1.0), FirstOrderTF(0.2, 0.8)
    res = rga_sweep(open_loop_matrix([[g1, None], [None, g2]]))
    assert np.allclose(res.dominance, 1.0)
    # off-diagonal magnitudes are exact zeros -> -inf dB
    assert np.all(np.isneginf(res.mags_db[:, 0, 1]))
    assert np.all(np.isneginf(res.mags_db[:, 1, 0]))


def test_sweep_coupled_static_plant_fails_dominance():
    # static entries chosen so lambda_11 = 2 (about 6 dB) at every frequency
    tfm = open_loop_matrix(
        [
            [FirstOrderTF(0.0, 1.0), FirstOrderTF(0.0, 2.0)],
            [FirstOrderTF(0.0, 1.0), FirstOrderTF(0.0, 1.0)],
        ]
    )
    res = rga_sweep(tfm)
    assert np.allclose(res.lambdas[:, 0, 0], 2.0, atol=1e-12)
    assert np.allclose(res.dominance, 0.0)


def test_sweep_singular_at_dc_leaves_gap_rows():
    # rows become proportional as omega -> 0; elsewhere well conditioned
    tfm = open_loop_matrix(
        [
            [FirstOrderTF(1.0, 1.0), FirstOrderTF(0.0, 1.0)],
            [FirstOrderTF(0.0, 1.0), FirstOrderTF(2.0, 1.0)],
        ]
    )
    res = rga_sweep(tfm, w_min=1e-8, w_max=1e2, n_points=60, cond_limit=1e6)
    assert res.gaps[0]  # lowest frequencies are ill conditioned
    assert not res.gaps[-1]
    assert res.gaps.sum() < len(res.omegas)
    # gap rows carry no numbers but the sweep output keeps its shape
    lines = res.to_csv().splitlines()
    assert len(lines) == 61


def test_sweep_validates_grid():
    with pytest.raises(ValueError):
        rga_sweep(default_coupling_matrix(), w_min=1.0, w_max=0.1)
    with pytest.raises(ValueError):
        rga_sweep(default_coupling_matrix(), n_points=0)


def test_sweep_csv_layout():
    res = rga_sweep(default_coupling_matrix(), n_points=4)
    lines = res.to_csv().splitlines()
    header = lines[0].split(",")
    n = default_coupling_matrix().n
    assert len(header) == 2 + 3 * n * n
    assert header[0] == "omega" and header[1] == "gap"
    assert len(lines) == 5


# ---------------------------------------------------------------------------
# identification


def test_identify_round_trip_exact():
    tf = FirstOrderTF(tau=2.0, k=0.5)
    rng = np.random.default_rng(17)
    u = rng.normal(size=4000)
    y = simulate_first_order(tf, u, T=0.02)
    fit = identify_first_order(u, y, T=0.02)
    assert fit.tau_identifiable
    assert abs(fit.tf.tau - 2.0) / 2.0 < 1e-3
    assert abs(fit.tf.k - 0.5) / 0.5 < 1e-3
    assert fit.residual_rms < 1e-12


def test_identify_settled_dc_record_flags_time_constant():
    u = np.full(50, 3.0)
    y = np.full(50, 6.0)
    fit = identify_first_order(u, y, T=0.02)
    assert not fit.tau_identifiable
    assert fit.tf.k == pytest.approx(0.5, rel=1e-12)
    assert fit.tf.tau == 0.0


def test_identify_rejects_unsettled_output_without_excitation():
    u = np.zeros(100)
    y = np.exp(-0.05 * np.arange(100.0))  # free decay, no input information
    with pytest.raises(IdentificationError):
        identify_first_order(u, y, T=0.02)


def test_identify_rejects_bad_lengths():
    with pytest.raises(IdentificationError):
        identify_first_order(np.ones(5), np.ones(5), T=0.02)
    with pytest.raises(IdentificationError):
        identify_first_order(np.ones(20), np.ones(19), T=0.02)
    with pytest.raises(IdentificationError):
        identify_first_order(np.ones(20), np.ones(20), T=0.0)


def test_identify_rejects_unstable_pole():
    rng = np.random.default_rng(19)
    u = rng.normal(size=200)
    y = np.zeros(200)
    for k in range(199):
        y[k + 1] = 1.05 * y[k] + 0.1 * u[k]  # growing record
    with pytest.raises(IdentificationError) as err:
        identify_first_order(u, y, T=0.02)
    assert "outside (0, 1)" in str(err.value)


def test_identify_mimo_marks_zero_coupling():
    rng = np.random.default_rng(23)
    g11 = FirstOrderTF(1.0, 1.0)
    g21 = FirstOrderTF(0.5, 2.0)
    g22 = FirstOrderTF(0.25, 0.5)
    n_samples = 2000
    u1 = rng.normal(size=n_samples)
    u2 = rng.normal(size=n_samples)
    y = np.zeros((2, 2, n_samples))
    y[0, 0] = simulate_first_order(g11, u1, T=0.02)
    y[1, 0] = simulate_first_order(g21, u1, T=0.02)
    y[0, 1] = np.zeros(n_samples)  # no path from input 2 to output 1
    y[1, 1] = simulate_first_order(g22, u2, T=0.02)
    result = identify_mimo(np.stack([u1, u2]), y, T=0.02)
    assert result.holes == {(1, 2): "zero response"}
    assert result.tfm.entries[0][1] is None
    assert result.tfm.entries[0][0].tau == pytest.approx(1.0, rel=1e-6)
    assert result.tfm.entries[1][0].k == pytest.approx(2.0, rel=1e-6)
    assert result.tfm.entries[1][1].tau == pytest.approx(0.25, rel=1e-6)


def test_identify_mimo_attaches_pair_to_errors():
    rng = np.random.default_rng(29)
    n_samples = 500
    u1 = rng.normal(size=n_samples)
    u2 = rng.normal(size=n_samples)
    good = simulate_first_order(FirstOrderTF(1.0, 1.0), u1, T=0.02)
    bad = np.zeros(n_samples)
    for k in range(n_samples - 1):
        bad[k + 1] = 1.02 * bad[k] + 0.1 * u1[k]
    y = np.zeros((2, 2, n_samples))
    y[0, 0] = good
    y[1, 0] = bad
    y[0, 1] = simulate_first_order(FirstOrderTF(0.5, 1.0), u2, T=0.02)
    y[1, 1] = simulate_first_order(FirstOrderTF(0.5, 2.0), u2, T=0.02)
    with pytest.raises(IdentificationError) as err:
        identify_mimo(np.stack([u1, u2]), y, T=0.02)
    assert err.value.pair == (2, 1)

    partial = identify_mimo(np.stack([u1, u2]), y, T=0.02, on_error="hole")
    assert (2, 1) in partial.holes and "fit failed" in partial.holes[(2, 1)]
    assert (1, 1) in partial.fits and (2, 2) in partial.fits
