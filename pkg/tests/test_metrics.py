import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minaction.forcebasis import BasisLibrary, BasisModel
from minaction.metrics import (CalibrationError, FitError, PeriodEstimationError,
                               ValidationConfig, autocorrelation, calibrate,
                               calibration_coefficient, circular_period, conservation,
                               estimate_period, fit_power_law, kepler_exponent, mean_sigma_H,
                               orbit_period, select_by_conservation, validate)
from minaction.orbitgen import ForceLawSpec, GeneratorConfig, generate_dataset

LIB = BasisLibrary.default()
KEPLER = ForceLawSpec("kepler", 1.0)


def brute_acf(x):
    d = np.asarray(x, float) - np.mean(x)
    n = d.size
    return np.array([np.dot(d[: n - k], d[k:]) / (n - k) for k in range(n)])


def test_two_point_calibration():
    assert calibration_coefficient([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)
    assert calibration_coefficient([1.0, 2.0], [3.0, 6.0]) == pytest.approx(3.0)
    with pytest.raises(CalibrationError):
        calibration_coefficient([0.0, 0.0], [1.0, 2.0])


def test_clean_kepler_calibrates_to_unit_coupling(clean_wide_kepler):
    m = BasisModel.single_term(LIB, 0, 0.3)
    res = calibrate(m, clean_wide_kepler.train)
    assert res.dominant_basis_index == 0 and res.label == "r^-2"
    assert res.theta_opt == pytest.approx(1.0, abs=0.005)


def test_clean_hooke_calibration_matches_stencil_response():
    data = generate_dataset(GeneratorConfig(system="hooke", noise_fraction=0.0, n_orbits=6), 1)
    m = BasisModel.single_term(LIB, 2, 0.5)
    res = calibrate(m, data.orbits)
    # a stride-s second difference of a unit-frequency sinusoid scales it by (2 sin(h/2) / h)^2
    h = 10 * 0.05
    assert res.theta_opt == pytest.approx((2 * math.sin(h / 2) / h) ** 2, rel=1e-5)


def test_calibration_needs_a_dominant_gate(kepler_data):
    flat = BasisModel(np.zeros(5), np.ones(5))
    with pytest.raises(CalibrationError):
        calibrate(flat, kepler_data.train)
    res = calibrate(flat, kepler_data.train, require_dominant=False)
    assert res.n_points > 0


def test_autocorrelation_matches_direct_sum():
    x = np.random.default_rng(0).normal(size=300)
    np.testing.assert_allclose(autocorrelation(x), brute_acf(x), atol=1e-12)


def test_period_of_a_cosine():
    t = np.arange(0, 20, 0.01)
    assert estimate_period(np.cos(2 * math.pi * t / 4.0), 0.01) == pytest.approx(4.0, abs=0.05)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 6.0), st.floats(-5, 5), st.floats(0.1, 10), st.floats(0, 2 * math.pi))
def test_period_ignores_offset_amplitude_and_phase(T, offset, amp, phase):
    t = np.arange(0, 5 * T, 0.01)
    x = offset + amp * np.cos(2 * math.pi * t / T + phase)
    assert estimate_period(x, 0.01) == pytest.approx(T, rel=0.01)


def test_period_rejects_constant_signal():
    with pytest.raises(PeriodEstimationError):
        estimate_period(np.full(100, 3.0), 0.01)


def test_circular_period_and_rollout_period():
    m = BasisModel.single_term(LIB, 0, 1.0)
    assert circular_period(m, 1.0) == pytest.approx(2 * math.pi)
    T, ro = orbit_period(m, [1.0, 0.0], [0.0, 1.0])
    assert T == pytest.approx(2 * math.pi, rel=0.01)
    assert ro.semi_major_axis == pytest.approx(1.0, rel=1e-3)


def test_power_law_fit_is_exact_on_kepler_periods():
    a = np.array([0.7, 1.3, 2.9, 4.4])
    fit = fit_power_law(a, 2 * math.pi * a ** 1.5)
    assert fit.p == pytest.approx(3.0, abs=1e-12)
    assert fit.C == pytest.approx(4 * math.pi ** 2, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0)
    flat = fit_power_law(a, np.full(4, 2 * math.pi))
    assert flat.p == pytest.approx(0.0, abs=1e-12)


def test_power_law_fit_errors():
    with pytest.raises(FitError):
        fit_power_law([1.0, 1.0], [2.0, 3.0])
    with pytest.raises(FitError):
        fit_power_law([1.0, -2.0], [2.0, 3.0])


def test_true_law_recovers_cubic_exponent(clean_wide_kepler):
    m = BasisModel.single_term(LIB, 0, 1.0)
    fit = kepler_exponent(m, clean_wide_kepler.orbits[:5])
    assert fit.p == pytest.approx(3.0, abs=0.01)


def test_true_law_conserves_its_own_energy(clean_wide_kepler):
    m = BasisModel.single_term(LIB, 0, 1.0)
    observed, _ = mean_sigma_H(m, clean_wide_kepler.test, "observed")
    assert observed < 1e-5
    rep = conservation(m, [1.0, 0.0], [0.0, 1.1])
    assert rep.sigma_H < 1e-5 and not rep.diverged


def test_rollout_energy_spread_is_time_reversal_symmetric():
    m = BasisModel.single_term(LIB, 0, 1.0)
    fwd = conservation(m, [1.0, 0.0], [0.0, 1.1])
    back = conservation(m, [1.0, 0.0], [0.0, -1.1])
    assert back.sigma_H == pytest.approx(fwd.sigma_H, rel=1e-9)


def test_selection_picks_lowest_mean():
    entries = [(0, 0.02), (0, 0.025), (1, 0.15), (1, 0.18), (4, 0.05)]
    v = select_by_conservation(entries, LIB.labels)
    assert v.basis_index == 0 and v.label == "r^-2"
    # runner-up is index 4 with mean 0.05 against 0.0225
    assert v.margin == pytest.approx(0.05 / 0.0225)
    assert v.group_sizes == {0: 2, 1: 2, 4: 1}
    assert not v.tie and not v.single_group


def test_selection_single_group_and_tie():
    v = select_by_conservation([(4, 0.1), (4, 0.3)])
    assert v.single_group and v.margin is None and v.basis_index == 4
    t = select_by_conservation([(3, 0.2), (1, 0.2)])
    assert t.tie and t.basis_index == 1
    with pytest.raises(ValueError):
        select_by_conservation([(0, float("nan"))])


def test_validate_end_to_end(clean_wide_kepler):
    m = BasisModel.single_term(LIB, 0, 0.5)
    res = validate(m, clean_wide_kepler)
    assert res.calibration.theta_opt == pytest.approx(1.0, abs=0.005)
    # two test orbits only, so the slope is loose
    assert res.kepler.p == pytest.approx(3.0, abs=0.05)
    assert res.sigma_H < 1e-4
    assert set(res.to_json()) >= {"theta_opt", "p", "C", "sigma_H"}


def test_validation_config_checks():
    with pytest.raises(ValueError):
        ValidationConfig(conservation_mode="both")
    with pytest.raises(ValueError):
        ValidationConfig(a_source="guess")
