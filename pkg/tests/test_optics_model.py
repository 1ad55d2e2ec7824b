import numpy as np
import pytest

from pairsim import ITU_SPACING_HZ, REPETITION_RATE_HZ
from pairsim.errors import ConfigurationError, CoverageError, DegenerateError, DomainError
from pairsim.optics_model import (
    PHASE_MATCHED_PROXY_C,
    CrystalSpec,
    FilterSpec,
    FitParams,
    JsiGrid,
    PumpSpec,
    SchmidtConvention,
    build_jsi_grid,
    coincidence_integral,
    delta_model,
    energy_matched_partner,
    filter_pair_grid,
    filter_transmission,
    fit_jsi,
    heralding_efficiency,
    hz_to_nm,
    itu_channel_for,
    itu_filter,
    itu_frequency,
    matched_filter_pair,
    mu_integral,
    nm_to_hz,
    phase_matched_temperature,
    phase_mismatch,
    plan_grid,
    rate_model,
    read_jsi_csv,
    refractive_index,
    schmidt_decompose,
    schmidt_from_matrix,
    singles_integral,
    unit_peak_transmission,
    write_jsi_csv,
)


def test_refractive_index_of_mgo_lithium_niobate():
    crystal = CrystalSpec(temperature_T=50.0)
    assert refractive_index(1539.47, crystal) == pytest.approx(2.13790935, abs=1e-6)


@pytest.mark.parametrize("wavelength", [250.0, 6000.0])
def test_refractive_index_outside_sellmeier_range(wavelength):
    with pytest.raises(DomainError):
        refractive_index(wavelength, CrystalSpec())


def test_phase_matched_temperature_zeroes_degenerate_mismatch():
    temperature = phase_matched_temperature()
    assert temperature == pytest.approx(PHASE_MATCHED_PROXY_C, abs=0.05)
    degenerate = 2 * PumpSpec().center_wavelength_lambda_p
    crystal = CrystalSpec(temperature_T=temperature)
    assert abs(float(phase_mismatch(degenerate, degenerate, crystal))) * crystal.length_L < 1e-3


def test_phase_matched_temperature_outside_bracket():
    with pytest.raises(DomainError):
        phase_matched_temperature(bracket=(10.0, 20.0))


def test_itu_grid():
    assert itu_frequency(35) == pytest.approx(193.5e12)
    assert itu_channel_for(193.5e12 + 0.3 * ITU_SPACING_HZ) == 35
    assert hz_to_nm(nm_to_hz(1550.0)) == pytest.approx(1550.0)


def test_matched_filter_pair_is_energy_matched():
    pump = PumpSpec.from_fwhm()
    filter_u, filter_v = matched_filter_pair(50e9, 82e9, pump)
    assert filter_u.center_frequency + filter_v.center_frequency == pytest.approx(pump.center_frequency)
    assert filter_u.center_frequency - pump.center_frequency / 2 == pytest.approx(50e9)
    assert filter_v.fwhm == filter_u.fwhm == 82e9


def test_pump_fwhm_round_trip():
    assert PumpSpec.from_fwhm(769.78, 243e9).fwhm_hz == pytest.approx(243e9)


@pytest.mark.parametrize("order", [1, 3, 5])
def test_super_gaussian_is_half_at_half_width(order):
    filt = FilterSpec(35, 193.5e12, 82e9, order, 0.8)
    assert filter_transmission(filt.center_frequency, filt) == pytest.approx(0.8)
    assert filter_transmission(filt.center_frequency + 41e9, filt) == pytest.approx(0.4)
    assert filter_transmission(filt.center_frequency - 41e9, filt) == pytest.approx(0.4)
    assert unit_peak_transmission(filt.center_frequency, filt) == pytest.approx(1.0)


def test_measured_filter_curve_is_interpolated_and_zero_outside():
    filt = FilterSpec(35, 193.5e12, measured_curve=((193.4e12, 0.0), (193.5e12, 0.5), (193.6e12, 0.0)))
    assert filter_transmission(193.45e12, filt) == pytest.approx(0.25)
    assert filter_transmission(193.7e12, filt) == 0.0
    assert unit_peak_transmission(193.5e12, filt) == pytest.approx(1.0)
    assert filt.passband == (193.5e12, 193.5e12)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"peak_transmission_eta": 1.2},
        {"fwhm": 0.0},
        {"supergauss_order_m": 0},
        {"measured_curve": ((2.0, 0.1), (1.0, 0.2))},
        {"measured_curve": ((1.0, 0.1), (2.0, 1.5))},
    ],
)
def test_filter_spec_validation(kwargs):
    with pytest.raises(ConfigurationError):
        FilterSpec(35, 193.5e12, **kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [{"length_L": 0.0}, {"poling_period_Lambda": -1.0}, {"temperature_T": 400.0}, {"sellmeier_coefficients": (1.0, 2.0)}],
)
def test_crystal_spec_validation(kwargs):
    with pytest.raises(ConfigurationError):
        CrystalSpec(**kwargs)


def test_pump_outside_supported_band():
    with pytest.raises(ConfigurationError):
        PumpSpec(532.0)


def test_jsi_grid_validation():
    with pytest.raises(ConfigurationError):
        JsiGrid(np.linspace(1, 2, 3), np.linspace(1, 2, 4), np.ones((4, 3)))
    with pytest.raises(ConfigurationError):
        JsiGrid(np.array([2.0, 1.0]), np.array([1.0, 2.0]), np.ones((2, 2)))
    with pytest.raises(ConfigurationError):
        JsiGrid(np.array([1.0, 2.0]), np.array([1.0, 2.0]), -np.ones((2, 2)))


def test_jsi_grid_is_read_only():
    grid = JsiGrid(np.array([1.0, 2.0]), np.array([1.0, 2.0]), np.ones((2, 2)))
    with pytest.raises(ValueError):
        grid.intensity[0, 0] = 5.0


def test_jsi_grid_is_cached():
    crystal, pump = CrystalSpec(), PumpSpec()
    first = build_jsi_grid(crystal, pump, (1555.0, 1565.0), (1515.0, 1525.0), 64)
    assert build_jsi_grid(crystal, pump, (1555.0, 1565.0), (1515.0, 1525.0), 64) is first


def test_grid_below_minimum_resolution():
    with pytest.raises(ConfigurationError):
        build_jsi_grid(CrystalSpec(), PumpSpec(), (1555.0, 1565.0), (1515.0, 1525.0), 16)


def test_clipped_passband_raises_coverage_error(narrow_grid):
    far = itu_filter(10)
    with pytest.raises(CoverageError):
        singles_integral(far, "signal", narrow_grid)


@pytest.mark.parametrize(
    "fwhm, convention, expected, tolerance",
    [
        (82e9, SchmidtConvention.REPORTED, 0.87, 0.03),
        (41e9, SchmidtConvention.REPORTED, 0.96, 0.02),
        (82e9, SchmidtConvention.PHYSICAL, 0.995, 0.005),
    ],
)
def test_inverse_schmidt_number_of_filtered_pair(fwhm, convention, expected, tolerance):
    filter_u, filter_v = matched_filter_pair(50e9, fwhm)
    grid = filter_pair_grid(filter_u, filter_v, resolution=256, wide=False)
    result = schmidt_decompose(filter_u, filter_v, grid, convention)
    assert result.inverse_K == pytest.approx(expected, abs=tolerance)
    assert result.schmidt_number_K == pytest.approx(1.0 / result.inverse_K)
    assert result.coefficients_lambda_i.sum() == pytest.approx(1.0)


def test_narrower_filters_purify_the_pair():
    results = []
    for fwhm in (82e9, 41e9):
        filter_u, filter_v = matched_filter_pair(50e9, fwhm)
        grid = filter_pair_grid(filter_u, filter_v, resolution=256, wide=False)
        results.append(schmidt_decompose(filter_u, filter_v, grid, SchmidtConvention.REPORTED).inverse_K)
    assert results[1] > results[0]


@pytest.mark.parametrize("convention", list(SchmidtConvention))
def test_separable_and_maximally_mixed_matrices(convention):
    separable = np.outer([1.0, 2.0, 3.0], [0.5, 1.0])
    assert schmidt_from_matrix(separable, convention).inverse_K == pytest.approx(1.0)
    assert schmidt_from_matrix(np.eye(4), convention).inverse_K == pytest.approx(0.25)


def test_schmidt_of_zero_grid():
    with pytest.raises(DegenerateError):
        schmidt_from_matrix(np.zeros((3, 3)))


def test_geometric_factor_of_default_filters(filter_pair, wide_grid):
    result = delta_model(*filter_pair, wide_grid)
    assert 0.34 <= result.mean <= 0.45
    assert result.delta_u == pytest.approx(result.delta_v, rel=0.05)


def test_geometric_factor_shrinks_with_filter_width():
    means = []
    for fwhm in (82e9, 41e9):
        filter_u, filter_v = matched_filter_pair(50e9, fwhm)
        means.append(delta_model(filter_u, filter_v, filter_pair_grid(filter_u, filter_v, resolution=256)).mean)
    assert 0 < means[1] < means[0] < 1


def test_heralding_efficiency_equals_geometric_factor_for_lossless_filters(filter_pair, wide_grid):
    result = delta_model(*filter_pair, wide_grid)
    herald_u, herald_v = heralding_efficiency(*filter_pair, wide_grid)
    assert herald_u == pytest.approx(result.delta_u)
    assert herald_v == pytest.approx(result.delta_v)


def test_path_efficiency_scales_rates_but_not_geometric_factor(filter_pair, wide_grid):
    filter_u, filter_v = filter_pair
    lossy_u = filter_u.with_eta(0.5)
    assert singles_integral(lossy_u, "signal", wide_grid) == pytest.approx(0.5 * singles_integral(filter_u, "signal", wide_grid))
    full = coincidence_integral(filter_u, filter_v, wide_grid)
    assert coincidence_integral(lossy_u, filter_v, wide_grid) == pytest.approx(0.5 * full)
    assert delta_model(lossy_u, filter_v, wide_grid).mean == pytest.approx(delta_model(filter_u, filter_v, wide_grid).mean)
    assert mu_integral(filter_u, filter_v, wide_grid) == pytest.approx(full / REPETITION_RATE_HZ)


def test_rate_model_over_a_channel_plan():
    filters_s = [itu_filter(48), itu_filter(49)]
    filters_i = [itu_filter(46), itu_filter(45)]
    grid = plan_grid(filters_s + filters_i, CrystalSpec(), PumpSpec(), resolution=128)
    singles, coincidences = rate_model(filters_s, filters_i, grid, pairs={(48, 46), (49, 45)})
    assert set(singles) == {45, 46, 48, 49}
    assert set(coincidences) == {(48, 46), (49, 45)}
    assert all(value > 0 for value in coincidences.values())
    assert coincidences[(48, 46)] < min(singles[48], singles[46])


def test_plan_grid_needs_both_arms():
    with pytest.raises(ConfigurationError):
        plan_grid([itu_filter(48), itu_filter(49)], CrystalSpec(), PumpSpec(), resolution=64)


def test_jsi_csv_round_trip(tmp_path):
    grid = build_jsi_grid(CrystalSpec(), PumpSpec(), (1555.0, 1565.0), (1515.0, 1525.0), 64)
    path = tmp_path / "jsi.csv"
    write_jsi_csv(grid, path, "pairsim test")

    loaded = read_jsi_csv(path)

    assert path.read_text().startswith("# pairsim test\n")
    np.testing.assert_array_equal(loaded.intensity, grid.intensity)
    np.testing.assert_array_equal(loaded.signal_wavelengths, grid.signal_wavelengths)


def test_fit_recovers_path_efficiencies():
    filters_s, filters_i = [itu_filter(48)], [itu_filter(46)]
    grid = plan_grid(filters_s + filters_i, CrystalSpec(), PumpSpec(), resolution=64)
    eta = {48: 0.3, 46: 0.6}
    singles = {
        48: eta[48] * singles_integral(filters_s[0], "signal", grid),
        46: eta[46] * singles_integral(filters_i[0], "idler", grid),
    }
    coincidences = {(48, 46): eta[48] * eta[46] * coincidence_integral(filters_s[0], filters_i[0], grid)}
    initial = FitParams(path_efficiencies_eta={48: 0.5, 46: 0.5}, floating=frozenset({"eta:48", "eta:46"}))

    result = fit_jsi(singles, coincidences, initial, CrystalSpec(), filters_s, filters_i, resolution=64, starts=1)

    assert result.params.path_efficiencies_eta[48] == pytest.approx(0.3, abs=1e-3)
    assert result.params.path_efficiencies_eta[46] == pytest.approx(0.6, abs=1e-3)
    assert result.objective < 1e-8
    assert result.trace


def test_fit_without_floating_parameters_reports_residuals():
    filters_s, filters_i = [itu_filter(48)], [itu_filter(46)]
    initial = FitParams(path_efficiencies_eta={48: 1.0, 46: 1.0})
    result = fit_jsi({48: 1.0}, {(48, 46): 0.5}, initial, CrystalSpec(), filters_s, filters_i, resolution=64)
    assert result.converged
    assert set(result.residuals) == {("S", 48), ("C", 48, 46)}


def test_fit_rejects_underdetermined_problem():
    initial = FitParams(path_efficiencies_eta={48: 0.5, 46: 0.5}, floating=frozenset({"eta:48", "eta:46", "global_brightness"}))
    with pytest.raises(ConfigurationError):
        fit_jsi({48: 1.0}, {(48, 46): 0.5}, initial, CrystalSpec(), [itu_filter(48)], [itu_filter(46)], resolution=64)


def test_fit_params_validation():
    with pytest.raises(ConfigurationError):
        FitParams(path_efficiencies_eta={35: 1.5})
    with pytest.raises(ConfigurationError):
        FitParams(floating=frozenset({"walk"}))


def test_energy_matched_partner():
    pump = PumpSpec()
    filter_u = itu_filter(35, eta=0.7)
    partner = energy_matched_partner(filter_u, pump)
    assert partner.center_frequency + filter_u.center_frequency == pytest.approx(pump.center_frequency)
    assert partner.peak_transmission_eta == 0.7
    assert partner.itu_channel == itu_channel_for(partner.center_frequency)
    assert energy_matched_partner(filter_u, pump, eta=0.4).peak_transmission_eta == 0.4
