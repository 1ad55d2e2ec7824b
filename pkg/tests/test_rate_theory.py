import itertools
import math

import numpy as np
import pytest

from pairsim import REPETITION_RATE_HZ
from pairsim.errors import ConfigurationError, DegenerateError, DomainError, UndefinedVisibilityError
from pairsim.rate_theory import (
    InterferometerSpec,
    MeasuredRates,
    PortRatios,
    RateMetrics,
    SaturationSpec,
    accidental_rate,
    binary_entropy,
    car,
    colorless_mu,
    delta_empirical,
    detector_efficiency,
    extrapolate_metrics,
    first_order_multiphoton_visibility,
    first_order_visibility,
    fit_quality_slopes,
    fock_coincidence_oracle,
    fock_visibility,
    full_wavefunction_scaling,
    heralded_g2,
    imbalance_visibility,
    mean_pairs_from_squeezing,
    multiphoton_coincidence,
    multiphoton_visibility,
    mu_from_rates,
    optimal_mu_ratio,
    port_fringes,
    port_visibilities,
    raw_visibility,
    saturated_rate,
    secret_key_rate,
    shg_power,
    source_port_mu_ratio,
    source_port_powers,
    visibility_corrected,
)


def test_mu_from_rates():
    rates = MeasuredRates(S_A=1e6, S_B=1e6, C_AB=1e4, repetition_rate_R=4.09e9)
    assert mu_from_rates(rates, 0.4) == pytest.approx(9.78e-3, abs=1e-5)


def test_mu_from_rates_unity():
    rates = MeasuredRates(S_A=2e6, S_B=2e6, C_AB=4e12 / 4.09e9, repetition_rate_R=4.09e9)
    assert mu_from_rates(rates, 1.0) == pytest.approx(1.0)


def test_mu_from_rates_without_coincidences():
    with pytest.raises(DegenerateError):
        mu_from_rates(MeasuredRates(1e6, 1e6, 0.0), 0.4)


@pytest.mark.parametrize(
    "S_A, S_B, C_AB",
    [
        (-1.0, 1e6, 1e3),
        (1e6, 1e6, 2e6),
    ],
)
def test_measured_rates_validation(S_A, S_B, C_AB):
    with pytest.raises(DomainError):
        MeasuredRates(S_A, S_B, C_AB)


def test_colorless_mu_overestimates_by_delta():
    rates = MeasuredRates(1e6, 1e6, 1e4)
    assert colorless_mu(1e6, 1e6, 1e4) == pytest.approx(mu_from_rates(rates, 0.4) / 0.4)
    with pytest.raises(DegenerateError):
        colorless_mu(1e6, 1e6, 0)


def test_delta_empirical():
    assert delta_empirical(200.0, 0.2, 1000.0) == pytest.approx(1.0)
    assert delta_empirical(0.393 * 0.2 * 1e6, 0.2, 1e6) == pytest.approx(0.393)
    with pytest.raises(DegenerateError):
        delta_empirical(1.0, 0.0, 1e6)


def test_accidental_rate_components():
    delta, S, R, eta = 0.393, 1e6, 4.09e9, 0.2
    result = accidental_rate(S, S, R, delta, eta, eta)
    assert result.C_ee == pytest.approx((1 - delta) ** 2 * S * S / R)
    assert result.C_em == pytest.approx((1 - delta) * S * delta * (1 - eta) * S / R)
    assert result.C_me == pytest.approx(result.C_em)
    assert result.total == pytest.approx(183.406015, rel=1e-6)


@pytest.mark.parametrize("S_A, delta", [(1e6, 1.0), (0.0, 0.393)])
def test_accidental_rate_vanishes(S_A, delta):
    assert accidental_rate(S_A, 1e6, REPETITION_RATE_HZ, delta, 0.2, 0.2).total == 0


def test_accidental_rate_rejects_bad_delta():
    with pytest.raises(DomainError):
        accidental_rate(1e6, 1e6, REPETITION_RATE_HZ, 1.2, 0.2, 0.2)


def test_car():
    assert car(100.0, 4.0) == 25.0
    assert car(100.0, 0.0) == math.inf


def test_visibility_corrected():
    assert visibility_corrected(100, 2, 1) == pytest.approx(98.0)
    assert raw_visibility(100, 2) == pytest.approx(9800 / 102)
    assert visibility_corrected(100, 0, 0) == 100.0
    assert visibility_corrected(50, 50, 0) == 0.0


def test_visibility_corrected_clamps_negative_counts():
    # C_min is fully accidental
    assert visibility_corrected(100, 5, 10) == 100.0


def test_visibility_corrected_errors():
    with pytest.raises(DomainError):
        visibility_corrected(1, 2, 0)
    with pytest.raises(UndefinedVisibilityError):
        visibility_corrected(5, 5, 10)


@pytest.mark.parametrize("mu, V0, expected", [(0, 1.0, 1.0), (0, 0.9, 0.9), (1, 1.0, 0.5), (0.01, 1.0, 0.990099)])
def test_first_order_visibility(mu, V0, expected):
    assert first_order_visibility(mu, V0) == pytest.approx(expected, abs=1e-6)


def test_first_order_visibility_rejects_negative_mu():
    with pytest.raises(DomainError):
        first_order_visibility(-0.1)


def test_imbalance_visibility():
    assert imbalance_visibility(1.0) == 1.0
    assert imbalance_visibility(0.5) == pytest.approx(0.942809, abs=1e-6)


def test_first_order_multiphoton_visibility_balanced():
    assert first_order_multiphoton_visibility(0.01, 0.01) == pytest.approx(1 - 2 * 0.01)


def test_port_visibilities():
    balanced = port_visibilities(1.0, 1.0, 1.0)
    assert all(v == pytest.approx(1.0) for v in balanced.values())
    assert port_visibilities(4.0, 1.0, 1.0)["A1B1"] == pytest.approx(0.8)
    assert port_visibilities(1.3, 1.0, 1.3)["A1B1"] == pytest.approx(1.0)


def test_port_visibilities_reach_one_at_optimum():
    kappa_A, kappa_B, eps_A, eps_B = 1 / 1.24, 1 / 1.15, 1.1, 0.9
    for port in ("A1B1", "A1B2", "A2B1", "A2B2"):
        x = optimal_mu_ratio(port, kappa_A, kappa_B, eps_A, eps_B)
        assert port_visibilities(x, kappa_A, kappa_B, eps_A, eps_B)[port] == pytest.approx(1.0)


def test_port_visibilities_rejects_nonpositive():
    with pytest.raises(DomainError):
        port_visibilities(0.0, 1.0, 1.0)


def test_port_fringes_follow_visibility():
    x, kappa_A, kappa_B = 2.0, 1.0, 1.0
    high = port_fringes(x, kappa_A, kappa_B, phase=0.0)["A1B1"]
    low = port_fringes(x, kappa_A, kappa_B, phase=math.pi)["A1B1"]
    assert (high - low) / (high + low) == pytest.approx(port_visibilities(x, kappa_A, kappa_B)["A1B1"])


def test_interferometer_from_imbalance():
    spec = InterferometerSpec.from_imbalance(1.24)
    assert spec.kappa == pytest.approx(1 / 1.24)
    assert spec.epsilon == pytest.approx(1.0)
    assert InterferometerSpec.from_imbalance(0.5).kappa == pytest.approx(2.0)
    with pytest.raises(ConfigurationError):
        InterferometerSpec(transmittance_t=1.5)


def test_source_port_mu_ratio():
    assert source_port_mu_ratio(1, 0.7, 0.9, 0.9) == pytest.approx(1.0)
    assert source_port_mu_ratio(1, 0.7, 1.0, math.sqrt(0.8)) == pytest.approx(1.5625)
    alpha, beta = 1.0, 0.8
    t = math.sqrt((alpha / beta) / (1 + alpha / beta))
    assert source_port_mu_ratio(2, t, alpha, beta) == pytest.approx(1.0)


@pytest.mark.parametrize("port, t", [(1, 1.0), (3, 0.5)])
def test_source_port_mu_ratio_domain(port, t):
    with pytest.raises(DomainError):
        source_port_mu_ratio(port, t, 1.0, 1.0)


@pytest.mark.parametrize(
    "mu_E, mu_L, expected",
    [
        (1e-4, 1e-3, 0.57422234),
        (1e-3, 1e-4, 0.57422234),
        (0.01, 0.05, 0.69902866),
        (0.05, 0.05, 0.90909091),
    ],
)
def test_multiphoton_visibility_values(mu_E, mu_L, expected):
    assert multiphoton_visibility(mu_E, mu_L) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("mu", [1e-4, 1e-3, 5e-3, 0.01, 0.02, 0.05])
def test_multiphoton_visibility_small_mu_expansion(mu):
    visibility = multiphoton_visibility(mu, mu)
    assert visibility == pytest.approx(1 / (1 + 2 * mu))
    assert abs(visibility - (1 - 2 * mu)) <= 5 * mu**1.5


def test_multiphoton_visibility_errors():
    with pytest.raises(UndefinedVisibilityError):
        multiphoton_visibility(0.0, 0.0)
    with pytest.raises(DomainError):
        multiphoton_visibility(-0.1, 0.1)


def test_multiphoton_coincidence_vacuum():
    assert multiphoton_coincidence(0.0, 0.0) == pytest.approx(0.0)


def test_multiphoton_coincidence_fringe():
    phases = np.linspace(0, 2 * math.pi, 73)
    values = [multiphoton_coincidence(0.01, 0.001, phase=p) for p in phases]
    assert int(np.argmax(values)) in (0, 72)
    assert int(np.argmin(values)) == 36
    assert multiphoton_coincidence(0.01, 0.001) == pytest.approx(0.00431878, abs=1e-8)
    assert multiphoton_coincidence(0.01, 0.001, phase=math.pi) == pytest.approx(0.00119099, abs=1e-8)


def test_multiphoton_coincidence_rejects_bad_transmittance():
    with pytest.raises(DomainError):
        multiphoton_coincidence(0.01, 0.01, tau_A=1.5)


GRID = [1e-4, 1e-3, 1e-2]


@pytest.mark.parametrize("mu_E, mu_L", list(itertools.product(GRID, GRID)))
@pytest.mark.parametrize("phase", [0.0, math.pi / 2, math.pi])
def test_closed_form_matches_fock_oracle(mu_E, mu_L, phase):
    oracle = fock_coincidence_oracle(mu_E, mu_L, 0.5, 0.5, phase, n_max=4)
    assert not oracle.truncated
    assert abs(multiphoton_coincidence(mu_E, mu_L, 0.5, 0.5, phase) - oracle.probability) <= 1e-6


def test_closed_form_matches_fock_oracle_with_unequal_splitters():
    oracle = fock_coincidence_oracle(0.01, 0.001, 0.3, 0.7, 1.0, n_max=4)
    assert multiphoton_coincidence(0.01, 0.001, 0.3, 0.7, 1.0) == pytest.approx(oracle.probability, abs=1e-6)


@pytest.mark.parametrize("mu_E, mu_L", list(itertools.product(GRID, GRID)))
def test_visibility_matches_fock_oracle(mu_E, mu_L):
    assert abs(multiphoton_visibility(mu_E, mu_L) - fock_visibility(mu_E, mu_L)) <= 1e-6


def test_fock_oracle_vacuum_and_convergence():
    assert fock_coincidence_oracle(0.0, 0.0).probability == pytest.approx(0.0)
    four = fock_coincidence_oracle(0.01, 0.01, n_max=4).probability
    five = fock_coincidence_oracle(0.01, 0.01, n_max=5).probability
    assert abs(four - five) < 1e-9


def test_fock_oracle_flags_truncation(mocker):
    mock_logger = mocker.patch("pairsim.rate_theory.logger")
    result = fock_coincidence_oracle(0.3, 0.3, n_max=2)
    assert result.truncated
    assert result.truncation_loss > 1e-8
    mock_logger.warning.assert_called_once()


def test_fock_oracle_rejects_n_max():
    with pytest.raises(DomainError):
        fock_coincidence_oracle(0.01, 0.01, n_max=7)


def test_heralded_g2():
    R, eta = 4.09e9, 0.17
    S_i = 0.001 * R * eta
    result = heralded_g2(S_i, eta, R)
    assert result.g2 == pytest.approx(3.66e-3)
    assert result.slope is None
    assert heralded_g2(S_i, eta, R, mu=0.001).slope == pytest.approx(3.66)


def test_heralded_g2_with_mu_mapping():
    R, eta = 4.09e9, 1.0
    S_i = 0.002 * R

    def mapping(S, e, rate):
        return S / (rate * e)

    result = heralded_g2(S_i, eta, R, mu_mapping=mapping)
    assert result.slope == pytest.approx(2.0)


@pytest.mark.parametrize("eta, error", [(0.0, DegenerateError), (1.5, DomainError)])
def test_heralded_g2_errors(eta, error):
    with pytest.raises(error):
        heralded_g2(1e5, eta)


@pytest.mark.parametrize("p, expected", [(0.5, 1.0), (0.0, 0.0), (1.0, 0.0), (0.017, 0.124248)])
def test_binary_entropy(p, expected):
    assert binary_entropy(p) == pytest.approx(expected, abs=1e-6)


def test_secret_key_rate_perfect_visibility():
    assert secret_key_rate(1.0, 1.0) == 0.81
    assert secret_key_rate(1e6, 1.0) == pytest.approx(810000.0)


def test_secret_key_rate_matches_entropy_chain():
    error = (1 - 0.966) / 2
    h2 = -error * math.log(error, 2) - (1 - error) * math.log(1 - error, 2)
    expected = 0.81 * (1 - 1.1 * h2 - h2)
    assert secret_key_rate(1.0, 0.966) == pytest.approx(expected, abs=1e-6)
    assert secret_key_rate(1.0, 0.966) == pytest.approx(0.598655, abs=1e-6)


def test_secret_key_rate_clamps_to_zero():
    assert secret_key_rate(1e6, 0.7) == 0.0


def test_secret_key_rate_rejects_visibility():
    with pytest.raises(DomainError):
        secret_key_rate(1.0, 1.2)


@pytest.mark.parametrize(
    "ratios, mode, factor",
    [
        (PortRatios(1.0, 1.0), "all_ports", 4.0),
        (PortRatios(1.0, 1.0), "two_branches_from_min", 8 / 3),
        (PortRatios(0.99, 1.04), "all_ports", 4.0596),
    ],
)
def test_full_wavefunction_scaling(ratios, mode, factor):
    assert full_wavefunction_scaling(1000.0, ratios, mode) == pytest.approx(1000.0 * factor)
    assert full_wavefunction_scaling(0.0, ratios, mode) == 0.0


def test_full_wavefunction_scaling_errors():
    with pytest.raises(ConfigurationError):
        full_wavefunction_scaling(1.0, PortRatios(1.0, 1.0), "half")
    with pytest.raises(ConfigurationError):
        PortRatios(0.0, 1.0)


def test_detector_efficiency():
    sat = SaturationSpec(nominal_efficiency_eta0=0.9, rate_3db=15.5e6)
    assert detector_efficiency(0.0, sat) == 0.9
    assert detector_efficiency(15.5e6, sat) == pytest.approx(0.45)
    assert detector_efficiency(3.84e6, sat) / 0.9 == pytest.approx(0.801448, abs=1e-6)
    assert saturated_rate(15.5e6, sat) == pytest.approx(15.5e6 * 0.45)
    with pytest.raises(DomainError):
        detector_efficiency(-1.0, sat)


BASELINE = RateMetrics(mu=5e-3, C_AB=1e4, C_N=9000.0, C_I=8000.0, SKR=6000.0)


def test_extrapolation_without_saturation_is_monotone():
    result = extrapolate_metrics(BASELINE, (0.0, 0.0, 0.0), None, mu_range=(1e-5, 0.05), points=500)
    for name, curve in result.curves.items():
        assert np.all(np.diff(curve) >= 0)
        assert result.argmax[name] == pytest.approx(0.05)


def test_extrapolation_maximizer_ordering():
    result = extrapolate_metrics(
        BASELINE,
        (-40.0, -80.0, -50.0),
        SaturationSpec(rate_3db=15.1e6),
        channel_count=8,
        mu_range=(1e-5, 0.05),
        points=2000,
        singles_A=5.4e6,
        singles_B=5.4e6,
    )
    argmax = result.argmax
    assert argmax["C_I"] < argmax["SKR"] < argmax["C_N"] < argmax["C_AB"]
    assert argmax["C_AB"] == pytest.approx(0.014, abs=5e-4)
    index = int(np.argmin(abs(result.mu - BASELINE.mu)))
    assert result.curves["C_AB"][index] == pytest.approx(8e4, rel=0.01)


def test_extrapolation_clamps_quality_at_zero():
    result = extrapolate_metrics(BASELINE, (-1000.0, -1000.0, -1000.0), None, mu_range=(1e-5, 0.05), points=200)
    for name in ("C_N", "C_I", "SKR"):
        assert np.all(result.curves[name] >= 0)
        assert result.curves[name][-1] == 0
    assert np.all(result.curves["C_I"] <= result.curves["C_N"])


@pytest.mark.parametrize(
    "mu_range, points",
    [
        ((0.01, 0.001), 100),
        ((1e-5, 0.05), 1),
        ((0.01, 0.05), 100),
    ],
)
def test_extrapolation_rejects_bad_range(mu_range, points):
    with pytest.raises(ConfigurationError):
        extrapolate_metrics(BASELINE, (0.0, 0.0, 0.0), None, mu_range=mu_range, points=points)


def test_extrapolation_rejects_empty_baseline():
    empty = RateMetrics(mu=5e-3, C_AB=0.0, C_N=0.0, C_I=0.0, SKR=0.0)
    with pytest.raises(DegenerateError):
        extrapolate_metrics(empty, (0.0, 0.0, 0.0), None)


def test_fit_quality_slopes():
    mu = [1e-3, 2e-3, 4e-3]
    slopes = fit_quality_slopes(mu, [[1 - 40 * m for m in mu], [0.9 - 80 * m for m in mu], [0.5] * 3])
    assert slopes == pytest.approx((-40.0, -80.0, 0.0), abs=1e-6)


def test_extrapolation_totals_scale_with_channels():
    result = extrapolate_metrics(BASELINE, (0.0, 0.0, 0.0), None, channel_count=2, points=10)
    doubled = result.totals(3)
    np.testing.assert_allclose(doubled["C_AB"], result.curves["C_AB"] * 3)


def test_source_port_powers():
    powers = source_port_powers(math.sqrt(0.5), 1.0, 1.0)
    assert powers == pytest.approx({"P_E1": 0.25, "P_E2": 0.25, "P_L1": 0.25, "P_L2": 0.25})
    unbalanced = source_port_powers(math.sqrt(0.5), 2.0, 1.0)
    assert unbalanced["P_E1"] == pytest.approx(1.0)
    assert unbalanced["P_L2"] == pytest.approx(0.25)


def test_shg_power():
    assert shg_power(1.0, 0.0) == 0.0
    assert shg_power(1.0, 1.0) == pytest.approx(math.tanh(1.0) ** 2)
    # full conversion at high efficiency
    assert shg_power(2.0, 1e6) == pytest.approx(2.0)


def test_mean_pairs_from_squeezing():
    assert mean_pairs_from_squeezing(0.0) == 0.0
    assert mean_pairs_from_squeezing(math.asinh(1.0)) == pytest.approx(1.0)
