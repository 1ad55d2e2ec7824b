"""Closed-form rate, visibility and entanglement-rate formulas.

Transmittances ``tau`` and the beamsplitter ``t`` enter the multiphoton formulas as power
transmittances, so the balanced delay interferometer is ``tau = 0.5`` (amplitude 1/sqrt 2).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from pairsim import (
    BASIS_RECONCILIATION_Q,
    ERROR_CORRECTION_F,
    RATE_3DB_ALICE_HZ,
    REPETITION_RATE_HZ,
)
from pairsim.errors import ConfigurationError, DegenerateError, DomainError, UndefinedVisibilityError

logger = logging.getLogger(__name__)

BALANCED_TAU = 0.5
TRUNCATION_TOLERANCE = 1e-8


@dataclass(frozen=True)
class MeasuredRates:
    S_A: float
    S_B: float
    C_AB: float
    repetition_rate_R: float = REPETITION_RATE_HZ

    def __post_init__(self):
        if min(self.S_A, self.S_B, self.C_AB, self.repetition_rate_R) < 0:
            raise DomainError("rates must be nonnegative")
        if self.C_AB > min(self.S_A, self.S_B):
            raise DomainError("coincidence rate {} exceeds a singles rate".format(self.C_AB))


@dataclass(frozen=True)
class InterferometerSpec:
    """Delay-line interferometer: beamsplitter power transmittance |t|^2 and short/long path efficiencies."""

    transmittance_t: float = math.sqrt(0.5)
    path_eff_alpha: float = 1.0
    path_eff_beta: float = 1.0
    phase_phi: float = 0.0
    delay: float = 80.0

    def __post_init__(self):
        for name in ("transmittance_t", "path_eff_alpha", "path_eff_beta"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigurationError("{} = {} outside [0, 1]".format(name, value))
        if self.delay <= 0:
            raise ConfigurationError("interferometer delay must be positive")

    @property
    def t_squared(self):
        return self.transmittance_t**2

    @property
    def r_squared(self):
        return 1.0 - self.transmittance_t**2

    @property
    def kappa(self):
        """Long-to-short intensity ratio |beta|^2/|alpha|^2."""
        return self.path_eff_beta**2 / self.path_eff_alpha**2

    @property
    def epsilon(self):
        return self.t_squared / self.r_squared

    @classmethod
    def from_imbalance(cls, short_to_long_ratio, phase_phi=0.0, delay=80.0):
        """Balanced beamsplitter whose short path is brighter than the long one by ``short_to_long_ratio`` (intensity)."""
        if short_to_long_ratio <= 0:
            raise ConfigurationError("imbalance ratio must be positive")
        alpha, beta = 1.0, 1.0
        if short_to_long_ratio >= 1:
            beta = math.sqrt(1.0 / short_to_long_ratio)
        else:
            alpha = math.sqrt(short_to_long_ratio)
        return cls(math.sqrt(0.5), alpha, beta, phase_phi, delay)


@dataclass(frozen=True)
class PortRatios:
    R_A: float
    R_B: float

    def __post_init__(self):
        if self.R_A <= 0 or self.R_B <= 0:
            raise ConfigurationError("port ratios must be positive")


@dataclass(frozen=True)
class SaturationSpec:
    nominal_efficiency_eta0: float = 1.0
    rate_3db: float = RATE_3DB_ALICE_HZ

    def __post_init__(self):
        if self.rate_3db <= 0:
            raise ConfigurationError("3 dB rate must be positive")
        if not 0 <= self.nominal_efficiency_eta0 <= 1:
            raise ConfigurationError("nominal efficiency outside [0, 1]")


@dataclass(frozen=True)
class RateMetrics:
    mu: float
    C_AB: float
    C_N: float
    C_I: float
    SKR: float


@dataclass(frozen=True)
class AccidentalRate:
    total: float
    C_ee: float
    C_em: float
    C_me: float


@dataclass(frozen=True)
class FockResult:
    probability: float
    truncation_loss: float
    truncated: bool


@dataclass(frozen=True)
class G2Result:
    g2: float
    slope: Optional[float] = None


@dataclass
class Extrapolation:
    mu: np.ndarray
    curves: dict = field(default_factory=dict)
    argmax: dict = field(default_factory=dict)
    channel_count: int = 1

    def totals(self, channel_count):
        return {name: values * channel_count for name, values in self.curves.items()}


def mu_from_rates(rates: MeasuredRates, delta):
    if rates.C_AB == 0:
        raise DegenerateError("mu is undefined without coincidences")
    return delta * rates.S_A * rates.S_B / (rates.repetition_rate_R * rates.C_AB)


def colorless_mu(S_s, S_i, C, R=REPETITION_RATE_HZ):
    """Classic estimate S_s S_i / (C R), valid only when losses are spectrally flat."""
    if C == 0:
        raise DegenerateError("mu is undefined without coincidences")
    return S_s * S_i / (C * R)


def delta_empirical(C_is, eta, S_other):
    if eta <= 0 or S_other <= 0:
        raise DegenerateError("empirical delta needs positive efficiency and singles")
    return C_is / (eta * S_other)


def accidental_rate(S_A, S_B, R, delta, eta_A, eta_B):
    if not 0 <= delta <= 1:
        raise DomainError("delta {} outside [0, 1]".format(delta))
    c_ee = (1 - delta) ** 2 * S_A * S_B / R
    c_em = (1 - delta) * S_A * delta * (1 - eta_A) * S_B / R
    c_me = (1 - delta) * S_B * delta * (1 - eta_B) * S_A / R
    return AccidentalRate(c_ee + c_em + c_me, c_ee, c_em, c_me)


def car(C, C_acc):
    if C_acc <= 0:
        return math.inf
    return C / C_acc


def raw_visibility(C_max, C_min):
    return visibility_corrected(C_max, C_min, 0.0)


def visibility_corrected(C_max, C_min, C_acc):
    if C_min < 0 or C_max < C_min:
        raise DomainError("expected C_max >= C_min >= 0, got {} and {}".format(C_max, C_min))
    high = max(C_max - C_acc, 0.0)
    low = max(C_min - C_acc, 0.0)
    if high + low <= 0:
        raise UndefinedVisibilityError("no coincidences left after subtracting accidentals")
    return 100.0 * (high - low) / (high + low)


def first_order_visibility(mu, V0=1.0):
    if mu < 0:
        raise DomainError("mu must be nonnegative")
    return V0 / (1 + mu)


def imbalance_visibility(x):
    return 2 * math.sqrt(x) / (1 + x)


def first_order_multiphoton_visibility(mu_E, mu_L):
    """Small-mu visibility for unequal early/late pair numbers (x = mu_E/mu_L)."""
    x = mu_E / mu_L
    return imbalance_visibility(x) - x * (5 * (x + 1 / x) + 6) / (2 * (1 + x) ** 2) * math.sqrt(mu_E * mu_L)


PORT_PAIRS = ("A1B1", "A1B2", "A2B1", "A2B2")


def _port_multipliers(eps_A, eps_B):
    # (numerator weight, denominator weight) applied to x for each port combination
    return {
        "A1B1": 1.0,
        "A1B2": 1.0 / eps_B,
        "A2B1": 1.0 / eps_A,
        "A2B2": 1.0 / (eps_A * eps_B),
    }


def port_visibilities(x, kappa_A, kappa_B, eps_A=1.0, eps_B=1.0):
    if min(x, kappa_A, kappa_B, eps_A, eps_B) <= 0:
        raise DomainError("port visibility inputs must be positive")
    root = math.sqrt(kappa_B / kappa_A)
    out = {}
    for port, weight in _port_multipliers(eps_A, eps_B).items():
        # weight w turns x into w^2 x on the optimum side, so x* scales as 1/w^2
        effective = x * weight**-2
        out[port] = 2 * math.sqrt(effective) / (root + effective / root)
    return out


def optimal_mu_ratio(port, kappa_A, kappa_B, eps_A=1.0, eps_B=1.0):
    """x = mu_E/mu_L at which the visibility of ``port`` reaches 1."""
    weight = _port_multipliers(eps_A, eps_B)[port]
    return kappa_B / kappa_A * weight**2


def port_fringes(x, kappa_A, kappa_B, eps_A=1.0, eps_B=1.0, phase=0.0):
    """Relative middle-bin coincidence rate of each port combination versus total phase."""
    root = math.sqrt(kappa_B / kappa_A)
    out = {}
    for port, weight in _port_multipliers(eps_A, eps_B).items():
        effective = x * weight**-2
        out[port] = root + effective / root + 2 * math.sqrt(effective) * np.cos(phase)
    return out


def source_port_powers(t, alpha, beta):
    """Relative early/late pulse powers at the two source interferometer outputs."""
    t2 = t**2
    r2 = 1 - t2
    return {
        "P_E1": r2 * t2 * alpha**2,
        "P_E2": r2**2 * alpha**2,
        "P_L1": r2 * t2 * beta**2,
        "P_L2": t2**2 * beta**2,
    }


def source_port_mu_ratio(port, t, alpha, beta):
    if not 0 < t < 1:
        raise DomainError("|t| must lie in (0, 1)")
    if port == 1:
        return alpha**4 / beta**4
    if port == 2:
        r2 = 1 - t**2
        return r2**4 * alpha**4 / (t**8 * beta**4)
    raise DomainError("source interferometer port must be 1 or 2")


def shg_power(pump_power, conversion_efficiency):
    return pump_power * math.tanh(math.sqrt(conversion_efficiency * pump_power)) ** 2


def mean_pairs_from_squeezing(xi):
    return math.sinh(xi) ** 2


def multiphoton_visibility(mu_E, mu_L):
    if mu_E < 0 or mu_L < 0:
        raise DomainError("pair numbers must be nonnegative")
    if mu_E == 0 and mu_L == 0:
        raise UndefinedVisibilityError("visibility undefined without pairs")
    s = mu_E * mu_L * (1 + mu_E) * (1 + mu_L)
    root = math.sqrt(s)
    g_plus = mu_E**2 * (9 + 8 * mu_L * (2 + mu_L)) + (4 + 3 * mu_L) * (4 + 3 * mu_L + 4 * root)
    g_plus += 2 * mu_E * (12 + 6 * root) + 2 * mu_E * mu_L * (19 + 8 * mu_L + 4 * root)
    g_minus = mu_E**2 * (9 + 8 * mu_L * (2 + mu_L)) - (4 + 3 * mu_L) * (-4 - 3 * mu_L + 4 * root)
    g_minus += 2 * mu_E * (12 - 6 * root) + 2 * mu_E * mu_L * (19 + 8 * mu_L - 4 * root)
    a = 2 / math.sqrt(g_minus)
    b = 2 / math.sqrt(g_plus)
    return (a - b) / (1 - 4 / (2 + mu_E + mu_L) + a + b)


def multiphoton_coincidence(mu_E, mu_L, tau_A=BALANCED_TAU, tau_B=BALANCED_TAU, phase=0.0):
    """Threshold-detector coincidence probability of the two monitored middle-bin outputs."""
    for tau in (tau_A, tau_B):
        if not 0 <= tau <= 1:
            raise DomainError("transmittance {} outside [0, 1]".format(tau))
    f = 1 + mu_L + tau_A * (mu_E - mu_L)
    g = 1 + mu_E + tau_B * (mu_L - mu_E)
    h = (
        1
        + mu_E
        + mu_L * (1 + mu_E) * (1 - tau_A)
        - mu_E * tau_B * (1 + mu_L)
        + tau_A * tau_B * (mu_E + mu_L + 2 * mu_E * mu_L)
        - 2
        * math.sqrt(mu_E * mu_L * tau_A * (1 + mu_E) * (1 + mu_L) * (1 - tau_A))
        * math.sqrt(tau_B * (1 - tau_B))
        * math.cos(phase)
    )
    return 1 - 1 / f - 1 / g + 1 / h


def _tmsv_coefficients(mu, n_max):
    n = np.arange(n_max + 1)
    return (-1.0) ** n * np.sqrt(mu**n / (1 + mu) ** (n + 1))


def _mode_substitution(weights, exponent):
    """Expand (w0 c0 + w1 c1)^exponent into {(k0, k1): coefficient} with creation operators c0, c1."""
    out = {}
    for k in range(exponent + 1):
        out[(k, exponent - k)] = special.comb(exponent, k, exact=True) * weights[0] ** k * weights[1] ** (exponent - k)
    return out


def fock_coincidence_oracle(mu_E, mu_L, tau_A=BALANCED_TAU, tau_B=BALANCED_TAU, phase=0.0, n_max=4):
    """Brute-force photon-number computation of the same coincidence probability.

    Early and late two-mode squeezed vacua (truncated at ``n_max`` photons per mode) pass through
    Alice's and Bob's delay interferometers, reduced to the beamsplitter acting on the early and
    late modes that meet in the middle bin. Outputs 1 (Alice) and 4 (Bob) are monitored with
    threshold detectors.
    """
    if not 2 <= n_max <= 6:
        raise DomainError("n_max must lie in [2, 6]")
    c_e = _tmsv_coefficients(mu_E, n_max)
    c_l = _tmsv_coefficients(mu_L, n_max)
    loss_e = (mu_E / (1 + mu_E)) ** (n_max + 1)
    loss_l = (mu_L / (1 + mu_L)) ** (n_max + 1)
    truncation_loss = 1 - (1 - loss_e) * (1 - loss_l)

    ta, ra = math.sqrt(tau_A), math.sqrt(1 - tau_A)
    tb, rb = math.sqrt(tau_B), math.sqrt(1 - tau_B)
    rotation = complex(math.cos(phase), math.sin(phase))
    # Alice: early -> (t, r) on outputs (1, 2); late -> e^{i phi} (r, -t)
    alice_e = (ta, ra)
    alice_l = (rotation * ra, -rotation * ta)
    # Bob: output 4 collects sqrt(1 - tau_B) of early and sqrt(tau_B) of late; output 3 the rest
    bob_e = (rb, tb)
    bob_l = (tb, -rb)

    # amplitudes over (n1, n2, n4, n3) output photon numbers, keyed by occupation tuples
    amplitudes: dict[tuple[int, int, int, int], complex] = {}
    for n in range(n_max + 1):
        for m in range(n_max + 1):
            weight = c_e[n] * c_l[m] / (math.factorial(n) * math.factorial(m))
            if weight == 0:
                continue
            a_e = _mode_substitution(alice_e, n)
            a_l = _mode_substitution(alice_l, m)
            b_e = _mode_substitution(bob_e, n)
            b_l = _mode_substitution(bob_l, m)
            for (x1, x2), ca in a_e.items():
                for (y1, y2), cb in a_l.items():
                    for (p4, p3), cc in b_e.items():
                        for (q4, q3), cd in b_l.items():
                            key = (x1 + y1, x2 + y2, p4 + q4, p3 + q3)
                            amplitudes[key] = amplitudes.get(key, 0) + weight * ca * cb * cc * cd

    p_total = 0.0
    p_a_empty = 0.0
    p_b_empty = 0.0
    p_both_empty = 0.0
    for (n1, n2, n4, n3), amplitude in amplitudes.items():
        norm = math.factorial(n1) * math.factorial(n2) * math.factorial(n4) * math.factorial(n3)
        p = abs(amplitude) ** 2 * norm
        p_total += p
        if n1 == 0:
            p_a_empty += p
        if n4 == 0:
            p_b_empty += p
        if n1 == 0 and n4 == 0:
            p_both_empty += p
    probability = p_total - p_a_empty - p_b_empty + p_both_empty
    truncated = truncation_loss > TRUNCATION_TOLERANCE
    if truncated:
        logger.warning("Fock truncation at n_max={} drops {:.2e} of the state weight".format(n_max, truncation_loss))
    return FockResult(probability, truncation_loss, truncated)


def fock_visibility(mu_E, mu_L, n_max=4):
    high = fock_coincidence_oracle(mu_E, mu_L, BALANCED_TAU, BALANCED_TAU, 0.0, n_max).probability
    low = fock_coincidence_oracle(mu_E, mu_L, BALANCED_TAU, BALANCED_TAU, math.pi, n_max).probability
    return (high - low) / (high + low)


def heralded_g2(S_i, eta_i, R=REPETITION_RATE_HZ, mu=None, mu_mapping=None):
    """Heralded autocorrelation 2(2 - eta_i) S_i / (R eta_i).

    ``mu`` (or ``mu_mapping(S_i, eta_i, R)``) turns the result into a slope g2/mu.
    """
    if eta_i <= 0:
        raise DegenerateError("idler efficiency must be positive")
    if not 0 < eta_i <= 1:
        raise DomainError("idler efficiency {} outside (0, 1]".format(eta_i))
    g2 = 2 * (2 - eta_i) * S_i / (R * eta_i)
    if mu is None and mu_mapping is not None:
        mu = mu_mapping(S_i, eta_i, R)
    slope = g2 / mu if mu else None
    return G2Result(g2, slope)


def binary_entropy(p):
    if not 0 <= p <= 1:
        raise DomainError("probability {} outside [0, 1]".format(p))
    if p in (0, 1):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def secret_key_rate(C_AB, visibility, q=BASIS_RECONCILIATION_Q, f_ec=ERROR_CORRECTION_F):
    if not 0 <= visibility <= 1:
        raise DomainError("visibility {} outside [0, 1]".format(visibility))
    error = (1 - visibility) / 2
    h = binary_entropy(error)
    return max(0.0, q * C_AB * (1 - f_ec * h - h))


def full_wavefunction_scaling(C_measured, ratios: PortRatios, mode="all_ports"):
    if C_measured < 0:
        raise DomainError("rate must be nonnegative")
    if mode == "all_ports":
        return C_measured * (1 + ratios.R_A + ratios.R_B + ratios.R_A * ratios.R_B)
    if mode == "two_branches_from_min":
        return C_measured * (4.0 / 3.0) * (1 + ratios.R_A * ratios.R_B)
    raise ConfigurationError("unknown scaling mode {!r}".format(mode))


def detector_efficiency(rate, sat: SaturationSpec):
    if rate < 0:
        raise DomainError("count rate must be nonnegative")
    return sat.nominal_efficiency_eta0 / (1 + rate / sat.rate_3db)


def saturated_rate(incident_rate, sat: SaturationSpec):
    return incident_rate * detector_efficiency(incident_rate, sat)


@dataclass(frozen=True)
class QualityLaw:
    """Entanglement quality per coincidence at mu0 and its slope dE/dmu."""

    E_N: float
    E_I: float
    E_S: float
    slope_N: float
    slope_I: float
    slope_S: float

    def at(self, mu, mu0):
        shift = np.asarray(mu) - mu0
        return (
            np.clip(self.E_N + self.slope_N * shift, 0, None),
            np.clip(self.E_I + self.slope_I * shift, 0, None),
            np.clip(self.E_S + self.slope_S * shift, 0, None),
        )


def quality_from_metrics(baseline: RateMetrics, slopes):
    """Per-coincidence qualities at the baseline with slopes (dE_N, dE_I, dE_S) per unit mu."""
    if baseline.C_AB <= 0:
        raise DegenerateError("baseline coincidence rate must be positive")
    slope_N, slope_I, slope_S = slopes
    return QualityLaw(
        baseline.C_N / baseline.C_AB,
        baseline.C_I / baseline.C_AB,
        baseline.SKR / baseline.C_AB,
        slope_N,
        slope_I,
        slope_S,
    )


def fit_quality_slopes(mu_values, qualities):
    """Least-squares linear slopes dE/dmu for each quality series."""
    mu_values = np.asarray(mu_values, dtype=float)
    return tuple(float(np.polyfit(mu_values, np.asarray(series, dtype=float), 1)[0]) for series in qualities)


def extrapolate_metrics(
    baseline: RateMetrics,
    quality_slopes,
    sat_A: Optional[SaturationSpec],
    channel_count=1,
    mu_range=(1e-5, 0.05),
    points=2000,
    singles_A=None,
    singles_B=None,
    sat_B: Optional[SaturationSpec] = None,
):
    """Scale the baseline metrics to other mu under detector saturation.

    Singles (incident count rates ``singles_A``/``singles_B`` at the baseline) grow in proportion to mu,
    each arm's efficiency drops by the saturation law and the coincidence rate follows the product
    of both penalties. Qualities follow the linear law and clamp at zero.
    """
    mu0 = baseline.mu
    low, high = mu_range
    if points < 2 or high <= low:
        raise ConfigurationError("empty extrapolation range")
    if not low <= mu0 <= high:
        raise ConfigurationError("baseline mu {} outside range [{}, {}]".format(mu0, low, high))
    quality = quality_from_metrics(baseline, quality_slopes)
    mu = np.linspace(low, high, int(points))

    def penalty(sat, singles0):
        if sat is None or not singles0:
            return np.ones_like(mu)
        return (1 + singles0 / sat.rate_3db) / (1 + singles0 * mu / mu0 / sat.rate_3db)

    sat_B = sat_B or sat_A
    c_ab = baseline.C_AB * mu / mu0 * penalty(sat_A, singles_A) * penalty(sat_B, singles_B)
    e_n, e_i, e_s = quality.at(mu, mu0)
    curves = {
        "C_AB": c_ab * channel_count,
        "C_N": c_ab * e_n * channel_count,
        "C_I": c_ab * e_i * channel_count,
        "SKR": c_ab * e_s * channel_count,
    }
    argmax = {name: float(mu[int(np.argmax(values))]) for name, values in curves.items()}
    return Extrapolation(mu, curves, argmax, channel_count)
