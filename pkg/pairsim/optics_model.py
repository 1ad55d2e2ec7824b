"""Spectral model of the pair source.

Joint spectral intensity of collinear type-0 SPDC in a periodically poled MgO:LiNbO3 waveguide,
super-Gaussian DWDM passbands, the rate integrals built on them, Schmidt analysis of the
filtered JSI and a Nelder-Mead fit of the model to measured singles/coincidence matrices.

Wavelengths are vacuum wavelengths in nm, frequencies are ordinary frequencies in Hz.
"""

import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from cachetools import LRUCache, cached
from scipy import integrate, linalg, optimize

from pairsim import (
    CRYSTAL_LENGTH_M,
    FILTER_FWHM_HZ,
    FILTER_ORDER,
    ITU_SPACING_HZ,
    POLING_PERIOD_M,
    PUMP_FWHM_HZ,
    PUMP_WAVELENGTH_NM,
    REPETITION_RATE_HZ,
    SPEED_OF_LIGHT,
)
from pairsim.errors import ConfigurationError, CoverageError, DegenerateError, DomainError, FormatError

logger = logging.getLogger(__name__)

MIN_RESOLUTION = 64
DEFAULT_RESOLUTION = 512
ITU_ANCHOR_HZ = 190.0e12
TEMPERATURE_RANGE_C = (0.0, 300.0)
SELLMEIER_VALID_UM = (0.3, 5.0)

# 5 mol% MgO-doped congruent LiNbO3, extraordinary ray: a1..a6 then b1..b4
MGO_CLN_5PCT_EXTRAORDINARY = (5.756, 0.0983, 0.202, 189.32, 12.52, 1.32e-2, 2.86e-6, 4.7e-8, 6.113e-8, 1.516e-4)

# degenerate zero of the phase mismatch for the default crystal and pump (doping proxy)
PHASE_MATCHED_PROXY_C = 225.93


@dataclass(frozen=True)
class CrystalSpec:
    length_L: float = CRYSTAL_LENGTH_M
    poling_period_Lambda: float = POLING_PERIOD_M
    temperature_T: float = PHASE_MATCHED_PROXY_C
    sellmeier_coefficients: tuple[float, ...] = MGO_CLN_5PCT_EXTRAORDINARY

    def __post_init__(self):
        if self.length_L <= 0:
            raise ConfigurationError("crystal length must be positive, got {}".format(self.length_L))
        if self.poling_period_Lambda <= 0:
            raise ConfigurationError("poling period must be positive, got {}".format(self.poling_period_Lambda))
        low, high = TEMPERATURE_RANGE_C
        if not low <= self.temperature_T <= high:
            raise ConfigurationError("crystal temperature {} °C outside [{}, {}]".format(self.temperature_T, low, high))
        if len(self.sellmeier_coefficients) != 10:
            raise ConfigurationError("expected 10 Sellmeier coefficients (a1..a6, b1..b4)")


@dataclass(frozen=True)
class PumpSpec:
    center_wavelength_lambda_p: float = PUMP_WAVELENGTH_NM
    bandwidth_sigma_p: float = PUMP_FWHM_HZ / (2 * np.sqrt(np.log(2)))

    def __post_init__(self):
        if not 700 < self.center_wavelength_lambda_p < 800:
            raise ConfigurationError("pump wavelength {} nm outside (700, 800)".format(self.center_wavelength_lambda_p))
        if self.bandwidth_sigma_p <= 0:
            raise ConfigurationError("pump bandwidth must be positive")

    @classmethod
    def from_fwhm(cls, center_wavelength_nm=PUMP_WAVELENGTH_NM, fwhm_hz=PUMP_FWHM_HZ):
        return cls(center_wavelength_nm, fwhm_hz / (2 * np.sqrt(np.log(2))))

    @property
    def fwhm_hz(self):
        return self.bandwidth_sigma_p * 2 * np.sqrt(np.log(2))

    @property
    def center_frequency(self):
        return nm_to_hz(self.center_wavelength_lambda_p)


@dataclass(frozen=True)
class FilterSpec:
    itu_channel: int
    center_frequency: float
    fwhm: float = FILTER_FWHM_HZ
    supergauss_order_m: int = FILTER_ORDER
    peak_transmission_eta: float = 1.0
    measured_curve: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if not 0 <= self.peak_transmission_eta <= 1:
            raise ConfigurationError("peak transmission {} outside [0, 1]".format(self.peak_transmission_eta))
        if self.fwhm <= 0:
            raise ConfigurationError("filter FWHM must be positive")
        if self.supergauss_order_m < 1:
            raise ConfigurationError("super-Gaussian order must be a positive integer")
        if self.measured_curve is not None:
            values = [t for _, t in self.measured_curve]
            if any(t < 0 or t > 1 for t in values):
                raise ConfigurationError("measured transmission values must lie in [0, 1]")
            frequencies = [f for f, _ in self.measured_curve]
            if any(b <= a for a, b in zip(frequencies, frequencies[1:])):
                raise ConfigurationError("measured curve frequencies must be strictly increasing")

    @property
    def passband(self):
        """Frequency interval the filter is considered to occupy."""
        if self.measured_curve is not None:
            nonzero = [f for f, t in self.measured_curve if t > 0]
            if nonzero:
                return min(nonzero), max(nonzero)
        return self.center_frequency - self.fwhm, self.center_frequency + self.fwhm

    def with_eta(self, eta):
        return replace(self, peak_transmission_eta=float(eta))

    def with_fwhm(self, fwhm):
        return replace(self, fwhm=float(fwhm))


@dataclass(frozen=True, eq=False)
class JsiGrid:
    signal_wavelengths: np.ndarray
    idler_wavelengths: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.signal_wavelengths, dtype=float)
        i = np.asarray(self.idler_wavelengths, dtype=float)
        m = np.asarray(self.intensity, dtype=float)
        if s.ndim != 1 or i.ndim != 1 or m.shape != (s.size, i.size):
            raise ConfigurationError("intensity shape {} does not match axes ({}, {})".format(m.shape, s.size, i.size))
        if np.any(np.diff(s) <= 0) or np.any(np.diff(i) <= 0):
            raise ConfigurationError("grid axes must be strictly increasing")
        if np.any(m < 0):
            raise ConfigurationError("JSI intensity must be nonnegative")
        for name, value in (("signal_wavelengths", s), ("idler_wavelengths", i), ("intensity", m)):
            value = value.copy()
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def signal_frequencies(self):
        return nm_to_hz(self.signal_wavelengths)

    @property
    def idler_frequencies(self):
        return nm_to_hz(self.idler_wavelengths)

    def axis(self, arm):
        if arm == "signal":
            return self.signal_wavelengths
        if arm == "idler":
            return self.idler_wavelengths
        raise ConfigurationError("arm must be 'signal' or 'idler', got {!r}".format(arm))

    def total(self):
        return _integrate(self.intensity, self)


class SchmidtConvention(enum.Enum):
    # SVD of the square-root amplitude, coefficients are normalized squared singular values
    PHYSICAL = "physical"
    # SVD of the filtered intensity itself, coefficients are normalized singular values
    REPORTED = "reported"


@dataclass(frozen=True)
class SchmidtResult:
    coefficients_lambda_i: np.ndarray
    schmidt_number_K: float
    inverse_K: float
    convention: SchmidtConvention = SchmidtConvention.PHYSICAL


@dataclass(frozen=True)
class DeltaResult:
    delta_u: float
    delta_v: float

    @property
    def mean(self):
        return 0.5 * (self.delta_u + self.delta_v)


@dataclass
class FitParams:
    crystal_temperature: float = PHASE_MATCHED_PROXY_C
    pump_center: float = PUMP_WAVELENGTH_NM
    pump_sigma: float = PUMP_FWHM_HZ / (2 * np.sqrt(np.log(2)))
    path_efficiencies_eta: dict[int, float] = field(default_factory=dict)
    global_brightness: float = 1.0
    floating: frozenset[str] = frozenset()

    def __post_init__(self):
        for channel, eta in self.path_efficiencies_eta.items():
            if not 0 <= eta <= 1:
                raise ConfigurationError("efficiency of channel {} is {} (outside [0, 1])".format(channel, eta))
        unknown = set(self.floating) - set(self.parameter_names())
        if unknown:
            raise ConfigurationError("unknown floating parameters: {}".format(", ".join(sorted(unknown))))

    def parameter_names(self):
        names = ["crystal_temperature", "pump_center", "pump_sigma", "global_brightness"]
        return names + ["eta:{}".format(channel) for channel in sorted(self.path_efficiencies_eta)]

    def get(self, name):
        if name.startswith("eta:"):
            return self.path_efficiencies_eta[int(name[4:])]
        return getattr(self, name)

    def updated(self, values: Mapping[str, float]):
        etas = dict(self.path_efficiencies_eta)
        scalars = {}
        for name, value in values.items():
            if name.startswith("eta:"):
                etas[int(name[4:])] = float(value)
            else:
                scalars[name] = float(value)
        return replace(self, path_efficiencies_eta=etas, **scalars)

    def crystal(self, base: CrystalSpec):
        return replace(base, temperature_T=self.crystal_temperature)

    def pump(self):
        return PumpSpec(self.pump_center, self.pump_sigma)


@dataclass
class FitResult:
    params: FitParams
    residuals: dict
    converged: bool
    objective: float
    trace: list = field(default_factory=list)


def nm_to_hz(wavelength_nm):
    return SPEED_OF_LIGHT / (np.asarray(wavelength_nm, dtype=float) * 1e-9)


def hz_to_nm(frequency_hz):
    return SPEED_OF_LIGHT / np.asarray(frequency_hz, dtype=float) * 1e9


def itu_frequency(channel):
    """Center frequency of a 100 GHz ITU channel (channel 35 is 193.5 THz)."""
    return ITU_ANCHOR_HZ + channel * ITU_SPACING_HZ


def itu_channel_for(frequency_hz):
    return int(round((frequency_hz - ITU_ANCHOR_HZ) / ITU_SPACING_HZ))


def itu_filter(channel, fwhm=FILTER_FWHM_HZ, eta=1.0, order=FILTER_ORDER):
    return FilterSpec(channel, itu_frequency(channel), fwhm, order, eta)


def energy_matched_partner(filter_u: FilterSpec, pump: PumpSpec, eta=None):
    """Filter centered where energy conservation puts the partner of photons at filter_u's center."""
    partner_frequency = pump.center_frequency - filter_u.center_frequency
    return replace(
        filter_u,
        itu_channel=itu_channel_for(partner_frequency),
        center_frequency=partner_frequency,
        peak_transmission_eta=filter_u.peak_transmission_eta if eta is None else eta,
        measured_curve=None,
    )


def matched_filter_pair(offset_hz=ITU_SPACING_HZ / 2, fwhm=FILTER_FWHM_HZ, pump: Optional[PumpSpec] = None, order=FILTER_ORDER):
    """Signal/idler filters placed symmetrically about the degenerate frequency, energy matched to the pump."""
    pump = pump or PumpSpec()
    center = pump.center_frequency / 2 + offset_hz
    filter_u = FilterSpec(itu_channel_for(center), center, fwhm, order)
    return filter_u, energy_matched_partner(filter_u, pump)


def refractive_index(lambda_nm, crystal: CrystalSpec):
    lam = np.asarray(lambda_nm, dtype=float) / 1000.0
    low, high = SELLMEIER_VALID_UM
    if np.any(lam <= low) or np.any(lam >= high):
        raise DomainError("wavelength outside Sellmeier validity range ({}, {}) um".format(low, high))
    a1, a2, a3, a4, a5, a6, b1, b2, b3, b4 = crystal.sellmeier_coefficients
    t = crystal.temperature_T
    f = (t - 24.5) * (t + 24.5 + 2 * 273.16)
    lam2 = lam * lam
    n2 = a1 + b1 * f + (a2 + b2 * f) / (lam2 - (a3 + b3 * f) ** 2) + (a4 + b4 * f) / (lam2 - a5**2) - a6 * lam2
    return np.sqrt(n2)


def phase_mismatch(lambda_s, lambda_i, crystal: CrystalSpec):
    lambda_s = np.asarray(lambda_s, dtype=float)
    lambda_i = np.asarray(lambda_i, dtype=float)
    lambda_p = 1.0 / (1.0 / lambda_s + 1.0 / lambda_i)
    n_p = refractive_index(lambda_p, crystal)
    n_s = refractive_index(lambda_s, crystal)
    n_i = refractive_index(lambda_i, crystal)
    gamma = 1.0 / crystal.poling_period_Lambda
    return 2 * np.pi * (n_p / (lambda_p * 1e-9) - n_s / (lambda_s * 1e-9) - n_i / (lambda_i * 1e-9) - gamma)


def phase_matched_temperature(crystal: Optional[CrystalSpec] = None, pump: Optional[PumpSpec] = None, bracket=(150.0, 300.0)):
    """Proxy temperature at which the degenerate wave-vector mismatch vanishes."""
    crystal = crystal or CrystalSpec()
    pump = pump or PumpSpec()
    degenerate = 2 * pump.center_wavelength_lambda_p

    def mismatch(t):
        return float(phase_mismatch(degenerate, degenerate, replace(crystal, temperature_T=t)))

    try:
        return optimize.brentq(mismatch, *bracket, xtol=1e-6)
    except ValueError as e:
        raise DomainError("no phase-matching temperature in [{}, {}] °C".format(*bracket)) from e


def jsi_intensity(lambda_s, lambda_i, crystal: CrystalSpec, pump: PumpSpec, brightness=1.0):
    lambda_s = np.asarray(lambda_s, dtype=float)
    lambda_i = np.asarray(lambda_i, dtype=float)
    half_phase = phase_mismatch(lambda_s, lambda_i, crystal) * crystal.length_L / 2
    # np.sinc is sin(pi x)/(pi x)
    phase_matching = np.sinc(half_phase / np.pi) ** 2
    detuning = pump.center_frequency - nm_to_hz(lambda_s) - nm_to_hz(lambda_i)
    envelope = np.exp(-((detuning / pump.bandwidth_sigma_p) ** 2))
    return brightness * phase_matching * envelope


@cached(cache=LRUCache(maxsize=64))
def build_jsi_grid(crystal: CrystalSpec, pump: PumpSpec, s_range, i_range, resolution=DEFAULT_RESOLUTION, brightness=1.0):
    if resolution < MIN_RESOLUTION:
        raise ConfigurationError("grid resolution {} below minimum {}".format(resolution, MIN_RESOLUTION))
    s_axis = np.linspace(float(s_range[0]), float(s_range[1]), int(resolution))
    i_axis = np.linspace(float(i_range[0]), float(i_range[1]), int(resolution))
    intensity = jsi_intensity(s_axis[:, None], i_axis[None, :], crystal, pump, brightness)
    return JsiGrid(s_axis, i_axis, intensity)


def pair_window(filter_u: FilterSpec, filter_v: FilterSpec, pump: PumpSpec, wide=True):
    """Wavelength ranges (signal, idler) covering a filter pair.

    The wide window extends each axis by the pump bandwidth so single-filter integrals capture the
    whole partner distribution; the narrow one only covers the passbands (Schmidt analysis).
    """
    ranges = []
    for filt in (filter_u, filter_v):
        if wide:
            half = 1.5 * filt.fwhm + 2.0 * pump.fwhm_hz
        else:
            half = 1.6 * filt.fwhm
        low, high = filt.passband
        middle = (low + high) / 2
        half = max(half, 0.6 * (high - low))
        ranges.append((float(hz_to_nm(middle + half)), float(hz_to_nm(middle - half))))
    return ranges[0], ranges[1]


def filter_pair_grid(filter_u, filter_v, crystal=None, pump=None, resolution=DEFAULT_RESOLUTION, brightness=1.0, wide=True):
    crystal = crystal or CrystalSpec()
    pump = pump or PumpSpec()
    s_range, i_range = pair_window(filter_u, filter_v, pump, wide)
    return build_jsi_grid(crystal, pump, s_range, i_range, resolution, brightness)


def filter_transmission(f, filter: FilterSpec):
    f = np.asarray(f, dtype=float)
    if filter.measured_curve is not None:
        samples = np.asarray(filter.measured_curve, dtype=float)
        return np.interp(f, samples[:, 0], samples[:, 1], left=0.0, right=0.0)
    m = filter.supergauss_order_m
    width = (filter.fwhm / 2) / np.log(2) ** (1.0 / (2 * m))
    return filter.peak_transmission_eta * np.exp(-(np.abs((f - filter.center_frequency) / width) ** (2 * m)))


def unit_peak_transmission(f, filter: FilterSpec):
    """W: the transmission rescaled to unit peak."""
    if filter.measured_curve is not None:
        peak = max(t for _, t in filter.measured_curve)
        if peak <= 0:
            raise DegenerateError("measured curve of channel {} never transmits".format(filter.itu_channel))
        return filter_transmission(f, filter) / peak
    return filter_transmission(f, replace(filter, peak_transmission_eta=1.0))


def _integrate(values, grid: JsiGrid):
    inner = integrate.trapezoid(values, x=grid.idler_wavelengths, axis=1)
    return float(integrate.trapezoid(inner, x=grid.signal_wavelengths))


def _check_coverage(filter: FilterSpec, axis_nm):
    low, high = filter.passband
    f_low, f_high = float(nm_to_hz(axis_nm[-1])), float(nm_to_hz(axis_nm[0]))
    if low < f_low or high > f_high:
        raise CoverageError(
            "passband of channel {} ({:.6g}-{:.6g} Hz) clipped by grid ({:.6g}-{:.6g} Hz)".format(
                filter.itu_channel, low, high, f_low, f_high
            )
        )


def _arm_transmission(filter, grid, arm, unit_peak=False):
    axis = grid.axis(arm)
    _check_coverage(filter, axis)
    frequencies = nm_to_hz(axis)
    if unit_peak:
        return unit_peak_transmission(frequencies, filter)
    return filter_transmission(frequencies, filter)


def _weighted(grid, signal_weight=None, idler_weight=None):
    values = grid.intensity
    if signal_weight is not None:
        values = values * signal_weight[:, None]
    if idler_weight is not None:
        values = values * idler_weight[None, :]
    return values


def singles_integral(filter_u: FilterSpec, arm: str, grid: JsiGrid):
    weight = _arm_transmission(filter_u, grid, arm)
    if arm == "signal":
        return _integrate(_weighted(grid, signal_weight=weight), grid)
    return _integrate(_weighted(grid, idler_weight=weight), grid)


def coincidence_integral(filter_u: FilterSpec, filter_v: FilterSpec, grid: JsiGrid):
    t_u = _arm_transmission(filter_u, grid, "signal")
    t_v = _arm_transmission(filter_v, grid, "idler")
    return _integrate(_weighted(grid, t_u, t_v), grid)


def mu_integral(filter_u: FilterSpec, filter_v: FilterSpec, grid: JsiGrid, repetition_rate_R=REPETITION_RATE_HZ):
    w_u = _arm_transmission(filter_u, grid, "signal", unit_peak=True)
    w_v = _arm_transmission(filter_v, grid, "idler", unit_peak=True)
    return _integrate(_weighted(grid, w_u, w_v), grid) / repetition_rate_R


def delta_model(filter_u: FilterSpec, filter_v: FilterSpec, grid: JsiGrid):
    w_u = _arm_transmission(filter_u, grid, "signal", unit_peak=True)
    w_v = _arm_transmission(filter_v, grid, "idler", unit_peak=True)
    both = _integrate(_weighted(grid, w_u, w_v), grid)
    only_v = _integrate(_weighted(grid, idler_weight=w_v), grid)
    only_u = _integrate(_weighted(grid, signal_weight=w_u), grid)
    if only_u <= 0 or only_v <= 0:
        raise DegenerateError("filter pair ({}, {}) captures no JSI flux".format(filter_u.itu_channel, filter_v.itu_channel))
    return DeltaResult(delta_u=both / only_v, delta_v=both / only_u)


def heralding_efficiency(filter_u: FilterSpec, filter_v: FilterSpec, grid: JsiGrid):
    """Coincidence-to-singles ratio on each arm (signal heralded by idler, idler heralded by signal)."""
    c = coincidence_integral(filter_u, filter_v, grid)
    s_u = singles_integral(filter_u, "signal", grid)
    s_v = singles_integral(filter_v, "idler", grid)
    if s_u <= 0 or s_v <= 0:
        raise DegenerateError("zero singles in heralding ratio")
    return c / s_v, c / s_u


def filtered_jsi(filter_u: FilterSpec, filter_v: FilterSpec, grid: JsiGrid):
    t_u = _arm_transmission(filter_u, grid, "signal")
    t_v = _arm_transmission(filter_v, grid, "idler")
    return _weighted(grid, t_u, t_v)


def schmidt_from_matrix(matrix, convention=SchmidtConvention.PHYSICAL, is_amplitude=False):
    """Schmidt coefficients of a discretized two-party spectral function.

    With the physical convention ``matrix`` is an intensity (square-rooted here) unless
    ``is_amplitude`` is set; the reported convention decomposes the intensity directly.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not np.any(matrix):
        raise DegenerateError("filtered grid is zero everywhere")
    if convention is SchmidtConvention.PHYSICAL:
        amplitude = matrix if is_amplitude else np.sqrt(matrix)
        singular = linalg.svdvals(amplitude)
        weights = singular**2
    else:
        intensity = matrix**2 if is_amplitude else matrix
        weights = linalg.svdvals(intensity)
    coefficients = weights / weights.sum()
    inverse_k = float(np.sum(coefficients**2))
    return SchmidtResult(coefficients, 1.0 / inverse_k, inverse_k, convention)


def schmidt_decompose(filter_u: FilterSpec, filter_v: FilterSpec, grid: JsiGrid, convention=SchmidtConvention.PHYSICAL):
    return schmidt_from_matrix(filtered_jsi(filter_u, filter_v, grid), convention)


def rate_model(filters_s: Sequence[FilterSpec], filters_i: Sequence[FilterSpec], grid: JsiGrid, pairs=None):
    """Singles per channel and coincidences per (signal, idler) channel pair."""
    singles = {}
    for filt in filters_s:
        singles[filt.itu_channel] = singles_integral(filt, "signal", grid)
    for filt in filters_i:
        singles[filt.itu_channel] = singles_integral(filt, "idler", grid)
    by_channel_i = {filt.itu_channel: filt for filt in filters_i}
    coincidences = {}
    for filt_s in filters_s:
        for filt_i in filters_i:
            key = (filt_s.itu_channel, filt_i.itu_channel)
            if pairs is None or key in pairs:
                coincidences[key] = coincidence_integral(filt_s, by_channel_i[filt_i.itu_channel], grid)
    return singles, coincidences


def plan_grid(filters: Iterable[FilterSpec], crystal: CrystalSpec, pump: PumpSpec, resolution=DEFAULT_RESOLUTION, brightness=1.0):
    """One grid covering every signal and idler filter of a channel plan, split at the degenerate frequency."""
    degenerate = pump.center_frequency / 2
    margin = 2.0 * pump.fwhm_hz
    filters = list(filters)
    upper = [f for f in filters if f.center_frequency >= degenerate]
    lower = [f for f in filters if f.center_frequency < degenerate]
    if not upper or not lower:
        raise ConfigurationError("channel plan needs filters on both sides of the degenerate frequency")

    def span(group):
        low = min(f.passband[0] for f in group) - 1.5 * max(f.fwhm for f in group)
        high = max(f.passband[1] for f in group) + 1.5 * max(f.fwhm for f in group)
        return low, high

    s_low, s_high = span(upper)
    i_low, i_high = span(lower)
    # each arm must also see every partner of the other arm's passbands
    s_low = min(s_low, pump.center_frequency - i_high - margin)
    s_high = max(s_high, pump.center_frequency - i_low + margin)
    i_low = min(i_low, pump.center_frequency - s_high - margin)
    i_high = max(i_high, pump.center_frequency - s_low + margin)
    s_range = (float(hz_to_nm(s_high)), float(hz_to_nm(s_low)))
    i_range = (float(hz_to_nm(i_high)), float(hz_to_nm(i_low)))
    return build_jsi_grid(crystal, pump, s_range, i_range, resolution, brightness)


def fit_jsi(
    measured_singles: Mapping[int, float],
    measured_coincidences: Mapping[tuple[int, int], float],
    initial: FitParams,
    fixed_spec: CrystalSpec,
    filters_s: Sequence[FilterSpec],
    filters_i: Sequence[FilterSpec],
    resolution=128,
    max_iterations=5000,
    tolerance=1e-8,
    starts=3,
    seed=0,
):
    """Fit temperature, pump, path efficiencies and brightness to measured singles and coincidences.

    The objective is the sum of squared relative errors over every measured point. Efficiencies
    scale unit-peak filter shapes, so the filter specs only provide center, width and order.
    """
    floating = [name for name in initial.parameter_names() if name in initial.floating]
    n_points = len(measured_singles) + len(measured_coincidences)
    if floating and n_points < len(floating):
        raise ConfigurationError("{} data points cannot constrain {} floating parameters".format(n_points, len(floating)))

    shapes_s = [f.with_eta(1.0) for f in filters_s]
    shapes_i = [f.with_eta(1.0) for f in filters_i]
    arm_of = {f.itu_channel: "signal" for f in shapes_s}
    arm_of.update({f.itu_channel: "idler" for f in shapes_i})
    for channel in measured_singles:
        if channel not in arm_of:
            raise ConfigurationError("singles given for unknown channel {}".format(channel))
    pairs = set(measured_coincidences)
    for u, v in pairs:
        if arm_of.get(u) != "signal" or arm_of.get(v) != "idler":
            raise ConfigurationError("coincidence key ({}, {}) is not a (signal, idler) channel pair".format(u, v))

    # filter shapes do not depend on the fitted source parameters; one grid window serves all evaluations
    grid0 = plan_grid(shapes_s + shapes_i, fixed_spec, initial.pump(), resolution)
    s_axis, i_axis = grid0.signal_wavelengths, grid0.idler_wavelengths
    w_s = {f.itu_channel: _arm_transmission(f, grid0, "signal", unit_peak=True) for f in shapes_s}
    w_i = {f.itu_channel: _arm_transmission(f, grid0, "idler", unit_peak=True) for f in shapes_i}

    def model(params: FitParams):
        crystal = params.crystal(fixed_spec)
        intensity = jsi_intensity(s_axis[:, None], i_axis[None, :], crystal, params.pump(), params.global_brightness)
        grid = JsiGrid(s_axis, i_axis, intensity)
        singles = {}
        for channel in measured_singles:
            eta = params.path_efficiencies_eta.get(channel, 1.0)
            if arm_of[channel] == "signal":
                singles[channel] = eta * _integrate(_weighted(grid, signal_weight=w_s[channel]), grid)
            else:
                singles[channel] = eta * _integrate(_weighted(grid, idler_weight=w_i[channel]), grid)
        coincidences = {}
        for u, v in pairs:
            eta = params.path_efficiencies_eta.get(u, 1.0) * params.path_efficiencies_eta.get(v, 1.0)
            coincidences[(u, v)] = eta * _integrate(_weighted(grid, w_s[u], w_i[v]), grid)
        return singles, coincidences

    def residuals(params: FitParams):
        singles, coincidences = model(params)
        out = {}
        for channel, value in measured_singles.items():
            out[("S", channel)] = (singles[channel] - value) / value
        for key, value in measured_coincidences.items():
            out[("C",) + tuple(key)] = (coincidences[key] - value) / value
        return out

    if not floating:
        res = residuals(initial)
        return FitResult(initial, res, True, float(sum(r * r for r in res.values())), [])

    scale = np.array([initial.get(name) or 1.0 for name in floating], dtype=float)

    def unpack(x):
        return initial.updated({name: value for name, value in zip(floating, x * scale)})

    def objective(x):
        values = x * scale
        for name, value in zip(floating, values):
            if name.startswith("eta:") and not 0 <= value <= 1:
                return 1e12
            if name == "crystal_temperature" and not TEMPERATURE_RANGE_C[0] <= value <= TEMPERATURE_RANGE_C[1]:
                return 1e12
            if name in ("pump_sigma", "global_brightness") and value <= 0:
                return 1e12
            if name == "pump_center" and not 700 < value < 800:
                return 1e12
        res = residuals(unpack(x))
        return float(sum(r * r for r in res.values()))

    rng = np.random.default_rng(seed)
    best = None
    for start in range(starts):
        x0 = np.ones(len(floating))
        if start:
            x0 = x0 * (1 + 0.05 * rng.standard_normal(len(floating)))
        trace: list[float] = []
        result = optimize.minimize(
            objective,
            x0,
            method="Nelder-Mead",
            callback=lambda xk: trace.append(objective(xk)),
            options={"maxiter": max_iterations, "xatol": tolerance, "fatol": tolerance},
        )
        logger.debug("fit start {} objective {:.3e} after {} iterations".format(start, result.fun, result.nit))
        if best is None or result.fun < best[0].fun:
            best = (result, trace)

    assert best is not None
    result, trace = best
    if not result.success:
        logger.warning("JSI fit did not converge: {}".format(result.message))
    params = unpack(result.x)
    return FitResult(params, residuals(params), bool(result.success), float(result.fun), trace)


def write_jsi_csv(grid: JsiGrid, path, comment=None):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if comment:
            handle.write("# {}\n".format(comment))
        writer = csv.writer(handle)
        writer.writerow(["signal_nm\\idler_nm"] + [repr(float(x)) for x in grid.idler_wavelengths])
        for wavelength, row in zip(grid.signal_wavelengths, grid.intensity):
            writer.writerow([repr(float(wavelength))] + [repr(float(x)) for x in row])


def read_jsi_csv(path):
    rows = _read_csv_rows(path)
    try:
        idler = [float(x) for x in rows[0][1:]]
        signal = [float(row[0]) for row in rows[1:]]
        intensity = [[float(x) for x in row[1:]] for row in rows[1:]]
    except (ValueError, IndexError) as e:
        raise FormatError("malformed JSI grid file {}: {}".format(path, e))
    return JsiGrid(np.array(signal), np.array(idler), np.array(intensity))


def read_rate_matrix_csv(path):
    """Coincidence matrix: header row of idler channels, first column of signal channels, Hz body."""
    rows = _read_csv_rows(path)
    try:
        idler_channels = [int(x) for x in rows[0][1:]]
        matrix = {}
        for row in rows[1:]:
            for channel_i, value in zip(idler_channels, row[1:]):
                if value.strip():
                    matrix[(int(row[0]), channel_i)] = float(value)
    except (ValueError, IndexError) as e:
        raise FormatError("malformed rate matrix {}: {}".format(path, e))
    return matrix


def write_rate_matrix_csv(matrix: Mapping[tuple[int, int], float], path, comment=None):
    signal_channels = sorted({u for u, _ in matrix})
    idler_channels = sorted({v for _, v in matrix})
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if comment:
            handle.write("# {}\n".format(comment))
        writer = csv.writer(handle)
        writer.writerow(["signal\\idler"] + idler_channels)
        for u in signal_channels:
            writer.writerow([u] + [repr(matrix[(u, v)]) if (u, v) in matrix else "" for v in idler_channels])


def read_singles_csv(path):
    rows = _read_csv_rows(path)
    try:
        return {int(row[0]): float(row[1]) for row in rows[1:]}
    except (ValueError, IndexError) as e:
        raise FormatError("malformed singles file {}: {}".format(path, e))


def write_singles_csv(singles: Mapping[int, float], path, comment=None):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if comment:
            handle.write("# {}\n".format(comment))
        writer = csv.writer(handle)
        writer.writerow(["channel", "rate_hz"])
        for channel in sorted(singles):
            writer.writerow([channel, repr(singles[channel])])


def read_filter_curve_csv(path):
    rows = _read_csv_rows(path, header=False)
    try:
        samples = tuple((float(row[0]), float(row[1])) for row in rows if not _is_header(row))
    except (ValueError, IndexError) as e:
        raise FormatError("malformed filter curve {}: {}".format(path, e))
    return samples


def _is_header(row):
    try:
        float(row[0])
        return False
    except ValueError:
        return True


def _read_csv_rows(path, header=True):
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [row for row in csv.reader(line for line in handle if not line.startswith("#")) if row]
    if header and len(rows) < 2:
        raise FormatError("{} has no data rows".format(path))
    return rows
