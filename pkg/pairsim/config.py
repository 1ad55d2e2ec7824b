"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment line. Every key is declared in ``KEYS`` with its type and
default; unknown and repeated keys are rejected with the offending line number.
"""

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional

from pairsim import __version__
from pairsim.errors import ConfigurationError


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: {!r}".format(text))


def _int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError("not an integer: {!r}".format(text))
    return int(value)


def _floats(text):
    values = [float(x) for x in text.replace(",", " ").split()]
    if not values:
        raise ValueError("empty list")
    return tuple(values)


def _str(text):
    return text.strip()


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


KEYS: dict[str, Key] = {
    # run
    "seed": Key(_int, 0, "64-bit seed all randomness derives from"),
    "output_dir": Key(_str, "pairsim-out", "directory for CSVs, summary and MANIFEST"),
    "mu_values": Key(_floats, (5.6e-5, 5e-3), "mean pair numbers per cycle to sweep"),
    "duration": Key(float, 0.1, "simulated seconds per phase setting"),
    "tomography": Key(_bool, True, "reconstruct the density matrix at every point"),
    "extrapolation_channels": Key(_int, 8, "channel pairs multiplexed in the extrapolated totals"),
    "extrapolation_mu_max": Key(float, 0.05, "upper end of the extrapolated mu range"),
    # source scenario
    "repetition_rate": Key(float, 4.09e9, "clock rate R in Hz"),
    "delta": Key(float, 0.393, "geometric factor"),
    "eta_A": Key(float, 0.2, "Alice heralding efficiency"),
    "eta_B": Key(float, 0.2, "Bob heralding efficiency"),
    "source_ratio": Key(float, 1.13, "early/late intensity ratio of the source interferometer"),
    "alice_ratio": Key(float, 1.24, "short/long intensity ratio of Alice's interferometer"),
    "bob_ratio": Key(float, 1.15, "short/long intensity ratio of Bob's interferometer"),
    "phase_visibility": Key(float, 1.0, "coherence of the middle-bin interference"),
    # detectors
    "jitter_fwhm_ps": Key(float, 13.0, "Gaussian timing jitter FWHM"),
    "dead_time_ps": Key(float, 0.0, "hard detector dead time"),
    "walk_amplitude_ps": Key(float, 0.0, "time-walk amplitude d(0)"),
    "walk_tau_ps": Key(float, 50e3, "time-walk decay constant"),
    "saturation": Key(_bool, False, "apply count-rate dependent efficiency"),
    "rate_3db_A": Key(float, 15.1e6, "Alice detector 3 dB count rate"),
    "rate_3db_B": Key(float, 16.0e6, "Bob detector 3 dB count rate"),
    "twc": Key(_bool, False, "calibrate and correct time walk in situ"),
    "twc_min_row_counts": Key(_int, 1000, "minimum counts for a standalone t' row"),
    # coincidence counting
    "window_ps": Key(float, 100.0, "coincidence window"),
    "guard_width_ps": Key(float, 10.0, "width of each guard region"),
    # spectral model
    "crystal_length_m": Key(float, 0.01, "waveguide length L"),
    "poling_period_m": Key(float, 18.3e-6, "poling period"),
    "crystal_temperature_c": Key(float, math.nan, "proxy temperature, NaN for the phase-matched value"),
    "pump_wavelength_nm": Key(float, 769.78, "pump center wavelength"),
    "pump_fwhm_hz": Key(float, 243e9, "pump spectral FWHM"),
    "filter_fwhm_hz": Key(float, 82e9, "DWDM filter FWHM"),
    "filter_order": Key(_int, 3, "super-Gaussian order"),
    "filter_offset_hz": Key(float, 50e9, "signal filter offset above the degenerate frequency"),
    "jsi_resolution": Key(_int, 256, "JSI grid points per axis"),
}

REQUIRED = {
    "run": ("seed", "mu_values", "duration", "output_dir"),
    "simulate": ("seed", "duration"),
}


def render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def canonical_text(values: Mapping[str, Any]):
    return "".join("{} = {}\n".format(key, render(values[key])) for key in sorted(values))


def config_hash(values: Mapping[str, Any]):
    return hashlib.sha256(canonical_text(values).encode("utf-8")).hexdigest()


def provenance_comment(values: Mapping[str, Any], seed):
    return "pairsim {} config_hash={} seed={}".format(__version__, config_hash(values), seed)


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    explicit: frozenset[str] = frozenset()
    source: str = "<defaults>"

    @classmethod
    def parse(cls, text: str, source="<string>"):
        values = {name: key.default for name, key in KEYS.items()}
        seen: dict[str, int] = {}
        for number, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            name, sep, raw = stripped.partition("=")
            name = name.strip()
            if not sep or not name:
                raise ConfigurationError("{}:{}: expected 'key = value'".format(source, number))
            if name not in KEYS:
                raise ConfigurationError("{}:{}: unknown key {!r}".format(source, number, name))
            if name in seen:
                raise ConfigurationError("{}:{}: key {!r} already set on line {}".format(source, number, name, seen[name]))
            try:
                values[name] = KEYS[name].parse(raw.strip())
            except ValueError as e:
                raise ConfigurationError("{}:{}: bad value for {!r}: {}".format(source, number, name, e))
            seen[name] = number
        return cls(values, frozenset(seen), source)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as handle:
                text = handle.read()
        except OSError as e:
            raise ConfigurationError("cannot read config {}: {}".format(path, e))
        return cls.parse(text, source=str(path))

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping[str, Any]] = None):
        values = {name: key.default for name, key in KEYS.items()}
        unknown = set(mapping or {}) - set(KEYS)
        if unknown:
            raise ConfigurationError("unknown key(s): {}".format(", ".join(sorted(unknown))))
        values.update(mapping or {})
        return cls(values, frozenset(mapping or {}), "<mapping>")

    def require(self, keys: Iterable[str]):
        missing = [key for key in keys if key not in self.explicit]
        if missing:
            raise ConfigurationError("{}: missing required key(s): {}".format(self.source, ", ".join(missing)))
        return self

    def require_for(self, command):
        return self.require(REQUIRED.get(command, ()))

    def __getitem__(self, name):
        return self.values[name]

    def get(self, name, default=None):
        return self.values.get(name, default)

    def canonical(self):
        return canonical_text(self.values)

    def config_hash(self):
        return config_hash(self.values)

    def provenance(self):
        return provenance_comment(self.values, self.values["seed"])
