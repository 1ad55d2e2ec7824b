"""Seeded synthetic time-tag streams for the two stations.

Each station monitors one output of its delay interferometer with one detector. A stream is a
numpy structured array of ``TAG_DTYPE`` records sorted by time; its packed layout is the on-disk
record layout of the binary format.
"""

import csv
import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from pairsim import BIN_CENTERS_PS, REPETITION_RATE_HZ
from pairsim.errors import ConfigurationError, DomainError, FormatError
from pairsim.rate_theory import (
    InterferometerSpec,
    SaturationSpec,
    detector_efficiency,
    source_port_powers,
)

logger = logging.getLogger(__name__)

TAG_DTYPE = np.dtype([("channel", "<u1"), ("time_ps", "<u8")])
MAGIC = b"PAIRTTG1"
HEADER_SIZE = len(MAGIC) + 8
CSV_HEADER = ("channel", "time_ps")

CHANNEL_ALICE = 1
CHANNEL_BOB = 2

MAX_MU = 0.5
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
WALK_ITERATIONS = 3

# 16 pair outcomes: 9 (a_bin, b_bin) cells, 3 Alice-only, 3 Bob-only, neither in the monitored ports
OUTCOME_A = np.array([i // 3 for i in range(9)] + [0, 1, 2] + [-1, -1, -1] + [-1])
OUTCOME_B = np.array([i % 3 for i in range(9)] + [-1, -1, -1] + [0, 1, 2] + [-1])


def spawn_rng(seed, label):
    """Independent generator for one named stage of a run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(label.encode("utf-8")),)))


@dataclass(frozen=True)
class SourceScenario:
    mu_per_cycle: float
    delta: float = 0.393
    eta_A: float = 0.2
    eta_B: float = 0.2
    source_ifo: InterferometerSpec = field(default_factory=InterferometerSpec)
    alice_ifo: InterferometerSpec = field(default_factory=InterferometerSpec)
    bob_ifo: InterferometerSpec = field(default_factory=InterferometerSpec)
    phase_visibility_v: float = 1.0
    duration: float = 0.1
    seed: int = 0
    repetition_rate_R: float = REPETITION_RATE_HZ

    def __post_init__(self):
        if not 0 <= self.mu_per_cycle <= MAX_MU:
            raise DomainError("mu {} outside [0, {}], the per-cycle pair model breaks down".format(self.mu_per_cycle, MAX_MU))
        if not 0 < self.delta <= 1:
            raise ConfigurationError("delta {} outside (0, 1]".format(self.delta))
        for name in ("eta_A", "eta_B", "phase_visibility_v"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigurationError("{} = {} outside [0, 1]".format(name, value))
        if self.duration <= 0:
            raise ConfigurationError("duration must be positive")
        if self.repetition_rate_R <= 0:
            raise ConfigurationError("repetition rate must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")

    @property
    def theta(self):
        """Total phase of the middle-bin interference."""
        return self.source_ifo.phase_phi + self.alice_ifo.phase_phi + self.bob_ifo.phase_phi

    @property
    def period_ps(self):
        return 1e12 / self.repetition_rate_R

    @property
    def cycles(self):
        return int(round(self.duration * self.repetition_rate_R))

    def with_theta(self, theta):
        """Same scenario with the source phase adjusted so the total phase equals ``theta``."""
        phi = theta - self.alice_ifo.phase_phi - self.bob_ifo.phase_phi
        return replace(self, source_ifo=replace(self.source_ifo, phase_phi=phi))

    def with_mu(self, mu):
        return replace(self, mu_per_cycle=mu)

    def expected_singles(self, arm):
        """Mean monitored-port count rate of one arm before saturation and dead time."""
        eta = self.eta_A if arm == "A" else self.eta_B
        return self.repetition_rate_R * self.mu_per_cycle * eta * 0.5


def scenario_with_imbalances(mu, source_ratio=1.13, alice_ratio=1.24, bob_ratio=1.15, theta=0.0, **kwargs):
    """Scenario whose interferometers reproduce measured early/late and short/long intensity ratios."""
    return SourceScenario(
        mu_per_cycle=mu,
        source_ifo=InterferometerSpec.from_imbalance(source_ratio, phase_phi=theta),
        alice_ifo=InterferometerSpec.from_imbalance(alice_ratio),
        bob_ifo=InterferometerSpec.from_imbalance(bob_ratio),
        **kwargs,
    )


@dataclass(frozen=True)
class DetectorModel:
    jitter_fwhm: float = 13.0
    walk_curve: Optional[Callable[[np.ndarray], np.ndarray]] = None
    saturation: Optional[SaturationSpec] = None
    hard_dead_time: float = 0.0

    def __post_init__(self):
        if self.jitter_fwhm < 0:
            raise ConfigurationError("jitter must be nonnegative")
        if self.hard_dead_time < 0:
            raise ConfigurationError("dead time must be nonnegative")


@dataclass(frozen=True)
class EmissionProbabilities:
    pair_cells: np.ndarray
    singles_A: np.ndarray
    singles_B: np.ndarray
    outcomes: np.ndarray


@dataclass
class StreamTruth:
    cycles: int
    pairs_emitted: int
    pair_cycles: np.ndarray
    pair_bins_a: np.ndarray
    pair_bins_b: np.ndarray
    incompatible_a: int
    incompatible_b: int

    @property
    def detected(self):
        return (self.pair_bins_a >= 0) & (self.pair_bins_b >= 0)

    @property
    def pairs_detected(self):
        return int(np.count_nonzero(self.detected))

    @property
    def bin_pair_counts(self):
        counts = np.zeros((3, 3), dtype=np.int64)
        mask = self.detected
        np.add.at(counts, (self.pair_bins_a[mask], self.pair_bins_b[mask]), 1)
        return counts


def _readout_amplitudes(ifo: InterferometerSpec):
    w_short = ifo.t_squared * ifo.path_eff_alpha**2
    w_long = ifo.r_squared * ifo.path_eff_beta**2
    if w_short + w_long <= 0:
        raise ConfigurationError("interferometer transmits nothing to the monitored port")
    # one monitored port carries half of the light
    return math.sqrt(0.5 * w_short / (w_short + w_long)), math.sqrt(0.5 * w_long / (w_short + w_long))


def emission_probabilities(scenario: SourceScenario):
    """Probabilities of a pair landing in each (Alice bin, Bob bin) of the monitored ports."""
    source = scenario.source_ifo
    powers = source_port_powers(source.transmittance_t, source.path_eff_alpha, source.path_eff_beta)
    if powers["P_E1"] + powers["P_L1"] <= 0:
        raise ConfigurationError("source interferometer port carries no pump light")
    pe = powers["P_E1"] / (powers["P_E1"] + powers["P_L1"])
    pl = 1.0 - pe
    sa, la = _readout_amplitudes(scenario.alice_ifo)
    sb, lb = _readout_amplitudes(scenario.bob_ifo)

    cells = np.zeros((3, 3))
    cells[0, 0] = pe * sa**2 * sb**2
    cells[0, 1] = pe * sa**2 * lb**2
    cells[1, 0] = pe * la**2 * sb**2
    cells[1, 1] = (
        pe * la**2 * lb**2
        + pl * sa**2 * sb**2
        + 2 * scenario.phase_visibility_v * math.sqrt(pe * pl) * la * lb * sa * sb * math.cos(scenario.theta)
    )
    cells[1, 2] = pl * sa**2 * lb**2
    cells[2, 1] = pl * la**2 * sb**2
    cells[2, 2] = pl * la**2 * lb**2
    singles_a = np.array([pe * sa**2, pe * la**2 + pl * sa**2, pl * la**2])
    singles_b = np.array([pe * sb**2, pe * lb**2 + pl * sb**2, pl * lb**2])

    a_only = np.clip(singles_a - cells.sum(axis=1), 0, None)
    b_only = np.clip(singles_b - cells.sum(axis=0), 0, None)
    outcomes = np.concatenate([cells.ravel(), a_only, b_only, [0.0]])
    outcomes[-1] = max(0.0, 1.0 - outcomes.sum())
    return EmissionProbabilities(cells, singles_a, singles_b, outcomes / outcomes.sum())


def make_stream(channel, times):
    stream = np.empty(len(times), dtype=TAG_DTYPE)
    stream["channel"] = channel
    stream["time_ps"] = times
    return stream


def apply_walk(times, curve):
    """Delay each tag by ``curve`` of the gap to the previous distorted tag."""
    observed = np.array(times, dtype=float)
    if curve is None or len(observed) < 2:
        return observed
    for _ in range(WALK_ITERATIONS):
        gaps = np.clip(times[1:] - observed[:-1], 0, None)
        observed[1:] = times[1:] + curve(gaps)
    return observed


def dead_time_mask(times, dead_ps):
    """Boolean mask keeping tags at least ``dead_ps`` after the previously kept one."""
    keep = np.ones(len(times), dtype=bool)
    if dead_ps <= 0 or len(times) < 2:
        return keep
    # only tags closer than dead_ps to their predecessor can be dropped
    reference = times[0]
    for index in np.flatnonzero(np.diff(times) < dead_ps) + 1:
        if keep[index - 1]:
            reference = times[index - 1]
        if times[index] - reference < dead_ps:
            keep[index] = False
    return keep


def _detector_response(times, detector: DetectorModel, rng):
    """Observed times and, for each, the index of the incident photon it came from."""
    if detector.jitter_fwhm > 0:
        times = times + rng.normal(0.0, detector.jitter_fwhm * FWHM_TO_SIGMA, size=len(times))
    order = np.argsort(times, kind="stable")
    jittered = times[order]
    observed = apply_walk(jittered, detector.walk_curve)
    if detector.hard_dead_time > 0:
        keep = dead_time_mask(observed, detector.hard_dead_time)
        order, jittered = order[keep], jittered[keep]
        observed = apply_walk(jittered, detector.walk_curve)
    resort = np.argsort(observed, kind="stable")
    return observed[resort], order[resort]


def _arm(scenario, detector, arm, pair_cycles, pair_bins, probabilities, channel):
    eta = scenario.eta_A if arm == "A" else scenario.eta_B
    singles = probabilities.singles_A if arm == "A" else probabilities.singles_B
    rng = spawn_rng(scenario.seed, "incompatible-" + arm)
    # the monitored port receives half of the incompatible photons
    count = rng.poisson(scenario.cycles * (1 - scenario.delta) * scenario.mu_per_cycle * eta * 0.5)
    cycles = rng.integers(0, scenario.cycles, size=count)
    bins = rng.choice(3, size=count, p=singles / singles.sum())

    detected = np.flatnonzero(pair_bins >= 0)
    all_cycles = np.concatenate([pair_cycles[detected], cycles])
    all_bins = np.concatenate([pair_bins[detected], bins])
    source = np.concatenate([detected, np.full(count, -1)])
    times = all_cycles * scenario.period_ps + np.asarray(BIN_CENTERS_PS)[all_bins]

    rng = spawn_rng(scenario.seed, "detector-" + arm)
    if detector.saturation is not None:
        incident = scenario.expected_singles(arm)
        factor = detector_efficiency(incident, detector.saturation) / detector.saturation.nominal_efficiency_eta0
        keep = rng.random(len(times)) < factor
        times, source = times[keep], source[keep]
    observed, index = _detector_response(times, detector, rng)
    observed = np.rint(observed)
    in_range = (observed >= 0) & (observed < scenario.duration * 1e12)
    observed, index = observed[in_range], index[in_range]

    survived = np.zeros(len(pair_bins), dtype=bool)
    kept_source = source[index]
    survived[kept_source[kept_source >= 0]] = True
    return make_stream(channel, observed.astype(np.uint64)), survived, int(count)


def generate_stream(scenario: SourceScenario, det_A: Optional[DetectorModel] = None, det_B: Optional[DetectorModel] = None):
    """Simulate both stations for ``scenario.duration`` seconds.

    Compatible pairs arrive as a Poisson process of mean delta*mu per cycle and are routed to the
    monitored ports with ``emission_probabilities``; each arm also sees Poisson singles from the
    incompatible part of the spectrum. Returns ``(stream_A, stream_B, truth)``.
    """
    det_A = det_A or DetectorModel()
    det_B = det_B or DetectorModel()
    probabilities = emission_probabilities(scenario)
    rng = spawn_rng(scenario.seed, "pairs")
    pairs = int(rng.poisson(scenario.cycles * scenario.delta * scenario.mu_per_cycle))
    pair_cycles = np.sort(rng.integers(0, scenario.cycles, size=pairs))
    outcome = rng.choice(len(probabilities.outcomes), size=pairs, p=probabilities.outcomes)
    bins_a = np.where(rng.random(pairs) < scenario.eta_A, OUTCOME_A[outcome], -1)
    bins_b = np.where(rng.random(pairs) < scenario.eta_B, OUTCOME_B[outcome], -1)

    stream_a, survived_a, extra_a = _arm(scenario, det_A, "A", pair_cycles, bins_a, probabilities, CHANNEL_ALICE)
    stream_b, survived_b, extra_b = _arm(scenario, det_B, "B", pair_cycles, bins_b, probabilities, CHANNEL_BOB)
    truth = StreamTruth(
        cycles=scenario.cycles,
        pairs_emitted=pairs,
        pair_cycles=pair_cycles,
        pair_bins_a=np.where(survived_a, bins_a, -1),
        pair_bins_b=np.where(survived_b, bins_b, -1),
        incompatible_a=extra_a,
        incompatible_b=extra_b,
    )
    logger.debug("generated {} pairs over {} cycles".format(pairs, scenario.cycles))
    logger.debug("{} Alice tags, {} Bob tags".format(len(stream_a), len(stream_b)))
    return stream_a, stream_b, truth


def replay_to_file(stream, path):
    stream = np.asarray(stream, dtype=TAG_DTYPE)
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(np.array([len(stream)], dtype="<u8").tobytes())
        handle.write(stream.tobytes())


def load_from_file(path):
    """Read a binary stream, or a ``channel,time_ps`` CSV stream when the magic is absent."""
    with open(path, "rb") as handle:
        data = handle.read()
    if not data.startswith(MAGIC):
        if data[:7] == b"channel" or data[:1] == b"#":
            return read_stream_csv(path)
        raise FormatError("bad magic {!r}".format(data[: len(MAGIC)]), offset=0)
    if len(data) < HEADER_SIZE:
        raise FormatError("truncated header", offset=len(data))
    count = int(np.frombuffer(data, dtype="<u8", count=1, offset=len(MAGIC))[0])
    body = len(data) - HEADER_SIZE
    complete = body // TAG_DTYPE.itemsize
    if complete < count:
        raise FormatError("truncated record {} of {}".format(complete, count), offset=HEADER_SIZE + complete * TAG_DTYPE.itemsize)
    if body > count * TAG_DTYPE.itemsize:
        raise FormatError("unexpected trailing bytes", offset=HEADER_SIZE + count * TAG_DTYPE.itemsize)
    if count == 0:
        return np.empty(0, dtype=TAG_DTYPE)
    return np.frombuffer(data, dtype=TAG_DTYPE, count=count, offset=HEADER_SIZE).copy()


def write_stream_csv(stream, path, comment=None):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if comment:
            handle.write("# {}\n".format(comment))
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER)
        writer.writerows(zip(stream["channel"].tolist(), stream["time_ps"].tolist()))


def read_stream_csv(path):
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [row for row in csv.reader(line for line in handle if not line.startswith("#")) if row]
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise FormatError("{} lacks the channel,time_ps header".format(path), offset=0)
    try:
        channels = [int(row[0]) for row in rows[1:]]
        times = [int(row[1]) for row in rows[1:]]
    except (ValueError, IndexError) as e:
        raise FormatError("malformed stream row in {}: {}".format(path, e))
    stream = np.empty(len(times), dtype=TAG_DTYPE)
    stream["channel"] = channels
    stream["time_ps"] = times
    return stream


def merge_streams(*streams):
    """Time-ordered union of several single-channel streams."""
    merged = np.concatenate([np.asarray(s, dtype=TAG_DTYPE) for s in streams])
    return merged[np.argsort(merged["time_ps"], kind="stable")]
