"""Bin classification, Alice/Bob pairing, visibility, fringe fitting and the phase lock."""

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from pairsim import GUARD_CENTERS_PS, GUARD_WIDTH_PS, PERIOD_PS
from pairsim.errors import ConfigurationError, DomainError, FormatError, UndefinedVisibilityError

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_PS = 100.0
MIN_FRINGE_SAMPLES = 8
BIN_NAMES = ("early", "middle", "late")


class BinLabel(enum.IntEnum):
    EARLY = 0
    MIDDLE = 1
    LATE = 2
    GUARD = 3
    OUTSIDE = 4


@dataclass(frozen=True)
class BinConfig:
    period_ps: float = PERIOD_PS
    bin_windows: tuple[tuple[float, float], ...] = ((0.0, 80.0), (80.0, 160.0), (160.0, PERIOD_PS))
    guard_centers: tuple[float, ...] = GUARD_CENTERS_PS
    guard_width: float = GUARD_WIDTH_PS

    def __post_init__(self):
        if len(self.bin_windows) != 3:
            raise ConfigurationError("exactly three bin windows are required")
        if self.guard_width < 0:
            raise ConfigurationError("guard width must be nonnegative")
        previous_end = 0.0
        for start, end in sorted(self.bin_windows):
            if start < previous_end or end <= start or end > self.period_ps + 1e-9:
                raise ConfigurationError("bin windows must be disjoint intervals inside [0, {})".format(self.period_ps))
            previous_end = end

    def with_guard_width(self, width):
        return replace(self, guard_width=width)


@dataclass(frozen=True)
class CoincidenceRecord:
    a_bin: BinLabel
    b_bin: BinLabel
    cycle_index: int
    a_time: int
    b_time: int


@dataclass
class CoincidenceResult:
    a_index: np.ndarray
    b_index: np.ndarray
    a_time: np.ndarray
    b_time: np.ndarray
    a_bin: np.ndarray
    b_bin: np.ndarray
    matrix: np.ndarray
    guard_excluded: int
    unpaired_a: int
    unpaired_b: int
    period_ps: float

    @property
    def pairs(self):
        return len(self.a_index)

    @property
    def middle_middle(self):
        return int(self.matrix[BinLabel.MIDDLE, BinLabel.MIDDLE])

    def records(self):
        for a_bin, b_bin, a_time, b_time in zip(self.a_bin, self.b_bin, self.a_time, self.b_time):
            yield CoincidenceRecord(BinLabel(a_bin), BinLabel(b_bin), int(a_time // self.period_ps), int(a_time), int(b_time))


@dataclass(frozen=True)
class VisibilityResult:
    percent: float
    error: float


@dataclass
class FringeFit:
    offset_A: float
    amplitude_B: float
    frequency_a: float
    phase_b: float
    r_squared: float
    residuals: np.ndarray
    degenerate: bool = False

    @property
    def visibility(self):
        return self.amplitude_B / self.offset_A if self.offset_A else 0.0

    def __call__(self, control):
        return self.offset_A + self.amplitude_B * np.cos(self.frequency_a * np.asarray(control) + self.phase_b)


@dataclass
class FringeScan:
    control_values: np.ndarray
    rates: np.ndarray
    fit: Optional[FringeFit] = None

    def __post_init__(self):
        self.control_values = np.asarray(self.control_values, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if self.control_values.shape != self.rates.shape:
            raise DomainError("control values and rates differ in length")
        if np.any(self.rates < 0):
            raise DomainError("rates must be nonnegative")


@dataclass
class PhaseLockResult:
    control: float
    rate: float
    converged: bool
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class GuardScanPoint:
    guard_width: float
    matrix: np.ndarray
    retained: int
    guard_excluded: int


def classify_bins(times, config: BinConfig):
    folded = np.mod(np.asarray(times, dtype=float), config.period_ps)
    labels = np.full(folded.shape, int(BinLabel.OUTSIDE), dtype=np.int8)
    for label, (start, end) in enumerate(config.bin_windows):
        labels[(folded >= start) & (folded < end)] = label
    half = config.guard_width / 2.0
    for center in config.guard_centers:
        labels[(folded >= center - half) & (folded < center + half)] = BinLabel.GUARD
    return labels


def classify_bin(time_ps, config: Optional[BinConfig] = None):
    return BinLabel(int(classify_bins([time_ps], config or BinConfig())[0]))


def pair_tags(a_times, b_times, window_ps):
    """Greedy nearest pairing: closest candidates first, each tag used at most once."""
    a_times = np.asarray(a_times, dtype=np.int64)
    b_times = np.asarray(b_times, dtype=np.int64)
    low = np.searchsorted(b_times, a_times - window_ps, side="left")
    high = np.searchsorted(b_times, a_times + window_ps, side="right")
    counts = high - low
    a_idx = np.repeat(np.arange(len(a_times)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    b_idx = np.arange(counts.sum()) - starts + np.repeat(low, counts)
    a_t, b_t = a_times[a_idx], b_times[b_idx]
    # ordering does not depend on which stream is called A
    order = np.lexsort((np.maximum(a_t, b_t), np.minimum(a_t, b_t), np.abs(a_t - b_t)))
    used_a = np.zeros(len(a_times), dtype=bool)
    used_b = np.zeros(len(b_times), dtype=bool)
    chosen = []
    for k in order:
        i, j = a_idx[k], b_idx[k]
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        chosen.append(k)
    chosen_idx = np.array(sorted(chosen, key=lambda k: a_idx[k]), dtype=np.int64)
    return a_idx[chosen_idx], b_idx[chosen_idx]


def _bin_matrix(a_bins, b_bins):
    in_bins = (a_bins <= BinLabel.LATE) & (b_bins <= BinLabel.LATE)
    matrix = np.zeros((3, 3), dtype=np.int64)
    np.add.at(matrix, (a_bins[in_bins], b_bins[in_bins]), 1)
    return matrix, int(np.count_nonzero(~in_bins))


def find_coincidences(stream_A, stream_B, window_ps=DEFAULT_WINDOW_PS, config: Optional[BinConfig] = None):
    config = config or BinConfig()
    if window_ps < 0:
        raise ConfigurationError("coincidence window must be nonnegative")
    a_times = np.asarray(stream_A["time_ps"], dtype=np.int64)
    b_times = np.asarray(stream_B["time_ps"], dtype=np.int64)
    if np.any(np.diff(a_times) < 0) or np.any(np.diff(b_times) < 0):
        raise DomainError("streams must be sorted by time")
    a_index, b_index = pair_tags(a_times, b_times, window_ps)
    a_bin = classify_bins(a_times[a_index], config)
    b_bin = classify_bins(b_times[b_index], config)
    matrix, excluded = _bin_matrix(a_bin, b_bin)
    return CoincidenceResult(
        a_index=a_index,
        b_index=b_index,
        a_time=a_times[a_index],
        b_time=b_times[b_index],
        a_bin=a_bin,
        b_bin=b_bin,
        matrix=matrix,
        guard_excluded=excluded,
        unpaired_a=len(a_times) - len(a_index),
        unpaired_b=len(b_times) - len(b_index),
        period_ps=config.period_ps,
    )


def guard_scan(stream_A, stream_B, widths: Sequence[float], window_ps=DEFAULT_WINDOW_PS, config: Optional[BinConfig] = None):
    """Bin-pair counts retained as the guard regions widen; pairing is done once."""
    config = config or BinConfig()
    result = find_coincidences(stream_A, stream_B, window_ps, config)
    points = []
    for width in widths:
        scanned = config.with_guard_width(width)
        matrix, excluded = _bin_matrix(classify_bins(result.a_time, scanned), classify_bins(result.b_time, scanned))
        points.append(GuardScanPoint(float(width), matrix, int(matrix.sum()), excluded))
    return points


def visibility(counts_max, counts_min, duration_max=1.0, duration_min=1.0):
    """Visibility in percent with its Poisson error bar."""
    if duration_max <= 0 or duration_min <= 0:
        raise DomainError("durations must be positive")
    if counts_max < 0 or counts_min < 0:
        raise DomainError("counts must be nonnegative")
    high = counts_max / duration_max
    low = counts_min / duration_min
    total = high + low
    if total <= 0:
        raise UndefinedVisibilityError("no coincidences at either setting")
    sigma_high = math.sqrt(counts_max) / duration_max
    sigma_low = math.sqrt(counts_min) / duration_min
    error = 2.0 / total**2 * math.sqrt((low * sigma_high) ** 2 + (high * sigma_low) ** 2)
    return VisibilityResult(100.0 * (high - low) / total, 100.0 * error)


def _linear_fringe(control, rates, frequency):
    design = np.column_stack([np.ones_like(control), np.cos(frequency * control), np.sin(frequency * control)])
    coefficients, *_ = np.linalg.lstsq(design, rates, rcond=None)
    residual = rates - design @ coefficients
    return coefficients, float(residual @ residual)


def fit_fringe(scan: FringeScan, frequency_points=2000):
    """Least-squares fit of A + B cos(a*P + b).

    Each trial frequency is a linear problem in (A, B cos b, B sin b); the best one seeds a
    nonlinear refinement of all four parameters.
    """
    control, rates = scan.control_values, scan.rates
    if len(control) < MIN_FRINGE_SAMPLES:
        raise DomainError("need at least {} fringe samples".format(MIN_FRINGE_SAMPLES))
    span = float(control.max() - control.min())
    if span <= 0:
        raise DomainError("control values do not span a range")
    mean = float(rates.mean())
    total = float(((rates - mean) ** 2).sum())
    if total <= 1e-12 * max(mean**2, 1.0) * len(rates):
        fit = FringeFit(mean, 0.0, 0.0, 0.0, 1.0, rates - mean, degenerate=True)
        scan.fit = fit
        logger.warning("constant fringe scan, amplitude set to 0")
        return fit

    spacing = span / (len(control) - 1)
    frequencies = np.linspace(np.pi / span, np.pi / spacing, frequency_points)
    scores = [_linear_fringe(control, rates, a)[1] for a in frequencies]
    frequency = float(frequencies[int(np.argmin(scores))])
    (offset, c, s), _ = _linear_fringe(control, rates, frequency)
    start = (offset, math.hypot(c, s), frequency, math.atan2(-s, c))

    def model(p, A, B, a, b):
        return A + B * np.cos(a * p + b)

    try:
        params, _ = optimize.curve_fit(model, control, rates, p0=start, maxfev=20000)
    except RuntimeError as e:
        logger.warning("fringe refinement failed, keeping the linear fit: {}".format(e))
        params = np.array(start)
    A, B, a, b = (float(x) for x in params)
    if B < 0:
        B, b = -B, b + math.pi
    b = math.remainder(b, 2 * math.pi)
    residuals = rates - model(control, A, B, a, b)
    fit = FringeFit(A, B, a, b, 1.0 - float(residuals @ residuals) / total, residuals)
    scan.fit = fit
    return fit


def fringe_from_sweep(theta_values, matrices, durations):
    """Middle-middle rates of a phase sweep as a fringe scan over the phase."""
    durations = np.broadcast_to(np.asarray(durations, dtype=float), (len(theta_values),))
    if np.any(durations <= 0):
        raise DomainError("durations must be positive")
    rates = [np.asarray(m)[BinLabel.MIDDLE, BinLabel.MIDDLE] / d for m, d in zip(matrices, durations)]
    return FringeScan(np.asarray(theta_values, dtype=float), np.asarray(rates, dtype=float))


def phase_lock(
    rate_oracle: Callable[[float], tuple[float, float]],
    target="max",
    initial_control=0.0,
    step=0.1,
    max_iters=200,
    tolerance=1e-6,
):
    """Hill climbing on the oracle's rate: keep stepping while it improves, reverse and halve otherwise."""
    if step <= 0:
        raise ConfigurationError("step must be positive")
    if target not in ("max", "min"):
        raise ConfigurationError("target must be 'max' or 'min', got {!r}".format(target))
    sign = 1.0 if target == "max" else -1.0

    def measure(control):
        counts, duration = rate_oracle(control)
        if duration <= 0:
            raise DomainError("oracle returned a nonpositive duration")
        return counts / duration

    control = float(initial_control)
    direction = 1.0
    rate = measure(control)
    trace = [(control, rate)]
    converged = False
    for _ in range(max_iters):
        if step < tolerance:
            converged = True
            break
        candidate = control + direction * step
        candidate_rate = measure(candidate)
        trace.append((candidate, candidate_rate))
        if sign * (candidate_rate - rate) > 0:
            control = candidate
        else:
            direction = -direction
            step /= 2.0
        # re-measure the current point every iteration
        rate = measure(control)
        trace.append((control, rate))
    else:
        converged = step < tolerance
    if not converged:
        logger.warning("phase lock stopped after {} iterations with step {:.2e}".format(max_iters, step))
    return PhaseLockResult(control, rate, converged, trace)


def write_coincidence_summary(result: CoincidenceResult, path, extra=None):
    """Key-value text summary of one pairing run."""
    lines = [
        "pairs = {}".format(result.pairs),
        "guard_excluded = {}".format(result.guard_excluded),
        "unpaired_a = {}".format(result.unpaired_a),
        "unpaired_b = {}".format(result.unpaired_b),
    ]
    for i, a_name in enumerate(BIN_NAMES):
        for j, b_name in enumerate(BIN_NAMES):
            lines.append("{}_{} = {}".format(a_name, b_name, int(result.matrix[i, j])))
    for key, value in (extra or {}).items():
        lines.append("{} = {}".format(key, value))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def write_matrix_csv(matrix, path, comment=None):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if comment:
            handle.write("# {}\n".format(comment))
        writer = csv.writer(handle)
        writer.writerow(["a_bin\\b_bin"] + list(BIN_NAMES))
        for name, row in zip(BIN_NAMES, np.asarray(matrix)):
            writer.writerow([name] + [int(x) for x in row])


def read_matrix_csv(path):
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [row for row in csv.reader(line for line in handle if not line.startswith("#")) if row]
    if not rows or [name.strip() for name in rows[0][1:]] != list(BIN_NAMES):
        raise FormatError("{} is not a bin-pair matrix".format(path))
    try:
        matrix = np.array([[int(float(x)) for x in row[1:4]] for row in rows[1:]], dtype=np.int64)
    except ValueError as e:
        raise FormatError("malformed bin-pair matrix {}: {}".format(path, e))
    if matrix.shape != (3, 3):
        raise FormatError("bin-pair matrix {} is not 3x3".format(path))
    return matrix
