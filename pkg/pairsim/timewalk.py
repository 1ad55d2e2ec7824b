"""In-situ time-walk calibration from the data stream itself.

Tags are histogrammed by folded arrival time (x) and gap to the previous tag t' (y). Rows with
large t' are undistorted and form the template; every other row is matched against it with a
circular sum of absolute differences, giving the correction d(t') as a lookup table.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from pairsim import __version__
from pairsim.errors import CalibrationError, DomainError, FormatError
from pairsim.timetag_sim import TAG_DTYPE, dead_time_mask

logger = logging.getLogger(__name__)

MIN_ROW_COUNTS = 1000
DEFAULT_TEMPLATE_RANGE_PS = (500e3, 1e6)
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class YBinSpec:
    minimum_ps: float = 10e3
    maximum_ps: float = 1e6
    rows: int = 256
    logarithmic: bool = True

    def __post_init__(self):
        if not 0 < self.minimum_ps < self.maximum_ps:
            raise DomainError("t' bin range must satisfy 0 < min < max")
        if self.rows < 2:
            raise DomainError("need at least two t' rows")

    def edges(self):
        if self.logarithmic:
            return np.geomspace(self.minimum_ps, self.maximum_ps, self.rows + 1)
        return np.linspace(self.minimum_ps, self.maximum_ps, self.rows + 1)


@dataclass
class Hist2D:
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray
    period_ps: float
    logarithmic: bool = True

    @property
    def x_bin_ps(self):
        return self.period_ps / (len(self.x_edges) - 1)

    @property
    def y_centers(self):
        if self.logarithmic:
            return np.sqrt(self.y_edges[:-1] * self.y_edges[1:])
        return 0.5 * (self.y_edges[:-1] + self.y_edges[1:])

    def merge(self, other: "Hist2D"):
        if not (np.array_equal(self.x_edges, other.x_edges) and np.array_equal(self.y_edges, other.y_edges)):
            raise DomainError("cannot merge histograms with different binning")
        return Hist2D(self.x_edges, self.y_edges, self.counts + other.counts, self.period_ps, self.logarithmic)

    def shifted(self, bins, rows=None):
        """Copy with the selected rows (all by default) rolled by ``bins`` x-bins."""
        counts = self.counts.copy()
        selected = slice(None) if rows is None else rows
        counts[selected] = np.roll(counts[selected], bins, axis=1)
        return Hist2D(self.x_edges, self.y_edges, counts, self.period_ps, self.logarithmic)


@dataclass
class WalkTable:
    """Correction d(t') sampled at row centers ``t_prime_ps``; zero from ``valid_below`` upward."""

    t_prime_ps: np.ndarray
    correction_d: np.ndarray
    valid_below: float
    period_ps: float = 0.0
    x_bin_ps: float = 1.0
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def lookup(self, t_prime):
        t_prime = np.asarray(t_prime, dtype=float)
        if len(self.t_prime_ps) == 0:
            return np.zeros_like(t_prime)
        values = np.interp(t_prime, self.t_prime_ps, self.correction_d)
        return np.where(t_prime >= self.valid_below, 0.0, values)

    @classmethod
    def zero(cls, valid_below=DEFAULT_TEMPLATE_RANGE_PS[0]):
        return cls(np.array([valid_below]), np.array([0.0]), valid_below)


@dataclass(frozen=True)
class ExponentialWalk:
    amplitude_ps: float
    tau_ps: float

    def __call__(self, t_prime):
        return self.amplitude_ps * np.exp(-np.asarray(t_prime, dtype=float) / self.tau_ps)


def walk_curve_exponential(amplitude_ps=30.0, tau_ps=50e3):
    return ExponentialWalk(amplitude_ps, tau_ps)


def _times(stream):
    times = np.asarray(stream["time_ps"], dtype=np.int64)
    if np.any(np.diff(times) < 0):
        raise DomainError("stream is not sorted by time")
    return times


def build_hist2d(stream, period_ps, x_bin_ps=1.0, y_bins: Optional[YBinSpec] = None, previous=None):
    """Histogram of folded arrival time against the gap to the preceding tag.

    ``previous`` is the time of the tag preceding a chunk, so chunks of one stream merge exactly.
    """
    y_bins = y_bins or YBinSpec()
    times = _times(stream)
    if previous is not None:
        times = np.concatenate([[int(previous)], times])
    x_count = max(1, int(round(period_ps / x_bin_ps)))
    x_edges = np.linspace(0.0, period_ps, x_count + 1)
    y_edges = y_bins.edges()
    x = np.mod(times[1:].astype(float), period_ps)
    y = np.diff(times).astype(float)
    counts, _, _ = np.histogram2d(y, x, bins=[y_edges, x_edges])
    return Hist2D(x_edges, y_edges, counts.astype(np.int64), float(period_ps), y_bins.logarithmic)


def _signed(shift, size):
    return shift if shift <= size // 2 else shift - size


def _row_shift(sad):
    """Sub-bin location of the SAD minimum and whether the minimum is tied."""
    size = len(sad)
    ties = np.flatnonzero(sad <= sad.min() + TIE_TOLERANCE)
    best = min(ties, key=lambda k: abs(_signed(int(k), size)))
    left, centre, right = sad[(best - 1) % size], sad[best], sad[(best + 1) % size]
    curvature = left - 2 * centre + right
    offset = 0.0 if curvature <= 0 else float(np.clip(0.5 * (left - right) / curvature, -0.5, 0.5))
    return _signed(int(best), size) + offset, len(ties) > 1


def calibrate(hist: Hist2D, template_row_range=DEFAULT_TEMPLATE_RANGE_PS, min_row_counts=MIN_ROW_COUNTS):
    centers = hist.y_centers
    low, high = template_row_range
    template_rows = (centers >= low) & (centers <= high)
    template = hist.counts[template_rows].sum(axis=0).astype(float)
    if template.sum() <= 0:
        raise CalibrationError("template rows in [{}, {}] ps hold no counts".format(low, high))
    template /= template.sum()
    size = len(template)
    # rolled[k] is the template delayed by k x-bins
    rolled = np.stack([np.roll(template, k) for k in range(size)])

    row_totals = hist.counts.sum(axis=1)
    correction = np.full(len(centers), np.nan)
    flagged = np.zeros(len(centers), dtype=bool)
    correction[centers >= low] = 0.0
    previous = 0.0
    for row in np.argsort(centers)[::-1]:
        if centers[row] >= low or row_totals[row] < min_row_counts:
            continue
        profile = hist.counts[row] / row_totals[row]
        shift, tied = _row_shift(np.abs(rolled - profile).sum(axis=1))
        estimate = shift * hist.x_bin_ps
        # undo roll-over of corrections beyond half a period
        estimate -= hist.period_ps * np.round((estimate - previous) / hist.period_ps)
        correction[row] = previous = estimate
        flagged[row] = tied

    known = np.flatnonzero(~np.isnan(correction))
    if len(known) == 0:
        raise CalibrationError("no t' row reaches {} counts".format(min_row_counts))
    missing = np.flatnonzero(np.isnan(correction))
    if len(missing):
        nearest = known[np.abs(missing[:, None] - known[None, :]).argmin(axis=1)]
        correction[missing] = correction[nearest]
        logger.debug("{} sparse t' rows inherit their nearest estimate".format(len(missing)))
    if flagged.any():
        logger.warning("{} t' rows have a tied SAD minimum".format(int(flagged.sum())))
    return WalkTable(centers, correction, float(low), hist.period_ps, hist.x_bin_ps, flagged)


def apply_correction(stream, table: WalkTable, previous=None):
    """Subtract d(t') from every tag, t' being the gap to the preceding uncorrected tag."""
    times = _times(stream).astype(float)
    corrected = times.copy()
    if len(times):
        if previous is not None:
            corrected[0] = times[0] - table.lookup(times[0] - float(previous))
        corrected[1:] = times[1:] - table.lookup(np.diff(times))
    corrected = np.clip(np.rint(corrected), 0, None)
    order = np.argsort(corrected, kind="stable")
    out = np.empty(len(times), dtype=TAG_DTYPE)
    out["channel"] = np.asarray(stream["channel"])[order]
    out["time_ps"] = corrected[order].astype(np.uint64)
    return out


def dead_time_filter(stream, dead_ps):
    return stream[dead_time_mask(_times(stream), dead_ps)]


def folded_histogram(stream, period_ps, bin_ps=1.0):
    bins = max(1, int(round(period_ps / bin_ps)))
    edges = np.linspace(0.0, period_ps, bins + 1)
    counts, _ = np.histogram(np.mod(np.asarray(stream["time_ps"], dtype=float), period_ps), bins=edges)
    return edges, counts


def peak_fwhm(edges, counts, window=(80.0, 160.0)):
    """Full width at half maximum of the tallest peak inside ``window``, by linear interpolation."""
    centers = 0.5 * (edges[:-1] + edges[1:])
    inside = np.flatnonzero((centers >= window[0]) & (centers < window[1]))
    if len(inside) == 0 or counts[inside].max() <= 0:
        raise DomainError("no counts inside the peak window")
    peak = inside[np.argmax(counts[inside])]
    half = counts[peak] / 2.0

    def crossing(step):
        index = peak
        while inside[0] <= index + step <= inside[-1] and counts[index + step] > half:
            index += step
        outer = index + step
        if not inside[0] <= outer <= inside[-1]:
            return centers[index]
        fraction = (counts[index] - half) / (counts[index] - counts[outer])
        return centers[index] + step * fraction * (centers[1] - centers[0])

    return float(crossing(1) - crossing(-1))


def save_walk_table(table: WalkTable, path, comment=None):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write("# {}\n".format(comment or "pairsim {}".format(__version__)))
        settings = "# period_ps={!r} x_bin_ps={!r} valid_below_ps={!r}\n"
        handle.write(settings.format(table.period_ps, table.x_bin_ps, table.valid_below))
        writer = csv.writer(handle)
        writer.writerow(["t_prime_ps", "correction_ps"])
        for t_prime, correction in zip(table.t_prime_ps, table.correction_d):
            writer.writerow([repr(float(t_prime)), repr(float(correction))])


def load_walk_table(path):
    settings = {}
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("#"):
                for token in line[1:].split():
                    key, _, value = token.partition("=")
                    if value:
                        settings[key] = value
            elif line.strip():
                rows.append(line)
    parsed = list(csv.reader(rows))
    if not parsed or parsed[0] != ["t_prime_ps", "correction_ps"]:
        raise FormatError("{} is not a walk table".format(path))
    try:
        data = np.array([[float(a), float(b)] for a, b in parsed[1:]]).reshape(-1, 2)
        valid_below = float(settings.get("valid_below_ps", data[-1, 0] if len(data) else 0.0))
        period = float(settings.get("period_ps", 0.0))
        x_bin = float(settings.get("x_bin_ps", 1.0))
    except ValueError as e:
        raise FormatError("malformed walk table {}: {}".format(path, e))
    return WalkTable(data[:, 0], data[:, 1], valid_below, period, x_bin, np.zeros(len(data), dtype=bool))
