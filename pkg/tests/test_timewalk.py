import math

import numpy as np
import pytest

from pairsim.coincidence import find_coincidences
from pairsim.errors import CalibrationError, DomainError, FormatError
from pairsim.timetag_sim import CHANNEL_ALICE, DetectorModel, SourceScenario, generate_stream, make_stream
from pairsim.timewalk import (
    Hist2D,
    WalkTable,
    YBinSpec,
    apply_correction,
    build_hist2d,
    calibrate,
    dead_time_filter,
    folded_histogram,
    load_walk_table,
    peak_fwhm,
    save_walk_table,
    walk_curve_exponential,
)

# about 5 MHz of singles per arm
HIGH_RATE_MU = 0.0122
CALIBRATION_ROWS = YBinSpec(rows=128)


def _walked(amplitude_ps, seed):
    scenario = SourceScenario(mu_per_cycle=HIGH_RATE_MU, duration=0.2, seed=seed)
    curve = walk_curve_exponential(amplitude_ps, 50e3)
    detector = DetectorModel(walk_curve=curve)
    stream_a, stream_b, _ = generate_stream(scenario, detector, detector)
    return scenario, curve, stream_a, stream_b


@pytest.fixture(scope="module")
def walked():
    return _walked(30.0, seed=11)


@pytest.fixture(scope="module")
def walked_beyond_period():
    return _walked(400.0, seed=12)


def _recovery_rms(scenario, curve, stream):
    table = calibrate(build_hist2d(stream, scenario.period_ps, 1.0, CALIBRATION_ROWS))
    t_prime = np.geomspace(23e3, 200e3, 60)
    error = table.lookup(t_prime) - curve(t_prime)
    return table, math.sqrt(float(np.mean(error**2)))


def test_calibration_recovers_walk_curve(walked):
    scenario, curve, stream_a, _ = walked
    table, rms = _recovery_rms(scenario, curve, stream_a)
    assert rms <= 2.0
    assert table.lookup(600e3) == 0.0


def test_calibration_unwraps_corrections_beyond_one_period(walked_beyond_period):
    scenario, curve, stream_a, _ = walked_beyond_period
    assert curve(10e3) > scenario.period_ps
    table, rms = _recovery_rms(scenario, curve, stream_a)
    assert rms <= 2.0
    assert table.correction_d.max() > scenario.period_ps


def test_correction_beats_dead_time_filter(walked):
    scenario, _, stream_a, stream_b = walked
    tables = [calibrate(build_hist2d(s, scenario.period_ps, 1.0, CALIBRATION_ROWS)) for s in (stream_a, stream_b)]
    corrected = find_coincidences(apply_correction(stream_a, tables[0]), apply_correction(stream_b, tables[1]))
    filtered = find_coincidences(dead_time_filter(stream_a, 200e3), dead_time_filter(stream_b, 200e3))
    assert corrected.matrix.sum() >= 3 * filtered.matrix.sum()


def test_correction_sharpens_middle_peak(walked):
    scenario, _, stream_a, _ = walked
    table = calibrate(build_hist2d(stream_a, scenario.period_ps, 1.0, CALIBRATION_ROWS))
    before = peak_fwhm(*folded_histogram(stream_a, scenario.period_ps))
    after = peak_fwhm(*folded_histogram(apply_correction(stream_a, table), scenario.period_ps))
    assert after < before


def test_y_bin_spec():
    spec = YBinSpec(1e3, 1e6, rows=3)
    np.testing.assert_allclose(spec.edges(), [1e3, 1e4, 1e5, 1e6])
    np.testing.assert_allclose(YBinSpec(0.5, 2.5, 2, logarithmic=False).edges(), [0.5, 1.5, 2.5])
    with pytest.raises(DomainError):
        YBinSpec(1e6, 1e3)
    with pytest.raises(DomainError):
        YBinSpec(rows=1)


def test_hist2d_chunks_merge_exactly(walked):
    scenario, _, stream_a, _ = walked
    chunk = stream_a[:100_000]
    split = 60_000
    whole = build_hist2d(chunk, scenario.period_ps)
    first = build_hist2d(chunk[:split], scenario.period_ps)
    second = build_hist2d(chunk[split:], scenario.period_ps, previous=chunk["time_ps"][split - 1])
    np.testing.assert_array_equal(first.merge(second).counts, whole.counts)


def test_hist2d_merge_rejects_other_binning():
    stream = make_stream(CHANNEL_ALICE, np.array([0, 20_000, 50_000], dtype=np.uint64))
    with pytest.raises(DomainError):
        build_hist2d(stream, 100.0).merge(build_hist2d(stream, 100.0, 2.0))


def test_hist2d_rejects_unsorted_stream():
    stream = make_stream(CHANNEL_ALICE, np.array([50_000, 20_000], dtype=np.uint64))
    with pytest.raises(DomainError):
        build_hist2d(stream, 100.0)


def _synthetic_hist(rows):
    x_edges = np.linspace(0.0, 20.0, 21)
    y_edges = np.array([1e3, 1e4, 1e5, 1e6])
    counts = np.zeros((3, 20), dtype=np.int64)
    for row, cells in rows.items():
        for x, value in cells.items():
            counts[row, x] = value
    return Hist2D(x_edges, y_edges, counts, 20.0)


def test_calibrate_flags_tied_rows(mocker):
    mock_logger = mocker.patch("pairsim.timewalk.logger")
    hist = _synthetic_hist({0: {13: 2000}, 1: {8: 1000, 12: 1000}, 2: {10: 2000}})
    table = calibrate(hist, template_row_range=(1e5, 1e6))
    np.testing.assert_allclose(table.correction_d, [3.0, 2.0, 0.0])
    assert table.flagged.tolist() == [False, True, False]
    mock_logger.warning.assert_called_once()


def test_calibrate_sparse_rows_inherit_nearest():
    hist = _synthetic_hist({0: {15: 10}, 1: {12: 2000}, 2: {10: 2000}})
    table = calibrate(hist, template_row_range=(1e5, 1e6))
    np.testing.assert_allclose(table.correction_d, [2.0, 2.0, 0.0])


def test_calibrate_shift_from_simple_roll():
    hist = _synthetic_hist({2: {3: 1500, 4: 500}})
    hist.counts[1] = np.roll(hist.counts[2], -4)
    hist.counts[0] = np.roll(hist.counts[2], 5)
    table = calibrate(hist, template_row_range=(1e5, 1e6))
    np.testing.assert_allclose(table.correction_d[:2], [5.0, -4.0])


def test_calibrate_without_template_counts():
    hist = _synthetic_hist({0: {3: 2000}})
    with pytest.raises(CalibrationError):
        calibrate(hist, template_row_range=(1e5, 1e6))


def test_shifted_rolls_selected_rows():
    hist = _synthetic_hist({0: {1: 5}, 2: {1: 7}})
    shifted = hist.shifted(2, rows=[0])
    assert shifted.counts[0, 3] == 5
    assert shifted.counts[2, 1] == 7


def test_walk_table_lookup():
    table = WalkTable(np.array([1e3, 1e4]), np.array([10.0, 0.0]), valid_below=1e4)
    np.testing.assert_allclose(table.lookup([500.0, 5.5e3, 2e4]), [10.0, 5.0, 0.0])
    assert WalkTable.zero().lookup(1e3) == 0.0


def test_apply_correction():
    table = WalkTable(np.array([0.0, 1e5]), np.array([5.0, 5.0]), valid_below=1e5)
    stream = make_stream(CHANNEL_ALICE, np.array([100, 1_100, 501_100], dtype=np.uint64))
    corrected = apply_correction(stream, table)
    assert corrected["time_ps"].tolist() == [100, 1_095, 501_100]
    assert corrected["channel"].tolist() == [CHANNEL_ALICE] * 3
    with_previous = apply_correction(stream, table, previous=0)
    assert with_previous["time_ps"][0] == 95


def test_dead_time_filter():
    stream = make_stream(CHANNEL_ALICE, np.array([0, 100, 250, 400], dtype=np.uint64))
    assert dead_time_filter(stream, 200.0)["time_ps"].tolist() == [0, 250]


def test_peak_fwhm_of_gaussian():
    edges = np.linspace(0.0, 240.0, 241)
    centers = 0.5 * (edges[:-1] + edges[1:])
    counts = 1e4 * np.exp(-0.5 * ((centers - 120.0) / 5.0) ** 2)
    assert peak_fwhm(edges, counts) == pytest.approx(2 * math.sqrt(2 * math.log(2)) * 5.0, abs=0.1)
    with pytest.raises(DomainError):
        peak_fwhm(edges, np.zeros(240))


def test_walk_table_save_and_load(tmp_path):
    table = WalkTable(np.array([1e4, 2e4, 4e4]), np.array([20.0, 10.0, 2.5]), 5e5, 244.5, 1.0)
    path = tmp_path / "walk.csv"
    save_walk_table(table, path)
    assert path.read_text().startswith("# pairsim ")
    loaded = load_walk_table(path)
    np.testing.assert_array_equal(loaded.t_prime_ps, table.t_prime_ps)
    np.testing.assert_array_equal(loaded.correction_d, table.correction_d)
    assert (loaded.valid_below, loaded.period_ps, loaded.x_bin_ps) == (5e5, 244.5, 1.0)


def test_walk_table_records_provenance(tmp_path):
    table = WalkTable(np.array([1e4, 2e4]), np.array([20.0, 10.0]), 5e5, 244.5, 1.0)
    path = tmp_path / "walk.csv"
    save_walk_table(table, path, "pairsim 0.4.0 config_hash=abc123 seed=7")
    lines = path.read_text().splitlines()
    assert lines[0] == "# pairsim 0.4.0 config_hash=abc123 seed=7"
    assert lines[1] == "# period_ps=244.5 x_bin_ps=1.0 valid_below_ps=500000.0"
    np.testing.assert_array_equal(load_walk_table(path).t_prime_ps, table.t_prime_ps)


def test_load_walk_table_rejects_other_csv(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        load_walk_table(path)
