"""End-to-end run: spectral model, per-mu simulation and analysis, extrapolation, report.

Every stage that completes is recorded in ``MANIFEST.yaml`` so a failed run leaves a readable
trail next to its partial outputs.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from pairsim import RATE_3DB_ALICE_HZ, RATE_3DB_BOB_HZ, __version__
from pairsim.app import current_app
from pairsim.coincidence import BinConfig, BinLabel, classify_bins, find_coincidences, visibility, write_matrix_csv
from pairsim.config import RunConfig
from pairsim.errors import DegenerateError, FormatError, PairsimError
from pairsim.optics_model import (
    CrystalSpec,
    PumpSpec,
    SchmidtConvention,
    delta_model,
    filter_pair_grid,
    matched_filter_pair,
    phase_matched_temperature,
    schmidt_decompose,
)
from pairsim.rate_theory import (
    MeasuredRates,
    RateMetrics,
    SaturationSpec,
    accidental_rate,
    extrapolate_metrics,
    fit_quality_slopes,
    mu_from_rates,
    secret_key_rate,
    visibility_corrected,
)
from pairsim.statsd_decorators import statsd, statsd_catch
from pairsim.timetag_sim import DetectorModel, generate_stream, scenario_with_imbalances, spawn_rng
from pairsim.timewalk import apply_correction, build_hist2d, calibrate, walk_curve_exponential
from pairsim.tomography import (
    SETTINGS,
    assemble_counts,
    coherent_information,
    entangled_rates,
    log_negativity,
    mle_reconstruct,
    write_density_matrix_csv,
)

SWEEP_COLUMNS = (
    "mu",
    "mu_estimated",
    "visibility_raw",
    "visibility_error",
    "visibility_corrected",
    "C_AB",
    "C_N",
    "C_I",
    "SKR",
    "E_N",
    "E_I",
    "S_A",
    "S_B",
)
EXTRAPOLATION_STEP = 2.5e-5


@dataclass
class PointResult:
    mu: float
    mu_estimated: float
    visibility_raw: float
    visibility_error: float
    visibility_corrected: float
    C_AB: float
    C_N: float
    C_I: float
    SKR: float
    E_N: float
    E_I: float
    S_A: float
    S_B: float
    matrices: dict = field(default_factory=dict)
    rho: Optional[np.ndarray] = None

    def row(self):
        return [repr(float(getattr(self, name))) for name in SWEEP_COLUMNS]

    def metrics(self):
        return RateMetrics(self.mu, self.C_AB, self.C_N, self.C_I, self.SKR)


@dataclass
class ReportBundle:
    output_dir: Path
    model: dict
    points: list
    extrapolation: Optional[object] = None


class Manifest:
    def __init__(self, path, config_hash, seed):
        self.path = Path(path)
        self.document = {
            "version": __version__,
            "config_hash": config_hash,
            "seed": seed,
            "status": "running",
            "completed_stages": [],
        }
        self.write()

    def complete(self, stage):
        self.document["completed_stages"].append(stage)
        self.write()

    def fail(self, stage, error):
        self.document.update(status="failed", failed_stage=stage, error=str(error))
        self.write()

    def finish(self):
        self.document["status"] = "complete"
        self.write()

    def write(self):
        with open(self.path, "w", encoding="utf-8") as handle:
            yaml.safe_dump(self.document, handle, sort_keys=True)


def derive_seed(seed, label):
    return int(spawn_rng(seed, label).integers(0, 2**63))


def optics_from_config(config: RunConfig):
    pump = PumpSpec.from_fwhm(config["pump_wavelength_nm"], config["pump_fwhm_hz"])
    crystal = CrystalSpec(config["crystal_length_m"], config["poling_period_m"])
    temperature = config["crystal_temperature_c"]
    if math.isnan(temperature):
        temperature = phase_matched_temperature(crystal, pump)
    crystal = CrystalSpec(config["crystal_length_m"], config["poling_period_m"], float(temperature))
    filter_u, filter_v = matched_filter_pair(config["filter_offset_hz"], config["filter_fwhm_hz"], pump, config["filter_order"])
    return crystal, pump, filter_u, filter_v


def scenario_from_config(config: RunConfig, mu, theta=0.0, seed=None):
    return scenario_with_imbalances(
        mu,
        source_ratio=config["source_ratio"],
        alice_ratio=config["alice_ratio"],
        bob_ratio=config["bob_ratio"],
        theta=theta,
        delta=config["delta"],
        eta_A=config["eta_A"],
        eta_B=config["eta_B"],
        phase_visibility_v=config["phase_visibility"],
        duration=config["duration"],
        seed=config["seed"] if seed is None else seed,
        repetition_rate_R=config["repetition_rate"],
    )


def detectors_from_config(config: RunConfig):
    walk = walk_curve_exponential(config["walk_amplitude_ps"], config["walk_tau_ps"]) if config["walk_amplitude_ps"] > 0 else None
    detectors = []
    for rate_3db in (config["rate_3db_A"], config["rate_3db_B"]):
        saturation = SaturationSpec(1.0, rate_3db) if config["saturation"] else None
        detectors.append(DetectorModel(config["jitter_fwhm_ps"], walk, saturation, config["dead_time_ps"]))
    return detectors[0], detectors[1]


def bins_from_config(config: RunConfig):
    period = 1e12 / config["repetition_rate"]
    return BinConfig(period, ((0.0, 80.0), (80.0, 160.0), (160.0, period)), guard_width=config["guard_width_ps"])


@statsd(namespace="pipeline")
def model_stage(config: RunConfig):
    crystal, pump, filter_u, filter_v = optics_from_config(config)
    resolution = config["jsi_resolution"]
    wide = filter_pair_grid(filter_u, filter_v, crystal, pump, resolution, wide=True)
    narrow = filter_pair_grid(filter_u, filter_v, crystal, pump, resolution, wide=False)
    delta = delta_model(filter_u, filter_v, wide)
    return {
        "crystal_temperature_c": float(crystal.temperature_T),
        "filter_u_hz": float(filter_u.center_frequency),
        "filter_v_hz": float(filter_v.center_frequency),
        "delta_u": float(delta.delta_u),
        "delta_v": float(delta.delta_v),
        "delta_mean": float(delta.mean),
        "inverse_K_reported": float(schmidt_decompose(filter_u, filter_v, narrow, SchmidtConvention.REPORTED).inverse_K),
        "inverse_K_physical": float(schmidt_decompose(filter_u, filter_v, narrow, SchmidtConvention.PHYSICAL).inverse_K),
    }


def _middle_fraction(stream, bins):
    if len(stream) == 0:
        return 0.0
    return float(np.count_nonzero(classify_bins(stream["time_ps"], bins) == BinLabel.MIDDLE)) / len(stream)


@statsd(namespace="pipeline")
def run_point(values, mu, index):
    """Simulate the three phase settings at one mu and analyse them."""
    config = RunConfig(dict(values))
    det_A, det_B = detectors_from_config(config)
    bins = bins_from_config(config)
    duration = config["duration"]
    streams = {}
    for setting, theta in SETTINGS.items():
        scenario = scenario_from_config(config, mu, theta, derive_seed(config["seed"], "point-{}-{}".format(index, setting)))
        stream_a, stream_b, _ = generate_stream(scenario, det_A, det_B)
        streams[setting] = (stream_a, stream_b)

    if config["twc"] and config["walk_amplitude_ps"] > 0:
        tables = [
            calibrate(build_hist2d(streams["C"][arm], bins.period_ps), min_row_counts=config["twc_min_row_counts"])
            for arm in (0, 1)
        ]
        streams = {s: (apply_correction(a, tables[0]), apply_correction(b, tables[1])) for s, (a, b) in streams.items()}

    results = {s: find_coincidences(a, b, config["window_ps"], bins) for s, (a, b) in streams.items()}
    c_max, c_min = results["C"].middle_middle, results["A"].middle_middle
    measured = visibility(c_max, c_min, duration, duration)
    s_a = float(np.mean([len(a) for a, _ in streams.values()])) / duration
    s_b = float(np.mean([len(b) for _, b in streams.values()])) / duration
    c_ab = float(results["B"].matrix.sum()) / duration

    stream_a, stream_b = streams["B"]
    accidentals = accidental_rate(s_a, s_b, config["repetition_rate"], config["delta"], config["eta_A"], config["eta_B"]).total
    accidentals *= duration * _middle_fraction(stream_a, bins) * _middle_fraction(stream_b, bins)
    try:
        corrected = visibility_corrected(c_max, min(c_min, c_max), accidentals)
    except DegenerateError:
        corrected = math.nan
    try:
        mu_estimated = mu_from_rates(MeasuredRates(s_a, s_b, c_ab, config["repetition_rate"]), config["delta"])
    except PairsimError:
        mu_estimated = math.nan

    v_fraction = min(1.0, max(0.0, measured.percent / 100.0))
    point = PointResult(
        mu=float(mu),
        mu_estimated=float(mu_estimated),
        visibility_raw=measured.percent,
        visibility_error=measured.error,
        visibility_corrected=float(corrected),
        C_AB=c_ab,
        C_N=math.nan,
        C_I=math.nan,
        SKR=secret_key_rate(c_ab, v_fraction),
        E_N=math.nan,
        E_I=math.nan,
        S_A=s_a,
        S_B=s_b,
        matrices={s: results[s].matrix.tolist() for s in SETTINGS},
    )
    if config["tomography"]:
        counts = assemble_counts({s: results[s].matrix for s in SETTINGS}, {s: duration for s in SETTINGS})
        reconstruction = mle_reconstruct(counts)
        rates = entangled_rates(reconstruction.rho, c_ab, v_fraction, mu)
        point.C_N, point.C_I = rates.C_N, rates.C_I
        point.E_N = log_negativity(reconstruction.rho)
        point.E_I = coherent_information(reconstruction.rho)
        point.rho = reconstruction.rho
    return point


def simulate_stage(config: RunConfig, jobs=1):
    mus = list(config["mu_values"])
    values = [config.values] * len(mus)
    indices = list(range(len(mus)))
    if jobs > 1 and len(mus) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_point, values, mus, indices))
    return [run_point(v, mu, i) for v, mu, i in zip(values, mus, indices)]


def extrapolate_sweep(points, channel_count=8, mu_max=0.05, rate_3db_A=RATE_3DB_ALICE_HZ, rate_3db_B=RATE_3DB_BOB_HZ):
    """Linear quality laws fit over the sweep, scaled from its highest-mu point under saturation."""
    usable = [p for p in points if p.C_AB > 0 and not math.isnan(p.C_N)]
    if len(usable) < 2:
        return None
    mus = [p.mu for p in usable]
    slopes = fit_quality_slopes(
        mus,
        [
            [p.C_N / p.C_AB for p in usable],
            [max(0.0, p.E_I) for p in usable],
            [p.SKR / p.C_AB for p in usable],
        ],
    )
    baseline = max(usable, key=lambda p: p.mu)
    low = min(min(mus), 1e-5)
    high = max(mu_max, baseline.mu)
    return extrapolate_metrics(
        baseline.metrics(),
        slopes,
        SaturationSpec(1.0, rate_3db_A),
        channel_count=channel_count,
        mu_range=(low, high),
        points=int(math.ceil((high - low) / EXTRAPOLATION_STEP)) + 1,
        singles_A=baseline.S_A,
        singles_B=baseline.S_B,
        sat_B=SaturationSpec(1.0, rate_3db_B),
    )


@statsd(namespace="pipeline")
def extrapolate_stage(config: RunConfig, points):
    return extrapolate_sweep(
        points, config["extrapolation_channels"], config["extrapolation_mu_max"], config["rate_3db_A"], config["rate_3db_B"]
    )


def _write_sweep(path, points, comment):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write("# {}\n".format(comment))
        writer = csv.writer(handle)
        writer.writerow(SWEEP_COLUMNS)
        for point in points:
            writer.writerow(point.row())


def read_sweep(path):
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [row for row in csv.reader(line for line in handle if not line.startswith("#")) if row]
    if not rows or tuple(rows[0]) != SWEEP_COLUMNS:
        raise FormatError("{} is not a sweep table".format(path))
    try:
        return [PointResult(**{name: float(value) for name, value in zip(SWEEP_COLUMNS, row)}) for row in rows[1:]]
    except (TypeError, ValueError) as e:
        raise FormatError("malformed sweep table {}: {}".format(path, e))


def _write_extrapolation(path, extrapolation, comment):
    names = ("C_AB", "C_N", "C_I", "SKR")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write("# {}\n".format(comment))
        writer = csv.writer(handle)
        writer.writerow(("mu",) + names)
        for index, mu in enumerate(extrapolation.mu):
            writer.writerow([repr(float(mu))] + [repr(float(extrapolation.curves[name][index])) for name in names])


def _point_files(directory: Path, point: PointResult, comment):
    directory.mkdir(parents=True, exist_ok=True)
    for setting, matrix in point.matrices.items():
        write_matrix_csv(matrix, directory / "matrix-{}.csv".format(setting), comment)
    if point.rho is not None:
        write_density_matrix_csv(point.rho, directory / "rho.csv", comment)


def _plain(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


@statsd_catch(namespace="pipeline", counter_name="failed", exception=PairsimError)
def run_pipeline(config: RunConfig, jobs=1):
    config.require_for("run")
    app = current_app()
    output = Path(config["output_dir"])
    output.mkdir(parents=True, exist_ok=True)
    comment = config.provenance()
    manifest = Manifest(output / "MANIFEST.yaml", config.config_hash(), config["seed"])
    stage = "model"
    try:
        model = model_stage(config)
        manifest.complete(stage)

        stage = "simulate"
        points = simulate_stage(config, jobs)
        if app.statsd_client is not None:
            for index, point in enumerate(points):
                app.statsd_client.gauge("pipeline.point-{:02d}.visibility".format(index), point.visibility_raw)
        _write_sweep(output / "sweep.csv", points, comment)
        for index, point in enumerate(points):
            _point_files(output / "point-{:02d}".format(index), point, comment)
        manifest.complete(stage)

        stage = "extrapolate"
        extrapolation = extrapolate_stage(config, points)
        if extrapolation is not None:
            _write_extrapolation(output / "extrapolation.csv", extrapolation, comment)
        manifest.complete(stage)

        stage = "report"
        summary = {
            "version": __version__,
            "config_hash": config.config_hash(),
            "seed": config["seed"],
            "model": model,
            "points": [
                {name: _plain(value) for name, value in asdict(point).items() if name not in ("rho", "matrices")}
                for point in points
            ],
        }
        if extrapolation is not None:
            summary["extrapolation"] = {"channel_count": extrapolation.channel_count, "argmax_mu": extrapolation.argmax}
        with open(output / "summary.yaml", "w", encoding="utf-8") as handle:
            yaml.safe_dump(summary, handle, sort_keys=True)
        manifest.complete(stage)
    except Exception as e:
        manifest.fail(stage, e)
        app.logger.error("pipeline failed in stage {}: {}".format(stage, e))
        raise
    manifest.finish()
    app.logger.info("pipeline finished: {} points written to {}".format(len(points), output))
    return ReportBundle(output, model, points, extrapolation)
