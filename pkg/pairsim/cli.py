"""``pairsim`` command line.

Exit codes: 0 on success, 1 when a computation fails, 2 for usage and configuration errors.
"""

import functools
import math

import click
import numpy as np

from pairsim import PERIOD_PS, RATE_3DB_ALICE_HZ, RATE_3DB_BOB_HZ, REPETITION_RATE_HZ, __version__
from pairsim import logging as pairsim_logging
from pairsim.app import PairsimApp, push_app
from pairsim.clients.statsd.statsd_client import StatsdClient
from pairsim.coincidence import (
    BIN_NAMES,
    BinConfig,
    find_coincidences,
    guard_scan,
    read_matrix_csv,
    write_coincidence_summary,
    write_matrix_csv,
)
from pairsim.config import RunConfig, provenance_comment
from pairsim.errors import ConfigurationError, PairsimError
from pairsim.optics_model import (
    CrystalSpec,
    FitParams,
    SchmidtConvention,
    delta_model,
    filter_pair_grid,
    fit_jsi,
    heralding_efficiency,
    itu_filter,
    read_rate_matrix_csv,
    read_singles_csv,
    schmidt_decompose,
    write_jsi_csv,
)
from pairsim.pipeline import (
    detectors_from_config,
    extrapolate_sweep,
    optics_from_config,
    read_sweep,
    run_pipeline,
    scenario_from_config,
)
from pairsim.rate_theory import (
    MeasuredRates,
    PortRatios,
    accidental_rate,
    car,
    colorless_mu,
    fock_visibility,
    full_wavefunction_scaling,
    heralded_g2,
    multiphoton_visibility,
    mu_from_rates,
    secret_key_rate,
    visibility_corrected,
)
from pairsim.timetag_sim import generate_stream, load_from_file, replay_to_file, write_stream_csv
from pairsim.timewalk import YBinSpec, apply_correction, build_hist2d, calibrate, load_walk_table, save_walk_table
from pairsim.tomography import (
    MLE_MAX_ITERATIONS,
    SETTINGS,
    assemble_counts,
    coherent_information,
    entangled_rates,
    log_negativity,
    mle_reconstruct,
    purity,
    read_density_matrix_csv,
    write_counts,
    write_density_matrix_csv,
)


class SciInt(click.ParamType):
    """Integer that also accepts scientific notation such as ``1e6``."""

    name = "integer"

    def convert(self, value, param, ctx):
        if isinstance(value, int):
            return value
        try:
            number = float(value)
        except (TypeError, ValueError):
            self.fail("{!r} is not a number".format(value), param, ctx)
        if not number.is_integer():
            self.fail("{!r} is not an integer".format(value), param, ctx)
        return int(number)


SCI_INT = SciInt()
IN_FILE = click.Path(exists=True, dir_okay=False)
OUT_FILE = click.Path(dir_okay=False, writable=True)


def handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigurationError as e:
            raise click.UsageError(str(e))
        except (PairsimError, OSError) as e:
            raise click.ClickException(str(e))

    return wrapper


def spectral_options(func):
    options = [
        click.option("--fwhm-ghz", type=float, default=82.0, show_default=True, help="Filter FWHM."),
        click.option("--offset-ghz", type=float, default=50.0, show_default=True, help="Signal filter offset from degeneracy."),
        click.option("--order", type=SCI_INT, default=3, show_default=True, help="Super-Gaussian order."),
        click.option("--pump-nm", type=float, default=769.78, show_default=True, help="Pump center wavelength."),
        click.option("--pump-fwhm-ghz", type=float, default=243.0, show_default=True, help="Pump spectral FWHM."),
        click.option("--length-m", type=float, default=0.01, show_default=True, help="Crystal length."),
        click.option("--poling-um", type=float, default=18.3, show_default=True, help="Poling period."),
        click.option("--temperature", type=float, default=math.nan, help="Proxy temperature in °C [default: phase matched]."),
        click.option("--resolution", type=SCI_INT, default=256, show_default=True, help="Grid points per axis."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _spectral_config(fwhm_ghz, offset_ghz, order, pump_nm, pump_fwhm_ghz, length_m, poling_um, temperature, resolution):
    return RunConfig.from_mapping(
        {
            "filter_fwhm_hz": fwhm_ghz * 1e9,
            "filter_offset_hz": offset_ghz * 1e9,
            "filter_order": order,
            "pump_wavelength_nm": pump_nm,
            "pump_fwhm_hz": pump_fwhm_ghz * 1e9,
            "crystal_length_m": length_m,
            "poling_period_m": poling_um * 1e-6,
            "crystal_temperature_c": temperature,
            "jsi_resolution": resolution,
        }
    )


def _comment(**values):
    return provenance_comment({key: value for key, value in values.items() if value is not None}, values.get("seed", 0))


def _load_config(path, command):
    config = RunConfig.load(path) if path else RunConfig.from_mapping()
    if path:
        config.require_for(command)
    return config


@click.group()
@click.option("--debug", is_flag=True, help="Human-readable logs instead of JSON lines.")
@click.option("--jobs", type=SCI_INT, default=1, envvar="PAIRSIM_JOBS", show_default=True, help="Concurrent mu points in 'run'.")
@click.version_option(__version__, prog_name="pairsim")
@click.pass_context
def cli(ctx, debug, jobs):
    """Time-bin entangled pair source: spectral model, simulation and analysis."""
    if jobs < 1:
        raise click.BadParameter("must be at least 1", param_hint="--jobs")
    app = PairsimApp(debug=debug)
    pairsim_logging.init_app(app)
    StatsdClient().init_app(app)
    push_app(app)
    ctx.obj = {"app": app, "jobs": jobs}


@cli.command()
@spectral_options
@click.option("--narrow", is_flag=True, help="Cover only the passbands instead of the partner distribution.")
@click.option("--out", type=OUT_FILE, required=True, help="JSI grid CSV.")
@handle_errors
def jsi(narrow, out, **spectral):
    """Write the joint spectral intensity around the filter pair."""
    config = _spectral_config(**spectral)
    crystal, pump, filter_u, filter_v = optics_from_config(config)
    grid = filter_pair_grid(filter_u, filter_v, crystal, pump, config["jsi_resolution"], wide=not narrow)
    write_jsi_csv(grid, out, config.provenance())
    click.echo("{} x {} grid written to {}".format(len(grid.signal_wavelengths), len(grid.idler_wavelengths), out))


@cli.command()
@spectral_options
@click.option(
    "--convention",
    type=click.Choice([c.value for c in SchmidtConvention]),
    default=SchmidtConvention.REPORTED.value,
    show_default=True,
    help="Decompose the filtered intensity (reported) or its square-root amplitude (physical).",
)
@handle_errors
def schmidt(convention, **spectral):
    """Print the inverse Schmidt number 1/K of the filtered pair."""
    config = _spectral_config(**spectral)
    crystal, pump, filter_u, filter_v = optics_from_config(config)
    grid = filter_pair_grid(filter_u, filter_v, crystal, pump, config["jsi_resolution"], wide=False)
    result = schmidt_decompose(filter_u, filter_v, grid, SchmidtConvention(convention))
    click.echo("1/K = {:.4f}".format(result.inverse_K))
    click.echo("K = {:.4f}".format(result.schmidt_number_K))


@cli.command()
@spectral_options
@handle_errors
def delta(**spectral):
    """Print the geometric factor and heralding efficiencies of the filter pair."""
    config = _spectral_config(**spectral)
    crystal, pump, filter_u, filter_v = optics_from_config(config)
    grid = filter_pair_grid(filter_u, filter_v, crystal, pump, config["jsi_resolution"], wide=True)
    result = delta_model(filter_u, filter_v, grid)
    herald_u, herald_v = heralding_efficiency(filter_u, filter_v, grid)
    click.echo("delta_u = {:.4f}".format(result.delta_u))
    click.echo("delta_v = {:.4f}".format(result.delta_v))
    click.echo("delta = {:.4f}".format(result.mean))
    click.echo("heralding_u = {:.4f}".format(herald_u))
    click.echo("heralding_v = {:.4f}".format(herald_v))


@cli.command()
@click.option("--singles", type=IN_FILE, required=True, help="channel,rate_hz CSV.")
@click.option("--coincidences", type=IN_FILE, required=True, help="Signal x idler coincidence matrix CSV.")
@click.option("--fwhm-ghz", type=float, default=82.0, show_default=True, help="Filter FWHM of every channel.")
@click.option("--float", "floating", multiple=True, help="Parameter to fit (repeatable), e.g. crystal_temperature or eta:35.")
@click.option("--resolution", type=SCI_INT, default=128, show_default=True, help="Grid points per axis.")
@click.option("--seed", type=SCI_INT, default=0, show_default=True, help="Seed of the restart jitter.")
@handle_errors
def fit(singles, coincidences, fwhm_ghz, floating, resolution, seed):
    """Fit source parameters and path efficiencies to measured channel rates."""
    measured_singles = read_singles_csv(singles)
    measured_coincidences = read_rate_matrix_csv(coincidences)
    signal_channels = sorted({u for u, _ in measured_coincidences})
    idler_channels = sorted({v for _, v in measured_coincidences})
    filters_s = [itu_filter(channel, fwhm_ghz * 1e9) for channel in signal_channels]
    filters_i = [itu_filter(channel, fwhm_ghz * 1e9) for channel in idler_channels]
    initial = FitParams(
        path_efficiencies_eta={channel: 0.5 for channel in signal_channels + idler_channels},
        floating=frozenset(floating),
    )
    result = fit_jsi(
        measured_singles, measured_coincidences, initial, CrystalSpec(), filters_s, filters_i, resolution=resolution, seed=seed
    )
    for name in result.params.parameter_names():
        click.echo("{} = {!r}".format(name, float(result.params.get(name))))
    click.echo("objective = {:.6g}".format(result.objective))
    click.echo("converged = {}".format(str(result.converged).lower()))


@cli.command()
@click.option("--config", "config_path", type=IN_FILE, help="Run configuration; needs seed and duration.")
@click.option("--mu", type=float, required=True, help="Mean pair number per cycle.")
@click.option("--setting", type=click.Choice(sorted(SETTINGS)), help="Tomography phase setting.")
@click.option("--theta", type=float, help="Total interferometric phase in radians.")
@click.option("--out-a", type=OUT_FILE, required=True, help="Alice's stream.")
@click.option("--out-b", type=OUT_FILE, required=True, help="Bob's stream.")
@click.option("--csv", "as_csv", is_flag=True, help="Write channel,time_ps CSV instead of the binary format.")
@handle_errors
def simulate(config_path, mu, setting, theta, out_a, out_b, as_csv):
    """Generate Alice's and Bob's time-tag streams."""
    if setting is not None and theta is not None:
        raise click.UsageError("--setting and --theta are mutually exclusive")
    config = _load_config(config_path, "simulate")
    phase = SETTINGS[setting] if setting is not None else (theta or 0.0)
    stream_a, stream_b, truth = generate_stream(scenario_from_config(config, mu, phase), *detectors_from_config(config))
    for stream, path in ((stream_a, out_a), (stream_b, out_b)):
        if as_csv:
            write_stream_csv(stream, path, config.provenance())
        else:
            replay_to_file(stream, path)
    click.echo("pairs_emitted = {}".format(truth.pairs_emitted))
    click.echo("tags_a = {}".format(len(stream_a)))
    click.echo("tags_b = {}".format(len(stream_b)))


@cli.group()
def twc():
    """In-situ time-walk calibration and correction."""


@twc.command("calibrate")
@click.option("--in", "in_path", type=IN_FILE, required=True, help="Time-tag stream.")
@click.option("--out", type=OUT_FILE, required=True, help="Walk table CSV.")
@click.option("--period-ps", type=float, default=PERIOD_PS, show_default=True, help="Clock period.")
@click.option("--x-bin-ps", type=float, default=1.0, show_default=True, help="Width of the arrival-time bins.")
@click.option("--rows", type=SCI_INT, default=256, show_default=True, help="Logarithmic t' rows.")
@click.option("--template-min-ps", type=float, default=500e3, show_default=True, help="Lower t' edge of the template rows.")
@click.option("--template-max-ps", type=float, default=1e6, show_default=True, help="Upper t' edge of the template rows.")
@click.option("--min-row-counts", type=SCI_INT, default=1000, show_default=True, help="Minimum counts for a standalone t' row.")
@handle_errors
def twc_calibrate(in_path, out, period_ps, x_bin_ps, rows, template_min_ps, template_max_ps, min_row_counts):
    """Derive d(t') from a stream's own arrival-time histograms."""
    if template_min_ps >= template_max_ps:
        raise click.UsageError("--template-min-ps must be below --template-max-ps")
    stream = load_from_file(in_path)
    hist = build_hist2d(stream, period_ps, x_bin_ps, YBinSpec(rows=rows, maximum_ps=max(1e6, template_max_ps)))
    table = calibrate(hist, (template_min_ps, template_max_ps), min_row_counts)
    comment = _comment(
        in_path=in_path,
        period_ps=period_ps,
        x_bin_ps=x_bin_ps,
        rows=rows,
        template_min_ps=template_min_ps,
        template_max_ps=template_max_ps,
        min_row_counts=min_row_counts,
    )
    save_walk_table(table, out, comment)
    click.echo("rows = {}".format(len(table.t_prime_ps)))
    click.echo("flagged = {}".format(int(table.flagged.sum())))
    click.echo("max_correction_ps = {:.2f}".format(float(np.max(np.abs(table.correction_d)))))


@twc.command("apply")
@click.option("--in", "in_path", type=IN_FILE, required=True, help="Time-tag stream.")
@click.option("--table", type=IN_FILE, required=True, help="Walk table CSV.")
@click.option("--out", type=OUT_FILE, required=True, help="Corrected stream.")
@click.option("--csv", "as_csv", is_flag=True, help="Write channel,time_ps CSV instead of the binary format.")
@handle_errors
def twc_apply(in_path, table, out, as_csv):
    """Subtract the walk correction from every tag."""
    corrected = apply_correction(load_from_file(in_path), load_walk_table(table))
    if as_csv:
        write_stream_csv(corrected, out, _comment(table=table))
    else:
        replay_to_file(corrected, out)
    click.echo("tags = {}".format(len(corrected)))


@cli.command()
@click.option("--a", "path_a", type=IN_FILE, required=True, help="Alice's stream.")
@click.option("--b", "path_b", type=IN_FILE, required=True, help="Bob's stream.")
@click.option("--window-ps", type=float, default=100.0, show_default=True, help="Coincidence window.")
@click.option("--guard-ps", type=float, default=10.0, show_default=True, help="Width of each guard region.")
@click.option("--period-ps", type=float, default=PERIOD_PS, show_default=True, help="Clock period.")
@click.option("--out", type=OUT_FILE, help="Bin-pair matrix CSV.")
@click.option("--summary", type=OUT_FILE, help="Key-value summary.")
@click.option("--scan-guard", type=float, multiple=True, help="Also report retained counts at these guard widths.")
@handle_errors
def coinc(path_a, path_b, window_ps, guard_ps, period_ps, out, summary, scan_guard):
    """Pair Alice's and Bob's tags and count early/middle/late bin pairs."""
    stream_a, stream_b = load_from_file(path_a), load_from_file(path_b)
    config = BinConfig(period_ps, ((0.0, 80.0), (80.0, 160.0), (160.0, period_ps)), guard_width=guard_ps)
    result = find_coincidences(stream_a, stream_b, window_ps, config)
    if out:
        write_matrix_csv(result.matrix, out, _comment(window_ps=window_ps, guard_ps=guard_ps, period_ps=period_ps))
    if summary:
        write_coincidence_summary(result, summary, {"window_ps": window_ps, "guard_ps": guard_ps})
    click.echo("pairs = {}".format(result.pairs))
    click.echo("guard_excluded = {}".format(result.guard_excluded))
    for name, row in zip(BIN_NAMES, result.matrix):
        click.echo("{:>6} {}".format(name, " ".join("{:>10d}".format(int(x)) for x in row)))
    for point in guard_scan(stream_a, stream_b, scan_guard, window_ps, config) if scan_guard else []:
        click.echo("guard {:g} ps: retained = {} excluded = {}".format(point.guard_width, point.retained, point.guard_excluded))


@cli.group()
def tomo():
    """Density matrix reconstruction and entanglement measures."""


@tomo.command("reconstruct")
@click.option("--a", "matrix_a", type=IN_FILE, required=True, help="Bin-pair matrix at setting A (phase pi).")
@click.option("--b", "matrix_b", type=IN_FILE, required=True, help="Bin-pair matrix at setting B (phase pi/2).")
@click.option("--c", "matrix_c", type=IN_FILE, required=True, help="Bin-pair matrix at setting C (phase 0).")
@click.option("--duration", type=(float, float, float), default=(1.0, 1.0, 1.0), show_default=True, help="Seconds at A, B and C.")
@click.option("--out", type=OUT_FILE, required=True, help="Density matrix CSV.")
@click.option("--counts-out", type=OUT_FILE, help="Projector counts as key-value text.")
@click.option(
    "--max-iterations",
    type=SCI_INT,
    default=MLE_MAX_ITERATIONS,
    show_default=True,
    help="Iteration cap of the maximum-likelihood loop.",
)
@handle_errors
def tomo_reconstruct(matrix_a, matrix_b, matrix_c, duration, out, counts_out, max_iterations):
    """Maximum-likelihood two-qubit state from the three settings."""
    matrices = {"A": read_matrix_csv(matrix_a), "B": read_matrix_csv(matrix_b), "C": read_matrix_csv(matrix_c)}
    counts = assemble_counts(matrices, dict(zip("ABC", duration)))
    reconstruction = mle_reconstruct(counts, max_iterations=max_iterations)
    write_density_matrix_csv(reconstruction.rho, out, _comment(a=matrix_a, b=matrix_b, c=matrix_c))
    if counts_out:
        write_counts(counts, counts_out)
    click.echo("converged = {}".format(str(reconstruction.converged).lower()))
    click.echo("iterations = {}".format(reconstruction.iterations))
    click.echo("E_N = {:.4f}".format(log_negativity(reconstruction.rho)))
    click.echo("E_I = {:.4f}".format(coherent_information(reconstruction.rho)))


@tomo.command("measures")
@click.option("--rho", type=IN_FILE, required=True, help="Density matrix CSV.")
@click.option("--c-ab", type=float, help="Coincidence rate in Hz, to turn measures into rates.")
@click.option("--visibility", type=click.FloatRange(0, 1), default=1.0, show_default=True, help="Visibility for the key rate.")
@handle_errors
def tomo_measures(rho, c_ab, visibility):
    """Log-negativity, coherent information and purity of a state."""
    state = read_density_matrix_csv(rho)
    click.echo("E_N = {:.6f}".format(log_negativity(state)))
    click.echo("E_I = {:.6f}".format(coherent_information(state)))
    click.echo("purity = {:.6f}".format(purity(state)))
    if c_ab is not None:
        rates = entangled_rates(state, c_ab, visibility)
        click.echo("C_N = {:.6g}".format(rates.C_N))
        click.echo("C_I = {:.6g}".format(rates.C_I))
        click.echo("SKR = {:.6g}".format(rates.SKR))


@cli.group()
def calc():
    """Closed-form rate and visibility calculators."""


@calc.command("skr")
@click.option("--c-ab", type=float, required=True, help="Coincidence rate in Hz.")
@click.option("--visibility", type=click.FloatRange(0, 1), required=True, help="Visibility as a fraction.")
@click.option("--q", type=float, default=0.81, show_default=True, help="Basis reconciliation factor.")
@click.option("--f-ec", type=float, default=1.1, show_default=True, help="Error-correction inefficiency.")
@handle_errors
def calc_skr(c_ab, visibility, q, f_ec):
    """Asymptotic secret key rate."""
    click.echo("SKR = {:.6g}".format(secret_key_rate(c_ab, visibility, q, f_ec)))


@calc.command("mu")
@click.option("--singles-a", type=float, required=True, help="Alice's singles rate in Hz.")
@click.option("--singles-b", type=float, required=True, help="Bob's singles rate in Hz.")
@click.option("--coincidences", type=float, required=True, help="Coincidence rate in Hz.")
@click.option("--delta", type=float, default=0.393, show_default=True, help="Geometric factor.")
@click.option("--rate", type=float, default=REPETITION_RATE_HZ, show_default=True, help="Repetition rate in Hz.")
@handle_errors
def calc_mu(singles_a, singles_b, coincidences, delta, rate):
    """Mean pair number per cycle from singles and coincidences."""
    rates = MeasuredRates(singles_a, singles_b, coincidences, rate)
    click.echo("mu = {:.6g}".format(mu_from_rates(rates, delta)))
    click.echo("mu_colorless = {:.6g}".format(colorless_mu(singles_a, singles_b, coincidences, rate)))


@calc.command("g2")
@click.option("--singles-i", type=float, required=True, help="Idler singles rate in Hz.")
@click.option("--eta-i", type=float, required=True, help="Idler heralding efficiency.")
@click.option("--mu", type=float, help="Mean pair number, to report g2/mu.")
@click.option("--rate", type=float, default=REPETITION_RATE_HZ, show_default=True, help="Repetition rate in Hz.")
@handle_errors
def calc_g2(singles_i, eta_i, mu, rate):
    """Heralded second-order autocorrelation."""
    result = heralded_g2(singles_i, eta_i, rate, mu)
    click.echo("g2 = {:.6g}".format(result.g2))
    if result.slope is not None:
        click.echo("g2_per_mu = {:.6g}".format(result.slope))


@calc.command("visibility-mp")
@click.option("--mu-e", type=float, required=True, help="Early-bin mean pair number.")
@click.option("--mu-l", type=float, required=True, help="Late-bin mean pair number.")
@click.option("--fock", is_flag=True, help="Also evaluate the truncated Fock-space model.")
@click.option("--n-max", type=click.IntRange(2, 6), default=4, show_default=True, help="Photon-number cutoff of the Fock model.")
@handle_errors
def calc_visibility_mp(mu_e, mu_l, fock, n_max):
    """Visibility limited by multipair emission."""
    click.echo("V = {:.8f}".format(multiphoton_visibility(mu_e, mu_l)))
    if fock:
        click.echo("V_fock = {:.8f}".format(fock_visibility(mu_e, mu_l, n_max)))


@calc.command("vc")
@click.option("--c-max", type=float, required=True, help="Coincidence rate at the fringe maximum.")
@click.option("--c-min", type=float, required=True, help="Coincidence rate at the fringe minimum.")
@click.option("--c-acc", type=float, default=None, help="Accidentals; computed from --singles-* when omitted.")
@click.option("--singles-a", type=float, help="Alice's singles rate in Hz.")
@click.option("--singles-b", type=float, help="Bob's singles rate in Hz.")
@click.option("--delta", type=float, default=0.393, show_default=True, help="Geometric factor.")
@click.option("--eta-a", type=float, default=0.2, show_default=True, help="Alice's heralding efficiency.")
@click.option("--eta-b", type=float, default=0.2, show_default=True, help="Bob's heralding efficiency.")
@click.option("--rate", type=float, default=REPETITION_RATE_HZ, show_default=True, help="Repetition rate in Hz.")
@handle_errors
def calc_vc(c_max, c_min, c_acc, singles_a, singles_b, delta, eta_a, eta_b, rate):
    """Visibility after subtracting accidental coincidences."""
    if c_acc is not None and (singles_a is not None or singles_b is not None):
        raise click.UsageError("give either --c-acc or --singles-a/--singles-b")
    if c_acc is None:
        if singles_a is None or singles_b is None:
            raise click.UsageError("--singles-a and --singles-b are needed without --c-acc")
        c_acc = accidental_rate(singles_a, singles_b, rate, delta, eta_a, eta_b).total
    click.echo("C_acc = {:.6g}".format(c_acc))
    click.echo("V_C = {:.4f} %".format(visibility_corrected(c_max, c_min, c_acc)))


@calc.command("fullwave")
@click.option("--c", "c_measured", type=float, required=True, help="Measured coincidence rate.")
@click.option("--r-a", type=float, required=True, help="Alice's port ratio.")
@click.option("--r-b", type=float, required=True, help="Bob's port ratio.")
@click.option(
    "--mode",
    type=click.Choice(["all_ports", "two_branches_from_min"]),
    default="all_ports",
    show_default=True,
    help="Scale by every port pair or by the two branches seen from the smaller ratio.",
)
@handle_errors
def calc_fullwave(c_measured, r_a, r_b, mode):
    """Coincidence rate of the full wavefunction from one monitored port pair."""
    click.echo("C_full = {:.6g}".format(full_wavefunction_scaling(c_measured, PortRatios(r_a, r_b), mode)))


@calc.command("car")
@click.option("--c", "c_measured", type=float, required=True, help="Coincidence rate in Hz.")
@click.option("--c-acc", type=float, required=True, help="Accidental coincidence rate in Hz.")
@handle_errors
def calc_car(c_measured, c_acc):
    """Coincidence-to-accidental ratio."""
    click.echo("CAR = {:.6g}".format(car(c_measured, c_acc)))


@cli.command()
@click.option("--sweep", type=IN_FILE, required=True, help="sweep.csv written by 'run'.")
@click.option(
    "--channels",
    type=SCI_INT,
    multiple=True,
    default=(8, 16, 60),
    show_default=True,
    help="Channel-pair counts to project to (repeatable).",
)
@click.option("--mu-max", type=float, default=0.05, show_default=True, help="Upper end of the mu range.")
@click.option("--rate-3db-a", type=float, default=RATE_3DB_ALICE_HZ, show_default=True, help="Alice's detector 3 dB count rate.")
@click.option("--rate-3db-b", type=float, default=RATE_3DB_BOB_HZ, show_default=True, help="Bob's detector 3 dB count rate.")
@handle_errors
def extrapolate(sweep, channels, mu_max, rate_3db_a, rate_3db_b):
    """Project the sweep's rates to higher mu and to many channel pairs."""
    result = extrapolate_sweep(read_sweep(sweep), 1, mu_max, rate_3db_a, rate_3db_b)
    if result is None:
        raise click.ClickException("need at least two sweep points with tomography results")
    for name, mu in result.argmax.items():
        click.echo("argmax {} = {:.6g}".format(name, mu))
    for count in channels:
        peaks = {name: float(values.max()) for name, values in result.totals(count).items()}
        click.echo("{} channels: {}".format(count, " ".join("{} = {:.4g}".format(name, peak) for name, peak in peaks.items())))


@cli.command()
@click.option("--config", "config_path", type=IN_FILE, required=True, help="Run configuration.")
@click.pass_context
@handle_errors
def run(ctx, config_path):
    """Full chain for a mu sweep: model, simulate, count, reconstruct, extrapolate, report."""
    config = _load_config(config_path, "run")
    bundle = run_pipeline(config, jobs=ctx.obj["jobs"])
    click.echo("delta = {:.4f}".format(bundle.model["delta_mean"]))
    click.echo("1/K = {:.4f}".format(bundle.model["inverse_K_reported"]))
    for point in bundle.points:
        click.echo("mu = {:.3g}: V = {:.2f} +- {:.2f} %".format(point.mu, point.visibility_raw, point.visibility_error))
    click.echo("outputs in {}".format(bundle.output_dir))


@cli.command()
@click.option(
    "--fwhm-ghz",
    type=float,
    multiple=True,
    default=(200.0, 100.0, 82.0, 41.0),
    show_default=True,
    help="Filter widths to compare (repeatable).",
)
@click.option("--offset-ghz", type=float, default=50.0, show_default=True, help="Signal filter offset from degeneracy.")
@click.option("--resolution", type=SCI_INT, default=256, show_default=True, help="Grid points per axis.")
@click.option("--mu", type=float, default=1e-3, show_default=True, help="Mean pair number of the simulated check.")
@click.option("--duration", type=float, default=0.01, show_default=True, help="Simulated seconds per filter width; 0 skips it.")
@click.option("--seed", type=SCI_INT, default=0, show_default=True, help="Seed of the simulated check.")
@handle_errors
def narrowband(fwhm_ghz, offset_ghz, resolution, mu, duration, seed):
    """Compare the classic and geometric-factor mu estimates as the filters narrow."""
    click.echo("fwhm_ghz delta colorless/mu corrected/mu")
    for width in fwhm_ghz:
        config = _spectral_config(width, offset_ghz, 3, 769.78, 243.0, 0.01, 18.3, math.nan, resolution)
        crystal, pump, filter_u, filter_v = optics_from_config(config)
        factor = delta_model(filter_u, filter_v, filter_pair_grid(filter_u, filter_v, crystal, pump, resolution)).mean
        colorless, corrected = 1.0 / factor, 1.0
        if duration > 0:
            scenario_config = RunConfig.from_mapping({"delta": factor, "duration": duration, "seed": seed})
            stream_a, stream_b, _ = generate_stream(scenario_from_config(scenario_config, mu, SETTINGS["B"]))
            c_ab = find_coincidences(stream_a, stream_b).matrix.sum() / duration
            s_a, s_b = len(stream_a) / duration, len(stream_b) / duration
            colorless = colorless_mu(s_a, s_b, c_ab, scenario_config["repetition_rate"]) / mu
            corrected = mu_from_rates(MeasuredRates(s_a, s_b, c_ab, scenario_config["repetition_rate"]), factor) / mu
        click.echo("{:8g} {:.4f} {:.4f} {:.4f}".format(width, factor, colorless, corrected))


def main():
    cli(prog_name="pairsim")
