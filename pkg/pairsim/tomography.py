"""Two-qubit time-bin tomography from three interferometer phase settings.

Single-qubit projectors are e, l (time bins) and D, R ((|e> + e^{i phi}|l>)/sqrt 2 at phi = 0, pi/2).
A monitored interferometer output sees a time bin with weight 1/4 and the middle bin with
weight 1/2, so each two-qubit projector enters the likelihood with the product of its weights.
"""

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import linalg

from pairsim.errors import ConfigurationError, DegenerateError, DomainError, FormatError
from pairsim.rate_theory import RateMetrics, secret_key_rate

logger = logging.getLogger(__name__)

SETTINGS = {"A": math.pi, "B": math.pi / 2, "C": 0.0}
SINGLE_LABELS = ("e", "l", "D", "R")
LABELS = tuple(a + b for a, b in itertools.product(SINGLE_LABELS, SINGLE_LABELS))
TIME_WEIGHT = 0.25
MIDDLE_WEIGHT = 0.5

HERMITIAN_TOLERANCE = 1e-12
EIGENVALUE_FLOOR = -1e-10
MLE_MAX_ITERATIONS = 50000
MLE_TOLERANCE = 1e-12


def _ket(phase=None, index=None):
    if index is not None:
        return np.eye(2, dtype=complex)[index]
    return np.array([1.0, np.exp(1j * phase)], dtype=complex) / math.sqrt(2)


SINGLE_KETS = {"e": _ket(index=0), "l": _ket(index=1), "D": _ket(0.0), "R": _ket(math.pi / 2)}
SINGLE_WEIGHTS = {"e": TIME_WEIGHT, "l": TIME_WEIGHT, "D": MIDDLE_WEIGHT, "R": MIDDLE_WEIGHT}


def _projector(ket):
    return np.outer(ket, ket.conj())


LABEL_PAIRS = list(itertools.product(SINGLE_LABELS, SINGLE_LABELS))
PROJECTORS = np.array([np.kron(_projector(SINGLE_KETS[a]), _projector(SINGLE_KETS[b])) for a, b in LABEL_PAIRS])
WEIGHTS = np.array([SINGLE_WEIGHTS[a] * SINGLE_WEIGHTS[b] for a, b in LABEL_PAIRS])


@dataclass
class TomoCounts:
    counts: np.ndarray
    labels: tuple[str, ...] = LABELS
    weights: np.ndarray = field(default_factory=lambda: WEIGHTS.copy())
    reference_duration: float = 1.0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (len(self.labels),):
            raise DomainError("expected {} counts, got shape {}".format(len(self.labels), self.counts.shape))
        if np.any(self.counts < 0):
            raise DomainError("counts must be nonnegative")

    def as_dict(self):
        return dict(zip(self.labels, self.counts.tolist()))


@dataclass
class Reconstruction:
    rho: np.ndarray
    converged: bool
    iterations: int
    log_likelihoods: list = field(default_factory=list)


def bell_state():
    ket = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)
    return np.outer(ket, ket.conj())


def werner_state(v):
    if not 0 <= v <= 1:
        raise DomainError("Werner visibility {} outside [0, 1]".format(v))
    return v * bell_state() + (1 - v) * np.eye(4) / 4


def random_density_matrix(rng, rank=4):
    ginibre = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = ginibre @ ginibre.conj().T
    return rho / np.trace(rho).real


def validate_density_matrix(rho):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise DomainError("density matrix must be 4x4")
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOLERANCE:
        raise DomainError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1) > HERMITIAN_TOLERANCE:
        raise DomainError("density matrix trace is {}".format(np.trace(rho).real))
    if linalg.eigvalsh(rho).min() < EIGENVALUE_FLOOR:
        raise DomainError("density matrix has a negative eigenvalue")
    return rho


def is_informationally_complete(projectors=PROJECTORS):
    vectors = np.array([p.ravel() for p in projectors])
    return np.linalg.matrix_rank(vectors.conj() @ vectors.T) == 16


def expected_setting_matrix(rho, theta, scale=1.0):
    """Mean 3x3 bin-pair counts at total phase ``theta`` (carried by Alice's interferometer)."""
    rho = np.asarray(rho, dtype=complex)
    early, late = TIME_WEIGHT * _projector(SINGLE_KETS["e"]), TIME_WEIGHT * _projector(SINGLE_KETS["l"])
    alice = [early, MIDDLE_WEIGHT * _projector(_ket(theta)), late]
    bob = [early, MIDDLE_WEIGHT * _projector(_ket(0.0)), late]
    matrix = np.zeros((3, 3))
    for i, j in itertools.product(range(3), range(3)):
        matrix[i, j] = scale * np.trace(np.kron(alice[i], bob[j]) @ rho).real
    return matrix


def assemble_counts(matrices: Mapping[str, np.ndarray], durations: Mapping[str, float]):
    """Map the 3x3 bin-pair matrices of settings A, B and C onto the 16 projectors.

    Counts are rescaled to the mean duration. Time-time and time-middle cells carry no phase, so
    they are averaged over the three settings; a time-middle cell feeds both the D and R
    projectors of the middle-bin side. Middle-middle cells give DD (setting C), DR and RD
    (setting B, repeated) and RR (setting A).
    """
    missing = [name for name in SETTINGS if name not in matrices or name not in durations]
    if missing:
        raise ConfigurationError("missing tomography setting(s): {}".format(", ".join(missing)))
    if any(durations[name] <= 0 for name in SETTINGS):
        raise DomainError("setting durations must be positive")
    reference = float(np.mean([durations[name] for name in SETTINGS]))
    scaled = {name: np.asarray(matrices[name], dtype=float) * reference / durations[name] for name in SETTINGS}
    if any(m.shape != (3, 3) for m in scaled.values()):
        raise DomainError("each setting needs a 3x3 bin-pair matrix")
    average = sum(scaled.values()) / len(scaled)

    time_bin = {"e": 0, "l": 2}
    middle = {
        ("D", "D"): scaled["C"][1, 1],
        ("D", "R"): scaled["B"][1, 1],
        ("R", "D"): scaled["B"][1, 1],
        ("R", "R"): scaled["A"][1, 1],
    }
    counts = []
    for a, b in LABEL_PAIRS:
        if (a, b) in middle:
            counts.append(middle[(a, b)])
        else:
            counts.append(average[time_bin.get(a, 1), time_bin.get(b, 1)])
    return TomoCounts(np.array(counts), reference_duration=reference)


def forward_counts(rho, scale=1.0):
    """Mean counts scale * w_k * Tr(P_k rho) of every projector."""
    rho = np.asarray(rho, dtype=complex)
    return scale * WEIGHTS * np.einsum("kij,ji->k", PROJECTORS, rho).real


def poisson_counts(rho, total, rng):
    """Poisson bin-pair matrices of settings A, B and C assembled onto the projectors.

    Each setting is acquired for its own duration, long enough that its 3x3 matrix has an
    expected sum of ``total``.
    """
    matrices, durations = {}, {}
    for name, theta in SETTINGS.items():
        expected = expected_setting_matrix(rho, theta)
        durations[name] = total / expected.sum()
        matrices[name] = rng.poisson(durations[name] * expected).astype(float)
    return assemble_counts(matrices, durations)


def _inverse_sqrt(matrix):
    values, vectors = linalg.eigh(matrix)
    return (vectors / np.sqrt(values)) @ vectors.conj().T


def _log_likelihood(frequencies, probabilities):
    observed = frequencies > 0
    return float(frequencies[observed] @ np.log(probabilities[observed]))


def _project_psd(rho):
    rho = (rho + rho.conj().T) / 2
    values, vectors = linalg.eigh(rho)
    values = np.clip(values, 0, None)
    rho = (vectors * values) @ vectors.conj().T
    return rho / np.trace(rho).real


def mle_reconstruct(counts: TomoCounts, max_iterations=MLE_MAX_ITERATIONS, tolerance=MLE_TOLERANCE):
    """Iterative R rho R maximum-likelihood estimate, started from the maximally mixed state.

    The weighted projectors are whitened by H^(-1/2), H = sum_k w_k P_k, so they form a POVM and
    the iteration runs on sigma = H^(1/2) rho H^(1/2). A step that would lower the likelihood is
    diluted, (1 + eps R)/(1 + eps), until it does not. Iteration stops once the log-likelihood
    gains less than ``tolerance`` relative to its magnitude.
    """
    total = counts.counts.sum()
    if total <= 0:
        raise DegenerateError("no tomography counts")
    operators = counts.weights[:, None, None] * PROJECTORS
    h = operators.sum(axis=0)
    h_inv_sqrt = _inverse_sqrt(h)
    povm = h_inv_sqrt @ operators @ h_inv_sqrt
    frequencies = counts.counts / total
    observed = frequencies > 0
    identity = np.eye(4)

    def probabilities(state):
        return np.clip(np.einsum("kij,ji->k", povm, state).real, 1e-300, None)

    def to_rho(state):
        rho = h_inv_sqrt @ state @ h_inv_sqrt
        return rho / np.trace(rho).real

    sigma = h / np.trace(h).real
    likelihood = _log_likelihood(frequencies, probabilities(sigma))
    likelihoods = [likelihood]
    rho = to_rho(sigma)
    converged = False
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        ratios = np.where(observed, frequencies / probabilities(sigma), 0.0)
        r = np.einsum("k,kij->ij", ratios, povm)
        candidate = r @ sigma @ r
        candidate /= np.trace(candidate).real
        candidate_likelihood = _log_likelihood(frequencies, probabilities(candidate))
        epsilon = 1.0
        while candidate_likelihood < likelihood and epsilon > 1e-12:
            diluted = (identity + epsilon * r) / (1 + epsilon)
            candidate = diluted @ sigma @ diluted
            candidate /= np.trace(candidate).real
            candidate_likelihood = _log_likelihood(frequencies, probabilities(candidate))
            epsilon /= 2
        if candidate_likelihood < likelihood:
            converged = True
            break
        increment = candidate_likelihood - likelihood
        sigma, likelihood = candidate, candidate_likelihood
        likelihoods.append(likelihood)
        rho = to_rho(sigma)
        if increment <= tolerance * max(1.0, abs(likelihood)):
            converged = True
            break
    if not converged:
        logger.warning("MLE stopped after {} iterations without converging".format(iteration))
    return Reconstruction(_project_psd(rho), converged, iteration, likelihoods)


def partial_transpose(rho, subsystem="A"):
    tensor = np.asarray(rho).reshape(2, 2, 2, 2)
    if subsystem == "A":
        return tensor.transpose(2, 1, 0, 3).reshape(4, 4)
    if subsystem == "B":
        return tensor.transpose(0, 3, 2, 1).reshape(4, 4)
    raise DomainError("subsystem must be 'A' or 'B'")


def partial_trace(rho, keep="B"):
    tensor = np.asarray(rho).reshape(2, 2, 2, 2)
    if keep == "B":
        return np.einsum("ijik->jk", tensor)
    if keep == "A":
        return np.einsum("ijkj->ik", tensor)
    raise DomainError("keep must be 'A' or 'B'")


def von_neumann_entropy(rho):
    values = np.clip(linalg.eigvalsh(np.asarray(rho)), 0, None)
    values = values[values > 0]
    return float(-(values * np.log2(values)).sum())


def purity(rho):
    rho = np.asarray(rho)
    return float(np.trace(rho @ rho).real)


def log_negativity(rho):
    return float(math.log2(linalg.svdvals(partial_transpose(rho)).sum()))


def coherent_information(rho):
    joint = von_neumann_entropy(rho)
    a_to_b = von_neumann_entropy(partial_trace(rho, "B")) - joint
    b_to_a = von_neumann_entropy(partial_trace(rho, "A")) - joint
    return max(a_to_b, b_to_a)


def fidelity(rho, sigma):
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    values, vectors = linalg.eigh(np.asarray(rho, dtype=complex))
    root = (vectors * np.sqrt(np.clip(values, 0, None))) @ vectors.conj().T
    inner = np.clip(linalg.eigvalsh(root @ np.asarray(sigma, dtype=complex) @ root), 0, None)
    return float(np.sqrt(inner).sum() ** 2)


def entangled_rates(rho, C_AB, visibility, mu=math.nan):
    """Rates of ebits bounded by log-negativity and coherent information, plus the key rate."""
    e_n = log_negativity(rho)
    e_i = coherent_information(rho)
    return RateMetrics(mu, C_AB, C_AB * e_n, C_AB * max(0.0, e_i), secret_key_rate(C_AB, visibility))


def chi_square(counts: TomoCounts, rho):
    expected = forward_counts(rho)
    expected = counts.counts.sum() * expected / expected.sum()
    used = expected > 0
    return float((((counts.counts - expected) ** 2)[used] / expected[used]).sum())


def write_counts(counts: TomoCounts, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# reference_duration = {!r}\n".format(counts.reference_duration))
        for label, value in zip(counts.labels, counts.counts):
            handle.write("{} = {!r}\n".format(label, float(value)))


def read_counts(path):
    values: dict[str, float] = {}
    reference = 1.0
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            stripped = line.strip()
            if stripped.startswith("# reference_duration"):
                reference = float(stripped.partition("=")[2])
                continue
            if not stripped or stripped.startswith("#"):
                continue
            label, sep, value = stripped.partition("=")
            label = label.strip()
            if not sep or label not in LABELS:
                raise FormatError("line {}: expected '<projector> = <count>'".format(number))
            try:
                values[label] = float(value)
            except ValueError:
                raise FormatError("line {}: bad count {!r}".format(number, value.strip()))
    missing = [label for label in LABELS if label not in values]
    if missing:
        raise FormatError("missing projector counts: {}".format(", ".join(missing)))
    return TomoCounts(np.array([values[label] for label in LABELS]), reference_duration=reference)


def write_density_matrix_csv(rho, path, comment=None):
    rho = np.asarray(rho, dtype=complex)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if comment:
            handle.write("# {}\n".format(comment))
        writer = csv.writer(handle)
        writer.writerow(["row"] + ["re{}".format(j) for j in range(4)] + ["im{}".format(j) for j in range(4)])
        for i, row in enumerate(rho):
            writer.writerow([i] + [repr(float(x)) for x in row.real] + [repr(float(x)) for x in row.imag])


def read_density_matrix_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [row for row in csv.reader(line for line in handle if not line.startswith("#")) if row]
    try:
        body = np.array([[float(x) for x in row[1:9]] for row in rows[1:]])
        rho = body[:, :4] + 1j * body[:, 4:]
    except (ValueError, IndexError) as e:
        raise FormatError("malformed density matrix {}: {}".format(path, e))
    if rho.shape != (4, 4):
        raise FormatError("density matrix {} is not 4x4".format(path))
    return rho


def reconstruct_from_matrices(matrices, durations, **kwargs) -> tuple[TomoCounts, Reconstruction]:
    counts = assemble_counts(matrices, durations)
    return counts, mle_reconstruct(counts, **kwargs)


def average_measures(states, C_AB=None, visibility=None) -> dict[str, tuple[float, float]]:
    """Mean and standard deviation of the entanglement measures over repeated reconstructions."""
    e_n = np.array([log_negativity(rho) for rho in states])
    e_i = np.array([coherent_information(rho) for rho in states])
    out = {"E_N": (float(e_n.mean()), float(e_n.std())), "E_I": (float(e_i.mean()), float(e_i.std()))}
    if C_AB is not None and visibility is not None:
        out["C_N"] = (float(C_AB * e_n.mean()), float(C_AB * e_n.std()))
    return out
