"""
Particle flows that migrate predicted particles toward the measurements.

Both flows integrate ``dm = f dlambda + upsilon dw`` over the synthetic time
``lambda`` on a uniform grid. The drift ``f`` solves a 4x4 system per
particle whose matrix, the bracket, combines the prior curvature ``-P^-1``
with the likelihood curvature.
"""

import dataclasses
import enum
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from phdflow.errors import InvalidArgumentError, NumericalError
from phdflow.model import (
    MEASUREMENT_DIM,
    STATE_DIM,
    Measurement,
    Particle,
    clamp_elevation,
    gradient_tensor,
    hessian_tensor,
    likelihood_matrix,
    log_likelihood_gradient,
    log_likelihood_hessian,
    measurement_array,
    nearest_measurement_indices,
    position_residuals,
    wrap_azimuth,
)
from phdflow.phd import UNDERFLOW_FLOOR, FilterConfig, ParticlePopulation
from phdflow.types import BoolArray, FloatArray, IntArray

logger = logging.getLogger(__name__)


class FlowKind(str, enum.Enum):
    NONE = "none"
    NPF = "npf"
    IPF = "ipf"


@dataclasses.dataclass(frozen=True)
class FlowConfig:
    n_lambda_steps: int = 20
    diffusion_coeff: float = 0.0
    sensor_resolution: float = 0.1
    jitter: float = 1e-8
    max_jitter: float = 1e-2
    definite_bracket: bool = True
    # innovation standard deviations; particles with no measurement inside stay put
    gate: Optional[float] = 3.0

    def __post_init__(self) -> None:
        if self.n_lambda_steps < 1:
            raise InvalidArgumentError(f"n_lambda_steps must be at least 1, got {self.n_lambda_steps}")
        if not (math.isfinite(self.diffusion_coeff) and self.diffusion_coeff >= 0.0):
            raise InvalidArgumentError(f"diffusion_coeff must be non-negative, got {self.diffusion_coeff}")
        if not self.sensor_resolution > 0.0:
            raise InvalidArgumentError(f"sensor_resolution must be positive, got {self.sensor_resolution}")
        if not 0.0 < self.jitter <= self.max_jitter:
            raise InvalidArgumentError(f"jitter must be in (0, max_jitter], got {self.jitter}")
        if self.gate is not None and not (math.isfinite(self.gate) and self.gate > 0.0):
            raise InvalidArgumentError(f"gate must be positive, got {self.gate}")

    @property
    def lambda_step(self) -> float:
        return 1.0 / self.n_lambda_steps

    def lambdas(self) -> FloatArray:
        """``j * dlambda`` for ``j = 1 .. N``; the last value is exactly 1."""

        return np.arange(1, self.n_lambda_steps + 1) / self.n_lambda_steps


def _inverse_covariances(covariances: FloatArray) -> FloatArray:
    try:
        inverses = np.linalg.inv(covariances)
    except np.linalg.LinAlgError:
        raise NumericalError("particle covariance is singular")
    return 0.5 * (inverses + np.swapaxes(inverses, -1, -2))


def _definite(brackets: FloatArray, covariances: FloatArray) -> FloatArray:
    """
    Cap bracket eigenvalues at the prior curvature ``-1 / lambda_max(P)``.

    A bracket of the form ``-P^-1 + lambda hess ln h`` never exceeds that
    ceiling, so only brackets with positive likelihood curvature are touched.
    """

    eigenvalues, eigenvectors = np.linalg.eigh(brackets)
    ceiling = -1.0 / np.linalg.eigvalsh(covariances)[:, -1]
    above = eigenvalues[:, -1] > ceiling * (1.0 - 1e-9)
    if not np.any(above):
        return brackets
    capped = np.minimum(eigenvalues[above], ceiling[above, None])
    vectors = eigenvectors[above]
    brackets = brackets.copy()
    brackets[above] = np.einsum("nij,nj,nkj->nik", vectors, capped, vectors)
    return brackets


def _solve_one(bracket: FloatArray, drive: FloatArray, config: FlowConfig) -> Optional[FloatArray]:
    jitter = config.jitter
    identity = np.eye(STATE_DIM)
    while jitter <= config.max_jitter * (1.0 + 1e-9):
        try:
            # the bracket is negative definite, so jitter is subtracted
            solution = scipy.linalg.solve(bracket - jitter * identity, drive, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            solution = None
        if solution is not None and np.all(np.isfinite(solution)):
            return -np.asarray(solution)
        jitter *= 10.0
    return None


def solve_flows(
    brackets: FloatArray,
    drives: FloatArray,
    covariances: FloatArray,
    config: FlowConfig,
) -> Tuple[FloatArray, FloatArray]:
    """
    Drifts ``f = -B^-1 d`` for a batch of brackets ``B`` and drives ``d``.

    Returns the drifts and a boolean mask of rows whose solve failed even with
    the largest jitter; those rows get a zero drift.
    """

    brackets = 0.5 * (brackets + np.swapaxes(brackets, -1, -2))
    if config.definite_bracket and len(brackets):
        brackets = _definite(brackets, covariances)

    flows = np.zeros_like(drives)
    failed = np.zeros(len(drives), dtype=bool)
    retry = np.ones(len(drives), dtype=bool)
    try:
        flows = -np.linalg.solve(brackets, drives[..., None])[..., 0]
        retry = ~np.all(np.isfinite(flows), axis=1)
    except np.linalg.LinAlgError:
        flows = np.zeros_like(drives)
    for index in np.flatnonzero(retry):
        solution = _solve_one(brackets[index], drives[index], config)
        if solution is None:
            flows[index] = 0.0
            failed[index] = True
        else:
            flows[index] = solution
    if np.any(failed):
        logger.debug("flow solve failed for %d particles", int(failed.sum()))
    return flows, failed


def npf_flows(
    states: FloatArray,
    covariances: FloatArray,
    measurements: FloatArray,
    measurement_cov: FloatArray,
    lam: float,
    config: FlowConfig,
) -> Tuple[FloatArray, FloatArray]:
    """``f = -[-P^-1 + lambda hess ln h]^-1 grad ln h`` against each particle's nearest measurement."""

    if not 0.0 <= lam <= 1.0:
        raise InvalidArgumentError(f"lambda must be in [0, 1], got {lam}")
    nearest = nearest_measurement_indices(states, measurements)
    gradients = log_likelihood_gradient(states, measurements, measurement_cov)[np.arange(len(states)), nearest]
    brackets = -_inverse_covariances(covariances) + lam * log_likelihood_hessian(measurement_cov)
    return solve_flows(brackets, gradients, covariances, config)


def npf_flow(
    particle: Particle,
    measurements: Sequence[Measurement],
    measurement_cov: FloatArray,
    lam: float,
    config: Optional[FlowConfig] = None,
) -> FloatArray:
    flows, _ = npf_flows(
        particle.state.to_array()[None, :],
        np.asarray(particle.covariance, dtype=float)[None, :, :],
        measurement_array(measurements),
        measurement_cov,
        lam,
        config or FlowConfig(),
    )
    return flows[0]


@dataclasses.dataclass(frozen=True)
class IntensitySnapshot:
    """Per-measurement intensity terms of one frame, frozen for one lambda step."""

    surviving_likelihoods: FloatArray
    birth_intensities: FloatArray
    normalizers: FloatArray


def birth_intensity(born_weight: float, surviving_likelihoods: FloatArray, surviving_weights: FloatArray) -> float:
    """``gamma * max(0, 1 - sum h w)`` for one born particle and one measurement."""

    explained = float(np.dot(surviving_likelihoods, surviving_weights))
    return born_weight * max(0.0, 1.0 - explained)


def _birth_intensities(pop: ParticlePopulation, surviving_likelihoods: FloatArray, n_measurements: int) -> FloatArray:
    explained = pop.weights[: pop.surviving_count] @ surviving_likelihoods
    unexplained = np.maximum(0.0, 1.0 - explained)
    born_weights = pop.weights[pop.surviving_count :]
    intensities = born_weights[:, None] * unexplained[None, :]
    if pop.born_origins is not None:
        own = pop.born_origins[:, None] == np.arange(n_measurements)[None, :]
        intensities = np.where(own, intensities, 0.0)
    return intensities


def _normalizers(
    clutter_intensity: float,
    birth_intensities: FloatArray,
    surviving_likelihoods: FloatArray,
    surviving_weights: FloatArray,
) -> FloatArray:
    normalizers = clutter_intensity + birth_intensities.sum(axis=0) + surviving_weights @ surviving_likelihoods
    floored = normalizers < UNDERFLOW_FLOOR
    if np.any(floored):
        logger.warning("intensity normalizer clamped for measurements %s", np.flatnonzero(floored).tolist())
        normalizers = np.where(floored, UNDERFLOW_FLOOR, normalizers)
    return normalizers


def intensity_snapshot(
    pop: ParticlePopulation,
    measurements: FloatArray,
    measurement_cov: FloatArray,
    clutter_intensity: float,
) -> IntensitySnapshot:
    surviving = slice(0, pop.surviving_count)
    likelihoods = likelihood_matrix(pop.states[surviving], measurements, measurement_cov)
    births = _birth_intensities(pop, likelihoods, len(measurements))
    normalizers = _normalizers(clutter_intensity, births, likelihoods, pop.weights[surviving])
    return IntensitySnapshot(likelihoods, births, normalizers)


def intensity_normalizer(
    index: int,
    measurements: Sequence[Measurement],
    pop: ParticlePopulation,
    measurement_cov: FloatArray,
    clutter_intensity: float,
) -> float:
    """``kappa + sum S + sum h w`` for measurement ``index``; only particles born around it add ``S``."""

    if not 0 <= index < len(measurements):
        raise InvalidArgumentError(f"measurement {index} out of range for {len(measurements)} measurements")
    snapshot = intensity_snapshot(pop, measurement_array(measurements), measurement_cov, clutter_intensity)
    return float(snapshot.normalizers[index])


def ipf_flows(
    pop: ParticlePopulation,
    indices: IntArray,
    snapshot: IntensitySnapshot,
    measurements: FloatArray,
    measurement_cov: FloatArray,
    detection_probability: float,
    lam: float,
    config: FlowConfig,
) -> Tuple[FloatArray, FloatArray]:
    """
    Intensity flow of the surviving particles ``indices``:
    ``f = -[sum_r lambda p_D hess h / G_r - P^-1]^-1 sum_r p_D grad h / G_r``.
    """

    if not 0.0 <= lam <= 1.0:
        raise InvalidArgumentError(f"lambda must be in [0, 1], got {lam}")
    states = pop.states[indices]
    covariances = pop.covariances[indices]
    scale = detection_probability / snapshot.normalizers
    drives = np.einsum("nmi,m->ni", gradient_tensor(states, measurements, measurement_cov), scale)
    curvature = np.einsum("nmij,m->nij", hessian_tensor(states, measurements, measurement_cov), scale)
    brackets = lam * curvature - _inverse_covariances(covariances)
    return solve_flows(brackets, drives, covariances, config)


def ipf_flow(
    index: int,
    pop: ParticlePopulation,
    measurements: Sequence[Measurement],
    filter_config: FilterConfig,
    lam: float,
    config: Optional[FlowConfig] = None,
) -> FloatArray:
    if not 0 <= index < pop.surviving_count:
        raise InvalidArgumentError(f"particle {index} is not a surviving particle")
    measurement_values = measurement_array(measurements)
    snapshot = intensity_snapshot(pop, measurement_values, filter_config.measurement_noise_cov, filter_config.kappa)
    flows, _ = ipf_flows(
        pop,
        np.array([index]),
        snapshot,
        measurement_values,
        filter_config.measurement_noise_cov,
        filter_config.detection_probability,
        lam,
        config or FlowConfig(),
    )
    return flows[0]


def _step_sizes(delta: FloatArray) -> FloatArray:
    return np.sqrt(np.sum(delta * delta, axis=1))


def inside_gate(
    states: FloatArray,
    covariances: FloatArray,
    measurements: FloatArray,
    measurement_cov: FloatArray,
    gate: float,
) -> BoolArray:
    """Particles with some measurement within ``gate`` standard deviations of the innovation ``H P H^T + R``."""

    residuals = position_residuals(states, measurements)
    innovations = covariances[:, :MEASUREMENT_DIM, :MEASUREMENT_DIM] + measurement_cov
    distances = np.einsum("nmi,nij,nmj->nm", residuals, np.linalg.inv(innovations), residuals)
    return np.asarray(np.min(distances, axis=1) <= gate * gate)


def cap_steps(delta: FloatArray, states: FloatArray, measurements: FloatArray) -> FloatArray:
    """Shorten every step whose position part is longer than the distance to the nearest measurement."""

    residuals = position_residuals(states, measurements)
    reach = np.sqrt(np.min(np.einsum("nmi,nmi->nm", residuals, residuals), axis=1))
    lengths = _step_sizes(delta[:, :MEASUREMENT_DIM])
    too_long = lengths > reach
    factors = np.where(too_long, reach / np.where(too_long, lengths, 1.0), 1.0)
    return delta * factors[:, None]


def migrate(
    pop: ParticlePopulation,
    measurements: Sequence[Measurement],
    flow_kind: FlowKind,
    flow_config: FlowConfig,
    filter_config: FilterConfig,
    rng: np.random.Generator,
) -> ParticlePopulation:
    """
    Move particles through the synthetic time grid.

    NPF moves every particle, IPF only the surviving ones. Particles outside
    the gate of every measurement do not move at all. No drift step is longer
    than the distance to the nearest measurement. A particle whose step falls
    below the sensor resolution is frozen for the rest of the grid and so is a
    particle whose solve failed.
    """

    flow_kind = FlowKind(flow_kind)
    if flow_kind is FlowKind.NONE or not measurements or not len(pop):
        return pop
    movers = np.arange(len(pop) if flow_kind is FlowKind.NPF else pop.surviving_count)
    if not len(movers):
        return pop

    values = measurement_array(measurements)
    measurement_cov = filter_config.measurement_noise_cov
    base_seed = int(rng.integers(0, 2**63 - 1))
    streams: List[np.random.Generator] = []
    if flow_config.diffusion_coeff > 0.0:
        streams = [np.random.default_rng(seq) for seq in np.random.SeedSequence(base_seed).spawn(len(movers))]

    current = pop
    active = np.ones(len(movers), dtype=bool)
    if flow_config.gate is not None:
        active = inside_gate(pop.states[movers], pop.covariances[movers], values, measurement_cov, flow_config.gate)
        logger.debug("%d of %d particles outside the flow gate", int((~active).sum()), len(movers))
    n_failed = 0
    for lam in flow_config.lambdas():
        if not np.any(active):
            break
        indices = movers[active]
        if flow_kind is FlowKind.NPF:
            flows, failed = npf_flows(
                current.states[indices],
                current.covariances[indices],
                values,
                measurement_cov,
                float(lam),
                flow_config,
            )
        else:
            snapshot = intensity_snapshot(current, values, measurement_cov, filter_config.kappa)
            flows, failed = ipf_flows(
                current,
                indices,
                snapshot,
                values,
                measurement_cov,
                filter_config.detection_probability,
                float(lam),
                flow_config,
            )

        delta = cap_steps(flows * flow_config.lambda_step, current.states[indices], values)
        if streams:
            noise = np.array([streams[i].standard_normal(STATE_DIM) for i in np.flatnonzero(active)])
            delta = delta + flow_config.diffusion_coeff * noise
        still = failed | (_step_sizes(delta) < flow_config.sensor_resolution)
        delta[still] = 0.0

        states = current.states.copy()
        moved = states[indices] + delta
        moved[:, 0] = wrap_azimuth(moved[:, 0])
        moved[:, 1] = clamp_elevation(moved[:, 1])
        states[indices] = moved
        current = current.with_states(states)

        n_failed += int(failed.sum())
        active[np.flatnonzero(active)[still]] = False

    if n_failed:
        logger.warning("%d particle flow solves failed and their particles were frozen", n_failed)
    logger.debug("%s flow left %d of %d particles moving", flow_kind.value, int(active.sum()), len(movers))
    return current
