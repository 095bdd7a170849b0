"""
Sequential Monte Carlo PHD recursion.

The population keeps its particles as parallel arrays so every stage of a
frame is a handful of vectorized numpy operations. Weights are never
normalized: their sum is the expected number of targets.
"""

import dataclasses
import functools
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag
from sklearn.cluster import KMeans

from phdflow.errors import DegeneratePopulationError, InvalidArgumentError
from phdflow.model import (
    DEFAULT_MEASUREMENT_NOISE,
    DEFAULT_PROCESS_NOISE,
    STATE_DIM,
    Measurement,
    NoiseModel,
    Particle,
    TargetState,
    check_spd,
    likelihood_matrix,
    measurement_array,
    propagate,
    transition_matrix,
    wrap_azimuth,
    wrap_difference,
)
from phdflow.types import FloatArray, IntArray

logger = logging.getLogger(__name__)

DOA_AREA = 360.0 * 180.0
DEFAULT_CLUTTER_INTENSITY = 1.0 / DOA_AREA
COVARIANCE_JITTER = 1e-6
UNDERFLOW_FLOOR = 1e-300


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _probability(name: str, value: float) -> None:
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise InvalidArgumentError(f"{name} must be in [0, 1], got {value}")


@dataclasses.dataclass(frozen=True, eq=False)
class FilterConfig:
    survival_probability: float = 0.99
    detection_probability: float = 0.9
    # None means "derive from the scenario clutter rate"
    clutter_intensity: Optional[float] = None
    # a lone clutter return ends up with about p_D * gamma / kappa of a target
    birth_weight: float = 1e-8
    births_per_measurement: int = 50
    particles_per_target: int = 50
    ess_fraction: float = 0.5
    max_targets: int = 10
    birth_spread: FloatArray = dataclasses.field(default_factory=lambda: np.diag([4.0, 4.0]))
    process_noise_cov: FloatArray = dataclasses.field(default_factory=lambda: DEFAULT_PROCESS_NOISE.copy())
    measurement_noise_cov: FloatArray = dataclasses.field(default_factory=lambda: DEFAULT_MEASUREMENT_NOISE.copy())
    covariance_jitter: float = COVARIANCE_JITTER

    def __post_init__(self) -> None:
        _probability("survival_probability", self.survival_probability)
        _probability("detection_probability", self.detection_probability)
        if self.clutter_intensity is not None and not (
            math.isfinite(self.clutter_intensity) and self.clutter_intensity >= 0.0
        ):
            raise InvalidArgumentError(f"clutter_intensity must be non-negative, got {self.clutter_intensity}")
        if not (math.isfinite(self.birth_weight) and self.birth_weight >= 0.0):
            raise InvalidArgumentError(f"birth_weight must be non-negative, got {self.birth_weight}")
        for name in ("births_per_measurement", "particles_per_target", "max_targets"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0.0 < self.ess_fraction <= 1.0:
            raise InvalidArgumentError(f"ess_fraction must be in (0, 1], got {self.ess_fraction}")
        if not self.covariance_jitter > 0.0:
            raise InvalidArgumentError(f"covariance_jitter must be positive, got {self.covariance_jitter}")
        for name in ("birth_spread", "process_noise_cov", "measurement_noise_cov"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        if self.birth_spread.shape != (2, 2):
            raise InvalidArgumentError("birth_spread must be 2x2")
        check_spd(self.birth_spread, "birth_spread")
        self.noise

    @functools.cached_property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.process_noise_cov, self.measurement_noise_cov)

    @property
    def kappa(self) -> float:
        return DEFAULT_CLUTTER_INTENSITY if self.clutter_intensity is None else self.clutter_intensity

    def for_clutter_rate(self, clutter_rate: float) -> "FilterConfig":
        """Fill in the clutter intensity of a scenario emitting ``clutter_rate`` false alarms per frame."""

        if self.clutter_intensity is not None:
            return self
        return dataclasses.replace(self, clutter_intensity=clutter_rate / DOA_AREA)


@dataclasses.dataclass(frozen=True, eq=False)
class ParticlePopulation:
    states: FloatArray
    weights: FloatArray
    covariances: FloatArray
    surviving_count: int
    born_count: int = 0
    # measurement index each born particle was spawned around
    born_origins: Optional[IntArray] = None

    def __post_init__(self) -> None:
        n = len(self.weights)
        if self.states.shape != (n, STATE_DIM) or self.covariances.shape != (n, STATE_DIM, STATE_DIM):
            raise InvalidArgumentError(
                f"inconsistent population arrays: {self.states.shape}, {self.weights.shape}, {self.covariances.shape}"
            )
        if self.surviving_count + self.born_count != n:
            raise InvalidArgumentError(
                f"surviving ({self.surviving_count}) and born ({self.born_count}) counts do not add up to {n}"
            )
        if self.born_origins is not None and len(self.born_origins) != self.born_count:
            raise InvalidArgumentError("born_origins must have one entry per born particle")
        if n and not (np.all(np.isfinite(self.weights)) and np.all(self.weights >= 0.0)):
            raise InvalidArgumentError("particle weights must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def empty(cls) -> "ParticlePopulation":
        return cls(np.zeros((0, STATE_DIM)), np.zeros(0), np.zeros((0, STATE_DIM, STATE_DIM)), 0, 0)

    @classmethod
    def from_particles(
        cls,
        particles: Sequence[Particle],
        surviving_count: Optional[int] = None,
    ) -> "ParticlePopulation":
        if not particles:
            return cls.empty()
        surviving_count = len(particles) if surviving_count is None else surviving_count
        return cls(
            np.array([p.state.to_array() for p in particles]),
            np.array([p.weight for p in particles], dtype=float),
            np.array([p.covariance for p in particles], dtype=float),
            surviving_count,
            len(particles) - surviving_count,
        )

    @property
    def particles(self) -> List[Particle]:
        return [
            Particle(TargetState.from_array(state), float(weight), covariance)
            for state, weight, covariance in zip(self.states, self.weights, self.covariances)
        ]

    def with_weights(self, weights: FloatArray) -> "ParticlePopulation":
        return dataclasses.replace(self, weights=weights)

    def with_states(self, states: FloatArray) -> "ParticlePopulation":
        return dataclasses.replace(self, states=states)

    def with_covariances(self, covariances: FloatArray) -> "ParticlePopulation":
        return dataclasses.replace(self, covariances=covariances)

    def combine(self, born: "ParticlePopulation") -> "ParticlePopulation":
        """Surviving particles of this population followed by ``born``."""

        return ParticlePopulation(
            np.concatenate([self.states, born.states]),
            np.concatenate([self.weights, born.weights]),
            np.concatenate([self.covariances, born.covariances]),
            len(self),
            len(born),
            born.born_origins,
        )


@dataclasses.dataclass(frozen=True)
class ExtractionResult:
    estimates: List[Tuple[TargetState, float]]
    assignment: IntArray
    reduced: bool = False


def predict(pop: ParticlePopulation, dt: float, config: FilterConfig, rng: np.random.Generator) -> ParticlePopulation:
    if not dt > 0.0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if not len(pop):
        return ParticlePopulation.empty()
    transition = transition_matrix(dt)
    cholesky = np.linalg.cholesky(config.noise.process_noise_cov)
    noise = rng.standard_normal(pop.states.shape) @ cholesky.T
    covariances = transition @ pop.covariances @ transition.T + config.process_noise_cov
    return ParticlePopulation(
        propagate(pop.states, dt, noise),
        pop.weights * config.survival_probability,
        covariances,
        surviving_count=len(pop),
        born_count=0,
    )


def spawn_births(
    measurements: Sequence[Measurement],
    config: FilterConfig,
    rng: np.random.Generator,
) -> ParticlePopulation:
    """``N_B`` particles drawn uniformly in a +-3 sigma box around every measurement."""

    if not measurements:
        return ParticlePopulation.empty()
    centers = measurement_array(measurements)
    n_per = config.births_per_measurement
    half_width = 3.0 * np.sqrt(np.diag(config.birth_spread))
    area = float(np.prod(2.0 * half_width))

    positions = centers[:, None, :] + rng.uniform(-half_width, half_width, size=(len(centers), n_per, 2))
    rate_cholesky = np.linalg.cholesky(config.noise.process_noise_cov[2:, 2:])
    rates = rng.standard_normal((len(centers), n_per, 2)) @ rate_cholesky.T

    states = np.concatenate([positions, rates], axis=-1).reshape(-1, STATE_DIM)
    states[:, 0] = wrap_azimuth(states[:, 0])
    states[:, 1] = np.clip(states[:, 1], -90.0, 90.0)

    # gamma / (N_B * p(m|z)) with p the uniform box density 1 / area
    weights = np.full(len(states), config.birth_weight * area / n_per)
    covariance = block_diag(3.0 * config.birth_spread, config.process_noise_cov[2:, 2:])
    covariances = np.broadcast_to(covariance, (len(states), STATE_DIM, STATE_DIM)).copy()
    origins = np.repeat(np.arange(len(centers), dtype=np.int64), n_per)
    return ParticlePopulation(
        states,
        weights,
        covariances,
        surviving_count=0,
        born_count=len(states),
        born_origins=origins,
    )


def measurement_ratios(
    likelihoods: FloatArray,
    weights: FloatArray,
    detection_probability: float,
    clutter_intensity: float,
) -> FloatArray:
    """``p_D h[i, r] / (kappa + sum_i p_D h[i, r] w[i])`` with underflowing columns zeroed."""

    denominators = clutter_intensity + detection_probability * (likelihoods * weights[:, None]).sum(axis=0)
    underflow = denominators < UNDERFLOW_FLOOR
    if np.any(underflow):
        logger.warning(
            "weight update denominator underflow for measurements %s; their terms are dropped",
            np.flatnonzero(underflow).tolist(),
        )
    safe = np.where(underflow, 1.0, denominators)
    return np.where(underflow[None, :], 0.0, detection_probability * likelihoods / safe[None, :])


def update_weights(
    pop: ParticlePopulation,
    measurements: Sequence[Measurement],
    config: FilterConfig,
) -> ParticlePopulation:
    missed = 1.0 - config.detection_probability
    if not measurements or not len(pop):
        return pop.with_weights(pop.weights * missed)
    likelihoods = likelihood_matrix(pop.states, measurement_array(measurements), config.measurement_noise_cov)
    ratios = measurement_ratios(likelihoods, pop.weights, config.detection_probability, config.kappa)
    return pop.with_weights((missed + ratios.sum(axis=1)) * pop.weights)


def estimate_count(pop: ParticlePopulation) -> float:
    return float(pop.weights.sum())


def target_count(pop: ParticlePopulation, max_targets: int) -> int:
    return min(max(round_half_up(estimate_count(pop)), 0), max_targets)


def _embed(states: FloatArray) -> FloatArray:
    # azimuth on a circle of radius 180/pi keeps local distances in degrees
    radius = 180.0 / math.pi
    azimuth = np.radians(states[:, 0])
    return np.column_stack([radius * np.cos(azimuth), radius * np.sin(azimuth), states[:, 1]])


def _circular_mean(azimuths: FloatArray, weights: FloatArray) -> float:
    radians = np.radians(azimuths)
    return float(np.degrees(np.arctan2(np.sum(weights * np.sin(radians)), np.sum(weights * np.cos(radians)))))


def _unwrapped(states: FloatArray, weights: FloatArray) -> FloatArray:
    """Copy of ``states`` whose azimuths are continuous around their circular mean."""

    center = _circular_mean(states[:, 0], weights)
    unwrapped = states.copy()
    unwrapped[:, 0] = center + wrap_difference(states[:, 0], center)
    return unwrapped


def _normalized(weights: FloatArray) -> FloatArray:
    total = weights.sum()
    if total > 0.0:
        return weights / total
    return np.full(len(weights), 1.0 / len(weights))


def weighted_mean_state(states: FloatArray, weights: FloatArray) -> TargetState:
    normalized = _normalized(weights)
    mean = normalized @ _unwrapped(states, normalized)
    return TargetState.from_array(mean.tolist())


def extract_states(pop: ParticlePopulation, n_targets: int, rng: np.random.Generator) -> ExtractionResult:
    """Weighted k-means over the particle cloud, one estimate per cluster."""

    if n_targets < 0:
        raise InvalidArgumentError(f"n_targets must be non-negative, got {n_targets}")
    unassigned = np.full(len(pop), -1, dtype=np.int64)
    if n_targets == 0 or not len(pop):
        return ExtractionResult([], unassigned, reduced=n_targets > 0)

    reduced = False
    k = n_targets
    if k > len(pop):
        logger.warning("requested %d clusters from %d particles; reducing", k, len(pop))
        k, reduced = len(pop), True

    # the seed is drawn even for k == 1 so the generator advances identically
    seed = int(rng.integers(0, 2**31 - 1))
    if k == 1:
        labels = np.zeros(len(pop), dtype=np.int64)
    else:
        sample_weight = pop.weights if pop.weights.sum() > 0.0 else None
        kmeans = KMeans(n_clusters=k, init="k-means++", n_init=1, random_state=seed)
        labels = kmeans.fit(_embed(pop.states), sample_weight=sample_weight).labels_.astype(np.int64)

    estimates: List[Tuple[TargetState, float]] = []
    for label in range(k):
        members = labels == label
        if not np.any(members):
            continue
        weights = pop.weights[members]
        estimates.append((weighted_mean_state(pop.states[members], weights), float(weights.sum())))
    return ExtractionResult(estimates, labels, reduced)


def update_covariances(
    pop: ParticlePopulation,
    assignment: IntArray,
    process_noise_cov: FloatArray = DEFAULT_PROCESS_NOISE,
    jitter: float = COVARIANCE_JITTER,
) -> ParticlePopulation:
    """Set every clustered particle's covariance to its cluster's weighted spread."""

    assignment = np.asarray(assignment)
    if assignment.shape != (len(pop),):
        raise InvalidArgumentError(f"assignment must have one label per particle, got shape {assignment.shape}")
    covariances = pop.covariances.copy()
    for label in np.unique(assignment[assignment >= 0]):
        members = assignment == label
        if np.count_nonzero(members) == 1:
            covariances[members] = process_noise_cov
            continue
        weights = _normalized(pop.weights[members])
        states = _unwrapped(pop.states[members], weights)
        deviations = states - weights @ states
        covariance = (weights[:, None] * deviations).T @ deviations
        covariances[members] = 0.5 * (covariance + covariance.T) + jitter * np.eye(STATE_DIM)
    return pop.with_covariances(covariances)


def ess(weights: FloatArray) -> float:
    weights = np.asarray(weights, dtype=float)
    total = float(weights.sum())
    if not total > 0.0:
        raise DegeneratePopulationError("effective sample size of a population without positive weight")
    return total * total / float(np.sum(weights * weights))


def needs_resampling(pop: ParticlePopulation, config: FilterConfig) -> bool:
    if not len(pop) or not estimate_count(pop) > 0.0:
        return False
    return ess(pop.weights) < config.ess_fraction * len(pop)


def resample_count(pop: ParticlePopulation, config: FilterConfig) -> int:
    return config.particles_per_target * max(1, round_half_up(estimate_count(pop)))


def resample(pop: ParticlePopulation, target_count: int, rng: np.random.Generator) -> ParticlePopulation:
    """Systematic resampling to ``target_count`` equally weighted particles carrying the same total mass."""

    if target_count < 1:
        raise InvalidArgumentError(f"target_count must be positive, got {target_count}")
    total = estimate_count(pop)
    if not len(pop) or not total > 0.0:
        raise DegeneratePopulationError("cannot resample a population without positive weight")

    cumulative = np.cumsum(pop.weights) / total
    cumulative[-1] = 1.0
    positions = (rng.random() + np.arange(target_count)) / target_count
    ancestors = np.searchsorted(cumulative, positions, side="right")
    return ParticlePopulation(
        pop.states[ancestors].copy(),
        np.full(target_count, total / target_count),
        pop.covariances[ancestors].copy(),
        surviving_count=target_count,
        born_count=0,
    )
