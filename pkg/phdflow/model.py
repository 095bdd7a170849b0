"""
Angular state-space model of a DOA source.

A target state is ``[azimuth, elevation, azimuth_rate, elevation_rate]`` in
degrees and degrees per second. Measurements are ``[azimuth, elevation]``
pairs observed through ``H = [I | 0]``. Azimuth is circular, so every
difference is taken as the signed shortest arc; elevation is linear.
"""

import dataclasses
import math
from typing import Sequence, Tuple, Union

import numpy as np

from phdflow.errors import EmptyMeasurementError, InvalidArgumentError, NumericalError
from phdflow.types import FloatArray

STATE_DIM = 4
MEASUREMENT_DIM = 2
OBSERVATION_MATRIX: FloatArray = np.hstack([np.eye(MEASUREMENT_DIM), np.zeros((MEASUREMENT_DIM, 2))])

DEFAULT_PROCESS_NOISE: FloatArray = np.diag([1.0, 1.0, 0.25, 0.25])
DEFAULT_MEASUREMENT_NOISE: FloatArray = np.diag([4.0, 4.0])


def _check_finite(*values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise InvalidArgumentError(f"non-finite value in {values}")


def wrap_azimuth(azimuth: Union[float, FloatArray]) -> FloatArray:
    wrapped = np.mod(azimuth, 360.0)
    # np.mod of a tiny negative number rounds up to 360.0
    return np.where(wrapped >= 360.0, 0.0, wrapped)


def clamp_elevation(elevation: Union[float, FloatArray]) -> FloatArray:
    return np.clip(elevation, -90.0, 90.0)


def wrap_difference(a: Union[float, FloatArray], b: Union[float, FloatArray]) -> FloatArray:
    """Vectorized signed shortest arc from ``b`` to ``a`` in ``(-180, 180]``."""

    diff = np.mod(np.subtract(a, b), 360.0)
    return np.where(diff > 180.0, diff - 360.0, diff)


def wrap_angular_difference(a: float, b: float) -> float:
    _check_finite(a, b)
    return float(wrap_difference(a, b))


@dataclasses.dataclass(frozen=True)
class TargetState:
    azimuth: float
    elevation: float
    azimuth_rate: float = 0.0
    elevation_rate: float = 0.0

    def __post_init__(self) -> None:
        _check_finite(self.azimuth, self.elevation, self.azimuth_rate, self.elevation_rate)
        object.__setattr__(self, "azimuth", float(wrap_azimuth(self.azimuth)))
        object.__setattr__(self, "elevation", float(clamp_elevation(self.elevation)))
        object.__setattr__(self, "azimuth_rate", float(self.azimuth_rate))
        object.__setattr__(self, "elevation_rate", float(self.elevation_rate))

    @property
    def position(self) -> FloatArray:
        return np.array([self.azimuth, self.elevation])

    def to_array(self) -> FloatArray:
        return np.array([self.azimuth, self.elevation, self.azimuth_rate, self.elevation_rate])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "TargetState":
        if len(values) != STATE_DIM:
            raise InvalidArgumentError(f"state needs {STATE_DIM} components, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclasses.dataclass(frozen=True)
class Measurement:
    azimuth: float
    elevation: float

    def __post_init__(self) -> None:
        _check_finite(self.azimuth, self.elevation)
        object.__setattr__(self, "azimuth", float(wrap_azimuth(self.azimuth)))
        object.__setattr__(self, "elevation", float(clamp_elevation(self.elevation)))

    @property
    def position(self) -> FloatArray:
        return np.array([self.azimuth, self.elevation])


@dataclasses.dataclass(frozen=True, eq=False)
class Particle:
    state: TargetState
    weight: float
    covariance: FloatArray

    def __post_init__(self) -> None:
        if not (math.isfinite(self.weight) and self.weight >= 0.0):
            raise InvalidArgumentError(f"particle weight must be finite and non-negative, got {self.weight}")
        if np.shape(self.covariance) != (STATE_DIM, STATE_DIM):
            raise InvalidArgumentError(f"particle covariance must be {STATE_DIM}x{STATE_DIM}")


def check_spd(matrix: FloatArray, name: str, max_condition: float = 1e12) -> FloatArray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NumericalError(f"{name} has non-finite entries")
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
        raise NumericalError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{name} is not positive definite")
    if np.linalg.cond(matrix) > max_condition:
        raise NumericalError(f"{name} is ill-conditioned (condition number above {max_condition:g})")
    return matrix


@dataclasses.dataclass(frozen=True, eq=False)
class NoiseModel:
    process_noise_cov: FloatArray = dataclasses.field(default_factory=lambda: DEFAULT_PROCESS_NOISE.copy())
    measurement_noise_cov: FloatArray = dataclasses.field(default_factory=lambda: DEFAULT_MEASUREMENT_NOISE.copy())
    max_condition: float = 1e8

    def __post_init__(self) -> None:
        if np.shape(self.process_noise_cov) != (STATE_DIM, STATE_DIM):
            raise InvalidArgumentError("process noise covariance must be 4x4")
        if np.shape(self.measurement_noise_cov) != (MEASUREMENT_DIM, MEASUREMENT_DIM):
            raise InvalidArgumentError("measurement noise covariance must be 2x2")
        check_spd(self.process_noise_cov, "process noise covariance", self.max_condition)
        check_spd(self.measurement_noise_cov, "measurement noise covariance", self.max_condition)


def transition_matrix(dt: float) -> FloatArray:
    return np.array(
        [
            [1.0, 0.0, dt, 0.0],
            [0.0, 1.0, 0.0, dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def propagate(states: FloatArray, dt: float, noise: FloatArray) -> FloatArray:
    """Constant-angular-velocity step of an ``(N, 4)`` state array with additive noise."""

    if not dt > 0.0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    states = np.asarray(states, dtype=float)
    moved = states.copy()
    moved[..., 0] += states[..., 2] * dt
    moved[..., 1] += states[..., 3] * dt
    moved += noise
    moved[..., 0] = wrap_azimuth(moved[..., 0])
    moved[..., 1] = clamp_elevation(moved[..., 1])
    return moved


def transition(state: TargetState, dt: float, noise: Sequence[float] = (0.0, 0.0, 0.0, 0.0)) -> TargetState:
    _check_finite(dt, *noise)
    return TargetState.from_array(propagate(state.to_array(), dt, np.asarray(noise, dtype=float)).tolist())


def measure(state: TargetState, noise: Sequence[float] = (0.0, 0.0)) -> Measurement:
    _check_finite(*noise)
    return Measurement(state.azimuth + float(noise[0]), state.elevation + float(noise[1]))


def measurement_array(measurements: Sequence[Measurement]) -> FloatArray:
    if not measurements:
        return np.zeros((0, MEASUREMENT_DIM))
    return np.array([[z.azimuth, z.elevation] for z in measurements], dtype=float)


def _gaussian_terms(measurement_cov: FloatArray) -> Tuple[FloatArray, float]:
    """Precision matrix and normalizing constant of ``N(0, R)``."""

    measurement_cov = np.asarray(measurement_cov, dtype=float)
    if measurement_cov.shape != (MEASUREMENT_DIM, MEASUREMENT_DIM):
        raise InvalidArgumentError("measurement covariance must be 2x2")
    try:
        cholesky = np.linalg.cholesky(measurement_cov)
    except np.linalg.LinAlgError:
        raise NumericalError("measurement covariance is singular or not positive definite")
    sqrt_det = float(np.prod(np.diag(cholesky)))
    if not sqrt_det > 0.0 or not math.isfinite(sqrt_det):
        raise NumericalError("measurement covariance is singular")
    inverse_cholesky = np.linalg.inv(cholesky)
    precision = inverse_cholesky.T @ inverse_cholesky
    return 0.5 * (precision + precision.T), 1.0 / (2.0 * math.pi * sqrt_det)


def position_residuals(states: FloatArray, measurements: FloatArray) -> FloatArray:
    """Wrapped residuals ``H m - z`` with shape ``(N, M, 2)``."""

    states = np.atleast_2d(states)
    measurements = np.asarray(measurements, dtype=float).reshape(-1, MEASUREMENT_DIM)
    residuals = np.empty((states.shape[0], measurements.shape[0], MEASUREMENT_DIM))
    residuals[..., 0] = wrap_difference(states[:, None, 0], measurements[None, :, 0])
    residuals[..., 1] = states[:, None, 1] - measurements[None, :, 1]
    return residuals


def likelihood_matrix(states: FloatArray, measurements: FloatArray, measurement_cov: FloatArray) -> FloatArray:
    """Gaussian likelihoods ``h[i, r]`` of every state against every measurement."""

    precision, norm = _gaussian_terms(measurement_cov)
    residuals = position_residuals(states, measurements)
    mahalanobis = np.einsum("nmi,ij,nmj->nm", residuals, precision, residuals)
    return norm * np.exp(-0.5 * mahalanobis)


def gradient_tensor(states: FloatArray, measurements: FloatArray, measurement_cov: FloatArray) -> FloatArray:
    """``-h H^T R^-1 (H m - z)`` for every pair, shape ``(N, M, 4)``."""

    precision, norm = _gaussian_terms(measurement_cov)
    residuals = position_residuals(states, measurements)
    scaled = np.einsum("ij,nmj->nmi", precision, residuals)
    h = norm * np.exp(-0.5 * np.einsum("nmi,nmi->nm", residuals, scaled))
    gradients = np.zeros(residuals.shape[:2] + (STATE_DIM,))
    gradients[..., :MEASUREMENT_DIM] = -h[..., None] * scaled
    return gradients


def hessian_tensor(states: FloatArray, measurements: FloatArray, measurement_cov: FloatArray) -> FloatArray:
    """``h H^T [R^-1 e e^T R^-1 - R^-1] H`` for every pair, shape ``(N, M, 4, 4)``."""

    precision, norm = _gaussian_terms(measurement_cov)
    residuals = position_residuals(states, measurements)
    scaled = np.einsum("ij,nmj->nmi", precision, residuals)
    h = norm * np.exp(-0.5 * np.einsum("nmi,nmi->nm", residuals, scaled))
    block = np.einsum("nmi,nmj->nmij", scaled, scaled) - precision
    hessians = np.zeros(residuals.shape[:2] + (STATE_DIM, STATE_DIM))
    hessians[..., :MEASUREMENT_DIM, :MEASUREMENT_DIM] = h[..., None, None] * block
    return hessians


def log_likelihood_gradient(states: FloatArray, measurements: FloatArray, measurement_cov: FloatArray) -> FloatArray:
    """``grad ln h = grad h / h`` in closed form, so it stays finite where ``h`` underflows."""

    precision, _ = _gaussian_terms(measurement_cov)
    residuals = position_residuals(states, measurements)
    gradients = np.zeros(residuals.shape[:2] + (STATE_DIM,))
    gradients[..., :MEASUREMENT_DIM] = -np.einsum("ij,nmj->nmi", precision, residuals)
    return gradients


def log_likelihood_hessian(measurement_cov: FloatArray) -> FloatArray:
    """``hess ln h = hess h / h - grad h grad h^T / h^2``, which reduces to ``-H^T R^-1 H``."""

    precision, _ = _gaussian_terms(measurement_cov)
    return -(OBSERVATION_MATRIX.T @ precision @ OBSERVATION_MATRIX)


def gaussian_likelihood(state: TargetState, z: Measurement, measurement_cov: FloatArray) -> float:
    return float(likelihood_matrix(state.to_array(), z.position, measurement_cov)[0, 0])


def likelihood_gradient(state: TargetState, z: Measurement, measurement_cov: FloatArray) -> FloatArray:
    return gradient_tensor(state.to_array(), z.position, measurement_cov)[0, 0]


def likelihood_hessian(state: TargetState, z: Measurement, measurement_cov: FloatArray) -> FloatArray:
    return hessian_tensor(state.to_array(), z.position, measurement_cov)[0, 0]


def nearest_measurement_indices(states: FloatArray, measurements: FloatArray) -> FloatArray:
    """Index of the wrapped-nearest measurement per state; ties go to the lowest index."""

    measurements = np.asarray(measurements, dtype=float).reshape(-1, MEASUREMENT_DIM)
    if measurements.shape[0] == 0:
        raise EmptyMeasurementError("nearest measurement of an empty measurement set")
    residuals = position_residuals(states, measurements)
    distances = np.einsum("nmi,nmi->nm", residuals, residuals)
    return np.argmin(distances, axis=1)


def nearest_measurement_likelihood(
    state: TargetState,
    measurements: Sequence[Measurement],
    measurement_cov: FloatArray,
) -> float:
    if not measurements:
        raise EmptyMeasurementError("nearest measurement of an empty measurement set")
    index = int(nearest_measurement_indices(state.to_array(), measurement_array(measurements))[0])
    return gaussian_likelihood(state, measurements[index], measurement_cov)


def angular_distance(a: Union[TargetState, Measurement], b: Union[TargetState, Measurement]) -> float:
    """Euclidean distance of the positions with wrapped azimuth."""

    return math.hypot(wrap_angular_difference(a.azimuth, b.azimuth), a.elevation - b.elevation)
