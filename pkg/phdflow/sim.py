"""
Synthetic DOA scenarios: ground-truth trajectories and cluttered,
detection-gapped measurement streams.
"""

import dataclasses
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from phdflow.errors import InvalidArgumentError
from phdflow.model import (
    DEFAULT_MEASUREMENT_NOISE,
    STATE_DIM,
    Measurement,
    TargetState,
    check_spd,
    measure,
    propagate,
    wrap_difference,
)
from phdflow.types import FloatArray

CLUTTER = 0

TruthFrame = List[Tuple[int, TargetState]]


@dataclasses.dataclass(frozen=True)
class Waypoint:
    frame: int
    azimuth: float
    elevation: float


@dataclasses.dataclass(frozen=True)
class TargetSpec:
    initial_state: TargetState
    birth_frame: int = 0
    death_frame: Optional[int] = None
    waypoints: Tuple[Waypoint, ...] = ()
    # [start, end) frame intervals of speech; None means always speaking
    active: Optional[Tuple[Tuple[int, int], ...]] = None

    def is_speaking(self, frame: int) -> bool:
        if self.active is None:
            return True
        return any(start <= frame < end for start, end in self.active)


def _psd_factor(matrix: FloatArray) -> FloatArray:
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


@dataclasses.dataclass(frozen=True, eq=False)
class ScenarioConfig:
    duration_frames: int
    targets: Tuple[TargetSpec, ...]
    dt: float = 1.0
    detection_probability: float = 0.9
    clutter_rate: float = 1.0
    measurement_noise_cov: FloatArray = dataclasses.field(default_factory=lambda: DEFAULT_MEASUREMENT_NOISE.copy())
    process_noise_cov: FloatArray = dataclasses.field(default_factory=lambda: np.zeros((STATE_DIM, STATE_DIM)))
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "measurement_noise_cov", np.array(self.measurement_noise_cov, dtype=float))
        object.__setattr__(self, "process_noise_cov", np.array(self.process_noise_cov, dtype=float))
        if self.duration_frames < 1:
            raise InvalidArgumentError(f"duration_frames must be positive, got {self.duration_frames}")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if not 0.0 <= self.detection_probability <= 1.0:
            raise InvalidArgumentError(f"detection_probability must be in [0, 1], got {self.detection_probability}")
        if not (math.isfinite(self.clutter_rate) and self.clutter_rate >= 0.0):
            raise InvalidArgumentError(f"clutter_rate must be non-negative, got {self.clutter_rate}")
        if self.measurement_noise_cov.shape != (2, 2):
            raise InvalidArgumentError("measurement noise covariance must be 2x2")
        check_spd(self.measurement_noise_cov, "measurement noise covariance")
        process = self.process_noise_cov
        if process.shape != (STATE_DIM, STATE_DIM):
            raise InvalidArgumentError("process noise covariance must be 4x4")
        if not np.allclose(process, process.T) or np.linalg.eigvalsh(process)[0] < -1e-12:
            raise InvalidArgumentError("process noise covariance must be symmetric positive semidefinite")
        if not self.targets:
            raise InvalidArgumentError("scenario needs at least one target")
        for number, target in enumerate(self.targets, start=1):
            self._check_target(number, target)

    def _check_target(self, number: int, target: TargetSpec) -> None:
        death = self.death_frame(target)
        if not 0 <= target.birth_frame < death <= self.duration_frames:
            raise InvalidArgumentError(
                f"target {number}: need 0 <= birth_frame < death_frame <= duration_frames, "
                f"got {target.birth_frame}, {death}, {self.duration_frames}"
            )
        frames = [waypoint.frame for waypoint in target.waypoints]
        if any(not target.birth_frame < frame < death for frame in frames) or frames != sorted(set(frames)):
            raise InvalidArgumentError(f"target {number}: waypoint frames must increase strictly within its lifetime")
        for start, end in target.active or ():
            if not 0 <= start < end:
                raise InvalidArgumentError(f"target {number}: bad activity interval [{start}, {end})")

    def death_frame(self, target: TargetSpec) -> int:
        return self.duration_frames if target.death_frame is None else target.death_frame

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, seed=seed)


@dataclasses.dataclass(frozen=True)
class FrameRecord:
    frame: int
    truth: TruthFrame
    measurements: List[Measurement]
    # target id per measurement, CLUTTER for false alarms
    origins: List[int]


def generate_truth(config: ScenarioConfig, rng: np.random.Generator) -> List[TruthFrame]:
    """Constant-velocity trajectories steered through their waypoints."""

    factor = _psd_factor(config.process_noise_cov)
    truth: List[TruthFrame] = [[] for _ in range(config.duration_frames)]
    for target_id, target in enumerate(config.targets, start=1):
        state = target.initial_state.to_array()
        pending = list(target.waypoints)
        for frame in range(target.birth_frame, config.death_frame(target)):
            if frame > target.birth_frame:
                noise = factor @ rng.standard_normal(STATE_DIM)
                state = propagate(state, config.dt, noise)
            while pending and pending[0].frame <= frame:
                pending.pop(0)
            if pending:
                # steer so the next waypoint is hit on its frame
                remaining = (pending[0].frame - frame) * config.dt
                state[2] = float(wrap_difference(pending[0].azimuth, state[0])) / remaining
                state[3] = (pending[0].elevation - state[1]) / remaining
            truth[frame].append((target_id, TargetState.from_array(state.tolist())))
    return truth


def generate_measurements(
    truth: Sequence[TruthFrame],
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> List[FrameRecord]:
    factor = _psd_factor(config.measurement_noise_cov)
    records: List[FrameRecord] = []
    for frame, targets in enumerate(truth):
        measurements: List[Measurement] = []
        origins: List[int] = []
        for target_id, state in targets:
            spec = config.targets[target_id - 1]
            if spec.is_speaking(frame) and rng.random() < config.detection_probability:
                measurements.append(measure(state, (factor @ rng.standard_normal(2)).tolist()))
                origins.append(target_id)
        n_clutter = int(rng.poisson(config.clutter_rate))
        azimuths = rng.uniform(0.0, 360.0, size=n_clutter)
        elevations = rng.uniform(-90.0, 90.0, size=n_clutter)
        measurements.extend(Measurement(float(a), float(e)) for a, e in zip(azimuths, elevations))
        origins.extend([CLUTTER] * n_clutter)

        order = rng.permutation(len(measurements))
        records.append(
            FrameRecord(
                frame,
                list(targets),
                [measurements[i] for i in order],
                [origins[i] for i in order],
            )
        )
    return records


def simulate(config: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> List[FrameRecord]:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    return generate_measurements(generate_truth(config, rng), config, rng)


def crossing_occlusion_scenario() -> ScenarioConfig:
    """
    Two speakers walking toward each other in azimuth.

    They cross at 90 degrees around frame 100; while their directions overlap
    (frames 98 to 102) the array resolves a single DOA, so only the first
    speaker is observed.
    """

    return ScenarioConfig(
        duration_frames=200,
        targets=(
            TargetSpec(TargetState(40.0, 8.0, 0.5, 0.0)),
            TargetSpec(TargetState(140.0, 12.0, -0.5, 0.0), active=((0, 98), (103, 200))),
        ),
        dt=1.0,
        detection_probability=0.9,
        clutter_rate=1.0,
        measurement_noise_cov=np.diag([4.0, 4.0]),
        process_noise_cov=np.zeros((STATE_DIM, STATE_DIM)),
        seed=0,
    )
