import dataclasses
import enum
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from phdflow.errors import InvalidArgumentError
from phdflow.flow import FlowConfig, FlowKind, migrate
from phdflow.ident import IdentConfig, TrackEstimate, TrackIdentifier
from phdflow.model import Measurement, TargetState
from phdflow.phd import (
    FilterConfig,
    ParticlePopulation,
    estimate_count,
    extract_states,
    needs_resampling,
    predict,
    resample,
    resample_count,
    spawn_births,
    target_count,
    update_covariances,
    update_weights,
)

logger = logging.getLogger(__name__)


class FilterKind(str, enum.Enum):
    SMC = "smc"
    NPF = "npf"
    IPF = "ipf"
    RAW = "raw"

    @property
    def flow_kind(self) -> FlowKind:
        if self is FilterKind.NPF:
            return FlowKind.NPF
        if self is FilterKind.IPF:
            return FlowKind.IPF
        return FlowKind.NONE


@dataclasses.dataclass(frozen=True)
class FrameEstimate:
    frame: int
    count: float
    estimates: List[Tuple[TargetState, float]]
    tracks: List[TrackEstimate]
    n_particles: int
    resampled: bool = False


def raw_estimates(measurements: Sequence[Measurement]) -> List[TargetState]:
    """Measurements taken as estimates, the baseline without any filtering."""

    return [TargetState(z.azimuth, z.elevation) for z in measurements]


class PhdTracker:
    """
    Frame-by-frame SMC-PHD tracker with an optional particle flow.

    Every call to :meth:`step` runs prediction, birth, migration, the weight
    update, clustering, covariance refresh, ESS-gated resampling and track
    identification.
    """

    def __init__(
        self,
        filter_kind: Union[str, FilterKind] = FilterKind.IPF,
        filter_config: Optional[FilterConfig] = None,
        flow_config: Optional[FlowConfig] = None,
        ident_config: Optional[IdentConfig] = None,
        dt: float = 1.0,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        self._filter_kind = FilterKind(filter_kind)
        if self._filter_kind is FilterKind.RAW:
            raise InvalidArgumentError("the raw baseline has no tracker; use raw_estimates")
        if not dt > 0.0:
            raise InvalidArgumentError(f"dt must be positive, got {dt}")
        self._filter_config = filter_config or FilterConfig()
        self._flow_config = flow_config or FlowConfig()
        self._dt = dt
        self._rng = rng or np.random.default_rng()
        self._identifier = TrackIdentifier(ident_config or IdentConfig(), dt)
        self._population = ParticlePopulation.empty()
        self._frame = 0

    @property
    def filter_kind(self) -> FilterKind:
        return self._filter_kind

    @property
    def population(self) -> ParticlePopulation:
        return self._population

    def step(self, measurements: Sequence[Measurement]) -> FrameEstimate:
        config = self._filter_config
        population = predict(self._population, self._dt, config, self._rng)
        population = population.combine(spawn_births(measurements, config, self._rng))
        population = migrate(
            population,
            measurements,
            self._filter_kind.flow_kind,
            self._flow_config,
            config,
            self._rng,
        )
        population = update_weights(population, measurements, config)

        count = estimate_count(population)
        extraction = extract_states(population, target_count(population, config.max_targets), self._rng)
        if extraction.estimates:
            population = update_covariances(
                population,
                extraction.assignment,
                config.process_noise_cov,
                config.covariance_jitter,
            )

        resampled = needs_resampling(population, config)
        if resampled:
            population = resample(population, resample_count(population, config), self._rng)
        elif not count > 0.0:
            population = ParticlePopulation.empty()

        tracks = self._identifier.update(extraction.estimates)
        logger.debug(
            "frame %d: %d measurements, count %.3f, %d particles, %d tracks",
            self._frame,
            len(measurements),
            count,
            len(population),
            len(tracks),
        )

        self._population = population
        estimate = FrameEstimate(self._frame, count, extraction.estimates, tracks, len(population), resampled)
        self._frame += 1
        return estimate
