from typing import List

import numpy as np
import pytest

from phdflow.errors import InvalidArgumentError
from phdflow.flow import FlowKind
from phdflow.model import Measurement, TargetState, angular_distance
from phdflow.phd import FilterConfig
from phdflow.sim import FrameRecord, ScenarioConfig, TargetSpec, simulate
from phdflow.tracker import FilterKind, PhdTracker, raw_estimates


@pytest.mark.parametrize(
    "kind,expected",
    [
        (FilterKind.SMC, FlowKind.NONE),
        (FilterKind.NPF, FlowKind.NPF),
        (FilterKind.IPF, FlowKind.IPF),
        (FilterKind.RAW, FlowKind.NONE),
    ],
)
def test_filter_kind_flow(kind: FilterKind, expected: FlowKind) -> None:
    assert kind.flow_kind is expected


def test_raw_estimates() -> None:
    assert raw_estimates([Measurement(370.0, 5.0), Measurement(20.0, -3.0)]) == [
        TargetState(10.0, 5.0),
        TargetState(20.0, -3.0),
    ]
    assert raw_estimates([]) == []


def test_tracker_rejects_raw_and_bad_dt() -> None:
    with pytest.raises(InvalidArgumentError):
        PhdTracker("raw")
    with pytest.raises(InvalidArgumentError):
        PhdTracker("ipf", dt=0.0)
    with pytest.raises(ValueError):
        PhdTracker("kalman")


def test_tracker_without_measurements() -> None:
    tracker = PhdTracker("smc", rng=np.random.default_rng(0))
    for frame in range(3):
        estimate = tracker.step([])
        assert estimate.frame == frame
        assert estimate.count == 0.0
        assert estimate.estimates == []
        assert estimate.tracks == []
    assert len(tracker.population) == 0


def _static_records(n_frames: int = 30) -> List[FrameRecord]:
    scenario = ScenarioConfig(
        duration_frames=n_frames,
        targets=(TargetSpec(TargetState(60.0, 10.0)),),
        detection_probability=1.0,
        clutter_rate=0.0,
    )
    return simulate(scenario, np.random.default_rng(5))


@pytest.mark.parametrize("kind", ["smc", "npf", "ipf"])
def test_tracker_follows_a_static_source(kind: str) -> None:
    tracker = PhdTracker(kind, FilterConfig(clutter_intensity=1e-6), rng=np.random.default_rng(1))
    assert tracker.filter_kind is FilterKind(kind)

    estimates = [tracker.step(record.measurements) for record in _static_records()]
    assert [e.frame for e in estimates] == list(range(30))
    for estimate in estimates[10:]:
        assert estimate.count == pytest.approx(1.0, abs=0.3)
        assert [track.track_id for track in estimate.tracks] == [1]
        assert angular_distance(estimate.tracks[0].state, TargetState(60.0, 10.0)) < 6.0
    assert estimates[-1].n_particles == len(tracker.population) > 0


@pytest.mark.parametrize("kind", ["smc", "npf", "ipf"])
def test_clutter_only_frames_confirm_no_target(kind: str) -> None:
    tracker = PhdTracker(kind, rng=np.random.default_rng(2))
    for frame in range(20):
        clutter = Measurement((97.0 * frame) % 360.0, 30.0 if frame % 2 else -30.0)
        estimate = tracker.step([clutter])
        assert estimate.count < 0.05
        assert estimate.tracks == []


@pytest.mark.parametrize("kind", ["smc", "ipf"])
def test_tracker_is_deterministic(kind: str) -> None:
    records = _static_records(12)
    runs = []
    for _ in range(2):
        tracker = PhdTracker(kind, FilterConfig(clutter_intensity=1e-6), rng=np.random.default_rng(3))
        runs.append([tracker.step(record.measurements) for record in records])
    first, second = runs
    assert [e.count for e in first] == [e.count for e in second]
    assert [[t.state for t in e.tracks] for e in first] == [[t.state for t in e.tracks] for e in second]
    assert [e.n_particles for e in first] == [e.n_particles for e in second]
