"""
CSV persistence of trajectories, measurements and score tables.

Floats are written through ``repr`` so a rerun with the same seed reproduces
every file byte for byte.
"""

import csv
import dataclasses
from os import PathLike
from typing import Dict, Iterable, List, Sequence, Union

from phdflow.errors import ConfigError
from phdflow.ident import TrackEstimate
from phdflow.model import TargetState
from phdflow.sim import FrameRecord, TruthFrame

TRAJECTORY_HEADER = [
    "frame",
    "track_id",
    "azimuth",
    "elevation",
    "azimuth_rate",
    "elevation_rate",
    "weight",
    "coasting",
]
MEASUREMENT_HEADER = ["frame", "azimuth", "elevation"]
FRAME_OSPA_HEADER = ["frame", "ospa"]
SCORE_HEADER = ["filter", "run", "mean_ospa", "std_ospa", "label_switches", "seconds_per_frame"]
IMPROVEMENT_HEADER = ["filter", "baseline", "mean_ospa", "baseline_mean_ospa", "relative_reduction"]

FilePath = Union[str, "PathLike[str]"]


@dataclasses.dataclass(frozen=True)
class ScoreRow:
    filter: str
    run: str
    mean_ospa: float
    std_ospa: float
    label_switches: int
    seconds_per_frame: float


@dataclasses.dataclass(frozen=True)
class ImprovementRow:
    filter: str
    baseline: str
    mean_ospa: float
    baseline_mean_ospa: float
    relative_reduction: float


def _write(path: FilePath, header: List[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, "w", newline="") as csvfile:
        writer = csv.writer(csvfile, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _float(value: float) -> str:
    return repr(float(value))


def _trajectory_row(frame: int, track: TrackEstimate) -> List[object]:
    state = track.state
    return [
        frame,
        track.track_id,
        _float(state.azimuth),
        _float(state.elevation),
        _float(state.azimuth_rate),
        _float(state.elevation_rate),
        _float(track.weight),
        "true" if track.coasting else "false",
    ]


def write_trajectory(path: FilePath, tracks: Sequence[Sequence[TrackEstimate]]) -> None:
    _write(path, TRAJECTORY_HEADER, (_trajectory_row(frame, t) for frame, ts in enumerate(tracks) for t in ts))


def write_truth(path: FilePath, truth: Sequence[TruthFrame]) -> None:
    write_trajectory(path, [[TrackEstimate(target_id, state, 1.0) for target_id, state in frame] for frame in truth])


def read_trajectory(path: FilePath) -> Dict[int, List[TrackEstimate]]:
    """Tracks grouped by frame; frames without rows are absent."""

    frames: Dict[int, List[TrackEstimate]] = {}
    with open(path, newline="") as csvfile:
        reader = csv.DictReader(csvfile)
        if reader.fieldnames is None or list(reader.fieldnames) != TRAJECTORY_HEADER:
            raise ConfigError(f"{path}: expected trajectory header {','.join(TRAJECTORY_HEADER)}")
        for line, row in enumerate(reader, start=2):
            try:
                state = TargetState(
                    float(row["azimuth"]),
                    float(row["elevation"]),
                    float(row["azimuth_rate"]),
                    float(row["elevation_rate"]),
                )
                track = TrackEstimate(int(row["track_id"]), state, float(row["weight"]), row["coasting"] == "true")
                frames.setdefault(int(row["frame"]), []).append(track)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{path}: line {line}: {e}")
    return frames


def write_measurements(path: FilePath, records: Sequence[FrameRecord]) -> None:
    _write(
        path,
        MEASUREMENT_HEADER,
        (
            [record.frame, _float(z.azimuth), _float(z.elevation)]
            for record in records
            for z in record.measurements
        ),
    )


def write_frame_ospa(path: FilePath, values: Sequence[float]) -> None:
    _write(path, FRAME_OSPA_HEADER, ([frame, _float(value)] for frame, value in enumerate(values)))


def write_scores(path: FilePath, rows: Sequence[ScoreRow]) -> None:
    _write(
        path,
        SCORE_HEADER,
        (
            [
                row.filter,
                row.run,
                _float(row.mean_ospa),
                _float(row.std_ospa),
                row.label_switches,
                _float(row.seconds_per_frame),
            ]
            for row in rows
        ),
    )


def read_scores(path: FilePath) -> List[ScoreRow]:
    with open(path, newline="") as csvfile:
        return [
            ScoreRow(
                row["filter"],
                row["run"],
                float(row["mean_ospa"]),
                float(row["std_ospa"]),
                int(row["label_switches"]),
                float(row["seconds_per_frame"]),
            )
            for row in csv.DictReader(csvfile)
        ]


def write_improvements(path: FilePath, rows: Sequence[ImprovementRow]) -> None:
    _write(
        path,
        IMPROVEMENT_HEADER,
        (
            [
                row.filter,
                row.baseline,
                _float(row.mean_ospa),
                _float(row.baseline_mean_ospa),
                _float(row.relative_reduction),
            ]
            for row in rows
        ),
    )
