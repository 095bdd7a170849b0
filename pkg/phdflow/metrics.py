import dataclasses
import math
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from phdflow.errors import InvalidArgumentError
from phdflow.model import wrap_difference
from phdflow.types import FloatArray


class Positioned(Protocol):
    @property
    def azimuth(self) -> float: ...

    @property
    def elevation(self) -> float: ...


@dataclasses.dataclass(frozen=True)
class OspaParams:
    cutoff: float = 20.0
    order: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.cutoff) and self.cutoff > 0.0):
            raise InvalidArgumentError(f"cutoff must be positive, got {self.cutoff}")
        if not (math.isfinite(self.order) and self.order >= 1.0):
            raise InvalidArgumentError(f"order must be at least 1, got {self.order}")


@dataclasses.dataclass(frozen=True)
class OspaComponents:
    total: float
    localization: float
    cardinality: float


def _positions(items: Sequence[Positioned]) -> FloatArray:
    return np.array([[item.azimuth, item.elevation] for item in items], dtype=float).reshape(-1, 2)


def distance_matrix(a: Sequence[Positioned], b: Sequence[Positioned]) -> FloatArray:
    """Pairwise az/el distances with wrapped azimuth."""

    x, y = _positions(a), _positions(b)
    azimuth = wrap_difference(x[:, None, 0], y[None, :, 0])
    elevation = x[:, None, 1] - y[None, :, 1]
    return np.hypot(azimuth, elevation)


def ospa_components(
    estimates: Sequence[Positioned],
    truth: Sequence[Positioned],
    params: Optional[OspaParams] = None,
) -> OspaComponents:
    params = params or OspaParams()
    c, p = params.cutoff, params.order
    m, n = sorted((len(estimates), len(truth)))
    if n == 0:
        return OspaComponents(0.0, 0.0, 0.0)
    if m == 0:
        return OspaComponents(c, 0.0, c)

    costs = np.minimum(distance_matrix(estimates, truth), c) ** p
    rows, cols = linear_sum_assignment(costs)
    assignment_cost = float(costs[rows, cols].sum())
    penalty = c**p * (n - m)
    return OspaComponents(
        total=((assignment_cost + penalty) / n) ** (1.0 / p),
        localization=(assignment_cost / n) ** (1.0 / p),
        cardinality=(penalty / n) ** (1.0 / p),
    )


def ospa(
    estimates: Sequence[Positioned],
    truth: Sequence[Positioned],
    params: Optional[OspaParams] = None,
) -> float:
    return ospa_components(estimates, truth, params).total


def ospa_sequence(
    estimates: Sequence[Sequence[Positioned]],
    truth: Sequence[Sequence[Positioned]],
    params: Optional[OspaParams] = None,
) -> Tuple[float, List[float]]:
    """Mean OSPA over frames together with the per-frame values."""

    if len(estimates) != len(truth):
        raise InvalidArgumentError(
            f"sequence lengths differ: {len(estimates)} estimate frames, {len(truth)} truth frames"
        )
    values = [ospa(frame_estimates, frame_truth, params) for frame_estimates, frame_truth in zip(estimates, truth)]
    if not values:
        return 0.0, []
    return float(np.mean(values)), values


def count_label_switches(
    tracks: Sequence[Sequence[Tuple[int, Positioned]]],
    truth: Sequence[Sequence[Tuple[int, Positioned]]],
    cutoff: float = 20.0,
) -> int:
    """
    Number of times a true target changes the track id associated with it.

    Per frame, tracks are paired with true targets by optimal assignment and
    pairs further apart than ``cutoff`` are ignored.
    """

    if len(tracks) != len(truth):
        raise InvalidArgumentError(f"sequence lengths differ: {len(tracks)} track frames, {len(truth)} truth frames")
    last_label: Dict[int, int] = {}
    switches = 0
    for frame_tracks, frame_truth in zip(tracks, truth):
        if not frame_tracks or not frame_truth:
            continue
        distances = distance_matrix([s for _, s in frame_tracks], [s for _, s in frame_truth])
        rows, cols = linear_sum_assignment(distances)
        for row, col in zip(rows, cols):
            if distances[row, col] > cutoff:
                continue
            truth_id, track_id = frame_truth[col][0], frame_tracks[row][0]
            if truth_id in last_label and last_label[truth_id] != track_id:
                switches += 1
            last_label[truth_id] = track_id
    return switches
