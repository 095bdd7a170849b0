import dataclasses
import logging
import math
from typing import Dict, List, Sequence, Set, Tuple

from phdflow.errors import InvalidArgumentError
from phdflow.model import TargetState, angular_distance, transition
from phdflow.phd import round_half_up

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class IdentConfig:
    gate: float = 10.0
    # frames left out of the running count mean
    warmup_frames: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gate) and self.gate > 0.0):
            raise InvalidArgumentError(f"gate must be positive, got {self.gate}")
        if self.warmup_frames < 0:
            raise InvalidArgumentError(f"warmup_frames must be non-negative, got {self.warmup_frames}")


@dataclasses.dataclass(frozen=True)
class TrackEstimate:
    track_id: int
    state: TargetState
    weight: float
    coasting: bool = False


def mean_target_count(history: Sequence[float]) -> int:
    if not history:
        raise InvalidArgumentError("mean target count of an empty history")
    return round_half_up(sum(history) / len(history))


class CountHistory:
    """Per-frame estimated counts and their rounded running mean."""

    def __init__(self, warmup_frames: int = 0) -> None:
        self._warmup_frames = warmup_frames
        self._counts: List[float] = []

    def __len__(self) -> int:
        return len(self._counts)

    @property
    def counts(self) -> List[float]:
        return list(self._counts)

    def append(self, count: float) -> None:
        self._counts.append(count)

    def mean_target_count(self) -> int:
        counted = self._counts[self._warmup_frames :] or self._counts
        return mean_target_count(counted)


def _match(
    prev: Sequence[TrackEstimate],
    current: Sequence[Tuple[TargetState, float]],
    gate: float,
    dt: float,
) -> Tuple[List[TrackEstimate], Set[int]]:
    gated = len(current) < len(prev)
    consumed: Set[int] = set()
    tracks: List[TrackEstimate] = []
    for track in sorted(prev, key=lambda t: t.track_id):
        best_index = -1
        best_distance = math.inf
        for index, (state, _) in enumerate(current):
            if index in consumed:
                continue
            distance = angular_distance(track.state, state)
            if distance < best_distance:
                best_index, best_distance = index, distance

        if best_index < 0 or (gated and best_distance > gate):
            coasted = transition(track.state, dt)
            tracks.append(TrackEstimate(track.track_id, coasted, track.weight, coasting=True))
        else:
            consumed.add(best_index)
            state, weight = current[best_index]
            tracks.append(TrackEstimate(track.track_id, state, weight))
    return tracks, consumed


def assign_ids(
    prev: Sequence[TrackEstimate],
    current: Sequence[Tuple[TargetState, float]],
    gate: float,
    dt: float,
) -> List[TrackEstimate]:
    """
    Carry the previous track ids over to the current estimates.

    Tracks take their nearest unconsumed estimate in id order. Surplus
    estimates are dropped. When there are fewer estimates than tracks, a track
    without an estimate inside ``gate`` coasts on its dynamics.
    """

    if not gate > 0.0:
        raise InvalidArgumentError(f"gate must be positive, got {gate}")
    tracks, _ = _match(prev, current, gate, dt)
    return tracks


class TrackIdentifier:
    """Session state of the identification step: count history, live tracks and coasting streaks."""

    def __init__(self, config: IdentConfig, dt: float) -> None:
        self._config = config
        self._dt = dt
        self._history = CountHistory(config.warmup_frames)
        self._tracks: List[TrackEstimate] = []
        self._streaks: Dict[int, int] = {}
        self._next_id = 1

    @property
    def history(self) -> CountHistory:
        return self._history

    @property
    def tracks(self) -> List[TrackEstimate]:
        return list(self._tracks)

    def _retire(self, n_tracks: int) -> None:
        while len(self._tracks) > n_tracks:
            retired = max(self._tracks, key=lambda t: (self._streaks.get(t.track_id, 0), t.track_id))
            logger.debug("retiring track %d", retired.track_id)
            self._tracks.remove(retired)
            self._streaks.pop(retired.track_id, None)

    def _mint(
        self,
        n_new: int,
        current: Sequence[Tuple[TargetState, float]],
        consumed: Set[int],
    ) -> List[TrackEstimate]:
        unmatched = [index for index in range(len(current)) if index not in consumed]
        unmatched.sort(key=lambda index: (-current[index][1], index))
        minted: List[TrackEstimate] = []
        for index in unmatched[:n_new]:
            state, weight = current[index]
            minted.append(TrackEstimate(self._next_id, state, weight))
            logger.debug("minting track %d", self._next_id)
            self._next_id += 1
        return minted

    def update(self, current: Sequence[Tuple[TargetState, float]]) -> List[TrackEstimate]:
        self._history.append(len(current))
        n_tracks = self._history.mean_target_count()

        self._retire(n_tracks)
        tracks, consumed = _match(self._tracks, current, self._config.gate, self._dt)
        if len(tracks) < n_tracks:
            tracks.extend(self._mint(n_tracks - len(tracks), current, consumed))

        for track in tracks:
            self._streaks[track.track_id] = self._streaks.get(track.track_id, 0) + 1 if track.coasting else 0
        self._tracks = sorted(tracks, key=lambda t: t.track_id)
        return self.tracks
