"""
Monte Carlo comparison of the filters on a simulated scenario.

Run ``r`` simulates the scenario with seed ``base + r``; every filter of that
run sees the same measurements and the same tracker seed.
"""

import dataclasses
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from phdflow.errors import ConfigError, InvalidArgumentError
from phdflow.flow import FlowConfig
from phdflow.ident import IdentConfig, TrackEstimate
from phdflow.io import (
    ImprovementRow,
    ScoreRow,
    write_frame_ospa,
    write_improvements,
    write_scores,
    write_trajectory,
    write_truth,
)
from phdflow.metrics import OspaParams, count_label_switches, ospa_sequence
from phdflow.model import TargetState
from phdflow.phd import FilterConfig
from phdflow.sim import FrameRecord, ScenarioConfig, crossing_occlusion_scenario, simulate
from phdflow.tracker import FilterKind, PhdTracker, raw_estimates

logger = logging.getLogger(__name__)

FILTER_NAMES: Tuple[str, ...] = tuple(kind.value for kind in FilterKind)


@dataclasses.dataclass(frozen=True, eq=False)
class ExperimentSpec:
    scenario: ScenarioConfig = dataclasses.field(default_factory=crossing_occlusion_scenario)
    filters: Tuple[str, ...] = FILTER_NAMES
    runs: int = 10
    seed: int = 0
    output_dir: Optional[Path] = None
    workers: int = 1
    record_timing: bool = True
    ospa: OspaParams = dataclasses.field(default_factory=OspaParams)
    filter_config: FilterConfig = dataclasses.field(default_factory=FilterConfig)
    flow_config: FlowConfig = dataclasses.field(default_factory=FlowConfig)
    ident_config: IdentConfig = dataclasses.field(default_factory=IdentConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "filters", tuple(self.filters))
        if not self.filters:
            raise InvalidArgumentError("at least one filter must be selected")
        unknown = [name for name in self.filters if name not in FILTER_NAMES]
        if unknown:
            raise InvalidArgumentError(f"unknown filters {unknown}, choose from {list(FILTER_NAMES)}")
        if len(set(self.filters)) != len(self.filters):
            raise InvalidArgumentError(f"duplicate filters in {list(self.filters)}")
        if self.runs < 1:
            raise InvalidArgumentError(f"runs must be at least 1, got {self.runs}")
        if self.workers < 1:
            raise InvalidArgumentError(f"workers must be at least 1, got {self.workers}")


@dataclasses.dataclass(frozen=True)
class RunResult:
    filter: str
    run: int
    seed: int
    mean_ospa: float
    per_frame_ospa: List[float]
    label_switches: int
    seconds_per_frame: float
    tracks: List[List[TrackEstimate]]

    @property
    def std_ospa(self) -> float:
        return float(np.std(self.per_frame_ospa)) if self.per_frame_ospa else 0.0


@dataclasses.dataclass(frozen=True)
class ExperimentResult:
    runs: List[RunResult]
    scores: List[ScoreRow]
    improvements: List[ImprovementRow]

    def score(self, filter_name: str) -> ScoreRow:
        for row in self.scores:
            if row.filter == filter_name and row.run == "all":
                return row
        raise KeyError(filter_name)


def simulate_run(scenario: ScenarioConfig, seed: int) -> List[FrameRecord]:
    simulation_seed, _ = np.random.SeedSequence(seed).spawn(2)
    return simulate(scenario, np.random.default_rng(simulation_seed))


def tracker_rng(seed: int) -> np.random.Generator:
    _, tracking_seed = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(tracking_seed)


def track_records(
    records: Sequence[FrameRecord],
    filter_name: str,
    filter_config: FilterConfig,
    flow_config: FlowConfig,
    ident_config: IdentConfig,
    dt: float,
    rng: np.random.Generator,
) -> Tuple[List[List[TrackEstimate]], float]:
    """Identified tracks per frame and the mean wall-clock seconds per frame."""

    kind = FilterKind(filter_name)
    tracks: List[List[TrackEstimate]] = []
    elapsed = 0.0
    tracker = None if kind is FilterKind.RAW else PhdTracker(kind, filter_config, flow_config, ident_config, dt, rng)
    for record in records:
        start = time.perf_counter()
        if tracker is None:
            tracks.append([TrackEstimate(0, state, 1.0) for state in raw_estimates(record.measurements)])
        else:
            tracks.append(tracker.step(record.measurements).tracks)
        elapsed += time.perf_counter() - start
    return tracks, elapsed / max(len(records), 1)


def run_single(spec: ExperimentSpec, filter_name: str, run: int) -> RunResult:
    seed = spec.seed + run
    records = simulate_run(spec.scenario, seed)
    tracks, seconds = track_records(
        records,
        filter_name,
        spec.filter_config.for_clutter_rate(spec.scenario.clutter_rate),
        spec.flow_config,
        spec.ident_config,
        spec.scenario.dt,
        tracker_rng(seed),
    )
    truth = [record.truth for record in records]
    estimates: List[List[TargetState]] = [[track.state for track in frame] for frame in tracks]
    mean, per_frame = ospa_sequence(estimates, [[state for _, state in frame] for frame in truth], spec.ospa)
    switches = 0
    if filter_name != FilterKind.RAW.value:
        switches = count_label_switches(
            [[(track.track_id, track.state) for track in frame] for frame in tracks],
            truth,
            spec.ospa.cutoff,
        )
    logger.info("%s run %d (seed %d): mean OSPA %.4f", filter_name, run, seed, mean)
    return RunResult(
        filter_name,
        run,
        seed,
        mean,
        per_frame,
        switches,
        seconds if spec.record_timing else 0.0,
        tracks,
    )


def _run_job(job: Tuple[ExperimentSpec, str, int]) -> RunResult:
    spec, filter_name, run = job
    return run_single(spec, filter_name, run)


def aggregate_scores(results: Sequence[RunResult], filters: Sequence[str]) -> List[ScoreRow]:
    """One row per (filter, run) followed by one ``run = "all"`` row per filter."""

    rows = [
        ScoreRow(r.filter, str(r.run), r.mean_ospa, r.std_ospa, r.label_switches, r.seconds_per_frame)
        for r in results
    ]
    for filter_name in filters:
        selected = [r for r in results if r.filter == filter_name]
        if not selected:
            continue
        means = [r.mean_ospa for r in selected]
        rows.append(
            ScoreRow(
                filter_name,
                "all",
                float(np.mean(means)),
                float(np.std(means)),
                sum(r.label_switches for r in selected),
                float(np.mean([r.seconds_per_frame for r in selected])),
            )
        )
    return rows


def compute_improvements(scores: Sequence[ScoreRow]) -> List[ImprovementRow]:
    """Relative OSPA reduction of every filter against every other filter."""

    aggregate = [row for row in scores if row.run == "all"]
    improvements: List[ImprovementRow] = []
    for row in aggregate:
        for baseline in aggregate:
            if baseline.filter == row.filter:
                continue
            reduction = 0.0
            if baseline.mean_ospa > 0.0:
                reduction = (baseline.mean_ospa - row.mean_ospa) / baseline.mean_ospa
            improvements.append(
                ImprovementRow(row.filter, baseline.filter, row.mean_ospa, baseline.mean_ospa, reduction)
            )
    return improvements


def prepare_output_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {path}: {e}")
    if not path.is_dir() or not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def write_results(spec: ExperimentSpec, result: ExperimentResult, output_dir: Path) -> None:
    for run in range(spec.runs):
        records = simulate_run(spec.scenario, spec.seed + run)
        write_truth(output_dir / f"truth_run{run:03d}.csv", [record.truth for record in records])
    for r in result.runs:
        write_trajectory(output_dir / f"{r.filter}_run{r.run:03d}_tracks.csv", r.tracks)
        write_frame_ospa(output_dir / f"{r.filter}_run{r.run:03d}_ospa.csv", r.per_frame_ospa)
    write_scores(output_dir / "runs.csv", [row for row in result.scores if row.run != "all"])
    write_scores(output_dir / "scores.csv", [row for row in result.scores if row.run == "all"])
    write_improvements(output_dir / "improvements.csv", result.improvements)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    output_dir = None if spec.output_dir is None else prepare_output_dir(Path(spec.output_dir))
    jobs = [(spec, filter_name, run) for run in range(spec.runs) for filter_name in spec.filters]
    logger.info("running %d jobs on %d workers", len(jobs), spec.workers)
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as executor:
            results = list(executor.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    scores = aggregate_scores(results, spec.filters)
    result = ExperimentResult(results, scores, compute_improvements(scores))
    if output_dir is not None:
        write_results(spec, result, output_dir)
    return result
