import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from phdflow import __version__
from phdflow.config import parse_experiment_file, parse_scenario_file
from phdflow.errors import ConfigError, ConfigSyntaxError, InvalidArgumentError, NumericalError
from phdflow.experiment import (
    FILTER_NAMES,
    ExperimentSpec,
    prepare_output_dir,
    run_experiment,
    simulate_run,
    track_records,
    tracker_rng,
)
from phdflow.flow import FlowConfig
from phdflow.ident import IdentConfig
from phdflow.io import read_trajectory, write_frame_ospa, write_measurements, write_trajectory, write_truth
from phdflow.metrics import OspaParams, ospa_sequence
from phdflow.phd import FilterConfig
from phdflow.sim import ScenarioConfig, crossing_occlusion_scenario

logger = logging.getLogger(__name__)

BENCH_DESCRIPTION = (
    "Monte Carlo comparison of filters. Filter, flow, identification and OSPA flags override the "
    "experiment file. Seconds per frame are wall-clock measurements, so repeated runs write identical "
    "files only with --no-timing."
)


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    if args.scenario is None:
        return crossing_occlusion_scenario()
    return parse_scenario_file(args.scenario)


def _add_scenario_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", type=Path, default=None, help="scenario file (crossing/occlusion when unset)")
    parser.add_argument("--seed", type=int, default=None, help="simulation seed (the scenario's seed when unset)")
    parser.add_argument("--output-dir", type=Path, required=True, help="directory for the CSV outputs")


def _default(value: Any, overrides: bool) -> Any:
    return argparse.SUPPRESS if overrides else value


def _add_ospa_arguments(parser: argparse.ArgumentParser, overrides: bool = False) -> None:
    group = parser.add_argument_group("ospa")
    group.add_argument(
        "--cutoff",
        type=float,
        default=_default(OspaParams.cutoff, overrides),
        help="OSPA cutoff c in degrees",
    )
    group.add_argument("--order", type=float, default=_default(OspaParams.order, overrides), help="OSPA order p")


def _add_filter_arguments(parser: argparse.ArgumentParser, overrides: bool = False) -> None:
    """
    Filter, flow and identification flags. With ``overrides`` the flags have
    no defaults and only replace the fields given on the command line.
    """

    defaults = FilterConfig()
    group = parser.add_argument_group("filter")
    group.add_argument(
        "--survival-probability",
        type=float,
        default=_default(defaults.survival_probability, overrides),
        help="probability that a target survives one frame",
    )
    group.add_argument(
        "--detection-probability",
        type=float,
        default=_default(defaults.detection_probability, overrides),
        help="probability that a live target produces a measurement",
    )
    group.add_argument(
        "--clutter-intensity",
        type=float,
        default=_default(None, overrides),
        help="clutter intensity per square degree; unset derives it from the scenario clutter rate",
    )
    group.add_argument(
        "--birth-weight",
        type=float,
        default=_default(defaults.birth_weight, overrides),
        help="birth intensity gamma spread over the particles born around each measurement",
    )
    group.add_argument(
        "--births-per-measurement",
        type=int,
        default=_default(defaults.births_per_measurement, overrides),
        help="particles born around every measurement",
    )
    group.add_argument(
        "--particles-per-target",
        type=int,
        default=_default(defaults.particles_per_target, overrides),
        help="particles kept per estimated target when resampling",
    )
    group.add_argument(
        "--max-targets",
        type=int,
        default=_default(defaults.max_targets, overrides),
        help="upper bound on the number of extracted targets",
    )

    flow = parser.add_argument_group("flow")
    flow.add_argument(
        "--n-lambda-steps",
        type=int,
        default=_default(FlowConfig.n_lambda_steps, overrides),
        help="steps of the synthetic time grid",
    )
    flow.add_argument(
        "--diffusion-coeff",
        type=float,
        default=_default(FlowConfig.diffusion_coeff, overrides),
        help="diffusion coefficient of the flow noise",
    )
    flow.add_argument(
        "--sensor-resolution",
        type=float,
        default=_default(FlowConfig.sensor_resolution, overrides),
        help="steps shorter than this freeze a particle, in degrees",
    )
    flow.add_argument(
        "--flow-gate",
        type=float,
        dest="flow_gate",
        default=_default(FlowConfig.gate, overrides),
        help="innovation standard deviations beyond which particles are not migrated; 0 turns the gate off",
    )

    ident = parser.add_argument_group("identification")
    ident.add_argument(
        "--gate",
        type=float,
        default=_default(IdentConfig.gate, overrides),
        help="identification gate in degrees",
    )
    ident.add_argument(
        "--warmup-frames",
        type=int,
        default=_default(IdentConfig.warmup_frames, overrides),
        help="first frames left out of the running target count",
    )


_FILTER_FIELDS = (
    "survival_probability",
    "detection_probability",
    "clutter_intensity",
    "birth_weight",
    "births_per_measurement",
    "particles_per_target",
    "max_targets",
)
_FLOW_FIELDS = ("n_lambda_steps", "diffusion_coeff", "sensor_resolution")
_IDENT_FIELDS = ("gate", "warmup_frames")
_OSPA_FIELDS = ("cutoff", "order")
_EXPERIMENT_FIELDS = ("filters", "runs", "seed", "workers", "output_dir")


def _given(args: argparse.Namespace, fields: Sequence[str]) -> Dict[str, Any]:
    return {field: getattr(args, field) for field in fields if hasattr(args, field)}


def _flow_values(args: argparse.Namespace) -> Dict[str, Any]:
    values = _given(args, _FLOW_FIELDS)
    if hasattr(args, "flow_gate"):
        values["gate"] = args.flow_gate or None
    return values


def _filter_config(args: argparse.Namespace) -> FilterConfig:
    return FilterConfig(**_given(args, _FILTER_FIELDS))


def _flow_config(args: argparse.Namespace) -> FlowConfig:
    return FlowConfig(**_flow_values(args))


def _with_overrides(spec: ExperimentSpec, args: argparse.Namespace) -> ExperimentSpec:
    """Replace the fields of ``spec`` whose flags were given on the command line."""

    given = _given(args, _EXPERIMENT_FIELDS)
    if args.no_timing:
        given["record_timing"] = False
    return dataclasses.replace(
        spec,
        **given,
        filter_config=dataclasses.replace(spec.filter_config, **_given(args, _FILTER_FIELDS)),
        flow_config=dataclasses.replace(spec.flow_config, **_flow_values(args)),
        ident_config=dataclasses.replace(spec.ident_config, **_given(args, _IDENT_FIELDS)),
        ospa=dataclasses.replace(spec.ospa, **_given(args, _OSPA_FIELDS)),
    )


def _simulate(args: argparse.Namespace) -> None:
    scenario = _scenario(args)
    seed = scenario.seed if args.seed is None else args.seed
    output_dir = prepare_output_dir(args.output_dir)
    records = simulate_run(scenario, seed)
    write_truth(output_dir / "truth.csv", [record.truth for record in records])
    write_measurements(output_dir / "measurements.csv", records)
    print(f"wrote {len(records)} frames to {output_dir}")


def _track(args: argparse.Namespace) -> None:
    scenario = _scenario(args)
    seed = scenario.seed if args.seed is None else args.seed
    output_dir = prepare_output_dir(args.output_dir)
    records = simulate_run(scenario, seed)
    tracks, seconds = track_records(
        records,
        args.filter,
        _filter_config(args).for_clutter_rate(scenario.clutter_rate),
        _flow_config(args),
        IdentConfig(**_given(args, _IDENT_FIELDS)),
        scenario.dt,
        tracker_rng(seed),
    )
    truth = [[state for _, state in record.truth] for record in records]
    mean, per_frame = ospa_sequence(
        [[track.state for track in frame] for frame in tracks],
        truth,
        OspaParams(**_given(args, _OSPA_FIELDS)),
    )
    write_truth(output_dir / "truth.csv", [record.truth for record in records])
    write_trajectory(output_dir / "tracks.csv", tracks)
    write_frame_ospa(output_dir / "ospa.csv", per_frame)
    print(f"{args.filter}: mean OSPA {mean:.4f} ({seconds:.4f} s/frame)")


def _bench(args: argparse.Namespace) -> None:
    spec = ExperimentSpec() if args.experiment is None else parse_experiment_file(args.experiment)
    spec = _with_overrides(spec, args)
    if spec.output_dir is None:
        raise ConfigError("an output directory is required (--output-dir or 'output_dir' in the experiment file)")
    logger.info("bench: %d runs of %s from seed %d", spec.runs, ", ".join(spec.filters), spec.seed)

    result = run_experiment(spec)
    print(f"{'filter':<8}{'mean_ospa':>12}{'std_ospa':>12}{'switches':>10}{'s/frame':>12}")
    for row in result.scores:
        if row.run == "all":
            print(
                f"{row.filter:<8}{row.mean_ospa:>12.4f}{row.std_ospa:>12.4f}"
                f"{row.label_switches:>10d}{row.seconds_per_frame:>12.4f}"
            )
    for improvement in result.improvements:
        if improvement.relative_reduction > 0.0:
            print(
                f"{improvement.filter} reduces the OSPA of {improvement.baseline} "
                f"by {100.0 * improvement.relative_reduction:.1f}%"
            )


def _ospa(args: argparse.Namespace) -> None:
    estimates = read_trajectory(args.estimates)
    truth = read_trajectory(args.truth)
    n_frames = max(list(estimates) + list(truth), default=-1) + 1
    mean, _ = ospa_sequence(
        [[track.state for track in estimates.get(frame, [])] for frame in range(n_frames)],
        [[track.state for track in truth.get(frame, [])] for frame in range(n_frames)],
        OspaParams(**_given(args, _OSPA_FIELDS)),
    )
    print(f"{mean!r}")


def _show_errors(errors: List[str]) -> None:
    for error in errors:
        print(error, file=sys.stderr)


def main(prog: Optional[str] = None, argv: Optional[Sequence[str]] = None) -> None:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog=prog, formatter_class=formatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug diagnostics to stderr")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="write truth and measurements", formatter_class=formatter)
    _add_scenario_arguments(simulate)
    simulate.set_defaults(handler=_simulate)

    track = subparsers.add_parser("track", help="run one filter on one scenario", formatter_class=formatter)
    track.add_argument("--filter", choices=FILTER_NAMES, default="ipf", help="filter to run")
    _add_scenario_arguments(track)
    _add_filter_arguments(track)
    _add_ospa_arguments(track)
    track.set_defaults(handler=_track)

    bench = subparsers.add_parser(
        "bench",
        help="Monte Carlo comparison of filters",
        description=BENCH_DESCRIPTION,
        formatter_class=formatter,
    )
    bench.add_argument("--experiment", type=Path, default=None, help="experiment file (built-in defaults when unset)")
    suppress = argparse.SUPPRESS
    bench.add_argument("--filters", nargs="+", choices=FILTER_NAMES, default=suppress, help="filters to compare")
    bench.add_argument("--runs", type=int, default=suppress, help="Monte Carlo runs")
    bench.add_argument("--seed", type=int, default=suppress, help="base seed")
    bench.add_argument("--workers", type=int, default=suppress, help="worker processes")
    bench.add_argument(
        "--no-timing",
        action="store_true",
        help="write 0.0 seconds per frame so that repeated runs produce identical files",
    )
    bench.add_argument("--output-dir", type=Path, default=suppress, help="directory for the CSV outputs")
    _add_filter_arguments(bench, overrides=True)
    _add_ospa_arguments(bench, overrides=True)
    bench.set_defaults(handler=_bench)

    score = subparsers.add_parser("ospa", help="score a trajectory file against truth", formatter_class=formatter)
    score.add_argument("estimates", type=Path, help="estimated trajectory CSV")
    score.add_argument("truth", type=Path, help="truth trajectory CSV")
    _add_ospa_arguments(score)
    score.set_defaults(handler=_ospa)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        args.handler(args)
    except ConfigSyntaxError as e:
        _show_errors(e.messages)
        sys.exit(2)
    except (ConfigError, InvalidArgumentError, OSError) as e:
        print("Config Error:", e, file=sys.stderr)
        sys.exit(2)
    except NumericalError as e:
        print("Numerical Error:", e, file=sys.stderr)
        sys.exit(3)
