import re
from pathlib import Path
from types import SimpleNamespace
from typing import List

import pytest

from phdflow.cli import main
from phdflow.errors import NumericalError
from phdflow.experiment import ExperimentSpec
from phdflow.io import read_scores, read_trajectory

SCENARIO = """\
# two static sources, perfectly detected
duration_frames: 8
detection_probability: 1.0
clutter_rate: 0.0
targets:
- initial_state: [30.0, 5.0, 0.0, 0.0]
- initial_state: [120.0, -5.0, 0.0, 0.0]
"""

EXPERIMENT = """\
scenario: scenario.yaml
filters: [smc, raw]
runs: 3
record_timing: false
filter: {births_per_measurement: 10, particles_per_target: 10}
"""


@pytest.fixture
def scenario_file(tmp_path: Path) -> Path:
    path = tmp_path / "scenario.yaml"
    path.write_text(SCENARIO)
    return path


def _exit_code(argv: List[str]) -> int:
    with pytest.raises(SystemExit) as excinfo:
        main(argv=argv)
    return int(excinfo.value.code)


def _help(command: str, capsys: pytest.CaptureFixture[str]) -> str:
    assert _exit_code([command, "--help"]) == 0
    return " ".join(capsys.readouterr().out.split())


def test_simulate(tmp_path: Path, scenario_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    output_dir = tmp_path / "out"
    main(argv=["simulate", "--scenario", str(scenario_file), "--output-dir", str(output_dir)])
    assert capsys.readouterr().out == f"wrote 8 frames to {output_dir}\n"

    truth = read_trajectory(output_dir / "truth.csv")
    assert sorted(truth) == list(range(8))
    assert all([track.track_id for track in frame] == [1, 2] for frame in truth.values())
    lines = (output_dir / "measurements.csv").read_text().splitlines()
    assert lines[0] == "frame,azimuth,elevation"
    assert len(lines) == 1 + 16


def test_track_and_score(tmp_path: Path, scenario_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    output_dir = tmp_path / "out"
    main(
        argv=[
            "track",
            "--filter",
            "raw",
            "--scenario",
            str(scenario_file),
            "--seed",
            "4",
            "--output-dir",
            str(output_dir),
        ]
    )
    printed = capsys.readouterr().out
    assert printed.startswith("raw: mean OSPA ")
    assert sorted(path.name for path in output_dir.iterdir()) == ["ospa.csv", "tracks.csv", "truth.csv"]

    main(argv=["ospa", str(output_dir / "tracks.csv"), str(output_dir / "truth.csv")])
    value = float(capsys.readouterr().out)
    assert 0.0 < value < 20.0
    assert printed.startswith(f"raw: mean OSPA {value:.4f} ")

    main(argv=["ospa", str(output_dir / "truth.csv"), str(output_dir / "truth.csv")])
    assert float(capsys.readouterr().out) == 0.0


def test_track_smc(tmp_path: Path, scenario_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    output_dir = tmp_path / "out"
    main(
        argv=[
            "track",
            "--filter",
            "smc",
            "--scenario",
            str(scenario_file),
            "--particles-per-target",
            "20",
            "--births-per-measurement",
            "20",
            "--output-dir",
            str(output_dir),
        ]
    )
    assert capsys.readouterr().out.startswith("smc: mean OSPA ")
    assert len((output_dir / "ospa.csv").read_text().splitlines()) == 1 + 8


def test_bench(tmp_path: Path, scenario_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    experiment = tmp_path / "experiment.yaml"
    experiment.write_text(EXPERIMENT)
    output_dir = tmp_path / "bench"
    main(argv=["bench", "--experiment", str(experiment), "--runs", "2", "--output-dir", str(output_dir)])

    out = capsys.readouterr().out.splitlines()
    assert out[0].split() == ["filter", "mean_ospa", "std_ospa", "switches", "s/frame"]
    assert [line.split()[0] for line in out[1:3]] == ["smc", "raw"]

    scores = read_scores(output_dir / "scores.csv")
    assert [row.filter for row in scores] == ["smc", "raw"]
    assert all(row.seconds_per_frame == 0.0 for row in scores)
    assert len(read_scores(output_dir / "runs.csv")) == 4


def test_bench_needs_output_dir(tmp_path: Path, scenario_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    experiment = tmp_path / "experiment.yaml"
    experiment.write_text(EXPERIMENT)
    assert _exit_code(["bench", "--experiment", str(experiment)]) == 2
    assert "an output directory is required" in capsys.readouterr().err


def test_missing_scenario_file(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    argv = ["simulate", "--scenario", str(tmp_path / "missing.yaml"), "--output-dir", str(tmp_path)]
    assert _exit_code(argv) == 2
    assert "cannot read scenario file" in capsys.readouterr().err


def test_scenario_syntax_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "broken.yaml"
    path.write_text("duration_frames: 8\ntargets: [\n")
    assert _exit_code(["simulate", "--scenario", str(path), "--output-dir", str(tmp_path)]) == 2
    assert "line " in capsys.readouterr().err


def test_invalid_filter_argument(tmp_path: Path, scenario_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    argv = [
        "track",
        "--scenario",
        str(scenario_file),
        "--particles-per-target",
        "0",
        "--output-dir",
        str(tmp_path),
    ]
    assert _exit_code(argv) == 2
    assert "particles_per_target must be at least 1" in capsys.readouterr().err


def test_numerical_error_exit_code(
    tmp_path: Path,
    scenario_file: Path,
    monkeypatch: pytest.MonkeyPatch,
    capsys: pytest.CaptureFixture[str],
) -> None:
    def fail(*args: object) -> None:
        raise NumericalError("covariance is not positive definite")

    monkeypatch.setattr("phdflow.cli.simulate_run", fail)
    assert _exit_code(["simulate", "--scenario", str(scenario_file), "--output-dir", str(tmp_path)]) == 3
    assert "Numerical Error: covariance is not positive definite" in capsys.readouterr().err


def test_unknown_command() -> None:
    assert _exit_code(["fly"]) == 2


@pytest.mark.parametrize(
    "flag",
    [
        "--survival-probability",
        "--detection-probability",
        "--clutter-intensity",
        "--birth-weight",
        "--births-per-measurement",
        "--particles-per-target",
        "--max-targets",
        "--n-lambda-steps",
        "--diffusion-coeff",
        "--sensor-resolution",
        "--flow-gate",
        "--gate",
        "--warmup-frames",
        "--cutoff",
        "--order",
    ],
)
def test_track_help_describes_every_flag(flag: str, capsys: pytest.CaptureFixture[str]) -> None:
    text = _help("track", capsys)
    match = re.search(rf"{flag} [A-Z_]+ ([^-(]+)\(default: ([^)]*)\)", text)
    assert match is not None
    assert match.group(1).strip()
    assert "default" not in match.group(1)


def test_bench_help_explains_timing(capsys: pytest.CaptureFixture[str]) -> None:
    text = _help("bench", capsys)
    assert "repeated runs write identical files only with --no-timing" in text
    assert "--particles-per-target PARTICLES_PER_TARGET particles kept per estimated target when resampling" in text
    assert "Monte Carlo runs (default" not in text
    assert "--cutoff CUTOFF OSPA cutoff c in degrees --order" in text


def test_bench_flags_override_experiment_file(
    tmp_path: Path,
    scenario_file: Path,
    monkeypatch: pytest.MonkeyPatch,
    capsys: pytest.CaptureFixture[str],
) -> None:
    experiment = tmp_path / "experiment.yaml"
    experiment.write_text(EXPERIMENT)
    specs: List[ExperimentSpec] = []

    def record(spec: ExperimentSpec) -> SimpleNamespace:
        specs.append(spec)
        return SimpleNamespace(scores=[], improvements=[])

    monkeypatch.setattr("phdflow.cli.run_experiment", record)
    main(
        argv=[
            "bench",
            "--experiment",
            str(experiment),
            "--output-dir",
            str(tmp_path / "bench"),
            "--filters",
            "ipf",
            "--birth-weight",
            "1e-6",
            "--flow-gate",
            "0",
            "--warmup-frames",
            "3",
            "--cutoff",
            "5",
        ]
    )
    (spec,) = specs
    assert spec.filters == ("ipf",)
    assert spec.runs == 3
    assert not spec.record_timing
    assert spec.filter_config.birth_weight == 1e-6
    assert spec.filter_config.births_per_measurement == 10
    assert spec.filter_config.particles_per_target == 10
    assert spec.flow_config.gate is None
    assert spec.flow_config.n_lambda_steps == ExperimentSpec().flow_config.n_lambda_steps
    assert spec.ident_config.warmup_frames == 3
    assert spec.ospa.cutoff == 5.0
    assert spec.ospa.order == 1.0
    assert spec.output_dir == tmp_path / "bench"


def test_bench_rejects_invalid_override(
    tmp_path: Path,
    scenario_file: Path,
    capsys: pytest.CaptureFixture[str],
) -> None:
    experiment = tmp_path / "experiment.yaml"
    experiment.write_text(EXPERIMENT)
    argv = ["bench", "--experiment", str(experiment), "--output-dir", str(tmp_path), "--particles-per-target", "0"]
    assert _exit_code(argv) == 2
    assert "particles_per_target must be at least 1" in capsys.readouterr().err
