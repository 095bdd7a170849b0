import re
from pathlib import Path

import numpy as np
import pytest

from phdflow.config import (
    compose,
    dumps_scenario,
    load,
    loads,
    parse_experiment,
    parse_experiment_file,
    parse_scenario,
    parse_scenario_file,
)
from phdflow.errors import ConfigError, ConfigSyntaxError
from phdflow.model import TargetState
from phdflow.sim import Waypoint, crossing_occlusion_scenario

SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"

_MINIMAL = """\
duration_frames: 10
targets:
- initial_state: [30, 5, 1, 0]
"""


def test_loads() -> None:
    assert loads("a: [1, 2.5]\n'b': {c: null}\n") == {"a": [1, 2.5], "b": {"c": None}}


def test_load(tmp_path: Path) -> None:
    path = tmp_path / "values.yaml"
    path.write_text("runs: 3\n")
    assert load(path) == {"runs": 3}


def test_compose_reports_empty_document() -> None:
    with pytest.raises(ConfigSyntaxError, match="empty document"):
        compose("# nothing here\n")


def test_parse_scenario_defaults() -> None:
    scenario = parse_scenario(_MINIMAL)
    assert scenario.duration_frames == 10
    assert scenario.dt == 1.0
    assert scenario.detection_probability == 0.9
    assert scenario.clutter_rate == 1.0
    assert scenario.seed == 0
    np.testing.assert_array_equal(scenario.measurement_noise_cov, np.diag([4.0, 4.0]))
    np.testing.assert_array_equal(scenario.process_noise_cov, np.zeros((4, 4)))
    (target,) = scenario.targets
    assert target.initial_state == TargetState(30.0, 5.0, 1.0, 0.0)
    assert target.birth_frame == 0
    assert target.death_frame is None
    assert target.active is None


def test_parse_scenario_full_target() -> None:
    scenario = parse_scenario(
        """\
duration_frames: 50
dt: 0.5
clutter_rate: 0
targets:
- initial_state: [350, 0, 0, 0]
  birth_frame: 5
  death_frame: 40
  waypoints:
  - {frame: 20, azimuth: 10, elevation: 5}
  active: [[5, 15], [25, 40]]
"""
    )
    (target,) = scenario.targets
    assert (target.birth_frame, target.death_frame) == (5, 40)
    assert target.waypoints == (Waypoint(20, 10.0, 5.0),)
    assert target.active == ((5, 15), (25, 40))
    assert scenario.clutter_rate == 0.0
    assert scenario.dt == 0.5


def test_null_values_take_the_default() -> None:
    scenario = parse_scenario(
        "duration_frames: 10\nseed: ~\ntargets:\n- {initial_state: [0, 0, 0, 0], death_frame: null}\n"
    )
    assert scenario.seed == 0
    assert scenario.targets[0].death_frame is None


@pytest.mark.parametrize(
    "inputs,expected_message",
    [
        (
            "duration_frames: 10\ncolour: red\ntargets:\n- initial_state: [0, 0, 0, 0]\n",
            "line 2: unknown key 'colour' in scenario",
        ),
        (
            "duration_frames: 10\nduration_frames: 11\ntargets:\n- initial_state: [0, 0, 0, 0]\n",
            "line 2: duplicate key 'duration_frames' in scenario",
        ),
        (
            "targets:\n- initial_state: [0, 0, 0, 0]\n",
            "line 1: missing mandatory key 'duration_frames' in scenario",
        ),
        (
            "duration_frames: 10.5\ntargets:\n- initial_state: [0, 0, 0, 0]\n",
            "line 1: 'duration_frames' must be an integer",
        ),
        (
            "duration_frames: 10\ntargets:\n- initial_state: [0, 0, 0]\n",
            "line 3: 'initial_state' must have 4 numbers, got 3",
        ),
        (
            "duration_frames: 10\ntargets:\n- initial_state: [0, 0, 0, 0]\n  birth_frame: 6\n  death_frame: 6\n",
            "line 3: target needs 0 <= birth_frame < death_frame <= duration_frames",
        ),
        (
            "duration_frames: 10\ntargets: []\n",
            "line 1: 'targets' must not be empty",
        ),
        (
            "duration_frames: 10\ntargets: none\n",
            "line 2: 'targets' must be a list",
        ),
        (
            "duration_frames: 10\ndetection_probability: 1.5\ntargets:\n- initial_state: [0, 0, 0, 0]\n",
            "line 1: detection_probability must be in [0, 1]",
        ),
        (
            "duration_frames: 10\ntargets:\n- initial_state: [0, 0, 0, 0]\n  active: [[4, 2]]\n",
            "line 4: activity interval [4, 2) is empty or negative",
        ),
        (
            "duration_frames: 10\nmeasurement_noise: [[4, 0], [0]]\ntargets:\n- initial_state: [0, 0, 0, 0]\n",
            "line 2: 'measurement_noise' must be a 2x2 matrix",
        ),
        (
            "duration_frames: 10\nclutter_rate: '1.0'\ntargets:\n- initial_state: [0, 0, 0, 0]\n",
            "line 2: 'clutter_rate' must be a number",
        ),
        (
            "- duration_frames: 10\n",
            "line 1: scenario must be a mapping",
        ),
    ],
)
def test_parse_scenario_errors(inputs: str, expected_message: str) -> None:
    with pytest.raises(ConfigError) as excinfo:
        parse_scenario(inputs)
    assert expected_message in str(excinfo.value)


def test_parse_scenario_syntax_error() -> None:
    with pytest.raises(ConfigSyntaxError) as excinfo:
        parse_scenario("duration_frames: 10\n  targets: []\n")
    assert excinfo.value.messages
    assert re.match(r"line \d+: ", excinfo.value.messages[0])


def test_dumps_scenario_matches_bundled_file() -> None:
    text = dumps_scenario(crossing_occlusion_scenario())
    assert loads(text) == load(SCENARIO_DIR / "crossing_occlusion.yaml")
    assert text.splitlines()[0] == "duration_frames: 200"
    assert "initial_state: [40.0, 8.0, 0.5, 0.0]" in text


def test_dumps_scenario_is_stable() -> None:
    text = dumps_scenario(parse_scenario(_MINIMAL))
    assert dumps_scenario(parse_scenario(text)) == text


def test_parse_scenario_file_matches_canned_scenario() -> None:
    scenario = parse_scenario_file(SCENARIO_DIR / "crossing_occlusion.yaml")
    canned = crossing_occlusion_scenario()
    assert scenario.duration_frames == canned.duration_frames
    assert [t.initial_state for t in scenario.targets] == [t.initial_state for t in canned.targets]
    assert [t.active for t in scenario.targets] == [t.active for t in canned.targets]
    assert [scenario.death_frame(t) for t in scenario.targets] == [200, 200]


def test_parse_scenario_file_missing(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="cannot read scenario file"):
        parse_scenario_file(tmp_path / "missing.yaml")


def test_parse_experiment_file_resolves_scenario_path() -> None:
    spec = parse_experiment_file(SCENARIO_DIR / "benchmark.yaml")
    assert spec.filters == ("ipf", "npf", "smc", "raw")
    assert spec.runs == 10
    assert spec.scenario.duration_frames == 200
    assert spec.ospa.cutoff == 20.0
    assert spec.filter_config.births_per_measurement == 50
    assert spec.filter_config.birth_weight == 1e-8
    assert spec.flow_config.n_lambda_steps == 20
    assert spec.flow_config.gate == 3.0
    assert spec.ident_config.gate == 10.0
    assert spec.ident_config.warmup_frames == 2
    assert spec.output_dir is None


def test_parse_experiment_defaults() -> None:
    spec = parse_experiment("{}")
    assert spec.filters == ("smc", "npf", "ipf", "raw")
    assert spec.runs == 10
    assert spec.seed == 0
    assert spec.workers == 1
    assert spec.record_timing
    assert spec.scenario.duration_frames == 200


def test_parse_experiment_inline_scenario(tmp_path: Path) -> None:
    spec = parse_experiment(
        """\
scenario:
  duration_frames: 5
  targets:
  - initial_state: [10, 0, 0, 0]
filters: [smc]
runs: 2
output_dir: out
record_timing: false
filter: {clutter_intensity: 1e-3, birth_weight: 2.5E-9, max_targets: 3}
flow: {diffusion_coeff: 0.5, definite_bracket: false, gate: false}
identification: {warmup_frames: 4}
""",
        tmp_path,
    )
    assert spec.scenario.duration_frames == 5
    assert spec.filters == ("smc",)
    assert spec.output_dir == Path("out")
    assert not spec.record_timing
    assert spec.filter_config.kappa == 0.001
    assert spec.filter_config.birth_weight == 2.5e-9
    assert spec.filter_config.max_targets == 3
    assert spec.flow_config.diffusion_coeff == 0.5
    assert not spec.flow_config.definite_bracket
    assert spec.flow_config.gate is None
    assert spec.ident_config.warmup_frames == 4


@pytest.mark.parametrize(
    "inputs,expected_message",
    [
        ("filters: [kalman]", "'filters' entries must be one of"),
        ("filters: [smc, smc]", "duplicate filter 'smc'"),
        ("filters: []", "'filters' must not be empty"),
        ("runs: 0", "runs must be at least 1"),
        ("flow:\n  n_lambda_steps: 20\n  steps: 3\n", "line 3: unknown key 'steps' in flow"),
        ("flow: {gate: -1.0}", "gate must be positive"),
        ("filter: {survival_probability: 2}", "survival_probability must be in [0, 1]"),
        ("record_timing: 1", "'record_timing' must be true or false"),
        ("scenario: 3", "'scenario' must be a string"),
    ],
)
def test_parse_experiment_errors(inputs: str, expected_message: str) -> None:
    with pytest.raises(ConfigError) as excinfo:
        parse_experiment(inputs)
    assert expected_message in str(excinfo.value)
