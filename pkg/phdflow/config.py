"""
Typed decoding of scenario and experiment files.

Both files are YAML. Decoding walks the composed node graph instead of the
loaded values so every error can name the key and the line it comes from.
"""

import re
from os import PathLike
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Set, Tuple, TypeVar, Union

import numpy as np
import yaml
from yaml.constructor import SafeConstructor
from yaml.nodes import MappingNode, Node, ScalarNode, SequenceNode

from phdflow.errors import ConfigError, ConfigSyntaxError, PhdflowError
from phdflow.experiment import FILTER_NAMES, ExperimentSpec
from phdflow.flow import FlowConfig
from phdflow.ident import IdentConfig
from phdflow.metrics import OspaParams
from phdflow.model import TargetState
from phdflow.phd import FilterConfig
from phdflow.sim import ScenarioConfig, TargetSpec, Waypoint, crossing_occlusion_scenario
from phdflow.types import FloatArray

_T = TypeVar("_T")
_MISSING: Any = object()

_INT_TAG = "tag:yaml.org,2002:int"
_FLOAT_TAG = "tag:yaml.org,2002:float"
_BOOL_TAG = "tag:yaml.org,2002:bool"
_STR_TAG = "tag:yaml.org,2002:str"
_NULL_TAG = "tag:yaml.org,2002:null"
# YAML 1.1 resolves 1e-8 to a string
_EXPONENT = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+")


def _line(node: Node) -> int:
    return int(node.start_mark.line) + 1


def _syntax_error(e: yaml.YAMLError) -> ConfigSyntaxError:
    if isinstance(e, yaml.MarkedYAMLError) and e.problem_mark is not None:
        return ConfigSyntaxError(f"line {e.problem_mark.line + 1}: {e.problem or e.context}")
    return ConfigSyntaxError(str(e))


def compose(text: str) -> Node:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        raise _syntax_error(e)
    if node is None:
        raise ConfigSyntaxError("line 1: empty document")
    return node


def loads(text: str) -> Any:
    """Parse YAML text into plain Python values."""

    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise _syntax_error(e)


def load(filename: Union[str, "PathLike[str]"], *, encoding: Optional[str] = None) -> Any:
    with open(filename, "r", encoding=encoding) as configfile:
        return loads(configfile.read())


def _error(node: Node, message: str) -> ConfigError:
    return ConfigError(f"line {_line(node)}: {message}")


class _Field(NamedTuple):
    key: str
    key_node: Node
    value: Node


class _Section:
    """Entries of one mapping node, consumed key by key."""

    def __init__(self, node: Node, name: str) -> None:
        if not isinstance(node, MappingNode):
            raise _error(node, f"{name} must be a mapping")
        self.node = node
        self.name = name
        self._fields: Dict[str, _Field] = {}
        for key_node, value_node in node.value:
            if not isinstance(key_node, ScalarNode) or key_node.tag != _STR_TAG:
                raise _error(key_node, f"keys of {name} must be strings")
            key = str(key_node.value)
            if key in self._fields:
                raise _error(key_node, f"duplicate key {key!r} in {name}")
            self._fields[key] = _Field(key, key_node, value_node)
        self._used: Set[str] = set()

    def take(self, key: str, decode: Callable[[_Field], _T], default: Any = _MISSING) -> _T:
        field = self._fields.get(key)
        if field is None or field.value.tag == _NULL_TAG:
            if default is _MISSING:
                raise _error(self.node, f"missing mandatory key {key!r} in {self.name}")
            if field is not None:
                self._used.add(key)
            return default  # type: ignore[no-any-return]
        self._used.add(key)
        return decode(field)

    def finish(self) -> None:
        for key, field in self._fields.items():
            if key not in self._used:
                raise _error(field.key_node, f"unknown key {key!r} in {self.name}")


def _scalar(node: Node) -> Any:
    return SafeConstructor().construct_object(node)


def _number_value(node: Node, what: str) -> float:
    if isinstance(node, ScalarNode):
        if node.tag in (_INT_TAG, _FLOAT_TAG):
            return float(_scalar(node))
        if node.tag == _STR_TAG and node.style is None and _EXPONENT.fullmatch(node.value):
            return float(node.value)
    raise _error(node, f"{what} must be a number")


def _integer_value(node: Node, what: str) -> int:
    if not isinstance(node, ScalarNode) or node.tag != _INT_TAG:
        raise _error(node, f"{what} must be an integer")
    return int(_scalar(node))


def _number(field: _Field) -> float:
    return _number_value(field.value, repr(field.key))


def _integer(field: _Field) -> int:
    return _integer_value(field.value, repr(field.key))


def _boolean(field: _Field) -> bool:
    if not isinstance(field.value, ScalarNode) or field.value.tag != _BOOL_TAG:
        raise _error(field.value, f"{field.key!r} must be true or false")
    return bool(_scalar(field.value))


def _string(field: _Field) -> str:
    if not isinstance(field.value, ScalarNode) or field.value.tag != _STR_TAG:
        raise _error(field.value, f"{field.key!r} must be a string")
    return str(field.value.value)


def _elements(field: _Field) -> List[Node]:
    if not isinstance(field.value, SequenceNode):
        raise _error(field.value, f"{field.key!r} must be a list")
    return list(field.value.value)


def _vector(field: _Field, size: int) -> List[float]:
    elements = _elements(field)
    if len(elements) != size:
        raise _error(field.value, f"{field.key!r} must have {size} numbers, got {len(elements)}")
    return [_number_value(element, repr(field.key)) for element in elements]


def _matrix(size: int) -> Callable[[_Field], FloatArray]:
    def decode(field: _Field) -> FloatArray:
        rows: List[List[float]] = []
        for row in _elements(field):
            if not isinstance(row, SequenceNode) or len(row.value) != size:
                raise _error(row, f"{field.key!r} must be a {size}x{size} matrix")
            rows.append([_number_value(value, repr(field.key)) for value in row.value])
        if len(rows) != size:
            raise _error(field.value, f"{field.key!r} must be a {size}x{size} matrix")
        return np.array(rows)

    return decode


def _check(condition: bool, node: Node, message: str) -> None:
    if not condition:
        raise _error(node, message)


def _build(node: Node, factory: Callable[..., _T], **kwargs: Any) -> _T:
    """Construct a config object, reporting model validation errors at ``node``."""

    try:
        return factory(**kwargs)
    except PhdflowError as e:
        raise _error(node, str(e))


def _waypoint(node: Node) -> Waypoint:
    section = _Section(node, "waypoint")
    waypoint = Waypoint(
        frame=section.take("frame", _integer),
        azimuth=section.take("azimuth", _number),
        elevation=section.take("elevation", _number),
    )
    section.finish()
    return waypoint


def _interval(node: Node) -> Tuple[int, int]:
    if not isinstance(node, SequenceNode) or len(node.value) != 2:
        raise _error(node, "activity interval must be a [start, end] pair")
    start, end = (_integer_value(element, "activity interval bound") for element in node.value)
    _check(0 <= start < end, node, f"activity interval [{start}, {end}) is empty or negative")
    return start, end


def _target(node: Node, duration: int) -> TargetSpec:
    section = _Section(node, "target")
    initial = section.take("initial_state", lambda field: _vector(field, 4))
    birth_frame = section.take("birth_frame", _integer, 0)
    death_frame = section.take("death_frame", _integer, None)
    death = duration if death_frame is None else death_frame
    _check(
        0 <= birth_frame < death <= duration,
        node,
        f"target needs 0 <= birth_frame < death_frame <= duration_frames, got {birth_frame}, {death}, {duration}",
    )
    target = _build(
        node,
        TargetSpec,
        initial_state=_build(node, TargetState.from_array, values=initial),
        birth_frame=birth_frame,
        death_frame=death_frame,
        waypoints=tuple(section.take("waypoints", lambda field: [_waypoint(e) for e in _elements(field)], [])),
        active=section.take("active", lambda field: tuple(_interval(e) for e in _elements(field)), None),
    )
    section.finish()
    return target


def decode_scenario(node: Node) -> ScenarioConfig:
    section = _Section(node, "scenario")
    duration = section.take("duration_frames", _integer)
    _check(duration >= 1, node, "'duration_frames' must be positive")
    targets = section.take("targets", lambda field: [_target(element, duration) for element in _elements(field)])
    _check(bool(targets), node, "'targets' must not be empty")
    scenario = _build(
        node,
        ScenarioConfig,
        duration_frames=duration,
        targets=tuple(targets),
        dt=section.take("dt", _number, 1.0),
        detection_probability=section.take("detection_probability", _number, 0.9),
        clutter_rate=section.take("clutter_rate", _number, 1.0),
        measurement_noise_cov=section.take("measurement_noise", _matrix(2), np.diag([4.0, 4.0])),
        process_noise_cov=section.take("process_noise", _matrix(4), np.zeros((4, 4))),
        seed=section.take("seed", _integer, 0),
    )
    section.finish()
    return scenario


def parse_scenario(text: str) -> ScenarioConfig:
    return decode_scenario(compose(text))


def parse_scenario_file(path: Union[str, "PathLike[str]"]) -> ScenarioConfig:
    try:
        with open(path) as scenariofile:
            text = scenariofile.read()
    except OSError as e:
        raise ConfigError(f"cannot read scenario file {path}: {e}")
    return parse_scenario(text)


def decode_filter_config(node: Node) -> FilterConfig:
    section = _Section(node, "filter")
    defaults = FilterConfig()
    config = _build(
        node,
        FilterConfig,
        survival_probability=section.take("survival_probability", _number, defaults.survival_probability),
        detection_probability=section.take("detection_probability", _number, defaults.detection_probability),
        clutter_intensity=section.take("clutter_intensity", _number, None),
        birth_weight=section.take("birth_weight", _number, defaults.birth_weight),
        births_per_measurement=section.take("births_per_measurement", _integer, defaults.births_per_measurement),
        particles_per_target=section.take("particles_per_target", _integer, defaults.particles_per_target),
        ess_fraction=section.take("ess_fraction", _number, defaults.ess_fraction),
        max_targets=section.take("max_targets", _integer, defaults.max_targets),
        birth_spread=section.take("birth_spread", _matrix(2), defaults.birth_spread),
        process_noise_cov=section.take("process_noise", _matrix(4), defaults.process_noise_cov),
        measurement_noise_cov=section.take("measurement_noise", _matrix(2), defaults.measurement_noise_cov),
        covariance_jitter=section.take("covariance_jitter", _number, defaults.covariance_jitter),
    )
    section.finish()
    return config


def decode_flow_config(node: Node) -> FlowConfig:
    section = _Section(node, "flow")
    defaults = FlowConfig()
    config = _build(
        node,
        FlowConfig,
        n_lambda_steps=section.take("n_lambda_steps", _integer, defaults.n_lambda_steps),
        diffusion_coeff=section.take("diffusion_coeff", _number, defaults.diffusion_coeff),
        sensor_resolution=section.take("sensor_resolution", _number, defaults.sensor_resolution),
        jitter=section.take("jitter", _number, defaults.jitter),
        max_jitter=section.take("max_jitter", _number, defaults.max_jitter),
        definite_bracket=section.take("definite_bracket", _boolean, defaults.definite_bracket),
        gate=section.take("gate", _gate, defaults.gate),
    )
    section.finish()
    return config


def _gate(field: _Field) -> Optional[float]:
    """A gate in standard deviations; ``false`` turns it off."""

    if isinstance(field.value, ScalarNode) and field.value.tag == _BOOL_TAG and not _scalar(field.value):
        return None
    return _number(field)


def decode_ident_config(node: Node) -> IdentConfig:
    section = _Section(node, "identification")
    config = _build(
        node,
        IdentConfig,
        gate=section.take("gate", _number, IdentConfig.gate),
        warmup_frames=section.take("warmup_frames", _integer, IdentConfig.warmup_frames),
    )
    section.finish()
    return config


def decode_ospa_params(node: Node) -> OspaParams:
    section = _Section(node, "ospa")
    params = _build(
        node,
        OspaParams,
        cutoff=section.take("cutoff", _number, OspaParams.cutoff),
        order=section.take("order", _number, OspaParams.order),
    )
    section.finish()
    return params


def _filters(field: _Field) -> Tuple[str, ...]:
    names: List[str] = []
    for element in _elements(field):
        if not isinstance(element, ScalarNode) or element.value not in FILTER_NAMES:
            raise _error(element, f"'filters' entries must be one of {list(FILTER_NAMES)}")
        if element.value in names:
            raise _error(element, f"duplicate filter {element.value!r}")
        names.append(str(element.value))
    _check(bool(names), field.value, "'filters' must not be empty")
    return tuple(names)


def decode_experiment(node: Node, base_dir: Optional[Path] = None) -> ExperimentSpec:
    """
    Decode an experiment mapping. A ``scenario`` given as a string is a path
    resolved against ``base_dir``; when absent the crossing/occlusion scenario
    is used.
    """

    section = _Section(node, "experiment")

    def scenario(field: _Field) -> ScenarioConfig:
        if isinstance(field.value, ScalarNode):
            path = Path(_string(field))
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return parse_scenario_file(path)
        return decode_scenario(field.value)

    output_dir = section.take("output_dir", _string, None)
    spec = _build(
        node,
        ExperimentSpec,
        scenario=section.take("scenario", scenario, None) or crossing_occlusion_scenario(),
        filters=section.take("filters", _filters, FILTER_NAMES),
        runs=section.take("runs", _integer, 10),
        seed=section.take("seed", _integer, 0),
        output_dir=None if output_dir is None else Path(output_dir),
        workers=section.take("workers", _integer, 1),
        record_timing=section.take("record_timing", _boolean, True),
        ospa=section.take("ospa", lambda field: decode_ospa_params(field.value), OspaParams()),
        filter_config=section.take("filter", lambda field: decode_filter_config(field.value), FilterConfig()),
        flow_config=section.take("flow", lambda field: decode_flow_config(field.value), FlowConfig()),
        ident_config=section.take(
            "identification", lambda field: decode_ident_config(field.value), IdentConfig()
        ),
    )
    section.finish()
    return spec


def parse_experiment(text: str, base_dir: Optional[Path] = None) -> ExperimentSpec:
    return decode_experiment(compose(text), base_dir)


def parse_experiment_file(path: Union[str, "PathLike[str]"]) -> ExperimentSpec:
    try:
        with open(path) as experimentfile:
            text = experimentfile.read()
    except OSError as e:
        raise ConfigError(f"cannot read experiment file {path}: {e}")
    return parse_experiment(text, Path(path).parent)


def _rows(matrix: FloatArray) -> List[List[float]]:
    return [[float(v) for v in row] for row in np.asarray(matrix)]


def scenario_document(config: ScenarioConfig) -> Dict[str, Any]:
    """Plain values of a scenario in the key order of the scenario file."""

    return {
        "duration_frames": config.duration_frames,
        "dt": float(config.dt),
        "detection_probability": float(config.detection_probability),
        "clutter_rate": float(config.clutter_rate),
        "measurement_noise": _rows(config.measurement_noise_cov),
        "process_noise": _rows(config.process_noise_cov),
        "seed": config.seed,
        "targets": [
            {
                "initial_state": [float(v) for v in target.initial_state.to_array()],
                "birth_frame": target.birth_frame,
                "death_frame": config.death_frame(target),
                "waypoints": [
                    {"frame": w.frame, "azimuth": float(w.azimuth), "elevation": float(w.elevation)}
                    for w in target.waypoints
                ],
                **({} if target.active is None else {"active": [[start, end] for start, end in target.active]}),
            }
            for target in config.targets
        ],
    }


def dumps_scenario(config: ScenarioConfig) -> str:
    """Canonical YAML of a scenario: file key order, numeric rows inline."""

    return yaml.safe_dump(scenario_document(config), sort_keys=False, default_flow_style=None)
