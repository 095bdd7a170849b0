from importlib.metadata import version

from phdflow.config import load, loads, parse_experiment_file, parse_scenario, parse_scenario_file
from phdflow.experiment import ExperimentSpec, run_experiment
from phdflow.flow import FlowConfig, FlowKind, migrate
from phdflow.ident import IdentConfig, TrackEstimate
from phdflow.metrics import OspaParams, ospa, ospa_sequence
from phdflow.model import Measurement, NoiseModel, Particle, TargetState
from phdflow.phd import FilterConfig, ParticlePopulation
from phdflow.sim import ScenarioConfig, TargetSpec, Waypoint, crossing_occlusion_scenario, simulate
from phdflow.tracker import FilterKind, FrameEstimate, PhdTracker

__version__ = version("phdflow")
__all__ = [
    "ExperimentSpec",
    "FilterConfig",
    "FilterKind",
    "FlowConfig",
    "FlowKind",
    "FrameEstimate",
    "IdentConfig",
    "Measurement",
    "NoiseModel",
    "OspaParams",
    "Particle",
    "ParticlePopulation",
    "PhdTracker",
    "ScenarioConfig",
    "TargetSpec",
    "TargetState",
    "TrackEstimate",
    "Waypoint",
    "crossing_occlusion_scenario",
    "load",
    "loads",
    "migrate",
    "ospa",
    "ospa_sequence",
    "parse_experiment_file",
    "parse_scenario",
    "parse_scenario_file",
    "run_experiment",
    "simulate",
]
