"""Experiment orchestration: configs, evaluation, sweeps, exports, self-checks."""

from exosquat.harness.config import RunConfig, apply_overrides, from_dict, load_config
from exosquat.harness.export import export_plots
from exosquat.harness.metrics import EvalReport, Telemetry, action_period, metrics
from exosquat.harness.runner import (PolicyController, ReferenceController, evaluate, rollout,
                                     run_train, sweep)
from exosquat.harness.selfcheck import run_checks

__all__ = [
    "RunConfig", "apply_overrides", "from_dict", "load_config", "export_plots", "EvalReport",
    "Telemetry", "action_period", "metrics", "PolicyController", "ReferenceController",
    "evaluate", "rollout", "run_train", "sweep", "run_checks",
]
