"""Squatting RL environment: observations, rewards, randomization, loads."""

from exosquat.environment.env import EnvConfig, MODES, SquatEnv, termination_check
from exosquat.environment.human import (HumanLoadModel, build_coupled_model, couple_human,
                                        human_spring_forces)
from exosquat.environment.observation import LatencyBuffer, ObservationBuilder, observation_dim
from exosquat.environment.perturbation import (PerturbationSchedule, PerturbationSpec,
                                               sample_perturbation)
from exosquat.environment.randomization import (NOMINAL, TEST, TRAIN, DynamicsParams,
                                                RandomizationSpec, sample_params)
from exosquat.environment.rewards import RewardBreakdown, RewardConfig, compute_reward

__all__ = [
    "EnvConfig", "MODES", "SquatEnv", "termination_check",
    "HumanLoadModel", "build_coupled_model", "couple_human", "human_spring_forces",
    "LatencyBuffer", "ObservationBuilder", "observation_dim",
    "PerturbationSchedule", "PerturbationSpec", "sample_perturbation",
    "NOMINAL", "TEST", "TRAIN", "DynamicsParams", "RandomizationSpec", "sample_params",
    "RewardBreakdown", "RewardConfig", "compute_reward",
]
