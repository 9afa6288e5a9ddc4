"""Run configuration: YAML files, named presets and CLI overrides.

A config file is a YAML mapping. ``preset`` names a starting point
(``case1``, ``case2``, ``case3`` or ``desk``); every other top-level key
overrides a :class:`RunConfig` field. The nested sections ``reward``,
``perturbation``, ``pd``, ``ppo``, ``env`` and ``human`` are merged key by key,
and randomization entries may be a preset name or a mapping of ranges.
"""

import copy
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import yaml

from exosquat.actuation import PDConfig
from exosquat.environment import EnvConfig, HumanLoadModel, PerturbationSpec, RewardConfig
from exosquat.environment.randomization import PRESETS, RandomizationSpec
from exosquat.errors import InvalidSpec
from exosquat.ppo import DESK, PpoConfig

PRESET_NAMES = ("case1", "case2", "case3", "desk")


@dataclass
class RunConfig:
    """Everything one train/eval/sweep invocation needs.

    Attributes:
        mode: ``clean``, ``perturbed`` or ``human``.
        randomization: dynamics ranges while training.
        eval_randomization: ranges for ``eval`` (``none`` is the nominal model).
        sweep_randomization: ranges for the out-of-distribution sweep.
        stress_levels: perturbation magnitude multipliers evaluated by ``eval``.
        env: extra :class:`EnvConfig` fields (``horizon``, ``substeps``, ...).
        seed: master seed; every random stream derives from it.
    """

    name: str = "run"
    mode: str = "clean"
    model_path: str | None = None
    randomization: object = "train"
    eval_randomization: object = "none"
    sweep_randomization: object = "test"
    stress_levels: tuple = (1.0,)
    reward: RewardConfig = field(default_factory=RewardConfig)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    human: HumanLoadModel = field(default_factory=HumanLoadModel)
    pd: PDConfig = field(default_factory=PDConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "runs/run"
    cycles: int = 3
    envs: int = 200
    workers: int = 1
    telemetry: bool = True
    controller: str = "policy"  # or "reference" for target playback

    def __post_init__(self):
        self.stress_levels = tuple(float(x) for x in self.stress_levels)
        if self.mode not in ("clean", "perturbed", "human"):
            raise InvalidSpec(f"unknown mode {self.mode!r}")
        if not isinstance(self.seed, int):
            raise InvalidSpec("seed must be an explicit integer")
        if self.model_path is not None and not Path(self.model_path).is_file():
            raise InvalidSpec(f"model file not found: {self.model_path}")
        if self.controller not in ("policy", "reference"):
            raise InvalidSpec("controller must be 'policy' or 'reference'")
        for key in ("randomization", "eval_randomization", "sweep_randomization"):
            val = getattr(self, key)
            if isinstance(val, str) and val not in PRESETS:
                raise InvalidSpec(f"{key}: unknown preset {val!r}")
        if self.cycles < 1 or self.envs < 1 or self.workers < 1:
            raise InvalidSpec("cycles, envs and workers must be >= 1")
        unknown = set(self.env) - ({f.name for f in fields(EnvConfig)}
                                   - {"reward", "perturbation", "human", "pd", "mode"})
        if unknown:
            raise InvalidSpec(f"unknown env keys: {sorted(unknown)}")

    def env_config(self, which="train", stress=1.0):
        """:class:`EnvConfig` for ``train``, ``eval`` or ``sweep``."""
        rand = {"train": self.randomization, "eval": self.eval_randomization,
                "sweep": self.sweep_randomization}[which]
        pert = self.perturbation
        if stress != 1.0:
            pert = pert.stressed(stress)
        extra = dict(self.env)
        if which != "train":
            extra.update(horizon=None, init_phase="start")
        return EnvConfig(mode=self.mode, randomization=rand, perturbation=pert, human=self.human,
                         reward=self.reward, pd=self.pd, model_path=self.model_path, **extra)

    def to_dict(self):
        d = asdict(self)
        d["ppo"] = self.ppo.to_dict()
        d["stress_levels"] = list(self.stress_levels)
        for key in ("randomization", "eval_randomization", "sweep_randomization"):
            val = getattr(self, key)
            if isinstance(val, RandomizationSpec):
                d[key] = val.to_dict()
        return d


def _preset_data(name):
    if name not in PRESET_NAMES:
        raise InvalidSpec(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    text = resources.files("exosquat").joinpath("configs", f"{name}.yaml").read_text()
    return yaml.safe_load(text) or {}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in (
                "randomization", "eval_randomization", "sweep_randomization"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _resolve(data):
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        data = _merge(_resolve(_preset_data(preset)), data)
    return data


def from_dict(data):
    """Build a :class:`RunConfig`, expanding ``preset`` references."""
    data = _resolve(data or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise InvalidSpec(f"unknown config keys: {sorted(unknown)}")
    kw = dict(data)
    try:
        if "reward" in kw:
            kw["reward"] = RewardConfig(**kw["reward"])
        if "perturbation" in kw:
            kw["perturbation"] = PerturbationSpec(**kw["perturbation"])
        if "human" in kw:
            kw["human"] = HumanLoadModel(**kw["human"])
        if "pd" in kw:
            kw["pd"] = PDConfig(**kw["pd"])
        if "ppo" in kw:
            kw["ppo"] = PpoConfig(**kw["ppo"])
        for key in ("randomization", "eval_randomization", "sweep_randomization"):
            if isinstance(kw.get(key), dict):
                kw[key] = RandomizationSpec.from_dict(kw[key])
        return RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise InvalidSpec(str(exc)) from exc


def load_config(path=None, preset=None):
    """Load a YAML file (or just a preset) into a :class:`RunConfig`."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise InvalidSpec(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise InvalidSpec("config file must hold a mapping")
    if preset is not None and "preset" not in data:
        data["preset"] = preset
    return from_dict(data)


def apply_overrides(cfg, seed=None, mode=None, cycles=None, envs=None, out=None):
    kw = {k: v for k, v in dict(seed=seed, mode=mode, cycles=cycles, envs=envs, out=out).items()
          if v is not None}
    if "seed" in kw:
        kw["ppo"] = replace(cfg.ppo, seed=kw["seed"])
    return replace(cfg, **kw) if kw else cfg


def desk_ppo(**over):
    return PpoConfig(**dict(DESK, **over))
