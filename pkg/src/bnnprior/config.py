"""INI run configuration with closed-world validation.

Each section maps onto one settings dataclass; keys must be field names and
values are converted by the field's declared type. Unknown sections or keys
are errors so a typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .errors import BnnPriorError, InvalidConfig
from .experiments import ISOTROPIC_VARIANCE, TASK_DEFAULTS, TASKS
from .posterior import LagrangianConfig, SgldConfig
from .prior import PriorTrainConfig, SwagPriorConfig
from .transfer import TransferConfig


@dataclass
class RunSection:
    task: str = "pendulum"
    seed: int = 0
    prior_mode: str = "variational"
    isotropic_variance: float = ISOTROPIC_VARIANCE

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidConfig(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.prior_mode not in ("variational", "swag"):
            raise InvalidConfig("prior_mode must be 'variational' or 'swag'")
        if not self.isotropic_variance > 0:
            raise InvalidConfig("isotropic_variance must be positive")


@dataclass
class DataSection:
    n_train: int | None = None
    n_test: int | None = None
    n_unlabeled: int | None = None
    traj_len: int = 100
    hidden: int | None = None
    image_side: int = 28
    patch_side: int = 4
    source: str = "synthetic_glyphs"
    idx_images: str | None = None
    idx_labels: str | None = None
    base_rate_gap: float = 0.3
    group_feature_corr: float = 0.5
    label_noise: float = 0.05
    friction: float = 0.001


@dataclass
class LossSection:
    background_output: str = "log_softmax_jacobian"


SECTIONS = {
    "run": RunSection,
    "data": DataSection,
    "loss": LossSection,
    "prior": PriorTrainConfig,
    "swag": SwagPriorConfig,
    "sgld": SgldConfig,
    "transfer": TransferConfig,
    "lagrangian": LagrangianConfig,
}


def _convert(raw: str, type_text: str, key: str):
    options = [t.strip() for t in str(type_text).split("|")]
    text = raw.strip()
    if "None" in options and text.lower() in ("", "none"):
        return None
    for opt in options:
        try:
            if opt == "bool":
                low = text.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(text)
            if opt == "int":
                return int(text)
            if opt == "float":
                return float(text)
            if opt == "str":
                return text
        except ValueError:
            continue
    raise InvalidConfig(f"cannot read {key} = {raw!r} as {type_text}")


def _read_section(cls, items: dict, section: str) -> dict:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in items.items():
        if key not in fields or key == "swag":
            allowed = sorted(k for k in fields if k != "swag")
            raise InvalidConfig(f"unknown key [{section}] {key}; allowed: {allowed}")
        out[key] = _convert(raw, fields[key].type, f"[{section}] {key}")
    return out


def _instantiate(cls, values: dict, section: str):
    try:
        return cls(**values)
    except BnnPriorError:
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"[{section}]: {exc}") from exc


@dataclass
class RunConfig:
    """Explicit settings from a config file; task defaults fill everything else."""

    values: dict = field(default_factory=dict)

    def explicit(self, section: str) -> dict:
        return dict(self.values.get(section, {}))

    @property
    def run(self) -> RunSection:
        return _instantiate(RunSection, self.explicit("run"), "run")

    @property
    def task(self) -> str:
        return self.run.task

    def _with_defaults(self, section: str) -> dict:
        base = dict(TASK_DEFAULTS[self.task].get(section, {}))
        base.update(self.explicit(section))
        return base

    def data(self) -> dict:
        return self._with_defaults("data")

    def loss(self) -> LossSection:
        return _instantiate(LossSection, self.explicit("loss"), "loss")

    def prior(self) -> PriorTrainConfig:
        vals = self._with_defaults("prior")
        vals.setdefault("base_prior_variance", self.run.isotropic_variance)
        vals.setdefault("seed", self.run.seed)
        return _instantiate(PriorTrainConfig, vals, "prior")

    def swag(self) -> SwagPriorConfig:
        vals = self._with_defaults("swag")
        vals.setdefault("seed", self.run.seed)
        return _instantiate(SwagPriorConfig, vals, "swag")

    def sgld(self) -> SgldConfig:
        vals = self._with_defaults("sgld")
        vals.setdefault("seed", self.run.seed)
        return _instantiate(SgldConfig, vals, "sgld")

    def transfer(self, **overrides) -> TransferConfig:
        vals = self._with_defaults("transfer")
        vals.setdefault("seed", self.run.seed)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        cfg = _instantiate(TransferConfig, vals, "transfer")
        if "swag" in self.values:
            cfg.swag = self.swag()
        return cfg

    def lagrangian(self) -> LagrangianConfig:
        vals = self._with_defaults("lagrangian")
        vals.setdefault("seed", self.run.seed)
        return _instantiate(LagrangianConfig, vals, "lagrangian")

    def to_dict(self) -> dict:
        return {k: dict(v) for k, v in self.values.items()}


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse INI text. ``overrides`` maps section -> {key: value} applied on top."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfig(f"malformed config: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise InvalidConfig(f"unknown section [{section}]; allowed: {sorted(SECTIONS)}")
        values[section] = _read_section(SECTIONS[section], dict(parser.items(section)), section)
    for section, items in (overrides or {}).items():
        values.setdefault(section, {}).update(items)
    cfg = RunConfig(values)
    # validate every section eagerly so errors surface at load time
    cfg.run, cfg.loss()
    for name in ("prior", "swag", "sgld", "transfer", "lagrangian"):
        if name in values:
            getattr(cfg, name)()
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    if path is None:
        return parse_config("", overrides)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError as exc:
        raise InvalidConfig(f"config file not found: {path}") from exc
    return parse_config(text, overrides)
