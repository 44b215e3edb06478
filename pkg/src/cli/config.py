"""
Run configuration.

A run is described by one sectioned "key = value" file:

    [run]               output_dir, seed, log_dir
    [solver]            SolverConfig fields
    [dataset]           DatasetSpec fields
    [model]             overrides of the reference model configuration
    [compare.standard]  overrides for the standard model in a comparison
    [compare.improved]  overrides for the improved model in a comparison

Every key has a default, so an empty file describes the reference run. Relative
paths resolve against the directory of the config file.
"""

import os
import hashlib
import logging
import configparser
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from ..core.dataset import DatasetError, DatasetSpec
from ..core.model import MODEL_KINDS, TRAINING_KINDS, ModelConfig, reference_config
from ..core.solver import SolverConfig
from ..utils.converters import convert_value

# Get the package logger
logger = logging.getLogger(__name__)

RUN_KEYS = {"output_dir": str, "seed": int, "log_dir": str}

SOLVER_KEYS = {
    "nx": int, "ny": int, "domain_width": float, "domain_height": float,
    "inlet_velocity": float, "density": float, "dynamic_viscosity": float,
    "dt": float, "n_steps": int, "cylinders": "cylinders", "poisson_tolerance": float,
    "sample_interval": float, "boundary": str, "initial_condition": str,
    "advection_blend": "optional_float", "initial_perturbation": float,
    "sor_omega": "optional_float", "max_poisson_iterations": int, "transient_fraction": float,
}

DATASET_KEYS = {
    "sources": "str_list", "crop": "optional_int_tuple", "resize": "optional_int_tuple",
    "channels": "str_list", "t_in": int, "t_out": int, "stride": int, "split_seed": int,
    "fractions": "float_tuple", "transient_fraction": float,
}

TRAINING_KEYS = TRAINING_KINDS

# window shape comes from [dataset]
MODEL_KEYS = {key: kind for key, kind in MODEL_KINDS.items() if key not in ("channels", "t_in", "t_out")}

SECTIONS = {
    "run": RUN_KEYS,
    "solver": SOLVER_KEYS,
    "dataset": DATASET_KEYS,
    "model": MODEL_KEYS,
    "compare.standard": MODEL_KEYS,
    "compare.improved": MODEL_KEYS,
}

PATH_KEYS = {("run", "output_dir"), ("run", "log_dir"), ("dataset", "sources")}


class ConfigError(ValueError):
    """Raised for unreadable files, unknown sections or keys, and invalid values."""


@dataclass
class RunConfig:
    """
    Parsed run configuration.

    Attributes:
        path: Config file (None for the built-in defaults)
        config_hash: sha256 of the config text
        output_dir: Base directory of run artifacts
        seed: Run seed (model initialization and shuffling)
        log_dir: Log directory (None for the default location)
        solver: Solver configuration
        dataset: Dataset spec
        model_overrides: [model] values
        compare_overrides: [compare.<variant>] values per variant
    """
    path: Optional[str] = None
    config_hash: str = hashlib.sha256(b"").hexdigest()
    output_dir: str = "runs"
    seed: int = 0
    log_dir: Optional[str] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model_overrides: Dict[str, Any] = field(default_factory=dict)
    compare_overrides: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def default_path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def model_config(self, variant: Optional[str] = None) -> ModelConfig:
        """
        Model configuration for training: the reference configuration of the
        variant, sized to the dataset, with the [model] overrides applied.

        Raises:
            ConfigError: If the resulting configuration is invalid
        """
        overrides = dict(self.model_overrides)
        chosen = variant or overrides.pop("variant", "improved")
        overrides.pop("variant", None)
        overrides.setdefault("seed", self.seed)
        return self._reference(chosen, overrides)

    def comparison_configs(self) -> List[ModelConfig]:
        """Standard and improved configurations sharing the [model] training keys."""
        shared = {key: value for key, value in self.model_overrides.items() if key in TRAINING_KEYS}
        shared.setdefault("seed", self.seed)
        configs = []
        for variant in ("standard", "improved"):
            overrides = dict(shared)
            overrides.update(self.compare_overrides.get(variant, {}))
            overrides.pop("variant", None)
            configs.append(self._reference(variant, overrides))
        return configs

    def _reference(self, variant: str, overrides: Mapping[str, Any]) -> ModelConfig:
        try:
            return reference_config(variant, channels=len(self.dataset.channels), t_in=self.dataset.t_in,
                                    t_out=self.dataset.t_out, **overrides)
        except (KeyError, TypeError, ValueError) as e:
            logger.error(f"Invalid model configuration for {variant}: {e}")
            raise ConfigError(f"Invalid model configuration for {variant}: {e}") from e


def _convert_section(parser: configparser.ConfigParser, section: str, base_dir: str) -> Dict[str, Any]:
    kinds = SECTIONS[section]
    values: Dict[str, Any] = {}
    for key, text in parser.items(section):
        if key not in kinds:
            logger.error(f"Unknown key '{key}' in [{section}]")
            raise ConfigError(f"Unknown key '{key}' in section [{section}]")
        try:
            value = convert_value(text, kinds[key])
        except ValueError as e:
            logger.error(f"Invalid value for [{section}] {key}: {text!r}")
            raise ConfigError(f"Invalid value for [{section}] {key}: {e}") from e
        if (section, key) in PATH_KEYS:
            if isinstance(value, list):
                value = [os.path.normpath(os.path.join(base_dir, item)) for item in value]
            else:
                value = os.path.normpath(os.path.join(base_dir, value))
        values[key] = value
    return values


def parse_run_config(text: str, base_dir: str = ".", path: Optional[str] = None) -> RunConfig:
    """
    Parse configuration text.

    Args:
        text: Config file contents
        base_dir: Directory that relative paths resolve against
        path: Source file, recorded in the result

    Returns:
        RunConfig

    Raises:
        ConfigError: On syntax errors, unknown sections/keys or invalid values
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.Error as e:
        logger.error(f"Cannot parse config {path or '<config>'}: {e}")
        raise ConfigError(f"Cannot parse config {path or '<config>'}: {e}") from e

    unknown = [section for section in parser.sections() if section not in SECTIONS]
    if unknown:
        logger.error(f"Unknown config section(s): {', '.join(unknown)}")
        raise ConfigError(f"Unknown config section(s): {', '.join(unknown)}")

    base_dir = os.path.abspath(base_dir)
    sections = {name: (_convert_section(parser, name, base_dir) if parser.has_section(name) else {})
                for name in SECTIONS}

    run = sections["run"]
    output_dir = run.get("output_dir", os.path.join(base_dir, "runs"))
    try:
        solver = SolverConfig(**sections["solver"])
        solver.validate()
        dataset_values = dict(sections["dataset"])
        dataset_values.setdefault("sources", [os.path.join(output_dir, "snapshots")])
        if "channels" in dataset_values:
            dataset_values["channels"] = tuple(dataset_values["channels"])
        dataset = DatasetSpec(**dataset_values).validate()
    except (ValueError, DatasetError) as e:
        logger.error(f"Invalid configuration: {e}")
        raise ConfigError(f"Invalid configuration: {e}") from e

    config = RunConfig(
        path=path,
        config_hash=hashlib.sha256(text.encode("utf-8")).hexdigest(),
        output_dir=output_dir,
        seed=run.get("seed", 0),
        log_dir=run.get("log_dir"),
        solver=solver,
        dataset=dataset,
        model_overrides=sections["model"],
        compare_overrides={"standard": sections["compare.standard"], "improved": sections["compare.improved"]},
    )
    # surface model errors at load time
    config.model_config()
    return config


def load_run_config(path: Optional[str]) -> RunConfig:
    """
    Load a run configuration file (or the defaults when path is None).

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If it is invalid
    """
    if path is None:
        return parse_run_config("", base_dir=os.getcwd())
    if not os.path.isfile(path):
        logger.error(f"Config file not found: {path}")
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    logger.debug(f"Loaded config {path}")
    return parse_run_config(text, base_dir=os.path.dirname(os.path.abspath(path)), path=path)
