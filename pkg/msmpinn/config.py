from dataclasses import asdict, dataclass, field, fields, replace
import hashlib
import tomllib
from typing import Optional, Tuple

import tomli_w

from . import _exceptions as exc
from ._descriptions import VALID_METHODS, VALID_PRESETS, VALID_PROBLEMS
from .problems import get_problem
from .training import TrainConfig

SAMPLING_KEYS = ["strategy", "uniform_fraction", "pde_mode", "n_probe",
                 "n_spacetime"]
TRAIN_KEYS = [f.name for f in fields(TrainConfig)
              if f.name not in SAMPLING_KEYS]
TOP_LEVEL_KEYS = ["problem", "method", "seeds", "preset", "train",
                  "sampling", "output"]
EPOCH_KEYS = ["epochs_u", "epochs_v", "epochs_final"]
DESK_EPOCH_DIVISOR = 3

# Budgets of the published experiments, keyed by problem
PAPER_BUDGETS = {
    "allen_cahn": dict(
        n_pde=200, n_initial=600, n_boundary=0, n_adaptive=600,
        epochs_u=6000, pinn_n_pde=3200, n_probe=256,
    ),
    "rotation": dict(
        n_pde=1000, n_initial=500, n_boundary=400, n_adaptive=1000,
        n_adaptive_later=300, epochs_u=1500, pinn_n_pde=2200,
    ),
    "burgers": dict(
        n_pde=1200, n_initial=500, n_boundary=200, n_adaptive=1200,
        n_adaptive_later=300, epochs_u=1500, pinn_n_pde=2400,
    ),
    "fokker_planck": dict(
        n_pde=1500, n_initial=400, n_boundary=1200, n_adaptive=800,
        epochs_u=6000, n_spacetime=500,
    ),
    "advection6d": dict(
        n_pde=5000, n_initial=2800, n_boundary=360, n_adaptive=2000,
        epochs_u=1500,
    ),
}


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "msm-output"
    export_sets: bool = True
    export_trajectories: bool = True
    export_checkpoints: bool = True
    export_grid: bool = False
    lattice_scale: float = 1.0
    n_eval_mc: int = 20_000

    def __post_init__(self):
        if self.lattice_scale not in (1.0, 0.5):
            raise exc.ConfigurationError(
                f"lattice_scale must be 1.0 or 0.5, got {self.lattice_scale}."
            )
        if self.n_eval_mc <= 0:
            raise exc.ConfigurationError(
                f"n_eval_mc must be positive, got {self.n_eval_mc}."
            )


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    method: str = "msm"
    seeds: Tuple[int, ...] = (0, 1, 2)
    preset: str = "paper"
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.problem not in VALID_PROBLEMS:
            raise exc.UnknownProblemError(self.problem, VALID_PROBLEMS)
        if self.method not in VALID_METHODS:
            raise exc.ConfigurationError(
                f"Invalid method '{self.method}', must be one of "
                f"{VALID_METHODS}"
            )
        if self.preset not in VALID_PRESETS:
            raise exc.ConfigurationError(
                f"Invalid preset '{self.preset}', must be one of "
                f"{VALID_PRESETS}"
            )
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise exc.ConfigurationError("At least one seed is required.")
        if any(s < 0 for s in seeds):
            raise exc.ConfigurationError(f"Seeds must be >= 0, got {seeds}.")
        object.__setattr__(self, "seeds", seeds)


def default_config(problem: str) -> ExperimentConfig:
    """Published budgets of a benchmark.

    :param problem: Benchmark name
    :type problem: str

    :returns: Configuration at paper scale
    :rtype: msmpinn.config.ExperimentConfig
    """
    if problem not in VALID_PROBLEMS:
        raise exc.UnknownProblemError(problem, VALID_PROBLEMS)
    return ExperimentConfig(problem,
                            train=TrainConfig(**PAPER_BUDGETS[problem]))


def apply_preset(config: ExperimentConfig, preset: str) -> ExperimentConfig:
    """Scale a paper-scale configuration to ``preset``.

    'desk' divides every epoch count by 3 and halves the evaluation
    lattices. Applying the preset a configuration already carries is a
    no-op.
    """
    if preset not in VALID_PRESETS:
        raise exc.ConfigurationError(
            f"Invalid preset '{preset}', must be one of {VALID_PRESETS}"
        )
    if preset == config.preset:
        return config
    if preset == "paper":
        raise exc.ConfigurationError(
            "A desk configuration cannot be scaled back to paper budgets."
        )
    epochs = {
        key: getattr(config.train, key) // DESK_EPOCH_DIVISOR
        for key in EPOCH_KEYS
        if getattr(config.train, key) is not None
    }
    return replace(
        config,
        preset=preset,
        train=replace(config.train, **epochs),
        output=replace(config.output, lattice_scale=0.5),
    )


def resolve(config: ExperimentConfig) -> ExperimentConfig:
    """Fill every problem-dependent default of the training config."""
    problem = get_problem(config.problem)
    return replace(config, train=config.train.resolved(problem))


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise exc.UnknownKeysError(section, unknown)


def _table(data: dict, name: str) -> dict:
    table = data.get(name, {})
    if not isinstance(table, dict):
        raise exc.ConfigurationError(f"[{name}] must be a table.")
    return table


def parse_config(data: dict) -> ExperimentConfig:
    """Build a configuration from a parsed TOML document.

    Values missing from the document come from the benchmark defaults,
    scaled by the document's preset.
    """
    _check_keys("top level", data, TOP_LEVEL_KEYS)
    if "problem" not in data:
        raise exc.ConfigurationError("Configuration must name a problem.")
    train = _table(data, "train")
    sampling = _table(data, "sampling")
    output = _table(data, "output")
    _check_keys("train", train, TRAIN_KEYS)
    _check_keys("sampling", sampling, SAMPLING_KEYS)
    _check_keys("output", output, [f.name for f in fields(OutputConfig)])

    base = default_config(data["problem"])
    base = apply_preset(base, data.get("preset", "paper"))
    try:
        return replace(
            base,
            method=data.get("method", base.method),
            seeds=tuple(data.get("seeds", base.seeds)),
            train=replace(base.train, **train, **sampling),
            output=replace(base.output, **output),
        )
    except TypeError as e:
        raise exc.ConfigurationError(str(e))


def load_config(path) -> ExperimentConfig:
    """Read a TOML experiment configuration.

    :param path: Location of the TOML file
    :type path: os.PathLike

    :returns: Parsed configuration
    :rtype: msmpinn.config.ExperimentConfig
    """
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise exc.ConfigurationError(f"Configuration file {path} not found.")
    except tomllib.TOMLDecodeError as e:
        raise exc.ConfigurationError(f"Invalid TOML in {path}: {e}")
    return parse_config(data)


def _without_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def to_document(config: ExperimentConfig) -> dict:
    train = asdict(config.train)
    sampling = {key: train.pop(key) for key in SAMPLING_KEYS}
    return {
        "problem": config.problem,
        "method": config.method,
        "seeds": list(config.seeds),
        "preset": config.preset,
        "train": _without_none(train),
        "sampling": _without_none(sampling),
        "output": asdict(config.output),
    }


def dump_config(config: ExperimentConfig) -> str:
    """TOML text that parses back to ``config``."""
    return tomli_w.dumps(to_document(config))


def config_digest(config: ExperimentConfig,
                  length: Optional[int] = 12) -> str:
    """Short SHA-256 digest of the emitted TOML."""
    digest = hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()
    return digest[:length] if length else digest
