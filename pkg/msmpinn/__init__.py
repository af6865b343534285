from .config import (ExperimentConfig, default_config, dump_config,
                     load_config)
from .flow import VelocityPotential, evolve_samples, pushforward_density
from .network import DenseNetwork, init_network, input_jet
from .problems import get_problem
from .training import TrainConfig, msm_run, pinn_run


__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "default_config", "dump_config", "load_config",
           "VelocityPotential", "evolve_samples", "pushforward_density",
           "DenseNetwork", "init_network", "input_jet", "get_problem",
           "TrainConfig", "msm_run", "pinn_run"]
