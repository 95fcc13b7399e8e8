"""Pseudospectral Klein-Gordon scattering lab."""
from .config import ConfigError, ExperimentConfig, load_config, load_config_file
from .experiment import run_experiment
from .fitting import ExponentFit, fit_exponent
from .grid import Field, FieldState, Grid, make_grid, s_norm
from .interactions import (MovingBump, NonlinearLocal, NonlinearPower, PotentialSpec, Profile,
                           StaticLocalized, TimeModulated, evaluate_interaction)
from .phase_space import CutoffSpec, apply_cutoff, operator_norm, power_iteration
from .propagators import free_evolve, half_wave_evolve
from .scattering import (causal_decomposition, channel_wave_operator, duhamel_residual, evolve,
                         omega_star)
from .snapshots import read_snapshot, write_snapshot

__version__ = "0.1.0"
