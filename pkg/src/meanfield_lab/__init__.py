"""Mean-field limit lab for multilayer networks.

Finite networks trained by SGD, their particle ODE surrogates, the coupling
between the two, reduced dynamics under i.i.d. initialization, and
global-convergence testbeds.
"""

from .architecture import (ArchitectureSpec, FcConfig, audit_assumptions, make_decay_architecture,
                           make_fc_architecture)
from .coupling import (CoupledPair, EmbeddingTable, InitLawSpec, couple, log_distance, sample_embedding,
                       traj_distance)
from .forward_backward import backward, forward, grad_check, mean_update
from .mf_solver import BlowUpError, PicardReport, TimeGrid, integrate_particle, particle_rhs, picard_map, picard_solve
from .norms import norm_W
from .sgd import SgdConfig, population_loss, sgd_step, train_sgd
from .state import Dataset, NetworkState, ParticleState, State, TrajectoryLog

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "FcConfig", "audit_assumptions", "make_decay_architecture", "make_fc_architecture",
    "CoupledPair", "EmbeddingTable", "InitLawSpec", "couple", "log_distance", "sample_embedding", "traj_distance",
    "backward", "forward", "grad_check", "mean_update",
    "BlowUpError", "PicardReport", "TimeGrid", "integrate_particle", "particle_rhs", "picard_map", "picard_solve",
    "norm_W", "SgdConfig", "population_loss", "sgd_step", "train_sgd",
    "Dataset", "NetworkState", "ParticleState", "State", "TrajectoryLog",
]
