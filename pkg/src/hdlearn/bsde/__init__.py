from .oracles import (
    heat_reference, hopf_cole_radial, hopf_cole_reference, linear_decay_reference,
    lqg_terminal_r2,
)
from .problems import (
    DefaultIntensity, PdeProblem, black_scholes_default_problem, heat_problem,
    hjb_lqg_problem, lqg_terminal, min_terminal,
)
from .solver import BsdeSolver, BsdeTrainConfig, rollout_loss, solve, train

__all__ = [
    "BsdeSolver", "BsdeTrainConfig", "DefaultIntensity", "PdeProblem",
    "black_scholes_default_problem", "heat_problem", "heat_reference",
    "hjb_lqg_problem", "hopf_cole_radial", "hopf_cole_reference", "linear_decay_reference",
    "lqg_terminal", "lqg_terminal_r2", "min_terminal", "rollout_loss", "solve", "train",
]
