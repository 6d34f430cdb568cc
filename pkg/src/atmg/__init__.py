"""Independent policy gradient for adversarial team Markov games."""

from .exact_oracles import nash_gap
from .errors import ConfigError, GameParseError, GameValidationError, NumericalError, PolicyError
from .game_model import GameSpec, check_game, generate_random, make_matching_pennies, read_game, write_game
from .hidden_minmax import SGDMAX, HiddenConcaveProblem, sgdmax
from .learners import ISPNG, InnerConfig, OuterConfig, VisRegPG, evaluate, ispng, paper_tuning, vis_reg_pg
from .policy import PolicyProfile, check_policy, project_policy

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GameParseError",
    "GameSpec",
    "GameValidationError",
    "HiddenConcaveProblem",
    "ISPNG",
    "InnerConfig",
    "NumericalError",
    "OuterConfig",
    "PolicyError",
    "PolicyProfile",
    "SGDMAX",
    "VisRegPG",
    "check_game",
    "check_policy",
    "evaluate",
    "generate_random",
    "ispng",
    "make_matching_pennies",
    "nash_gap",
    "paper_tuning",
    "project_policy",
    "read_game",
    "sgdmax",
    "vis_reg_pg",
    "write_game",
]
