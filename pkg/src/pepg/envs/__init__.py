from .base import PerformativeEnv, StaticEnv, random_tables
from .expfam import ExpFamilyConfig, ExpFamilyEnv, default_psi, make_expfam
from .gridworld import (
    DEFAULT_LAYOUT,
    GridworldConfig,
    GridworldEnv,
    load_layout,
    parse_layout,
)
from .loan import LoanConfig, LoanEnv

__all__ = [
    "PerformativeEnv",
    "StaticEnv",
    "random_tables",
    "ExpFamilyConfig",
    "ExpFamilyEnv",
    "default_psi",
    "make_expfam",
    "GridworldConfig",
    "GridworldEnv",
    "DEFAULT_LAYOUT",
    "load_layout",
    "parse_layout",
    "LoanConfig",
    "LoanEnv",
]
