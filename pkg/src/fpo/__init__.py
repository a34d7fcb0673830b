"""Fingerprint policy optimisation: GP-UCB selection of the environment-variable
distribution for robust policy-gradient training."""

__version__ = "0.1.0"

from .core import FPO, EnumPG, EPOpt, FixedPsiPG, NaivePG, RandomPsiPG  # noqa: E402
from .envs import CliffWalker, CliffWalkerConfig, ToyVelocity, ToyVelocityConfig, make_env  # noqa: E402
from .gp import HellingerProductGP  # noqa: E402

__all__ = [
    "FPO", "NaivePG", "EnumPG", "RandomPsiPG", "FixedPsiPG", "EPOpt",
    "CliffWalker", "CliffWalkerConfig", "ToyVelocity", "ToyVelocityConfig", "make_env",
    "HellingerProductGP", "__version__",
]
