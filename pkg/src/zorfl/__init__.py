"""Projection-based zeroth-order Riemannian optimization with a deterministic
federated simulator."""

from .errors import (
    ConfigError,
    DegenerateProjection,
    MembershipViolation,
    NumericalFailure,
    SmoothingOutOfTube,
    TubeEscape,
    ZorflError,
)
from .estimators import PROJECTION, RETRACTION, SmoothingConfig, estimate_grad
from .fedsim import RunConfig, run_centralized_rgd, run_centralized_zo, run_federated
from .linalg import RngStream
from .manifolds import FixedRank, Oblique, Sphere, Stiefel, make_manifold

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateProjection",
    "FixedRank",
    "MembershipViolation",
    "NumericalFailure",
    "Oblique",
    "PROJECTION",
    "RETRACTION",
    "RngStream",
    "RunConfig",
    "SmoothingConfig",
    "SmoothingOutOfTube",
    "Sphere",
    "Stiefel",
    "TubeEscape",
    "ZorflError",
    "estimate_grad",
    "make_manifold",
    "run_centralized_rgd",
    "run_centralized_zo",
    "run_federated",
]
