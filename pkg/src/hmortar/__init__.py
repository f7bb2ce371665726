"""Mixed finite-element time stepping with mortar-coupled rollout domains."""

from .feec import LinearBlocks, TimeMesh, assemble_blocks
from .mortar import (
    DomainState,
    InterfaceState,
    NewtonSettings,
    NonConvergence,
    SingularJacobian,
    newton_solve_domain,
    rollout,
    rollout_batch,
)
from .nonlinearity import DissipativeModel, HamiltonianModel, ZeroModel, model_from_config
from .transformer import LocalTransformer, LocalTransformerConfig

__all__ = [
    "DissipativeModel",
    "DomainState",
    "HamiltonianModel",
    "InterfaceState",
    "LinearBlocks",
    "LocalTransformer",
    "LocalTransformerConfig",
    "NewtonSettings",
    "NonConvergence",
    "SingularJacobian",
    "TimeMesh",
    "ZeroModel",
    "assemble_blocks",
    "model_from_config",
    "newton_solve_domain",
    "rollout",
    "rollout_batch",
]
