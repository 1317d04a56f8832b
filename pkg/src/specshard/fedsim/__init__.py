"""Deterministic federated-learning simulation with spectral sharding."""

from .model import (
    DenseLayer,
    FactorizedLayer,
    LocalHyper,
    cosine_lr,
    gradients,
    local_train,
    local_train_factorized,
    objective,
)
from .server import (
    RoundRecord,
    ServerModel,
    SimulationConfig,
    SimulationState,
    TaskSpec,
    aggregate,
    fedavg_reference_update,
    init_state,
    run_round,
    simulate,
    update_cosine_similarity,
)
from .tasks import ClientData, SyntheticTask, make_task, split_dirichlet

__all__ = [
    "ClientData",
    "DenseLayer",
    "FactorizedLayer",
    "LocalHyper",
    "RoundRecord",
    "ServerModel",
    "SimulationConfig",
    "SimulationState",
    "SyntheticTask",
    "TaskSpec",
    "aggregate",
    "cosine_lr",
    "fedavg_reference_update",
    "gradients",
    "init_state",
    "local_train",
    "local_train_factorized",
    "make_task",
    "objective",
    "run_round",
    "simulate",
    "split_dirichlet",
    "update_cosine_similarity",
]
