from .attack import AttackProblem, attack_run_settings, attack_value, load_victim_asset
from .base import GlobalObjective, Problem, SubsetOracle
from .data import (
    DIRICHLET,
    IID,
    SORTED_SHARDS,
    Partition,
    PartitionScheme,
    load_matrix_csv,
    partition_dataset,
    write_matrix_csv,
)
from .kpca import KpcaProblem, kpca_euclid_grad, kpca_reference_optimum, kpca_value, synthetic_kpca
from .lowrank import FixedRankRegressionProblem, lowrank_euclid_grad, lowrank_value

__all__ = [
    "AttackProblem",
    "DIRICHLET",
    "FixedRankRegressionProblem",
    "GlobalObjective",
    "IID",
    "KpcaProblem",
    "Partition",
    "PartitionScheme",
    "Problem",
    "SORTED_SHARDS",
    "SubsetOracle",
    "attack_run_settings",
    "attack_value",
    "kpca_euclid_grad",
    "kpca_reference_optimum",
    "kpca_value",
    "load_matrix_csv",
    "load_victim_asset",
    "lowrank_euclid_grad",
    "lowrank_value",
    "partition_dataset",
    "synthetic_kpca",
    "write_matrix_csv",
]
