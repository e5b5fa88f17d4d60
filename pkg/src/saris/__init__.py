"""Impedance-coupled RIS link simulator and load-reactance optimizer."""

from saris.channel import (
    FoldedChannel,
    RisLoads,
    SingularBlockError,
    end_to_end_channel,
    fold_esos,
    interaction_free,
    mismatched_channel,
    scatter_matrix,
)
from saris.dipoles import (
    ETA0,
    Dipole,
    GeometryError,
    ImpedanceSet,
    Role,
    assemble_impedances,
    mutual_impedance,
)
from saris.optimize import (
    DegenerateChannelError,
    DeltaStep,
    OptimizerConfig,
    OptimizerState,
    build_delta_system,
    mismatched_optimize,
    optimal_precoder,
    random_baseline,
    saris_optimize,
    smse,
    solve_delta,
    spectral_norm,
    sum_rate,
)
from saris.scenario import (
    ConfigError,
    ScenarioConfig,
    generate,
    parse_config,
    serialize_config,
    substream,
)

__version__ = "0.1.0"

__all__ = [
    "ETA0",
    "ConfigError",
    "DegenerateChannelError",
    "DeltaStep",
    "Dipole",
    "FoldedChannel",
    "GeometryError",
    "ImpedanceSet",
    "OptimizerConfig",
    "OptimizerState",
    "RisLoads",
    "Role",
    "ScenarioConfig",
    "SingularBlockError",
    "assemble_impedances",
    "build_delta_system",
    "end_to_end_channel",
    "fold_esos",
    "generate",
    "interaction_free",
    "mismatched_channel",
    "mismatched_optimize",
    "mutual_impedance",
    "optimal_precoder",
    "parse_config",
    "random_baseline",
    "saris_optimize",
    "scatter_matrix",
    "serialize_config",
    "smse",
    "solve_delta",
    "spectral_norm",
    "substream",
    "sum_rate",
    "__version__",
]
