"""Experiment orchestration: configuration, coupling, spiral protocols and classification."""

from .classify import (
    OnlineClassifier,
    StabilityVerdict,
    classify_stability,
    front_fragments,
    phase,
    phase_singularities,
    triangle_winding,
    verdict_from_counts,
)
from .config import (
    ClassifierConfig,
    ConfigError,
    ExperimentConfig,
    FibrosisConfig,
    InitiationConfig,
    MeshConfig,
    dump_config,
    load_config,
    parse_config,
    save_config,
)
from .coupling import displacement_to_fine, restrict_tension
from .runner import (
    Checkpoint,
    CheckpointError,
    InitiationError,
    RunResult,
    Simulation,
    StageTimers,
    SweepRow,
    build_meshes,
    init_spiral,
    load_checkpoint,
    run_coupled,
    run_sweep,
    save_checkpoint,
    table1_rows,
    table2_rows,
    table3_rows,
    write_verdicts,
)
