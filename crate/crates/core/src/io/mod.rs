//! Datasets, experiment configuration, the verification suite and the
//! command implementations behind the `dualview` binary.

mod commands;
mod config;
mod dataset;
mod verify;

pub use commands::{
    cmd_experiment, cmd_kernel, cmd_train, cmd_verify, load_model, permutations, width_point,
    ConstantOneRecord, ExperimentRecords, ExperimentReport, GroupSummary, PermutationRecord,
    WidthRecord,
};
pub use config::{
    DatasetConfig, ExperimentConfig, ExperimentName, ExperimentSection, GramFormat, KernelConfig,
    KernelKind, TrainSection, VerifyConfig,
};
pub use dataset::{
    generate_synthetic, load_dataset, parse_cifar, parse_csv, Dataset, DatasetFormat,
    SyntheticSpec, CIFAR_RECORD,
};
pub use verify::{
    arch_label, dual_identity_deviation, gaussian_points, gradient_deviation, run_verification,
    self_gating_deviation, VerifyCheck, VerifyReport, DUAL_TOL, GRAD_STEP, GRAD_TOL, MC_SIGMAS,
};
