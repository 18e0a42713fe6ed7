//! Simulation of multiple federated-learning services sharing a sliced
//! radio access network, controlled at three timescales: a long-horizon
//! system descriptor (registries + mobility prediction), a near-real-time
//! controller (handover + per-site bandwidth split among service slices),
//! and a per-slice MAC scheduler (10 ms deadline-aware grants).
//!
//! The engine binds mobility, radio, control, and FL training into one
//! deterministic loop; the harness adds configuration, CSV metrics, and the
//! policy-comparison / ablation experiment drivers used by the CLI.

pub mod config;
pub mod controller;
pub mod descriptor;
pub mod eapp;
pub mod engine;
pub mod fl;
pub mod geom;
pub mod harness;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod radio;
pub mod rng;

pub use config::{
    config_reference, parse_config, ConfigError, ControllerConfig, DatasetConfig, EappSettings,
    FlConfig, LatencyModel, LogConfig, MacOrder, ServiceConfig, SimConfig, TopologyConfig,
};
pub use controller::{
    allocate_slices, assign_clients, compute_load, compute_load_with, make_slice_requests,
    predict_state, slice_objective, slice_split, ActiveUpload, AssignmentPlan, Handover,
    PredictedState, SliceAllocation, SliceRequest, SplitError,
};
pub use engine::{run, Engine, EngineError};
pub use harness::{
    cmd_ablate_a2, cmd_compare, cmd_run, read_rounds_csv, AblationRow, HarnessError, RunPaths,
    SummaryRow,
};
pub use metrics::{
    fmt_f64, write_atomic, AllocRecord, MacRecord, MetricsLog, Policy, RoundRecord,
};
pub use descriptor::{
    ClientDescriptor, ClientId, RecruitOutcome, Registry, RegistryError, ServiceDescriptor,
    ServiceId, TimedPosition,
};
pub use eapp::{
    predict_position, train_eapp, EappConfig, EappTrainResult, MobilityPredictor, PredictorKind,
};
pub use fl::{
    dirichlet_partition, evaluate, fedavg, load_idx, local_train, synth_dataset, Dataset, Network,
    PartitionSpec, TrainConfig,
};
pub use geom::{Point, Rect};
pub use mac::{
    apply_allocation, required_bandwidth, schedule, MacAllocation, Requirement, SliceClient,
    UploadState, UploadStatus,
};
pub use mobility::{sample_flight_length, step, ClientMotion, LevyParams};
pub use radio::{
    build_hex_grid, channel_gain, data_rate, link_quality, spectral_efficiency, LinkQuality,
    OruId, OruSite, RadioParams,
};
