//! Config-driven experiments: worlds, training regimes, method fitting,
//! pattern sweeps and reproducible artifacts.

mod config;
mod run;

pub use config::{
    ExperimentConfig, MechanismName, RegimeSpec, SchemaOverrides, TrainSettings, WorldSpec,
};
pub use run::{
    ablation_config, ablation_method_name, ablation_summary, cmd_ablate_placeholder, cmd_run,
    cmd_sweep, sha256_hex, train_seed, write_manifest, AblationRow, Manifest, ManifestEntry,
    RunOutput, ABLATION_CSV, AGGREGATES_JSON, CONFIG_TOML, DEFAULT_ABLATION_VALUES, MANIFEST_JSON,
    PLOTDATA_CSV, REPORT_CSV,
};
