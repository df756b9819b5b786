//! Scenario configs, presets, the run pipeline and report files.

mod config;
mod presets;
mod report;
mod run;

pub use config::{
    load_config, BulkChoice, CavityRow, CavityTable, DeltaUnit, DriveConfig, EnergyUnit, Initial, LatticeConfig,
    RunConfig, ScenarioConfig, Solver,
};
pub use presets::{preset, preset_names, preset_source};
pub use report::{emit_report, write_scan_csv, write_timeseries_csv};
pub use run::{
    run_scenario, run_scenario_with, PointResult, Quantity, RatesOutcome, RunReport, Series, Snapshot, TrajOutcome,
};
