//! Scenario files, the simulation loop, campaigns, replay and export.

pub mod campaign;
pub mod config;
pub mod export;
pub mod metrics;
pub mod replay;
pub mod sim;

pub use campaign::{run_campaign, CampaignConfig, CampaignResult, FamilySummary};
pub use config::{ConfigError, ScenarioConfig};
pub use metrics::RunMetrics;
pub use sim::{run_metrics, run_scenario, RunOutput, SimError, TraceRow};
