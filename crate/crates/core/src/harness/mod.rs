//! Data generation, experiment tables, closed-loop evaluation and the
//! network services behind the command-line tool.

mod closedloop;
mod config;
mod datagen;
mod drive;
mod experiment;
mod serve;
mod sim;

pub use closedloop::{closed_loop_eval, ClosedLoopConfig, ClosedLoopReport, Policy, RunOutcome};
pub use config::KvConfig;
pub use datagen::{exact_label, generate_data, GenConfig, GenStats};
pub use drive::{decode_state_flow, ClientMessage, DecisionView, DriveConfig, DriveSession, Pose, ServerMessage, SessionStats};
pub use experiment::{
    format_rows, prepare_sets, run_experiment, table2_specs, table3_specs, table4_specs, train_spec, ArchChoice,
    ExperimentRow, ExperimentSpec, MASK_ROWS,
};
pub use serve::{serve_inference, InferenceClient, ServeConfig, ServeStats};
pub use sim::{scenario_setup, wander_waypoints, FrameSource, ScenarioSetup, SimVehicle, StartEnvelope, DEFAULT_SPEED};
