//! Gate control and frame orchestration.

mod controller;
mod frame;

pub use controller::{
    controller_step, CloseCause, ControllerError, ControllerEvent, GateAction, GateController,
    GateControllerState, GateTrace, GatingConfig, GatingMode, Phase,
};
pub use frame::{collect_batch, run_batch, run_frame, SimulationError};
