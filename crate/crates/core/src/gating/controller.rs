//! Gate controller: a deterministic Mealy machine driven by Fire-All edges,
//! discriminator triggers and its own close timer.
//!
//! Phases:
//! - `Idle`: constructed, no frame seen yet.
//! - `Open`: gate open, counting triggers.
//! - `ClosePending`: adaptive target reached; close scheduled `feedback_latency_ns`
//!   after the target trigger. Triggers still count, the gate is physically open.
//! - `Closed`: gate closed while Fire-All is still high.
//! - `WaitFireAll`: frame finished (Fire-All low), waiting for the next rise.
//!
//! The close timer is also honoured implicitly: any event at or after the
//! scheduled close time first performs the close. On exact ties a Fire-All
//! fall wins over the timer, and the timer wins over a trigger.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ensure_non_negative, ensure_positive, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GatingMode {
    /// Close after `n_target` discriminator triggers (plus feedback latency).
    Adaptive { n_target: u32 },
    /// Open for exactly `gate_ns` from the Fire-All rise.
    Fixed { gate_ns: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatingConfig {
    pub mode: GatingMode,
    pub feedback_latency_ns: f64,
    pub fire_all_duration_ns: f64,
    pub frame_period_ns: f64,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self {
            mode: GatingMode::Adaptive { n_target: 1 },
            feedback_latency_ns: 150.0,
            fire_all_duration_ns: 9.0e6,
            frame_period_ns: 1.0e7,
        }
    }
}

impl GatingConfig {
    pub fn adaptive(n_target: u32) -> Self {
        Self {
            mode: GatingMode::Adaptive { n_target },
            ..Self::default()
        }
    }

    pub fn fixed(gate_ns: f64) -> Self {
        Self {
            mode: GatingMode::Fixed { gate_ns },
            ..Self::default()
        }
    }

    pub fn label(&self) -> String {
        match self.mode {
            GatingMode::Adaptive { n_target } => format!("adaptive_n{n_target}"),
            GatingMode::Fixed { gate_ns } => format!("fixed_{gate_ns}ns"),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.mode {
            GatingMode::Adaptive { n_target } => ensure(n_target >= 1, "n_target", "must be >= 1")?,
            GatingMode::Fixed { gate_ns } => ensure_positive(gate_ns, "gate_ns")?,
        }
        ensure_non_negative(self.feedback_latency_ns, "feedback_latency_ns")?;
        ensure_positive(self.fire_all_duration_ns, "fire_all_duration_ns")?;
        ensure_positive(self.frame_period_ns, "frame_period_ns")?;
        ensure(
            self.fire_all_duration_ns <= self.frame_period_ns,
            "fire_all_duration_ns",
            "must not exceed frame_period_ns",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    WaitFireAll,
    Open,
    ClosePending,
    Closed,
}

impl Phase {
    fn fire_all_high(self) -> bool {
        matches!(self, Phase::Open | Phase::ClosePending | Phase::Closed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseCause {
    TargetReached,
    FireAllEnded,
    FixedExpiry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateTrace {
    #[serde(rename = "open_ns")]
    pub open_t: f64,
    #[serde(rename = "close_ns")]
    pub close_t: f64,
    pub cause: CloseCause,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerEvent {
    FireAllRise(f64),
    FireAllFall(f64),
    DiscriminatorTrigger(f64),
    TimerExpiry(f64),
}

impl ControllerEvent {
    pub fn time(self) -> f64 {
        match self {
            Self::FireAllRise(t) | Self::FireAllFall(t) | Self::DiscriminatorTrigger(t) | Self::TimerExpiry(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateAction {
    OpenGate(f64),
    /// A close has been scheduled for the given time.
    ScheduleClose(f64),
    CloseGate(f64, CloseCause),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ControllerError {
    #[error("event at {t} ns precedes the previous event at {last} ns")]
    OutOfOrder { t: f64, last: f64 },
    #[error("Fire-All rise while Fire-All is already high (phase {0:?})")]
    RiseWhileHigh(Phase),
    #[error("Fire-All fall while Fire-All is low (phase {0:?})")]
    FallWhileLow(Phase),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateControllerState {
    pub phase: Phase,
    pub trigger_count: u32,
    pub first_trigger_t: Option<f64>,
    /// Time of the trigger that reached the adaptive target.
    pub target_trigger_t: Option<f64>,
    pub close_scheduled_t: Option<f64>,
    pub open_t: Option<f64>,
    pub last_trace: Option<GateTrace>,
    pub last_event_t: Option<f64>,
    /// Triggers that arrived with the gate closed.
    pub ignored_triggers: u64,
    /// Timer expiries with nothing scheduled, or early.
    pub stale_timers: u64,
}

impl Default for GateControllerState {
    fn default() -> Self {
        Self {
            phase: Phase::Idle,
            trigger_count: 0,
            first_trigger_t: None,
            target_trigger_t: None,
            close_scheduled_t: None,
            open_t: None,
            last_trace: None,
            last_event_t: None,
            ignored_triggers: 0,
            stale_timers: 0,
        }
    }
}

impl GateControllerState {
    pub fn gate_open(&self) -> bool {
        matches!(self.phase, Phase::Open | Phase::ClosePending)
    }

    fn close(&mut self, t: f64, cause: CloseCause, next: Phase) -> GateAction {
        self.phase = next;
        self.close_scheduled_t = None;
        self.last_trace = Some(GateTrace {
            open_t: self.open_t.unwrap_or(t),
            close_t: t,
            cause,
        });
        GateAction::CloseGate(t, cause)
    }

    fn scheduled_cause(&self, config: &GatingConfig) -> CloseCause {
        match config.mode {
            GatingMode::Adaptive { .. } => CloseCause::TargetReached,
            GatingMode::Fixed { .. } => CloseCause::FixedExpiry,
        }
    }
}

/// One step of the controller. At most one action is emitted per event.
pub fn controller_step(
    state: &GateControllerState,
    event: ControllerEvent,
    config: &GatingConfig,
) -> Result<(GateControllerState, Option<GateAction>), ControllerError> {
    let t = event.time();
    if let Some(last) = state.last_event_t {
        if t < last {
            return Err(ControllerError::OutOfOrder { t, last });
        }
    }
    let mut s = state.clone();
    s.last_event_t = Some(t);

    // Implicit timer expiry. A Fire-All fall at exactly the scheduled time
    // takes precedence over the timer.
    if let Some(due) = s.close_scheduled_t {
        let due_now = match event {
            ControllerEvent::FireAllFall(_) => t > due,
            _ => t >= due,
        };
        if due_now {
            let cause = s.scheduled_cause(config);
            let action = s.close(due, cause, Phase::Closed);
            return match event {
                // The fall still has to end the frame.
                ControllerEvent::FireAllFall(_) => {
                    s.phase = Phase::WaitFireAll;
                    Ok((s, Some(action)))
                }
                ControllerEvent::DiscriminatorTrigger(_) => {
                    s.ignored_triggers += 1;
                    Ok((s, Some(action)))
                }
                ControllerEvent::FireAllRise(_) => Err(ControllerError::RiseWhileHigh(state.phase)),
                ControllerEvent::TimerExpiry(_) => Ok((s, Some(action))),
            };
        }
    }

    let action = match event {
        ControllerEvent::FireAllRise(_) => {
            if s.phase.fire_all_high() {
                return Err(ControllerError::RiseWhileHigh(s.phase));
            }
            s.phase = Phase::Open;
            s.trigger_count = 0;
            s.first_trigger_t = None;
            s.target_trigger_t = None;
            s.open_t = Some(t);
            s.last_trace = None;
            s.close_scheduled_t = match config.mode {
                GatingMode::Fixed { gate_ns } => Some(t + gate_ns),
                GatingMode::Adaptive { .. } => None,
            };
            Some(GateAction::OpenGate(t))
        }
        ControllerEvent::FireAllFall(_) => match s.phase {
            Phase::Open | Phase::ClosePending => Some(s.close(t, CloseCause::FireAllEnded, Phase::WaitFireAll)),
            Phase::Closed => {
                s.phase = Phase::WaitFireAll;
                None
            }
            Phase::Idle | Phase::WaitFireAll => return Err(ControllerError::FallWhileLow(s.phase)),
        },
        ControllerEvent::DiscriminatorTrigger(_) => match s.phase {
            Phase::Open | Phase::ClosePending => {
                s.trigger_count += 1;
                if s.first_trigger_t.is_none() {
                    s.first_trigger_t = Some(t);
                }
                match config.mode {
                    GatingMode::Adaptive { n_target } if s.phase == Phase::Open && s.trigger_count >= n_target => {
                        let due = t + config.feedback_latency_ns;
                        s.phase = Phase::ClosePending;
                        s.target_trigger_t = Some(t);
                        s.close_scheduled_t = Some(due);
                        Some(GateAction::ScheduleClose(due))
                    }
                    _ => None,
                }
            }
            _ => {
                s.ignored_triggers += 1;
                None
            }
        },
        ControllerEvent::TimerExpiry(_) => {
            // Due timers were handled above; anything reaching here is stale.
            s.stale_timers += 1;
            None
        }
    };
    Ok((s, action))
}

/// Convenience wrapper holding state and configuration together.
#[derive(Debug, Clone)]
pub struct GateController {
    pub config: GatingConfig,
    pub state: GateControllerState,
}

impl GateController {
    pub fn new(config: GatingConfig) -> Self {
        Self {
            config,
            state: GateControllerState::default(),
        }
    }

    pub fn step(&mut self, event: ControllerEvent) -> Result<Option<GateAction>, ControllerError> {
        let (next, action) = controller_step(&self.state, event, &self.config)?;
        self.state = next;
        Ok(action)
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn pending_close(&self) -> Option<f64> {
        self.state.close_scheduled_t
    }
}
