//! Per-frame discrete-event simulation and streamed batch runs.
//!
//! One frame is one Fire-All window starting at t = 0. Photons, false PMT
//! pulses and the close timer are merged on a single timeline; at equal
//! times a photon goes first (a photon at exactly the close time is still
//! recorded), then the Fire-All fall, then the timer, then a false pulse.
//! Event generation stops once the gate closes.

use rayon::prelude::*;
use thiserror::Error;

use super::controller::{ControllerError, ControllerEvent, GateController, GatingConfig, Phase};
use crate::config::RunConfig;
use crate::extraction::{extract_events, sort_spots, spot_level_readout, Spot};
use crate::intensifier::{apply_crosstalk, detect, Detection, FlashEvent};
use crate::readout::{false_pulse_amplitude, flash_pulse, render_frame, Discriminator, PmtPulse, ReadoutMode};
use crate::record::{FrameDiagnostics, FrameRecord, TruthPhoton};
use crate::rng::{frame_stream, RandomStream};
use crate::source::{exp_wait_ns, PhotonStream};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("n_frames must be at least 1")]
    NoFrames,
    #[error("gate controller: {0}")]
    Controller(#[from] ControllerError),
    #[error("frame sink: {0}")]
    Sink(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Pair ids are unique within a run: the frame id occupies the high bits.
const PAIR_ID_SHIFT: u32 = 32;

pub fn run_frame(
    config: &RunConfig,
    gating: &GatingConfig,
    frame_id: u64,
    rng: &mut RandomStream,
) -> Result<FrameRecord, SimulationError> {
    let fire_all_end = gating.fire_all_duration_ns;
    let delay = config.intensifier.phosphor_delay_ns;
    let readout = &config.readout;

    let mut ctl = GateController::new(gating.clone());
    ctl.step(ControllerEvent::FireAllRise(0.0))?;

    let mut stream = PhotonStream::new(&config.source, rng).with_pair_id_base(frame_id << PAIR_ID_SHIFT);
    let mut next_false = exp_wait_ns(readout.pmt_false_pulse_rate_hz, rng);
    let mut disc = Discriminator::new(readout);
    let mut diag = FrameDiagnostics::default();
    let mut flashes: Vec<FlashEvent> = Vec::new();
    let mut pulses: Vec<PmtPulse> = Vec::new();
    let mut truth: Vec<TruthPhoton> = Vec::new();

    while ctl.state.gate_open() {
        let t_photon = stream.peek_time(rng) + delay;
        let t_timer = ctl.pending_close().unwrap_or(f64::INFINITY);
        let t_stop = fire_all_end.min(t_timer);

        if t_photon <= t_stop && t_photon <= next_false {
            let photon = stream.next_event(rng).expect("peeked photon");
            diag.photons_admitted += 1;
            let flash = match detect(&photon, &config.intensifier, &config.optics, rng) {
                Detection::Flash(f) => f,
                Detection::Missed => {
                    diag.photons_missed += 1;
                    continue;
                }
                Detection::OffGrid => {
                    diag.photons_off_grid += 1;
                    continue;
                }
            };
            truth.push(TruthPhoton {
                t: photon.t,
                kx: photon.k.kx,
                ky: photon.k.ky,
                origin: photon.origin,
                pair_id: photon.pair_id,
            });
            for f in apply_crosstalk(flash, &config.intensifier, rng) {
                diag.flashes += 1;
                diag.crosstalk_flashes += f.is_crosstalk as u32;
                if let Some(p) = flash_pulse(&f, readout, rng) {
                    pulses.push(p);
                    if let Some(t) = disc.feed(&p) {
                        diag.triggers += 1;
                        ctl.step(ControllerEvent::DiscriminatorTrigger(t))?;
                    }
                }
                flashes.push(f);
            }
        } else if fire_all_end <= t_timer && fire_all_end <= next_false {
            ctl.step(ControllerEvent::FireAllFall(fire_all_end))?;
        } else if t_timer <= next_false {
            ctl.step(ControllerEvent::TimerExpiry(t_timer))?;
        } else {
            let p = PmtPulse {
                t: next_false,
                amplitude: false_pulse_amplitude(readout, rng),
            };
            diag.false_pulses += 1;
            pulses.push(p);
            if let Some(t) = disc.feed(&p) {
                diag.triggers += 1;
                ctl.step(ControllerEvent::DiscriminatorTrigger(t))?;
            }
            next_false += exp_wait_ns(readout.pmt_false_pulse_rate_hz, rng);
        }
    }
    if ctl.phase() == Phase::Closed {
        ctl.step(ControllerEvent::FireAllFall(fire_all_end))?;
    }
    let gate = ctl.state.last_trace.expect("a frame always closes");
    diag.ignored_triggers = ctl.state.ignored_triggers as u32;

    // A photon whose trigger closed the gate via an overdue timer may sit
    // past the close time; it never reached an open intensifier.
    if flashes.iter().any(|f| f.t > gate.close_t) {
        flashes.retain(|f| f.t <= gate.close_t);
        pulses.retain(|p| p.t <= gate.close_t);
        truth.retain(|p| p.t + delay <= gate.close_t);
    }

    let spots = match readout.mode {
        ReadoutMode::Spots => spot_level_readout(&flashes, readout, &config.extraction, rng),
        ReadoutMode::Render => {
            let size = (
                config.intensifier.channels_x as usize,
                config.intensifier.channels_y as usize,
            );
            let (image, _) = render_frame(&flashes, readout, size, rng);
            let (found, counters) = extract_events(&image, &config.extraction, &config.optics);
            diag.fit_failures = counters.failed as u32;
            let mut spots: Vec<Spot> = found.iter().map(|(s, _)| s.to_spot()).collect();
            sort_spots(&mut spots);
            spots
        }
    };

    Ok(FrameRecord {
        frame_id,
        gate,
        spots,
        pmt_pulses: pulses,
        truth: config.record_truth.then_some(truth),
        diagnostics: diag,
    })
}

/// Frames `0..n_frames` with a stream per frame derived from `seed`, handed
/// to `sink` in frame order. Work is spread over `workers` threads in
/// chunks; the output does not depend on the worker count.
pub fn run_batch<F>(
    config: &RunConfig,
    gating: &GatingConfig,
    seed: u64,
    n_frames: u64,
    workers: usize,
    mut sink: F,
) -> Result<(), SimulationError>
where
    F: FnMut(FrameRecord) -> Result<(), String>,
{
    if n_frames == 0 {
        return Err(SimulationError::NoFrames);
    }
    let one = |id: u64| run_frame(config, gating, id, &mut frame_stream(seed, id));
    if workers <= 1 {
        for id in 0..n_frames {
            sink(one(id)?).map_err(SimulationError::Sink)?;
        }
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SimulationError::Pool(e.to_string()))?;
    const CHUNK: u64 = 4096;
    let mut start = 0;
    while start < n_frames {
        let end = (start + CHUNK).min(n_frames);
        let chunk: Vec<Result<FrameRecord, SimulationError>> =
            pool.install(|| (start..end).into_par_iter().map(one).collect());
        for r in chunk {
            sink(r?).map_err(SimulationError::Sink)?;
        }
        start = end;
    }
    Ok(())
}

/// Convenience: collect a whole batch in memory.
pub fn collect_batch(
    config: &RunConfig,
    gating: &GatingConfig,
    seed: u64,
    n_frames: u64,
    workers: usize,
) -> Result<Vec<FrameRecord>, SimulationError> {
    let mut out = Vec::with_capacity(n_frames as usize);
    run_batch(config, gating, seed, n_frames, workers, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}
