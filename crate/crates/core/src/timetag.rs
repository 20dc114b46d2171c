//! Brightness-correlation time tagging: sCMOS spots inherit timestamps from
//! PMT pulses by matching amplitude ranks, with tuples rejected when
//! amplitudes are too close to order reliably.

use std::io::Write;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ensure_non_negative, ConfigError};
use crate::record::FrameRecord;
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrightnessPair {
    pub b_pmt: f64,
    pub b_cmos: f64,
    pub true_time: f64,
    pub frame_id: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CollectCounters {
    pub frames: u64,
    pub collected: u64,
    pub skipped_spot_count: u64,
    pub skipped_pulse_count: u64,
}

/// One pair per frame holding exactly one spot and exactly one pulse at or
/// above `pulse_threshold`.
pub fn collect_single_photon_pairs<'a>(
    frames: impl IntoIterator<Item = &'a FrameRecord>,
    pulse_threshold: f64,
) -> (Vec<BrightnessPair>, CollectCounters) {
    let mut out = Vec::new();
    let mut c = CollectCounters::default();
    for f in frames {
        c.frames += 1;
        if f.spots.len() != 1 {
            c.skipped_spot_count += 1;
            continue;
        }
        let mut above = f.pmt_pulses.iter().filter(|p| p.amplitude >= pulse_threshold);
        let (Some(p), None) = (above.next(), above.next()) else {
            c.skipped_pulse_count += 1;
            continue;
        };
        if !(p.amplitude > 0.0 && f.spots[0].amplitude > 0.0) {
            c.skipped_pulse_count += 1;
            continue;
        }
        out.push(BrightnessPair {
            b_pmt: p.amplitude,
            b_cmos: f.spots[0].amplitude,
            true_time: p.t,
            frame_id: f.frame_id,
        });
        c.collected += 1;
    }
    (out, c)
}

pub fn pearson(pairs: &[BrightnessPair]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.b_pmt).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.b_cmos).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for p in pairs {
        let dx = p.b_pmt - mx;
        let dy = p.b_cmos - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Brightness correlation map: PMT amplitude along rows, sCMOS along columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrightnessMap {
    pub bins: usize,
    pub pmt_max: f64,
    pub cmos_max: f64,
    pub counts: Vec<u64>,
}

pub fn brightness_map(pairs: &[BrightnessPair], bins: usize) -> BrightnessMap {
    let pmt_max = pairs.iter().map(|p| p.b_pmt).fold(0.0, f64::max);
    let cmos_max = pairs.iter().map(|p| p.b_cmos).fold(0.0, f64::max);
    let mut counts = vec![0u64; bins * bins];
    let idx = |v: f64, max: f64| ((v / max * bins as f64) as usize).min(bins - 1);
    if pmt_max > 0.0 && cmos_max > 0.0 {
        for p in pairs {
            counts[idx(p.b_pmt, pmt_max) * bins + idx(p.b_cmos, cmos_max)] += 1;
        }
    }
    BrightnessMap {
        bins,
        pmt_max,
        cmos_max,
        counts,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimetagError {
    #[error("need at least {needed} single-photon pairs, have {have}")]
    InsufficientPairs { needed: usize, have: usize },
    #[error("tuple size must be >= 2")]
    TupleTooSmall,
}

/// `n` distinct pairs with a random arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    /// Indices into the pair list.
    pub members: Vec<usize>,
    /// `arrival_rank[i]` is the time rank of `members[i]`.
    pub arrival_rank: Vec<usize>,
}

pub fn synthesize_tuples(
    pairs: &[BrightnessPair],
    n: usize,
    m_tuples: usize,
    rng: &mut RandomStream,
) -> Result<Vec<Tuple>, TimetagError> {
    if n < 2 {
        return Err(TimetagError::TupleTooSmall);
    }
    if pairs.len() < n {
        return Err(TimetagError::InsufficientPairs {
            needed: n,
            have: pairs.len(),
        });
    }
    Ok((0..m_tuples)
        .map(|_| {
            let members = index::sample(rng, pairs.len(), n).into_vec();
            let mut arrival_rank: Vec<usize> = (0..n).collect();
            arrival_rank.shuffle(rng);
            Tuple { members, arrival_rank }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooClose,
    CountMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagStatus {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagAssignment {
    /// `spot_to_pulse[i]` is the pulse whose timestamp spot `i` inherits.
    pub spot_to_pulse: Vec<usize>,
    pub status: TagStatus,
}

/// Smallest pairwise gap `|a − b| / ((a + b) / 2)` in a list.
pub fn min_relative_gap(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .windows(2)
        .map(|w| {
            let mean = 0.5 * (w[0] + w[1]);
            if mean > 0.0 {
                (w[1] - w[0]) / mean
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

/// Rank matching between pulse and spot amplitudes. Rejected if either list
/// holds two values closer than `closeness_threshold` (relative to their mean).
pub fn match_by_brightness(pulse_amplitudes: &[f64], spot_amplitudes: &[f64], closeness_threshold: f64) -> TagAssignment {
    if pulse_amplitudes.len() != spot_amplitudes.len() {
        return TagAssignment {
            spot_to_pulse: Vec::new(),
            status: TagStatus::Rejected(RejectReason::CountMismatch),
        };
    }
    let pulse_rank = argsort(pulse_amplitudes);
    let spot_rank = argsort(spot_amplitudes);
    let mut spot_to_pulse = vec![0; spot_amplitudes.len()];
    for (s, p) in spot_rank.iter().zip(&pulse_rank) {
        spot_to_pulse[*s] = *p;
    }
    let too_close = min_relative_gap(pulse_amplitudes) < closeness_threshold
        || min_relative_gap(spot_amplitudes) < closeness_threshold;
    TagAssignment {
        spot_to_pulse,
        status: if too_close {
            TagStatus::Rejected(RejectReason::TooClose)
        } else {
            TagStatus::Accepted
        },
    }
}

/// Threshold-independent summary of one tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TupleOutcome {
    pub min_gap: f64,
    pub correct_photons: usize,
    pub n: usize,
}

impl TupleOutcome {
    pub fn all_correct(&self) -> bool {
        self.correct_photons == self.n
    }
}

/// Pulses are presented in arrival order and spots in member order; a spot is
/// correct when it is matched to its own pulse.
pub fn evaluate_tuple(pairs: &[BrightnessPair], tuple: &Tuple) -> TupleOutcome {
    let n = tuple.members.len();
    let mut pulse_member = vec![0; n];
    for (i, &r) in tuple.arrival_rank.iter().enumerate() {
        pulse_member[r] = i;
    }
    let pulses: Vec<f64> = pulse_member.iter().map(|&i| pairs[tuple.members[i]].b_pmt).collect();
    let spots: Vec<f64> = tuple.members.iter().map(|&m| pairs[m].b_cmos).collect();
    let a = match_by_brightness(&pulses, &spots, 0.0);
    let correct_photons = (0..n).filter(|&s| pulse_member[a.spot_to_pulse[s]] == s).count();
    TupleOutcome {
        min_gap: min_relative_gap(&pulses).min(min_relative_gap(&spots)),
        correct_photons,
        n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyPoint {
    pub threshold: f64,
    pub rejected_fraction: f64,
    /// Fraction of accepted tuples with every photon tagged correctly.
    pub accuracy: f64,
    /// Fraction of photons in accepted tuples tagged correctly.
    pub photon_accuracy: f64,
    pub accepted: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyCurve {
    pub n: usize,
    pub points: Vec<AccuracyPoint>,
    /// Thresholds for which every tuple was rejected.
    pub omitted_thresholds: Vec<f64>,
}

pub fn accuracy_curve(n: usize, outcomes: &[TupleOutcome], thresholds: &[f64]) -> AccuracyCurve {
    let total = outcomes.len() as u64;
    let mut points = Vec::new();
    let mut omitted_thresholds = Vec::new();
    for &t in thresholds {
        let (mut accepted, mut correct, mut photons) = (0u64, 0u64, 0u64);
        for o in outcomes.iter().filter(|o| o.min_gap >= t) {
            accepted += 1;
            correct += o.all_correct() as u64;
            photons += o.correct_photons as u64;
        }
        if accepted == 0 {
            omitted_thresholds.push(t);
            continue;
        }
        points.push(AccuracyPoint {
            threshold: t,
            rejected_fraction: (total - accepted) as f64 / total as f64,
            accuracy: correct as f64 / accepted as f64,
            photon_accuracy: photons as f64 / (accepted * n as u64) as f64,
            accepted,
            total,
        });
    }
    points.sort_by(|a, b| a.rejected_fraction.total_cmp(&b.rejected_fraction).then(a.threshold.total_cmp(&b.threshold)));
    AccuracyCurve {
        n,
        points,
        omitted_thresholds,
    }
}

/// Accuracy against rejected fraction for each tuple size. Every threshold
/// of one size is evaluated on the same tuples.
pub fn accuracy_sweep(
    pairs: &[BrightnessPair],
    n_values: &[usize],
    thresholds: &[f64],
    m_tuples: usize,
    rng: &mut RandomStream,
) -> Result<Vec<AccuracyCurve>, TimetagError> {
    n_values
        .iter()
        .map(|&n| {
            let tuples = synthesize_tuples(pairs, n, m_tuples, rng)?;
            let outcomes: Vec<TupleOutcome> = tuples.iter().map(|t| evaluate_tuple(pairs, t)).collect();
            Ok(accuracy_curve(n, &outcomes, thresholds))
        })
        .collect()
}

pub fn write_curves_csv<W: Write>(curves: &[AccuracyCurve], mut out: W) -> std::io::Result<()> {
    writeln!(out, "n,threshold,rejected_fraction,accuracy,photon_accuracy,accepted,total")?;
    for c in curves {
        for p in &c.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.n, p.threshold, p.rejected_fraction, p.accuracy, p.photon_accuracy, p.accepted, p.total
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimetagParams {
    pub n_values: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub m_tuples: usize,
}

impl Default for TimetagParams {
    fn default() -> Self {
        Self {
            n_values: vec![2, 3, 4, 5, 6],
            thresholds: (0..=50).map(|i| i as f64 / 100.0).collect(),
            m_tuples: 100_000,
        }
    }
}

impl TimetagParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(!self.n_values.is_empty(), "n_values", "must not be empty")?;
        ensure(self.n_values.iter().all(|&n| n >= 2), "n_values", "every n must be >= 2")?;
        ensure(!self.thresholds.is_empty(), "thresholds", "must not be empty")?;
        for t in &self.thresholds {
            ensure_non_negative(*t, "thresholds")?;
        }
        ensure(self.m_tuples >= 1, "m_tuples", "must be >= 1")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::Spot;
    use crate::gating::{CloseCause, GateTrace};
    use crate::readout::PmtPulse;
    use crate::record::FrameDiagnostics;
    use crate::rng::frame_stream;

    fn frame(id: u64, spots: usize, pulses: &[f64]) -> FrameRecord {
        FrameRecord {
            frame_id: id,
            gate: GateTrace {
                open_t: 0.0,
                close_t: 150.0,
                cause: CloseCause::TargetReached,
            },
            spots: (0..spots)
                .map(|i| Spot {
                    x: i as f64 * 200.0,
                    y: 0.0,
                    amplitude: 500.0,
                    sigma: 1.5,
                })
                .collect(),
            pmt_pulses: pulses.iter().map(|&a| PmtPulse { t: 3.0, amplitude: a }).collect(),
            truth: None,
            diagnostics: FrameDiagnostics::default(),
        }
    }

    #[test]
    fn collects_only_single_spot_single_pulse_frames() {
        let frames = [frame(0, 2, &[0.1]), frame(1, 1, &[0.1]), frame(2, 1, &[0.1, 0.2]), frame(3, 1, &[0.1, 0.001])];
        let (pairs, c) = collect_single_photon_pairs(&frames, 0.02);
        assert_eq!(pairs.iter().map(|p| p.frame_id).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!((pairs[0].b_pmt, pairs[0].b_cmos), (0.1, 500.0));
        assert_eq!((c.skipped_spot_count, c.skipped_pulse_count), (1, 1));
    }

    #[test]
    fn identical_amplitudes_are_rejected() {
        let a = match_by_brightness(&[1.0, 1.0], &[3.0, 5.0], 0.01);
        assert_eq!(a.status, TagStatus::Rejected(RejectReason::TooClose));
        let b = match_by_brightness(&[1.0], &[3.0, 5.0], 0.0);
        assert_eq!(b.status, TagStatus::Rejected(RejectReason::CountMismatch));
    }

    #[test]
    fn rank_matching_is_a_bijection() {
        let a = match_by_brightness(&[0.3, 0.1, 0.2], &[20.0, 30.0, 10.0], 0.0);
        assert_eq!(a.status, TagStatus::Accepted);
        assert_eq!(a.spot_to_pulse, vec![2, 0, 1]);
    }

    #[test]
    fn tuples_have_distinct_members() {
        let pairs: Vec<BrightnessPair> = (0..10)
            .map(|i| BrightnessPair {
                b_pmt: i as f64 + 1.0,
                b_cmos: i as f64 + 1.0,
                true_time: 0.0,
                frame_id: i,
            })
            .collect();
        let mut rng = frame_stream(3, 0);
        for t in synthesize_tuples(&pairs, 4, 500, &mut rng).unwrap() {
            let mut m = t.members.clone();
            m.sort();
            m.dedup();
            assert_eq!(m.len(), 4);
        }
        assert_eq!(
            synthesize_tuples(&pairs[..2], 3, 1, &mut rng),
            Err(TimetagError::InsufficientPairs { needed: 3, have: 2 })
        );
    }

    #[test]
    fn all_rejected_threshold_is_omitted() {
        let outcomes = [TupleOutcome {
            min_gap: 0.1,
            correct_photons: 2,
            n: 2,
        }];
        let c = accuracy_curve(2, &outcomes, &[0.0, 0.5]);
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.omitted_thresholds, vec![0.5]);
    }
}
