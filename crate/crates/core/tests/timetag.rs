use hicam_core::rng::frame_stream;
use hicam_core::timetag::*;
use proptest::prelude::*;
use rand_distr::{Distribution, Gamma, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn pairs_from(brightness: &[f64], pmt: impl Fn(f64, usize) -> f64, cmos: impl Fn(f64, usize) -> f64) -> Vec<BrightnessPair> {
    brightness
        .iter()
        .enumerate()
        .map(|(i, &b)| BrightnessPair {
            b_pmt: pmt(b, i),
            b_cmos: cmos(b, i),
            true_time: i as f64,
            frame_id: i as u64,
        })
        .collect()
}

fn gamma_brightness(n: usize, seed: u64) -> Vec<f64> {
    let g = Gamma::new(1.3, 1.0).unwrap();
    let mut rng = frame_stream(seed, 0);
    (0..n).map(|_| g.sample(&mut rng)).collect()
}

fn noisy_pairs(n: usize, seed: u64) -> Vec<BrightnessPair> {
    let b = gamma_brightness(n, seed);
    let mut rng = frame_stream(seed, 1);
    let z = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<(f64, f64)> = (0..n).map(|_| (z.sample(&mut rng), z.sample(&mut rng))).collect();
    pairs_from(&b, |b, i| 0.1 * b * (0.23 * noise[i].0).exp(), |b, i| 900.0 * b * (0.05 * noise[i].1).exp())
}

#[test]
fn monotone_detectors_tag_perfectly() {
    let b = gamma_brightness(5000, 50);
    let pairs = pairs_from(&b, |b, _| 0.1 * b.sqrt(), |b, _| 900.0 * b + b * b);
    let mut rng = frame_stream(50, 2);
    for curve in accuracy_sweep(&pairs, &[2, 3, 4, 5, 6], &[0.0, 0.05, 0.2], 5000, &mut rng).unwrap() {
        for p in &curve.points {
            assert_eq!(p.accuracy, 1.0, "n={} {:?}", curve.n, p);
            assert_eq!(p.photon_accuracy, 1.0);
        }
    }
}

#[test]
fn rank_permutations_are_uniform() {
    let pairs = noisy_pairs(1000, 51);
    let mut rng = frame_stream(51, 3);
    let tuples = synthesize_tuples(&pairs, 3, 100_000, &mut rng).unwrap();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut counts = [0.0; 6];
    for t in &tuples {
        let k = perms.iter().position(|p| p[..] == t.arrival_rank[..]).unwrap();
        counts[k] += 1.0;
    }
    let e = tuples.len() as f64 / 6.0;
    let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
    assert!(chi2 < ChiSquared::new(5.0).unwrap().inverse_cdf(0.99), "{counts:?}");
}

#[test]
fn accuracy_falls_with_multiplicity_and_rises_with_threshold() {
    let pairs = noisy_pairs(20_000, 52);
    let thresholds: Vec<f64> = (0..=20).map(|i| i as f64 / 50.0).collect();
    let mut rng = frame_stream(52, 4);
    let curves = accuracy_sweep(&pairs, &[2, 3, 4, 5, 6], &thresholds, 20_000, &mut rng).unwrap();
    let se = |p: &AccuracyPoint| (p.accuracy * (1.0 - p.accuracy) / p.accepted as f64).sqrt();
    for c in &curves {
        let by_t = |t: f64| c.points.iter().find(|p| p.threshold == t);
        for w in thresholds.windows(2) {
            if let (Some(a), Some(b)) = (by_t(w[0]), by_t(w[1])) {
                assert!(b.rejected_fraction >= a.rejected_fraction);
                assert!(b.accuracy >= a.accuracy - 3.0 * se(a).max(se(b)));
            }
        }
        assert!(c.points.windows(2).all(|w| w[0].rejected_fraction <= w[1].rejected_fraction));
    }
    for w in curves.windows(2) {
        for p in &w[1].points {
            if let Some(q) = w[0].points.iter().find(|q| q.threshold == p.threshold) {
                assert!(p.accuracy <= q.accuracy + 3.0 * se(p).max(se(q)), "n={} t={}", w[1].n, p.threshold);
            }
        }
    }
}

proptest! {
    #[test]
    fn accepted_assignments_are_bijections(
        amps in prop::collection::vec((0.001f64..1.0, 1.0f64..1e4), 2..7),
        thr in 0.0f64..0.3,
    ) {
        let pulses: Vec<f64> = amps.iter().map(|a| a.0).collect();
        let spots: Vec<f64> = amps.iter().map(|a| a.1).collect();
        let a = match_by_brightness(&pulses, &spots, thr);
        let mut seen = a.spot_to_pulse.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..pulses.len()).collect::<Vec<_>>());
        let close = min_relative_gap(&pulses) < thr || min_relative_gap(&spots) < thr;
        prop_assert_eq!(a.status == TagStatus::Accepted, !close);
    }

    #[test]
    fn rejection_is_monotone_in_threshold(seed in any::<u64>(), t1 in 0.0f64..0.5, dt in 0.0f64..0.5) {
        let pairs = noisy_pairs(200, seed);
        let mut rng = frame_stream(seed, 9);
        let tuples = synthesize_tuples(&pairs, 3, 300, &mut rng).unwrap();
        let outcomes: Vec<TupleOutcome> = tuples.iter().map(|t| evaluate_tuple(&pairs, t)).collect();
        let rejected = |t: f64| outcomes.iter().filter(|o| o.min_gap < t).count();
        prop_assert!(rejected(t1) <= rejected(t1 + dt));
    }
}

#[test]
fn tuple_members_are_distinct_frames() {
    let pairs = noisy_pairs(50, 53);
    let mut rng = frame_stream(53, 0);
    let t = synthesize_tuples(&pairs, 2, 1, &mut rng).unwrap();
    assert_ne!(pairs[t[0].members[0]].frame_id, pairs[t[0].members[1]].frame_id);
}
