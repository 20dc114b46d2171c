use hicam_core::analysis::*;
use hicam_core::gating::collect_batch;
use hicam_core::intensifier::OpticsMap;
use hicam_core::rng::frame_stream;
use hicam_core::source::{sample_noise, sample_pair, SourceParams, TransverseMomentum};
use hicam_core::RunConfig;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn photon(optics: &OpticsMap, k: TransverseMomentum) -> DetectedPhoton {
    let (x, y) = optics.momentum_to_pixel(k);
    DetectedPhoton { x, y, k }
}

fn frame(optics: &OpticsMap, id: u64, ks: &[TransverseMomentum]) -> FramePhotons {
    FramePhotons {
        frame_id: id,
        photons: ks.iter().map(|&k| photon(optics, k)).collect(),
    }
}

/// Frames with Poisson-many photons spread uniformly over the disk.
fn uncorrelated_frames(n_frames: u64, mean: f64, seed: u64) -> Vec<FramePhotons> {
    let optics = OpticsMap::default();
    let src = SourceParams::default();
    let mut rng = frame_stream(seed, 0);
    let pois = Poisson::new(mean).unwrap();
    (0..n_frames)
        .map(|id| {
            let n = pois.sample(&mut rng) as usize;
            let ks: Vec<_> = (0..n).map(|_| sample_noise(&src, 0.0, &mut rng).k).collect();
            frame(&optics, id, &ks)
        })
        .collect()
}

fn no_filter() -> AnalysisParams {
    AnalysisParams {
        crosstalk_min_sep_px: 0.0,
        ..AnalysisParams::default()
    }
}

proptest! {
    #[test]
    fn histograms_are_symmetric_and_conserve_pairs(
        frames in prop::collection::vec(prop::collection::vec((-700.0f64..700.0, -700.0f64..700.0), 0..6), 1..20),
        min_sep in 0.0f64..300.0,
    ) {
        let optics = OpticsMap::default();
        let fs: Vec<FramePhotons> = frames
            .iter()
            .enumerate()
            .map(|(i, ks)| frame(&optics, i as u64, &ks.iter().map(|&(x, y)| TransverseMomentum::new(x, y)).collect::<Vec<_>>()))
            .collect();
        let params = AnalysisParams { crosstalk_min_sep_px: min_sep, ..AnalysisParams::default() };
        let c = correlate(&fs, &params);
        for axis in HistogramAxis::ALL {
            let h = c.same(axis);
            prop_assert_eq!(h.total() + h.overflow, 2.0 * c.same_pairs as f64);
            let a = c.accidental(axis);
            prop_assert_eq!(a.total() + a.overflow, 2.0 * c.cross_pairs as f64);
        }
        for axis in [HistogramAxis::XvsX, HistogramAxis::YvsY] {
            prop_assert!(c.same(axis).is_transpose_symmetric());
            prop_assert!(c.subtracted(axis).is_transpose_symmetric());
        }
        // Brute-force pair enumeration for the filter.
        let expected: u64 = fs.iter().map(|f| {
            let p = &f.photons;
            let mut k = 0;
            for i in 0..p.len() { for j in i + 1..p.len() {
                if (p[i].x - p[j].x).hypot(p[i].y - p[j].y) >= min_sep { k += 1; }
            }}
            k
        }).sum();
        prop_assert_eq!(c.same_pairs, expected);
    }
}

#[test]
fn uncorrelated_pairs_give_a_flat_histogram() {
    let optics = OpticsMap::default();
    let g = HistogramGeometry::new(32, 400.0);
    let mut rng = frame_stream(40, 0);
    let frames: Vec<FramePhotons> = (0..100_000u64)
        .map(|id| {
            let mut k = || TransverseMomentum::new(rng.random_range(-400.0..400.0), rng.random_range(-400.0..400.0));
            let (a, b) = (k(), k());
            frame(&optics, 2 * id, &[a, b])
        })
        .collect();
    let h = accumulate_joint(&frames, HistogramAxis::XvsX, g, &no_filter());
    // Off-diagonal cells of the upper triangle are independent Poisson counts.
    let n = g.bins;
    let cells: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| h.get(i, j)).collect();
    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
    let chi2: f64 = cells.iter().map(|c| (c - mean).powi(2) / mean).sum();
    let crit = ChiSquared::new((cells.len() - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < crit, "chi2 {chi2} crit {crit}");
}

fn null_check(params: &AnalysisParams, seed: u64) {
    let frames = uncorrelated_frames(60_000, 1.8, seed);
    let c = correlate(&frames, params);
    assert!(c.same_pairs > 90_000, "{}", c.same_pairs);
    for axis in HistogramAxis::ALL {
        let same = c.same(axis);
        let acc = c.accidental(axis);
        let sub = c.subtracted(axis);
        let bins = sub.counts.len() as f64;
        let s = c.accidental_scale;
        // Totals of symmetrized histograms carry twice the Poisson variance.
        let var_total = 2.0 * same.total() + s * s * 2.0 * acc.total();
        let mean = sub.total() / bins;
        let se = var_total.sqrt() / bins;
        assert!(mean.abs() < 3.0 * se, "{axis:?}: mean {mean} se {se}");
        let outliers = same
            .counts
            .iter()
            .zip(&acc.counts)
            .filter(|(a, b)| (*a - s * *b).abs() > 3.0 * (2.0 * *a + s * s * 2.0 * *b).sqrt().max(1.0))
            .count();
        assert!((outliers as f64) < 0.01 * bins, "{axis:?}: {outliers} outliers");
    }
}

#[test]
fn accidental_subtraction_is_null_on_uncorrelated_data() {
    null_check(&AnalysisParams::default(), 41);
    null_check(
        &AnalysisParams {
            accidental_normalization: AccidentalNormalization::PairSampling,
            ..AnalysisParams::default()
        },
        42,
    );
}

/// Central excess of the subtracted difference-plane histogram, in units of
/// the bin-to-bin scatter away from the center.
fn center_excess(frames: &[FramePhotons], min_sep: f64) -> f64 {
    let params = AnalysisParams {
        crosstalk_min_sep_px: min_sep,
        ..AnalysisParams::default()
    };
    let c = correlate(frames, &params);
    let h = c.subtracted(HistogramAxis::DifferencePlane);
    let g = h.geometry;
    let (mut center, mut outer) = (f64::NEG_INFINITY, Vec::new());
    for i in 0..g.bins {
        for j in 0..g.bins {
            let r = g.center(i).hypot(g.center(j));
            if r < 25.0 {
                center = center.max(h.get(i, j));
            } else if r > 60.0 {
                outer.push(h.get(i, j));
            }
        }
    }
    let m = outer.iter().sum::<f64>() / outer.len() as f64;
    let sd = (outer.iter().map(|v| (v - m).powi(2)).sum::<f64>() / outer.len() as f64).sqrt();
    (center - m) / sd
}

pub fn crosstalk_frames(seed: u64, n: u64) -> Vec<FramePhotons> {
    let mut cfg = RunConfig::with_seed(seed);
    cfg.intensifier.crosstalk_prob = 0.3;
    cfg.intensifier.crosstalk_radius_px = 50.0;
    collect_batch(&cfg, &cfg.gating, seed, n, 4)
        .unwrap()
        .iter()
        .map(|r| frame_photons(r, &cfg.optics))
        .collect()
}

#[test]
fn crosstalk_peak_vanishes_with_the_filter() {
    let frames = crosstalk_frames(43, 100_000);
    let raw = center_excess(&frames, 0.0);
    let filtered = center_excess(&frames, 100.0);
    assert!(raw > 3.0, "artifact not produced: {raw}");
    assert!(filtered < 3.0, "artifact survives: {filtered}");
}

fn correlated_frames(src: &SourceParams, n_pairs: u64, seed: u64) -> Vec<FramePhotons> {
    let optics = OpticsMap::default();
    let mut rng = frame_stream(seed, 0);
    (0..n_pairs)
        .map(|id| {
            let (a, b) = sample_pair(src, 0.0, id, &mut rng);
            frame(&optics, 2 * id, &[a.k, b.k])
        })
        .collect()
}

#[test]
fn sum_fit_recovers_configured_widths() {
    let src = SourceParams::default();
    let frames = correlated_frames(&src, 30_000, 44);
    let params = AnalysisParams::default();
    let h = sum_projection(&frames, params.sum_geometry, &params);
    let fit = fit_peak(&h, params.peak_significance).unwrap();
    assert!((fit.sigma_x / src.sum_sigma_x - 1.0).abs() < 0.05, "{fit:?}");
    assert!((fit.sigma_y / src.sum_sigma_y - 1.0).abs() < 0.05, "{fit:?}");
    let bw = params.sum_geometry.bin_width();
    assert!(fit.center.kx.abs() < bw && fit.center.ky.abs() < bw);
}

#[test]
fn symmetric_source_gives_equal_widths() {
    let src = SourceParams {
        sum_sigma_x: 24.0,
        sum_sigma_y: 24.0,
        ..SourceParams::default()
    };
    let frames = correlated_frames(&src, 100_000, 45);
    let params = AnalysisParams::default();
    let fit = fit_peak(&sum_projection(&frames, params.sum_geometry, &params), 5.0).unwrap();
    assert!(((fit.sigma_x - fit.sigma_y) / fit.sigma_x).abs() < 0.03, "{fit:?}");
}

#[test]
fn flat_histogram_has_no_peak() {
    let mut h = JointHistogram::new(HistogramAxis::SumPlane, HistogramGeometry::new(16, 100.0));
    h.counts.iter_mut().for_each(|c| *c = 10.0);
    assert!(matches!(fit_peak(&h, 5.0), Err(AnalysisError::NoPeak { .. })));
}

fn ring_image(center: TransverseMomentum, radius: f64, width: f64, n: usize, seed: u64) -> MomentumImage {
    let mut img = MomentumImage::new(AnalysisParams::default().ring_geometry);
    let mut rng = frame_stream(seed, 0);
    let nr = Normal::new(radius, width).unwrap();
    for _ in 0..n {
        let r = nr.sample(&mut rng);
        let a = rng.random::<f64>() * std::f64::consts::TAU;
        img.fill(center + TransverseMomentum::new(r * a.cos(), r * a.sin()));
    }
    img
}

#[test]
fn ring_fit_recovers_synthetic_ring() {
    let center = TransverseMomentum::new(12.0, -7.0);
    let img = ring_image(center, 330.0, 26.0, 200_000, 46);
    let fit = fit_ring(&img, 480.0).unwrap();
    assert!((fit.k_radius / 330.0 - 1.0).abs() < 0.02, "{fit:?}");
    assert!((fit.radial_width / 26.0 - 1.0).abs() < 0.02, "{fit:?}");
    let bw = img.geometry.bin_width();
    assert!((fit.center.kx - 12.0).abs() < bw && (fit.center.ky + 7.0).abs() < bw, "{fit:?}");
}

#[test]
fn ring_fit_tolerates_uniform_background() {
    let mut img = ring_image(TransverseMomentum::ZERO, 330.0, 20.0, 100_000, 47);
    let src = SourceParams::default();
    let mut rng = frame_stream(47, 1);
    for _ in 0..100_000 {
        img.fill(sample_noise(&src, 0.0, &mut rng).k);
    }
    let fit = fit_ring(&img, 480.0).unwrap();
    assert!((fit.k_radius / 330.0 - 1.0).abs() < 0.02 && (fit.radial_width / 20.0 - 1.0).abs() < 0.05, "{fit:?}");
}

#[test]
fn centered_disk_is_rejected() {
    let mut img = MomentumImage::new(AnalysisParams::default().ring_geometry);
    let src = SourceParams::default();
    let mut rng = frame_stream(48, 0);
    for _ in 0..200_000 {
        img.fill(sample_noise(&src, 0.0, &mut rng).k);
    }
    assert_eq!(fit_ring(&img, 480.0), Err(AnalysisError::MonotoneProfile));
}
