//! Photon recovery from sCMOS frames: local-maximum candidates followed by a
//! sub-pixel isotropic Gaussian fit around each one.

use std::cmp::Ordering;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ensure_positive, ConfigError};
use crate::intensifier::{FlashEvent, OpticsMap};
use crate::lm::{levenberg_marquardt, IsotropicGaussian, LmConfig};
use crate::readout::{cmos_spot_amplitude, Image, ReadoutParams};
use crate::rng::RandomStream;
use crate::source::TransverseMomentum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionParams {
    /// Minimum peak pixel value (counts) for a candidate.
    pub detect_threshold: f64,
    pub roi_half_size: usize,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub sigma_bounds: [f64; 2],
    /// Initial σ for every fit, pixels.
    pub sigma_prior_px: f64,
    pub min_peak_separation: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            detect_threshold: 100.0,
            roi_half_size: 4,
            max_iterations: 50,
            convergence_tol: 1e-8,
            sigma_bounds: [0.5, 5.0],
            sigma_prior_px: 1.5,
            min_peak_separation: 3.0,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure_positive(self.detect_threshold, "detect_threshold")?;
        ensure(self.max_iterations > 0, "max_iterations", "must be > 0")?;
        ensure_positive(self.convergence_tol, "convergence_tol")?;
        let [lo, hi] = self.sigma_bounds;
        ensure(lo > 0.0 && hi > lo, "sigma_bounds", "must satisfy 0 < min < max")?;
        ensure_positive(self.sigma_prior_px, "sigma_prior_px")?;
        ensure_positive(self.min_peak_separation, "min_peak_separation")?;
        ensure(
            self.roi_half_size as f64 >= 2.0 * self.sigma_prior_px,
            "roi_half_size",
            "must be at least 2 * sigma_prior_px",
        )
    }

    fn lm_config(&self) -> LmConfig {
        LmConfig {
            max_iterations: self.max_iterations,
            convergence_tol: self.convergence_tol,
            ..LmConfig::default()
        }
    }
}

/// Persisted spot: what a frame record keeps of each detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedSpot {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub offset: f64,
    pub residual_norm: f64,
    pub roi_origin: (usize, usize),
    pub iterations: usize,
    pub converged: bool,
    /// Accepted-step cost sequence of the fit.
    pub cost_history: Vec<f64>,
}

impl DetectedSpot {
    pub fn to_spot(&self) -> Spot {
        Spot {
            x: self.x,
            y: self.y,
            amplitude: self.amplitude,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FitFailure {
    #[error("no peak above the local background")]
    NoPeak,
    #[error("region of interest too small to fit")]
    RoiTooSmall,
    #[error("fit diverged")]
    Diverged,
    #[error("fitted sigma {0} outside bounds")]
    SigmaOutOfBounds(f64),
    #[error("fitted amplitude {0} is not positive")]
    NegativeAmplitude(f64),
    #[error("fitted centre outside the region of interest")]
    CentroidOutsideRoi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PixelPeak {
    pub x: usize,
    pub y: usize,
}

/// Local maxima above threshold with non-maximum suppression. Higher peaks
/// win; equal peaks are ordered by row-major pixel position.
pub fn detect_candidates(image: &Image, params: &ExtractionParams) -> Vec<PixelPeak> {
    let (w, h) = (image.width, image.height);
    let mut peaks: Vec<(f64, PixelPeak)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = image.get(x, y);
            if v < params.detect_threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if (nx, ny) == (x, y) {
                        continue;
                    }
                    let nv = image.get(nx, ny);
                    // Plateaus keep only their first pixel in scan order.
                    if nv > v || (nv == v && (ny, nx) < (y, x)) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push((v, PixelPeak { x, y }));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1.y, a.1.x).cmp(&(b.1.y, b.1.x))));
    let sep2 = params.min_peak_separation * params.min_peak_separation;
    let mut kept: Vec<PixelPeak> = Vec::new();
    for (_, p) in peaks {
        let clear = kept.iter().all(|k| {
            let dx = k.x as f64 - p.x as f64;
            let dy = k.y as f64 - p.y as f64;
            dx * dx + dy * dy >= sep2
        });
        if clear {
            kept.push(p);
        }
    }
    kept
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fit the isotropic Gaussian plus offset over the region of interest around
/// `candidate`, clipped to the image.
pub fn fit_gaussian(image: &Image, candidate: PixelPeak, params: &ExtractionParams) -> Result<DetectedSpot, FitFailure> {
    let h = params.roi_half_size;
    let x0 = candidate.x.saturating_sub(h);
    let y0 = candidate.y.saturating_sub(h);
    let x1 = (candidate.x + h).min(image.width - 1);
    let y1 = (candidate.y + h).min(image.height - 1);
    if x1 - x0 < 2 || y1 - y0 < 2 {
        return Err(FitFailure::RoiTooSmall);
    }
    let mut xs = Vec::with_capacity((x1 - x0 + 1) * (y1 - y0 + 1));
    let mut ys = Vec::with_capacity(xs.capacity());
    for y in y0..=y1 {
        for x in x0..=x1 {
            xs.push([x as f64, y as f64]);
            ys.push(image.get(x, y));
        }
    }
    let mut sorted = ys.clone();
    let background = median(&mut sorted);
    let peak = image.get(candidate.x, candidate.y);
    let amp0 = peak - background;
    if amp0.is_nan() || amp0 <= 0.0 {
        return Err(FitFailure::NoPeak);
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (c, v) in xs.iter().zip(&ys) {
        let wgt = (v - background).max(0.0);
        sw += wgt;
        sx += wgt * c[0];
        sy += wgt * c[1];
    }
    let (cx, cy) = if sw > 0.0 { (sx / sw, sy / sw) } else { (candidate.x as f64, candidate.y as f64) };

    let init = [amp0, cx, cy, params.sigma_prior_px, background];
    let out = levenberg_marquardt(&IsotropicGaussian, &xs, &ys, init, &params.lm_config())
        .map_err(|_| FitFailure::Diverged)?;
    let [a, fx, fy, s, c] = out.params;
    if !out.params.iter().all(|v| v.is_finite()) {
        return Err(FitFailure::Diverged);
    }
    if a <= 0.0 {
        return Err(FitFailure::NegativeAmplitude(a));
    }
    let [smin, smax] = params.sigma_bounds;
    if !(smin..=smax).contains(&s) {
        return Err(FitFailure::SigmaOutOfBounds(s));
    }
    let inside = fx >= x0 as f64 - 0.5 && fx <= x1 as f64 + 0.5 && fy >= y0 as f64 - 0.5 && fy <= y1 as f64 + 0.5;
    if !inside {
        return Err(FitFailure::CentroidOutsideRoi);
    }
    Ok(DetectedSpot {
        x: fx,
        y: fy,
        amplitude: a,
        sigma: s,
        offset: c,
        residual_norm: out.residual_norm(),
        roi_origin: (x0, y0),
        iterations: out.iterations,
        converged: out.converged,
        cost_history: out.cost_history,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractionCounters {
    pub candidates: usize,
    pub fitted: usize,
    pub failed: usize,
}

/// Candidates, fits and momentum assignment for one frame. Failed fits are
/// dropped and counted.
pub fn extract_events(
    image: &Image,
    params: &ExtractionParams,
    optics: &OpticsMap,
) -> (Vec<(DetectedSpot, TransverseMomentum)>, ExtractionCounters) {
    let candidates = detect_candidates(image, params);
    let mut counters = ExtractionCounters {
        candidates: candidates.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        match fit_gaussian(image, c, params) {
            Ok(spot) => {
                let k = optics.pixel_to_momentum(spot.x, spot.y);
                out.push((spot, k));
                counters.fitted += 1;
            }
            Err(_) => counters.failed += 1,
        }
    }
    (out, counters)
}

/// Spot list without pixels: each flash yields the spot a least-squares fit
/// would report, with the Cramér-Rao scatter of a Gaussian fit under white
/// read noise (amplitude `σn / (√π s)`, centroid `σn √(2/π) / A` per axis).
/// Spots below the detection threshold are lost; spots closer than
/// `min_peak_separation` merge into the brighter one.
pub fn spot_level_readout(
    flashes: &[FlashEvent],
    readout: &ReadoutParams,
    params: &ExtractionParams,
    rng: &mut RandomStream,
) -> Vec<Spot> {
    let std = Normal::new(0.0, 1.0).unwrap();
    let noise = readout.cmos_noise_sigma;
    let s = readout.psf_sigma_px;
    let mut spots: Vec<Spot> = Vec::with_capacity(flashes.len());
    for f in flashes {
        let true_amp = cmos_spot_amplitude(f, readout, rng);
        let amp = true_amp + noise / (std::f64::consts::PI.sqrt() * s) * std.sample(rng);
        let pos_sigma = noise * (2.0 / std::f64::consts::PI).sqrt() / true_amp;
        let x = f.x + pos_sigma * std.sample(rng);
        let y = f.y + pos_sigma * std.sample(rng);
        if amp >= params.detect_threshold {
            spots.push(Spot {
                x,
                y,
                amplitude: amp,
                sigma: s,
            });
        }
    }
    spots.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    let sep2 = params.min_peak_separation.powi(2);
    let mut kept: Vec<Spot> = Vec::with_capacity(spots.len());
    for sp in spots {
        if kept.iter().all(|k| (k.x - sp.x).powi(2) + (k.y - sp.y).powi(2) >= sep2) {
            kept.push(sp);
        }
    }
    sort_spots(&mut kept);
    kept
}

/// Raster order: by row, then column.
pub fn sort_spots(spots: &mut [Spot]) {
    spots.sort_by(|a, b| match a.y.total_cmp(&b.y) {
        Ordering::Equal => a.x.total_cmp(&b.x),
        o => o,
    });
}
