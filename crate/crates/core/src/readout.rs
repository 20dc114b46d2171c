//! Dual readout of phosphor flashes: sCMOS image synthesis and the PMT pulse
//! train with its threshold discriminator.
//!
//! A fraction `pmt_fraction` of each flash goes to the PMT, the rest to the
//! sCMOS. Each detector applies its own median-one log-normal gain noise, so
//! the two amplitude readings of one flash are correlated through the shared
//! brightness but scatter independently.

use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_non_negative, ensure_positive, ensure_probability, ConfigError};
use crate::intensifier::FlashEvent;
use crate::rng::RandomStream;
use crate::source::exp_wait_ns;

/// How sCMOS frames are turned into spot lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// Spot-level fast path: each flash becomes a spot with the centroid and
    /// amplitude scatter a least-squares fit would produce. No pixels.
    Spots,
    /// Full image synthesis over the channel grid followed by extraction.
    Render,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutParams {
    pub mode: ReadoutMode,
    pub psf_sigma_px: f64,
    /// sCMOS counts per brightness unit.
    pub cmos_gain: f64,
    /// Per-pixel Gaussian read noise, counts.
    pub cmos_noise_sigma: f64,
    /// Log-normal sigma of the sCMOS amplitude.
    pub cmos_gain_noise: f64,
    pub pmt_fraction: f64,
    /// Volts per brightness unit.
    pub pmt_gain: f64,
    /// Additive Gaussian pulse-height noise, volts.
    pub pmt_noise_sigma: f64,
    /// Log-normal sigma of the PMT amplitude.
    pub pmt_gain_noise: f64,
    pub pmt_false_pulse_rate_hz: f64,
    /// Mean of the exponential false-pulse amplitude distribution, volts.
    pub false_pulse_mean_amplitude: f64,
    pub discriminator_threshold: f64,
    pub pulse_pair_resolution_ns: f64,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        Self {
            mode: ReadoutMode::Spots,
            psf_sigma_px: 1.5,
            cmos_gain: 1000.0,
            cmos_noise_sigma: 20.0,
            cmos_gain_noise: 0.05,
            pmt_fraction: 0.10,
            pmt_gain: 1.0,
            pmt_noise_sigma: 0.003,
            pmt_gain_noise: 0.23,
            pmt_false_pulse_rate_hz: 4.8e5,
            false_pulse_mean_amplitude: 0.03,
            discriminator_threshold: 0.02,
            pulse_pair_resolution_ns: 5.0,
        }
    }
}

impl ReadoutParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure_positive(self.psf_sigma_px, "psf_sigma_px")?;
        ensure_positive(self.cmos_gain, "cmos_gain")?;
        ensure_non_negative(self.cmos_noise_sigma, "cmos_noise_sigma")?;
        ensure_non_negative(self.cmos_gain_noise, "cmos_gain_noise")?;
        ensure_probability(self.pmt_fraction, "pmt_fraction")?;
        ensure_positive(self.pmt_gain, "pmt_gain")?;
        ensure_non_negative(self.pmt_noise_sigma, "pmt_noise_sigma")?;
        ensure_non_negative(self.pmt_gain_noise, "pmt_gain_noise")?;
        ensure_non_negative(self.pmt_false_pulse_rate_hz, "pmt_false_pulse_rate_hz")?;
        ensure_positive(self.false_pulse_mean_amplitude, "false_pulse_mean_amplitude")?;
        ensure_positive(self.discriminator_threshold, "discriminator_threshold")?;
        ensure_non_negative(self.pulse_pair_resolution_ns, "pulse_pair_resolution_ns")?;
        ensure(self.pmt_fraction < 1.0, "pmt_fraction", "must leave light for the sCMOS")
    }

    /// Noiseless sCMOS spot peak for a flash of brightness `b`.
    pub fn cmos_peak(&self, b: f64) -> f64 {
        (1.0 - self.pmt_fraction) * self.cmos_gain * b
    }

    /// Noiseless PMT amplitude for a flash of brightness `b`.
    pub fn pmt_amplitude(&self, b: f64) -> f64 {
        self.pmt_fraction * self.pmt_gain * b
    }
}

fn lognormal_factor(sigma: f64, rng: &mut RandomStream) -> f64 {
    if sigma > 0.0 {
        (sigma * Normal::new(0.0, 1.0).unwrap().sample(rng)).exp()
    } else {
        1.0
    }
}

/// sCMOS spot amplitude of one flash including the detector's gain noise.
pub fn cmos_spot_amplitude(flash: &FlashEvent, params: &ReadoutParams, rng: &mut RandomStream) -> f64 {
    params.cmos_peak(flash.brightness) * lognormal_factor(params.cmos_gain_noise, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmtPulse {
    #[serde(rename = "t_ns")]
    pub t: f64,
    pub amplitude: f64,
}

/// Ground truth for one rendered spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmosSpotTruth {
    pub true_x: f64,
    pub true_y: f64,
    pub true_amplitude: f64,
    /// Index of the flash in the rendered list.
    pub flash_index: usize,
}

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Add `amplitude * exp(-r² / 2σ²)` centred on `(cx, cy)`, truncated at 6σ.
    pub fn add_gaussian(&mut self, cx: f64, cy: f64, amplitude: f64, sigma: f64) {
        let reach = (6.0 * sigma).ceil();
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as isize).min(self.width as isize - 1);
        let y1 = ((cy + reach).ceil() as isize).min(self.height as isize - 1);
        if x1 < 0 || y1 < 0 {
            return;
        }
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in y0..=y1 as usize {
            let dy = y as f64 - cy;
            for x in x0..=x1 as usize {
                let dx = x as f64 - cx;
                *self.get_mut(x, y) += amplitude * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
}

/// Synthesize the sCMOS frame for a set of flashes.
pub fn render_frame(
    flashes: &[FlashEvent],
    params: &ReadoutParams,
    frame_size: (usize, usize),
    rng: &mut RandomStream,
) -> (Image, Vec<CmosSpotTruth>) {
    let mut img = Image::zeros(frame_size.0, frame_size.1);
    let mut truth = Vec::with_capacity(flashes.len());
    for (i, f) in flashes.iter().enumerate() {
        let amp = cmos_spot_amplitude(f, params, rng);
        img.add_gaussian(f.x, f.y, amp, params.psf_sigma_px);
        truth.push(CmosSpotTruth {
            true_x: f.x,
            true_y: f.y,
            true_amplitude: amp,
            flash_index: i,
        });
    }
    if params.cmos_noise_sigma > 0.0 {
        let noise = Normal::new(0.0, params.cmos_noise_sigma).unwrap();
        for v in img.data.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    (img, truth)
}

/// PMT pulse produced by one flash. `None` when noise drives the height to
/// zero or below, which no discriminator could register.
pub fn flash_pulse(flash: &FlashEvent, params: &ReadoutParams, rng: &mut RandomStream) -> Option<PmtPulse> {
    let mut amp = params.pmt_amplitude(flash.brightness) * lognormal_factor(params.pmt_gain_noise, rng);
    if params.pmt_noise_sigma > 0.0 {
        amp += params.pmt_noise_sigma * Normal::new(0.0, 1.0).unwrap().sample(rng);
    }
    (amp > 0.0).then_some(PmtPulse { t: flash.t, amplitude: amp })
}

pub fn false_pulse_amplitude(params: &ReadoutParams, rng: &mut RandomStream) -> f64 {
    Exp::new(1.0 / params.false_pulse_mean_amplitude)
        .unwrap()
        .sample(rng)
        .max(f64::MIN_POSITIVE)
}

/// PMT pulses for a window `[0, window_ns)`: one per flash plus Poisson false
/// pulses, sorted by time.
pub fn pmt_pulse_train(
    flashes: &[FlashEvent],
    params: &ReadoutParams,
    window_ns: f64,
    rng: &mut RandomStream,
) -> Vec<PmtPulse> {
    let mut train: Vec<PmtPulse> = flashes.iter().filter_map(|f| flash_pulse(f, params, rng)).collect();
    let mut t = exp_wait_ns(params.pmt_false_pulse_rate_hz, rng);
    while t < window_ns {
        train.push(PmtPulse {
            t,
            amplitude: false_pulse_amplitude(params, rng),
        });
        t += exp_wait_ns(params.pmt_false_pulse_rate_hz, rng);
    }
    train.sort_by(|a, b| a.t.total_cmp(&b.t));
    train
}

/// Leading-edge discriminator with non-paralyzable dead time: after a trigger,
/// above-threshold pulses within `pulse_pair_resolution_ns` merge into it.
#[derive(Debug, Clone)]
pub struct Discriminator {
    threshold: f64,
    resolution: f64,
    last_trigger: Option<f64>,
}

impl Discriminator {
    pub fn new(params: &ReadoutParams) -> Self {
        Self {
            threshold: params.discriminator_threshold,
            resolution: params.pulse_pair_resolution_ns,
            last_trigger: None,
        }
    }

    /// Feed the next pulse (in time order); returns the trigger time if it fires.
    pub fn feed(&mut self, pulse: &PmtPulse) -> Option<f64> {
        if pulse.amplitude < self.threshold {
            return None;
        }
        if let Some(last) = self.last_trigger {
            if pulse.t - last < self.resolution {
                return None;
            }
        }
        self.last_trigger = Some(pulse.t);
        Some(pulse.t)
    }
}

pub fn discriminate(train: &[PmtPulse], params: &ReadoutParams) -> Vec<f64> {
    let mut d = Discriminator::new(params);
    train.iter().filter_map(|p| d.feed(p)).collect()
}

/// Sampled PMT voltage trace for plotting, each pulse drawn as a Gaussian of
/// the given FWHM.
pub fn sampled_trace(pulses: &[PmtPulse], t0: f64, t1: f64, dt: f64, fwhm_ns: f64) -> Vec<(f64, f64)> {
    let sigma = fwhm_ns / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let n = ((t1 - t0) / dt).floor().max(0.0) as usize + 1;
    (0..n)
        .map(|i| {
            let t = t0 + i as f64 * dt;
            let v = pulses
                .iter()
                .map(|p| p.amplitude * (-(t - p.t).powi(2) / (2.0 * sigma * sigma)).exp())
                .sum();
            (t, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::frame_stream;

    fn noiseless() -> ReadoutParams {
        ReadoutParams {
            cmos_noise_sigma: 0.0,
            cmos_gain_noise: 0.0,
            pmt_noise_sigma: 0.0,
            pmt_gain_noise: 0.0,
            pmt_false_pulse_rate_hz: 0.0,
            ..Default::default()
        }
    }

    fn flash_at(x: f64, y: f64, b: f64, t: f64) -> FlashEvent {
        FlashEvent {
            x,
            y,
            true_x: x,
            true_y: y,
            brightness: b,
            t,
            is_crosstalk: false,
            parent_pair_id: None,
            origin: None,
        }
    }

    #[test]
    fn empty_noiseless_frame_is_zero() {
        let mut rng = frame_stream(1, 0);
        let (img, truth) = render_frame(&[], &noiseless(), (32, 32), &mut rng);
        assert!(img.data.iter().all(|&v| v == 0.0));
        assert!(truth.is_empty());
    }

    #[test]
    fn single_spot_peak_and_integral() {
        let p = noiseless();
        let mut rng = frame_stream(2, 0);
        let (img, truth) = render_frame(&[flash_at(20.0, 17.0, 1.5, 0.0)], &p, (48, 40), &mut rng);
        let peak = p.cmos_peak(1.5);
        let (mut best, mut at) = (f64::MIN, (0, 0));
        for y in 0..img.height {
            for x in 0..img.width {
                if img.get(x, y) > best {
                    best = img.get(x, y);
                    at = (x, y);
                }
            }
        }
        assert_eq!(at, (20, 17));
        assert!((best - peak).abs() < 1e-9);
        assert_eq!(truth[0].true_amplitude, peak);
        let expected = std::f64::consts::TAU * p.psf_sigma_px.powi(2) * peak;
        assert!((img.sum() - expected).abs() / expected < 0.01);
    }

    #[test]
    fn pulse_amplitude_is_linear_in_brightness() {
        let p = noiseless();
        let mut rng = frame_stream(3, 0);
        let train = pmt_pulse_train(&[flash_at(0.0, 0.0, 2.5, 7.0)], &p, 150.0, &mut rng);
        assert_eq!(train.len(), 1);
        assert!((train[0].amplitude - 0.1 * 1.0 * 2.5).abs() < 1e-12);
        assert!(pmt_pulse_train(&[], &p, 150.0, &mut rng).is_empty());
    }

    #[test]
    fn false_pulse_mean_count() {
        let p = ReadoutParams {
            pmt_false_pulse_rate_hz: 1e4,
            ..noiseless()
        };
        let mut rng = frame_stream(4, 0);
        let trials = 1_000_000;
        let total: usize = (0..trials).map(|_| pmt_pulse_train(&[], &p, 150.0, &mut rng).len()).sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 1.5e-3).abs() < 1.5e-4, "{mean}");
    }

    #[test]
    fn threshold_above_everything_yields_nothing() {
        let p = ReadoutParams {
            discriminator_threshold: 10.0,
            ..noiseless()
        };
        let train = vec![PmtPulse { t: 1.0, amplitude: 0.5 }, PmtPulse { t: 9.0, amplitude: 3.0 }];
        assert!(discriminate(&train, &p).is_empty());
    }

    #[test]
    fn close_pulses_merge() {
        let p = noiseless();
        let train = vec![PmtPulse { t: 10.0, amplitude: 0.5 }, PmtPulse { t: 11.0, amplitude: 0.5 }];
        assert_eq!(discriminate(&train, &p), vec![10.0]);
    }

    #[test]
    fn sampled_trace_peaks_at_pulse() {
        let pulses = [PmtPulse { t: 50.0, amplitude: 0.2 }];
        let tr = sampled_trace(&pulses, 0.0, 100.0, 1.0, 4.0);
        assert_eq!(tr.len(), 101);
        let (t, v) = tr.iter().cloned().fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(t, 50.0);
        assert!((v - 0.2).abs() < 1e-12);
    }
}
