//! Ground-truth photon-pair source.
//!
//! Pairs are emitted on a momentum ring: the pair "center" momentum sits on a
//! ring of radius `ring_radius` with a Gaussian radial spread, and the two
//! photons carry `+center` and `-center` plus half of a small Gaussian sum
//! offset each. The sum `k1 + k2` therefore has exactly the configured
//! `sum_sigma_x` / `sum_sigma_y` widths. Noise photons are uniform over the
//! acceptance disk. Arrival epochs for both processes are homogeneous Poisson.

use std::collections::BinaryHeap;
use std::cmp::{Ordering, Reverse};
use std::f64::consts::TAU;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_non_negative, ensure_positive, ConfigError};
use crate::rng::RandomStream;

/// Transverse momentum in inverse millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransverseMomentum {
    pub kx: f64,
    pub ky: f64,
}

impl TransverseMomentum {
    pub const ZERO: Self = Self { kx: 0.0, ky: 0.0 };

    pub fn new(kx: f64, ky: f64) -> Self {
        Self { kx, ky }
    }

    pub fn norm(self) -> f64 {
        self.kx.hypot(self.ky)
    }

    pub fn is_finite(self) -> bool {
        self.kx.is_finite() && self.ky.is_finite()
    }
}

impl Add for TransverseMomentum {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.kx + o.kx, self.ky + o.ky)
    }
}

impl Sub for TransverseMomentum {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.kx - o.kx, self.ky - o.ky)
    }
}

impl Neg for TransverseMomentum {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.kx, -self.ky)
    }
}

impl Mul<f64> for TransverseMomentum {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.kx * s, self.ky * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Signal,
    Idler,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonEvent {
    /// Nanoseconds since the gate epoch.
    pub t: f64,
    pub k: TransverseMomentum,
    pub origin: Origin,
    pub pair_id: Option<u64>,
}

/// Effective source description in momentum space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceParams {
    /// Ring radius, mm⁻¹.
    pub ring_radius: f64,
    /// Radial standard deviation of the pair-center ring, mm⁻¹.
    pub ring_radial_sigma: f64,
    /// Width of the momentum-sum distribution along x, mm⁻¹.
    pub sum_sigma_x: f64,
    /// Width of the momentum-sum distribution along y, mm⁻¹.
    pub sum_sigma_y: f64,
    /// Pair creation rate reaching the intensifier, s⁻¹.
    pub pair_rate_hz: f64,
    /// Uncorrelated background photon rate, s⁻¹.
    pub noise_rate_hz: f64,
    /// Maximum signal/idler arrival difference, ns.
    pub pair_time_jitter_ns: f64,
    /// Detector acceptance radius in momentum space, mm⁻¹.
    pub k_max: f64,
}

impl Default for SourceParams {
    /// The calibrated profile. The ring radius and width give an
    /// analytic mode count of 194 with the default sum widths.
    fn default() -> Self {
        Self {
            ring_radius: 330.0,
            ring_radial_sigma: 16.99,
            sum_sigma_x: 24.43,
            sum_sigma_y: 22.67,
            pair_rate_hz: 2.5e6,
            noise_rate_hz: 5.0e5,
            pair_time_jitter_ns: 0.0,
            k_max: 500.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure_positive(self.ring_radius, "ring_radius")?;
        ensure_positive(self.ring_radial_sigma, "ring_radial_sigma")?;
        ensure_positive(self.sum_sigma_x, "sum_sigma_x")?;
        ensure_positive(self.sum_sigma_y, "sum_sigma_y")?;
        ensure_non_negative(self.pair_rate_hz, "pair_rate_hz")?;
        ensure_non_negative(self.noise_rate_hz, "noise_rate_hz")?;
        ensure_non_negative(self.pair_time_jitter_ns, "pair_time_jitter_ns")?;
        ensure_positive(self.k_max, "k_max")?;
        ensure(
            self.ring_radius > 3.0 * self.ring_radial_sigma,
            "ring_radius",
            "must exceed 3 * ring_radial_sigma",
        )
    }

    /// Radial width of the single-photon intensity ring. Each photon carries
    /// half the sum offset, which broadens the pair-center ring by the
    /// angle-averaged radial variance `(σx² + σy²) / 8`.
    pub fn intensity_ring_width(&self) -> f64 {
        let sum_var = self.sum_sigma_x.powi(2) + self.sum_sigma_y.powi(2);
        (self.ring_radial_sigma.powi(2) + sum_var / 8.0).sqrt()
    }
}

/// Draw one signal/idler pair created at `t` ns.
pub fn sample_pair(
    params: &SourceParams,
    t: f64,
    pair_id: u64,
    rng: &mut RandomStream,
) -> (PhotonEvent, PhotonEvent) {
    let angle = rng.random::<f64>() * TAU;
    let radius = params.ring_radius + params.ring_radial_sigma * standard_normal(rng);
    let center = TransverseMomentum::new(radius * angle.cos(), radius * angle.sin());
    let delta = TransverseMomentum::new(
        params.sum_sigma_x * standard_normal(rng),
        params.sum_sigma_y * standard_normal(rng),
    );
    let half = delta * 0.5;
    let t_idler = if params.pair_time_jitter_ns > 0.0 {
        t + rng.random::<f64>() * params.pair_time_jitter_ns
    } else {
        t
    };
    (
        PhotonEvent {
            t,
            k: center + half,
            origin: Origin::Signal,
            pair_id: Some(pair_id),
        },
        PhotonEvent {
            t: t_idler,
            k: -center + half,
            origin: Origin::Idler,
            pair_id: Some(pair_id),
        },
    )
}

/// Draw a noise photon uniformly over the acceptance disk.
pub fn sample_noise(params: &SourceParams, t: f64, rng: &mut RandomStream) -> PhotonEvent {
    let r = params.k_max * rng.random::<f64>().sqrt();
    let angle = rng.random::<f64>() * TAU;
    PhotonEvent {
        t,
        k: TransverseMomentum::new(r * angle.cos(), r * angle.sin()),
        origin: Origin::Noise,
        pair_id: None,
    }
}

fn standard_normal(rng: &mut RandomStream) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Waiting time to the next event of a Poisson process with rate `rate_hz`,
/// in nanoseconds. Infinite for a zero rate.
pub(crate) fn exp_wait_ns(rate_hz: f64, rng: &mut RandomStream) -> f64 {
    if rate_hz <= 0.0 {
        return f64::INFINITY;
    }
    Exp::new(rate_hz * 1e-9).unwrap().sample(rng)
}

#[derive(Debug, Clone, Copy)]
struct Pending(PhotonEvent, u64);

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.t.total_cmp(&o.0.t).then(self.1.cmp(&o.1))
    }
}

/// Lazily generated, time-ordered photon stream starting at `t = 0`.
///
/// Photons are produced on demand so a frame only pays for the events that
/// occur before its gate closes.
#[derive(Debug, Clone)]
pub struct PhotonStream {
    params: SourceParams,
    next_pair_t: f64,
    next_noise_t: f64,
    next_pair_id: u64,
    seq: u64,
    pending: BinaryHeap<Reverse<Pending>>,
}

impl PhotonStream {
    pub fn new(params: &SourceParams, rng: &mut RandomStream) -> Self {
        let next_pair_t = exp_wait_ns(params.pair_rate_hz, rng);
        let next_noise_t = exp_wait_ns(params.noise_rate_hz, rng);
        Self {
            params: params.clone(),
            next_pair_t,
            next_noise_t,
            next_pair_id: 0,
            seq: 0,
            pending: BinaryHeap::new(),
        }
    }

    /// Pair ids start at `first_pair_id`; useful to keep ids unique per run.
    pub fn with_pair_id_base(mut self, first_pair_id: u64) -> Self {
        self.next_pair_id = first_pair_id;
        self
    }

    fn push(&mut self, ev: PhotonEvent) {
        self.seq += 1;
        self.pending.push(Reverse(Pending(ev, self.seq)));
    }

    /// Time of the next photon, generating as needed. Infinite if both rates
    /// are zero.
    pub fn peek_time(&mut self, rng: &mut RandomStream) -> f64 {
        self.refill(rng);
        self.pending.peek().map_or(f64::INFINITY, |p| p.0 .0.t)
    }

    /// Ensure the head of `pending` is the earliest event overall.
    fn refill(&mut self, rng: &mut RandomStream) {
        loop {
            let head = self.pending.peek().map_or(f64::INFINITY, |p| p.0 .0.t);
            let next_gen = self.next_pair_t.min(self.next_noise_t);
            if !next_gen.is_finite() || head < next_gen {
                return;
            }
            if self.next_pair_t <= self.next_noise_t {
                let t = self.next_pair_t;
                let id = self.next_pair_id;
                self.next_pair_id += 1;
                let (a, b) = sample_pair(&self.params, t, id, rng);
                self.push(a);
                self.push(b);
                self.next_pair_t = t + exp_wait_ns(self.params.pair_rate_hz, rng);
            } else {
                let t = self.next_noise_t;
                let ev = sample_noise(&self.params, t, rng);
                self.push(ev);
                self.next_noise_t = t + exp_wait_ns(self.params.noise_rate_hz, rng);
            }
        }
    }

    pub fn next_event(&mut self, rng: &mut RandomStream) -> Option<PhotonEvent> {
        self.refill(rng);
        self.pending.pop().map(|p| p.0 .0)
    }
}

/// All photons with arrival time in `[0, window_ns)`, sorted by time.
pub fn sample_event_stream(
    params: &SourceParams,
    window_ns: f64,
    rng: &mut RandomStream,
) -> Vec<PhotonEvent> {
    let mut stream = PhotonStream::new(params, rng);
    let mut out = Vec::new();
    while stream.peek_time(rng) < window_ns {
        if let Some(ev) = stream.next_event(rng) {
            out.push(ev);
        }
    }
    out
}
