//! Image-intensifier model: photocathode thinning, momentum-to-channel
//! mapping, phosphor flash brightness and MCP cross-talk.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_non_negative, ensure_positive, ensure_probability, ConfigError};
use crate::rng::RandomStream;
use crate::source::{Origin, PhotonEvent, TransverseMomentum};

/// Distribution of phosphor flash brightness, arbitrary units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BrightnessModel {
    Gamma { shape: f64, scale: f64 },
    /// Flat brightness, as obtained by sweeping the intensifier voltage.
    Uniform { low: f64, high: f64 },
}

impl BrightnessModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            Self::Gamma { shape, scale } => {
                ensure_positive(shape, "shape")?;
                ensure_positive(scale, "scale")
            }
            Self::Uniform { low, high } => {
                ensure_positive(low, "low")?;
                ensure(high.is_finite() && high > low, "high", "must exceed low")
            }
        }
    }

    pub fn sample(&self, rng: &mut RandomStream) -> f64 {
        match *self {
            Self::Gamma { shape, scale } => {
                // A Gamma draw can underflow to exactly zero for small shapes.
                Gamma::new(shape, scale).unwrap().sample(rng).max(f64::MIN_POSITIVE)
            }
            Self::Uniform { low, high } => rng.random_range(low..high),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Gamma { shape, scale } => shape * scale,
            Self::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gamma { shape, scale } => shape * scale * scale,
            Self::Uniform { low, high } => (high - low).powi(2) / 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensifierParams {
    pub qe: f64,
    pub channels_x: u32,
    pub channels_y: u32,
    pub brightness: BrightnessModel,
    pub crosstalk_prob: f64,
    pub crosstalk_radius_px: f64,
    pub crosstalk_brightness_factor: f64,
    /// Shape of the unit-mean Gamma factor applied to secondary brightness.
    pub crosstalk_brightness_noise_shape: f64,
    pub phosphor_delay_ns: f64,
}

impl Default for IntensifierParams {
    fn default() -> Self {
        Self {
            qe: 0.20,
            channels_x: 3000,
            channels_y: 3000,
            brightness: BrightnessModel::Gamma {
                shape: 1.3,
                scale: 1.0,
            },
            crosstalk_prob: 0.05,
            crosstalk_radius_px: 50.0,
            crosstalk_brightness_factor: 0.5,
            crosstalk_brightness_noise_shape: 4.0,
            phosphor_delay_ns: 0.0,
        }
    }
}

impl IntensifierParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure_probability(self.qe, "qe")?;
        ensure(self.channels_x > 0, "channels_x", "must be > 0")?;
        ensure(self.channels_y > 0, "channels_y", "must be > 0")?;
        self.brightness.validate().map_err(|e| e.within("brightness"))?;
        ensure_probability(self.crosstalk_prob, "crosstalk_prob")?;
        ensure_positive(self.crosstalk_radius_px, "crosstalk_radius_px")?;
        ensure(
            self.crosstalk_brightness_factor > 0.0 && self.crosstalk_brightness_factor <= 1.0,
            "crosstalk_brightness_factor",
            "must lie in (0, 1]",
        )?;
        ensure_positive(
            self.crosstalk_brightness_noise_shape,
            "crosstalk_brightness_noise_shape",
        )?;
        ensure_non_negative(self.phosphor_delay_ns, "phosphor_delay_ns")
    }
}

/// Affine map between transverse momentum and photocathode pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsMap {
    /// Pixels per mm⁻¹.
    pub k_to_pixel_scale: f64,
    pub center_px: [f64; 2],
}

impl Default for OpticsMap {
    fn default() -> Self {
        Self {
            k_to_pixel_scale: 2.8,
            center_px: [1500.0, 1500.0],
        }
    }
}

impl OpticsMap {
    pub fn validate(&self, intensifier: &IntensifierParams, k_max: f64) -> Result<(), ConfigError> {
        ensure_positive(self.k_to_pixel_scale, "k_to_pixel_scale")?;
        let [cx, cy] = self.center_px;
        let r = k_max * self.k_to_pixel_scale;
        let fits = cx - r >= -0.5
            && cy - r >= -0.5
            && cx + r < intensifier.channels_x as f64 - 0.5
            && cy + r < intensifier.channels_y as f64 - 0.5;
        ensure(fits, "center_px", "acceptance disk must map inside the channel grid")
    }

    pub fn momentum_to_pixel(&self, k: TransverseMomentum) -> (f64, f64) {
        (
            self.center_px[0] + self.k_to_pixel_scale * k.kx,
            self.center_px[1] + self.k_to_pixel_scale * k.ky,
        )
    }

    pub fn pixel_to_momentum(&self, x: f64, y: f64) -> TransverseMomentum {
        TransverseMomentum::new(
            (x - self.center_px[0]) / self.k_to_pixel_scale,
            (y - self.center_px[1]) / self.k_to_pixel_scale,
        )
    }
}

/// A phosphor-screen burst.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlashEvent {
    /// Center of the firing MCP channel.
    pub x: f64,
    pub y: f64,
    /// Unquantized photoelectron position.
    pub true_x: f64,
    pub true_y: f64,
    pub brightness: f64,
    pub t: f64,
    pub is_crosstalk: bool,
    pub parent_pair_id: Option<u64>,
    pub origin: Option<Origin>,
}

/// Result of presenting one photon to the photocathode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Detection {
    Flash(FlashEvent),
    /// Photon was not converted (quantum-efficiency loss).
    Missed,
    /// Photon maps outside the channel grid.
    OffGrid,
}

/// Nearest channel index along one axis, if on the grid.
fn channel_of(pos: f64, channels: u32) -> Option<f64> {
    let c = pos.round();
    (c >= 0.0 && c < channels as f64).then_some(c)
}

pub fn detect(
    photon: &PhotonEvent,
    params: &IntensifierParams,
    optics: &OpticsMap,
    rng: &mut RandomStream,
) -> Detection {
    let (px, py) = optics.momentum_to_pixel(photon.k);
    let (Some(cx), Some(cy)) = (channel_of(px, params.channels_x), channel_of(py, params.channels_y)) else {
        return Detection::OffGrid;
    };
    if rng.random::<f64>() >= params.qe {
        return Detection::Missed;
    }
    Detection::Flash(FlashEvent {
        x: cx,
        y: cy,
        true_x: px,
        true_y: py,
        brightness: params.brightness.sample(rng),
        t: photon.t + params.phosphor_delay_ns,
        is_crosstalk: false,
        parent_pair_id: photon.pair_id,
        origin: Some(photon.origin),
    })
}

/// Returns the primary flash followed by at most one cross-talk secondary.
/// Secondaries never spawn further secondaries.
pub fn apply_crosstalk(
    flash: FlashEvent,
    params: &IntensifierParams,
    rng: &mut RandomStream,
) -> Vec<FlashEvent> {
    debug_assert!(!flash.is_crosstalk);
    let mut out = vec![flash];
    if params.crosstalk_prob <= 0.0 || rng.random::<f64>() >= params.crosstalk_prob {
        return out;
    }
    // 1 - u lies in (0, 1], so the distance is never zero.
    let dist = params.crosstalk_radius_px * (1.0 - rng.random::<f64>());
    let angle = rng.random::<f64>() * TAU;
    let sx = flash.x + dist * angle.cos();
    let sy = flash.y + dist * angle.sin();
    let shape = params.crosstalk_brightness_noise_shape;
    let noise = Gamma::new(shape, 1.0 / shape).unwrap().sample(rng);
    if let (Some(cx), Some(cy)) = (channel_of(sx, params.channels_x), channel_of(sy, params.channels_y)) {
        out.push(FlashEvent {
            x: cx,
            y: cy,
            true_x: sx,
            true_y: sy,
            brightness: (flash.brightness * params.crosstalk_brightness_factor * noise)
                .max(f64::MIN_POSITIVE),
            is_crosstalk: true,
            ..flash
        });
    }
    out
}
