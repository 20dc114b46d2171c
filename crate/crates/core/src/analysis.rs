//! Correlation analysis of extracted photons: joint momentum histograms,
//! consecutive-frame accidental subtraction, cross-talk exclusion, peak and
//! ring fits, the mode count, and gating statistics.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, ensure_non_negative, ensure_positive, ConfigError};
use crate::intensifier::OpticsMap;
use crate::lm::{levenberg_marquardt, EllipticalGaussian, LmConfig, RadialRing};
use crate::record::FrameRecord;
use crate::source::{SourceParams, TransverseMomentum};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("histogram geometries differ")]
    GeometryMismatch,
    #[error("no significant peak (max {max:.3} vs median |bin| {median:.3})")]
    NoPeak { max: f64, median: f64 },
    #[error("radial profile has no off-center maximum")]
    MonotoneProfile,
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("no data")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramAxis {
    /// `(k1x, k2x)`.
    XvsX,
    /// `(k1y, k2y)`.
    YvsY,
    /// `(k1x + k2x, k1y + k2y)`.
    SumPlane,
    /// `(k1x − k2x, k1y − k2y)`; nearby-pixel artifacts pile up at its center.
    DifferencePlane,
}

impl HistogramAxis {
    pub const ALL: [HistogramAxis; 4] = [Self::XvsX, Self::YvsY, Self::SumPlane, Self::DifferencePlane];

    fn coords(self, a: TransverseMomentum, b: TransverseMomentum) -> (f64, f64) {
        match self {
            Self::XvsX => (a.kx, b.kx),
            Self::YvsY => (a.ky, b.ky),
            Self::SumPlane => (a.kx + b.kx, a.ky + b.ky),
            Self::DifferencePlane => (a.kx - b.kx, a.ky - b.ky),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::XvsX => "x_vs_x",
            Self::YvsY => "y_vs_y",
            Self::SumPlane => "sum_plane",
            Self::DifferencePlane => "difference_plane",
        }
    }
}

/// Square grid of `bins × bins` over `[−half_range, half_range)²`, mm⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramGeometry {
    pub bins: usize,
    pub half_range: f64,
}

impl HistogramGeometry {
    pub fn new(bins: usize, half_range: f64) -> Self {
        Self { bins, half_range }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.bins >= 2, "bins", "must be >= 2")?;
        ensure_positive(self.half_range, "half_range")
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * self.half_range / self.bins as f64
    }

    pub fn index(&self, v: f64) -> Option<usize> {
        let i = ((v + self.half_range) / self.bin_width()).floor();
        (i >= 0.0 && i < self.bins as f64).then_some(i as usize)
    }

    pub fn center(&self, i: usize) -> f64 {
        -self.half_range + (i as f64 + 0.5) * self.bin_width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub axis: HistogramAxis,
    pub geometry: HistogramGeometry,
    /// Row-major, `counts[i * bins + j]` with `i` the first coordinate.
    pub counts: Vec<f64>,
    pub overflow: f64,
    /// Factor applied to this histogram when it is subtracted as a background.
    pub normalization: f64,
}

impl JointHistogram {
    pub fn new(axis: HistogramAxis, geometry: HistogramGeometry) -> Self {
        Self {
            axis,
            geometry,
            counts: vec![0.0; geometry.bins * geometry.bins],
            overflow: 0.0,
            normalization: 1.0,
        }
    }

    pub fn bins(&self) -> usize {
        self.geometry.bins
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.geometry.bins + j]
    }

    pub fn fill(&mut self, u: f64, v: f64) {
        match (self.geometry.index(u), self.geometry.index(v)) {
            (Some(i), Some(j)) => self.counts[i * self.geometry.bins + j] += 1.0,
            _ => self.overflow += 1.0,
        }
    }

    /// Adds both orderings of the pair.
    pub fn fill_pair(&mut self, a: TransverseMomentum, b: TransverseMomentum) {
        let (u, v) = self.axis.coords(a, b);
        self.fill(u, v);
        let (u, v) = self.axis.coords(b, a);
        self.fill(u, v);
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &JointHistogram) -> Result<(), AnalysisError> {
        if self.geometry != other.geometry || self.axis != other.axis {
            return Err(AnalysisError::GeometryMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.overflow += other.overflow;
        Ok(())
    }

    pub fn is_transpose_symmetric(&self) -> bool {
        let n = self.bins();
        (0..n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Long-format CSV: `u_center,v_center,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "u_center,v_center,count")?;
        let n = self.bins();
        for i in 0..n {
            for j in 0..n {
                writeln!(out, "{},{},{}", self.geometry.center(i), self.geometry.center(j), self.get(i, j))?;
            }
        }
        Ok(())
    }
}

/// Bin-wise `same − acc.normalization · acc`.
pub fn subtract(same: &JointHistogram, acc: &JointHistogram) -> Result<JointHistogram, AnalysisError> {
    if same.geometry != acc.geometry || same.axis != acc.axis {
        return Err(AnalysisError::GeometryMismatch);
    }
    let s = acc.normalization;
    Ok(JointHistogram {
        axis: same.axis,
        geometry: same.geometry,
        counts: same.counts.iter().zip(&acc.counts).map(|(a, b)| a - s * b).collect(),
        overflow: same.overflow - s * acc.overflow,
        normalization: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrosstalkPolicy {
    /// Close pairs are excluded; both photons still pair with others.
    ExcludePairs,
    /// Photons with any close neighbour are removed from the frame.
    DropPhotons,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AccidentalNormalization {
    /// Ratio of same-frame to cross-frame pair counts over all pairs.
    PairSampling,
    /// Same ratio restricted to pairs whose momentum sum exceeds
    /// `min_sum` mm⁻¹, where true pairs are absent.
    Sideband { min_sum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisParams {
    /// Same-frame pairs closer than this on the camera are not correlated.
    pub crosstalk_min_sep_px: f64,
    pub crosstalk_policy: CrosstalkPolicy,
    pub joint_geometry: HistogramGeometry,
    pub sum_geometry: HistogramGeometry,
    pub ring_geometry: HistogramGeometry,
    /// Radial profile cut used by the ring fit, mm⁻¹.
    pub ring_profile_max_radius: f64,
    pub accidental_normalization: AccidentalNormalization,
    /// Last bin of the gating photon-count histogram collects `>= this`.
    pub gating_histogram_max: usize,
    /// Peak must exceed this multiple of the median absolute bin.
    pub peak_significance: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            crosstalk_min_sep_px: 100.0,
            crosstalk_policy: CrosstalkPolicy::ExcludePairs,
            joint_geometry: HistogramGeometry::new(128, 680.0),
            sum_geometry: HistogramGeometry::new(64, 200.0),
            ring_geometry: HistogramGeometry::new(256, 550.0),
            ring_profile_max_radius: 480.0,
            accidental_normalization: AccidentalNormalization::Sideband { min_sum: 100.0 },
            gating_histogram_max: 5,
            peak_significance: 5.0,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure_non_negative(self.crosstalk_min_sep_px, "crosstalk_min_sep_px")?;
        self.joint_geometry.validate().map_err(|e| e.within("joint_geometry"))?;
        self.sum_geometry.validate().map_err(|e| e.within("sum_geometry"))?;
        self.ring_geometry.validate().map_err(|e| e.within("ring_geometry"))?;
        ensure_positive(self.ring_profile_max_radius, "ring_profile_max_radius")?;
        if let AccidentalNormalization::Sideband { min_sum } = self.accidental_normalization {
            ensure_non_negative(min_sum, "accidental_normalization.min_sum")?;
        }
        ensure(self.gating_histogram_max >= 2, "gating_histogram_max", "must be >= 2")?;
        ensure_positive(self.peak_significance, "peak_significance")
    }

    pub fn geometry_for(&self, axis: HistogramAxis) -> HistogramGeometry {
        match axis {
            HistogramAxis::XvsX | HistogramAxis::YvsY => self.joint_geometry,
            HistogramAxis::SumPlane | HistogramAxis::DifferencePlane => self.sum_geometry,
        }
    }
}

/// An extracted photon: camera position and the momentum it maps to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedPhoton {
    pub x: f64,
    pub y: f64,
    pub k: TransverseMomentum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePhotons {
    pub frame_id: u64,
    pub photons: Vec<DetectedPhoton>,
}

pub fn frame_photons(record: &FrameRecord, optics: &OpticsMap) -> FramePhotons {
    FramePhotons {
        frame_id: record.frame_id,
        photons: record
            .spots
            .iter()
            .map(|s| DetectedPhoton {
                x: s.x,
                y: s.y,
                k: optics.pixel_to_momentum(s.x, s.y),
            })
            .collect(),
    }
}

fn too_close(a: &DetectedPhoton, b: &DetectedPhoton, min_sep: f64) -> bool {
    (a.x - b.x).hypot(a.y - b.y) < min_sep
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilteredPairs {
    /// Photons surviving the policy (all of them for `ExcludePairs`).
    pub photons: Vec<DetectedPhoton>,
    /// Index pairs into `photons`, `i < j`.
    pub pairs: Vec<(usize, usize)>,
    /// Same-frame pairs removed by the filter.
    pub excluded: usize,
}

pub fn crosstalk_filter(photons: &[DetectedPhoton], min_sep_px: f64, policy: CrosstalkPolicy) -> FilteredPairs {
    let n = photons.len();
    let total = n * n.saturating_sub(1) / 2;
    let kept: Vec<DetectedPhoton> = match policy {
        CrosstalkPolicy::ExcludePairs => photons.to_vec(),
        CrosstalkPolicy::DropPhotons => (0..n)
            .filter(|&i| (0..n).all(|j| j == i || !too_close(&photons[i], &photons[j], min_sep_px)))
            .map(|i| photons[i])
            .collect(),
    };
    let mut pairs = Vec::new();
    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            if !too_close(&kept[i], &kept[j], min_sep_px) {
                pairs.push((i, j));
            }
        }
    }
    FilteredPairs {
        excluded: total - pairs.len(),
        photons: kept,
        pairs,
    }
}

/// Streaming accumulation of same-frame and consecutive-frame histograms for
/// every axis. Frames must arrive in frame order; cross-frame pairs are
/// formed only between frames whose ids differ by one.
#[derive(Debug, Clone)]
pub struct CorrelationAccumulator {
    params: AnalysisParams,
    pub same: Vec<JointHistogram>,
    pub accidental: Vec<JointHistogram>,
    pub same_pairs: u64,
    pub cross_pairs: u64,
    pub excluded_pairs: u64,
    pub same_sideband: u64,
    pub cross_sideband: u64,
    pub frames: u64,
    prev: Option<(u64, Vec<DetectedPhoton>)>,
}

impl CorrelationAccumulator {
    pub fn new(params: &AnalysisParams) -> Self {
        let hists = || {
            HistogramAxis::ALL
                .iter()
                .map(|&a| JointHistogram::new(a, params.geometry_for(a)))
                .collect()
        };
        Self {
            params: params.clone(),
            same: hists(),
            accidental: hists(),
            same_pairs: 0,
            cross_pairs: 0,
            excluded_pairs: 0,
            same_sideband: 0,
            cross_sideband: 0,
            frames: 0,
            prev: None,
        }
    }

    fn in_sideband(&self, a: TransverseMomentum, b: TransverseMomentum) -> bool {
        match self.params.accidental_normalization {
            AccidentalNormalization::Sideband { min_sum } => (a + b).norm() > min_sum,
            AccidentalNormalization::PairSampling => true,
        }
    }

    pub fn add_frame(&mut self, frame: &FramePhotons) {
        self.frames += 1;
        let min_sep = self.params.crosstalk_min_sep_px;
        let f = crosstalk_filter(&frame.photons, min_sep, self.params.crosstalk_policy);
        self.excluded_pairs += f.excluded as u64;
        for &(i, j) in &f.pairs {
            let (a, b) = (f.photons[i].k, f.photons[j].k);
            for h in &mut self.same {
                h.fill_pair(a, b);
            }
            self.same_pairs += 1;
            self.same_sideband += self.in_sideband(a, b) as u64;
        }
        if let Some((prev_id, prev)) = self.prev.take() {
            if prev_id + 1 == frame.frame_id {
                for p in &prev {
                    for q in &f.photons {
                        if too_close(p, q, min_sep) {
                            continue;
                        }
                        for h in &mut self.accidental {
                            h.fill_pair(p.k, q.k);
                        }
                        self.cross_pairs += 1;
                        self.cross_sideband += self.in_sideband(p.k, q.k) as u64;
                    }
                }
            }
        }
        self.prev = Some((frame.frame_id, f.photons));
    }

    /// Scale that brings the cross-frame histograms to the same-frame
    /// sampling effort.
    pub fn accidental_scale(&self) -> f64 {
        let (num, den) = match self.params.accidental_normalization {
            AccidentalNormalization::PairSampling => (self.same_pairs, self.cross_pairs),
            AccidentalNormalization::Sideband { .. } => (self.same_sideband, self.cross_sideband),
        };
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn finish(mut self) -> CorrelationHistograms {
        let scale = self.accidental_scale();
        for h in &mut self.accidental {
            h.normalization = scale;
        }
        let subtracted = self
            .same
            .iter()
            .zip(&self.accidental)
            .map(|(s, a)| subtract(s, a).expect("same geometry"))
            .collect();
        CorrelationHistograms {
            same: self.same,
            accidental: self.accidental,
            subtracted,
            same_pairs: self.same_pairs,
            cross_pairs: self.cross_pairs,
            excluded_pairs: self.excluded_pairs,
            accidental_scale: scale,
            frames: self.frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistograms {
    pub same: Vec<JointHistogram>,
    pub accidental: Vec<JointHistogram>,
    pub subtracted: Vec<JointHistogram>,
    pub same_pairs: u64,
    pub cross_pairs: u64,
    pub excluded_pairs: u64,
    pub accidental_scale: f64,
    pub frames: u64,
}

impl CorrelationHistograms {
    fn pick(list: &[JointHistogram], axis: HistogramAxis) -> &JointHistogram {
        list.iter().find(|h| h.axis == axis).expect("all axes accumulated")
    }

    pub fn same(&self, axis: HistogramAxis) -> &JointHistogram {
        Self::pick(&self.same, axis)
    }

    pub fn accidental(&self, axis: HistogramAxis) -> &JointHistogram {
        Self::pick(&self.accidental, axis)
    }

    pub fn subtracted(&self, axis: HistogramAxis) -> &JointHistogram {
        Self::pick(&self.subtracted, axis)
    }
}

pub fn correlate<'a>(frames: impl IntoIterator<Item = &'a FramePhotons>, params: &AnalysisParams) -> CorrelationHistograms {
    let mut acc = CorrelationAccumulator::new(params);
    for f in frames {
        acc.add_frame(f);
    }
    acc.finish()
}

fn with_geometry(params: &AnalysisParams, axis: HistogramAxis, geometry: HistogramGeometry) -> AnalysisParams {
    let mut p = params.clone();
    match axis {
        HistogramAxis::XvsX | HistogramAxis::YvsY => p.joint_geometry = geometry,
        HistogramAxis::SumPlane | HistogramAxis::DifferencePlane => p.sum_geometry = geometry,
    }
    p
}

/// Same-frame histogram of one axis.
pub fn accumulate_joint(
    frames: &[FramePhotons],
    axis: HistogramAxis,
    geometry: HistogramGeometry,
    params: &AnalysisParams,
) -> JointHistogram {
    correlate(frames, &with_geometry(params, axis, geometry)).same(axis).clone()
}

/// Consecutive-frame histogram of one axis; its `normalization` holds the
/// accidental scale.
pub fn accumulate_accidentals(
    frames: &[FramePhotons],
    axis: HistogramAxis,
    geometry: HistogramGeometry,
    params: &AnalysisParams,
) -> JointHistogram {
    correlate(frames, &with_geometry(params, axis, geometry))
        .accidental(axis)
        .clone()
}

/// Accidental-subtracted momentum-sum histogram.
pub fn sum_projection(frames: &[FramePhotons], geometry: HistogramGeometry, params: &AnalysisParams) -> JointHistogram {
    correlate(frames, &with_geometry(params, HistogramAxis::SumPlane, geometry))
        .subtracted(HistogramAxis::SumPlane)
        .clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    pub center: TransverseMomentum,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub peak_amplitude: f64,
    pub offset: f64,
    pub fit_residual: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Elliptical Gaussian least-squares fit to a 2D histogram peak.
pub fn fit_peak(h: &JointHistogram, significance: f64) -> Result<CorrelationFit, AnalysisError> {
    let n = h.bins();
    let g = h.geometry;
    let (imax, &max) = h
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(AnalysisError::Empty)?;
    let med = median(h.counts.iter().map(|c| c.abs()).collect());
    if !(max > 0.0 && max > significance * med) {
        return Err(AnalysisError::NoPeak { max, median: med });
    }
    let (pi, pj) = (imax / n, imax % n);
    // Moment estimate of the widths from bins above half maximum.
    let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let c = h.get(i, j);
            if c > 0.5 * max {
                let dx = g.center(i) - g.center(pi);
                let dy = g.center(j) - g.center(pj);
                w += c;
                sx += c * dx * dx;
                sy += c * dy * dy;
            }
        }
    }
    let floor = g.bin_width() * 0.5;
    let sx0 = (sx / w).sqrt().max(floor) * 1.5;
    let sy0 = (sy / w).sqrt().max(floor) * 1.5;

    let mut xs = Vec::with_capacity(n * n);
    let mut ys = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            xs.push([g.center(i), g.center(j)]);
            ys.push(h.get(i, j));
        }
    }
    let init = [max, g.center(pi), g.center(pj), sx0, sy0, 0.0];
    let cfg = LmConfig {
        max_iterations: 200,
        ..LmConfig::default()
    };
    let out = levenberg_marquardt(&EllipticalGaussian, &xs, &ys, init, &cfg)
        .map_err(|e| AnalysisError::FitFailed(e.to_string()))?;
    let [a, x0, y0, sxf, syf, c] = out.params;
    if !(a > 0.0 && sxf > 0.0 && syf > 0.0) || out.params.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::FitFailed(format!("degenerate parameters {:?}", out.params)));
    }
    Ok(CorrelationFit {
        center: TransverseMomentum::new(x0, y0),
        sigma_x: sxf,
        sigma_y: syf,
        peak_amplitude: a,
        offset: c,
        fit_residual: out.residual_norm(),
    })
}

/// Single-photon momentum image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumImage {
    pub geometry: HistogramGeometry,
    /// Row-major, `counts[ix * bins + iy]`.
    pub counts: Vec<f64>,
    pub overflow: f64,
}

impl MomentumImage {
    pub fn new(geometry: HistogramGeometry) -> Self {
        Self {
            geometry,
            counts: vec![0.0; geometry.bins * geometry.bins],
            overflow: 0.0,
        }
    }

    pub fn fill(&mut self, k: TransverseMomentum) {
        match (self.geometry.index(k.kx), self.geometry.index(k.ky)) {
            (Some(i), Some(j)) => self.counts[i * self.geometry.bins + j] += 1.0,
            _ => self.overflow += 1.0,
        }
    }

    pub fn add_frame(&mut self, frame: &FramePhotons) {
        for p in &frame.photons {
            self.fill(p.k);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingFit {
    pub k_radius: f64,
    pub radial_width: f64,
    pub center: TransverseMomentum,
    pub amplitude: f64,
    /// Slope of the uniform-background term of the shell-count profile.
    pub background_slope: f64,
}

/// Radial profile about the intensity centroid, then a Gaussian-in-radius fit
/// of shell counts with a linear term for an areally uniform background.
pub fn fit_ring(image: &MomentumImage, max_radius: f64) -> Result<RingFit, AnalysisError> {
    let g = image.geometry;
    let n = g.bins;
    let total: f64 = image.counts.iter().filter(|c| **c > 0.0).sum();
    if total <= 0.0 {
        return Err(AnalysisError::Empty);
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let c = image.counts[i * n + j].max(0.0);
            cx += c * g.center(i);
            cy += c * g.center(j);
        }
    }
    cx /= total;
    cy /= total;

    let dr = g.bin_width();
    let shells = (max_radius / dr).floor() as usize;
    if shells < 4 {
        return Err(AnalysisError::MonotoneProfile);
    }
    let mut counts = vec![0.0; shells];
    let mut cells = vec![0usize; shells];
    for i in 0..n {
        for j in 0..n {
            let r = (g.center(i) - cx).hypot(g.center(j) - cy);
            let s = (r / dr).floor() as usize;
            if s < shells {
                counts[s] += image.counts[i * n + j];
                cells[s] += 1;
            }
        }
    }
    let density = |s: usize| if cells[s] > 0 { counts[s] / cells[s] as f64 } else { 0.0 };
    let peak = (0..shells)
        .filter(|&s| cells[s] > 0)
        .max_by(|&a, &b| density(a).total_cmp(&density(b)))
        .ok_or(AnalysisError::Empty)?;
    let inner_end = peak / 4;
    let (ic, icells) = (0..inner_end).fold((0.0, 0usize), |(c, k), s| (c + counts[s], k + cells[s]));
    if peak < 4 || icells == 0 || density(peak) <= 1.5 * ic / icells as f64 {
        return Err(AnalysisError::MonotoneProfile);
    }

    let xs: Vec<[f64; 2]> = (0..shells).map(|s| [(s as f64 + 0.5) * dr, 0.0]).collect();
    let r_peak = xs[peak][0];
    let init = [counts[peak], r_peak, (r_peak / 10.0).max(2.0 * dr), 0.0];
    let cfg = LmConfig {
        max_iterations: 200,
        ..LmConfig::default()
    };
    let out = levenberg_marquardt(&RadialRing, &xs, &counts, init, &cfg)
        .map_err(|e| AnalysisError::FitFailed(e.to_string()))?;
    let [a, r0, w, b] = out.params;
    let w = w.abs();
    if !(a > 0.0 && r0 > w && w > 0.0) {
        return Err(AnalysisError::FitFailed(format!("degenerate ring {:?}", out.params)));
    }
    Ok(RingFit {
        k_radius: r0,
        radial_width: w,
        center: TransverseMomentum::new(cx, cy),
        amplitude: a,
        background_slope: b,
    })
}

/// Ring area `2π·k_r·√(2π)·w` over the correlation area `σx·σy`.
pub fn mode_count(ring: &RingFit, fit: &CorrelationFit) -> f64 {
    TAU * ring.k_radius * (TAU.sqrt() * ring.radial_width) / (fit.sigma_x * fit.sigma_y)
}

/// The same count computed directly from generator parameters.
pub fn mode_count_closed_form(source: &SourceParams) -> f64 {
    TAU * source.ring_radius * (2.0 * PI).sqrt() * source.intensity_ring_width()
        / (source.sum_sigma_x * source.sum_sigma_y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingStats {
    pub label: String,
    pub frames: u64,
    /// Frames with 0, 1, … photons; the last entry collects everything above.
    pub histogram: Vec<u64>,
    pub success_rate: f64,
    pub empty_fraction: f64,
}

pub fn gating_stats(label: &str, photon_counts: impl IntoIterator<Item = usize>, max_bin: usize) -> GatingStats {
    let mut histogram = vec![0u64; max_bin + 1];
    for c in photon_counts {
        histogram[c.min(max_bin)] += 1;
    }
    let frames: u64 = histogram.iter().sum();
    let frac = |k: u64| if frames == 0 { 0.0 } else { k as f64 / frames as f64 };
    GatingStats {
        label: label.to_string(),
        frames,
        success_rate: frac(histogram[1] + histogram[2]),
        empty_fraction: frac(histogram[0]),
        histogram,
    }
}
