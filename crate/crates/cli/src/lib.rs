//! Command implementations behind the `hicam` binary.
//!
//! Every command has an in-memory core that returns a report and a `cmd_*`
//! wrapper that reads its inputs and fills an output directory. Report
//! documents are deterministic for a fixed seed; wall-clock data goes to
//! `metadata.json` only.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hicam_core::analysis::{
    frame_photons, gating_stats, fit_peak, fit_ring, mode_count, mode_count_closed_form, AnalysisError,
    CorrelationAccumulator, CorrelationFit, CorrelationHistograms, GatingStats, HistogramAxis, MomentumImage, RingFit,
};
use hicam_core::gating::{run_batch, SimulationError};
use hicam_core::record::{FrameReader, FrameRecord, FrameWriter, FramesHeader, RecordError};
use hicam_core::rng::{aux_stream, TUPLE_STREAM_ID};
use hicam_core::timetag::{
    accuracy_sweep, brightness_map, collect_single_photon_pairs, pearson, write_curves_csv, AccuracyCurve,
    BrightnessMap, BrightnessPair, CollectCounters, TimetagError,
};
use hicam_core::{ConfigError, RunConfig};
use serde::Serialize;
use thiserror::Error;

pub const RESULTS_FORMAT: &str = "hicam-results";
pub const RESULTS_VERSION: &str = "1.0";

/// Record lines that may fail to parse before a frames file is rejected.
pub const MAX_CORRUPT_FRACTION: f64 = 0.01;

/// Bins per axis of the brightness correlation map.
pub const BRIGHTNESS_MAP_BINS: usize = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Analysis(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::NoFrames => CliError::Validation("n_frames: must be >= 1".into()),
            SimulationError::Sink(m) => CliError::Io(m),
            other => CliError::Analysis(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Analysis(e.to_string())
    }
}

impl From<TimetagError> for CliError {
    fn from(e: TimetagError) -> Self {
        match e {
            TimetagError::InsufficientPairs { needed, have } => CliError::Analysis(format!(
                "need {needed} single-photon frames, have {have} (short by {})",
                needed - have
            )),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub frames: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(s) = self.seed {
            config.seed = Some(s);
        }
        if let Some(n) = self.frames {
            config.n_frames = n;
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
}

/// Reads the TOML configuration (defaults when `path` is `None`), applies
/// overrides and validates.
pub fn load_config(path: Option<&Path>, overrides: Overrides) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(p) => parse_config(&fs::read_to_string(p).map_err(io_at(p))?)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------- simulate

/// Streams `config.n_frames` frames as JSON lines into `out`.
pub fn simulate<W: Write>(config: &RunConfig, out: W, workers: usize) -> Result<W, CliError> {
    let mut writer = FrameWriter::new(out, config)?;
    run_batch(config, &config.gating, config.seed(), config.n_frames, workers, |f| {
        writer.write(&f).map_err(|e| e.to_string())
    })?;
    Ok(writer.finish()?)
}

// ---------------------------------------------------------------- reading

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadCounts {
    pub records: u64,
    pub corrupt_lines: u64,
}

/// Feeds every parseable record to `each` in file order. Corrupt lines are
/// skipped and counted; more than [`MAX_CORRUPT_FRACTION`] of them, or a
/// frame id that does not increase, is an error.
pub fn read_frames<R: BufRead>(
    input: R,
    mut each: impl FnMut(&FrameRecord) -> Result<(), CliError>,
) -> Result<(FramesHeader, LoadCounts), CliError> {
    let mut reader = FrameReader::new(input)?;
    let mut counts = LoadCounts::default();
    let mut last_id: Option<u64> = None;
    for item in reader.by_ref() {
        match item {
            Ok(f) => {
                if last_id.is_some_and(|l| f.frame_id <= l) {
                    return Err(CliError::Io(format!("frame id {} out of order", f.frame_id)));
                }
                last_id = Some(f.frame_id);
                counts.records += 1;
                each(&f)?;
            }
            Err(RecordError::Corrupt { .. }) => counts.corrupt_lines += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let lines = counts.records + counts.corrupt_lines;
    if counts.corrupt_lines as f64 > MAX_CORRUPT_FRACTION * lines as f64 {
        return Err(CliError::Io(format!(
            "{} of {lines} record lines are corrupt",
            counts.corrupt_lines
        )));
    }
    Ok((reader.header, counts))
}

pub fn open_frames(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(io_at(path))?))
}

/// The configuration echoed in a frames file header.
pub fn header_config(header: &FramesHeader) -> Result<RunConfig, CliError> {
    serde_json::from_value(header.config.clone())
        .map_err(|e| CliError::Validation(format!("frames header config: {e}")))
}

/// Reads only the header line of a frames file.
pub fn read_header(path: &Path) -> Result<FramesHeader, CliError> {
    Ok(FrameReader::new(open_frames(path)?)?.header)
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCounts {
    pub same_frame: u64,
    pub cross_frame: u64,
    pub excluded_crosstalk: u64,
    pub accidental_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub format: String,
    pub version: String,
    pub frames: u64,
    pub corrupt_lines: u64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub mode_count: f64,
    pub mode_count_closed_form: f64,
    pub pairs: PairCounts,
    pub correlation_fit: CorrelationFit,
    pub ring_fit: RingFit,
    pub photon_counts: GatingStats,
    pub definitions: BTreeMap<&'static str, &'static str>,
    pub config: RunConfig,
}

fn analysis_definitions() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        (
            "sigma_x, sigma_y",
            "widths of an elliptical Gaussian fitted to the accidental-subtracted momentum-sum histogram",
        ),
        ("correlation_area", "sigma_x * sigma_y"),
        (
            "mode_count",
            "2*pi*k_radius * sqrt(2*pi)*radial_width / (sigma_x*sigma_y), ring fitted to the single-photon momentum image",
        ),
        (
            "mode_count_closed_form",
            "same formula from generator parameters, radial width sqrt(ring_radial_sigma^2 + (sum_sigma_x^2 + sum_sigma_y^2)/8)",
        ),
        (
            "accidentals",
            "pairs between consecutive frames, scaled to the same-frame pair count (sideband: pairs with |k1 + k2| above min_sum only)",
        ),
        (
            "crosstalk",
            "same-frame pairs closer than crosstalk_min_sep_px on the camera are excluded; cross-frame pairs use the same cut",
        ),
        ("success_rate", "fraction of frames with 1 or 2 photons"),
    ])
}

fn timetag_definitions() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("accuracy", "fraction of accepted tuples whose photons are all tagged correctly"),
        ("photon_accuracy", "fraction of photons in accepted tuples tagged correctly"),
        (
            "rejection",
            "a tuple is rejected when, on either detector, two adjacent sorted amplitudes differ by less than the threshold times their mean",
        ),
        ("pearson", "correlation of PMT and sCMOS amplitudes over single-photon frames"),
    ])
}

/// Streaming correlation analysis: feed frames in order, then `finish`.
pub struct Analyzer {
    config: RunConfig,
    acc: CorrelationAccumulator,
    image: MomentumImage,
    counts: Vec<usize>,
}

pub struct AnalysisOutput {
    pub histograms: CorrelationHistograms,
    pub image: MomentumImage,
    pub report: Result<AnalysisReport, CliError>,
}

impl Analyzer {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            config: config.clone(),
            acc: CorrelationAccumulator::new(&config.analysis),
            image: MomentumImage::new(config.analysis.ring_geometry),
            counts: Vec::new(),
        }
    }

    pub fn add(&mut self, record: &FrameRecord) {
        let photons = frame_photons(record, &self.config.optics);
        self.acc.add_frame(&photons);
        self.image.add_frame(&photons);
        self.counts.push(record.photon_count());
    }

    pub fn finish(self, corrupt_lines: u64) -> AnalysisOutput {
        let histograms = self.acc.finish();
        let report = Self::report(&self.config, &histograms, &self.image, &self.counts, corrupt_lines);
        AnalysisOutput {
            histograms,
            image: self.image,
            report,
        }
    }

    fn report(
        config: &RunConfig,
        h: &CorrelationHistograms,
        image: &MomentumImage,
        counts: &[usize],
        corrupt_lines: u64,
    ) -> Result<AnalysisReport, CliError> {
        if h.frames == 0 {
            return Err(CliError::Analysis("no frame records".into()));
        }
        let a = &config.analysis;
        let fit = fit_peak(h.subtracted(HistogramAxis::SumPlane), a.peak_significance)?;
        let ring = fit_ring(image, a.ring_profile_max_radius)?;
        Ok(AnalysisReport {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION.into(),
            frames: h.frames,
            corrupt_lines,
            sigma_x: fit.sigma_x,
            sigma_y: fit.sigma_y,
            mode_count: mode_count(&ring, &fit),
            mode_count_closed_form: mode_count_closed_form(&config.source),
            pairs: PairCounts {
                same_frame: h.same_pairs,
                cross_frame: h.cross_pairs,
                excluded_crosstalk: h.excluded_pairs,
                accidental_scale: h.accidental_scale,
            },
            correlation_fit: fit,
            ring_fit: ring,
            photon_counts: gating_stats(&config.gating.label(), counts.iter().copied(), a.gating_histogram_max),
            definitions: analysis_definitions(),
            config: config.clone(),
        })
    }
}

pub fn analyze_records<'a>(records: impl IntoIterator<Item = &'a FrameRecord>, config: &RunConfig) -> AnalysisOutput {
    let mut an = Analyzer::new(config);
    for r in records {
        an.add(r);
    }
    an.finish(0)
}

pub fn write_histograms(dir: &Path, h: &CorrelationHistograms, image: &MomentumImage) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    for axis in HistogramAxis::ALL {
        for (kind, hist) in [
            ("same", h.same(axis)),
            ("accidental", h.accidental(axis)),
            ("subtracted", h.subtracted(axis)),
        ] {
            let path = dir.join(format!("{}_{kind}.csv", axis.name()));
            let mut w = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
            hist.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    let path = dir.join("momentum_image.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
    writeln!(w, "kx_center,ky_center,count")?;
    let g = image.geometry;
    for i in 0..g.bins {
        for j in 0..g.bins {
            writeln!(w, "{},{},{}", g.center(i), g.center(j), image.counts[i * g.bins + j])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- compare-gating

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatingRatio {
    pub reference: String,
    pub label: String,
    /// Reference success rate over this one; `None` when this one is zero.
    pub success_ratio: Option<f64>,
    /// This empty fraction over the reference one.
    pub empty_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub format: String,
    pub version: String,
    pub frames_per_config: u64,
    pub stats: Vec<GatingStats>,
    pub ratios: Vec<GatingRatio>,
    pub config: RunConfig,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Runs every configuration in `config.compare.gating` on the same seed and
/// source; ratios are taken against the first entry.
pub fn compare_gating(config: &RunConfig, workers: usize) -> Result<CompareReport, CliError> {
    let list = &config.compare.gating;
    if list.len() < 2 {
        return Err(CliError::Validation(format!(
            "compare.gating: need at least 2 configurations to compare, have {}",
            list.len()
        )));
    }
    let mut stats = Vec::with_capacity(list.len());
    for g in list {
        let mut counts = Vec::with_capacity(config.n_frames as usize);
        run_batch(config, g, config.seed(), config.n_frames, workers, |f| {
            counts.push(f.photon_count());
            Ok(())
        })?;
        stats.push(gating_stats(&g.label(), counts, config.analysis.gating_histogram_max));
    }
    let r = &stats[0];
    let ratios = stats[1..]
        .iter()
        .map(|s| GatingRatio {
            reference: r.label.clone(),
            label: s.label.clone(),
            success_ratio: ratio(r.success_rate, s.success_rate),
            empty_ratio: ratio(s.empty_fraction, r.empty_fraction),
        })
        .collect();
    Ok(CompareReport {
        format: RESULTS_FORMAT.into(),
        version: RESULTS_VERSION.into(),
        frames_per_config: config.n_frames,
        stats,
        ratios,
        config: config.clone(),
    })
}

pub fn write_gating_csv<W: Write>(stats: &[GatingStats], mut out: W) -> std::io::Result<()> {
    writeln!(out, "label,photons,frames,fraction")?;
    for s in stats {
        let last = s.histogram.len() - 1;
        for (k, &n) in s.histogram.iter().enumerate() {
            let bin = if k == last { format!("{k}+") } else { k.to_string() };
            writeln!(out, "{},{bin},{n},{}", s.label, n as f64 / s.frames.max(1) as f64)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- timetag

/// Accumulates single-photon brightness pairs frame by frame.
#[derive(Debug, Clone, Default)]
pub struct PairCollector {
    pub threshold: f64,
    pub pairs: Vec<BrightnessPair>,
    pub counters: CollectCounters,
}

impl PairCollector {
    pub fn new(pulse_threshold: f64) -> Self {
        Self {
            threshold: pulse_threshold,
            ..Self::default()
        }
    }

    pub fn add(&mut self, record: &FrameRecord) {
        let (p, c) = collect_single_photon_pairs(std::iter::once(record), self.threshold);
        self.pairs.extend(p);
        self.counters.frames += c.frames;
        self.counters.collected += c.collected;
        self.counters.skipped_spot_count += c.skipped_spot_count;
        self.counters.skipped_pulse_count += c.skipped_pulse_count;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimetagReport {
    pub format: String,
    pub version: String,
    pub counters: CollectCounters,
    pub pearson: f64,
    pub m_tuples: usize,
    pub curves: Vec<AccuracyCurve>,
    pub definitions: BTreeMap<&'static str, &'static str>,
    pub config: RunConfig,
}

pub struct TimetagOutput {
    pub report: TimetagReport,
    pub map: BrightnessMap,
}

/// Accuracy curves from collected pairs. At least ten pairs per photon of
/// the largest tuple are required.
pub fn timetag_from_pairs(collector: &PairCollector, config: &RunConfig) -> Result<TimetagOutput, CliError> {
    let t = &config.timetag;
    let max_n = t.n_values.iter().copied().max().unwrap_or(2);
    let needed = 10 * max_n;
    let have = collector.pairs.len();
    if have < needed {
        return Err(TimetagError::InsufficientPairs { needed, have }.into());
    }
    let mut rng = aux_stream(config.seed(), TUPLE_STREAM_ID);
    let curves = accuracy_sweep(&collector.pairs, &t.n_values, &t.thresholds, t.m_tuples, &mut rng)?;
    Ok(TimetagOutput {
        report: TimetagReport {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION.into(),
            counters: collector.counters,
            pearson: pearson(&collector.pairs),
            m_tuples: t.m_tuples,
            curves,
            definitions: timetag_definitions(),
            config: config.clone(),
        },
        map: brightness_map(&collector.pairs, BRIGHTNESS_MAP_BINS),
    })
}

/// Simulates `config.n_frames` frames in memory and tags them.
pub fn timetag_simulated(config: &RunConfig, workers: usize) -> Result<TimetagOutput, CliError> {
    let mut c = PairCollector::new(config.readout.discriminator_threshold);
    run_batch(config, &config.gating, config.seed(), config.n_frames, workers, |f| {
        c.add(&f);
        Ok(())
    })?;
    timetag_from_pairs(&c, config)
}

pub fn write_brightness_csv<W: Write>(map: &BrightnessMap, mut out: W) -> std::io::Result<()> {
    writeln!(out, "pmt_center,cmos_center,count")?;
    let n = map.bins;
    let center = |i: usize, max: f64| (i as f64 + 0.5) * max / n as f64;
    for i in 0..n {
        for j in 0..n {
            writeln!(out, "{},{},{}", center(i, map.pmt_max), center(j, map.cmos_max), map.counts[i * n + j])?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- output directory

/// Paths of everything the commands write under the output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_at(&root))?;
        Ok(Self { root })
    }

    pub fn frames(&self) -> PathBuf {
        self.root.join("frames.jsonl")
    }
    pub fn results(&self) -> PathBuf {
        self.root.join("results.json")
    }
    pub fn histograms(&self) -> PathBuf {
        self.root.join("histograms")
    }
    pub fn gating(&self) -> PathBuf {
        self.root.join("gating.json")
    }
    pub fn gating_csv(&self) -> PathBuf {
        self.root.join("gating_histograms.csv")
    }
    pub fn timetag(&self) -> PathBuf {
        self.root.join("timetag.json")
    }
    pub fn curves_csv(&self) -> PathBuf {
        self.root.join("accuracy_curves.csv")
    }
    pub fn brightness_csv(&self) -> PathBuf {
        self.root.join("brightness_map.csv")
    }
    pub fn metadata(&self) -> PathBuf {
        self.root.join("metadata.json")
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_at(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush().map_err(io_at(path))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_at(path))?);
    f(&mut w).map_err(io_at(path))?;
    w.flush().map_err(io_at(path))
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub workers: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub fn write_metadata(
    layout: &OutputLayout,
    command: &str,
    seed: Option<u64>,
    workers: usize,
    started_unix_ms: u128,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let meta = Metadata {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        workers,
        started_unix_ms,
        finished_unix_ms: now_unix_ms(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(&layout.metadata(), &meta)
}

pub fn cmd_simulate(config: &RunConfig, layout: &OutputLayout, workers: usize) -> Result<Vec<PathBuf>, CliError> {
    let path = layout.frames();
    let file = File::create(&path).map_err(io_at(&path))?;
    let mut w = simulate(config, BufWriter::new(file), workers)?;
    w.flush().map_err(io_at(&path))?;
    Ok(vec![path])
}

/// Analyzes a frames file. `config` replaces the header's configuration
/// echo when given. Histogram CSVs are written even when a fit fails.
pub fn cmd_analyze(input: &Path, config: Option<&RunConfig>, layout: &OutputLayout) -> Result<Vec<PathBuf>, CliError> {
    let config = match config {
        Some(c) => c.clone(),
        None => {
            let c = header_config(&read_header(input)?)?;
            c.validate()?;
            c
        }
    };
    let mut an = Analyzer::new(&config);
    let (_, counts) = read_frames(open_frames(input)?, |f| {
        an.add(f);
        Ok(())
    })?;
    let out = an.finish(counts.corrupt_lines);
    write_histograms(&layout.histograms(), &out.histograms, &out.image)?;
    let report = out.report?;
    write_json(&layout.results(), &report)?;
    Ok(vec![layout.results(), layout.histograms()])
}

pub fn cmd_compare_gating(config: &RunConfig, layout: &OutputLayout, workers: usize) -> Result<Vec<PathBuf>, CliError> {
    let report = compare_gating(config, workers)?;
    write_json(&layout.gating(), &report)?;
    write_with(&layout.gating_csv(), |w| write_gating_csv(&report.stats, w))?;
    Ok(vec![layout.gating(), layout.gating_csv()])
}

/// Tags photons from a frames file when `input` is given, otherwise from a
/// fresh in-memory simulation of `config`.
pub fn cmd_timetag(
    input: Option<&Path>,
    config: Option<&RunConfig>,
    layout: &OutputLayout,
    workers: usize,
) -> Result<Vec<PathBuf>, CliError> {
    let out = match input {
        Some(path) => {
            let config = match config {
                Some(c) => c.clone(),
                None => {
                    let c = header_config(&read_header(path)?)?;
                    c.validate()?;
                    c
                }
            };
            let mut c = PairCollector::new(config.readout.discriminator_threshold);
            read_frames(open_frames(path)?, |f| {
                c.add(f);
                Ok(())
            })?;
            timetag_from_pairs(&c, &config)?
        }
        None => {
            let config = config.ok_or_else(|| CliError::Validation("timetag needs --input or a configuration".into()))?;
            timetag_simulated(config, workers)?
        }
    };
    write_json(&layout.timetag(), &out.report)?;
    write_with(&layout.curves_csv(), |w| write_curves_csv(&out.report.curves, w))?;
    write_with(&layout.brightness_csv(), |w| write_brightness_csv(&out.map, w))?;
    Ok(vec![layout.timetag(), layout.curves_csv(), layout.brightness_csv()])
}

/// simulate, then analyze and timetag the written frames, then compare gating.
pub fn cmd_end_to_end(config: &RunConfig, layout: &OutputLayout, workers: usize) -> Result<Vec<PathBuf>, CliError> {
    let mut outputs = cmd_simulate(config, layout, workers)?;
    let frames = layout.frames();
    outputs.extend(cmd_analyze(&frames, Some(config), layout)?);
    outputs.extend(cmd_timetag(Some(&frames), Some(config), layout, workers)?);
    outputs.extend(cmd_compare_gating(config, layout, workers)?);
    Ok(outputs)
}
