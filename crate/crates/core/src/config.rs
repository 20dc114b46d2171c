//! The run configuration: every parameter block plus seed and frame count.

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisParams;
use crate::error::{ensure, ConfigError};
use crate::extraction::ExtractionParams;
use crate::gating::GatingConfig;
use crate::intensifier::{IntensifierParams, OpticsMap};
use crate::readout::ReadoutParams;
use crate::source::SourceParams;
use crate::timetag::TimetagParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub gating: Vec<GatingConfig>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            gating: vec![
                GatingConfig::adaptive(1),
                GatingConfig::fixed(150.0),
                GatingConfig::fixed(500.0),
                GatingConfig::fixed(5000.0),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required: there is no implicit seed.
    pub seed: Option<u64>,
    #[serde(default = "default_frames")]
    pub n_frames: u64,
    /// Store the ground-truth photons in every frame record.
    #[serde(default = "default_true")]
    pub record_truth: bool,
    #[serde(default)]
    pub source: SourceParams,
    #[serde(default)]
    pub intensifier: IntensifierParams,
    #[serde(default)]
    pub optics: OpticsMap,
    #[serde(default)]
    pub readout: ReadoutParams,
    #[serde(default)]
    pub extraction: ExtractionParams,
    #[serde(default)]
    pub gating: GatingConfig,
    #[serde(default)]
    pub analysis: AnalysisParams,
    #[serde(default)]
    pub timetag: TimetagParams,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_frames() -> u64 {
    10_000
}

fn default_true() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            n_frames: default_frames(),
            record_truth: true,
            source: SourceParams::default(),
            intensifier: IntensifierParams::default(),
            optics: OpticsMap::default(),
            readout: ReadoutParams::default(),
            extraction: ExtractionParams::default(),
            gating: GatingConfig::default(),
            analysis: AnalysisParams::default(),
            timetag: TimetagParams::default(),
            compare: CompareConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated configuration has a seed")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.seed.is_some(), "seed", "is required")?;
        ensure(self.n_frames >= 1, "n_frames", "must be >= 1")?;
        self.source.validate().map_err(|e| e.within("source"))?;
        self.intensifier.validate().map_err(|e| e.within("intensifier"))?;
        self.optics
            .validate(&self.intensifier, self.source.k_max)
            .map_err(|e| e.within("optics"))?;
        self.readout.validate().map_err(|e| e.within("readout"))?;
        self.extraction.validate().map_err(|e| e.within("extraction"))?;
        self.gating.validate().map_err(|e| e.within("gating"))?;
        self.analysis.validate().map_err(|e| e.within("analysis"))?;
        self.timetag.validate().map_err(|e| e.within("timetag"))?;
        for (i, g) in self.compare.gating.iter().enumerate() {
            g.validate().map_err(|e| e.within(&format!("compare.gating[{i}]")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_once_seeded() {
        assert_eq!(RunConfig::default().validate().unwrap_err().path, "seed");
        RunConfig::with_seed(1).validate().unwrap();
    }

    #[test]
    fn nested_paths() {
        let mut c = RunConfig::with_seed(1);
        c.source.ring_radial_sigma = -1.0;
        assert_eq!(c.validate().unwrap_err().path, "source.ring_radial_sigma");
        let mut c = RunConfig::with_seed(1);
        c.compare.gating[1] = GatingConfig::fixed(-3.0);
        assert_eq!(c.validate().unwrap_err().path, "compare.gating[1].gate_ns");
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::with_seed(9);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }
}
