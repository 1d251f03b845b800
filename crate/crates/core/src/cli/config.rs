//! The pipeline's JSON configuration and dotted-path overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset_io::{Domain, PROCESSING_FS};
use crate::dsp_preprocess::{SpikeConfig, BAND_EDGES};
use crate::embednet::{ArchConfig, LossConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::segmentation::{CycleConfig, DurationConfig, FEATURE_RATE};
use crate::synthgen::SynthProfile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            manifest: PathBuf::from("data/manifest.csv"),
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub domains: Vec<Domain>,
    /// Records per class per domain unless `cell_counts` names the domain.
    pub n_per_class: usize,
    /// Per-domain `[normal, abnormal]` counts.
    pub cell_counts: BTreeMap<Domain, [usize; 2]>,
    pub duration_s: f64,
    /// Replaces the built-in profile of the same domain.
    pub profiles: Vec<SynthProfile>,
    pub seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            domains: Domain::ALL.to_vec(),
            n_per_class: 20,
            cell_counts: BTreeMap::new(),
            duration_s: 10.0,
            profiles: Vec::new(),
            seed: None,
        }
    }
}

impl SynthConfig {
    pub fn resolved_profiles(&self) -> Vec<SynthProfile> {
        self.domains
            .iter()
            .map(|&d| {
                self.profiles
                    .iter()
                    .find(|p| p.domain == d)
                    .cloned()
                    .unwrap_or_else(|| SynthProfile::default_for(d))
            })
            .collect()
    }

    pub fn resolved_counts(&self) -> BTreeMap<Domain, [usize; 2]> {
        self.domains
            .iter()
            .map(|&d| {
                let c = self.cell_counts.get(&d).copied();
                (d, c.unwrap_or([self.n_per_class; 2]))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessingConfig {
    pub fs: f64,
    pub band_edges: [(f64, f64); 4],
    pub spike: SpikeConfig,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        ProcessingConfig {
            fs: PROCESSING_FS,
            band_edges: BAND_EDGES,
            spike: SpikeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    pub feature_rate: f64,
    pub durations: DurationConfig,
    pub cycle: CycleConfig,
    /// Annotation CSV for fitting the emission model; `annotations.csv` next
    /// to the manifest is used when unset.
    pub annotations: Option<PathBuf>,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            feature_rate: FEATURE_RATE,
            durations: DurationConfig::default(),
            cycle: CycleConfig::default(),
            annotations: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub anchor_domains: Vec<Domain>,
    /// Domains contributing positives and negatives; the domains present in
    /// the training pool when unset.
    pub partner_domains: Option<Vec<Domain>>,
    pub n_blocks: usize,
    pub seed: Option<u64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            anchor_domains: Domain::ALL[..5].to_vec(),
            partner_domains: None,
            n_blocks: 10_000,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub arch: ArchConfig,
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: Option<u64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            arch: ArchConfig::default(),
            alpha: 0.5,
            lr: 1e-4,
            epochs: 30,
            batch: 32,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub k: usize,
    pub per_class: usize,
    pub threshold: f64,
    pub seed: Option<u64>,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            k: 5,
            per_class: 500,
            threshold: 0.5,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed; every unset section seed is derived from it.
    pub seed: u64,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub processing: ProcessingConfig,
    pub segmentation: SegmentationConfig,
    pub sampler: SamplerSection,
    pub training: TrainingSection,
    pub classifier: ClassifierSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `(dotted.key, value)` overrides. Values are parsed as JSON when
    /// possible and taken as strings otherwise.
    pub fn with_overrides(self, overrides: &[(String, String)]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut tree = serde_json::to_value(&self)?;
        for (key, raw) in overrides {
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            let mut node = &mut tree;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
                if i + 1 == parts.len() {
                    obj.insert(part.to_string(), value.clone());
                    break;
                }
                if !obj.contains_key(*part) {
                    return Err(Error::Config(format!("unknown config key `{key}`")));
                }
                node = obj.get_mut(*part).unwrap();
                if node.is_null() {
                    *node = Value::Object(Default::default());
                }
            }
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.processing.fs != PROCESSING_FS {
            return bad("processing.fs must be 1000");
        }
        if self.processing.band_edges != BAND_EDGES {
            return bad("processing.band_edges must be [[25,45],[45,80],[80,200],[200,400]]");
        }
        if !(self.processing.spike.window_s > 0.0 && self.processing.spike.threshold > 0.0) {
            return bad("processing.spike values must be > 0");
        }
        if self.segmentation.feature_rate != FEATURE_RATE {
            return bad("segmentation.feature_rate must be 50");
        }
        if self.segmentation.cycle.cycle_len != self.training.arch.input_len {
            return bad("segmentation.cycle.cycle_len must equal training.arch.input_len");
        }
        if self.sampler.anchor_domains.is_empty() {
            return bad("sampler.anchor_domains must be non-empty");
        }
        if self.training.batch == 0 || !(self.training.lr > 0.0) || !(self.training.alpha >= 0.0) {
            return bad("training.batch, training.lr must be > 0 and training.alpha >= 0");
        }
        if self.classifier.k == 0 || self.classifier.k.is_multiple_of(2) {
            return Err(Error::InvalidK {
                k: self.classifier.k,
                n: self.classifier.per_class * 2,
            });
        }
        if !(0.0..=1.0).contains(&self.classifier.threshold) {
            return bad("classifier.threshold must lie in [0, 1]");
        }
        self.training.arch.validate()
    }

    pub fn synth_seed(&self) -> u64 {
        self.synth.seed.unwrap_or_else(|| derive_seed(self.seed, "synth"))
    }

    pub fn sampler_seed(&self) -> u64 {
        self.sampler.seed.unwrap_or_else(|| derive_seed(self.seed, "sampler"))
    }

    pub fn training_seed(&self) -> u64 {
        self.training.seed.unwrap_or_else(|| derive_seed(self.seed, "training"))
    }

    pub fn classifier_seed(&self) -> u64 {
        self.classifier.seed.unwrap_or_else(|| derive_seed(self.seed, "classifier"))
    }

    pub fn emission_seed(&self) -> u64 {
        derive_seed(self.seed, "emission")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch: self.training.batch,
            lr: self.training.lr,
            seed: self.training_seed(),
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.training.alpha,
        }
    }
}

/// Splits `--a.b value` / `--a.b=value` pairs out of an argument list.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|k| k.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(k) => {
                if let Some((key, value)) = k.split_once('=') {
                    overrides.push((key.to_string(), value.to_string()));
                } else {
                    let value = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("`--{k}` needs a value")))?;
                    overrides.push((k.to_string(), value));
                }
            }
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}
