//! Record-level steps shared by the commands: cleaning, segmentation, cycle
//! caching, branch training and ensemble scoring.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::classify_eval::{ensemble_predict, knn_fit, EnsembleModel, KnnModel};
use crate::dataset_io::{load_record, DatasetIndex, Domain, Label, PcgRecord, RecordDescriptor};
use crate::dsp_preprocess::{decompose, remove_spikes, SpikeConfig};
use crate::embednet::{forward, train, ArchConfig, EmbeddingNetParams, LossConfig, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::{balanced_subset, build_training_set, SamplerConfig, SegmentPool};
use crate::segmentation::{
    extract_cycles, fit_emission, read_segment_cache, segment_signal, segmentation_features, CycleConfig,
    CycleSegment, DurationConfig, EmissionModel, HeartState, StateSequence,
};

/// Loads a record and removes spikes.
pub fn clean_record(desc: &RecordDescriptor, spike: &SpikeConfig) -> Result<PcgRecord> {
    let mut rec = load_record(desc)?;
    rec.samples = remove_spikes(&rec.samples, rec.fs, spike)?;
    Ok(rec)
}

/// Fits the emission model on every manifest record that has annotations.
pub fn fit_emission_from_annotations(
    index: &DatasetIndex,
    annotations: &BTreeMap<String, Vec<HeartState>>,
    spike: &SpikeConfig,
) -> Result<EmissionModel> {
    let annotated: Vec<&RecordDescriptor> = index
        .records
        .iter()
        .filter(|d| annotations.contains_key(&d.record_id))
        .collect();
    if annotated.is_empty() {
        return Err(Error::Empty("annotated records in the manifest"));
    }
    let pairs = annotated
        .par_iter()
        .map(|d| {
            let rec = clean_record(d, spike)?;
            let mut f = segmentation_features(&rec.samples, rec.fs)?;
            let mut states = annotations[&d.record_id].clone();
            let n = f.n_frames.min(states.len());
            f.data.truncate(n * f.n_features);
            f.n_frames = n;
            states.truncate(n);
            Ok((f, states))
        })
        .collect::<Result<Vec<_>>>()?;
    let (features, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    fit_emission(&features, &labels)
}

#[derive(Clone, Debug)]
pub struct PreparedRecord {
    pub segments: Vec<CycleSegment>,
    pub states: StateSequence,
}

/// Clean, decompose, segment and cut one record. A record without an S1 onset
/// yields zero segments and a warning.
pub fn prepare_record(
    desc: &RecordDescriptor,
    emission: &EmissionModel,
    spike: &SpikeConfig,
    durations: &DurationConfig,
    cycle: &CycleConfig,
) -> Result<PreparedRecord> {
    let rec = clean_record(desc, spike)?;
    let stack = decompose(&rec.samples, rec.fs)?;
    let (states, hr) = segment_signal(&rec.samples, rec.fs, emission, durations)?;
    if hr.low_confidence {
        warn!("{}: low-confidence heart-rate estimate", desc.record_id);
    }
    let segments = match extract_cycles(&stack, &states, &desc.record_id, desc.domain, desc.label, cycle) {
        Ok(s) => s,
        Err(e @ Error::NoS1Onset { .. }) => {
            warn!("{e}");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    Ok(PreparedRecord { segments, states })
}

pub fn cache_path(cache_dir: &Path, record_id: &str) -> PathBuf {
    cache_dir.join(format!("{record_id}.hssg"))
}

/// Reads every record's segment cache into one pool, in manifest order.
pub fn load_pool(index: &DatasetIndex, cache_dir: &Path) -> Result<SegmentPool> {
    let mut segments = Vec::new();
    for d in &index.records {
        if d.label == Label::Unknown {
            continue;
        }
        for (data, start) in read_segment_cache(&cache_path(cache_dir, &d.record_id))? {
            segments.push(CycleSegment {
                data,
                record_id: d.record_id.clone(),
                domain: d.domain,
                label: d.label,
                cycle_start_index: start,
            });
        }
    }
    Ok(SegmentPool::new(segments))
}

/// Seed for the branch anchored at `domain`.
pub fn branch_seed(seed: u64, domain: Domain) -> u64 {
    rng::keyed(&[seed, domain.index() as u64])
}

/// Builds the triplet set for one anchor domain and trains its network.
pub fn train_branch(
    pool: &SegmentPool,
    sampler: &SamplerConfig,
    arch: &ArchConfig,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let triplets = build_training_set(pool, sampler)?;
    info!(
        "branch {}: {} triplets, {} epochs",
        sampler.anchor_domain,
        triplets.len(),
        cfg.epochs
    );
    let inputs: Vec<&[f32]> = pool.segments.iter().map(|s| s.data.as_slice()).collect();
    let cfg = TrainConfig {
        seed: branch_seed(cfg.seed, sampler.anchor_domain),
        ..cfg.clone()
    };
    train(&triplets, &inputs, arch, loss, &cfg)
}

/// KNN references for one branch: a class-balanced draw embedded by its network.
pub fn branch_knn(
    params: &EmbeddingNetParams<f32>,
    pool: &SegmentPool,
    per_class: usize,
    k: usize,
    seed: u64,
) -> Result<KnnModel> {
    let subset = balanced_subset(pool, per_class, seed)?;
    let embeddings = subset
        .par_iter()
        .map(|&i| forward(params, &pool.segments[i].data))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = subset.iter().map(|&i| pool.segments[i].label).collect();
    knn_fit(&embeddings, &labels, k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordPrediction {
    pub record_id: String,
    pub domain: Domain,
    pub label: Label,
    pub score: f64,
    pub prediction: Label,
}

/// Scores one prepared record; `None` when it produced no cycles.
pub fn predict_record(
    ens: &EnsembleModel,
    desc: &RecordDescriptor,
    prepared: &PreparedRecord,
) -> Result<Option<RecordPrediction>> {
    if prepared.segments.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&CycleSegment> = prepared.segments.iter().collect();
    let (prediction, score) = ensemble_predict(ens, &refs)?;
    Ok(Some(RecordPrediction {
        record_id: desc.record_id.clone(),
        domain: desc.domain,
        label: desc.label,
        score,
        prediction,
    }))
}
