//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::config::PipelineConfig;
use crate::classify_eval::{evaluate, format_predictions, Branch, EnsembleModel, EvalReport, KnnModel};
use crate::dataset_io::{load_manifest, normalize, resample_to_rate, Domain, Label, RecordDescriptor, PROCESSING_FS};
use crate::dsp_preprocess::remove_spikes;
use crate::embednet::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::pipeline::{
    branch_knn, cache_path, fit_emission_from_annotations, load_pool, predict_record, prepare_record, train_branch,
    RecordPrediction,
};
use crate::rng;
use crate::sampler::SamplerConfig;
use crate::segmentation::{
    fit_emission, read_annotations, segmentation_features, write_segment_cache, EmissionModel,
};
use crate::synthgen::{gen_dataset, gen_record, SynthDataset, SynthProfile};

pub const EMISSION_FILE: &str = "emission.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";

pub fn checkpoint_path(output_dir: &Path, d: Domain) -> PathBuf {
    output_dir.join(format!("branch_{d}.checkpoint.json"))
}

pub fn knn_path(output_dir: &Path, d: Domain) -> PathBuf {
    output_dir.join(format!("branch_{d}.knn.json"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates the synthetic dataset into `out_dir`.
pub fn cmd_synth(cfg: &PipelineConfig, out_dir: &Path) -> Result<SynthDataset> {
    let ds = gen_dataset(
        &cfg.synth.resolved_profiles(),
        &cfg.synth.resolved_counts(),
        cfg.synth.duration_s,
        cfg.synth_seed(),
        out_dir,
    )?;
    println!("{}", ds.manifest.display());
    Ok(ds)
}

/// Emission model from synthetic ground truth, for when no annotations exist.
fn fallback_emission(seed: u64, cfg: &PipelineConfig) -> Result<EmissionModel> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for d in Domain::ALL {
        let p = SynthProfile::default_for(d);
        for class in [Label::Normal, Label::Abnormal] {
            let s = gen_record(&p, class, 10.0, rng::keyed(&[seed, d.index() as u64, class.class_index() as u64]))?;
            let mut x = s.record.samples;
            normalize(&mut x);
            let x = resample_to_rate(&x, s.record.fs, PROCESSING_FS)?;
            let x = remove_spikes(&x, PROCESSING_FS, &cfg.processing.spike)?;
            let mut f = segmentation_features(&x, PROCESSING_FS)?;
            let n = f.n_frames.min(s.truth.states.len());
            f.data.truncate(n * f.n_features);
            f.n_frames = n;
            features.push(f);
            labels.push(s.truth.states[..n].to_vec());
        }
    }
    fit_emission(&features, &labels)
}

fn emission_for(cfg: &PipelineConfig, index: &crate::DatasetIndex) -> Result<EmissionModel> {
    let path = cfg.segmentation.annotations.clone().or_else(|| {
        let p = cfg.paths.manifest.parent().unwrap_or(Path::new(".")).join("annotations.csv");
        p.exists().then_some(p)
    });
    match path {
        Some(p) => {
            info!("fitting emission model from {}", p.display());
            let ann = read_annotations(&p)?;
            fit_emission_from_annotations(index, &ann, &cfg.processing.spike)
        }
        None => {
            warn!("no annotations found; fitting the emission model on built-in synthetic records");
            fallback_emission(cfg.emission_seed(), cfg)
        }
    }
}

fn load_emission(cfg: &PipelineConfig) -> Result<EmissionModel> {
    let path = cfg.paths.cache_dir.join(EMISSION_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Segments every manifest record and writes one cycle cache per record.
/// Returns the number of records that failed.
pub fn cmd_prepare(cfg: &PipelineConfig) -> Result<usize> {
    let index = load_manifest(&cfg.paths.manifest)?;
    if index.records.is_empty() {
        return Err(Error::Empty("manifest records"));
    }
    create_dir(&cfg.paths.cache_dir)?;
    let emission = emission_for(cfg, &index)?;
    write(&cfg.paths.cache_dir.join(EMISSION_FILE), &serde_json::to_string_pretty(&emission)?)?;

    let seg = &cfg.segmentation;
    let outcomes: Vec<Result<usize>> = index
        .records
        .par_iter()
        .map(|d| {
            let p = prepare_record(d, &emission, &cfg.processing.spike, &seg.durations, &seg.cycle)?;
            write_segment_cache(&cache_path(&cfg.paths.cache_dir, &d.record_id), &p.segments)?;
            Ok(p.segments.len())
        })
        .collect();
    let mut failed = 0;
    for (d, r) in index.records.iter().zip(&outcomes) {
        match r {
            Ok(n) => info!("{}: {n} cycles", d.record_id),
            Err(e) => {
                warn!("{}: {e}", d.record_id);
                failed += 1;
            }
        }
    }
    if failed == index.records.len() {
        return Err(Error::InvalidInput(format!("all {failed} records failed to prepare")));
    }
    Ok(failed)
}

/// Trains one branch per anchor domain and stores checkpoints, KNN
/// references and the loss traces.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let index = load_manifest(&cfg.paths.manifest)?;
    let pool = load_pool(&index, &cfg.paths.cache_dir)?;
    if pool.is_empty() {
        return Err(Error::Empty("segment pool"));
    }
    let partners = cfg.sampler.partner_domains.clone().unwrap_or_else(|| pool.domains());
    let sampler_seed = cfg.sampler_seed();
    let train_cfg = cfg.train_config();
    let loss_cfg = cfg.loss_config();
    create_dir(&cfg.paths.output_dir)?;

    let outcomes = cfg
        .sampler
        .anchor_domains
        .par_iter()
        .map(|&anchor| {
            let sampler = SamplerConfig {
                anchor_domain: anchor,
                n_blocks: cfg.sampler.n_blocks,
                seed: sampler_seed,
                partner_domains: partners.clone(),
            };
            let out = train_branch(&pool, &sampler, &cfg.training.arch, &loss_cfg, &train_cfg)?;
            let knn = branch_knn(
                &out.params,
                &pool,
                cfg.classifier.per_class,
                cfg.classifier.k,
                cfg.classifier_seed(),
            )?;
            Ok((anchor, out, knn))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trace = String::from("branch,epoch,loss\n");
    for (anchor, out, knn) in &outcomes {
        save_checkpoint(&checkpoint_path(&cfg.paths.output_dir, *anchor), &out.params, &loss_cfg)?;
        knn.save(&knn_path(&cfg.paths.output_dir, *anchor))?;
        for (e, l) in out.loss_trace.iter().enumerate() {
            trace.push_str(&format!("{anchor},{e},{l}\n"));
        }
        info!(
            "branch {anchor}: final loss {}",
            out.loss_trace.last().map_or("n/a".to_string(), |l| format!("{l:.6}"))
        );
    }
    write(&cfg.paths.output_dir.join(LOSS_TRACE_FILE), &trace)
}

pub fn load_ensemble(cfg: &PipelineConfig) -> Result<EnsembleModel> {
    let mut branches = Vec::new();
    for &d in &cfg.sampler.anchor_domains {
        let ck = checkpoint_path(&cfg.paths.output_dir, d);
        let kp = knn_path(&cfg.paths.output_dir, d);
        for p in [&ck, &kp] {
            if !p.exists() {
                return Err(Error::MissingCheckpoint {
                    branch: d,
                    path: p.clone(),
                });
            }
        }
        let (params, _) = load_checkpoint(&ck)?;
        branches.push(Branch {
            domain: d,
            params,
            knn: KnnModel::load(&kp)?,
        });
    }
    EnsembleModel::new(branches, cfg.classifier.threshold)
}

fn predict_descriptor(
    cfg: &PipelineConfig,
    emission: &EmissionModel,
    ens: &EnsembleModel,
    d: &RecordDescriptor,
) -> Result<Option<RecordPrediction>> {
    let seg = &cfg.segmentation;
    let p = prepare_record(d, emission, &cfg.processing.spike, &seg.durations, &seg.cycle)?;
    predict_record(ens, d, &p)
}

/// Scores every record of `manifest`, writes the metrics JSON and the
/// per-record CSV, and prints the summary table.
pub fn cmd_evaluate(cfg: &PipelineConfig, manifest: &Path) -> Result<EvalReport> {
    let ens = load_ensemble(cfg)?;
    let emission = load_emission(cfg)?;
    let index = load_manifest(manifest)?;
    let results: Vec<Result<Option<RecordPrediction>>> = index
        .records
        .par_iter()
        .map(|d| predict_descriptor(cfg, &emission, &ens, d))
        .collect();

    let mut preds = Vec::new();
    for (d, r) in index.records.iter().zip(results) {
        match r {
            Ok(Some(p)) => preds.push(p),
            Ok(None) => warn!("{}: no cycles, not scored", d.record_id),
            Err(e) if matches!(e, Error::NonFinite { .. }) => return Err(e),
            Err(e) => warn!("{}: {e}", d.record_id),
        }
    }
    if preds.is_empty() {
        return Err(Error::Empty("scored records"));
    }
    let labelled: Vec<&RecordPrediction> = preds.iter().filter(|p| p.label != Label::Unknown).collect();
    let report = evaluate(
        &labelled.iter().map(|p| p.prediction).collect::<Vec<_>>(),
        &labelled.iter().map(|p| p.label).collect::<Vec<_>>(),
        &labelled.iter().map(|p| p.domain).collect::<Vec<_>>(),
    )?;

    create_dir(&cfg.paths.output_dir)?;
    write(&cfg.paths.output_dir.join(METRICS_FILE), &report.to_json()?)?;
    let rows = preds
        .iter()
        .map(|p| (p.record_id.as_str(), p.domain, p.label, p.score, p.prediction));
    write(&cfg.paths.output_dir.join(PREDICTIONS_FILE), &format_predictions(rows))?;
    println!("{}", report.table());
    if !report.undefined.is_empty() {
        println!("undefined: {}", report.undefined.join(", "));
    }
    Ok(report)
}

/// Scores one WAV file and prints `record_id score label`.
pub fn cmd_predict(cfg: &PipelineConfig, wav: &Path, domain: Domain) -> Result<(f64, Label)> {
    let ens = load_ensemble(cfg)?;
    let emission = load_emission(cfg)?;
    let record_id = wav
        .file_stem()
        .map_or_else(|| "record".to_string(), |s| s.to_string_lossy().into_owned());
    let d = RecordDescriptor {
        record_id: record_id.clone(),
        path: wav.to_path_buf(),
        domain,
        label: Label::Unknown,
    };
    let p = predict_descriptor(cfg, &emission, &ens, &d)?.ok_or(Error::NoS1Onset { record: record_id.clone() })?;
    println!("{record_id} {:.6} {}", p.score, p.prediction.code());
    Ok((p.score, p.prediction))
}
