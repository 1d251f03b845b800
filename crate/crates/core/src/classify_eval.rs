//! Per-branch KNN scoring, the branch ensemble, and challenge-style metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset_io::{Domain, Label};
use crate::embednet::{forward, EmbeddingNetParams};
use crate::error::{Error, Result};
use crate::segmentation::CycleSegment;

/// Exact brute-force KNN over stored reference embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub dim: usize,
    /// Row-major `n × dim`.
    pub references: Vec<f32>,
    pub labels: Vec<Label>,
}

pub fn knn_fit(embeddings: &[Vec<f32>], labels: &[Label], k: usize) -> Result<KnnModel> {
    if embeddings.is_empty() {
        return Err(Error::Empty("KNN reference set"));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if k.is_multiple_of(2) || k == 0 || k > embeddings.len() {
        return Err(Error::InvalidK {
            k,
            n: embeddings.len(),
        });
    }
    if labels.contains(&Label::Unknown) {
        return Err(Error::InvalidInput("KNN references must be labeled".into()));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::ShapeMismatch {
            expected: format!("{dim}-d references"),
            got: "ragged references".into(),
        });
    }
    Ok(KnnModel {
        k,
        dim,
        references: embeddings.iter().flatten().copied().collect(),
        labels: labels.to_vec(),
    })
}

impl KnnModel {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<KnnModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: KnnModel = serde_json::from_str(&text)?;
        if m.references.len() != m.labels.len() * m.dim || m.k.is_multiple_of(2) || m.k > m.labels.len() {
            return Err(Error::Config(format!("{}: inconsistent KNN store", path.display())));
        }
        Ok(m)
    }
}

/// Fraction of Abnormal among the `k` nearest references (Euclidean);
/// equal distances rank the lower reference index first.
pub fn knn_score(model: &KnnModel, e: &[f32]) -> Result<f64> {
    if e.len() != model.dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{}-d embedding", model.dim),
            got: format!("{}-d", e.len()),
        });
    }
    let mut dists: Vec<(f64, usize)> = model
        .references
        .chunks_exact(model.dim)
        .enumerate()
        .map(|(i, r)| {
            let d: f64 = r.iter().zip(e).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            (d, i)
        })
        .collect();
    let k = model.k;
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, by_dist);
    }
    let abnormal = dists[..k]
        .iter()
        .filter(|(_, i)| model.labels[*i] == Label::Abnormal)
        .count();
    Ok(abnormal as f64 / k as f64)
}

/// Mean per-segment KNN score of one branch.
pub fn branch_record_score(
    params: &EmbeddingNetParams<f32>,
    knn: &KnnModel,
    segments: &[&CycleSegment],
) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::Empty("record segments"));
    }
    let mut total = 0.0;
    for s in segments {
        total += knn_score(knn, &forward(params, &s.data)?)?;
    }
    Ok(total / segments.len() as f64)
}

pub struct Branch {
    pub domain: Domain,
    pub params: EmbeddingNetParams<f32>,
    pub knn: KnnModel,
}

pub struct EnsembleModel {
    pub branches: Vec<Branch>,
    pub threshold: f64,
}

impl EnsembleModel {
    pub fn new(branches: Vec<Branch>, threshold: f64) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Empty("ensemble branches"));
        }
        let dim = branches[0].params.arch.embedding_dim;
        if branches
            .iter()
            .any(|b| b.params.arch.embedding_dim != dim || b.knn.dim != dim)
        {
            return Err(Error::ShapeMismatch {
                expected: format!("{dim}-d embeddings in every branch"),
                got: "mixed embedding sizes".into(),
            });
        }
        Ok(EnsembleModel { branches, threshold })
    }
}

/// Abnormal iff the mean of the branch scores reaches the threshold (ties go Abnormal).
pub fn combine_scores(branch_scores: &[f64], threshold: f64) -> (Label, f64) {
    let score = branch_scores.iter().sum::<f64>() / branch_scores.len() as f64;
    let label = if score >= threshold { Label::Abnormal } else { Label::Normal };
    (label, score)
}

pub fn ensemble_predict(ens: &EnsembleModel, segments: &[&CycleSegment]) -> Result<(Label, f64)> {
    let scores = ens
        .branches
        .iter()
        .map(|b| branch_record_score(&b.params, &b.knn, segments))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_scores(&scores, ens.threshold))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub r#fn: usize,
}

/// Abnormal is the positive class. Rates are `None` when their denominator is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub macc: Option<f64>,
    pub acc: Option<f64>,
    pub per_domain: BTreeMap<Domain, f64>,
    pub confusion: Confusion,
    /// Names of the fields above that are undefined.
    pub undefined: Vec<String>,
}

pub fn evaluate(preds: &[Label], labels: &[Label], domains: &[Domain]) -> Result<EvalReport> {
    if preds.len() != labels.len() || preds.len() != domains.len() {
        return Err(Error::InvalidInput("predictions, labels and domains differ in length".into()));
    }
    let mut c = Confusion::default();
    let mut dom: BTreeMap<Domain, (usize, usize)> = BTreeMap::new();
    for ((&p, &l), &d) in preds.iter().zip(labels).zip(domains) {
        match (l, p) {
            (Label::Abnormal, Label::Abnormal) => c.tp += 1,
            (Label::Abnormal, _) => c.r#fn += 1,
            (Label::Normal, Label::Abnormal) => c.fp += 1,
            (Label::Normal, _) => c.tn += 1,
            (Label::Unknown, _) => {
                return Err(Error::InvalidInput("evaluation labels must be Normal or Abnormal".into()))
            }
        }
        let e = dom.entry(d).or_insert((0, 0));
        e.0 += (p == l) as usize;
        e.1 += 1;
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let se = ratio(c.tp, c.tp + c.r#fn);
    let sp = ratio(c.tn, c.tn + c.fp);
    let macc = se.zip(sp).map(|(a, b)| (a + b) / 2.0);
    let acc = ratio(c.tp + c.tn, preds.len());
    let undefined = [("se", se), ("sp", sp), ("macc", macc), ("acc", acc)]
        .iter()
        .filter(|(_, v)| v.is_none())
        .map(|(n, _)| n.to_string())
        .collect();
    Ok(EvalReport {
        se,
        sp,
        macc,
        acc,
        per_domain: dom.into_iter().map(|(d, (hit, n))| (d, hit as f64 / n as f64)).collect(),
        confusion: c,
        undefined,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Table-style summary: per-domain accuracies, their average, then Se/Sp/Macc (percent).
    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("undef".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut header = String::new();
        let mut row = String::new();
        for (d, a) in &self.per_domain {
            header.push_str(&format!("{d:>8}"));
            row.push_str(&format!("{:>8.2}", 100.0 * a));
        }
        let avg = if self.per_domain.is_empty() {
            None
        } else {
            Some(self.per_domain.values().sum::<f64>() / self.per_domain.len() as f64)
        };
        header.push_str(&format!("{:>8}{:>8}{:>8}{:>8}", "Avg", "Sens.", "Spec.", "Macc"));
        row.push_str(&format!(
            "{:>8}{:>8}{:>8}{:>8}",
            pct(avg),
            pct(self.se),
            pct(self.sp),
            pct(self.macc)
        ));
        format!("{header}\n{row}")
    }
}

pub const PREDICTIONS_HEADER: &str = "record_id,domain,label,score,prediction";

pub fn format_predictions<'a>(rows: impl IntoIterator<Item = (&'a str, Domain, Label, f64, Label)>) -> String {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for (id, d, l, s, p) in rows {
        out.push_str(&format!("{id},{d},{},{s:.6},{}\n", l.code(), p.code()));
    }
    out
}
