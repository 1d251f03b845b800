//! Cross-domain triplet construction and class-balanced reference sampling.
//!
//! A block pairs one Normal and one Abnormal anchor from the anchor domain
//! with a positive (same class) and a negative (other class) drawn from each
//! partner domain. With six partner domains that is 2 × 6 = 12 triplets.

use std::collections::BTreeMap;

use rand::seq::index::sample;

use crate::dataset_io::{Domain, Label};
use crate::error::{Error, Result};
use crate::rng;
use crate::segmentation::CycleSegment;

/// Immutable collection of segments, indexed by (domain, class).
#[derive(Clone, Debug, Default)]
pub struct SegmentPool {
    pub segments: Vec<CycleSegment>,
    cells: BTreeMap<(Domain, Label), Vec<usize>>,
}

impl SegmentPool {
    pub fn new(segments: Vec<CycleSegment>) -> Self {
        let mut cells: BTreeMap<(Domain, Label), Vec<usize>> = BTreeMap::new();
        for (i, s) in segments.iter().enumerate() {
            cells.entry((s.domain, s.label)).or_default().push(i);
        }
        SegmentPool { segments, cells }
    }

    pub fn cell(&self, domain: Domain, label: Label) -> &[usize] {
        self.cells.get(&(domain, label)).map_or(&[], Vec::as_slice)
    }

    fn nonempty_cell(&self, domain: Domain, label: Label) -> Result<&[usize]> {
        let c = self.cell(domain, label);
        if c.is_empty() {
            Err(Error::EmptyCell { domain, class: label })
        } else {
            Ok(c)
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Domains with at least one segment, ascending.
    pub fn domains(&self) -> Vec<Domain> {
        let mut d: Vec<Domain> = self.cells.keys().map(|k| k.0).collect();
        d.dedup();
        d
    }
}

/// Indices into a [`SegmentPool`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletBlock {
    pub anchor_domain: Domain,
    pub triplets: Vec<Triplet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub anchor_domain: Domain,
    pub n_blocks: usize,
    pub seed: u64,
    pub partner_domains: Vec<Domain>,
}

impl SamplerConfig {
    /// Partners default to all six domains, the anchor's own included.
    pub fn new(anchor_domain: Domain, n_blocks: usize, seed: u64) -> Self {
        SamplerConfig {
            anchor_domain,
            n_blocks,
            seed,
            partner_domains: Domain::ALL.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::Config("sampler n_blocks must be >= 1".into()));
        }
        if self.partner_domains.is_empty() {
            return Err(Error::Config("sampler partner_domains must be non-empty".into()));
        }
        let mut seen = self.partner_domains.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.partner_domains.len() {
            return Err(Error::Config("sampler partner_domains repeats a domain".into()));
        }
        Ok(())
    }

    /// Triplets per block: two anchors times the partner count.
    pub fn block_size(&self) -> usize {
        2 * self.partner_domains.len()
    }
}

const ANCHORS: [Label; 2] = [Label::Normal, Label::Abnormal];

/// Builds block `block_id`. Every draw is keyed by
/// `(seed, anchor domain, block_id, draw index)`, so blocks are independent.
pub fn build_block(pool: &SegmentPool, cfg: &SamplerConfig, block_id: u64) -> Result<TripletBlock> {
    cfg.validate()?;
    let dom_key = cfg.anchor_domain.index() as u64;
    let mut draw = 0u64;
    let mut pick = |cell: &[usize]| {
        let i = rng::keyed_index(&[cfg.seed, dom_key, block_id, draw], cell.len());
        draw += 1;
        cell[i]
    };

    let anchor_cells = [
        pool.nonempty_cell(cfg.anchor_domain, Label::Normal)?,
        pool.nonempty_cell(cfg.anchor_domain, Label::Abnormal)?,
    ];
    let partner_cells = cfg
        .partner_domains
        .iter()
        .map(|&d| {
            Ok((
                pool.nonempty_cell(d, Label::Normal)?,
                pool.nonempty_cell(d, Label::Abnormal)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let anchors = [pick(anchor_cells[0]), pick(anchor_cells[1])];
    let mut triplets = Vec::with_capacity(cfg.block_size());
    for (anchor, class) in anchors.into_iter().zip(ANCHORS) {
        for &(normal, abnormal) in &partner_cells {
            let (same, other) = match class {
                Label::Normal => (normal, abnormal),
                _ => (abnormal, normal),
            };
            let positive = pick(same);
            let negative = pick(other);
            triplets.push(Triplet {
                anchor,
                positive,
                negative,
            });
        }
    }
    Ok(TripletBlock {
        anchor_domain: cfg.anchor_domain,
        triplets,
    })
}

/// Concatenates blocks `0..n_blocks`. Blocks are built in parallel.
pub fn build_training_set(pool: &SegmentPool, cfg: &SamplerConfig) -> Result<Vec<Triplet>> {
    use rayon::prelude::*;
    cfg.validate()?;
    let blocks = (0..cfg.n_blocks as u64)
        .into_par_iter()
        .map(|b| build_block(pool, cfg, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(blocks.into_iter().flat_map(|b| b.triplets).collect())
}

/// `per_class` Normal then `per_class` Abnormal segment indices, each drawn
/// without replacement from the class's segments pooled across domains.
pub fn balanced_subset(pool: &SegmentPool, per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(2 * per_class);
    for class in ANCHORS {
        let members: Vec<usize> = pool
            .cells
            .iter()
            .filter(|((_, l), _)| *l == class)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class,
                need: per_class,
                have: members.len(),
            });
        }
        let mut r = rng::stream(&[seed, class.class_index() as u64]);
        let mut picked: Vec<usize> = sample(&mut r, members.len(), per_class)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}
