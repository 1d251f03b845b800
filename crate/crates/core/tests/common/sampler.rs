use heartsiam::sampler::{SamplerConfig, SegmentPool, TripletBlock};
use heartsiam::segmentation::CycleSegment;
use heartsiam::{Domain, Label};

/// Pool with `counts[d] = (normal, abnormal)` one-sample segments per domain.
pub fn pool(counts: &[(usize, usize)]) -> SegmentPool {
    let mut segs = Vec::new();
    for (d, &(n, a)) in Domain::ALL.iter().zip(counts) {
        for (label, k) in [(Label::Normal, n), (Label::Abnormal, a)] {
            for i in 0..k {
                segs.push(CycleSegment {
                    data: vec![0.0],
                    record_id: format!("{d}{label}{i}"),
                    domain: *d,
                    label,
                    cycle_start_index: i,
                });
            }
        }
    }
    SegmentPool::new(segs)
}

/// Checks every Triplet and TripletBlock invariant; returns a description of
/// the first violation.
pub fn check_block(pool: &SegmentPool, cfg: &SamplerConfig, b: &TripletBlock) -> Result<(), String> {
    let seg = |i: usize| &pool.segments[i];
    let p = cfg.partner_domains.len();
    if b.triplets.len() != 2 * p {
        return Err(format!("{} triplets", b.triplets.len()));
    }
    if b.anchor_domain != cfg.anchor_domain {
        return Err("wrong anchor domain".into());
    }
    let mut anchors: Vec<usize> = b.triplets.iter().map(|t| t.anchor).collect();
    anchors.dedup();
    if anchors.len() != 2 {
        return Err(format!("{} anchor runs", anchors.len()));
    }
    let classes: Vec<Label> = anchors.iter().map(|&a| seg(a).label).collect();
    if classes != [Label::Normal, Label::Abnormal] {
        return Err(format!("anchor classes {classes:?}"));
    }
    for (k, &a) in anchors.iter().enumerate() {
        let group = &b.triplets[k * p..(k + 1) * p];
        if group.iter().any(|t| t.anchor != a) {
            return Err("anchor does not own a contiguous group".into());
        }
        let partners: Vec<Domain> = group.iter().map(|t| seg(t.positive).domain).collect();
        if partners != cfg.partner_domains {
            return Err(format!("partner domains {partners:?}"));
        }
    }
    for t in &b.triplets {
        let (a, pos, neg) = (seg(t.anchor), seg(t.positive), seg(t.negative));
        if a.domain != cfg.anchor_domain {
            return Err("anchor outside anchor domain".into());
        }
        if a.label != pos.label || a.label == neg.label {
            return Err("class constraint violated".into());
        }
        if pos.domain != neg.domain {
            return Err("positive and negative from different domains".into());
        }
    }
    Ok(())
}
