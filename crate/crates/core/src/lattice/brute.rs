use super::{LatticeError, SegmentLattice, Segmentation};

/// Longest sequence the enumeration oracles accept.
pub const BRUTE_FORCE_MAX_LEN: usize = 16;

/// Every composition of `n` into parts no longer than `k`, in lexicographic
/// order of the part lists.
pub fn enumerate_segmentations(n: usize, k: usize) -> Result<Vec<Vec<usize>>, LatticeError> {
    if n > BRUTE_FORCE_MAX_LEN {
        return Err(LatticeError::TooLong {
            n,
            max: BRUTE_FORCE_MAX_LEN,
        });
    }
    let mut out = Vec::new();
    let mut parts = Vec::new();
    compose(n, k, &mut parts, &mut out);
    Ok(out)
}

fn compose(rest: usize, k: usize, parts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if rest == 0 {
        out.push(parts.clone());
        return;
    }
    for l in 1..=k.min(rest) {
        parts.push(l);
        compose(rest - l, k, parts, out);
        parts.pop();
    }
}

/// Log score of one segmentation, summed left to right.
pub fn segmentation_score(lattice: &SegmentLattice, lengths: &[usize]) -> Option<f64> {
    let mut at = 0;
    let mut score = 0.0;
    for &l in lengths {
        score += lattice.get(at, l)?;
        at += l;
    }
    (at == lattice.n()).then_some(score)
}

/// Log of the summed probability of every segmentation.
pub fn brute_force_marginal(lattice: &SegmentLattice) -> Result<f64, LatticeError> {
    let scores: Vec<f64> = enumerate_segmentations(lattice.n(), lattice.k())?
        .iter()
        .map(|s| segmentation_score(lattice, s).expect("enumerated segmentations fit the lattice"))
        .collect();
    Ok(crate::numerics::logsumexp(&scores)?)
}

/// Highest-scoring segmentation and its score. The first maximum in
/// enumeration order is kept.
pub fn brute_force_best(lattice: &SegmentLattice) -> Result<(Segmentation, f64), LatticeError> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in enumerate_segmentations(lattice.n(), lattice.k())? {
        let score = segmentation_score(lattice, &s).expect("enumerated segmentations fit the lattice");
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((s, score));
        }
    }
    let (lengths, score) = best.ok_or(LatticeError::Empty)?;
    Ok((Segmentation::new(lengths, lattice.n())?, score))
}
