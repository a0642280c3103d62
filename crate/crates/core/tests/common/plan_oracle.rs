//! Integer-program feasibility oracle for resampling plans.
//!
//! Tiles with the same presence pattern are interchangeable, so the program
//! has one integer variable per pattern: the summed multiplicity of its
//! tiles, in `0..=cap * tiles`. Branch-and-bound either finds a point in the
//! count box or proves there is none.

use std::collections::BTreeMap;

use agvision::{Manifest, NUM_CLASSES};
use good_lp::{constraint, default_solver, variable, Expression, ProblemVariables, Solution, SolverModel};

pub struct Bounds {
    pub lo: [u64; NUM_CLASSES],
    pub hi: [u64; NUM_CLASSES],
}

/// Count box implied by the monotone-goal property and the tolerance band.
pub fn plan_bounds(original: &[u64; NUM_CLASSES], targets: &[u64; NUM_CLASSES], lower: f64, upper: f64) -> Bounds {
    let mut lo = [0; NUM_CLASSES];
    let mut hi = [0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let t = targets[c];
        let slack = original[c].abs_diff(t);
        lo[c] = t.saturating_sub(slack).max((lower * t as f64).ceil() as u64);
        hi[c] = (t + slack).min((upper * t as f64).floor() as u64);
    }
    Bounds { lo, hi }
}

/// A per-tile multiplicity vector (each `<= cap`) whose class counts lie in `bounds`.
pub fn find_feasible_plan(manifest: &Manifest, bounds: &Bounds, cap: u32) -> Option<Vec<u32>> {
    if (0..NUM_CLASSES).any(|c| bounds.lo[c] > bounds.hi[c]) {
        return None;
    }
    let mut groups: BTreeMap<[bool; NUM_CLASSES], Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        groups.entry(r.presence).or_default().push(i);
    }
    let groups: Vec<_> = groups.into_iter().collect();

    let mut vars = ProblemVariables::new();
    let totals: Vec<_> = groups
        .iter()
        .map(|(_, tiles)| vars.add(variable().integer().min(0).max((cap as usize * tiles.len()) as f64)))
        .collect();
    let sum_all: Expression = totals.iter().copied().sum();
    let mut model = vars.minimise(sum_all.clone()).using(default_solver);
    model = model.with(constraint!(sum_all >= 1));
    for c in 0..NUM_CLASSES {
        let count: Expression = groups
            .iter()
            .zip(&totals)
            .filter(|((presence, _), _)| presence[c])
            .map(|(_, v)| *v)
            .sum();
        model = model
            .with(constraint!(count.clone() >= bounds.lo[c] as f64))
            .with(constraint!(count <= bounds.hi[c] as f64));
    }
    let solution = model.solve().ok()?;

    let mut mult = vec![0u32; manifest.len()];
    for ((_, tiles), v) in groups.iter().zip(&totals) {
        let mut left = solution.value(*v).round() as u64;
        for &i in tiles {
            let take = left.min(cap as u64);
            mult[i] = take as u32;
            left -= take;
        }
    }
    Some(mult)
}
