//! Class-balanced resampling plans.
//!
//! Planning runs in three steps over per-tile multiplicities:
//!
//! 1. **Grow.** Starting from multiplicity 1 everywhere, repeatedly duplicate
//!    the tile whose present classes carry the largest summed relative deficit
//!    `(target - realized) / target`, capped at [`MULTIPLICITY_CAP`]. Ties go to
//!    the tile with the fewest present classes that are not in deficit, then
//!    to the smallest id.
//! 2. **Shrink.** Walking tiles in a seeded shuffle, drop one copy of any tile
//!    whose present classes are all strictly above target; repeat until a full
//!    pass changes nothing. This never pushes a class below its target.
//! 3. **Repair.** If some class ended outside its box (within
//!    `[LOWER_TOLERANCE, UPPER_TOLERANCE]` times its target and no further
//!    from the target than it started), work on per-pattern totals: a
//!    steepest-descent local search, then a bounded exact search that either
//!    finds a point in the boxes or proves there is none, and, if the search
//!    runs out of budget, seeded restarts of the local search. When no point
//!    is found, replay the longest prefix of the grow log (shrinking again)
//!    whose result satisfies the monotone-goal property; the empty prefix
//!    always does.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::class::NUM_CLASSES;
use crate::dataset::{class_counts, ClassCounts, Manifest, TileRecord};
use crate::error::{Error, Result};
use crate::rng::CounterRng;

pub const MULTIPLICITY_CAP: u32 = 8;

/// Fraction of the target a grown class must reach.
pub const LOWER_TOLERANCE: f64 = 0.9;
/// Bound a shrinkable class is expected to stay under.
pub const UPPER_TOLERANCE: f64 = 1.25;

/// Node limit for the exact fallback search.
const SEARCH_BUDGET: u64 = 2_000_000;

const SHRINK_STREAM: u64 = 0x5348_5249_4e4b;
const KICK_STREAM: u64 = 0x4b49_434b;
/// Restarts of the local search, each after a few random unit moves.
const KICKS: usize = 400;
const KICK_MOVES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Under,
    AtTarget,
    Over,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCounts {
    targets: [u64; NUM_CLASSES],
}

impl TargetCounts {
    pub fn new(targets: [u64; NUM_CLASSES]) -> Result<Self> {
        if let Some(c) = targets.iter().position(|t| *t == 0) {
            return Err(Error::InvalidTargets(format!("class {c} has a zero target")));
        }
        Ok(TargetCounts { targets })
    }

    pub fn get(&self, class: usize) -> u64 {
        self.targets[class]
    }

    pub fn as_array(&self) -> [u64; NUM_CLASSES] {
        self.targets
    }

    pub fn direction(&self, class: usize, current: u64) -> Direction {
        match current.cmp(&self.targets[class]) {
            std::cmp::Ordering::Less => Direction::Under,
            std::cmp::Ordering::Equal => Direction::AtTarget,
            std::cmp::Ordering::Greater => Direction::Over,
        }
    }

    /// Parses `{"targets": [9 integers]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: TargetCounts =
            serde_json::from_str(text).map_err(|e| Error::InvalidTargets(e.to_string()))?;
        TargetCounts::new(raw.targets)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TargetCounts::from_json(&text)
    }
}

/// Per-tile multiplicities plus the class counts they realize.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub seed: u64,
    pub entries: Vec<(String, u32)>,
    pub realized: ClassCounts,
}

impl SamplePlan {
    pub fn multiplicity_total(&self) -> u64 {
        self.entries.iter().map(|(_, m)| *m as u64).sum()
    }

    /// Recounts classes from the manifest and the stored multiplicities.
    pub fn recount(&self, manifest: &Manifest) -> Result<ClassCounts> {
        let by_id: HashMap<&str, &TileRecord> =
            manifest.records.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut counts = ClassCounts::default();
        for (id, m) in &self.entries {
            let r = by_id.get(id.as_str()).ok_or_else(|| Error::UnknownTileId(id.clone()))?;
            counts.add_presence(&r.presence, *m as u64);
        }
        Ok(counts)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(format!("plan {}", path.display()), e))
    }
}

fn presence_bits(presence: &[bool; NUM_CLASSES]) -> u16 {
    presence
        .iter()
        .enumerate()
        .filter(|(_, p)| **p)
        .fold(0, |acc, (c, _)| acc | (1 << c))
}

fn classes_of(bits: u16) -> impl Iterator<Item = usize> {
    (0..NUM_CLASSES).filter(move |c| bits & (1 << c) != 0)
}

/// True when no class is further from its target than it started.
pub fn is_monotone(original: &ClassCounts, realized: &ClassCounts, targets: &TargetCounts) -> bool {
    (0..NUM_CLASSES).all(|c| {
        let t = targets.get(c);
        realized.get(c).abs_diff(t) <= original.get(c).abs_diff(t)
    })
}

struct Planner<'a> {
    ids: Vec<&'a str>,
    bits: Vec<u16>,
    targets: [u64; NUM_CLASSES],
    original: [u64; NUM_CLASSES],
}

enum GrowOutcome {
    Exhausted,
    Stalled,
}

impl Planner<'_> {
    fn realized(&self, mult: &[u32]) -> [u64; NUM_CLASSES] {
        let mut r = [0u64; NUM_CLASSES];
        for (b, m) in self.bits.iter().zip(mult) {
            for c in classes_of(*b) {
                r[c] += *m as u64;
            }
        }
        r
    }

    /// Greedy duplication; returns the log of incremented tile indices.
    fn grow(&self, mult: &mut [u32], realized: &mut [u64; NUM_CLASSES]) -> (Vec<usize>, GrowOutcome) {
        // tiles sharing a presence pattern score identically, so keep one
        // id-sorted queue per pattern and only look at its head
        let mut queues: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, b) in self.bits.iter().enumerate() {
            if *b != 0 {
                queues.entry(*b).or_default().push(i);
            }
        }
        let mut heads: Vec<(u16, Vec<usize>, usize)> = queues
            .into_iter()
            .map(|(b, mut q)| {
                q.sort_by(|a, z| self.ids[*a].cmp(self.ids[*z]));
                (b, q, 0)
            })
            .collect();

        let mut log = Vec::new();
        loop {
            let deficit: u16 = (0..NUM_CLASSES)
                .filter(|c| realized[*c] < self.targets[*c])
                .fold(0, |acc, c| acc | (1 << c));
            if deficit == 0 {
                return (log, GrowOutcome::Exhausted);
            }
            let mut best: Option<(f64, u32, usize, usize)> = None; // score, collateral, head slot, tile
            for (slot, (b, q, pos)) in heads.iter().enumerate() {
                let Some(&tile) = q.get(*pos) else { continue };
                if b & deficit == 0 {
                    continue;
                }
                let score: f64 = classes_of(b & deficit)
                    .map(|c| (self.targets[c] - realized[c]) as f64 / self.targets[c] as f64)
                    .sum();
                let collateral = (b & !deficit).count_ones();
                let better = match best {
                    None => true,
                    Some((bs, bc, _, bt)) => {
                        score > bs
                            || (score == bs
                                && (collateral < bc || (collateral == bc && self.ids[tile] < self.ids[bt])))
                    }
                };
                if better {
                    best = Some((score, collateral, slot, tile));
                }
            }
            let Some((_, _, slot, tile)) = best else {
                return (log, GrowOutcome::Stalled);
            };
            mult[tile] += 1;
            for c in classes_of(self.bits[tile]) {
                realized[c] += 1;
            }
            log.push(tile);
            if mult[tile] >= MULTIPLICITY_CAP {
                heads[slot].2 += 1;
            }
        }
    }

    fn shrink(&self, order: &[usize], mult: &mut [u32], realized: &mut [u64; NUM_CLASSES]) {
        loop {
            let mut changed = false;
            for &i in order {
                let b = self.bits[i];
                if mult[i] == 0 || b == 0 || classes_of(b).any(|c| realized[c] <= self.targets[c]) {
                    continue;
                }
                mult[i] -= 1;
                for c in classes_of(b) {
                    realized[c] -= 1;
                }
                changed = true;
            }
            if !changed {
                return;
            }
        }
    }

    fn monotone(&self, realized: &[u64; NUM_CLASSES]) -> bool {
        (0..NUM_CLASSES).all(|c| {
            realized[c].abs_diff(self.targets[c]) <= self.original[c].abs_diff(self.targets[c])
        })
    }

    /// Multiplicities from replaying `log[..len]` and shrinking.
    fn replay(&self, log: &[usize], len: usize, order: &[usize]) -> (Vec<u32>, [u64; NUM_CLASSES]) {
        let mut mult = vec![1u32; self.bits.len()];
        for &i in &log[..len] {
            mult[i] += 1;
        }
        let mut realized = self.realized(&mult);
        self.shrink(order, &mut mult, &mut realized);
        (mult, realized)
    }

    /// Per-class count box: within the tolerance band and no further from
    /// the target than the original count. Always contains the target.
    fn band(&self) -> [(u64, u64); NUM_CLASSES] {
        std::array::from_fn(|c| {
            let t = self.targets[c];
            let slack = self.original[c].abs_diff(t);
            let lo = t.saturating_sub(slack).max((LOWER_TOLERANCE * t as f64).ceil() as u64);
            let hi = (t + slack).min((UPPER_TOLERANCE * t as f64).floor() as u64);
            (lo, hi)
        })
    }

    /// Tiles sharing a presence pattern are interchangeable for counting, so
    /// the repair steps work on per-pattern multiplicity totals.
    fn groups(&self) -> Vec<Group> {
        let mut by_bits: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, b) in self.bits.iter().enumerate() {
            if *b != 0 {
                by_bits.entry(*b).or_default().push(i);
            }
        }
        by_bits
            .into_iter()
            .map(|(bits, mut tiles)| {
                tiles.sort_by(|a, z| self.ids[*a].cmp(self.ids[*z]));
                let cap = MULTIPLICITY_CAP as u64 * tiles.len() as u64;
                Group { bits, tiles, cap }
            })
            .collect()
    }

    /// Restarts [`Self::descend`] from a few seeded random unit moves at a
    /// time and returns the best totals seen.
    fn kick(&self, groups: &[Group], totals: Vec<u64>, bounds: &[(u64, u64); NUM_CLASSES], seed: u64) -> Vec<u64> {
        let key = |t: &[u64]| {
            let r = counts_of(groups, t);
            (violation(&r, bounds), self.distance(&r))
        };
        let mut rng = CounterRng::new(seed, KICK_STREAM);
        let mut current = totals;
        let mut best = current.clone();
        for _ in 0..KICKS {
            if key(&best).0 == 0 {
                break;
            }
            for _ in 0..KICK_MOVES {
                let g = rng.below(groups.len() as u64) as usize;
                if rng.chance(0.5) {
                    current[g] = (current[g] + 1).min(groups[g].cap);
                } else if current.iter().sum::<u64>() > 1 {
                    current[g] = current[g].saturating_sub(1);
                }
            }
            current = self.descend(groups, current, bounds);
            if key(&current) < key(&best) {
                best = current.clone();
            }
        }
        best
    }

    /// Steepest descent on `(violation, distance to target)` over moves that
    /// add or remove `2^j` copies of one pattern, or move `2^j` copies from
    /// one pattern to another.
    fn descend(&self, groups: &[Group], mut totals: Vec<u64>, bounds: &[(u64, u64); NUM_CLASSES]) -> Vec<u64> {
        let largest = groups.iter().map(|g| g.cap).max().unwrap_or(1);
        let steps: Vec<u64> = std::iter::successors(Some(1u64), |s| Some(s * 2))
            .take_while(|s| *s <= largest)
            .collect();
        let mut realized = counts_of(groups, &totals);
        let mut score = (violation(&realized, bounds), self.distance(&realized));
        while score.0 > 0 {
            let mut best: Option<(Score, Option<usize>, Option<usize>, u64)> = None;
            for &step in &steps {
                let mut consider = |up: Option<usize>, down: Option<usize>| {
                    let mut r = realized;
                    if let Some(g) = up {
                        if totals[g] + step > groups[g].cap {
                            return;
                        }
                        classes_of(groups[g].bits).for_each(|c| r[c] += step);
                    }
                    if let Some(g) = down {
                        if totals[g] < step {
                            return;
                        }
                        classes_of(groups[g].bits).for_each(|c| r[c] -= step);
                    }
                    if r.iter().all(|v| *v == 0) {
                        return;
                    }
                    let s = (violation(&r, bounds), self.distance(&r));
                    if s < score && best.is_none_or(|(bs, ..)| s < bs) {
                        best = Some((s, up, down, step));
                    }
                };
                for g in 0..groups.len() {
                    consider(Some(g), None);
                    consider(None, Some(g));
                }
                for gu in 0..groups.len() {
                    for gd in 0..groups.len() {
                        if gu != gd {
                            consider(Some(gu), Some(gd));
                        }
                    }
                }
            }
            let Some((s, up, down, step)) = best else { break };
            if let Some(g) = up {
                totals[g] += step;
                classes_of(groups[g].bits).for_each(|c| realized[c] += step);
            }
            if let Some(g) = down {
                totals[g] -= step;
                classes_of(groups[g].bits).for_each(|c| realized[c] -= step);
            }
            score = s;
        }
        totals
    }

    /// Bounded depth-first search over per-pattern totals for a point inside
    /// `bounds`, trying totals nearest to `start` first. Partial assignments
    /// are pruned when some class can no longer land in its box. Gives up
    /// after [`SEARCH_BUDGET`] nodes.
    fn search(&self, groups: &[Group], start: &[u64], bounds: &[(u64, u64); NUM_CLASSES]) -> Search {
        // many-class patterns first: they constrain the most boxes at once
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by_key(|g| std::cmp::Reverse(groups[*g].bits.count_ones()));
        // headroom[k][c]: most that groups order[k..] can still add to class c
        let mut headroom = vec![[0u64; NUM_CLASSES]; order.len() + 1];
        for k in (0..order.len()).rev() {
            headroom[k] = headroom[k + 1];
            for c in classes_of(groups[order[k]].bits) {
                headroom[k][c] += groups[order[k]].cap;
            }
        }

        struct Dfs<'a> {
            groups: &'a [Group],
            order: &'a [usize],
            start: &'a [u64],
            headroom: &'a [[u64; NUM_CLASSES]],
            bounds: &'a [(u64, u64); NUM_CLASSES],
            chosen: Vec<u64>,
            nodes: u64,
        }
        impl Dfs<'_> {
            fn go(&mut self, k: usize, sums: &mut [u64; NUM_CLASSES]) -> bool {
                self.nodes += 1;
                if self.nodes > SEARCH_BUDGET {
                    return false;
                }
                if (0..NUM_CLASSES).any(|c| sums[c] > self.bounds[c].1 || sums[c] + self.headroom[k][c] < self.bounds[c].0) {
                    return false;
                }
                if k == self.order.len() {
                    return true;
                }
                let g = self.order[k];
                let b = self.groups[g].bits;
                // largest total this pattern can take without overshooting a box
                let room = classes_of(b)
                    .map(|c| self.bounds[c].1 - sums[c])
                    .min()
                    .unwrap_or(0)
                    .min(self.groups[g].cap);
                let at = self.start[g].min(room);
                // at, at+1, at-1, at+2, ...
                for step in 0..=2 * room {
                    let v = if step % 2 == 1 {
                        at + step.div_ceil(2)
                    } else {
                        match at.checked_sub(step / 2) {
                            Some(v) => v,
                            None => continue,
                        }
                    };
                    if v > room {
                        continue;
                    }
                    classes_of(b).for_each(|c| sums[c] += v);
                    self.chosen[g] = v;
                    if self.go(k + 1, sums) {
                        return true;
                    }
                    classes_of(b).for_each(|c| sums[c] -= v);
                    if self.nodes > SEARCH_BUDGET {
                        return false;
                    }
                }
                false
            }
        }
        let mut dfs = Dfs {
            groups,
            order: &order,
            start,
            headroom: &headroom,
            bounds,
            chosen: vec![0; groups.len()],
            nodes: 0,
        };
        if dfs.go(0, &mut [0; NUM_CLASSES]) {
            Search::Found(dfs.chosen)
        } else if dfs.nodes > SEARCH_BUDGET {
            Search::GaveUp
        } else {
            Search::Infeasible
        }
    }

    fn distance(&self, realized: &[u64; NUM_CLASSES]) -> u64 {
        (0..NUM_CLASSES).map(|c| realized[c].abs_diff(self.targets[c])).sum()
    }

    /// Longest prefix of the grow log whose replay is monotone; the empty
    /// prefix always is.
    fn longest_monotone_prefix(&self, log: &[usize], order: &[usize]) -> usize {
        if self.monotone(&self.replay(log, log.len(), order).1) {
            return log.len();
        }
        // gallop down to a valid prefix, then binary-search upward for a longer one
        let mut good = 0;
        let mut bad = log.len();
        let mut step = 1;
        while step < bad {
            let len = bad - step;
            if self.monotone(&self.replay(log, len, order).1) {
                good = len;
                break;
            }
            bad = len;
            step *= 2;
        }
        while bad - good > 1 {
            let mid = good + (bad - good) / 2;
            if self.monotone(&self.replay(log, mid, order).1) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    }
}

enum Search {
    Found(Vec<u64>),
    Infeasible,
    GaveUp,
}

struct Group {
    bits: u16,
    /// Tile indices sorted by id.
    tiles: Vec<usize>,
    cap: u64,
}

fn totals_of(groups: &[Group], mult: &[u32]) -> Vec<u64> {
    groups
        .iter()
        .map(|g| g.tiles.iter().map(|i| mult[*i] as u64).sum())
        .collect()
}

fn counts_of(groups: &[Group], totals: &[u64]) -> [u64; NUM_CLASSES] {
    let mut r = [0u64; NUM_CLASSES];
    for (g, t) in groups.iter().zip(totals) {
        classes_of(g.bits).for_each(|c| r[c] += t);
    }
    r
}

/// Adjusts `mult` to the given per-pattern totals one copy at a time: raise
/// the least repeated tile, lower the most repeated one (smallest id first).
fn distribute(groups: &[Group], mut mult: Vec<u32>, totals: &[u64]) -> Vec<u32> {
    for (g, &total) in groups.iter().zip(totals) {
        let mut have: u64 = g.tiles.iter().map(|i| mult[*i] as u64).sum();
        while have < total {
            let i = *g.tiles.iter().min_by_key(|i| mult[**i]).expect("non-empty group");
            mult[i] += 1;
            have += 1;
        }
        while have > total {
            let i = *g.tiles.iter().min_by_key(|i| std::cmp::Reverse(mult[**i])).expect("non-empty group");
            mult[i] -= 1;
            have -= 1;
        }
    }
    mult
}

/// `(violation, distance to target)`, compared lexicographically.
type Score = (u64, u64);

/// Total distance of the counts from the per-class boxes.
fn violation(realized: &[u64; NUM_CLASSES], bounds: &[(u64, u64); NUM_CLASSES]) -> u64 {
    realized
        .iter()
        .zip(bounds)
        .map(|(r, (lo, hi))| lo.saturating_sub(*r) + r.saturating_sub(*hi))
        .sum()
}

/// Builds a deterministic plan moving per-class image counts toward `targets`.
pub fn plan_resample(manifest: &Manifest, targets: &TargetCounts, seed: u64) -> Result<SamplePlan> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut seen = HashSet::new();
    if let Some(dup) = manifest.records.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(Error::DuplicateTile(dup.id.clone()));
    }
    let original = class_counts(manifest);
    for c in 0..NUM_CLASSES {
        if original.get(c) == 0 {
            return Err(Error::UnreachableTarget {
                class: c,
                best: 0,
                target: targets.get(c),
            });
        }
    }

    let planner = Planner {
        ids: manifest.records.iter().map(|r| r.id.as_str()).collect(),
        bits: manifest.records.iter().map(|r| presence_bits(&r.presence)).collect(),
        targets: targets.as_array(),
        original: original.0,
    };
    let n = manifest.len();
    let mut mult = vec![1u32; n];
    let mut realized = original.0;
    let (log, outcome) = planner.grow(&mut mult, &mut realized);
    if let GrowOutcome::Stalled = outcome {
        if let Some(c) = (0..NUM_CLASSES)
            .find(|c| (realized[*c] as f64) < LOWER_TOLERANCE * planner.targets[*c] as f64)
        {
            return Err(Error::UnreachableTarget {
                class: c,
                best: realized[c],
                target: planner.targets[c],
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    CounterRng::new(seed, SHRINK_STREAM).shuffle(&mut order);
    let (mut mult, mut realized) = planner.replay(&log, log.len(), &order);

    let bounds = planner.band();
    if violation(&realized, &bounds) > 0 {
        let groups = planner.groups();
        let descended = planner.descend(&groups, totals_of(&groups, &mult), &bounds);
        let found = if violation(&counts_of(&groups, &descended), &bounds) == 0 {
            Some(descended)
        } else {
            match planner.search(&groups, &descended, &bounds) {
                Search::Found(totals) => Some(totals),
                Search::Infeasible => None,
                Search::GaveUp => {
                    let kicked = planner.kick(&groups, descended, &bounds, seed);
                    (violation(&counts_of(&groups, &kicked), &bounds) == 0).then_some(kicked)
                }
            }
        };
        if let Some(totals) = found {
            mult = distribute(&groups, mult, &totals);
            realized = planner.realized(&mult);
        } else {
            let good = planner.longest_monotone_prefix(&log, &order);
            log::warn!(
                "resample: tolerance band not reached; kept {good} of {} duplications",
                log.len()
            );
            (mult, realized) = planner.replay(&log, good, &order);
        }
    }

    Ok(SamplePlan {
        seed,
        entries: planner
            .ids
            .iter()
            .zip(&mult)
            .map(|(id, m)| (id.to_string(), *m))
            .collect(),
        realized: ClassCounts(realized),
    })
}

/// Repeats each record by its multiplicity; copies are tagged `<id>#<k>`.
/// Records the plan does not mention keep multiplicity 1.
pub fn apply_plan(manifest: &Manifest, plan: &SamplePlan) -> Result<Manifest> {
    let known: HashSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
    let mut mult: HashMap<&str, u32> = HashMap::new();
    for (id, m) in &plan.entries {
        if !known.contains(id.as_str()) {
            return Err(Error::UnknownTileId(id.clone()));
        }
        mult.insert(id.as_str(), *m);
    }
    let mut records = Vec::new();
    for r in &manifest.records {
        let m = mult.get(r.id.as_str()).copied().unwrap_or(1);
        for k in 1..=m {
            let mut copy = r.clone();
            copy.occurrence = Some(format!("{}#{k}", r.id));
            records.push(copy);
        }
    }
    Ok(Manifest {
        split: manifest.split,
        provenance: format!("resampled from [{}] with seed {}", manifest.provenance, plan.seed),
        root: manifest.root.clone(),
        records,
    })
}
