//! Simulated rater-item assignment.
//!
//! Every procedure draws raters only from the bucket that rated the document,
//! so any plan can be realized with ratings that actually exist. The unit of
//! assignment is a whole document (all of its systems) under pseudo
//! side-by-side grouping and a single item otherwise. Double-rated plans use
//! the same procedures over the rater *pairs* of each bucket.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RatingDataset;
use crate::stats::{entropy_of_counts, WorkloadDistribution};

pub const DEFAULT_ENTROPY_TOLERANCE: f64 = 0.03;
pub const DEFAULT_MAX_RETRIES: usize = 1000;

/// Candidates whose distance to the target differ by less than this are ties.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("entropy target {target} ± {tolerance} not reached after {attempts} attempts (closest {best:.4})")]
    TargetUnreachable {
        target: f64,
        tolerance: f64,
        best: f64,
        attempts: usize,
    },
    #[error("bucket `{bucket}` has {raters} raters; double rating needs exactly 3")]
    BucketArityUnsupported { bucket: String, raters: usize },
    #[error("bucket `{bucket}` has {size} documents but its quota is {quota}")]
    QuotaExceedsBucket { bucket: String, quota: usize, size: usize },
    #[error("cannot sample {requested} documents from {available}")]
    InvalidDocumentCount { requested: usize, available: usize },
    #[error("entropy target {0} is outside [0, 1]")]
    InvalidTarget(f64),
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("rater pool has {0} members; workload entropy needs at least 2")]
    PoolTooSmall(usize),
    #[error("item (doc {doc}, system {system}) assigned to rater {rater} outside its bucket")]
    IneligibleRater { doc: usize, system: usize, rater: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemGrouping {
    /// All systems' outputs for a document go to the same rater(s).
    PseudoSideBySide,
    /// Each rater gets a near-equal share of every system's items.
    SystemBalanced,
    NoGrouping,
}

impl ItemGrouping {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemGrouping::PseudoSideBySide => "psxs",
            ItemGrouping::SystemBalanced => "system_balanced",
            ItemGrouping::NoGrouping => "none",
        }
    }
}

impl fmt::Display for ItemGrouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ItemGrouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "psxs" | "pseudosidebyside" => Ok(ItemGrouping::PseudoSideBySide),
            "systembalanced" | "system" => Ok(ItemGrouping::SystemBalanced),
            "none" | "nogrouping" => Ok(ItemGrouping::NoGrouping),
            other => Err(format!("unknown item grouping `{other}` (psxs|system_balanced|none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LoadBalancing {
    FullyBalanced,
    EntropyTarget { target: f64, tolerance: f64 },
}

impl fmt::Display for LoadBalancing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadBalancing::FullyBalanced => f.write_str("balanced"),
            LoadBalancing::EntropyTarget { target, tolerance } => {
                if *tolerance == DEFAULT_ENTROPY_TOLERANCE {
                    write!(f, "entropy:{target}")
                } else {
                    write!(f, "entropy:{target}:{tolerance}")
                }
            }
        }
    }
}

impl FromStr for LoadBalancing {
    type Err = String;

    /// `balanced`, `entropy:<target>` or `entropy:<target>:<tolerance>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if matches!(s.as_str(), "balanced" | "fully_balanced" | "full") {
            return Ok(LoadBalancing::FullyBalanced);
        }
        let rest = s
            .strip_prefix("entropy:")
            .ok_or_else(|| format!("unknown load balancing `{s}` (balanced|entropy:<t>[:<tol>])"))?;
        let mut parts = rest.split(':');
        let target: f64 = parts
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e| format!("entropy target: {e}"))?;
        let tolerance = match parts.next() {
            Some(t) => t.parse().map_err(|e| format!("entropy tolerance: {e}"))?,
            None => DEFAULT_ENTROPY_TOLERANCE,
        };
        if !(0.0..=1.0).contains(&target) || tolerance.is_nan() || tolerance < 0.0 {
            return Err(format!("entropy target {target} / tolerance {tolerance} out of range"));
        }
        Ok(LoadBalancing::EntropyTarget { target, tolerance })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemAssignment {
    pub doc: usize,
    pub system: usize,
    /// One or two distinct raters, ascending.
    pub raters: Vec<usize>,
}

/// Which rater(s) rate each item of a document subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentPlan {
    pub grouping: ItemGrouping,
    pub balancing: LoadBalancing,
    pub ratings_per_item: usize,
    /// Dataset document indices, ascending.
    pub docs: Vec<usize>,
    /// Ordered by `(doc, system)`.
    pub items: Vec<ItemAssignment>,
    /// Normalized entropy of the workload (over raters, or rater pairs when
    /// double-rated) the plan was built with.
    pub entropy: f64,
}

impl AssignmentPlan {
    /// Item ratings per rater (double-rated items count for both raters).
    pub fn rater_workload(&self, ds: &RatingDataset) -> WorkloadDistribution {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for item in &self.items {
            for &r in &item.raters {
                *counts.entry(ds.raters()[r].clone()).or_default() += 1;
            }
        }
        WorkloadDistribution { counts }
    }

    /// Checks that every rater belongs to its item's bucket and that the
    /// grouping invariants hold.
    pub fn check(&self, ds: &RatingDataset) -> Result<(), AssignmentError> {
        for item in &self.items {
            let bucket = &ds.buckets()[ds.documents()[item.doc].bucket];
            for &r in &item.raters {
                if !bucket.raters.contains(&r) {
                    return Err(AssignmentError::IneligibleRater {
                        doc: item.doc,
                        system: item.system,
                        rater: r,
                    });
                }
            }
            let distinct = item.raters.windows(2).all(|w| w[0] < w[1]);
            if item.raters.len() != self.ratings_per_item || !distinct {
                return Err(AssignmentError::UnsupportedCombination(format!(
                    "item (doc {}, system {}) has raters {:?}",
                    item.doc, item.system, item.raters
                )));
            }
        }
        if self.grouping == ItemGrouping::PseudoSideBySide {
            let n_sys = ds.systems().len();
            for chunk in self.items.chunks(n_sys) {
                if chunk.iter().any(|i| i.raters != chunk[0].raters) {
                    return Err(AssignmentError::UnsupportedCombination(format!(
                        "doc {} split across raters under psxs",
                        chunk[0].doc
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything needed to build one plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentSpec {
    pub grouping: ItemGrouping,
    pub balancing: LoadBalancing,
    pub ratings_per_item: usize,
    pub max_retries: usize,
}

impl Default for AssignmentSpec {
    fn default() -> Self {
        AssignmentSpec {
            grouping: ItemGrouping::PseudoSideBySide,
            balancing: LoadBalancing::FullyBalanced,
            ratings_per_item: 1,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

/// Assignment targets: single raters or rater pairs, per bucket.
struct Alphabet {
    /// Slot ids available to each bucket.
    bucket_slots: Vec<Vec<usize>>,
    /// Raters making up each slot.
    slot_raters: Vec<Vec<usize>>,
}

impl Alphabet {
    fn new(ds: &RatingDataset, ratings_per_item: usize) -> Result<Self, AssignmentError> {
        match ratings_per_item {
            1 => Ok(Alphabet {
                bucket_slots: ds.buckets().iter().map(|b| b.raters.clone()).collect(),
                slot_raters: (0..ds.raters().len()).map(|r| vec![r]).collect(),
            }),
            2 => {
                let mut ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
                let mut bucket_slots = Vec::with_capacity(ds.buckets().len());
                for b in ds.buckets() {
                    if b.raters.len() != 3 {
                        return Err(AssignmentError::BucketArityUnsupported {
                            bucket: b.id.clone(),
                            raters: b.raters.len(),
                        });
                    }
                    let r = &b.raters;
                    let slots = [(r[0], r[1]), (r[0], r[2]), (r[1], r[2])]
                        .into_iter()
                        .map(|pair| {
                            let next = ids.len();
                            *ids.entry(pair).or_insert(next)
                        })
                        .collect();
                    bucket_slots.push(slots);
                }
                let mut slot_raters = vec![Vec::new(); ids.len()];
                for ((a, b), id) in ids {
                    slot_raters[id] = vec![a, b];
                }
                Ok(Alphabet {
                    bucket_slots,
                    slot_raters,
                })
            }
            n => Err(AssignmentError::UnsupportedCombination(format!(
                "{n} ratings per item (supported: 1 or 2)"
            ))),
        }
    }

    fn pool_size(&self) -> usize {
        self.slot_raters.len()
    }
}

struct Unit {
    doc: usize,
    bucket: usize,
    /// Systems covered by the unit.
    systems: Vec<usize>,
}

fn build_units(ds: &RatingDataset, docs: &[usize], grouping: ItemGrouping) -> Vec<Unit> {
    let n_sys = ds.systems().len();
    let mut units = Vec::new();
    for &d in docs {
        let bucket = ds.documents()[d].bucket;
        match grouping {
            ItemGrouping::PseudoSideBySide => units.push(Unit {
                doc: d,
                bucket,
                systems: (0..n_sys).collect(),
            }),
            _ => units.extend((0..n_sys).map(|s| Unit {
                doc: d,
                bucket,
                systems: vec![s],
            })),
        }
    }
    units
}

fn slot_counts(units: &[Unit], slots: &[usize], pool: usize) -> Vec<u64> {
    let mut counts = vec![0u64; pool];
    for (u, &s) in units.iter().zip(slots) {
        counts[s] += u.systems.len() as u64;
    }
    counts
}

fn finish_plan(
    ds: &RatingDataset,
    docs: &[usize],
    spec: &AssignmentSpec,
    alphabet: &Alphabet,
    units: &[Unit],
    slots: &[usize],
) -> AssignmentPlan {
    let n_sys = ds.systems().len();
    let mut sorted_docs = docs.to_vec();
    sorted_docs.sort_unstable();
    let pos: BTreeMap<usize, usize> = sorted_docs.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut items: Vec<ItemAssignment> = sorted_docs
        .iter()
        .flat_map(|&d| {
            (0..n_sys).map(move |s| ItemAssignment {
                doc: d,
                system: s,
                raters: Vec::new(),
            })
        })
        .collect();
    for (u, &slot) in units.iter().zip(slots) {
        for &s in &u.systems {
            items[pos[&u.doc] * n_sys + s].raters = alphabet.slot_raters[slot].clone();
        }
    }
    let pool = alphabet.pool_size();
    let entropy = if pool >= 2 && !units.is_empty() {
        entropy_of_counts(&slot_counts(units, slots, pool), pool)
    } else {
        0.0
    };
    AssignmentPlan {
        grouping: spec.grouping,
        balancing: spec.balancing,
        ratings_per_item: spec.ratings_per_item,
        docs: sorted_docs,
        items,
        entropy,
    }
}

/// Builds a plan for `docs` according to `spec`.
pub fn assign<R: Rng + ?Sized>(
    ds: &RatingDataset,
    docs: &[usize],
    spec: &AssignmentSpec,
    rng: &mut R,
) -> Result<AssignmentPlan, AssignmentError> {
    if docs.is_empty() {
        return Err(AssignmentError::InvalidDocumentCount {
            requested: 0,
            available: ds.documents().len(),
        });
    }
    let alphabet = Alphabet::new(ds, spec.ratings_per_item)?;
    if spec.grouping == ItemGrouping::SystemBalanced {
        if spec.balancing != LoadBalancing::FullyBalanced {
            return Err(AssignmentError::UnsupportedCombination(
                "system-balanced grouping requires fully balanced load".into(),
            ));
        }
        let (units, slots) = system_balanced(ds, docs, &alphabet, rng);
        return Ok(finish_plan(ds, docs, spec, &alphabet, &units, &slots));
    }
    let units = build_units(ds, docs, spec.grouping);
    let slots = match spec.balancing {
        LoadBalancing::FullyBalanced => round_robin(&units, &alphabet, rng),
        LoadBalancing::EntropyTarget { target, tolerance } => {
            entropy_targeted(&units, &alphabet, target, tolerance, spec.max_retries, rng)?
        }
    };
    Ok(finish_plan(ds, docs, spec, &alphabet, &units, &slots))
}

/// Per bucket: shuffle the units and the slots, then deal round-robin.
fn round_robin<R: Rng + ?Sized>(units: &[Unit], alphabet: &Alphabet, rng: &mut R) -> Vec<usize> {
    let mut slots = vec![usize::MAX; units.len()];
    for (b, bucket_slots) in alphabet.bucket_slots.iter().enumerate() {
        let mut members: Vec<usize> = (0..units.len()).filter(|&u| units[u].bucket == b).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let mut order = bucket_slots.clone();
        order.shuffle(rng);
        for (k, u) in members.into_iter().enumerate() {
            slots[u] = order[k % order.len()];
        }
    }
    slots
}

/// Per bucket and system: shuffle slots and documents, deal that system's items.
fn system_balanced<R: Rng + ?Sized>(
    ds: &RatingDataset,
    docs: &[usize],
    alphabet: &Alphabet,
    rng: &mut R,
) -> (Vec<Unit>, Vec<usize>) {
    let mut units = Vec::new();
    let mut slots = Vec::new();
    for (b, bucket_slots) in alphabet.bucket_slots.iter().enumerate() {
        let bucket_docs: Vec<usize> = docs.iter().copied().filter(|&d| ds.documents()[d].bucket == b).collect();
        if bucket_docs.is_empty() {
            continue;
        }
        for s in 0..ds.systems().len() {
            let mut order = bucket_slots.clone();
            order.shuffle(rng);
            let mut shuffled = bucket_docs.clone();
            shuffled.shuffle(rng);
            for (k, d) in shuffled.into_iter().enumerate() {
                units.push(Unit {
                    doc: d,
                    bucket: b,
                    systems: vec![s],
                });
                slots.push(order[k % order.len()]);
            }
        }
    }
    (units, slots)
}

/// Random start, one greedy sweep towards the target, reject and retry.
fn entropy_targeted<R: Rng + ?Sized>(
    units: &[Unit],
    alphabet: &Alphabet,
    target: f64,
    tolerance: f64,
    max_retries: usize,
    rng: &mut R,
) -> Result<Vec<usize>, AssignmentError> {
    if !(0.0..=1.0).contains(&target) {
        return Err(AssignmentError::InvalidTarget(target));
    }
    let pool = alphabet.pool_size();
    if pool < 2 {
        return Err(AssignmentError::PoolTooSmall(pool));
    }
    let mut best = f64::NAN;
    let mut candidates: Vec<usize> = Vec::new();
    for _ in 0..max_retries.max(1) {
        let mut slots: Vec<usize> = units
            .iter()
            .map(|u| {
                let choices = &alphabet.bucket_slots[u.bucket];
                choices[rng.random_range(0..choices.len())]
            })
            .collect();
        let mut counts = slot_counts(units, &slots, pool);
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.shuffle(rng);
        for u in order {
            let weight = units[u].systems.len() as u64;
            counts[slots[u]] -= weight;
            let mut best_dist = f64::INFINITY;
            candidates.clear();
            for &slot in &alphabet.bucket_slots[units[u].bucket] {
                counts[slot] += weight;
                let dist = (entropy_of_counts(&counts, pool) - target).abs();
                counts[slot] -= weight;
                if dist < best_dist - TIE_EPS {
                    best_dist = dist;
                    candidates.clear();
                    candidates.push(slot);
                } else if dist <= best_dist + TIE_EPS {
                    candidates.push(slot);
                }
            }
            let chosen = candidates[rng.random_range(0..candidates.len())];
            slots[u] = chosen;
            counts[chosen] += weight;
        }
        let h = entropy_of_counts(&counts, pool);
        if best.is_nan() || (h - target).abs() < (best - target).abs() {
            best = h;
        }
        if (h - target).abs() <= tolerance {
            return Ok(slots);
        }
    }
    Err(AssignmentError::TargetUnreachable {
        target,
        tolerance,
        best,
        attempts: max_retries.max(1),
    })
}

/// Pseudo side-by-side, fully balanced.
pub fn assign_psxs_balanced<R: Rng + ?Sized>(
    ds: &RatingDataset,
    docs: &[usize],
    rng: &mut R,
) -> Result<AssignmentPlan, AssignmentError> {
    assign(ds, docs, &AssignmentSpec::default(), rng)
}

/// Pseudo side-by-side with a workload-entropy target.
pub fn assign_entropy_target<R: Rng + ?Sized>(
    ds: &RatingDataset,
    docs: &[usize],
    target: f64,
    tolerance: f64,
    rng: &mut R,
    max_retries: usize,
) -> Result<AssignmentPlan, AssignmentError> {
    let spec = AssignmentSpec {
        balancing: LoadBalancing::EntropyTarget { target, tolerance },
        max_retries,
        ..AssignmentSpec::default()
    };
    assign(ds, docs, &spec, rng)
}

/// Items assigned independently of their document.
pub fn assign_no_grouping<R: Rng + ?Sized>(
    ds: &RatingDataset,
    docs: &[usize],
    balancing: LoadBalancing,
    rng: &mut R,
) -> Result<AssignmentPlan, AssignmentError> {
    let spec = AssignmentSpec {
        grouping: ItemGrouping::NoGrouping,
        balancing,
        ..AssignmentSpec::default()
    };
    assign(ds, docs, &spec, rng)
}

pub fn assign_system_balanced<R: Rng + ?Sized>(
    ds: &RatingDataset,
    docs: &[usize],
    rng: &mut R,
) -> Result<AssignmentPlan, AssignmentError> {
    let spec = AssignmentSpec {
        grouping: ItemGrouping::SystemBalanced,
        ..AssignmentSpec::default()
    };
    assign(ds, docs, &spec, rng)
}

/// Any of the procedures above, assigning rater pairs instead of raters.
pub fn pair_assign<R: Rng + ?Sized>(
    ds: &RatingDataset,
    docs: &[usize],
    grouping: ItemGrouping,
    balancing: LoadBalancing,
    rng: &mut R,
) -> Result<AssignmentPlan, AssignmentError> {
    let spec = AssignmentSpec {
        grouping,
        balancing,
        ratings_per_item: 2,
        max_retries: DEFAULT_MAX_RETRIES,
    };
    assign(ds, docs, &spec, rng)
}

/// Samples `n_target` documents spread equally over buckets.
///
/// Each bucket contributes `n_target / n_buckets`; the remainder goes to
/// distinct buckets drawn uniformly from those with documents to spare.
/// Returns ascending dataset document indices.
pub fn subsample_documents<R: Rng + ?Sized>(
    ds: &RatingDataset,
    n_target: usize,
    rng: &mut R,
) -> Result<Vec<usize>, AssignmentError> {
    let total = ds.documents().len();
    if n_target == 0 || n_target > total {
        return Err(AssignmentError::InvalidDocumentCount {
            requested: n_target,
            available: total,
        });
    }
    let buckets = ds.buckets();
    let base = n_target / buckets.len();
    let remainder = n_target % buckets.len();
    if let Some(b) = buckets.iter().find(|b| b.docs.len() < base) {
        return Err(AssignmentError::QuotaExceedsBucket {
            bucket: b.id.clone(),
            quota: base,
            size: b.docs.len(),
        });
    }
    let spare: Vec<usize> = (0..buckets.len()).filter(|&b| buckets[b].docs.len() > base).collect();
    if spare.len() < remainder {
        let b = buckets.iter().find(|b| b.docs.len() == base).expect("some bucket is full");
        return Err(AssignmentError::QuotaExceedsBucket {
            bucket: b.id.clone(),
            quota: base + 1,
            size: b.docs.len(),
        });
    }
    let mut quota = vec![base; buckets.len()];
    for k in index::sample(rng, spare.len(), remainder) {
        quota[spare[k]] += 1;
    }
    let mut docs = Vec::with_capacity(n_target);
    for (b, &q) in buckets.iter().zip(&quota) {
        docs.extend(index::sample(rng, b.docs.len(), q).into_iter().map(|k| b.docs[k]));
    }
    docs.sort_unstable();
    Ok(docs)
}

/// Lowest normalized workload entropy reachable when each document goes to
/// one rater of its bucket.
///
/// Entropy is concave, so the minimum sits at a vertex of the assignment
/// polytope: every bucket hands all of its documents to a single rater. The
/// vertices are enumerated exhaustively (`Π |raters(b)|` of them).
pub fn min_instantiable_entropy(ds: &RatingDataset) -> Result<f64, AssignmentError> {
    let layout: Vec<(Vec<usize>, u64)> = ds
        .buckets()
        .iter()
        .map(|b| (b.raters.clone(), b.docs.len() as u64))
        .collect();
    min_entropy_of_layout(&layout, ds.raters().len())
}

/// [`min_instantiable_entropy`] on a bare layout of `(raters, n_units)` buckets.
pub fn min_entropy_of_layout(layout: &[(Vec<usize>, u64)], pool_size: usize) -> Result<f64, AssignmentError> {
    if pool_size < 2 {
        return Err(AssignmentError::PoolTooSmall(pool_size));
    }
    fn walk(layout: &[(Vec<usize>, u64)], counts: &mut Vec<u64>, pool: usize, best: &mut f64) {
        match layout.split_first() {
            None => {
                if counts.iter().any(|&c| c > 0) {
                    *best = best.min(entropy_of_counts(counts, pool));
                }
            }
            Some(((raters, n), rest)) => {
                for &r in raters {
                    counts[r] += n;
                    walk(rest, counts, pool, best);
                    counts[r] -= n;
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(layout, &mut vec![0; pool_size], pool_size, &mut best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RatingDataset, RatingRow};
    use crate::scoring::WeightTable;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `bucket_docs[b]` documents in bucket b, rated by `bucket_raters[b]`.
    fn layout(bucket_docs: &[usize], bucket_raters: &[&[&str]], n_sys: usize) -> RatingDataset {
        let mut rows = Vec::new();
        let mut doc = 0;
        for (b, (&n, raters)) in bucket_docs.iter().zip(bucket_raters).enumerate() {
            for _ in 0..n {
                for s in 0..n_sys {
                    for r in raters.iter() {
                        rows.push(RatingRow {
                            line: 0,
                            lang_pair: None,
                            bucket_id: Some(format!("b{b}")),
                            doc_id: format!("d{doc}"),
                            seg_index: 0,
                            system_id: format!("s{s}"),
                            rater_id: r.to_string(),
                            annotation: None,
                            score: Some(1.0),
                            target_text: None,
                        });
                    }
                }
                doc += 1;
            }
        }
        RatingDataset::from_rows(rows, &WeightTable::default(), None).unwrap()
    }

    fn all_docs(ds: &RatingDataset) -> Vec<usize> {
        (0..ds.documents().len()).collect()
    }

    fn doc_counts(plan: &AssignmentPlan, n_raters: usize, n_sys: usize) -> Vec<usize> {
        let mut c = vec![0; n_raters];
        for item in plan.items.iter().step_by(n_sys) {
            for &r in &item.raters {
                c[r] += 1;
            }
        }
        c
    }

    #[test]
    fn psxs_round_robin_counts() {
        let ds = layout(&[6], &[&["a", "b", "c"]], 2);
        let plan = assign_psxs_balanced(&ds, &all_docs(&ds), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        plan.check(&ds).unwrap();
        assert_eq!(doc_counts(&plan, 3, 2), vec![2, 2, 2]);

        let ds = layout(&[7], &[&["a", "b", "c"]], 2);
        let plan = assign_psxs_balanced(&ds, &all_docs(&ds), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut c = doc_counts(&plan, 3, 2);
        c.sort();
        assert_eq!(c, vec![2, 2, 3]);
    }

    #[test]
    fn no_grouping_deals_items() {
        let ds = layout(&[1], &[&["a", "b", "c"]], 4);
        let plan = assign_no_grouping(&ds, &[0], LoadBalancing::FullyBalanced, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        plan.check(&ds).unwrap();
        let mut c: Vec<u64> = plan.rater_workload(&ds).counts.values().copied().collect();
        c.sort();
        assert_eq!(c, vec![1, 1, 2]);
    }

    #[test]
    fn psxs_keeps_documents_together() {
        let ds = layout(&[5], &[&["a", "b", "c"]], 4);
        let plan = assign_psxs_balanced(&ds, &all_docs(&ds), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for chunk in plan.items.chunks(4) {
            assert!(chunk.iter().all(|i| i.raters == chunk[0].raters));
        }
    }

    #[test]
    fn entropy_zero_target_puts_everything_on_one_rater() {
        let ds = layout(&[4], &[&["a", "b", "c"]], 3);
        let plan = assign_no_grouping(
            &ds,
            &all_docs(&ds),
            LoadBalancing::EntropyTarget { target: 0.0, tolerance: 0.03 },
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert_eq!(plan.rater_workload(&ds).counts.len(), 1);
        assert_eq!(plan.entropy, 0.0);
    }

    #[test]
    fn system_balanced_spreads_each_system() {
        let ds = layout(&[6], &[&["a", "b", "c"]], 3);
        let plan = assign_system_balanced(&ds, &all_docs(&ds), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        plan.check(&ds).unwrap();
        let mut per = vec![vec![0; 3]; 3];
        for i in &plan.items {
            per[i.raters[0]][i.system] += 1;
        }
        assert!(per.iter().flatten().all(|&c| c == 2));
    }

    #[test]
    fn system_balanced_rejects_entropy_targets() {
        let ds = layout(&[6], &[&["a", "b", "c"]], 3);
        let spec = AssignmentSpec {
            grouping: ItemGrouping::SystemBalanced,
            balancing: LoadBalancing::EntropyTarget { target: 0.5, tolerance: 0.03 },
            ..AssignmentSpec::default()
        };
        let err = assign(&ds, &all_docs(&ds), &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, AssignmentError::UnsupportedCombination(_)));
    }

    #[test]
    fn pairs_cover_each_rater_twice() {
        let ds = layout(&[6], &[&["a", "b", "c"]], 2);
        let plan = pair_assign(
            &ds,
            &all_docs(&ds),
            ItemGrouping::PseudoSideBySide,
            LoadBalancing::FullyBalanced,
            &mut ChaCha8Rng::seed_from_u64(6),
        )
        .unwrap();
        plan.check(&ds).unwrap();
        assert!(plan.items.iter().all(|i| i.raters.len() == 2 && i.raters[0] != i.raters[1]));
        assert_eq!(doc_counts(&plan, 3, 2), vec![4, 4, 4]);
        // two docs per pair -> uniform over the 3 pairs of the pool
        assert!((plan.entropy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pairs_need_three_raters() {
        let ds = layout(&[2, 2], &[&["a", "b"], &["c", "d"]], 1);
        let err = pair_assign(
            &ds,
            &all_docs(&ds),
            ItemGrouping::PseudoSideBySide,
            LoadBalancing::FullyBalanced,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(matches!(err, AssignmentError::BucketArityUnsupported { raters: 2, .. }));
    }

    #[test]
    fn subsample_quotas() {
        let raters: Vec<[String; 3]> = (0..7).map(|b| [format!("r{b}a"), format!("r{b}b"), format!("r{b}c")]).collect();
        let refs: Vec<Vec<&str>> = raters.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
        let refs: Vec<&[&str]> = refs.iter().map(Vec::as_slice).collect();
        let ds = layout(&[4; 7], &refs, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let per_bucket = |docs: &[usize]| {
            let mut c = vec![0; 7];
            for &d in docs {
                c[ds.documents()[d].bucket] += 1;
            }
            c
        };
        assert_eq!(per_bucket(&subsample_documents(&ds, 14, &mut rng).unwrap()), vec![2; 7]);
        let mut c = per_bucket(&subsample_documents(&ds, 15, &mut rng).unwrap());
        c.sort();
        assert_eq!(c, vec![2, 2, 2, 2, 2, 2, 3]);
        assert_eq!(subsample_documents(&ds, 28, &mut rng).unwrap(), all_docs(&ds));
        assert!(matches!(
            subsample_documents(&ds, 29, &mut rng),
            Err(AssignmentError::InvalidDocumentCount { .. })
        ));
    }

    #[test]
    fn subsample_quota_exceeding_small_bucket() {
        let ds = layout(&[1, 5], &[&["a", "b", "c"], &["d", "e", "f"]], 1);
        let err = subsample_documents(&ds, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, AssignmentError::QuotaExceedsBucket { quota: 2, size: 1, .. }));
    }

    #[test]
    fn balancing_strings() {
        assert_eq!("balanced".parse::<LoadBalancing>().unwrap(), LoadBalancing::FullyBalanced);
        assert_eq!(
            "entropy:0.5".parse::<LoadBalancing>().unwrap(),
            LoadBalancing::EntropyTarget { target: 0.5, tolerance: 0.03 }
        );
        assert_eq!(
            "entropy:0.4:0.01".parse::<LoadBalancing>().unwrap().to_string(),
            "entropy:0.4:0.01"
        );
        assert!("entropy:1.5".parse::<LoadBalancing>().is_err());
        assert_eq!("pSxS".parse::<ItemGrouping>().unwrap(), ItemGrouping::PseudoSideBySide);
    }
}
