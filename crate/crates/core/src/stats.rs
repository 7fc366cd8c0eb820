//! Statistical primitives: grouped permutation tests, significance matrices,
//! Significant Ranking Preservation, workload entropy and rater agreement.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::RatingDataset;
use crate::scoring::ScoredStudy;

/// Relative slack when comparing a permuted statistic to the observed one,
/// so that permutations equal up to summation order count as ties.
const TIE_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("score vectors disagree on documents or segment counts")]
    MismatchedDocuments,
    #[error("need at least one permutation")]
    NoPermutations,
    #[error("need at least two systems, got {0}")]
    TooFewSystems(usize),
    #[error("system sets differ")]
    SystemSetMismatch,
    #[error("no admissible ordered study pairs")]
    NoAdmissiblePairs,
    #[error("workload is empty")]
    EmptyWorkload,
    #[error("rater pool of size {pool} cannot hold {raters} raters (need at least 2)")]
    InvalidPool { pool: usize, raters: usize },
    #[error("Kendall's tau is undefined when one ranking is entirely tied")]
    UndefinedTau,
    #[error("unknown rater `{0}`")]
    UnknownRater(String),
    #[error("bin edges must be strictly increasing with at least two entries")]
    InvalidBins,
}

// ---------------------------------------------------------------------------
// Permutation tests

/// Two-sided grouped permutation test between two systems.
///
/// `scores_a[d]` and `scores_b[d]` are the segment scores of document `d`.
/// Each permutation swaps the two systems' labels on all segments of a
/// document at once, independently per document with probability 1/2. The
/// statistic is the absolute difference of segment means, and the p-value
/// uses the add-one estimator `(1 + hits) / (1 + n_perm)`.
pub fn permutation_test<R: RngCore + ?Sized>(
    scores_a: &[Vec<f64>],
    scores_b: &[Vec<f64>],
    n_perm: usize,
    rng: &mut R,
) -> Result<f64, StatsError> {
    if scores_a.len() != scores_b.len()
        || scores_a.iter().zip(scores_b).any(|(a, b)| a.len() != b.len())
    {
        return Err(StatsError::MismatchedDocuments);
    }
    let sums = vec![
        scores_a.iter().map(|d| d.iter().sum()).collect::<Vec<f64>>(),
        scores_b.iter().map(|d| d.iter().sum()).collect::<Vec<f64>>(),
    ];
    Ok(pairwise_p_values(&sums, n_perm, rng)?[0][1])
}

/// p-values for every system pair from per-document score sums
/// (`doc_sums[system][doc]`).
///
/// Every pair is tested with the grouped sign-flip scheme of
/// [`permutation_test`]; the random flip vectors are shared across pairs, so
/// each permutation costs one pass over the documents per system. Since all
/// systems rate the same segments, comparing sums is equivalent to comparing
/// means. The result is symmetric with a diagonal of 1.
pub fn pairwise_p_values<R: RngCore + ?Sized>(
    doc_sums: &[Vec<f64>],
    n_perm: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, StatsError> {
    if n_perm == 0 {
        return Err(StatsError::NoPermutations);
    }
    let n_sys = doc_sums.len();
    let n_docs = doc_sums.first().map_or(0, Vec::len);
    if doc_sums.iter().any(|row| row.len() != n_docs) {
        return Err(StatsError::MismatchedDocuments);
    }
    let totals: Vec<f64> = doc_sums.iter().map(|row| row.iter().sum()).collect();
    let abs_totals: Vec<f64> = doc_sums.iter().map(|row| row.iter().map(|x| x.abs()).sum()).collect();

    let mut hits = vec![vec![0usize; n_sys]; n_sys];
    let mut words = vec![0u64; n_docs.div_ceil(64)];
    let mut flipped = vec![0.0f64; n_sys];
    for _ in 0..n_perm {
        words.iter_mut().for_each(|w| *w = rng.next_u64());
        for (t, row) in flipped.iter_mut().zip(doc_sums) {
            let mut acc = 0.0;
            for (d, x) in row.iter().enumerate() {
                if (words[d >> 6] >> (d & 63)) & 1 == 1 {
                    acc -= x;
                } else {
                    acc += x;
                }
            }
            *t = acc;
        }
        for i in 0..n_sys {
            for j in (i + 1)..n_sys {
                let observed = (totals[i] - totals[j]).abs();
                let permuted = (flipped[i] - flipped[j]).abs();
                let eps = TIE_EPS * (abs_totals[i] + abs_totals[j]);
                if permuted + eps >= observed {
                    hits[i][j] += 1;
                }
            }
        }
    }

    let mut p = vec![vec![1.0; n_sys]; n_sys];
    for i in 0..n_sys {
        for j in (i + 1)..n_sys {
            let v = (1 + hits[i][j]) as f64 / (1 + n_perm) as f64;
            p[i][j] = v;
            p[j][i] = v;
        }
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Significance matrices and SRP

/// Pairwise outcome of one study.
///
/// `sig[i][j]`: system `i` is significantly better (lower mean) than `j`.
/// `better[i][j]`: `i` has the strictly lower mean, ignoring significance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceMatrix {
    pub systems: Vec<String>,
    pub sig: Vec<Vec<bool>>,
    pub better: Vec<Vec<bool>>,
    pub alpha: f64,
    pub n_permutations: usize,
}

impl SignificanceMatrix {
    /// Builds the matrix from system means and symmetric pairwise p-values.
    pub fn from_means(
        systems: Vec<String>,
        means: &[f64],
        p_values: &[Vec<f64>],
        alpha: f64,
        n_permutations: usize,
    ) -> Self {
        let n = systems.len();
        let mut sig = vec![vec![false; n]; n];
        let mut better = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j && means[i] < means[j] {
                    better[i][j] = true;
                    sig[i][j] = p_values[i][j] <= alpha;
                }
            }
        }
        SignificanceMatrix {
            systems,
            sig,
            better,
            alpha,
            n_permutations,
        }
    }

    /// A matrix whose `better` relation follows `means` and whose significant
    /// pairs are exactly `sig_pairs` (each must agree with `better`).
    pub fn from_parts(systems: Vec<String>, means: &[f64], sig_pairs: &[(usize, usize)]) -> Self {
        let n = systems.len();
        let mut p = vec![vec![1.0; n]; n];
        for &(i, j) in sig_pairs {
            assert!(means[i] < means[j], "significant pair must follow the means");
            p[i][j] = 0.0;
            p[j][i] = 0.0;
        }
        SignificanceMatrix::from_means(systems, means, &p, 0.05, 0)
    }

    pub fn n_significant(&self) -> usize {
        self.sig.iter().flatten().filter(|&&b| b).count()
    }

    /// `sig ⊆ better`, antisymmetric, empty diagonal.
    pub fn is_consistent(&self) -> bool {
        let n = self.systems.len();
        (0..n).all(|i| {
            !self.sig[i][i]
                && !self.better[i][i]
                && (0..n).all(|j| {
                    (!self.sig[i][j] || self.better[i][j])
                        && !(self.better[i][j] && self.better[j][i])
                })
        })
    }
}

/// Significance of every system pair in a scored study.
pub fn significance_matrix<R: RngCore + ?Sized>(
    study: &ScoredStudy,
    alpha: f64,
    n_perm: usize,
    rng: &mut R,
) -> Result<SignificanceMatrix, StatsError> {
    if study.systems.len() < 2 {
        return Err(StatsError::TooFewSystems(study.systems.len()));
    }
    let sums = study.doc_sums();
    let p = pairwise_p_values(&sums, n_perm, rng)?;
    Ok(SignificanceMatrix::from_means(
        study.systems.clone(),
        &study.system_means(),
        &p,
        alpha,
        n_perm,
    ))
}

/// 1 iff every significant pair of `e1` is a better pair of `e2`.
pub fn sr(e1: &SignificanceMatrix, e2: &SignificanceMatrix) -> Result<bool, StatsError> {
    if e1.systems != e2.systems {
        return Err(StatsError::SystemSetMismatch);
    }
    Ok(sr_unchecked(e1, e2))
}

fn sr_unchecked(e1: &SignificanceMatrix, e2: &SignificanceMatrix) -> bool {
    e1.sig
        .iter()
        .zip(&e2.better)
        .all(|(s_row, b_row)| s_row.iter().zip(b_row).all(|(&s, &b)| !s || b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Srp {
    pub value: f64,
    pub pairs: usize,
}

/// Significant Ranking Preservation over ordered pairs of distinct studies.
///
/// With `groups`, only pairs whose group labels are equal are admissible
/// (e.g. studies sharing the same document set).
pub fn srp(studies: &[SignificanceMatrix], groups: Option<&[usize]>) -> Result<Srp, StatsError> {
    if let Some(g) = groups {
        assert_eq!(g.len(), studies.len(), "one group label per study");
    }
    if let Some(first) = studies.first() {
        if studies.iter().any(|s| s.systems != first.systems) {
            return Err(StatsError::SystemSetMismatch);
        }
    }
    let mut pairs = 0usize;
    let mut preserved = 0usize;
    for (i, e1) in studies.iter().enumerate() {
        for (j, e2) in studies.iter().enumerate() {
            if i == j || groups.is_some_and(|g| g[i] != g[j]) {
                continue;
            }
            pairs += 1;
            if sr_unchecked(e1, e2) {
                preserved += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(StatsError::NoAdmissiblePairs);
    }
    Ok(Srp {
        value: preserved as f64 / pairs as f64,
        pairs,
    })
}

// ---------------------------------------------------------------------------
// Workload entropy

/// Item-rating counts per rater.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WorkloadDistribution {
    pub counts: BTreeMap<String, u64>,
}

impl WorkloadDistribution {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// `-Σ p log p / log |pool|` over the full pool; absent raters count as zero.
pub fn normalized_entropy(w: &WorkloadDistribution, pool_size: usize) -> Result<f64, StatsError> {
    if pool_size < 2 || w.counts.len() > pool_size {
        return Err(StatsError::InvalidPool {
            pool: pool_size,
            raters: w.counts.len(),
        });
    }
    if w.total() == 0 {
        return Err(StatsError::EmptyWorkload);
    }
    let counts: Vec<u64> = w.counts.values().copied().collect();
    Ok(entropy_of_counts(&counts, pool_size))
}

/// Normalized entropy of raw counts. Caller guarantees `pool_size >= 2` and a
/// positive total.
pub fn entropy_of_counts(counts: &[u64], pool_size: usize) -> f64 {
    let total: u64 = counts.iter().sum();
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    (h / (pool_size as f64).ln()).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Agreement

/// Kendall's tau-b between two score maps over the same systems. Rankings
/// are by ascending score; the sign convention is the usual one, so equal
/// orderings give +1.
pub fn kendall_tau(means1: &BTreeMap<String, f64>, means2: &BTreeMap<String, f64>) -> Result<f64, StatsError> {
    if !means1.keys().eq(means2.keys()) {
        return Err(StatsError::SystemSetMismatch);
    }
    let x: Vec<f64> = means1.values().copied().collect();
    let y: Vec<f64> = means2.values().copied().collect();
    kendall_tau_b(&x, &y)
}

pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::SystemSetMismatch);
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewSystems(x.len()));
    }
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {
                    tie_x += 1;
                    tie_y += 1;
                }
                (true, false) => tie_x += 1,
                (false, true) => tie_y += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
    }
    let n0 = (x.len() * (x.len() - 1) / 2) as i64;
    let denom = (((n0 - tie_x) * (n0 - tie_y)) as f64).sqrt();
    if denom == 0.0 {
        return Err(StatsError::UndefinedTau);
    }
    Ok((concordant - discordant) as f64 / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AgreementGranularity {
    /// Mean over shared documents of per-document system-ranking tau.
    SingleDocument,
    /// One tau over system means pooled across all shared documents.
    AllShared,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAgreement {
    pub rater_a: String,
    pub rater_b: String,
    pub shared_docs: usize,
    /// Documents whose tau was defined (single-document granularity).
    pub docs_used: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub granularity: AgreementGranularity,
    pub pairs: Vec<PairAgreement>,
    /// Mean over `pairs`; `None` when no pair produced a tau.
    pub grand_mean: Option<f64>,
    /// Pairs without a usable tau, with the reason.
    pub skipped: Vec<(String, String, String)>,
}

/// Pairwise Kendall agreement between raters on the documents both rated.
pub fn rater_agreement(ds: &RatingDataset, granularity: AgreementGranularity) -> AgreementReport {
    let n_raters = ds.raters().len();
    let n_sys = ds.systems().len();
    // docs rated by each rater
    let mut rater_docs: Vec<Vec<usize>> = vec![Vec::new(); n_raters];
    for b in ds.buckets() {
        for &r in &b.raters {
            rater_docs[r].extend(b.docs.iter().copied());
        }
    }
    let doc_means = |doc: usize, rater: usize| -> Vec<f64> {
        let n = ds.documents()[doc].n_segments as f64;
        (0..n_sys)
            .map(|s| {
                ds.rating(doc, s, rater)
                    .map(|r| r.scores().sum::<f64>() / n)
                    .expect("rater belongs to the doc's bucket")
            })
            .collect()
    };

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for a in 0..n_raters {
        for b in (a + 1)..n_raters {
            let shared: Vec<usize> = rater_docs[a]
                .iter()
                .copied()
                .filter(|d| rater_docs[b].contains(d))
                .collect();
            let name = |r: usize| ds.raters()[r].clone();
            if shared.is_empty() {
                skipped.push((name(a), name(b), "no shared documents".to_string()));
                continue;
            }
            let outcome = match granularity {
                AgreementGranularity::SingleDocument => {
                    let taus: Vec<f64> = shared
                        .iter()
                        .filter_map(|&d| kendall_tau_b(&doc_means(d, a), &doc_means(d, b)).ok())
                        .collect();
                    if taus.is_empty() {
                        None
                    } else {
                        Some((taus.iter().sum::<f64>() / taus.len() as f64, taus.len()))
                    }
                }
                AgreementGranularity::AllShared => {
                    let pooled = |r: usize| -> Vec<f64> {
                        let mut acc = vec![0.0; n_sys];
                        let mut n = 0usize;
                        for &d in &shared {
                            n += ds.documents()[d].n_segments;
                            for (s, slot) in acc.iter_mut().enumerate() {
                                *slot += ds.rating(d, s, r).map_or(0.0, |x| x.scores().sum());
                            }
                        }
                        acc.iter().map(|x| x / n as f64).collect()
                    };
                    kendall_tau_b(&pooled(a), &pooled(b)).ok().map(|t| (t, shared.len()))
                }
            };
            match outcome {
                Some((tau, docs_used)) => pairs.push(PairAgreement {
                    rater_a: name(a),
                    rater_b: name(b),
                    shared_docs: shared.len(),
                    docs_used,
                    tau,
                }),
                None => skipped.push((name(a), name(b), "tau undefined (all systems tied)".to_string())),
            }
        }
    }
    let grand_mean = (!pairs.is_empty()).then(|| pairs.iter().map(|p| p.tau).sum::<f64>() / pairs.len() as f64);
    AgreementReport {
        granularity,
        pairs,
        grand_mean,
        skipped,
    }
}

// ---------------------------------------------------------------------------
// Score distributions

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub rater: String,
    pub edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i+1])`; the last bin is closed.
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
    pub n: u64,
    pub mean: f64,
    pub median: f64,
}

impl Histogram {
    /// Cumulative fraction of scores up to the end of each bin (underflow included).
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = self.below;
        self.counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / self.n.max(1) as f64
            })
            .collect()
    }
}

/// Histogram of one rater's raw segment scores.
pub fn rater_distribution(ds: &RatingDataset, rater_id: &str, bin_edges: &[f64]) -> Result<Histogram, StatsError> {
    let rater = ds
        .rater_index(rater_id)
        .ok_or_else(|| StatsError::UnknownRater(rater_id.to_string()))?;
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(StatsError::InvalidBins);
    }
    let mut scores: Vec<f64> = Vec::new();
    for b in ds.buckets().iter().filter(|b| b.raters.contains(&rater)) {
        for &d in &b.docs {
            for s in 0..ds.systems().len() {
                if let Some(r) = ds.rating(d, s, rater) {
                    scores.extend(r.scores());
                }
            }
        }
    }
    let n_bins = bin_edges.len() - 1;
    let last = bin_edges[n_bins];
    let mut counts = vec![0u64; n_bins];
    let (mut below, mut above) = (0u64, 0u64);
    for &x in &scores {
        if x < bin_edges[0] {
            below += 1;
        } else if x > last {
            above += 1;
        } else if x == last {
            counts[n_bins - 1] += 1;
        } else {
            let k = bin_edges.partition_point(|&e| e <= x) - 1;
            counts[k] += 1;
        }
    }
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    let median = match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => scores[n / 2],
        _ => 0.5 * (scores[n / 2 - 1] + scores[n / 2]),
    };
    let mean = if n == 0 { f64::NAN } else { scores.iter().sum::<f64>() / n as f64 };
    Ok(Histogram {
        rater: rater_id.to_string(),
        edges: bin_edges.to_vec(),
        counts,
        below,
        above,
        n: n as u64,
        mean,
        median,
    })
}
