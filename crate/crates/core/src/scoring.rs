//! Segment scores, system means and rater-wise normalization.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, KvDocument};
use crate::corpus::{ErrorAnnotation, Severity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("rater `{0}` has a zero mean score; multiplicative normalization is undefined")]
    DegenerateRater(String),
    #[error("no rater in the study marked any error; error normalization is undefined")]
    NoErrors,
    #[error("item (doc `{doc}`, system `{system}`) {problem}")]
    IncompleteStudy {
        doc: String,
        system: String,
        problem: String,
    },
}

// ---------------------------------------------------------------------------
// Weights

#[derive(Debug, Clone, PartialEq)]
struct WeightRule {
    /// `None` matches either severity.
    severity: Option<Severity>,
    /// Lower-cased category path components.
    prefix: Vec<String>,
    weight: f64,
}

/// Severity/category weights for converting error annotations to points.
///
/// Lookup picks the rule with the longest matching category prefix (matched
/// component-wise, case-insensitive); at equal length a severity-specific rule
/// beats a wildcard one. Without a matching rule the severity default applies.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    major: f64,
    minor: f64,
    rules: Vec<WeightRule>,
}

impl Default for WeightTable {
    /// Major = 5, Minor = 1, Minor Fluency/Punctuation = 0.1, Non-translation = 25.
    fn default() -> Self {
        let mut t = WeightTable::new(5.0, 1.0);
        t.set(Some(Severity::Minor), "Fluency/Punctuation", 0.1)
            .expect("valid default");
        t.set(None, "Non-translation", 25.0).expect("valid default");
        t
    }
}

fn split_category(category: &str) -> Vec<String> {
    category
        .split('/')
        .map(|c| c.trim().to_lowercase())
        .filter(|c| !c.is_empty())
        .collect()
}

impl WeightTable {
    pub fn new(major: f64, minor: f64) -> Self {
        WeightTable {
            major,
            minor,
            rules: Vec::new(),
        }
    }

    /// Adds or replaces a rule. Negative or non-finite weights are rejected.
    pub fn set(&mut self, severity: Option<Severity>, prefix: &str, weight: f64) -> Result<(), String> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(format!("weight must be a non-negative number, got {weight}"));
        }
        let prefix = split_category(prefix);
        if prefix.is_empty() {
            match severity {
                Some(Severity::Major) => self.major = weight,
                Some(Severity::Minor) => self.minor = weight,
                None => {
                    self.major = weight;
                    self.minor = weight;
                }
            }
            return Ok(());
        }
        self.rules.retain(|r| !(r.severity == severity && r.prefix == prefix));
        self.rules.push(WeightRule {
            severity,
            prefix,
            weight,
        });
        Ok(())
    }

    pub fn default_weight(&self, severity: Severity) -> f64 {
        match severity {
            Severity::Major => self.major,
            Severity::Minor => self.minor,
        }
    }

    pub fn weight(&self, severity: Severity, category: &str) -> f64 {
        let path = split_category(category);
        let mut best: Option<(usize, bool, f64)> = None;
        for rule in &self.rules {
            if rule.severity.is_some_and(|s| s != severity) {
                continue;
            }
            if rule.prefix.len() > path.len() || rule.prefix[..] != path[..rule.prefix.len()] {
                continue;
            }
            let key = (rule.prefix.len(), rule.severity.is_some());
            if best.is_none_or(|(len, specific, _)| key > (len, specific)) {
                best = Some((key.0, key.1, rule.weight));
            }
        }
        best.map(|b| b.2).unwrap_or_else(|| self.default_weight(severity))
    }

    /// Parses `severity[:category-prefix] = weight` lines. The severity is
    /// `major`, `minor`, or `*` / `any` for both.
    pub fn from_kv(doc: &KvDocument) -> Result<Self, ConfigError> {
        let root = doc.root();
        let mut table = WeightTable::default();
        for e in &root.entries {
            let bad = |message: String| ConfigError::InvalidValue {
                section: root.label(),
                key: e.key.clone(),
                message,
            };
            let (sev, prefix) = e.key.split_once(':').unwrap_or((e.key.as_str(), ""));
            let severity = match sev.trim().to_ascii_lowercase().as_str() {
                "*" | "any" => None,
                s => Some(s.parse::<Severity>().map_err(bad)?),
            };
            let weight: f64 = e.value.parse().map_err(|err: std::num::ParseFloatError| bad(err.to_string()))?;
            table.set(severity, prefix, weight).map_err(bad)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_kv(&KvDocument::read(path)?)
    }
}

/// Sum of annotation weights; 0 for an error-free segment.
///
/// Weights are added in sorted order so the result does not depend on the
/// order annotations appear in the input file.
pub fn segment_score(annotations: &[ErrorAnnotation], weights: &WeightTable) -> f64 {
    let mut w: Vec<f64> = annotations
        .iter()
        .map(|a| weights.weight(a.severity, &a.category))
        .collect();
    w.sort_unstable_by(f64::total_cmp);
    w.into_iter().sum()
}

// ---------------------------------------------------------------------------
// Studies

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormalizationScheme {
    Unnormalized,
    MeanNormalized,
    ErrorNormalized,
    ZScoreNormalized,
}

impl NormalizationScheme {
    pub const ALL: [NormalizationScheme; 4] = [
        NormalizationScheme::Unnormalized,
        NormalizationScheme::MeanNormalized,
        NormalizationScheme::ErrorNormalized,
        NormalizationScheme::ZScoreNormalized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormalizationScheme::Unnormalized => "none",
            NormalizationScheme::MeanNormalized => "mean",
            NormalizationScheme::ErrorNormalized => "error",
            NormalizationScheme::ZScoreNormalized => "zscore",
        }
    }
}

impl fmt::Display for NormalizationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormalizationScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" | "unnormalized" => Ok(NormalizationScheme::Unnormalized),
            "mean" | "meannormalized" => Ok(NormalizationScheme::MeanNormalized),
            "error" | "errornormalized" => Ok(NormalizationScheme::ErrorNormalized),
            "zscore" | "z" | "zscorenormalized" => Ok(NormalizationScheme::ZScoreNormalized),
            other => Err(format!("unknown normalization `{other}` (none|mean|error|zscore)")),
        }
    }
}

/// How multiplicative schemes treat a rater whose mean score is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DegeneratePolicy {
    /// Fail with [`ScoringError::DegenerateRater`].
    Strict,
    /// Leave the rater's scores unscaled.
    #[default]
    Lenient,
}

impl FromStr for DegeneratePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(DegeneratePolicy::Strict),
            "lenient" => Ok(DegeneratePolicy::Lenient),
            other => Err(format!("unknown policy `{other}` (strict|lenient)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyDocument {
    pub id: String,
    pub n_segments: usize,
}

/// One rater's (possibly normalized) segment scores for one item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRating {
    pub doc: usize,
    pub system: usize,
    pub rater: usize,
    pub scores: Vec<f64>,
    /// Errors marked by the rater on this item, severity ignored.
    pub errors: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RaterStats {
    /// Segment ratings contributed.
    pub n: usize,
    pub mean: f64,
    /// Sample (n - 1) standard deviation; 0 when n < 2.
    pub sd: f64,
    pub errors: u64,
}

/// The ratings selected for one study, indexed by study-local positions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredStudy {
    pub systems: Vec<String>,
    pub raters: Vec<String>,
    pub documents: Vec<StudyDocument>,
    pub ratings: Vec<StudyRating>,
}

impl ScoredStudy {
    /// Checks that every `(doc, system)` item carries at least one rating of
    /// the right length.
    pub fn new(
        systems: Vec<String>,
        raters: Vec<String>,
        documents: Vec<StudyDocument>,
        ratings: Vec<StudyRating>,
    ) -> Result<Self, ScoringError> {
        let study = ScoredStudy {
            systems,
            raters,
            documents,
            ratings,
        };
        let n_sys = study.systems.len();
        let mut covered = vec![false; study.documents.len() * n_sys];
        for r in &study.ratings {
            let doc = &study.documents[r.doc];
            if r.scores.len() != doc.n_segments {
                return Err(ScoringError::IncompleteStudy {
                    doc: doc.id.clone(),
                    system: study.systems[r.system].clone(),
                    problem: format!("has {} scores for {} segments", r.scores.len(), doc.n_segments),
                });
            }
            covered[r.doc * n_sys + r.system] = true;
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(ScoringError::IncompleteStudy {
                doc: study.documents[i / n_sys].id.clone(),
                system: study.systems[i % n_sys].clone(),
                problem: "has no rating".into(),
            });
        }
        Ok(study)
    }

    pub fn total_segments(&self) -> usize {
        self.documents.iter().map(|d| d.n_segments).sum()
    }

    /// Mean over every segment rating in the study.
    pub fn study_mean(&self) -> f64 {
        let (sum, n) = self
            .ratings
            .iter()
            .fold((0.0, 0usize), |(s, n), r| (s + r.scores.iter().sum::<f64>(), n + r.scores.len()));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Per-rater statistics over exactly the ratings in this study.
    pub fn rater_stats(&self) -> Vec<RaterStats> {
        let mut sums = vec![(0usize, 0.0f64, 0u64); self.raters.len()];
        for r in &self.ratings {
            let e = &mut sums[r.rater];
            e.0 += r.scores.len();
            e.1 += r.scores.iter().sum::<f64>();
            e.2 += u64::from(r.errors);
        }
        let mut ss = vec![0.0f64; self.raters.len()];
        for r in &self.ratings {
            let (n, sum, _) = sums[r.rater];
            let mean = sum / n as f64;
            ss[r.rater] += r.scores.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        }
        sums.iter()
            .zip(ss)
            .map(|(&(n, sum, errors), ss)| RaterStats {
                n,
                mean: if n == 0 { 0.0 } else { sum / n as f64 },
                sd: if n < 2 { 0.0 } else { (ss / (n - 1) as f64).sqrt() },
                errors,
            })
            .collect()
    }

    /// `[system][doc]` sums of effective segment scores. Multiply-rated items
    /// contribute the per-segment average over their raters.
    pub fn doc_sums(&self) -> Vec<Vec<f64>> {
        let n_docs = self.documents.len();
        let mut sums = vec![vec![0.0; n_docs]; self.systems.len()];
        let mut counts = vec![vec![0u32; n_docs]; self.systems.len()];
        for r in &self.ratings {
            sums[r.system][r.doc] += r.scores.iter().sum::<f64>();
            counts[r.system][r.doc] += 1;
        }
        for (srow, crow) in sums.iter_mut().zip(&counts) {
            for (s, &c) in srow.iter_mut().zip(crow) {
                if c > 1 {
                    *s /= f64::from(c);
                }
            }
        }
        sums
    }

    /// Effective per-document segment scores of one system.
    pub fn segment_scores(&self, system: usize) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.documents.iter().map(|d| vec![0.0; d.n_segments]).collect();
        let mut counts = vec![0u32; self.documents.len()];
        for r in self.ratings.iter().filter(|r| r.system == system) {
            counts[r.doc] += 1;
            for (acc, x) in out[r.doc].iter_mut().zip(&r.scores) {
                *acc += x;
            }
        }
        for (doc, c) in out.iter_mut().zip(counts) {
            if c > 1 {
                doc.iter_mut().for_each(|x| *x /= f64::from(c));
            }
        }
        out
    }

    /// Unweighted mean over all segments, per system (lower is better).
    pub fn system_means(&self) -> Vec<f64> {
        let n = self.total_segments() as f64;
        self.doc_sums()
            .iter()
            .map(|row| row.iter().sum::<f64>() / n)
            .collect()
    }

    pub fn system_mean_map(&self) -> BTreeMap<String, f64> {
        self.systems.iter().cloned().zip(self.system_means()).collect()
    }
}

/// Per-system mean of a scored study.
pub fn system_means(study: &ScoredStudy) -> BTreeMap<String, f64> {
    study.system_mean_map()
}

/// Applies `scheme` using rater statistics computed over this study only.
pub fn normalize(
    study: &ScoredStudy,
    scheme: NormalizationScheme,
    policy: DegeneratePolicy,
) -> Result<ScoredStudy, ScoringError> {
    let mut out = study.clone();
    if scheme == NormalizationScheme::Unnormalized {
        return Ok(out);
    }
    let stats = study.rater_stats();
    let factors: Vec<f64> = match scheme {
        NormalizationScheme::Unnormalized => unreachable!(),
        NormalizationScheme::MeanNormalized => mean_factors(study, &stats, policy)?,
        NormalizationScheme::ErrorNormalized => {
            let mut f = mean_factors(study, &stats, policy)?;
            let n_total: usize = stats.iter().map(|s| s.n).sum();
            let weighted: f64 = stats.iter().map(|s| s.n as f64 * s.errors as f64).sum();
            if weighted > 0.0 {
                let c = n_total as f64 / weighted;
                for (fr, s) in f.iter_mut().zip(&stats) {
                    *fr *= c * s.errors as f64;
                }
            } else if policy == DegeneratePolicy::Strict {
                return Err(ScoringError::NoErrors);
            }
            f
        }
        NormalizationScheme::ZScoreNormalized => {
            for r in &mut out.ratings {
                let s = stats[r.rater];
                for x in &mut r.scores {
                    *x = if s.sd > 0.0 { (*x - s.mean) / s.sd } else { 0.0 };
                }
            }
            return Ok(out);
        }
    };
    for r in &mut out.ratings {
        let f = factors[r.rater];
        r.scores.iter_mut().for_each(|x| *x *= f);
    }
    Ok(out)
}

fn mean_factors(
    study: &ScoredStudy,
    stats: &[RaterStats],
    policy: DegeneratePolicy,
) -> Result<Vec<f64>, ScoringError> {
    let overall = study.study_mean();
    stats
        .iter()
        .enumerate()
        .map(|(r, s)| {
            if s.n == 0 {
                Ok(1.0)
            } else if s.mean > 0.0 {
                Ok(overall / s.mean)
            } else {
                match policy {
                    DegeneratePolicy::Strict => Err(ScoringError::DegenerateRater(study.raters[r].clone())),
                    DegeneratePolicy::Lenient => Ok(1.0),
                }
            }
        })
        .collect()
}
