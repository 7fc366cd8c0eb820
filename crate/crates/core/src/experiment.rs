//! Monte Carlo sweeps over study methodologies.
//!
//! A sweep runs every `(config, document count)` point for `n_simulations`
//! simulated studies and reports SRP over the resulting significance
//! matrices. Each study is an independent work unit whose RNG stream is
//! derived from `(master_seed, config, grid point, document set, study)`, so
//! results do not depend on how units are scheduled.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::assignment::{
    assign, subsample_documents, AssignmentError, AssignmentPlan, AssignmentSpec, ItemGrouping,
    LoadBalancing, DEFAULT_MAX_RETRIES,
};
use crate::config::{ConfigError, KvDocument, Section};
use crate::corpus::{CorpusError, ErrorAnnotation, RatingDataset, RatingRow, Severity};
use crate::scoring::{
    normalize, DegeneratePolicy, NormalizationScheme, ScoredStudy, ScoringError, StudyDocument,
    StudyRating, WeightTable,
};
use crate::stats::{significance_matrix, srp, SignificanceMatrix, StatsError};

pub const DEFAULT_GRID: [usize; 8] = [10, 20, 40, 60, 90, 120, 150, 181];
/// Studies sharing one document set in [`DocResampling::Per50Simulations`].
pub const STUDIES_PER_DOC_SET: usize = 50;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config `{label}`: {message}")]
    InvalidConfig { label: String, message: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("write failed: {0}")]
    Io(String),
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DocResampling {
    /// A fresh document subset for every study; SRP uses all ordered pairs.
    PerStudy,
    /// One subset per block of 50 studies; SRP only pairs studies within a block.
    Per50Simulations,
}

impl DocResampling {
    pub fn as_str(self) -> &'static str {
        match self {
            DocResampling::PerStudy => "per_study",
            DocResampling::Per50Simulations => "per_50",
        }
    }

    pub fn default_simulations(self) -> usize {
        match self {
            DocResampling::PerStudy => 100,
            DocResampling::Per50Simulations => 250,
        }
    }
}

impl fmt::Display for DocResampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocResampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "perstudy" | "study" | "always" => Ok(DocResampling::PerStudy),
            "per50" | "per50simulations" | "per50studies" | "block" => Ok(DocResampling::Per50Simulations),
            other => Err(format!("unknown document resampling `{other}` (per_study|per_50)")),
        }
    }
}

/// One study methodology plus its sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub label: String,
    pub grouping: ItemGrouping,
    pub balancing: LoadBalancing,
    pub normalization: NormalizationScheme,
    pub ratings_per_item: usize,
    /// Rating budget in documents; double-rated studies use half as many.
    pub n_documents: usize,
    pub doc_resampling: DocResampling,
    pub n_simulations: usize,
    pub n_permutations: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub max_retries: usize,
    pub degenerate: DegeneratePolicy,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            label: "default".into(),
            grouping: ItemGrouping::PseudoSideBySide,
            balancing: LoadBalancing::FullyBalanced,
            normalization: NormalizationScheme::Unnormalized,
            ratings_per_item: 1,
            n_documents: 10,
            doc_resampling: DocResampling::Per50Simulations,
            n_simulations: DocResampling::Per50Simulations.default_simulations(),
            n_permutations: 500,
            alpha: 0.05,
            master_seed: 0,
            max_retries: DEFAULT_MAX_RETRIES,
            degenerate: DegeneratePolicy::Lenient,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |message: String| {
            Err(ExperimentError::InvalidConfig {
                label: self.label.clone(),
                message,
            })
        };
        if self.n_documents == 0 {
            return fail("n_documents must be at least 1".into());
        }
        if self.n_simulations < 2 {
            return fail(format!("n_simulations must be at least 2, got {}", self.n_simulations));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.n_permutations == 0 {
            return fail("n_permutations must be at least 1".into());
        }
        if !matches!(self.ratings_per_item, 1 | 2) {
            return fail(format!("ratings_per_item must be 1 or 2, got {}", self.ratings_per_item));
        }
        if self.documents_used() == 0 {
            return fail(format!("a budget of {} document(s) cannot be double-rated", self.n_documents));
        }
        if self.grouping == ItemGrouping::SystemBalanced && self.balancing != LoadBalancing::FullyBalanced {
            return fail("system_balanced grouping requires load_balancing = balanced".into());
        }
        Ok(())
    }

    /// Documents actually rated: the budget, halved (rounding down) when
    /// every item is rated twice.
    pub fn documents_used(&self) -> usize {
        self.n_documents / self.ratings_per_item.max(1)
    }

    pub fn assignment_spec(&self) -> AssignmentSpec {
        AssignmentSpec {
            grouping: self.grouping,
            balancing: self.balancing,
            ratings_per_item: self.ratings_per_item,
            max_retries: self.max_retries,
        }
    }
}

/// The sampled documents, who rated what, and the normalized scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedStudy {
    pub docs: Vec<usize>,
    pub plan: AssignmentPlan,
    pub scores: ScoredStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingResult {
    /// Per-system mean segment score, in dataset system order.
    pub means: Vec<f64>,
    pub matrix: SignificanceMatrix,
}

/// Runs one study with a document subset drawn from `study_seed`.
pub fn simulate_study(
    ds: &RatingDataset,
    config: &StudyConfig,
    study_seed: u64,
) -> Result<(SimulatedStudy, RankingResult), ExperimentError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(study_seed);
    let docs = subsample_documents(ds, config.documents_used(), &mut rng)?;
    simulate_on(ds, config, &docs, &mut rng)
}

/// Runs one study on a fixed document subset.
pub fn simulate_on<R: Rng + ?Sized>(
    ds: &RatingDataset,
    config: &StudyConfig,
    docs: &[usize],
    rng: &mut R,
) -> Result<(SimulatedStudy, RankingResult), ExperimentError> {
    let plan = assign(ds, docs, &config.assignment_spec(), rng)?;
    let raw = select_ratings(ds, &plan)?;
    let scores = normalize(&raw, config.normalization, config.degenerate)?;
    let matrix = significance_matrix(&scores, config.alpha, config.n_permutations, rng)?;
    let ranking = RankingResult {
        means: scores.system_means(),
        matrix,
    };
    Ok((
        SimulatedStudy {
            docs: plan.docs.clone(),
            plan,
            scores,
        },
        ranking,
    ))
}

/// Pulls the real ratings named by `plan` out of the dataset.
pub fn select_ratings(ds: &RatingDataset, plan: &AssignmentPlan) -> Result<ScoredStudy, ExperimentError> {
    let documents = plan
        .docs
        .iter()
        .map(|&d| StudyDocument {
            id: ds.documents()[d].id.clone(),
            n_segments: ds.documents()[d].n_segments,
        })
        .collect();
    let local: std::collections::BTreeMap<usize, usize> =
        plan.docs.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut ratings = Vec::with_capacity(plan.items.len() * plan.ratings_per_item);
    for item in &plan.items {
        for &r in &item.raters {
            let rating = ds.rating(item.doc, item.system, r).ok_or({
                AssignmentError::IneligibleRater {
                    doc: item.doc,
                    system: item.system,
                    rater: r,
                }
            })?;
            ratings.push(StudyRating {
                doc: local[&item.doc],
                system: item.system,
                rater: r,
                scores: rating.scores().collect(),
                errors: rating.error_count(),
            });
        }
    }
    Ok(ScoredStudy::new(
        ds.systems().to_vec(),
        ds.raters().to_vec(),
        documents,
        ratings,
    )?)
}

// ---------------------------------------------------------------------------
// Seeding

const PURPOSE_DOCS: u64 = 1;
const PURPOSE_STUDY: u64 = 2;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for one work unit: the master seed picks the key, the coordinates pick
/// the stream.
pub fn unit_rng(master_seed: u64, coords: &[u64]) -> ChaCha8Rng {
    let stream = coords.iter().fold(0u64, |acc, &c| splitmix(acc ^ splitmix(c)));
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when built with the `parallel` feature, and runs
    /// sequentially otherwise.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Runs `f` with at most `threads` worker threads (0 = library default).
pub fn with_thread_limit<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(f);
            }
        }
    }
    let _ = threads;
    f()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRecord {
    /// Document set the study was drawn on; equal labels share documents.
    pub doc_set: usize,
    pub means: Vec<f64>,
    pub matrix: SignificanceMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub config_index: usize,
    pub config: StudyConfig,
    pub n_documents: usize,
    pub n_documents_used: usize,
    pub srp: Option<f64>,
    pub n_pairs: usize,
    /// First failure among the point's studies (e.g. an unreachable target).
    pub error: Option<String>,
    pub studies: Vec<StudyRecord>,
    /// Summed compute time of the point's studies.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

/// Grid values no larger than `n_docs`, with `n_docs` itself appended.
pub fn default_grid(n_docs: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = DEFAULT_GRID.iter().copied().filter(|&n| n < n_docs).collect();
    grid.push(n_docs);
    grid
}

struct Unit {
    point: usize,
    study: usize,
}

struct UnitOutcome {
    doc_set: usize,
    result: Result<RankingResult, String>,
    elapsed: Duration,
}

fn doc_set_of(config: &StudyConfig, study: usize) -> usize {
    match config.doc_resampling {
        DocResampling::PerStudy => study,
        DocResampling::Per50Simulations => study / STUDIES_PER_DOC_SET,
    }
}

fn run_unit(ds: &RatingDataset, config: &StudyConfig, coords: [u64; 2], study: usize) -> UnitOutcome {
    let start = Instant::now();
    let doc_set = doc_set_of(config, study);
    let [ci, gi] = coords;
    let result = (|| {
        let mut doc_rng = unit_rng(config.master_seed, &[ci, gi, doc_set as u64, 0, PURPOSE_DOCS]);
        let docs = subsample_documents(ds, config.documents_used(), &mut doc_rng)?;
        let mut rng = unit_rng(
            config.master_seed,
            &[ci, gi, doc_set as u64, study as u64, PURPOSE_STUDY],
        );
        simulate_on(ds, config, &docs, &mut rng).map(|(_, ranking)| ranking)
    })()
    .map_err(|e: ExperimentError| e.to_string());
    UnitOutcome {
        doc_set,
        result,
        elapsed: start.elapsed(),
    }
}

/// Runs every config at every grid point with the default execution mode.
pub fn run_sweep(
    ds: &RatingDataset,
    configs: &[StudyConfig],
    doc_count_grid: &[usize],
) -> Result<SweepResult, ExperimentError> {
    run_sweep_with(ds, configs, doc_count_grid, Execution::default())
}

pub fn run_sweep_with(
    ds: &RatingDataset,
    configs: &[StudyConfig],
    doc_count_grid: &[usize],
    execution: Execution,
) -> Result<SweepResult, ExperimentError> {
    run_sweep_observed(ds, configs, doc_count_grid, execution, &|_, _| {})
}

/// [`run_sweep_with`], calling `progress(finished, total)` as studies
/// complete (from worker threads, in no particular order).
pub fn run_sweep_observed(
    ds: &RatingDataset,
    configs: &[StudyConfig],
    doc_count_grid: &[usize],
    execution: Execution,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<SweepResult, ExperimentError> {
    let total = ds.documents().len();
    let mut points: Vec<(usize, usize, StudyConfig)> = Vec::new();
    for (ci, base) in configs.iter().enumerate() {
        for (gi, &n) in doc_count_grid.iter().enumerate() {
            let mut config = base.clone();
            config.n_documents = n;
            config.validate()?;
            if config.documents_used() > total {
                return Err(ExperimentError::InvalidConfig {
                    label: config.label.clone(),
                    message: format!("{n} documents requested but the dataset has {total}"),
                });
            }
            points.push((ci, gi, config));
        }
    }
    let units: Vec<Unit> = points
        .iter()
        .enumerate()
        .flat_map(|(p, (_, _, c))| (0..c.n_simulations).map(move |s| Unit { point: p, study: s }))
        .collect();
    let finished = AtomicUsize::new(0);
    let work = |u: &Unit| {
        let (ci, gi, config) = &points[u.point];
        let outcome = run_unit(ds, config, [*ci as u64, *gi as u64], u.study);
        progress(finished.fetch_add(1, Ordering::Relaxed) + 1, units.len());
        outcome
    };
    let outcomes: Vec<UnitOutcome> = match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            units.par_iter().map(work).collect()
        }
        _ => units.iter().map(work).collect(),
    };

    let mut outcomes = outcomes.into_iter();
    let mut result = Vec::with_capacity(points.len());
    for (ci, _, config) in points {
        let mut studies = Vec::with_capacity(config.n_simulations);
        let mut error = None;
        let mut wall_time = Duration::ZERO;
        for outcome in outcomes.by_ref().take(config.n_simulations) {
            wall_time += outcome.elapsed;
            match outcome.result {
                Ok(r) => studies.push(StudyRecord {
                    doc_set: outcome.doc_set,
                    means: r.means,
                    matrix: r.matrix,
                }),
                Err(e) => {
                    error.get_or_insert(e);
                }
            }
        }
        let (srp_value, n_pairs) = if error.is_some() {
            (None, 0)
        } else {
            let matrices: Vec<SignificanceMatrix> = studies.iter().map(|s| s.matrix.clone()).collect();
            let groups: Vec<usize> = studies.iter().map(|s| s.doc_set).collect();
            let grouped = (config.doc_resampling == DocResampling::Per50Simulations).then_some(&groups[..]);
            let s = srp(&matrices, grouped)?;
            (Some(s.value), s.pairs)
        };
        result.push(SweepPoint {
            config_index: ci,
            n_documents: config.n_documents,
            n_documents_used: config.documents_used(),
            config,
            srp: srp_value,
            n_pairs,
            error,
            studies,
            wall_time,
        });
    }
    Ok(SweepResult { points: result })
}

impl SweepResult {
    /// One row per point: config fields, budget, documents used, SRP, pairs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "config_index",
            "label",
            "item_grouping",
            "load_balancing",
            "normalization",
            "ratings_per_item",
            "doc_resampling",
            "n_simulations",
            "n_permutations",
            "alpha",
            "num_documents",
            "num_documents_used",
            "srp",
            "n_pairs",
            "error",
        ])?;
        for p in &self.points {
            let c = &p.config;
            w.write_record([
                p.config_index.to_string(),
                c.label.clone(),
                c.grouping.to_string(),
                c.balancing.to_string(),
                c.normalization.to_string(),
                c.ratings_per_item.to_string(),
                c.doc_resampling.to_string(),
                c.n_simulations.to_string(),
                c.n_permutations.to_string(),
                c.alpha.to_string(),
                p.n_documents.to_string(),
                p.n_documents_used.to_string(),
                p.srp.map(|v| format!("{v:.6}")).unwrap_or_default(),
                p.n_pairs.to_string(),
                p.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Full nested result; per-study means and matrices only if requested.
    pub fn write_json<W: Write>(&self, mut out: W, include_studies: bool) -> Result<(), ExperimentError> {
        let mut value = serde_json::to_value(self).map_err(|e| ExperimentError::Io(e.to_string()))?;
        if !include_studies {
            if let Some(points) = value.get_mut("points").and_then(|p| p.as_array_mut()) {
                for p in points {
                    if let Some(obj) = p.as_object_mut() {
                        obj.remove("studies");
                    }
                }
            }
        }
        serde_json::to_writer_pretty(&mut out, &value).map_err(|e| ExperimentError::Io(e.to_string()))?;
        writeln!(out)?;
        Ok(())
    }

    pub fn point(&self, label: &str, n_documents: usize) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.config.label == label && p.n_documents == n_documents)
    }
}

// ---------------------------------------------------------------------------
// Experiment files

const STUDY_KEYS: &[&str] = &[
    "item_grouping",
    "load_balancing",
    "normalization",
    "ratings_per_item",
    "doc_resampling",
    "n_simulations",
    "n_permutations",
    "alpha",
    "max_retries",
    "degenerate_rater",
];

/// A parsed experiment file: shared seed and grid plus one config per
/// `[study NAME]` section.
///
/// Keys in the root section are defaults that each study may override. A
/// file without study sections describes a single study.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    pub seed: u64,
    /// `num_documents`; `None` means the default grid.
    pub grid: Option<Vec<usize>>,
    pub configs: Vec<StudyConfig>,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_kv(&KvDocument::read(path)?)
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self, ExperimentError> {
        let root = doc.root();
        let mut root_keys = STUDY_KEYS.to_vec();
        root_keys.extend(["seed", "num_documents"]);
        root.check_keys(&root_keys)?;
        let seed = root.parse::<u64>("seed")?.unwrap_or(0);
        let grid = root.parse_list::<usize>("num_documents")?;
        if let Some(g) = &grid {
            if g.is_empty() || g.contains(&0) {
                return Err(ConfigError::InvalidValue {
                    section: root.label(),
                    key: "num_documents".into(),
                    message: "expected a list of positive document counts".into(),
                }
                .into());
            }
        }
        let mut defaults = StudyConfig {
            master_seed: seed,
            n_documents: grid.as_ref().map_or(1, |g| g[0]),
            ..StudyConfig::default()
        };
        apply_study_keys(root, &mut defaults, false)?;
        let sims_fixed = root.get("n_simulations").is_some();
        let mut configs = Vec::new();
        for section in &doc.sections[1..] {
            if section.kind != "study" {
                return Err(ConfigError::UnknownKey {
                    section: section.label(),
                    key: format!("[{}]", section.kind),
                }
                .into());
            }
            section.check_keys(STUDY_KEYS)?;
            let mut config = defaults.clone();
            config.label = section.name.clone().unwrap_or_else(|| format!("study{}", configs.len()));
            apply_study_keys(section, &mut config, sims_fixed)?;
            config.validate()?;
            configs.push(config);
        }
        if configs.is_empty() {
            defaults.validate()?;
            configs.push(defaults);
        }
        Ok(ExperimentFile { seed, grid, configs })
    }
}

/// `sims_fixed`: `n_simulations` was set explicitly at an outer level, so a
/// change of resampling mode does not reset it to that mode's default.
fn apply_study_keys(section: &Section, c: &mut StudyConfig, sims_fixed: bool) -> Result<(), ConfigError> {
    if let Some(v) = section.parse("item_grouping")? {
        c.grouping = v;
    }
    if let Some(v) = section.parse("load_balancing")? {
        c.balancing = v;
    }
    if let Some(v) = section.parse("normalization")? {
        c.normalization = v;
    }
    if let Some(v) = section.parse("ratings_per_item")? {
        c.ratings_per_item = v;
    }
    if let Some(v) = section.parse::<DocResampling>("doc_resampling")? {
        if c.doc_resampling != v && !sims_fixed && section.get("n_simulations").is_none() {
            c.n_simulations = v.default_simulations();
        }
        c.doc_resampling = v;
    }
    if let Some(v) = section.parse("n_simulations")? {
        c.n_simulations = v;
    }
    if let Some(v) = section.parse("n_permutations")? {
        c.n_permutations = v;
    }
    if let Some(v) = section.parse("alpha")? {
        c.alpha = v;
    }
    if let Some(v) = section.parse("max_retries")? {
        c.max_retries = v;
    }
    if let Some(v) = section.parse("degenerate_rater")? {
        c.degenerate = v;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RaterLayout {
    /// Bucket `b` is rated by raters `3b, 3b+1, 3b+2`.
    Disjoint,
    /// Bucket `b` is rated by raters `b, b+1, b+2` (mod the pool size).
    Rotating,
}

impl FromStr for RaterLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disjoint" => Ok(RaterLayout::Disjoint),
            "rotating" | "rotation" => Ok(RaterLayout::Rotating),
            other => Err(format!("unknown rater layout `{other}` (disjoint|rotating)")),
        }
    }
}

/// Parameters of the synthetic rating model.
///
/// The latent score of segment `k` of document `d` translated by system `s`
/// and rated by rater `r` is
///
/// ```text
/// h_r * (base_d + quality_s + item_noise[d,s,k] + rater_noise[r,d,s,k] + pref[r,d,s])
/// ```
///
/// clamped at zero, where `base_d` is lognormal document difficulty,
/// `item_noise` is shared by all raters, and `pref` is a per-(rater, item)
/// preference offset. Latent scores are rounded to 0.1 points and written out
/// as Major (5), Minor (1) and Minor punctuation (0.1) errors under the
/// default weight table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub segs_per_doc: usize,
    /// Latent offset per system; its length is the number of systems.
    pub quality: Vec<f64>,
    pub n_buckets: usize,
    pub layout: RaterLayout,
    /// Pool size for rotating layouts (disjoint uses `3 * n_buckets`).
    pub n_raters: usize,
    /// Harshness multipliers, cycled over raters.
    pub harshness: Vec<f64>,
    pub difficulty_mu: f64,
    pub difficulty_sigma: f64,
    pub item_noise: f64,
    pub rater_noise: f64,
    pub preference_noise: f64,
    pub language_pair: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_docs: 40,
            segs_per_doc: 5,
            quality: vec![0.0, 0.4, 0.8, 1.2, 1.6, 2.0],
            n_buckets: 2,
            layout: RaterLayout::Disjoint,
            n_raters: 6,
            harshness: vec![1.0],
            difficulty_mu: 1.5,
            difficulty_sigma: 0.5,
            item_noise: 0.5,
            rater_noise: 0.3,
            preference_noise: 0.0,
            language_pair: "synthetic".into(),
            seed: 0,
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "n_docs",
    "segs_per_doc",
    "quality",
    "n_buckets",
    "layout",
    "n_raters",
    "harshness",
    "difficulty_mu",
    "difficulty_sigma",
    "item_noise",
    "rater_noise",
    "preference_noise",
    "language_pair",
    "seed",
];

impl SyntheticSpec {
    pub fn pool_size(&self) -> usize {
        match self.layout {
            RaterLayout::Disjoint => 3 * self.n_buckets,
            RaterLayout::Rotating => self.n_raters,
        }
    }

    pub fn bucket_raters(&self, b: usize) -> [usize; 3] {
        match self.layout {
            RaterLayout::Disjoint => [3 * b, 3 * b + 1, 3 * b + 2],
            RaterLayout::Rotating => {
                let n = self.n_raters;
                [b % n, (b + 1) % n, (b + 2) % n]
            }
        }
    }

    pub fn harshness_of(&self, rater: usize) -> f64 {
        self.harshness[rater % self.harshness.len()]
    }

    /// Generates the dataset using the spec's own seed.
    pub fn generate(&self) -> Result<RatingDataset, ExperimentError> {
        generate_synthetic(self, &mut ChaCha8Rng::seed_from_u64(self.seed))
    }

    /// Zero noise and unit harshness; every rater agrees exactly.
    pub fn noiseless(mut self) -> Self {
        self.harshness = vec![1.0];
        self.item_noise = 0.0;
        self.rater_noise = 0.0;
        self.preference_noise = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.n_docs == 0 || self.segs_per_doc == 0 {
            return fail("n_docs and segs_per_doc must be positive".into());
        }
        if self.quality.len() < 2 {
            return fail("need at least 2 systems".into());
        }
        if self.n_buckets == 0 || self.n_buckets > self.n_docs {
            return fail(format!("n_buckets must be in 1..={}", self.n_docs));
        }
        if self.harshness.is_empty() || self.harshness.iter().any(|&h| h <= 0.0 || !h.is_finite()) {
            return fail("harshness must be a non-empty list of positive numbers".into());
        }
        let nonneg = [
            self.difficulty_sigma,
            self.item_noise,
            self.rater_noise,
            self.preference_noise,
        ];
        if nonneg.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return fail("noise scales must be finite and non-negative".into());
        }
        if self.quality.iter().chain([&self.difficulty_mu]).any(|x| !x.is_finite()) {
            return fail("quality offsets and difficulty_mu must be finite".into());
        }
        if self.layout == RaterLayout::Rotating {
            if self.n_raters < 3 {
                return fail("rotating layout needs at least 3 raters".into());
            }
            if self.n_buckets > self.n_raters {
                return fail("rotating layout repeats rater sets when n_buckets > n_raters".into());
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_kv(&KvDocument::read(path)?)
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self, ExperimentError> {
        let root = doc.root();
        root.check_keys(SPEC_KEYS)?;
        if let Some(extra) = doc.sections.get(1) {
            return Err(ConfigError::UnknownKey {
                section: extra.label(),
                key: format!("[{}]", extra.kind),
            }
            .into());
        }
        let mut s = SyntheticSpec::default();
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = root.parse(stringify!($field))? {
                    s.$field = v;
                }
            };
        }
        set!(n_docs);
        set!(segs_per_doc);
        set!(n_buckets);
        set!(layout);
        set!(n_raters);
        set!(difficulty_mu);
        set!(difficulty_sigma);
        set!(item_noise);
        set!(rater_noise);
        set!(preference_noise);
        set!(language_pair);
        set!(seed);
        if let Some(v) = root.parse_list("quality")? {
            s.quality = v;
        }
        if let Some(v) = root.parse_list("harshness")? {
            s.harshness = v;
        }
        if root.get("n_raters").is_none() && s.layout == RaterLayout::Disjoint {
            s.n_raters = 3 * s.n_buckets;
        }
        s.validate()?;
        Ok(s)
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated non-negative scale")
}

/// Builds a complete dataset from `spec` using `rng`.
///
/// Bucket sizes differ by at most one, with earlier buckets larger.
pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<RatingDataset, ExperimentError> {
    spec.validate()?;
    let difficulty = LogNormal::new(spec.difficulty_mu, spec.difficulty_sigma)
        .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
    let (item_noise, rater_noise, pref_noise) = (
        normal(spec.item_noise),
        normal(spec.rater_noise),
        normal(spec.preference_noise),
    );
    let per_bucket = spec.n_docs / spec.n_buckets;
    let extra = spec.n_docs % spec.n_buckets;
    let mut rows = Vec::new();
    let mut doc = 0usize;
    for b in 0..spec.n_buckets {
        let raters = spec.bucket_raters(b);
        for _ in 0..per_bucket + usize::from(b < extra) {
            let base = difficulty.sample(rng);
            for (s, q) in spec.quality.iter().enumerate() {
                let shared: Vec<f64> = (0..spec.segs_per_doc).map(|_| item_noise.sample(rng)).collect();
                for &r in &raters {
                    let pref = pref_noise.sample(rng);
                    let h = spec.harshness_of(r);
                    for (k, noise) in shared.iter().enumerate() {
                        let latent = h * (base + q + noise + pref + rater_noise.sample(rng));
                        push_segment(&mut rows, spec, b, doc, k, s, r, latent.max(0.0));
                    }
                }
            }
            doc += 1;
        }
    }
    Ok(RatingDataset::from_rows(
        rows,
        &WeightTable::default(),
        Some(spec.language_pair.as_str()),
    )?)
}

#[allow(clippy::too_many_arguments)]
fn push_segment(
    rows: &mut Vec<RatingRow>,
    spec: &SyntheticSpec,
    bucket: usize,
    doc: usize,
    seg: usize,
    system: usize,
    rater: usize,
    latent: f64,
) {
    let tenths = (latent * 10.0).round() as u64;
    let errors = [
        (tenths / 50, Severity::Major, "Accuracy/Mistranslation"),
        ((tenths % 50) / 10, Severity::Minor, "Fluency/Grammar"),
        (tenths % 10, Severity::Minor, "Fluency/Punctuation"),
    ];
    let row = |annotation: Option<ErrorAnnotation>| RatingRow {
        line: 0,
        lang_pair: Some(spec.language_pair.clone()),
        bucket_id: Some(format!("bucket{bucket}")),
        doc_id: format!("doc{doc}"),
        seg_index: seg,
        system_id: format!("sys{system}"),
        rater_id: format!("rater{rater}"),
        annotation,
        score: None,
        target_text: None,
    };
    let before = rows.len();
    for (n, severity, category) in errors {
        for _ in 0..n {
            rows.push(row(Some(ErrorAnnotation::new(severity, category))));
        }
    }
    if rows.len() == before {
        rows.push(row(None));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::DEFAULT_ENTROPY_TOLERANCE;

    fn small() -> RatingDataset {
        let spec = SyntheticSpec {
            n_docs: 12,
            segs_per_doc: 2,
            quality: vec![0.0, 0.5, 1.0],
            seed: 3,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(spec.seed)).unwrap()
    }

    #[test]
    fn synthetic_shape() {
        let ds = small();
        let st = ds.stats();
        assert_eq!((st.n_documents, st.n_systems, st.n_raters), (12, 3, 6));
        assert_eq!(st.n_segments, 24);
        assert_eq!(ds.buckets().len(), 2);
        assert!(ds.buckets().iter().all(|b| b.raters.len() == 3 && b.docs.len() == 6));
    }

    #[test]
    fn noiseless_raters_agree() {
        let spec = SyntheticSpec {
            n_docs: 6,
            ..SyntheticSpec::default()
        }
        .noiseless();
        let ds = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for d in 0..6 {
            for s in 0..ds.systems().len() {
                let items = ds.item_ratings(d, s);
                let first: Vec<f64> = items[0].scores().collect();
                assert!(items.iter().all(|i| i.scores().collect::<Vec<_>>() == first));
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            SyntheticSpec {
                quality: vec![0.0],
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                harshness: vec![0.0],
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                item_noise: -1.0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                n_buckets: 0,
                ..SyntheticSpec::default()
            },
        ];
        for spec in bad {
            assert!(matches!(
                generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(0)),
                Err(ExperimentError::InvalidSpec(_))
            ));
        }
    }

    #[test]
    fn study_is_deterministic_and_complete() {
        let ds = small();
        let config = StudyConfig {
            n_documents: 12,
            n_permutations: 100,
            ..StudyConfig::default()
        };
        let (study, a) = simulate_study(&ds, &config, 9).unwrap();
        let (_, b) = simulate_study(&ds, &config, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(study.docs, (0..12).collect::<Vec<_>>());
        study.plan.check(&ds).unwrap();
        assert!(a.means.iter().all(|m| m.is_finite()));
    }

    #[test]
    fn double_rating_halves_the_budget() {
        let ds = small();
        let config = StudyConfig {
            n_documents: 11,
            ratings_per_item: 2,
            n_permutations: 50,
            ..StudyConfig::default()
        };
        let (study, _) = simulate_study(&ds, &config, 1).unwrap();
        assert_eq!(study.docs.len(), 5);
        assert_eq!(study.scores.ratings.len(), 5 * 3 * 2);
    }

    #[test]
    fn config_validation() {
        let bad = [
            StudyConfig {
                n_simulations: 1,
                ..StudyConfig::default()
            },
            StudyConfig {
                alpha: 1.0,
                ..StudyConfig::default()
            },
            StudyConfig {
                ratings_per_item: 3,
                ..StudyConfig::default()
            },
            StudyConfig {
                n_documents: 1,
                ratings_per_item: 2,
                ..StudyConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(ExperimentError::InvalidConfig { .. })));
        }
    }

    #[test]
    fn grid_defaults() {
        assert_eq!(default_grid(181), DEFAULT_GRID.to_vec());
        assert_eq!(default_grid(40), vec![10, 20, 40]);
        assert_eq!(default_grid(50), vec![10, 20, 40, 50]);
    }

    #[test]
    fn unit_streams_differ() {
        let a: u64 = unit_rng(7, &[0, 0, 0, 1, PURPOSE_STUDY]).random();
        let b: u64 = unit_rng(7, &[0, 0, 0, 2, PURPOSE_STUDY]).random();
        let c: u64 = unit_rng(7, &[0, 0, 0, 1, PURPOSE_STUDY]).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn experiment_file() {
        let text = "seed = 11\nnum_documents = 10, 20\nn_simulations = 20\n\
                    [study psxs]\nitem_grouping = psxs\n\
                    [study flat]\nitem_grouping = none\nload_balancing = entropy:0.5\nnormalization = zscore\n\
                    doc_resampling = per_study\n";
        let f = ExperimentFile::from_kv(&text.parse().unwrap()).unwrap();
        assert_eq!(f.seed, 11);
        assert_eq!(f.grid, Some(vec![10, 20]));
        assert_eq!(f.configs.len(), 2);
        assert_eq!(f.configs[0].label, "psxs");
        assert_eq!(f.configs[0].n_simulations, 20);
        let flat = &f.configs[1];
        assert_eq!(flat.grouping, ItemGrouping::NoGrouping);
        assert_eq!(flat.normalization, NormalizationScheme::ZScoreNormalized);
        assert_eq!(flat.doc_resampling, DocResampling::PerStudy);
        assert_eq!(flat.n_simulations, 20);
        assert_eq!(flat.master_seed, 11);
        assert_eq!(
            flat.balancing,
            LoadBalancing::EntropyTarget {
                target: 0.5,
                tolerance: DEFAULT_ENTROPY_TOLERANCE
            }
        );
    }

    #[test]
    fn experiment_file_errors_name_the_field() {
        let err = ExperimentFile::from_kv(&"[study x]\nitem_groupin = psxs\n".parse().unwrap()).unwrap_err();
        assert!(err.to_string().contains("item_groupin"), "{err}");
        let err = ExperimentFile::from_kv(&"[study x]\nalpha = 2\n".parse().unwrap()).unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        let err = ExperimentFile::from_kv(&"normalization = fancy\n".parse().unwrap()).unwrap_err();
        assert!(err.to_string().contains("normalization"), "{err}");
    }

    #[test]
    fn synthetic_spec_file() {
        let s = SyntheticSpec::from_kv(&"n_docs = 9\nn_buckets = 3\nharshness = 0.5, 1, 2\nquality = 0, 1\n".parse().unwrap())
            .unwrap();
        assert_eq!(s.n_docs, 9);
        assert_eq!(s.n_raters, 9);
        assert_eq!(s.harshness, vec![0.5, 1.0, 2.0]);
        assert!(SyntheticSpec::from_kv(&"noise = 1\n".parse().unwrap()).is_err());
    }
}
