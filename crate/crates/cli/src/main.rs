mod manifest;
mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::SystemTime;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mqm_stability::corpus::{self, ColumnMapping, RatingDataset};
use mqm_stability::experiment::{
    default_grid, run_sweep_observed, simulate_study, with_thread_limit, Execution, ExperimentFile,
    StudyConfig, SyntheticSpec,
};
use mqm_stability::scoring::WeightTable;
use mqm_stability::stats::AgreementGranularity;

use crate::manifest::RunManifest;

#[derive(Parser)]
#[command(name = "mqmstab", version, about = "Stability analysis for multi-rater MQM evaluation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a ratings file and print its basic counts.
    Validate(DatasetArgs),
    /// Print dataset counts and the bucket layout.
    Stats(DatasetArgs),
    /// Pairwise rater agreement and per-rater score histograms.
    Agreement {
        #[command(flatten)]
        data: DatasetArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Histogram bin edges as `start:end:step`.
        #[arg(long, default_value = "0:25:1")]
        bins: String,
    },
    /// Write a synthetic dataset as canonical TSV.
    Gen {
        /// Generator spec (key = value file); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output TSV path.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a single simulated study and print its ranking.
    Simulate {
        #[command(flatten)]
        data: DatasetArgs,
        /// Experiment file; the first study (or `--study`) is used.
        #[arg(long)]
        config: PathBuf,
        /// Study label to run.
        #[arg(long)]
        study: Option<String>,
        /// Document budget; defaults to the first grid value or all documents.
        #[arg(long)]
        num_documents: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the study as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an SRP sweep over every study and document count.
    Sweep {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        config: PathBuf,
        /// Output directory for sweep.csv, sweep.json and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the experiment file's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread bound (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Include per-study means and significance matrices in sweep.json.
        #[arg(long)]
        with_studies: bool,
    },
}

#[derive(Args)]
struct DatasetArgs {
    /// Ratings TSV.
    #[arg(long)]
    dataset: PathBuf,
    /// Column mapping file.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Weight table file.
    #[arg(long)]
    weights: Option<PathBuf>,
}

/// Distinguishes bad input data (exit 1) from everything else (exit 3).
#[derive(Debug)]
struct InvalidData;

impl std::fmt::Display for InvalidData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("dataset failed validation")
    }
}

impl std::error::Error for InvalidData {}

impl DatasetArgs {
    fn inputs(&self) -> Result<(ColumnMapping, WeightTable)> {
        let mapping = match &self.mapping {
            Some(p) => ColumnMapping::load(p).with_context(|| format!("mapping {}", p.display()))?,
            None => ColumnMapping::default(),
        };
        let weights = match &self.weights {
            Some(p) => WeightTable::load(p).with_context(|| format!("weights {}", p.display()))?,
            None => WeightTable::default(),
        };
        Ok((mapping, weights))
    }

    /// Loads the dataset, printing every violation on failure.
    fn load(&self) -> Result<RatingDataset> {
        let (mapping, weights) = self.inputs()?;
        let report = corpus::validate(&self.dataset, &mapping, &weights);
        if report.is_valid() {
            return Ok(report.dataset.expect("valid report carries a dataset"));
        }
        if let [corpus::CorpusError::Io(msg)] = &report.violations[..] {
            bail!("cannot read dataset: {msg}");
        }
        for v in &report.violations {
            eprintln!("{}: {v}", self.dataset.display());
        }
        Err(InvalidData.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<InvalidData>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate(data) => {
            let ds = data.load()?;
            emit(&format!("OK {}\n{}\n", data.dataset.display(), ds.stats()))
        }
        Command::Stats(data) => {
            let ds = data.load()?;
            let mut text = format!("language pair      {}\n{}\n\nbucket\tdocs\traters\n", ds.language_pair, ds.stats());
            for b in corpus::bucket_layout(&ds) {
                text += &format!("{}\t{}\t{}\n", b.bucket_id, b.n_docs, b.rater_ids.join(","));
            }
            emit(&text)
        }
        Command::Agreement { data, out, bins } => {
            let ds = data.load()?;
            let edges = report::parse_bins(&bins)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let reports = [
                mqm_stability::stats::rater_agreement(&ds, AgreementGranularity::SingleDocument),
                mqm_stability::stats::rater_agreement(&ds, AgreementGranularity::AllShared),
            ];
            report::write_agreement(&out, &reports)?;
            report::write_histograms(&out.join("histograms.csv"), &ds, &edges)?;
            let mut text = String::new();
            for r in &reports {
                let mean = r.grand_mean.map_or("n/a".to_string(), |m| format!("{m:.4}"));
                text += &format!("{}: {} pairs, grand mean tau {mean}\n", report::granularity_name(r.granularity), r.pairs.len());
            }
            emit(&text)
        }
        Command::Gen { config, out, seed } => {
            let mut spec = match &config {
                Some(p) => SyntheticSpec::load(p).with_context(|| format!("spec {}", p.display()))?,
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let ds = spec.generate()?;
            create_parent(&out)?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut w = std::io::BufWriter::new(file);
            ds.write_tsv(&mut w)?;
            w.flush()?;
            eprintln!("wrote {} ({} documents, {} raters)", out.display(), ds.documents().len(), ds.raters().len());
            Ok(())
        }
        Command::Simulate {
            data,
            config,
            study,
            num_documents,
            seed,
            out,
        } => {
            let ds = data.load()?;
            let file = ExperimentFile::load(&config).with_context(|| format!("experiment {}", config.display()))?;
            let mut cfg = pick_study(&file, study.as_deref())?;
            cfg.n_documents = num_documents
                .or_else(|| file.grid.as_ref().map(|g| g[0]))
                .unwrap_or(ds.documents().len());
            let seed = seed.unwrap_or(file.seed);
            let (sim, ranking) = simulate_study(&ds, &cfg, seed)?;
            if let Some(out) = out {
                create_parent(&out)?;
                let json = serde_json::json!({ "study": sim, "ranking": ranking });
                fs::write(&out, serde_json::to_string_pretty(&json)? + "\n")?;
            }
            emit(&report::ranking_table(&ranking, sim.docs.len(), sim.plan.entropy))
        }
        Command::Sweep {
            data,
            config,
            out,
            seed,
            threads,
            with_studies,
        } => sweep(&data, &config, &out, seed, threads, with_studies),
    }
}

/// Writes to stdout; a closed pipe (`mqmstab ... | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn pick_study(file: &ExperimentFile, label: Option<&str>) -> Result<StudyConfig> {
    match label {
        None => Ok(file.configs[0].clone()),
        Some(l) => match file.configs.iter().find(|c| c.label == l) {
            Some(c) => Ok(c.clone()),
            None => bail!(
                "no study `{l}` (available: {})",
                file.configs.iter().map(|c| c.label.as_str()).collect::<Vec<_>>().join(", ")
            ),
        },
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn sweep(data: &DatasetArgs, config: &Path, out: &Path, seed: Option<u64>, threads: usize, with_studies: bool) -> Result<()> {
    let started = SystemTime::now();
    let ds = data.load()?;
    let config_bytes = fs::read(config).with_context(|| format!("reading {}", config.display()))?;
    let mut file = ExperimentFile::load(config).with_context(|| format!("experiment {}", config.display()))?;
    if let Some(s) = seed {
        file.seed = s;
        file.configs.iter_mut().for_each(|c| c.master_seed = s);
    }
    let grid = file.grid.clone().unwrap_or_else(|| default_grid(ds.documents().len()));
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let total: usize = file.configs.iter().map(|c| c.n_simulations).sum::<usize>() * grid.len();
    eprintln!(
        "sweep: {} studies x {} document counts = {total} simulated studies",
        file.configs.len(),
        grid.len()
    );
    let reported = AtomicUsize::new(0);
    let progress = |done: usize, total: usize| {
        let decile = done * 10 / total.max(1);
        if reported.fetch_max(decile, Ordering::Relaxed) < decile {
            eprintln!("  {:>3}% ({done}/{total})", decile * 10);
        }
    };
    let result = with_thread_limit(threads, || {
        run_sweep_observed(&ds, &file.configs, &grid, Execution::default(), &progress)
    })?;

    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    fs::write(out.join("sweep.csv"), &csv)?;
    let mut json = Vec::new();
    result.write_json(&mut json, with_studies)?;
    fs::write(out.join("sweep.json"), &json)?;

    for p in &result.points {
        match (&p.srp, &p.error) {
            (Some(v), _) => eprintln!("  {:<24} n={:<4} SRP {v:.4} ({} pairs)", p.config.label, p.n_documents, p.n_pairs),
            (None, Some(e)) => eprintln!("  {:<24} n={:<4} failed: {e}", p.config.label, p.n_documents),
            (None, None) => {}
        }
    }
    let manifest = RunManifest::new(&config_bytes, file.seed, &ds, threads, started, &result)?;
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    eprintln!("wrote sweep.csv, sweep.json and manifest.json to {}", out.display());
    Ok(())
}
