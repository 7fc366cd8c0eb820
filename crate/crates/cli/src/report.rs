use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mqm_stability::corpus::RatingDataset;
use mqm_stability::experiment::RankingResult;
use mqm_stability::stats::{rater_distribution, AgreementGranularity, AgreementReport};

/// Parses `start:end:step` into ascending bin edges.
pub fn parse_bins(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bins `{spec}`"))?;
    let [start, end, step] = parts[..] else {
        bail!("bins must be start:end:step, got `{spec}`");
    };
    if !step.is_finite() || step <= 0.0 || end <= start || !start.is_finite() || !end.is_finite() {
        bail!("bins `{spec}` need start < end and a positive step");
    }
    let n = ((end - start) / step).round() as usize;
    if n == 0 || n > 100_000 {
        bail!("bins `{spec}` give {n} bins");
    }
    Ok((0..=n).map(|i| start + step * i as f64).collect())
}

pub fn granularity_name(g: AgreementGranularity) -> &'static str {
    match g {
        AgreementGranularity::SingleDocument => "single_document",
        AgreementGranularity::AllShared => "all_shared",
    }
}

/// Writes `agreement_pairs.csv` and `agreement_summary.csv` into `dir`.
pub fn write_agreement(dir: &Path, reports: &[AgreementReport]) -> Result<()> {
    let mut pairs = csv::Writer::from_path(dir.join("agreement_pairs.csv"))?;
    pairs.write_record(["granularity", "rater_a", "rater_b", "shared_docs", "docs_used", "tau", "skipped"])?;
    let mut summary = csv::Writer::from_path(dir.join("agreement_summary.csv"))?;
    summary.write_record(["granularity", "pairs", "skipped_pairs", "grand_mean_tau"])?;
    for r in reports {
        let g = granularity_name(r.granularity);
        for p in &r.pairs {
            pairs.write_record([
                g,
                &p.rater_a,
                &p.rater_b,
                &p.shared_docs.to_string(),
                &p.docs_used.to_string(),
                &format!("{:.6}", p.tau),
                "",
            ])?;
        }
        for (a, b, why) in &r.skipped {
            pairs.write_record([g, a, b, "", "", "", why])?;
        }
        summary.write_record([
            g,
            &r.pairs.len().to_string(),
            &r.skipped.len().to_string(),
            &r.grand_mean.map_or(String::new(), |m| format!("{m:.6}")),
        ])?;
    }
    pairs.flush()?;
    summary.flush()?;
    Ok(())
}

/// One row per rater and bin, plus `below`/`above` overflow rows.
pub fn write_histograms(path: &Path, ds: &RatingDataset, edges: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rater", "bin", "lower", "upper", "count", "n", "mean", "median"])?;
    for rater in ds.raters() {
        let h = rater_distribution(ds, rater, edges)?;
        let (n, mean, median) = (h.n.to_string(), format!("{:.6}", h.mean), format!("{:.6}", h.median));
        let first = format!("{}", edges[0]);
        let last = format!("{}", edges[edges.len() - 1]);
        w.write_record([rater.as_str(), "below", "", &first, &h.below.to_string(), &n, &mean, &median])?;
        for (i, c) in h.counts.iter().enumerate() {
            w.write_record([
                rater.as_str(),
                &i.to_string(),
                &format!("{}", edges[i]),
                &format!("{}", edges[i + 1]),
                &c.to_string(),
                &n,
                &mean,
                &median,
            ])?;
        }
        w.write_record([rater.as_str(), "above", &last, "", &h.above.to_string(), &n, &mean, &median])?;
    }
    w.flush()?;
    Ok(())
}

/// Systems best first, with a `*` where the row system significantly beats the column.
pub fn ranking_table(r: &RankingResult, n_docs: usize, entropy: f64) -> String {
    let m = &r.matrix;
    let mut order: Vec<usize> = (0..r.means.len()).collect();
    order.sort_by(|&a, &b| r.means[a].total_cmp(&r.means[b]).then(a.cmp(&b)));
    let width = m.systems.iter().map(String::len).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{n_docs} documents, workload entropy {entropy:.4}, alpha {}, {} permutations, {} significant pairs",
        m.alpha,
        m.n_permutations,
        m.n_significant()
    );
    let _ = write!(out, "{:>4}  {:<width$}  {:>10} ", "rank", "system", "mean");
    for k in 0..order.len() {
        let _ = write!(out, " {:>2}", k + 1);
    }
    out.push('\n');
    for (rank, &i) in order.iter().enumerate() {
        let _ = write!(out, "{:>4}  {:<width$}  {:>10.4} ", rank + 1, m.systems[i], r.means[i]);
        for &j in &order {
            let mark = if i == j {
                "-"
            } else if m.sig[i][j] && m.better[i][j] {
                "*"
            } else {
                "."
            };
            let _ = write!(out, " {mark:>2}");
        }
        out.push('\n');
    }
    out
}
