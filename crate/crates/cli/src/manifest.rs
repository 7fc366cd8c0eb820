use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use mqm_stability::corpus::RatingDataset;
use mqm_stability::experiment::SweepResult;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Reproducibility metadata written next to every sweep.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// SHA-256 of the experiment file bytes.
    pub config_hash: String,
    pub master_seed: u64,
    /// SHA-256 of the dataset's canonical TSV export.
    pub dataset_fingerprint: String,
    pub threads: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub points: Vec<PointTiming>,
}

#[derive(Debug, Serialize)]
pub struct PointTiming {
    pub label: String,
    pub n_documents: usize,
    /// Summed compute time of the point's studies.
    pub compute_ms: u128,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unix(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Hash of the canonical export with its data lines sorted, so the value
/// depends on which rows exist and not on the order they were read in.
pub fn dataset_fingerprint(ds: &RatingDataset) -> Result<String> {
    let mut tsv = Vec::new();
    ds.write_tsv(&mut tsv)?;
    let mut lines: Vec<&[u8]> = tsv.split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
    if lines.len() > 1 {
        lines[1..].sort_unstable();
    }
    let mut hasher = Sha256::new();
    for line in lines {
        hasher.update(line);
        hasher.update(b"\n");
    }
    Ok(hex(&hasher.finalize()))
}

impl RunManifest {
    pub fn new(
        config: &[u8],
        master_seed: u64,
        ds: &RatingDataset,
        threads: usize,
        started: SystemTime,
        result: &SweepResult,
    ) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: hex(&Sha256::digest(config)),
            master_seed,
            dataset_fingerprint: dataset_fingerprint(ds)?,
            threads,
            started_unix: unix(started),
            finished_unix: unix(SystemTime::now()),
            points: result
                .points
                .iter()
                .map(|p| PointTiming {
                    label: p.config.label.clone(),
                    n_documents: p.n_documents,
                    compute_ms: p.wall_time.as_millis(),
                })
                .collect(),
        })
    }
}
