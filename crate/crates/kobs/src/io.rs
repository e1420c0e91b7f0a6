//! File formats: trajectory CSV with a JSON manifest, JSON model files and
//! the CSV tables written by each command.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces the values bit for bit and reruns produce identical
//! bytes.

use std::collections::BTreeMap;
use std::path::Path;

use kobs_core::decomposition::{DecomposedModel, RankRow, SensitivityReport};
use kobs_core::delayembed::{DelayLeaderboardEntry, ReconstructionRow};
use kobs_core::ocdmd::{FitReport, LeaderboardEntry};
use kobs_core::simulator::{Dataset, GeneNetworkSpec, Split, Trajectory};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const MANIFEST: &str = "manifest.json";
pub const MODEL: &str = "model.json";
pub const FIT_REPORT: &str = "fit_report.csv";
pub const LEADERBOARD: &str = "leaderboard.csv";
pub const SENSITIVITY: &str = "sensitivity.csv";
pub const SENSITIVITY_MATRIX: &str = "sensitivity_matrix.csv";
pub const DECOMPOSITION: &str = "decomposition.csv";
pub const SENSITIVITY_SVG: &str = "sensitivity.svg";
pub const DELAY_MODEL: &str = "delay_model.json";
pub const DELAY_LEADERBOARD: &str = "delay_leaderboard.csv";
pub const RECONSTRUCTION: &str = "reconstruction.csv";
pub const RECONSTRUCTION_SVG: &str = "reconstruction.svg";
pub const VERIFY: &str = "verify.csv";
pub const REPORT: &str = "report.md";

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub ic_id: usize,
    pub split: Split,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_name: String,
    pub seed: u64,
    pub state_dim: usize,
    pub output_dim: usize,
    pub sample_time: f64,
    pub trajectories: Vec<ManifestEntry>,
    /// Full simulator description when the data were simulated here.
    pub spec: Option<GeneNetworkSpec>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn write_dataset(dir: &Path, dataset: &Dataset, spec: Option<&GeneNetworkSpec>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(dir.join(TRAJECTORIES))?;
    let mut header = vec!["ic_id".to_string(), "t".to_string()];
    header.extend((1..=dataset.state_dim).map(|i| format!("x{i}")));
    header.extend((1..=dataset.output_dim).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for t in &dataset.trajectories {
        for j in 0..t.len() {
            let mut row = vec![t.ic_id.to_string(), fmt(t.times[j])];
            row.extend(t.states[j].iter().map(|v| fmt(*v)));
            row.extend(t.outputs[j].iter().map(|v| fmt(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    let manifest = Manifest {
        spec_name: dataset.spec_name.clone(),
        seed: dataset.seed,
        state_dim: dataset.state_dim,
        output_dim: dataset.output_dim,
        sample_time: dataset.sample_time,
        trajectories: dataset
            .trajectories
            .iter()
            .zip(&dataset.splits)
            .map(|(t, s)| ManifestEntry {
                ic_id: t.ic_id,
                split: *s,
                samples: t.len(),
            })
            .collect(),
        spec: spec.cloned(),
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

fn parse_f64(s: &str, line: u64) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{TRAJECTORIES} line {line}: `{s}` is not a number")))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let path = dir.join(TRAJECTORIES);
    let mut r =
        csv::Reader::from_path(&path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let (n, p) = (manifest.state_dim, manifest.output_dim);
    let width = 2 + n + p;
    if r.headers()?.len() != width {
        return Err(CliError::Usage(format!(
            "{TRAJECTORIES} has {} columns, manifest implies {width}",
            r.headers()?.len()
        )));
    }
    let mut by_id: BTreeMap<usize, Trajectory> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let ic_id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{TRAJECTORIES} line {line}: bad ic_id")))?;
        let values = (1..width)
            .map(|i| parse_f64(&rec[i], line))
            .collect::<Result<Vec<f64>, _>>()?;
        let t = by_id.entry(ic_id).or_insert_with(|| Trajectory {
            ic_id,
            states: Vec::new(),
            outputs: Vec::new(),
            times: Vec::new(),
        });
        t.times.push(values[0]);
        t.states.push(values[1..1 + n].to_vec());
        t.outputs.push(values[1 + n..].to_vec());
    }
    let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
    let mut splits = Vec::with_capacity(manifest.trajectories.len());
    for e in &manifest.trajectories {
        let t = by_id
            .remove(&e.ic_id)
            .ok_or_else(|| CliError::Usage(format!("trajectory {} listed in manifest but missing", e.ic_id)))?;
        if t.len() != e.samples {
            return Err(CliError::Usage(format!(
                "trajectory {} has {} samples, manifest says {}",
                e.ic_id,
                t.len(),
                e.samples
            )));
        }
        trajectories.push(t);
        splits.push(e.split);
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(CliError::Usage(format!("trajectory {extra} is not in the manifest")));
    }
    Ok(Dataset {
        spec_name: manifest.spec_name,
        seed: manifest.seed,
        state_dim: n,
        output_dim: p,
        sample_time: manifest.sample_time,
        trajectories,
        splits,
    })
}

pub fn write_fit_reports(path: &Path, reports: &[FitReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["split", "metric", "value"])?;
    for r in reports {
        for (name, v) in r.metrics() {
            w.write_record([r.split.name(), name, &fmt(v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

const METRIC_COLUMNS: [&str; 4] = ["r2_x_1step", "r2_x_nstep", "r2_y_1step", "r2_y_nstep"];

fn metric_cells(r: Option<&FitReport>) -> Vec<String> {
    match r {
        Some(r) => r.metrics().iter().map(|(_, v)| fmt(*v)).collect(),
        None => vec![String::new(); 4],
    }
}

pub fn write_leaderboard(path: &Path, board: &[LeaderboardEntry]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["rank", "index", "description", "lifted_dim"];
    header.extend(METRIC_COLUMNS);
    header.extend(["score", "error"]);
    w.write_record(&header)?;
    for (rank, e) in board.iter().enumerate() {
        let mut row = vec![
            (rank + 1).to_string(),
            e.index.to_string(),
            e.description.clone(),
            e.lifted_dim.to_string(),
        ];
        row.extend(metric_cells(e.validation.as_ref()));
        row.push(fmt(e.score()));
        row.push(e.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One block of rows per output subset.
pub fn write_delay_leaderboard(path: &Path, boards: &[(String, &[DelayLeaderboardEntry])]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "subset",
        "rank",
        "index",
        "n_d",
        "description",
        "lifted_dim",
        "r2_z_1step",
        "r2_z_nstep",
        "error",
    ])?;
    for (subset, board) in boards {
        for (rank, e) in board.iter().enumerate() {
            let (one, multi) = e.validation.map_or((String::new(), String::new()), |r| {
                (fmt(r.r2_x_1step), fmt(r.r2_x_nstep))
            });
            w.write_record([
                subset.clone(),
                (rank + 1).to_string(),
                e.index.to_string(),
                e.n_d.to_string(),
                e.description.clone(),
                e.lifted_dim.to_string(),
                one,
                multi,
                e.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Indices in the sensitivity tables are 1-based.
pub fn write_rank_rows(path: &Path, rows: &[RankRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["output_id", "state_index", "norm", "rank"])?;
    for r in rows {
        w.write_record([
            (r.output_index + 1).to_string(),
            (r.state_index + 1).to_string(),
            fmt(r.norm),
            r.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sensitivity_matrices(path: &Path, reports: &[SensitivityReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["output_id", "obs_index", "state_index", "max_grad"])?;
    for r in reports {
        for i in 0..r.s.rows() {
            for j in 0..r.s.cols() {
                w.write_record([
                    (r.output_index + 1).to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    fmt(r.s[(i, j)]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `decs[m]` holds the decompositions of model `m`.
pub fn write_decompositions(path: &Path, decs: &[Vec<DecomposedModel>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "output_id",
        "n_l",
        "observability_rank",
        "n_ol",
        "reduced_r2",
        "coupling_residual",
    ])?;
    for (m, d) in decs
        .iter()
        .enumerate()
        .flat_map(|(m, ds)| ds.iter().map(move |d| (m, d)))
    {
        w.write_record([
            (m + 1).to_string(),
            (d.output_index + 1).to_string(),
            d.v.rows().to_string(),
            d.observability_rank.to_string(),
            d.n_ol.to_string(),
            fmt(d.reduced_r2),
            fmt(d.coupling_residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reconstruction(path: &Path, rows: &[ReconstructionRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subset", "state_index", "r2"])?;
    for r in rows {
        w.write_record([r.subset.clone(), r.state_index.to_string(), fmt(r.r2)])?;
    }
    w.flush()?;
    Ok(())
}

/// Header and rows of a CSV file, for the report command.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
