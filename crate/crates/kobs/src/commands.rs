use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kobs_core::analytical::{verify_pipeline, VerifyConfig, VerifyTolerances};
use kobs_core::decomposition::{average_reports, decompose, rank_report, sensitivity, DecomposedModel, SensitivityReport};
use kobs_core::delayembed::{
    fit_diffeomorphism, plan_delay_study, rank_delay_results, reconstruction_report, subset_label, unreconstructed,
    DelayFit, DelayKoopmanModel, DiffeomorphismModel,
};
use kobs_core::ocdmd::{build_snapshots, build_snapshots_with, rank_results, score, train_candidate, FitReport, KoopmanModel};
use kobs_core::simulator::{generate_dataset, Dataset, GeneNetworkSpec, Split, System};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::{parse_assignment, RankArgs, VerifyArgs};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io;
use crate::svg;

/// States with a test r² below this count as not reconstructed.
pub const RECONSTRUCTION_THRESHOLD: f64 = 0.8;

/// Worker count from `KOBS_THREADS`; 0 (all cores) when unset.
pub fn threads() -> Result<usize, CliError> {
    match std::env::var("KOBS_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("KOBS_THREADS must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

/// Runs `f(0..n)` on a pool of `KOBS_THREADS` threads and returns the
/// results in index order.
pub fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>, CliError> {
    let threads = threads()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Where a model's training data came from, so later commands can rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Simulated { spec: GeneNetworkSpec, seed: u64, n_ic: usize },
    Files { dir: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset, CliError> {
        match self {
            DataSource::Simulated { spec, seed, n_ic } => Ok(generate_dataset(spec, *n_ic, *seed)?),
            DataSource::Files { dir } => io::read_dataset(dir),
        }
    }
}

fn data_source(cfg: &RunConfig, data: Option<&Path>) -> Result<DataSource, CliError> {
    Ok(match data {
        Some(dir) => DataSource::Files { dir: dir.to_path_buf() },
        None => DataSource::Simulated {
            spec: cfg.spec()?,
            seed: cfg.seed,
            n_ic: cfg.n_ic,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub source: DataSource,
    pub train_seed: u64,
    pub best_index: usize,
    /// Train, validation and test accuracy of the selected model.
    pub reports: Vec<FitReport>,
    pub model: KoopmanModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFit {
    pub label: String,
    /// 1-based output indices.
    pub outputs: Vec<usize>,
    pub delay: DelayKoopmanModel,
    pub diffeomorphism: DiffeomorphismModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayFile {
    pub source: DataSource,
    pub train_seed: u64,
    pub subsets: Vec<SubsetFit>,
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    if let System::Analytical(p) = &spec.system {
        for w in p.degeneracy_warnings() {
            eprintln!("warning: {w}");
        }
    }
    let data = generate_dataset(&spec, cfg.n_ic, cfg.seed)?;
    io::write_dataset(&cfg.out_dir, &data, Some(&spec))?;
    println!(
        "simulated {} trajectories of {} ({} states, {} outputs, {} samples each) into {}",
        data.trajectories.len(),
        spec.name,
        spec.state_dim,
        spec.output_dim,
        spec.samples(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, data: Option<&Path>) -> Result<(), CliError> {
    let source = data_source(cfg, data)?;
    let dataset = source.load()?;
    let n = dataset.state_dim;
    let candidates = cfg.core_grid().candidates(n)?;
    let train = build_snapshots(&dataset, Split::Train, cfg.standardize)?;
    println!("training {} candidates on {} snapshot pairs", candidates.len(), train.len());
    let results = par_map(candidates.len(), |i| train_candidate(&dataset, &train, &candidates[i], i, cfg.train_seed))?;
    let grid = rank_results(n, &candidates, results)?;
    let reports = Split::ALL
        .iter()
        .map(|&s| score(&grid.best, &dataset, s))
        .collect::<Result<Vec<_>, _>>()?;
    for w in &grid.best.meta.warnings {
        eprintln!("warning: {w}");
    }
    let file = ModelFile {
        source,
        train_seed: cfg.train_seed,
        best_index: grid.best_index,
        reports: reports.clone(),
        model: grid.best,
    };
    io::write_json(&cfg.out_dir.join(io::MODEL), &file)?;
    io::write_fit_reports(&cfg.out_dir.join(io::FIT_REPORT), &reports)?;
    io::write_leaderboard(&cfg.out_dir.join(io::LEADERBOARD), &grid.leaderboard)?;
    println!("selected #{} {}", file.best_index, file.model.meta.description);
    for r in &reports {
        let cells: Vec<String> = r.metrics().iter().map(|(k, v)| format!("{k} {}", f4(*v))).collect();
        println!("  {:<10} {}", r.split.name(), cells.join("  "));
    }
    Ok(())
}

pub fn rank(cfg: &RunConfig, args: &RankArgs) -> Result<(), CliError> {
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(CliError::Usage(format!("threshold must lie in (0, 1], got {}", args.threshold)));
    }
    let files: Vec<ModelFile> = args.model.iter().map(|p| io::read_json(p)).collect::<Result<_, _>>()?;
    let first = &files[0].model;
    if let Some((i, _)) = files
        .iter()
        .enumerate()
        .find(|(_, f)| f.model.state_dim() != first.state_dim() || f.model.output_dim() != first.output_dim())
    {
        return Err(CliError::Usage(format!(
            "{} has different state or output dimensions from {}",
            args.model[i].display(),
            args.model[0].display()
        )));
    }
    let dataset = match &args.data {
        Some(dir) => io::read_dataset(dir)?,
        None => files[0].source.load()?,
    };
    if dataset.state_dim != first.state_dim() || dataset.output_dim != first.output_dim() {
        return Err(CliError::Usage("data dimensions do not match the model".into()));
    }
    let p = first.output_dim();
    let outputs: Vec<usize> = match args.output_index {
        Some(j) if j == 0 || j > p => {
            return Err(CliError::Usage(format!("output index {j} out of range 1..={p}")));
        }
        Some(j) => vec![j - 1],
        None => (0..p).collect(),
    };
    let per_model = par_map(files.len(), |m| -> Result<(Vec<DecomposedModel>, Vec<SensitivityReport>), CliError> {
        let model = &files[m].model;
        let train = build_snapshots_with(&dataset, Split::Train, model.standardization.clone())?;
        let mut decs = Vec::new();
        let mut reps = Vec::new();
        for &o in &outputs {
            let dec = decompose(model, &train, o, args.threshold)?;
            reps.push(sensitivity(model, &dec, &train.xp)?);
            decs.push(dec);
        }
        Ok((decs, reps))
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let averaged = (0..outputs.len())
        .map(|k| average_reports(&per_model.iter().map(|(_, r)| r[k].clone()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    let decs: Vec<Vec<DecomposedModel>> = per_model.into_iter().map(|(d, _)| d).collect();
    let dir = &cfg.out_dir;
    io::write_rank_rows(&dir.join(io::SENSITIVITY), &rank_report(&averaged)?)?;
    io::write_sensitivity_matrices(&dir.join(io::SENSITIVITY_MATRIX), &averaged)?;
    io::write_decompositions(&dir.join(io::DECOMPOSITION), &decs)?;
    std::fs::write(dir.join(io::SENSITIVITY_SVG), svg::sensitivity_svg(&averaged))?;
    for (k, r) in averaged.iter().enumerate() {
        let n_ol: Vec<String> = decs.iter().map(|d| d[k].n_ol.to_string()).collect();
        let order: Vec<String> = r.ranking.iter().map(|i| format!("x{}", i + 1)).collect();
        println!("y{} (n_oL {}): {}", r.output_index + 1, n_ol.join("/"), order.join(" > "));
    }
    Ok(())
}

/// Delay study over `delays` for one output subset, trained in parallel.
fn fit_subset(dataset: &Dataset, delays: &[usize], cfg: &RunConfig) -> Result<DelayFit, CliError> {
    let study = plan_delay_study(dataset, delays, &cfg.core_grid())?;
    let results = par_map(study.jobs.len(), |i| study.run(i, cfg.train_seed))?;
    Ok(rank_delay_results(&study, results)?)
}

pub fn delay(cfg: &RunConfig, data: Option<&Path>) -> Result<(), CliError> {
    let source = data_source(cfg, data)?;
    let dataset = source.load()?;
    let subsets = cfg.subsets(dataset.output_dim)?;
    let views: Vec<Dataset> = subsets.iter().map(|s| dataset.with_outputs(s)).collect::<Result<_, _>>()?;

    let lead = fit_subset(&views[0], &cfg.delay.delays, cfg)?;
    let n_d = lead.best.n_d;
    println!("{}: best delay count {n_d}", subset_label(&subsets[0]));
    for (d, s) in lead.best_per_delay() {
        println!("  n_d {d}: validation window r2 {}", f4(s));
    }
    let mut fits = vec![lead];
    for v in &views[1..] {
        fits.push(fit_subset(v, &[n_d], cfg)?);
    }
    let diffeos = par_map(fits.len(), |k| fit_diffeomorphism(&fits[k].best, &views[k], &cfg.diffeo))?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let labels: Vec<String> = subsets.iter().map(|s| subset_label(s)).collect();
    let rows = reconstruction_report(&labels.iter().cloned().zip(diffeos.iter()).collect::<Vec<_>>())?;
    let boards: Vec<(String, &[_])> = labels.iter().cloned().zip(fits.iter().map(|f| f.leaderboard.as_slice())).collect();
    let dir = &cfg.out_dir;
    io::write_delay_leaderboard(&dir.join(io::DELAY_LEADERBOARD), &boards)?;
    io::write_reconstruction(&dir.join(io::RECONSTRUCTION), &rows)?;
    std::fs::write(dir.join(io::RECONSTRUCTION_SVG), svg::reconstruction_svg(&rows, RECONSTRUCTION_THRESHOLD))?;
    let file = DelayFile {
        source,
        train_seed: cfg.train_seed,
        subsets: subsets
            .iter()
            .zip(labels.iter())
            .zip(fits.into_iter().zip(diffeos))
            .map(|((s, label), (fit, diffeo))| SubsetFit {
                label: label.clone(),
                outputs: s.iter().map(|o| o + 1).collect(),
                delay: fit.best,
                diffeomorphism: diffeo,
            })
            .collect(),
    };
    io::write_json(&dir.join(io::DELAY_MODEL), &file)?;
    for s in &file.subsets {
        let r2: Vec<String> = s.diffeomorphism.r2.iter().map(|v| f4(*v)).collect();
        println!("{}: window r2 {}  state r2 [{}]", s.label, f4(s.delay.validation.r2_x_1step), r2.join(", "));
    }
    let missing = unreconstructed(&rows, RECONSTRUCTION_THRESHOLD);
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|(s, i)| format!("x{i} from {s}")).collect();
        println!("not reconstructed (r2 < {RECONSTRUCTION_THRESHOLD}): {}", list.join(", "));
    }
    Ok(())
}

fn set_tolerance(t: &mut VerifyTolerances, name: &str, v: f64) -> Result<(), CliError> {
    let slot = match name {
        "k_recovery" => &mut t.k_recovery,
        "coupling" => &mut t.coupling,
        "spectrum" => &mut t.spectrum,
        "span_residual" => &mut t.span_residual,
        "noisy_k_recovery" => &mut t.noisy_k_recovery,
        "rollout" => &mut t.rollout,
        "min_output_r2" => &mut t.min_output_r2,
        _ => {
            return Err(CliError::Usage(format!(
                "unknown tolerance `{name}`; known: k_recovery, coupling, spectrum, span_residual, noisy_k_recovery, rollout, min_output_r2"
            )))
        }
    };
    *slot = v;
    Ok(())
}

pub fn verify(cfg: &RunConfig, args: &VerifyArgs, out: Option<&Path>) -> Result<(), CliError> {
    let mut vc = VerifyConfig {
        n_ic: cfg.n_ic,
        seed: cfg.seed,
        ..VerifyConfig::default()
    };
    if args.degenerate {
        (vc.a, vc.b, vc.gamma) = (0.5f64.sqrt(), 0.5, 0.7);
    }
    vc.a = args.a.unwrap_or(vc.a);
    vc.b = args.b.unwrap_or(vc.b);
    vc.gamma = args.gamma.unwrap_or(vc.gamma);
    vc.noise_sigma = args.noise.unwrap_or(vc.noise_sigma);
    for t in &args.tolerance {
        let (k, v) = parse_assignment(t)?;
        set_tolerance(&mut vc.tolerances, &k, v)?;
    }
    let report = verify_pipeline(&vc)?;
    println!("a = {}, b = {}, gamma = {}", vc.a, vc.b, vc.gamma);
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    if let Some(dir) = out {
        let mut w = csv::Writer::from_path(dir.join(io::VERIFY))?;
        w.write_record(["check", "passed", "detail"])?;
        for c in &report.checks {
            w.write_record([c.name.as_str(), if c.passed { "true" } else { "false" }, c.detail.as_str()])?;
        }
        w.flush()?;
    }
    let failed = report.failures().count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} checks failed", report.checks.len())));
    }
    Ok(())
}

fn markdown_table(out: &mut String, header: &[String], rows: &[Vec<String>], limit: usize) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows.iter().take(limit) {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    if rows.len() > limit {
        let _ = writeln!(out, "\n{} more rows omitted.", rows.len() - limit);
    }
    out.push('\n');
}

/// Writes `report.md` from whichever tables are present in `dir`.
pub fn report(dir: &Path) -> Result<(), CliError> {
    const SECTIONS: [(&str, &str, usize); 8] = [
        (io::FIT_REPORT, "Fit accuracy", usize::MAX),
        (io::LEADERBOARD, "Grid search leaderboard", 10),
        (io::DECOMPOSITION, "Observable decomposition", usize::MAX),
        (io::SENSITIVITY, "State ranking", usize::MAX),
        (io::DELAY_LEADERBOARD, "Delay-embedded models", 10),
        (io::RECONSTRUCTION, "State reconstruction", usize::MAX),
        (io::VERIFY, "Closed-form checks", usize::MAX),
        (io::SENSITIVITY_MATRIX, "Gradient maxima", 40),
    ];
    let mut out = String::from("# kobs run report\n\n");
    let mut found = 0;
    for (file, title, limit) in SECTIONS {
        let path = dir.join(file);
        if !path.is_file() {
            continue;
        }
        found += 1;
        let (header, rows) = io::read_table(&path)?;
        let _ = writeln!(out, "## {title}\n\nFrom `{file}`.\n");
        markdown_table(&mut out, &header, &rows, limit);
    }
    for svg in [io::SENSITIVITY_SVG, io::RECONSTRUCTION_SVG] {
        if dir.join(svg).is_file() {
            let _ = writeln!(out, "![{svg}]({svg})\n");
        }
    }
    if found == 0 {
        return Err(CliError::Usage(format!("no result tables in {}", dir.display())));
    }
    crate::config::check_out_dir(dir)?;
    std::fs::write(dir.join(io::REPORT), out)?;
    println!("wrote {}", dir.join(io::REPORT).display());
    Ok(())
}
