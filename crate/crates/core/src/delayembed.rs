//! Koopman models of stacked output windows and the learned map from
//! window observables back to the state.
//!
//! Window `t` of a trajectory is `z_t = [y_{n_d t}; ...; y_{n_d (t+1) - 1}]`.
//! Windows are disjoint and never cross initial conditions; a trailing
//! partial window is dropped. The state paired with window `t` is the state
//! at sample `n_d t`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Adagrad, Matrix, R2};
use crate::observables::{Activation, Mlp, NetworkShape};
use crate::ocdmd::{
    build_snapshots, train_candidate, Candidate, FitReport, Grid, KoopmanModel, SnapshotSet,
    StandardizeMode, DIVERGENCE_FACTOR,
};
use crate::simulator::{Dataset, Split, Trajectory};

/// Reshapes a dataset into window trajectories: each trajectory's states are
/// its windows and its outputs are the aligned states. Splits are kept.
pub fn delay_dataset(dataset: &Dataset, n_d: usize) -> Result<Dataset> {
    if n_d == 0 {
        return Err(Error::InvalidArgument("delay count must be at least 1".into()));
    }
    if dataset.output_dim == 0 {
        return Err(Error::Empty("dataset outputs"));
    }
    let mut trajectories = Vec::with_capacity(dataset.trajectories.len());
    for t in &dataset.trajectories {
        if t.len() < 2 * n_d {
            return Err(Error::TrajectoryTooShort {
                ic_id: t.ic_id,
                len: t.len(),
                min: 2 * n_d,
            });
        }
        let windows = t.len() / n_d;
        let mut states = Vec::with_capacity(windows);
        let mut outputs = Vec::with_capacity(windows);
        let mut times = Vec::with_capacity(windows);
        for w in 0..windows {
            let start = w * n_d;
            states.push(t.outputs[start..start + n_d].concat());
            outputs.push(t.states[start].clone());
            times.push(t.times[start]);
        }
        trajectories.push(Trajectory {
            ic_id: t.ic_id,
            states,
            outputs,
            times,
        });
    }
    Ok(Dataset {
        spec_name: format!("{}-delay{}", dataset.spec_name, n_d),
        seed: dataset.seed,
        state_dim: n_d * dataset.output_dim,
        output_dim: dataset.state_dim,
        sample_time: dataset.sample_time * n_d as f64,
        trajectories,
        splits: dataset.splits.clone(),
    })
}

/// Consecutive window pairs of one split, in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayEmbedding {
    pub n_d: usize,
    pub window_dim: usize,
    pub zp: Matrix,
    pub zf: Matrix,
    /// State at the start of each `zp` window.
    pub xp: Matrix,
    /// `(first column, column count)` per initial condition.
    pub segments: Vec<(usize, usize)>,
    pub ic_ids: Vec<usize>,
}

pub fn embed(dataset: &Dataset, split: Split, n_d: usize) -> Result<DelayEmbedding> {
    let delayed = delay_dataset(dataset, n_d)?;
    let (mut zp, mut zf, mut xp) = (Vec::new(), Vec::new(), Vec::new());
    let mut segments = Vec::new();
    let mut ic_ids = Vec::new();
    for t in delayed.split(split) {
        segments.push((zp.len(), t.len() - 1));
        ic_ids.push(t.ic_id);
        for w in 0..t.len() - 1 {
            zp.push(t.states[w].as_slice());
            zf.push(t.states[w + 1].as_slice());
            xp.push(t.outputs[w].as_slice());
        }
    }
    if zp.is_empty() {
        return Err(Error::Empty("delay embedding split"));
    }
    Ok(DelayEmbedding {
        n_d,
        window_dim: delayed.state_dim,
        zp: Matrix::from_columns(delayed.state_dim, &zp),
        zf: Matrix::from_columns(delayed.state_dim, &zf),
        xp: Matrix::from_columns(dataset.state_dim, &xp),
        segments,
        ic_ids,
    })
}

/// Koopman model over windows. The inner model's "state" is the window and
/// its readout matrix maps window observables to the aligned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayKoopmanModel {
    pub n_d: usize,
    pub model: KoopmanModel,
    /// Validation accuracy; the `x` fields refer to windows.
    pub validation: FitReport,
}

impl DelayKoopmanModel {
    pub fn window_dim(&self) -> usize {
        self.model.state_dim()
    }
}

/// One delay level of a study: the window dataset and its training pairs.
#[derive(Debug, Clone)]
pub struct DelayLevel {
    pub n_d: usize,
    pub dataset: Dataset,
    pub train: SnapshotSet,
}

#[derive(Debug, Clone)]
pub struct DelayJob {
    pub level: usize,
    pub candidate: Candidate,
}

/// Every `(n_d, candidate)` combination of a delay grid search.
#[derive(Debug, Clone)]
pub struct DelayStudy {
    pub levels: Vec<DelayLevel>,
    pub jobs: Vec<DelayJob>,
}

/// Expands `grid` at each delay count. The output term is switched off: the
/// window model only has to propagate its own observables.
pub fn plan_delay_study(dataset: &Dataset, delays: &[usize], grid: &Grid) -> Result<DelayStudy> {
    if delays.is_empty() {
        return Err(Error::Empty("delay counts"));
    }
    let mut grid = grid.clone();
    grid.output_weight = 0.0;
    let mut levels = Vec::with_capacity(delays.len());
    let mut jobs = Vec::new();
    for &n_d in delays {
        let delayed = delay_dataset(dataset, n_d)?;
        let train = build_snapshots(&delayed, Split::Train, StandardizeMode::ZScore)?;
        for candidate in grid.candidates(delayed.state_dim)? {
            jobs.push(DelayJob {
                level: levels.len(),
                candidate,
            });
        }
        levels.push(DelayLevel {
            n_d,
            dataset: delayed,
            train,
        });
    }
    Ok(DelayStudy { levels, jobs })
}

impl DelayStudy {
    /// Trains job `index`; its initialization seed depends only on `index`.
    pub fn run(&self, index: usize, base_seed: u64) -> Result<(KoopmanModel, FitReport)> {
        let job = &self.jobs[index];
        let level = &self.levels[job.level];
        train_candidate(&level.dataset, &level.train, &job.candidate, index, base_seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayLeaderboardEntry {
    pub index: usize,
    pub n_d: usize,
    pub description: String,
    pub lifted_dim: usize,
    pub validation: Option<FitReport>,
    pub error: Option<String>,
}

impl DelayLeaderboardEntry {
    /// Validation 1-step window r²; failures and NaN rank last.
    pub fn score(&self) -> f64 {
        match self.validation {
            Some(r) if !r.r2_x_1step.is_nan() => r.r2_x_1step,
            _ => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DelayFit {
    pub best: DelayKoopmanModel,
    /// Sorted best first.
    pub leaderboard: Vec<DelayLeaderboardEntry>,
}

impl DelayFit {
    /// Best validation 1-step window r² reached at each delay count.
    pub fn best_per_delay(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for e in &self.leaderboard {
            match out.iter_mut().find(|(n, _)| *n == e.n_d) {
                Some((_, s)) => *s = s.max(e.score()),
                None => out.push((e.n_d, e.score())),
            }
        }
        out.sort_by_key(|(n, _)| *n);
        out
    }
}

/// Orders study results by validation 1-step window r², then smaller lifted
/// dimension, then smaller `n_d`, then job order.
pub fn rank_delay_results(study: &DelayStudy, results: Vec<Result<(KoopmanModel, FitReport)>>) -> Result<DelayFit> {
    let mut models: Vec<Option<(KoopmanModel, FitReport)>> = Vec::with_capacity(results.len());
    let mut board = Vec::with_capacity(results.len());
    for (index, (job, r)) in study.jobs.iter().zip(results).enumerate() {
        let n = study.levels[job.level].dataset.state_dim;
        let (validation, error) = match &r {
            Ok((_, rep)) => (Some(*rep), None),
            Err(e) => (None, Some(e.to_string())),
        };
        board.push(DelayLeaderboardEntry {
            index,
            n_d: study.levels[job.level].n_d,
            description: job.candidate.describe(n),
            lifted_dim: job.candidate.lifted_dim(n),
            validation,
            error,
        });
        models.push(r.ok());
    }
    board.sort_by(|a, b| {
        b.score()
            .total_cmp(&a.score())
            .then(a.lifted_dim.cmp(&b.lifted_dim))
            .then(a.n_d.cmp(&b.n_d))
            .then(a.index.cmp(&b.index))
    });
    let Some(best) = board.iter().find(|e| e.error.is_none()) else {
        return Err(Error::AllCombinationsFailed {
            diagnostics: board
                .iter()
                .map(|e| format!("#{} n_d={} {}: {}", e.index, e.n_d, e.description, e.error.as_deref().unwrap_or("")))
                .collect(),
        });
    };
    let (index, n_d) = (best.index, best.n_d);
    let (model, validation) = models[index].take().expect("successful entry has a model");
    Ok(DelayFit {
        best: DelayKoopmanModel { n_d, model, validation },
        leaderboard: board,
    })
}

/// Sequential grid search over delay counts and observable settings.
pub fn fit_delay_koopman(dataset: &Dataset, delays: &[usize], grid: &Grid, base_seed: u64) -> Result<DelayFit> {
    let study = plan_delay_study(dataset, delays, grid)?;
    let results = (0..study.jobs.len()).map(|i| study.run(i, base_seed)).collect();
    rank_delay_results(&study, results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffeoConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight of the state term against the round-trip term.
    pub state_weight: f64,
    pub seed: u64,
}

impl Default for DiffeoConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Elu,
            learning_rate: 0.01,
            epochs: 4000,
            state_weight: 1.0,
            seed: 0,
        }
    }
}

/// Encoder from window observables to the standardized state and decoder
/// back to the observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffeomorphismModel {
    pub n_d: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub loss_history: Vec<f64>,
    /// Per-state test r² against the training mean.
    pub r2: Vec<f64>,
}

impl DiffeomorphismModel {
    pub fn state_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Raw state estimate of one raw window.
    pub fn reconstruct(&self, dz: &DelayKoopmanModel, window: &[f64]) -> Result<Vec<f64>> {
        let psi = dz.model.lift(window)?;
        let out = self.encoder.eval(&Matrix::from_columns(psi.len(), &[psi]));
        Ok(out
            .col(0)
            .iter()
            .zip(&self.x_mean)
            .zip(&self.x_std)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }
}

/// Lifted windows and aligned states of one split; every window is used.
fn window_samples(dz: &DelayKoopmanModel, delayed: &Dataset, split: Split) -> Result<(Matrix, Vec<Vec<f64>>)> {
    let mut psi = Vec::new();
    let mut x = Vec::new();
    for t in delayed.split(split) {
        for (z, s) in t.states.iter().zip(&t.outputs) {
            psi.push(dz.model.lift(z)?);
            x.push(s.clone());
        }
    }
    if psi.is_empty() {
        return Err(Error::Empty("diffeomorphism split"));
    }
    Ok((Matrix::from_columns(dz.model.lifted_dim(), &psi), x))
}

fn mean_std(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let m = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(a, v)| *a += v / m);
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        var.iter_mut().zip(r).zip(&mean).for_each(|((a, v), mu)| *a += (v - mu) * (v - mu) / m);
    }
    let std = var
        .into_iter()
        .map(|v| if v > 0.0 { libm::sqrt(v) } else { 1.0 })
        .collect();
    (mean, std)
}

/// Loss `(|psi - D(E(psi))|^2 + w |x - E(psi)|^2) / m` and its gradients
/// with respect to the encoder and decoder parameters.
pub fn diffeo_loss_grad(encoder: &Mlp, decoder: &Mlp, psi: &Matrix, x: &Matrix, w: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let m = psi.cols() as f64;
    let h = encoder.eval(psi);
    let q = h.sub(x)?;
    let r = decoder.eval(&h).sub(psi)?;
    let sq = |a: &Matrix| a.as_slice().iter().map(|v| v * v).sum::<f64>();
    let loss = (sq(&r) + w * sq(&q)) / m;
    let (g_dec, g_h) = decoder.backward(&h, &r.scale(2.0 / m));
    let up_h = g_h.add(&q.scale(2.0 * w / m))?;
    let (g_enc, _) = encoder.backward(psi, &up_h);
    Ok((loss, g_enc, g_dec))
}

/// Trains encoder and decoder jointly by Adagrad on
/// `(|psi - D(E(psi))|^2 + w |x - E(psi)|^2) / m` over the training windows,
/// then scores each state on the test windows.
pub fn fit_diffeomorphism(dz: &DelayKoopmanModel, dataset: &Dataset, config: &DiffeoConfig) -> Result<DiffeomorphismModel> {
    if dz.window_dim() != dz.n_d * dataset.output_dim {
        return Err(crate::error::mismatch(
            "fit_diffeomorphism window",
            dz.window_dim(),
            dz.n_d * dataset.output_dim,
        ));
    }
    if !(config.learning_rate > 0.0) || !(config.state_weight >= 0.0) {
        return Err(Error::InvalidArgument(
            "learning rate must be positive and state weight non-negative".into(),
        ));
    }
    let delayed = delay_dataset(dataset, dz.n_d)?;
    let n = dataset.state_dim;
    let n_l = dz.model.lifted_dim();
    let (psi, x_raw) = window_samples(dz, &delayed, Split::Train)?;
    let (x_mean, x_std) = mean_std(&x_raw, n);
    let x_cols: Vec<Vec<f64>> = x_raw
        .iter()
        .map(|r| r.iter().zip(&x_mean).zip(&x_std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let x = Matrix::from_columns(n, &x_cols);

    let widths = |from: usize, to: usize| {
        let mut w = vec![from];
        w.extend_from_slice(&config.hidden);
        w.push(to);
        w
    };
    let mut encoder = Mlp::new(&NetworkShape {
        layer_widths: widths(n_l, n),
        activation: config.activation,
        init_seed: config.seed,
    })?;
    let mut decoder = Mlp::new(&NetworkShape {
        layer_widths: widths(n, n_l),
        activation: config.activation,
        init_seed: config.seed.wrapping_add(1),
    })?;
    let (ne, nd) = (encoder.params.len(), decoder.params.len());
    let mut opt = Adagrad::new(ne + nd, config.learning_rate);
    let w = config.state_weight;
    let mut history = Vec::with_capacity(config.epochs + 1);
    let mut all = vec![0.0; ne + nd];
    let mut grad = vec![0.0; ne + nd];

    for epoch in 0..=config.epochs {
        let (loss, g_enc, g_dec) = diffeo_loss_grad(&encoder, &decoder, &psi, &x, w)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss);
        if epoch > 0 && loss > DIVERGENCE_FACTOR * history[0] {
            return Err(Error::Diverged {
                epoch,
                loss,
                limit: DIVERGENCE_FACTOR * history[0],
                history,
            });
        }
        if epoch == config.epochs {
            break;
        }
        grad[..ne].copy_from_slice(&g_enc);
        grad[ne..].copy_from_slice(&g_dec);
        all[..ne].copy_from_slice(&encoder.params);
        all[ne..].copy_from_slice(&decoder.params);
        opt.step(&mut all, &grad);
        encoder.params.copy_from_slice(&all[..ne]);
        decoder.params.copy_from_slice(&all[ne..]);
    }

    let (psi_test, x_test) = window_samples(dz, &delayed, Split::Test)?;
    let pred = encoder.eval(&psi_test);
    let mut acc = vec![R2::default(); n];
    for (c, actual) in x_test.iter().enumerate() {
        for (i, a) in acc.iter_mut().enumerate() {
            let p = pred[(i, c)] * x_std[i] + x_mean[i];
            a.push(&[actual[i]], &[p], &[x_mean[i]]);
        }
    }
    Ok(DiffeomorphismModel {
        n_d: dz.n_d,
        encoder,
        decoder,
        x_mean,
        x_std,
        loss_history: history,
        r2: acc.iter().map(R2::value).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub subset: String,
    /// 1-based.
    pub state_index: usize,
    pub r2: f64,
}

/// Label of an output subset given 0-based indices, e.g. `y1+y3`.
pub fn subset_label(outputs: &[usize]) -> String {
    let parts: Vec<String> = outputs.iter().map(|o| format!("y{}", o + 1)).collect();
    parts.join("+")
}

/// One row per subset and state.
pub fn reconstruction_report(models: &[(String, &DiffeomorphismModel)]) -> Result<Vec<ReconstructionRow>> {
    if models.is_empty() {
        return Err(Error::Empty("reconstruction models"));
    }
    let mut rows = Vec::new();
    for (subset, model) in models {
        if subset.is_empty() {
            return Err(Error::Empty("output subset"));
        }
        for (i, r2) in model.r2.iter().enumerate() {
            rows.push(ReconstructionRow {
                subset: subset.clone(),
                state_index: i + 1,
                r2: *r2,
            });
        }
    }
    Ok(rows)
}

/// States whose r² is below `threshold` (1-based), per subset.
pub fn unreconstructed(rows: &[ReconstructionRow], threshold: f64) -> Vec<(String, usize)> {
    rows.iter()
        .filter(|r| !(r.r2 >= threshold))
        .map(|r| (r.subset.clone(), r.state_index))
        .collect()
}
