//! Output-constrained Koopman models `psi(x+) = K psi(x)`, `y = W_h psi(x)`.
//!
//! Dictionary maps are fitted in closed form. Network maps alternate Adagrad
//! steps on the network parameters with a closed-form refresh of `K` and
//! `W_h`, or optionally descend on all three jointly.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::numerics::{least_squares_with_rank, Adagrad, Matrix, R2};
use crate::observables::{Activation, DictionaryKind, NetworkShape, ObservableMap};
use crate::simulator::{Dataset, Split};

pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeMode {
    #[default]
    ZScore,
    /// Identity transform. Exact polynomial models need raw coordinates
    /// because an affine change of variables mixes monomial degrees.
    None,
}

/// Per-variable training means and scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mode: StandardizeMode,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    /// r² baselines: training means over the predicted samples (every sample
    /// but the first of each trajectory).
    pub x_baseline: Vec<f64>,
    pub y_baseline: Vec<f64>,
}

fn moments(cols: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let m = cols.len() as f64;
    let mut mean = vec![0.0; dim];
    for c in cols {
        for (a, v) in mean.iter_mut().zip(*c) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; dim];
    for c in cols {
        for ((a, v), mu) in var.iter_mut().zip(*c).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = libm::sqrt(v / m);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Standardization {
    /// Statistics of the training-split `Xp` and `Yp` columns.
    pub fn from_training(dataset: &Dataset, mode: StandardizeMode) -> Result<Self> {
        let (mut xs, mut ys, mut xt, mut yt): (Vec<&[f64]>, Vec<&[f64]>, Vec<&[f64]>, Vec<&[f64]>) =
            Default::default();
        for t in dataset.split(Split::Train) {
            let n = t.len().saturating_sub(1);
            xs.extend(t.states[..n].iter().map(|v| v.as_slice()));
            ys.extend(t.outputs[..n].iter().map(|v| v.as_slice()));
            xt.extend(t.states.iter().skip(1).map(|v| v.as_slice()));
            yt.extend(t.outputs.iter().skip(1).map(|v| v.as_slice()));
        }
        if xs.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let (x_mean, mut x_std) = moments(&xs, dataset.state_dim);
        let (y_mean, mut y_std) = moments(&ys, dataset.output_dim);
        let x_baseline = moments(&xt, dataset.state_dim).0;
        let y_baseline = moments(&yt, dataset.output_dim).0;
        if mode == StandardizeMode::None {
            x_std.iter_mut().for_each(|s| *s = 1.0);
            y_std.iter_mut().for_each(|s| *s = 1.0);
        }
        Ok(Self {
            mode,
            x_mean,
            x_std,
            y_mean,
            y_std,
            x_baseline,
            y_baseline,
        })
    }

    fn offset(&self, mean: f64) -> f64 {
        match self.mode {
            StandardizeMode::ZScore => mean,
            StandardizeMode::None => 0.0,
        }
    }

    pub fn standardize_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.x_mean)
            .zip(&self.x_std)
            .map(|((v, m), s)| (v - self.offset(*m)) / s)
            .collect()
    }

    pub fn destandardize_x(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.x_mean)
            .zip(&self.x_std)
            .map(|((v, m), s)| v * s + self.offset(*m))
            .collect()
    }

    pub fn standardize_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.y_mean)
            .zip(&self.y_std)
            .map(|((v, m), s)| (v - self.offset(*m)) / s)
            .collect()
    }

    pub fn destandardize_y(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.y_mean)
            .zip(&self.y_std)
            .map(|((v, m), s)| v * s + self.offset(*m))
            .collect()
    }
}

/// Shift pairs of one split, in standardized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub xp: Matrix,
    pub xf: Matrix,
    pub yp: Matrix,
    /// `(first column, column count)` of each trajectory.
    pub segments: Vec<(usize, usize)>,
    pub ic_ids: Vec<usize>,
    pub standardization: Standardization,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.xp.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.xp.cols() == 0
    }
}

pub fn build_snapshots(dataset: &Dataset, split: Split, mode: StandardizeMode) -> Result<SnapshotSet> {
    let stats = Standardization::from_training(dataset, mode)?;
    build_snapshots_with(dataset, split, stats)
}

/// As [`build_snapshots`] with precomputed statistics.
pub fn build_snapshots_with(dataset: &Dataset, split: Split, stats: Standardization) -> Result<SnapshotSet> {
    let (mut xp, mut xf, mut yp) = (Vec::new(), Vec::new(), Vec::new());
    let mut segments = Vec::new();
    let mut ic_ids = Vec::new();
    for t in dataset.split(split) {
        if t.len() < 2 {
            return Err(Error::TrajectoryTooShort {
                ic_id: t.ic_id,
                len: t.len(),
                min: 2,
            });
        }
        segments.push((xp.len(), t.len() - 1));
        ic_ids.push(t.ic_id);
        for j in 0..t.len() - 1 {
            xp.push(stats.standardize_x(&t.states[j]));
            xf.push(stats.standardize_x(&t.states[j + 1]));
            yp.push(stats.standardize_y(&t.outputs[j]));
        }
    }
    if xp.is_empty() {
        return Err(Error::Empty("snapshot split"));
    }
    Ok(SnapshotSet {
        xp: Matrix::from_columns(dataset.state_dim, &xp),
        xf: Matrix::from_columns(dataset.state_dim, &xf),
        yp: Matrix::from_columns(dataset.output_dim, &yp),
        segments,
        ic_ids,
        standardization: stats,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    #[default]
    Alternating,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight of the output term relative to the lifted-state term.
    pub output_weight: f64,
    pub mode: TrainingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 1000,
            output_weight: 1.0,
            mode: TrainingMode::Alternating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub method: String,
    pub description: String,
    pub seed: u64,
    pub config: Option<TrainConfig>,
    /// Mean joint loss per snapshot, one entry per epoch plus the final value.
    pub loss_history: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    pub map: ObservableMap,
    pub k: Matrix,
    pub wh: Matrix,
    pub standardization: Standardization,
    pub meta: TrainingMeta,
}

impl KoopmanModel {
    pub fn state_dim(&self) -> usize {
        self.map.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.wh.rows()
    }

    pub fn lifted_dim(&self) -> usize {
        self.map.lifted_dim()
    }

    /// `psi` of a raw (unstandardized) state.
    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.map.evaluate_point(&self.standardization.standardize_x(x))
    }

    /// Raw state and output read off a lifted vector.
    pub fn readout(&self, psi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.state_dim();
        let x = self.standardization.destandardize_x(&psi[..n]);
        let y = self.standardization.destandardize_y(&self.wh.matvec(psi)?);
        Ok((x, y))
    }

    /// Raw outputs for `steps` lifted-space steps from a raw initial state,
    /// starting with the output at the initial state.
    pub fn rollout_outputs(&self, x0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut psi = self.lift(x0)?;
        let mut out = Vec::with_capacity(steps + 1);
        for j in 0..=steps {
            if j > 0 {
                psi = self.k.matvec(&psi)?;
            }
            out.push(self.readout(&psi)?.1);
        }
        Ok(out)
    }
}

fn closed_form(psi_p: &Matrix, psi_f: &Matrix, yp: &Matrix) -> Result<(Matrix, Matrix, usize)> {
    let (k, rank) = least_squares_with_rank(psi_p, psi_f)?;
    let (wh, _) = least_squares_with_rank(psi_p, yp)?;
    Ok((k, wh, rank))
}

fn rank_warning(rank: usize, n: usize) -> Option<String> {
    (rank < n + 1).then(|| format!("lifted snapshot matrix has rank {rank}, below state dimension + 1 = {}", n + 1))
}

pub fn fit_edmd(snapshots: &SnapshotSet, map: ObservableMap) -> Result<KoopmanModel> {
    if map.input_dim() != snapshots.xp.rows() {
        return Err(mismatch("fit_edmd", snapshots.xp.rows(), map.input_dim()));
    }
    let psi_p = map.evaluate(&snapshots.xp)?;
    let psi_f = map.evaluate(&snapshots.xf)?;
    let (k, wh, rank) = closed_form(&psi_p, &psi_f, &snapshots.yp)?;
    let warnings = rank_warning(rank, map.input_dim()).into_iter().collect();
    Ok(KoopmanModel {
        meta: TrainingMeta {
            method: "edmd".into(),
            description: format!("dictionary n_L={}", map.lifted_dim()),
            seed: 0,
            config: None,
            loss_history: Vec::new(),
            warnings,
        },
        map,
        k,
        wh,
        standardization: snapshots.standardization.clone(),
    })
}

struct Residuals {
    loss: f64,
    r1: Matrix,
    r2: Matrix,
}

fn residuals(psi_p: &Matrix, psi_f: &Matrix, yp: &Matrix, k: &Matrix, wh: &Matrix, lambda: f64) -> Result<Residuals> {
    let r1 = psi_f.sub(&k.matmul(psi_p)?)?;
    let r2 = yp.sub(&wh.matmul(psi_p)?)?;
    let m = psi_p.cols() as f64;
    let sq = |a: &Matrix| a.as_slice().iter().map(|v| v * v).sum::<f64>();
    Ok(Residuals {
        loss: (sq(&r1) + lambda * sq(&r2)) / m,
        r1,
        r2,
    })
}

/// Mean OC-DMD loss of a model on a snapshot set.
pub fn joint_loss(model: &KoopmanModel, snapshots: &SnapshotSet, output_weight: f64) -> Result<f64> {
    let psi_p = model.map.evaluate(&snapshots.xp)?;
    let psi_f = model.map.evaluate(&snapshots.xf)?;
    Ok(residuals(&psi_p, &psi_f, &snapshots.yp, &model.k, &model.wh, output_weight)?.loss)
}

/// Trains a network-backed model on `snapshots`.
pub fn fit_ocdeepdmd(snapshots: &SnapshotSet, shape: &NetworkShape, config: &TrainConfig) -> Result<KoopmanModel> {
    if shape.layer_widths.first() != Some(&snapshots.xp.rows()) {
        return Err(mismatch(
            "fit_ocdeepdmd input width",
            snapshots.xp.rows(),
            format_args!("{:?}", shape.layer_widths.first()),
        ));
    }
    if !(config.learning_rate > 0.0) || !(config.output_weight >= 0.0) {
        return Err(Error::InvalidArgument(
            "learning rate must be positive and output weight non-negative".into(),
        ));
    }
    let mut map = ObservableMap::make_network(shape)?;
    let lambda = config.output_weight;
    let m = snapshots.len() as f64;
    let n_l = map.lifted_dim();
    let p = snapshots.yp.rows();

    let mut psi_p = map.evaluate(&snapshots.xp)?;
    let mut psi_f = map.evaluate(&snapshots.xf)?;
    let (mut k, mut wh, mut rank) = closed_form(&psi_p, &psi_f, &snapshots.yp)?;

    let n_theta = map.params().len();
    let n_total = match config.mode {
        TrainingMode::Alternating => n_theta,
        TrainingMode::Joint => n_theta + n_l * n_l + p * n_l,
    };
    let mut opt = Adagrad::new(n_total, config.learning_rate);
    let mut grad = vec![0.0; n_total];
    let mut history = Vec::with_capacity(config.epochs + 1);
    let mut initial = f64::NAN;

    for epoch in 0..=config.epochs {
        let res = residuals(&psi_p, &psi_f, &snapshots.yp, &k, &wh, lambda)?;
        if !res.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(res.loss);
        if epoch == 0 {
            initial = res.loss;
        } else if res.loss > DIVERGENCE_FACTOR * initial {
            return Err(Error::Diverged {
                epoch,
                loss: res.loss,
                limit: DIVERGENCE_FACTOR * initial,
                history,
            });
        }
        if epoch == config.epochs {
            break;
        }

        // dL/dpsi_f = 2 R1, dL/dpsi_p = -2 K^T R1 - 2 lambda W^T R2
        let up_f = res.r1.scale(2.0 / m);
        let up_p = k
            .transpose()
            .matmul(&res.r1)?
            .add(&wh.transpose().matmul(&res.r2)?.scale(lambda))?
            .scale(-2.0 / m);
        let g_f = map.backprop(&snapshots.xf, &up_f)?;
        let g_p = map.backprop(&snapshots.xp, &up_p)?;
        for ((g, a), b) in grad[..n_theta].iter_mut().zip(&g_f).zip(&g_p) {
            *g = a + b;
        }
        if !grad[..n_theta].iter().all(|g| g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }

        match config.mode {
            TrainingMode::Alternating => {
                opt.step(map.params_mut(), &grad);
                psi_p = map.evaluate(&snapshots.xp)?;
                psi_f = map.evaluate(&snapshots.xf)?;
                (k, wh, rank) = closed_form(&psi_p, &psi_f, &snapshots.yp)?;
            }
            TrainingMode::Joint => {
                let gk = res.r1.matmul_t(&psi_p)?.scale(-2.0 / m);
                let gw = res.r2.matmul_t(&psi_p)?.scale(-2.0 * lambda / m);
                grad[n_theta..n_theta + n_l * n_l].copy_from_slice(gk.as_slice());
                grad[n_theta + n_l * n_l..].copy_from_slice(gw.as_slice());
                let mut all: Vec<f64> = map.params().to_vec();
                all.extend_from_slice(k.as_slice());
                all.extend_from_slice(wh.as_slice());
                opt.step(&mut all, &grad);
                map.params_mut().copy_from_slice(&all[..n_theta]);
                k.as_mut_slice().copy_from_slice(&all[n_theta..n_theta + n_l * n_l]);
                wh.as_mut_slice().copy_from_slice(&all[n_theta + n_l * n_l..]);
                psi_p = map.evaluate(&snapshots.xp)?;
                psi_f = map.evaluate(&snapshots.xf)?;
            }
        }
    }

    let warnings = rank_warning(rank, map.input_dim()).into_iter().collect();
    Ok(KoopmanModel {
        meta: TrainingMeta {
            method: match config.mode {
                TrainingMode::Alternating => "ocdeepdmd-alternating".into(),
                TrainingMode::Joint => "ocdeepdmd-joint".into(),
            },
            description: describe_network(shape, config),
            seed: shape.init_seed,
            config: Some(config.clone()),
            loss_history: history,
            warnings,
        },
        map,
        k,
        wh,
        standardization: snapshots.standardization.clone(),
    })
}

fn describe_network(shape: &NetworkShape, config: &TrainConfig) -> String {
    let widths: Vec<String> = shape.layer_widths.iter().map(|w| w.to_string()).collect();
    format!(
        "network [{}] {} lr={} epochs={}",
        widths.join(","),
        shape.activation.name(),
        config.learning_rate,
        config.epochs
    )
}

/// Prediction accuracy of one split, on destandardized quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub split: Split,
    pub r2_x_1step: f64,
    pub r2_x_nstep: f64,
    pub r2_y_1step: f64,
    pub r2_y_nstep: f64,
}

impl FitReport {
    pub fn metrics(&self) -> [(&'static str, f64); 4] {
        [
            ("r2_x_1step", self.r2_x_1step),
            ("r2_x_nstep", self.r2_x_nstep),
            ("r2_y_1step", self.r2_y_1step),
            ("r2_y_nstep", self.r2_y_nstep),
        ]
    }

    /// Sum of the four metrics; non-finite values count as minus infinity.
    pub fn total(&self) -> f64 {
        let s: f64 = self.metrics().iter().map(|(_, v)| v).sum();
        if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            s
        }
    }
}

pub fn score(model: &KoopmanModel, dataset: &Dataset, split: Split) -> Result<FitReport> {
    if dataset.state_dim != model.state_dim() || dataset.output_dim != model.output_dim() {
        return Err(mismatch(
            "score",
            format_args!("{} states, {} outputs", model.state_dim(), model.output_dim()),
            format_args!("{} states, {} outputs", dataset.state_dim, dataset.output_dim),
        ));
    }
    let stats = &model.standardization;
    let (mut x1, mut xn, mut y1, mut yn) = (R2::default(), R2::default(), R2::default(), R2::default());
    let mut any = false;
    for t in dataset.split(split) {
        any = true;
        let mut rolled = model.lift(&t.states[0])?;
        let mut prev = rolled.clone();
        for j in 1..t.len() {
            let one = model.k.matvec(&prev)?;
            rolled = model.k.matvec(&rolled)?;
            let (xh1, yh1) = model.readout(&one)?;
            let (xhn, yhn) = model.readout(&rolled)?;
            x1.push(&t.states[j], &xh1, &stats.x_baseline);
            xn.push(&t.states[j], &xhn, &stats.x_baseline);
            y1.push(&t.outputs[j], &yh1, &stats.y_baseline);
            yn.push(&t.outputs[j], &yhn, &stats.y_baseline);
            prev = model.lift(&t.states[j])?;
        }
    }
    if !any {
        return Err(Error::Empty("score split"));
    }
    Ok(FitReport {
        split,
        r2_x_1step: x1.value(),
        r2_x_nstep: xn.value(),
        r2_y_1step: y1.value(),
        r2_y_nstep: yn.value(),
    })
}

/// One grid combination.
#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Dictionary(ObservableMap),
    Network {
        hidden: Vec<usize>,
        nonlinear_dim: usize,
        activation: Activation,
        config: TrainConfig,
    },
}

impl Candidate {
    pub fn lifted_dim(&self, n: usize) -> usize {
        match self {
            Candidate::Dictionary(m) => m.lifted_dim(),
            Candidate::Network { nonlinear_dim, .. } => n + nonlinear_dim + 1,
        }
    }

    pub fn describe(&self, n: usize) -> String {
        match self {
            Candidate::Dictionary(m) => format!("dictionary n_L={}", m.lifted_dim()),
            Candidate::Network {
                hidden,
                nonlinear_dim,
                activation,
                config,
            } => describe_network(&self.shape(n, 0, hidden, *nonlinear_dim, *activation), config),
        }
    }

    fn shape(&self, n: usize, seed: u64, hidden: &[usize], nonlinear_dim: usize, activation: Activation) -> NetworkShape {
        let mut widths = vec![n];
        widths.extend_from_slice(hidden);
        widths.push(nonlinear_dim);
        NetworkShape {
            layer_widths: widths,
            activation,
            init_seed: seed,
        }
    }
}

/// Hyperparameter lists expanded into candidates as a cartesian product.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub hidden: Vec<Vec<usize>>,
    pub nonlinear_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub output_weight: f64,
    pub mode: TrainingMode,
    pub dictionaries: Vec<DictionaryKind>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            hidden: vec![vec![24, 24]],
            nonlinear_dims: vec![12],
            activations: vec![Activation::Elu],
            learning_rates: vec![0.01],
            epochs: vec![1000],
            output_weight: 1.0,
            mode: TrainingMode::Alternating,
            dictionaries: Vec::new(),
        }
    }
}

impl Grid {
    /// Dictionaries first, then networks in nested list order.
    pub fn candidates(&self, n: usize) -> Result<Vec<Candidate>> {
        let mut out = Vec::new();
        for d in &self.dictionaries {
            out.push(Candidate::Dictionary(ObservableMap::make_dictionary(n, d.clone())?));
        }
        for hidden in &self.hidden {
            for &nonlinear_dim in &self.nonlinear_dims {
                for &activation in &self.activations {
                    for &learning_rate in &self.learning_rates {
                        for &epochs in &self.epochs {
                            out.push(Candidate::Network {
                                hidden: hidden.clone(),
                                nonlinear_dim,
                                activation,
                                config: TrainConfig {
                                    learning_rate,
                                    epochs,
                                    output_weight: self.output_weight,
                                    mode: self.mode,
                                },
                            });
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Empty("hyperparameter grid"));
        }
        Ok(out)
    }
}

/// Initialization seed of combination `index`: its own ChaCha stream.
pub fn combination_seed(base_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Trains and validates one candidate.
pub fn train_candidate(
    dataset: &Dataset,
    train: &SnapshotSet,
    candidate: &Candidate,
    index: usize,
    base_seed: u64,
) -> Result<(KoopmanModel, FitReport)> {
    let n = dataset.state_dim;
    let model = match candidate {
        Candidate::Dictionary(map) => fit_edmd(train, map.clone())?,
        Candidate::Network {
            hidden,
            nonlinear_dim,
            activation,
            config,
        } => {
            let shape = candidate.shape(n, combination_seed(base_seed, index), hidden, *nonlinear_dim, *activation);
            fit_ocdeepdmd(train, &shape, config)?
        }
    };
    let report = score(&model, dataset, Split::Validation)?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardEntry {
    pub index: usize,
    pub description: String,
    pub lifted_dim: usize,
    pub validation: Option<FitReport>,
    pub error: Option<String>,
}

impl LeaderboardEntry {
    pub fn score(&self) -> f64 {
        self.validation.map_or(f64::NEG_INFINITY, |r| r.total())
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: KoopmanModel,
    pub best_index: usize,
    /// Sorted best first.
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Orders results best first and picks the winner. `results[i]` belongs to
/// `candidates[i]`.
pub fn rank_results(
    n: usize,
    candidates: &[Candidate],
    results: Vec<Result<(KoopmanModel, FitReport)>>,
) -> Result<GridResult> {
    let mut models: Vec<Option<KoopmanModel>> = Vec::with_capacity(results.len());
    let mut board = Vec::with_capacity(results.len());
    for (index, (c, r)) in candidates.iter().zip(results).enumerate() {
        let (model, validation, error) = match r {
            Ok((m, rep)) => (Some(m), Some(rep), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        models.push(model);
        board.push(LeaderboardEntry {
            index,
            description: c.describe(n),
            lifted_dim: c.lifted_dim(n),
            validation,
            error,
        });
    }
    board.sort_by(|a, b| {
        b.score()
            .total_cmp(&a.score())
            .then(a.lifted_dim.cmp(&b.lifted_dim))
            .then(a.index.cmp(&b.index))
    });
    let Some(best_index) = board.iter().find(|e| e.error.is_none()).map(|e| e.index) else {
        return Err(Error::AllCombinationsFailed {
            diagnostics: board
                .iter()
                .map(|e| format!("#{} {}: {}", e.index, e.description, e.error.as_deref().unwrap_or("")))
                .collect(),
        });
    };
    let best = models[best_index].take().expect("successful entry has a model");
    Ok(GridResult {
        best,
        best_index,
        leaderboard: board,
    })
}

/// Sequential grid search; training snapshots are built once.
pub fn grid_search(
    dataset: &Dataset,
    candidates: &[Candidate],
    mode: StandardizeMode,
    base_seed: u64,
) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    let train = build_snapshots(dataset, Split::Train, mode)?;
    let results = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| train_candidate(dataset, &train, c, i, base_seed))
        .collect();
    rank_results(dataset.state_dim, candidates, results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Trajectory;

    fn linear_dataset(a: &Matrix, ics: &[[f64; 2]], len: usize) -> Dataset {
        let trajectories = ics
            .iter()
            .enumerate()
            .map(|(id, ic)| {
                let mut states = vec![ic.to_vec()];
                for _ in 1..len {
                    let next = a.matvec(states.last().unwrap()).unwrap();
                    states.push(next);
                }
                let outputs = states.iter().map(|x| vec![x[0] + 2.0 * x[1]]).collect();
                Trajectory {
                    ic_id: id,
                    states,
                    outputs,
                    times: (0..len).map(|t| t as f64).collect(),
                }
            })
            .collect();
        Dataset {
            spec_name: "linear".into(),
            seed: 0,
            state_dim: 2,
            output_dim: 1,
            sample_time: 1.0,
            trajectories,
            splits: (0..ics.len()).map(Split::round_robin).collect(),
        }
    }

    fn sample() -> (Matrix, Dataset) {
        let a = Matrix::from_rows(&[[0.9, 0.2], [-0.1, 0.8]]);
        let ics = [[1.0, 0.5], [-0.3, 2.0], [0.7, -1.2], [2.0, 1.0], [-1.0, -1.0], [0.1, 0.4]];
        let d = linear_dataset(&a, &ics, 20);
        (a, d)
    }

    #[test]
    fn snapshot_shapes_and_boundaries() {
        let (_, d) = sample();
        let s = build_snapshots(&d, Split::Train, StandardizeMode::None).unwrap();
        assert_eq!(s.len(), 2 * 19);
        assert_eq!(s.segments, vec![(0, 19), (19, 19)]);
        // last Xp column of IC 0 pairs with its own successor
        let t0 = &d.trajectories[0];
        assert_eq!(s.xf.col(18), t0.states[19]);
        assert_eq!(s.xp.col(19), d.trajectories[3].states[0]);
    }

    #[test]
    fn zscore_moments_and_round_trip() {
        let (_, d) = sample();
        let s = build_snapshots(&d, Split::Train, StandardizeMode::ZScore).unwrap();
        for i in 0..2 {
            let row = s.xp.row(i);
            let m = row.iter().sum::<f64>() / row.len() as f64;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / row.len() as f64;
            assert!(m.abs() < 1e-10 && (v.sqrt() - 1.0).abs() < 1e-10);
        }
        let st = &s.standardization;
        let x = [3.25, -7.5];
        let back = st.destandardize_x(&st.standardize_x(&x));
        assert!(back.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn short_trajectory_rejected() {
        let (_, mut d) = sample();
        d.trajectories[0].states.truncate(1);
        d.trajectories[0].outputs.truncate(1);
        assert!(matches!(
            build_snapshots(&d, Split::Train, StandardizeMode::None),
            Err(Error::TrajectoryTooShort { ic_id: 0, .. })
        ));
    }

    #[test]
    fn linear_recovery_with_trivial_dictionary() {
        let (a, d) = sample();
        let s = build_snapshots(&d, Split::Train, StandardizeMode::None).unwrap();
        let map = ObservableMap::monomials(2, vec![]).unwrap();
        let m = fit_edmd(&s, map).unwrap();
        assert!(m.k.block(0, 2, 0, 2).sub(&a).unwrap().max_abs() < 1e-8);
        let r = score(&m, &d, Split::Test).unwrap();
        for (_, v) in r.metrics() {
            assert!((v - 1.0).abs() < 1e-9, "{r:?}");
        }
        assert!(m.meta.warnings.is_empty());
    }

    #[test]
    fn standardization_does_not_change_exact_scores() {
        let (_, d) = sample();
        let map = ObservableMap::monomials(2, vec![]).unwrap();
        let raw = fit_edmd(&build_snapshots(&d, Split::Train, StandardizeMode::None).unwrap(), map.clone()).unwrap();
        let z = fit_edmd(&build_snapshots(&d, Split::Train, StandardizeMode::ZScore).unwrap(), map).unwrap();
        let (a, b) = (score(&raw, &d, Split::Test).unwrap(), score(&z, &d, Split::Test).unwrap());
        for ((_, u), (_, v)) in a.metrics().iter().zip(b.metrics()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_predictor_scores_zero() {
        let (_, d) = sample();
        let s = build_snapshots(&d, Split::Train, StandardizeMode::None).unwrap();
        let mut m = fit_edmd(&s, ObservableMap::monomials(2, vec![]).unwrap()).unwrap();
        // K sends everything to the constant baseline; W_h reads the output baseline.
        let st = &m.standardization;
        let mut k = Matrix::zeros(3, 3);
        k[(0, 2)] = st.x_baseline[0];
        k[(1, 2)] = st.x_baseline[1];
        k[(2, 2)] = 1.0;
        let mut wh = Matrix::zeros(1, 3);
        wh[(0, 2)] = st.y_baseline[0];
        m.k = k;
        m.wh = wh;
        let r = score(&m, &d, Split::Train).unwrap();
        for (_, v) in r.metrics() {
            assert!(v.abs() < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn constant_data_warns_about_rank() {
        let (_, mut d) = sample();
        for t in &mut d.trajectories {
            for x in &mut t.states {
                *x = vec![1.0, 1.0];
            }
        }
        let s = build_snapshots(&d, Split::Train, StandardizeMode::None).unwrap();
        let m = fit_edmd(&s, ObservableMap::monomials(2, vec![vec![2, 0]]).unwrap()).unwrap();
        assert_eq!(m.meta.warnings.len(), 1);
    }

    fn small_shape(seed: u64) -> NetworkShape {
        NetworkShape {
            layer_widths: vec![2, 8, 3],
            activation: Activation::Elu,
            init_seed: seed,
        }
    }

    #[test]
    fn zero_epochs_equals_closed_form() {
        let (_, d) = sample();
        let s = build_snapshots(&d, Split::Train, StandardizeMode::ZScore).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let m = fit_ocdeepdmd(&s, &small_shape(1), &cfg).unwrap();
        let psi_p = m.map.evaluate(&s.xp).unwrap();
        let psi_f = m.map.evaluate(&s.xf).unwrap();
        let (k, wh, _) = closed_form(&psi_p, &psi_f, &s.yp).unwrap();
        assert_eq!(m.k, k);
        assert_eq!(m.wh, wh);
        assert_eq!(m.meta.loss_history.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let (_, d) = sample();
        let s = build_snapshots(&d, Split::Train, StandardizeMode::ZScore).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        for mode in [TrainingMode::Alternating, TrainingMode::Joint] {
            let cfg = TrainConfig { mode, ..cfg.clone() };
            let a = fit_ocdeepdmd(&s, &small_shape(3), &cfg).unwrap();
            let b = fit_ocdeepdmd(&s, &small_shape(3), &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.meta.loss_history.len(), 21);
        }
    }

    #[test]
    fn huge_learning_rate_diverges_or_fails() {
        let (_, d) = sample();
        let s = build_snapshots(&d, Split::Train, StandardizeMode::ZScore).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            epochs: 50,
            mode: TrainingMode::Joint,
            ..TrainConfig::default()
        };
        let err = fit_ocdeepdmd(&s, &small_shape(2), &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. } | Error::NonFiniteLoss { .. }), "{err}");
    }

    #[test]
    fn tie_break_prefers_smaller_then_earlier() {
        let (_, d) = sample();
        let small = Candidate::Dictionary(ObservableMap::monomials(2, vec![]).unwrap());
        let large = Candidate::Dictionary(ObservableMap::monomials(2, vec![vec![1, 0], vec![0, 1]]).unwrap());
        let cands = [large, small.clone(), small];
        let r = grid_search(&d, &cands, StandardizeMode::None, 0).unwrap();
        // the duplicated-state dictionary fits just as well but is larger
        assert_eq!(r.best_index, 1);
        assert_eq!(r.leaderboard.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 2, 0]);
    }

    #[test]
    fn all_failures_reported() {
        let (_, d) = sample();
        let bad = Candidate::Network {
            hidden: vec![4],
            nonlinear_dim: 2,
            activation: Activation::Elu,
            config: TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::default()
            },
        };
        match grid_search(&d, &[bad.clone(), bad], StandardizeMode::ZScore, 0) {
            Err(Error::AllCombinationsFailed { diagnostics }) => assert_eq!(diagnostics.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn combination_seeds_differ() {
        assert_ne!(combination_seed(7, 0), combination_seed(7, 1));
        assert_eq!(combination_seed(7, 3), combination_seed(7, 3));
    }
}
