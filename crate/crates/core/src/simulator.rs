//! Built-in test systems and trajectory generation.
//!
//! Two continuous-time gene networks (a toxin-antitoxin network with a growth
//! output, and a composed activator-repressor / repressilator / toggle switch
//! circuit) plus a two-state discrete map with an exact finite Koopman
//! representation. Continuous systems are integrated with fixed-step RK4.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// RK4 substeps per sample interval. Example 1 has a sub-second transient in
/// x7 right after the initial condition; 80 substeps keep the sampled states
/// within 1e-6 relative of a run at twice the resolution.
pub const DEFAULT_SUBSTEPS: usize = 80;

macro_rules! params {
    ($(#[$meta:meta])* $name:ident { $($field:ident = $default:expr),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct $name {
            $(pub $field: f64,)*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl $name {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn get(&self, name: &str) -> Option<f64> {
                match name {
                    $(stringify!($field) => Some(self.$field),)*
                    _ => None,
                }
            }

            pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
                match name {
                    $(stringify!($field) => {
                        self.$field = value;
                        Ok(())
                    })*
                    _ => Err(Error::UnknownParameter(name.to_string())),
                }
            }
        }
    };
}

params! {
    /// Toxin-antitoxin network driving four gyrase-regulated genes; the
    /// growth output depends on genes 8 and 11 only.
    Example1Params {
        k1f = 1.4, k1r = 0.003, k2f = 1.1, k2r = 0.19, k3f = 0.04, k3r = 2.2,
        k4f = 0.0035, k4r = 2.2, k5f = 0.14, k5r = 0.13,
        a1 = 0.8, k1 = 0.3, n1 = 2.0,
        a2 = 1.9, k2 = 2.0, n2 = 5.0,
        a3 = 4.0, k3 = 4.0, n3 = 2.0,
        a4 = 0.7, k4 = 0.5, n4 = 3.0,
        gamma1 = 0.3, gamma2 = 0.1, gamma3 = 0.03, gamma4 = 0.02,
        gamma5 = 0.4, gamma6 = 0.09, gamma7 = 0.01,
        d1 = 0.2, d2 = 0.03, d3 = 0.3, d4 = 0.1,
        mu_y = 10.0, y0 = 0.02, k_y = 10.0,
        u0 = 0.0,
    }
}

params! {
    /// Activator-repressor, repressilator and toggle switch with one output each.
    Example2Params {
        kappa1 = 1.0, delta1 = 1.0, alpha1 = 250.0, k1 = 1.0, n1 = 2.0, beta1 = 0.04,
        k2 = 1.5, m1 = 3.0, gamma1 = 1.0,
        kappa2 = 1.0, delta2 = 1.0, alpha2 = 30.0, beta2 = 0.004, gamma2 = 0.5,
        v1 = 2.0, k11 = 1.0, n11 = 1.0, k12 = 0.4, n12 = 1.0,
        c13 = 0.1, alpha3 = 10.0, alpha4 = 10.0, alpha5 = 10.0,
        gamma3 = 0.3, gamma4 = 0.3, gamma5 = 0.3,
        k5 = 1.0, n5 = 2.0, k3 = 1.0, n3 = 4.0, k4 = 1.0, n4 = 3.0,
        k24 = 0.02, n24 = 1.0, k25 = 1.0, n25 = 2.0, v2 = 1.0,
        c26 = 0.001, alpha6 = 1.0, k6 = 10.0, n6 = 1.0, gamma6 = 0.09, gamma7 = 0.09,
        k36 = 120.0, n36 = 1.0, v3 = 1.0,
    }
}

params! {
    /// `x1+ = a x1`, `x2+ = b x2 + gamma x1^2`, `y = x2^2`.
    AnalyticalParams { a = 0.9, b = 0.5, gamma = 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum System {
    Example1(Example1Params),
    Example2(Example2Params),
    Analytical(AnalyticalParams),
}

impl System {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            System::Example1(_) => Example1Params::NAMES,
            System::Example2(_) => Example2Params::NAMES,
            System::Analytical(_) => AnalyticalParams::NAMES,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match self {
            System::Example1(p) => p.get(name),
            System::Example2(p) => p.get(name),
            System::Analytical(p) => p.get(name),
        }
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        match self {
            System::Example1(p) => p.set(name, value),
            System::Example2(p) => p.set(name, value),
            System::Analytical(p) => p.set(name, value),
        }
    }
}

#[inline]
fn hill_ratio(x: f64, k: f64, n: f64) -> f64 {
    libm::pow(x / k, n)
}

impl Example1Params {
    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let p = self;
        let (x1, x2, x3, x4, x5, x6, x7) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6]);
        let r1 = p.k1f * x1 * x2 - p.k1r * x3;
        let r2 = p.k2f * x2 * x3 - p.k2r * x4;
        let r3 = p.k3f * x4 - p.k3r * x6 * x7;
        let r4 = p.k4f * x3 - p.k4r * x5 * x7;
        let r5 = p.k5f * x2 * x5 - p.k5r * x6;
        dx[0] = -r1 - p.gamma1 * x1 + p.u0;
        dx[1] = -r1 - r2 - r5 - p.gamma2 * x2;
        dx[2] = r1 - r2 - r4 - p.gamma3 * x3;
        dx[3] = r2 - r3 - p.gamma4 * x4;
        dx[4] = r4 - r5 - p.gamma5 * x5;
        dx[5] = r5 + r3 - p.gamma6 * x6;
        dx[6] = r3 + r4 - p.gamma7 * x7;
        let act = |a: f64, k: f64, n: f64| {
            let h = hill_ratio(x7, k, n);
            a * h / (1.0 + h)
        };
        dx[7] = act(p.a1, p.k1, p.n1) - p.d1 * x[7];
        dx[8] = act(p.a2, p.k2, p.n2) - p.d2 * x[8];
        dx[9] = act(p.a3, p.k3, p.n3) - p.d3 * x[9];
        dx[10] = act(p.a4, p.k4, p.n4) - p.d4 * x[10];
    }

    fn output(&self, x: &[f64], y: &mut [f64]) {
        let (x8, x11) = (x[7], x[10]);
        y[0] = self.y0 * libm::exp(self.mu_y * x8 / (self.k_y + x8 + x11));
    }
}

impl Example2Params {
    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let p = self;
        let a1 = hill_ratio(x[0], p.k1, p.n1);
        let r2 = hill_ratio(x[1], p.k2, p.m1);
        dx[0] = p.kappa1 / p.delta1 * (p.alpha1 * a1 + p.beta1) / (1.0 + a1 + r2) - p.gamma1 * x[0];
        dx[1] = p.kappa2 / p.delta2 * (p.alpha2 * a1 + p.beta2) / (1.0 + a1) - p.gamma2 * x[1];
        dx[2] = p.c13 * x[0] + p.alpha3 / (1.0 + hill_ratio(x[4], p.k5, p.n5)) - p.gamma3 * x[2];
        dx[3] = p.alpha4 / (1.0 + hill_ratio(x[2], p.k3, p.n3)) - p.gamma4 * x[3];
        dx[4] = p.alpha5 / (1.0 + hill_ratio(x[3], p.k4, p.n4)) - p.gamma5 * x[4];
        dx[5] = p.c26 * x[1] + p.alpha6 / (1.0 + hill_ratio(x[6], p.k6, p.n6)) - p.gamma6 * x[5];
        dx[6] = p.alpha6 / (1.0 + hill_ratio(x[5], p.k6, p.n6)) - p.gamma7 * x[6];
    }

    fn output(&self, x: &[f64], y: &mut [f64]) {
        let p = self;
        let h11 = hill_ratio(x[0], p.k11, p.n11);
        let h12 = hill_ratio(x[1], p.k12, p.n12);
        y[0] = p.v1 * h11 / (1.0 + h11 + h12);
        let h24 = hill_ratio(x[3], p.k24, p.n24);
        let h25 = hill_ratio(x[4], p.k25, p.n25);
        y[1] = p.v2 * h24 / (1.0 + h24 + h25);
        let h36 = hill_ratio(x[5], p.k36, p.n36);
        y[2] = p.v3 * h36 / (1.0 + h36);
    }
}

impl AnalyticalParams {
    pub fn step(&self, x: &[f64], next: &mut [f64]) {
        next[0] = self.a * x[0];
        next[1] = self.b * x[1] + self.gamma * x[0] * x[0];
    }

    pub fn output(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[1] * x[1];
    }

    /// Human-readable notes for parameter choices where the observation space
    /// loses dimension.
    pub fn degeneracy_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if (self.a * self.a - self.b).abs() < 1e-12 {
            w.push(format!("degenerate parameters: a^2 = b = {}", self.b));
        }
        if (self.gamma - 2.0 * self.b).abs() < 1e-12 {
            w.push(format!("degenerate parameters: gamma = 2b = {}", self.gamma));
        }
        w
    }
}

/// A simulated system together with its sampling protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneNetworkSpec {
    pub name: String,
    pub system: System,
    pub state_dim: usize,
    pub output_dim: usize,
    /// Seconds between samples; one map iteration for discrete systems.
    pub sample_time: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub ic_base: Vec<f64>,
    /// Per-entry `(low, high)` bounds of the uniform perturbation added to `ic_base`.
    pub ic_noise: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl GeneNetworkSpec {
    pub fn is_discrete(&self) -> bool {
        matches!(self.system, System::Analytical(_))
    }

    /// Number of stored samples per trajectory, including the initial state.
    pub fn samples(&self) -> usize {
        libm::round(self.horizon / self.sample_time) as usize + 1
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        self.system.set(name, value)?;
        if let System::Analytical(p) = &self.system {
            self.warnings = p.degeneracy_warnings();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument("state and output dimensions must be positive".into()));
        }
        if !(self.sample_time > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument("sample time and horizon must be positive".into()));
        }
        let ratio = self.horizon / self.sample_time;
        if (ratio - libm::round(ratio)).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon {} is not a multiple of the sample time {}",
                self.horizon, self.sample_time
            )));
        }
        if self.ic_base.len() != self.state_dim || self.ic_noise.len() != self.state_dim {
            return Err(mismatch("GeneNetworkSpec::validate", self.state_dim, self.ic_base.len()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Continuous vector field. Discrete systems report the one-step increment.
    pub fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        match &self.system {
            System::Example1(p) => p.rhs(x, dx),
            System::Example2(p) => p.rhs(x, dx),
            System::Analytical(p) => {
                p.step(x, dx);
                for (d, xi) in dx.iter_mut().zip(x) {
                    *d -= xi;
                }
            }
        }
    }

    pub fn output(&self, x: &[f64], y: &mut [f64]) {
        match &self.system {
            System::Example1(p) => p.output(x, y),
            System::Example2(p) => p.output(x, y),
            System::Analytical(p) => p.output(x, y),
        }
    }

    pub fn output_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output_dim];
        self.output(x, &mut y);
        y
    }
}

pub fn builtin_example1() -> GeneNetworkSpec {
    GeneNetworkSpec {
        name: "example1".into(),
        system: System::Example1(Example1Params::default()),
        state_dim: 11,
        output_dim: 1,
        sample_time: 1.0,
        horizon: 100.0,
        substeps: DEFAULT_SUBSTEPS,
        ic_base: vec![0.4, 0.1, 0.2, 0.4, 0.3, 0.8, 0.5, 0.3, 0.8, 0.1, 1.8],
        ic_noise: vec![(0.0, 1.0); 11],
        warnings: Vec::new(),
    }
}

pub fn builtin_example2() -> GeneNetworkSpec {
    GeneNetworkSpec {
        name: "example2".into(),
        system: System::Example2(Example2Params::default()),
        state_dim: 7,
        output_dim: 3,
        sample_time: 0.5,
        horizon: 100.0,
        substeps: DEFAULT_SUBSTEPS,
        ic_base: vec![100.1, 20.1, 10.0, 10.0, 10.0, 100.1, 100.1],
        ic_noise: vec![(0.0, 4.0); 7],
        warnings: Vec::new(),
    }
}

/// Discrete two-state map with a six-observable exact Koopman model.
///
/// Initial conditions are drawn from `(0.2, 1.2)^2`, inside the positive
/// quadrant where the reduced coordinates are well defined; trajectories run
/// for 30 iterations.
pub fn builtin_analytical(a: f64, b: f64, gamma: f64) -> GeneNetworkSpec {
    let params = AnalyticalParams { a, b, gamma };
    let warnings = params.degeneracy_warnings();
    GeneNetworkSpec {
        name: "analytical".into(),
        system: System::Analytical(params),
        state_dim: 2,
        output_dim: 1,
        sample_time: 1.0,
        horizon: 30.0,
        substeps: 1,
        ic_base: vec![0.2, 0.2],
        ic_noise: vec![(0.0, 1.0); 2],
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub ic_id: usize,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// One classical RK4 step of size `h`.
pub fn rk4_step(f: &impl Fn(&[f64], &mut [f64]), x: &mut [f64], h: f64, scratch: &mut Rk4Scratch) {
    let n = x.len();
    scratch.resize(n);
    let Rk4Scratch { k1, k2, k3, k4, tmp } = scratch;
    f(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(tmp, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

#[derive(Debug, Default, Clone)]
pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn resize(&mut self, n: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(n, 0.0);
        }
    }
}

/// Advances `x` by one sample interval `ts` using `substeps` RK4 steps.
pub fn integrate_sample(f: &impl Fn(&[f64], &mut [f64]), x: &mut [f64], ts: f64, substeps: usize, scratch: &mut Rk4Scratch) {
    let h = ts / substeps as f64;
    for _ in 0..substeps {
        rk4_step(f, x, h, scratch);
    }
}

/// Simulates one initial condition over the spec's horizon.
pub fn simulate(spec: &GeneNetworkSpec, ic: &[f64]) -> Result<Trajectory> {
    simulate_with_id(spec, ic, 0)
}

pub fn simulate_with_id(spec: &GeneNetworkSpec, ic: &[f64], ic_id: usize) -> Result<Trajectory> {
    if ic.len() != spec.state_dim {
        return Err(mismatch("simulate", spec.state_dim, ic.len()));
    }
    let samples = spec.samples();
    let mut states = Vec::with_capacity(samples);
    let mut outputs = Vec::with_capacity(samples);
    let mut times = Vec::with_capacity(samples);
    let mut x = ic.to_vec();
    let mut next = vec![0.0; spec.state_dim];
    let mut scratch = Rk4Scratch::default();
    let f = |x: &[f64], dx: &mut [f64]| spec.rhs(x, dx);
    for k in 0..samples {
        let t = k as f64 * spec.sample_time;
        if k > 0 {
            match &spec.system {
                System::Analytical(p) => {
                    p.step(&x, &mut next);
                    x.copy_from_slice(&next);
                }
                _ => integrate_sample(&f, &mut x, spec.sample_time, spec.substeps, &mut scratch),
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { time: t });
        }
        let y = spec.output_vec(&x);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { time: t });
        }
        states.push(x.clone());
        outputs.push(y);
        times.push(t);
    }
    Ok(Trajectory {
        ic_id,
        states,
        outputs,
        times,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    /// Round-robin assignment by initial-condition index.
    pub fn round_robin(index: usize) -> Split {
        Split::ALL[index % 3]
    }
}

/// Simulated trajectories with their split membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec_name: String,
    pub seed: u64,
    pub state_dim: usize,
    pub output_dim: usize,
    pub sample_time: f64,
    pub trajectories: Vec<Trajectory>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Trajectory> + '_ {
        self.trajectories
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(t, _)| t)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }

    /// Keeps only the listed output columns (0-based), in the given order.
    pub fn with_outputs(&self, outputs: &[usize]) -> Result<Dataset> {
        if outputs.is_empty() {
            return Err(Error::Empty("output subset"));
        }
        if let Some(bad) = outputs.iter().find(|o| **o >= self.output_dim) {
            return Err(Error::InvalidArgument(format!(
                "output index {} out of range for {} outputs",
                bad + 1,
                self.output_dim
            )));
        }
        let mut out = self.clone();
        out.output_dim = outputs.len();
        for t in &mut out.trajectories {
            for y in &mut t.outputs {
                *y = outputs.iter().map(|&o| y[o]).collect();
            }
        }
        Ok(out)
    }

    /// Adds i.i.d. gaussian noise of standard deviation `sigma` to every
    /// stored state and output entry.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for t in &mut out.trajectories {
            for v in t.states.iter_mut().chain(t.outputs.iter_mut()) {
                for e in v.iter_mut() {
                    *e += sigma * standard_normal(&mut rng);
                }
            }
        }
        out
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Draws `n_ic` perturbed initial conditions.
pub fn sample_initial_conditions(spec: &GeneNetworkSpec, n_ic: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_ic)
        .map(|_| {
            spec.ic_base
                .iter()
                .zip(&spec.ic_noise)
                .map(|(b, &(lo, hi))| if hi > lo { b + rng.random_range(lo..hi) } else { b + lo })
                .collect()
        })
        .collect()
}

/// Simulates `n_ic` random initial conditions and splits them
/// train/validation/test round-robin.
pub fn generate_dataset(spec: &GeneNetworkSpec, n_ic: usize, seed: u64) -> Result<Dataset> {
    if n_ic < 3 || n_ic % 3 != 0 {
        return Err(Error::InvalidArgument(format!(
            "number of initial conditions must be a positive multiple of 3, got {n_ic}"
        )));
    }
    spec.validate()?;
    let ics = sample_initial_conditions(spec, n_ic, seed);
    let mut trajectories = Vec::with_capacity(n_ic);
    let mut failed = Vec::new();
    for (id, ic) in ics.iter().enumerate() {
        match simulate_with_id(spec, ic, id) {
            Ok(t) => trajectories.push(t),
            Err(_) => failed.push(id),
        }
    }
    if !failed.is_empty() {
        return Err(Error::SimulationFailed { ids: failed });
    }
    Ok(Dataset {
        spec_name: spec.name.clone(),
        seed,
        state_dim: spec.state_dim,
        output_dim: spec.output_dim,
        sample_time: spec.sample_time,
        trajectories,
        splits: (0..n_ic).map(Split::round_robin).collect(),
    })
}
