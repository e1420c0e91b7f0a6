//! State-inclusive observable maps `psi(x) = [x; phi(x); 1]`.
//!
//! `phi` is either a fixed dictionary (monomials or gaussian RBFs) or a small
//! feedforward network whose last layer is linear. Both backends expose exact
//! Jacobians; the network backend also exposes reverse-mode parameter
//! gradients for training.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    libm::expm1(z)
                }
            }
            Activation::Tanh => libm::tanh(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    libm::exp(z)
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(z);
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
        }
    }
}

/// Layer widths from input to output, activation on hidden layers, and the
/// seed for Xavier-uniform initialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::InvalidArgument(
                "network needs an input, at least one hidden layer and an output".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Fully connected network; hidden layers use `activation`, the last layer is affine.
///
/// Parameters are stored flat, layer by layer: the `out x in` weight matrix in
/// row-major order followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

struct Forward {
    /// Pre-activations of hidden layers, each `width x m`.
    pre: Vec<Matrix>,
    /// Layer inputs: `acts[0]` is the network input, `acts[l]` the activated
    /// output of hidden layer `l`.
    acts: Vec<Matrix>,
    out: Matrix,
}

impl Mlp {
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn new(shape: &NetworkShape) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(shape.init_seed);
        let mut params = Vec::with_capacity(Self::param_count(&shape.layer_widths));
        for w in shape.layer_widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(core::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            widths: shape.layer_widths.clone(),
            activation: shape.activation,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated shape")
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Offsets of `(weights, biases)` for layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.widths[..=l].windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        (start, start + self.widths[l] * self.widths[l + 1])
    }

    fn weight(&self, l: usize) -> Matrix {
        let (w, b) = self.offsets(l);
        Matrix::from_vec(self.widths[l + 1], self.widths[l], self.params[w..b].to_vec()).expect("layout")
    }

    fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.offsets(l);
        &self.params[b..b + self.widths[l + 1]]
    }

    fn forward(&self, x: &Matrix) -> Forward {
        let mut pre = Vec::with_capacity(self.layers());
        let mut acts = vec![x.clone()];
        for l in 0..self.layers() {
            let mut z = self.weight(l).matmul(&acts[l]).expect("layer shapes");
            let bias = self.bias(l);
            for (i, b) in bias.iter().enumerate() {
                z.row_mut(i).iter_mut().for_each(|v| *v += b);
            }
            if l + 1 == self.layers() {
                return Forward { pre, acts, out: z };
            }
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            pre.push(z);
            acts.push(a);
        }
        unreachable!("network has at least one layer")
    }

    /// Columnwise evaluation of an `input_dim x m` batch.
    pub fn eval(&self, x: &Matrix) -> Matrix {
        self.forward(x).out
    }

    /// Jacobian `output_dim x input_dim` at a single point.
    pub fn jacobian(&self, x: &[f64]) -> Matrix {
        let f = self.forward(&Matrix::from_columns(x.len(), &[x]));
        let mut j = self.weight(0);
        for l in 1..self.layers() {
            let z = &f.pre[l - 1];
            for i in 0..j.rows() {
                let d = self.activation.derivative(z[(i, 0)]);
                j.row_mut(i).iter_mut().for_each(|v| *v *= d);
            }
            j = self.weight(l).matmul(&j).expect("layer shapes");
        }
        j
    }

    /// Gradient of `sum(upstream .* eval(x))` with respect to the parameters,
    /// and with respect to the input batch.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> (Vec<f64>, Matrix) {
        let f = self.forward(x);
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = upstream.clone();
        for l in (0..self.layers()).rev() {
            let input = &f.acts[l];
            let (w_off, b_off) = self.offsets(l);
            // dW = delta * input^T, db = row sums of delta
            let dw = delta.matmul_t(input).expect("layer shapes");
            grad[w_off..b_off].copy_from_slice(dw.as_slice());
            for i in 0..delta.rows() {
                grad[b_off + i] = delta.row(i).iter().sum();
            }
            let back = self.weight(l).transpose().matmul(&delta).expect("layer shapes");
            if l == 0 {
                return (grad, back);
            }
            let z = &f.pre[l - 1];
            let mut d = back;
            for (dv, zv) in d.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *dv *= self.activation.derivative(*zv);
            }
            delta = d;
        }
        unreachable!("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dictionary {
    /// Products `prod_i x_i^e_i`, one exponent vector per function.
    Monomials { exponents: Vec<Vec<u32>> },
    /// Gaussians `exp(-|x - c|^2 / (2 sigma^2))`.
    Rbf { centers: Vec<Vec<f64>>, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DictionaryKind {
    /// All monomials of total degree 2..=degree, graded lexicographic order.
    Polynomial { degree: u32 },
    Rbf { centers: Vec<Vec<f64>>, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Backend {
    Dictionary(Dictionary),
    Network(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableMap {
    input_dim: usize,
    backend: Backend,
}

/// Exponent vectors of total degree `deg` over `n` variables, lexicographically
/// descending (`x1^2`, `x1 x2`, `x2^2`, ...).
pub fn monomials_of_degree(n: usize, deg: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, deg: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == n {
            prefix.push(deg);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=deg).rev() {
            prefix.push(e);
            rec(n, deg - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(n, deg, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

impl ObservableMap {
    pub fn make_dictionary(n: usize, kind: DictionaryKind) -> Result<Self> {
        let dict = match kind {
            DictionaryKind::Polynomial { degree } => {
                if degree < 2 {
                    return Err(Error::InvalidArgument(format!("polynomial degree must be >= 2, got {degree}")));
                }
                Dictionary::Monomials {
                    exponents: (2..=degree).flat_map(|d| monomials_of_degree(n, d)).collect(),
                }
            }
            DictionaryKind::Rbf { centers, sigma } => {
                if centers.is_empty() {
                    return Err(Error::Empty("rbf centers"));
                }
                if let Some(c) = centers.iter().find(|c| c.len() != n) {
                    return Err(mismatch("rbf center", n, c.len()));
                }
                if !(sigma > 0.0) {
                    return Err(Error::InvalidArgument("rbf width must be positive".into()));
                }
                Dictionary::Rbf { centers, sigma }
            }
        };
        Ok(Self {
            input_dim: n,
            backend: Backend::Dictionary(dict),
        })
    }

    /// Dictionary with an explicit list of monomials.
    pub fn monomials(n: usize, exponents: Vec<Vec<u32>>) -> Result<Self> {
        if let Some(e) = exponents.iter().find(|e| e.len() != n) {
            return Err(mismatch("monomial exponents", n, e.len()));
        }
        Ok(Self {
            input_dim: n,
            backend: Backend::Dictionary(Dictionary::Monomials { exponents }),
        })
    }

    pub fn make_network(shape: &NetworkShape) -> Result<Self> {
        let mlp = Mlp::new(shape)?;
        Ok(Self {
            input_dim: mlp.input_dim(),
            backend: Backend::Network(mlp),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn nonlinear_dim(&self) -> usize {
        match &self.backend {
            Backend::Dictionary(Dictionary::Monomials { exponents }) => exponents.len(),
            Backend::Dictionary(Dictionary::Rbf { centers, .. }) => centers.len(),
            Backend::Network(m) => m.output_dim(),
        }
    }

    pub fn lifted_dim(&self) -> usize {
        self.input_dim + self.nonlinear_dim() + 1
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self.backend, Backend::Network(_))
    }

    pub fn params(&self) -> &[f64] {
        match &self.backend {
            Backend::Network(m) => &m.params,
            Backend::Dictionary(_) => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.backend {
            Backend::Network(m) => &mut m.params,
            Backend::Dictionary(_) => &mut [],
        }
    }

    /// Names of the lifted coordinates, e.g. `x1`, `x1^2*x2`, `phi3`, `1`.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = (1..=self.input_dim).map(|i| format!("x{i}")).collect();
        match &self.backend {
            Backend::Dictionary(Dictionary::Monomials { exponents }) => {
                for e in exponents {
                    let terms: Vec<String> = e
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| **p > 0)
                        .map(|(i, p)| if *p == 1 { format!("x{}", i + 1) } else { format!("x{}^{}", i + 1, p) })
                        .collect();
                    out.push(if terms.is_empty() { "1".into() } else { terms.join("*") });
                }
            }
            _ => out.extend((1..=self.nonlinear_dim()).map(|k| format!("phi{k}"))),
        }
        out.push("1".into());
        out
    }

    fn phi_batch(&self, x: &Matrix) -> Matrix {
        match &self.backend {
            Backend::Network(m) => m.eval(x),
            Backend::Dictionary(d) => {
                let k = self.nonlinear_dim();
                let mut out = Matrix::zeros(k, x.cols());
                let mut point = vec![0.0; x.rows()];
                for c in 0..x.cols() {
                    for (i, p) in point.iter_mut().enumerate() {
                        *p = x[(i, c)];
                    }
                    for (r, v) in dictionary_values(d, &point).into_iter().enumerate() {
                        out[(r, c)] = v;
                    }
                }
                out
            }
        }
    }

    /// Lifts each column of the `n x m` batch to `n_L x m`.
    pub fn evaluate(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.input_dim {
            return Err(mismatch("ObservableMap::evaluate", self.input_dim, x.rows()));
        }
        let phi = self.phi_batch(x);
        let mut out = Matrix::zeros(self.lifted_dim(), x.cols());
        for i in 0..self.input_dim {
            out.row_mut(i).copy_from_slice(x.row(i));
        }
        for r in 0..phi.rows() {
            out.row_mut(self.input_dim + r).copy_from_slice(phi.row(r));
        }
        out.row_mut(self.lifted_dim() - 1).iter_mut().for_each(|v| *v = 1.0);
        Ok(out)
    }

    pub fn evaluate_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(&Matrix::from_columns(x.len(), &[x]))?.col(0))
    }

    /// Exact `n_L x n` Jacobian of `psi` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let n = self.input_dim;
        if x.len() != n {
            return Err(mismatch("ObservableMap::jacobian", n, x.len()));
        }
        let mut j = Matrix::zeros(self.lifted_dim(), n);
        for i in 0..n {
            j[(i, i)] = 1.0;
        }
        let jphi = match &self.backend {
            Backend::Network(m) => m.jacobian(x),
            Backend::Dictionary(d) => dictionary_jacobian(d, x),
        };
        for r in 0..jphi.rows() {
            j.row_mut(n + r).copy_from_slice(jphi.row(r));
        }
        Ok(j)
    }

    /// Gradient of `<upstream, psi(X)>` with respect to the network parameters.
    pub fn backprop(&self, x: &Matrix, upstream: &Matrix) -> Result<Vec<f64>> {
        let Backend::Network(m) = &self.backend else {
            return Err(Error::NoTrainableParameters);
        };
        if x.rows() != self.input_dim || upstream.rows() != self.lifted_dim() || upstream.cols() != x.cols() {
            return Err(mismatch(
                "ObservableMap::backprop",
                format_args!("{}x{} and {}x{}", self.input_dim, x.cols(), self.lifted_dim(), x.cols()),
                format_args!("{:?} and {:?}", x.shape(), upstream.shape()),
            ));
        }
        let phi_up = upstream.block(self.input_dim, self.input_dim + m.output_dim(), 0, upstream.cols());
        Ok(m.backward(x, &phi_up).0)
    }
}

fn monomial(e: &[u32], x: &[f64]) -> f64 {
    e.iter().zip(x).map(|(p, v)| libm::pow(*v, *p as f64)).product()
}

fn dictionary_values(d: &Dictionary, x: &[f64]) -> Vec<f64> {
    match d {
        Dictionary::Monomials { exponents } => exponents.iter().map(|e| monomial(e, x)).collect(),
        Dictionary::Rbf { centers, sigma } => centers
            .iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                libm::exp(-d2 / (2.0 * sigma * sigma))
            })
            .collect(),
    }
}

fn dictionary_jacobian(d: &Dictionary, x: &[f64]) -> Matrix {
    let n = x.len();
    match d {
        Dictionary::Monomials { exponents } => Matrix::from_fn(exponents.len(), n, |r, k| {
            let e = &exponents[r];
            if e[k] == 0 {
                return 0.0;
            }
            let mut v = e[k] as f64 * libm::pow(x[k], (e[k] - 1) as f64);
            for (i, p) in e.iter().enumerate() {
                if i != k {
                    v *= libm::pow(x[i], *p as f64);
                }
            }
            v
        }),
        Dictionary::Rbf { centers, sigma } => {
            let values = dictionary_values(d, x);
            Matrix::from_fn(centers.len(), n, |r, k| -(x[k] - centers[r][k]) / (sigma * sigma) * values[r])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(widths: &[usize], seed: u64) -> ObservableMap {
        ObservableMap::make_network(&NetworkShape {
            layer_widths: widths.to_vec(),
            activation: Activation::Elu,
            init_seed: seed,
        })
        .unwrap()
    }

    #[test]
    fn quadratic_dictionary_enumeration() {
        let m = ObservableMap::make_dictionary(2, DictionaryKind::Polynomial { degree: 2 }).unwrap();
        assert_eq!(m.lifted_dim(), 6);
        assert_eq!(m.labels(), ["x1", "x2", "x1^2", "x1*x2", "x2^2", "1"]);
    }

    #[test]
    fn quartic_dictionary_contains_exact_observables() {
        let m = ObservableMap::make_dictionary(2, DictionaryKind::Polynomial { degree: 4 }).unwrap();
        let labels = m.labels();
        for want in ["x2^2", "x1^4", "x1^2*x2", "x1^2"] {
            assert!(labels.iter().any(|l| l == want), "{want}");
        }
        assert_eq!(m.nonlinear_dim(), 3 + 4 + 5);
    }

    #[test]
    fn rbf_at_center_is_one() {
        let m = ObservableMap::make_dictionary(
            2,
            DictionaryKind::Rbf {
                centers: vec![vec![0.5, -1.0]],
                sigma: 0.7,
            },
        )
        .unwrap();
        assert_eq!(m.evaluate_point(&[0.5, -1.0]).unwrap()[2], 1.0);
    }

    #[test]
    fn bad_dictionaries_rejected() {
        assert!(ObservableMap::make_dictionary(2, DictionaryKind::Polynomial { degree: 1 }).is_err());
        assert!(ObservableMap::make_dictionary(2, DictionaryKind::Rbf { centers: vec![], sigma: 1.0 }).is_err());
    }

    #[test]
    fn zero_column_lifts_to_bias_only() {
        let m = ObservableMap::make_dictionary(3, DictionaryKind::Polynomial { degree: 3 }).unwrap();
        let psi = m.evaluate(&Matrix::zeros(3, 1)).unwrap();
        let n_l = m.lifted_dim();
        for i in 0..n_l - 1 {
            assert_eq!(psi[(i, 0)], 0.0);
        }
        assert_eq!(psi[(n_l - 1, 0)], 1.0);
    }

    #[test]
    fn exact_analytical_observables() {
        let m = ObservableMap::monomials(2, vec![vec![2, 0], vec![0, 2], vec![4, 0], vec![2, 1]]).unwrap();
        let psi = m.evaluate_point(&[2.0, 3.0]).unwrap();
        assert_eq!(psi, vec![2.0, 3.0, 4.0, 9.0, 16.0, 12.0, 1.0]);
        let j = m.jacobian(&[2.0, 3.0]).unwrap();
        assert_eq!(j.row(5), &[12.0, 4.0]);
        assert_eq!(j.row(6), &[0.0, 0.0]);
    }

    #[test]
    fn network_shape_and_determinism() {
        let a = net(&[2, 16, 16, 5], 4);
        assert_eq!((a.nonlinear_dim(), a.lifted_dim()), (5, 8));
        assert_eq!(a, net(&[2, 16, 16, 5], 4));
        assert_ne!(a.params(), net(&[2, 16, 16, 5], 5).params());
        let x = Matrix::from_rows(&[[0.3, -1.0], [2.0, 0.1]]);
        assert_eq!(a.evaluate(&x).unwrap(), a.evaluate(&x).unwrap());
    }

    #[test]
    fn zero_weights_give_constant_phi() {
        let mut a = net(&[2, 4, 3], 1);
        a.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let psi = a.evaluate_point(&[1.5, -2.0]).unwrap();
        assert_eq!(&psi[..2], &[1.5, -2.0]);
        assert_eq!(&psi[2..], &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn dictionary_has_no_trainable_parameters() {
        let m = ObservableMap::make_dictionary(2, DictionaryKind::Polynomial { degree: 2 }).unwrap();
        let x = Matrix::zeros(2, 3);
        assert_eq!(m.backprop(&x, &Matrix::zeros(6, 3)), Err(Error::NoTrainableParameters));
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let m = net(&[3, 5, 2], 2);
        let x = Matrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let g = m.backprop(&x, &Matrix::zeros(m.lifted_dim(), 4)).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn invalid_shapes_rejected() {
        let bad = NetworkShape {
            layer_widths: vec![2, 3],
            activation: Activation::Tanh,
            init_seed: 0,
        };
        assert!(ObservableMap::make_network(&bad).is_err());
    }
}
