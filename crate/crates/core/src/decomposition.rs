//! Observable/unobservable split of a Koopman model for one output, and
//! state sensitivities of the observable part.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::numerics::{norm, svd, Matrix, PINV_RTOL};
use crate::ocdmd::{KoopmanModel, SnapshotSet};

/// Rows whose norm falls below this are left unscaled.
pub const ROW_SCALE_FLOOR: f64 = 1e-12;

pub const DEFAULT_THRESHOLD: f64 = 0.99;

/// Stacks `w, wK, ..., wK^{n_L}` with each row rescaled to unit norm.
pub fn observability_matrix(k: &Matrix, w: &[f64]) -> Result<Matrix> {
    let n_l = k.rows();
    if k.cols() != n_l || w.len() != n_l {
        return Err(mismatch("observability_matrix", n_l, w.len()));
    }
    let mut out = Matrix::zeros(n_l + 1, n_l);
    let mut row = w.to_vec();
    for j in 0..=n_l {
        if j > 0 {
            row = k.vecmat(&row)?;
        }
        // Scaling the iterate instead of the final row keeps powers of K from
        // overflowing; the row space is unchanged.
        let r = norm(&row);
        if r > ROW_SCALE_FLOOR {
            row.iter_mut().for_each(|v| *v /= r);
        }
        out.row_mut(j).copy_from_slice(&row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedModel {
    pub output_index: usize,
    /// Orthogonal `n_L x n_L`; the first `n_ol` columns span the observable part.
    pub v: Matrix,
    pub singular_values: Vec<f64>,
    pub observability_rank: usize,
    pub n_ol: usize,
    /// Top-left `n_ol x n_ol` block of `V^T K V`.
    pub k1: Matrix,
    /// First `n_ol` entries of `w V`.
    pub wh1: Vec<f64>,
    /// Frobenius norm of the upper-right block of `V^T K V` together with the
    /// trailing entries of `w V`.
    pub coupling_residual: f64,
    /// n-step output r² of the truncated system against the full model.
    pub reduced_r2: f64,
    /// True when `n_ol < n_L`.
    pub reduced: bool,
}

impl DecomposedModel {
    /// `psi_o(x)`: the first `n_ol` entries of `V^T psi` for a lifted vector.
    pub fn reduce(&self, psi: &[f64]) -> Result<Vec<f64>> {
        let z = self.v.vecmat(psi)?;
        Ok(z[..self.n_ol].to_vec())
    }
}

/// Initial lifted states of every trajectory in a snapshot set.
fn initial_lifts(model: &KoopmanModel, snapshots: &SnapshotSet) -> Result<Vec<(Vec<f64>, usize)>> {
    snapshots
        .segments
        .iter()
        .map(|&(start, len)| Ok((model.map.evaluate_point(&snapshots.xp.col(start))?, len)))
        .collect()
}

fn truncated_outputs(kt: &Matrix, wt: &[f64], z0: &[f64], r: usize, steps: usize, out: &mut Vec<f64>) -> Result<()> {
    let k = kt.block(0, r, 0, r);
    let w = &wt[..r];
    let mut z = z0[..r].to_vec();
    for j in 0..=steps {
        if j > 0 {
            z = k.matvec(&z)?;
        }
        out.push(w.iter().zip(&z).map(|(a, b)| a * b).sum());
    }
    Ok(())
}

fn r2_vs_reference(reference: &[f64], predicted: &[f64]) -> f64 {
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_tot: f64 = reference.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ss_res: f64 = reference.iter().zip(predicted).map(|(a, b)| (a - b) * (a - b)).sum();
    if ss_tot == 0.0 {
        // constant reference: exact match counts as perfect
        return if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

/// Splits `model` for output row `output_index`, choosing the smallest
/// reduced dimension whose n-step output on the training trajectories
/// reproduces the full model with r² at least `threshold`.
pub fn decompose(model: &KoopmanModel, train: &SnapshotSet, output_index: usize, threshold: f64) -> Result<DecomposedModel> {
    if output_index >= model.output_dim() {
        return Err(Error::InvalidArgument(alloc::format!(
            "output index {} out of range for {} outputs",
            output_index + 1,
            model.output_dim()
        )));
    }
    let w = model.wh.row(output_index).to_vec();
    if norm(&w) == 0.0 {
        return Err(Error::ZeroOutputRow(output_index));
    }
    let n_l = model.lifted_dim();
    let obs = observability_matrix(&model.k, &w)?;
    let dec = svd(&obs)?;
    let v = dec.v;
    let kt = v.transpose().matmul(&model.k)?.matmul(&v)?;
    let wt = v.vecmat(&w)?;

    let starts = initial_lifts(model, train)?;
    let zs: Vec<(Vec<f64>, usize)> = starts
        .iter()
        .map(|(psi, len)| Ok((v.vecmat(psi)?, *len)))
        .collect::<Result<_>>()?;
    let mut full = Vec::new();
    for (z0, steps) in &zs {
        truncated_outputs(&kt, &wt, z0, n_l, *steps, &mut full)?;
    }

    let mut n_ol = n_l;
    let mut reduced_r2 = 1.0;
    let mut pred = Vec::with_capacity(full.len());
    for r in 1..n_l {
        pred.clear();
        for (z0, steps) in &zs {
            truncated_outputs(&kt, &wt, z0, r, *steps, &mut pred)?;
        }
        let score = r2_vs_reference(&full, &pred);
        if score >= threshold {
            n_ol = r;
            reduced_r2 = score;
            break;
        }
    }

    let mut coupling = 0.0;
    for i in 0..n_ol {
        for j in n_ol..n_l {
            coupling += kt[(i, j)] * kt[(i, j)];
        }
    }
    coupling += wt[n_ol..].iter().map(|v| v * v).sum::<f64>();

    Ok(DecomposedModel {
        output_index,
        observability_rank: dec.s.iter().filter(|s| **s > PINV_RTOL * dec.s[0]).count(),
        singular_values: dec.s,
        k1: kt.block(0, n_ol, 0, n_ol),
        wh1: wt[..n_ol].to_vec(),
        coupling_residual: libm::sqrt(coupling),
        reduced_r2,
        reduced: n_ol < n_l,
        n_ol,
        v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub output_index: usize,
    /// `n_ol x n` maxima of absolute gradients.
    pub s: Matrix,
    pub norms: Vec<f64>,
    /// State indices (0-based) by descending norm; ties keep index order.
    pub ranking: Vec<usize>,
}

impl SensitivityReport {
    pub fn from_matrix(output_index: usize, s: Matrix) -> Self {
        let norms: Vec<f64> = (0..s.cols()).map(|j| norm(&s.col(j))).collect();
        let mut ranking: Vec<usize> = (0..norms.len()).collect();
        ranking.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        Self {
            output_index,
            s,
            norms,
            ranking,
        }
    }

    /// 1-based position of each state in the ranking.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.ranking.len()];
        for (r, &i) in self.ranking.iter().enumerate() {
            pos[i] = r + 1;
        }
        pos
    }
}

/// Maximum absolute gradients of the reduced observables over the columns of
/// `x_train` (standardized states).
pub fn sensitivity(model: &KoopmanModel, dec: &DecomposedModel, x_train: &Matrix) -> Result<SensitivityReport> {
    if x_train.cols() == 0 {
        return Err(Error::Empty("sensitivity training states"));
    }
    let n = model.state_dim();
    if x_train.rows() != n {
        return Err(mismatch("sensitivity", n, x_train.rows()));
    }
    let vo_t = dec.v.block(0, dec.v.rows(), 0, dec.n_ol).transpose();
    let mut s = Matrix::zeros(dec.n_ol, n);
    for c in 0..x_train.cols() {
        let g = vo_t.matmul(&model.map.jacobian(&x_train.col(c))?)?;
        for (dst, v) in s.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *dst = dst.max(v.abs());
        }
    }
    Ok(SensitivityReport::from_matrix(dec.output_index, s))
}

/// Averages norms of several reports for the same output (e.g. different
/// seeds) and re-ranks. The matrix of the first report is kept.
pub fn average_reports(reports: &[SensitivityReport]) -> Result<SensitivityReport> {
    let first = reports.first().ok_or(Error::Empty("sensitivity reports"))?;
    let n = first.norms.len();
    let mut norms = vec![0.0; n];
    for r in reports {
        if r.norms.len() != n {
            return Err(mismatch("average_reports", n, r.norms.len()));
        }
        for (a, b) in norms.iter_mut().zip(&r.norms) {
            *a += b / reports.len() as f64;
        }
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    Ok(SensitivityReport {
        output_index: first.output_index,
        s: first.s.clone(),
        norms,
        ranking,
    })
}

/// One line of the combined ranking table; indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub output_index: usize,
    pub state_index: usize,
    pub norm: f64,
    pub rank: usize,
}

/// Per-output norms and 1-based ranks, in state order within each output.
pub fn rank_report(reports: &[SensitivityReport]) -> Result<Vec<RankRow>> {
    if reports.is_empty() {
        return Err(Error::Empty("sensitivity reports"));
    }
    let mut rows = Vec::new();
    for r in reports {
        for (state_index, rank) in r.positions().into_iter().enumerate() {
            rows.push(RankRow {
                output_index: r.output_index,
                state_index,
                norm: r.norms[state_index],
                rank,
            });
        }
    }
    Ok(rows)
}
