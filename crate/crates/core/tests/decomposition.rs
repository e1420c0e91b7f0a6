use kobs_core::decomposition::{decompose, observability_matrix, sensitivity, DEFAULT_THRESHOLD};
use kobs_core::numerics::{eigenvalues, svd};
use kobs_core::observables::{DictionaryKind, ObservableMap};
use kobs_core::ocdmd::{
    build_snapshots, fit_edmd, KoopmanModel, SnapshotSet, Standardization, StandardizeMode, TrainingMeta,
};
use kobs_core::simulator::{builtin_analytical, generate_dataset, Split};
use kobs_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn identity_stats(n: usize, p: usize) -> Standardization {
    Standardization {
        mode: StandardizeMode::None,
        x_mean: vec![0.0; n],
        x_std: vec![1.0; n],
        y_mean: vec![0.0; p],
        y_std: vec![1.0; p],
        x_baseline: vec![0.0; n],
        y_baseline: vec![0.0; p],
    }
}

/// Model with `psi = [x; 1]` and the given `K`, `W_h`.
fn linear_model(k: Matrix, wh: Matrix) -> KoopmanModel {
    let n = k.rows() - 1;
    KoopmanModel {
        map: ObservableMap::monomials(n, Vec::new()).unwrap(),
        standardization: identity_stats(n, wh.rows()),
        k,
        wh,
        meta: TrainingMeta {
            method: "test".into(),
            description: String::new(),
            seed: 0,
            config: None,
            loss_history: Vec::new(),
            warnings: Vec::new(),
        },
    }
}

/// Trajectories of `psi+ = K psi` from random states, packed as snapshots.
fn rollouts(model: &KoopmanModel, ics: usize, len: usize, seed: u64) -> SnapshotSet {
    let n = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut xp, mut xf, mut yp, mut segments) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..ics {
        let mut psi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        psi.push(1.0);
        segments.push((xp.len(), len));
        for _ in 0..len {
            let next = model.k.matvec(&psi).unwrap();
            xp.push(psi[..n].to_vec());
            xf.push(next[..n].to_vec());
            yp.push(model.wh.matvec(&psi).unwrap());
            psi = next;
        }
    }
    SnapshotSet {
        xp: Matrix::from_columns(n, &xp),
        xf: Matrix::from_columns(n, &xf),
        yp: Matrix::from_columns(model.output_dim(), &yp),
        ic_ids: (0..ics).collect(),
        segments,
        standardization: model.standardization.clone(),
    }
}

fn random_stable(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = Matrix::from_fn(n + 1, n + 1, |i, j| {
        if i == n {
            0.0
        } else if j == n {
            rng.random_range(-0.1..0.1)
        } else {
            rng.random_range(-0.3..0.3)
        }
    });
    k[(n, n)] = 1.0;
    k
}

fn sorted_spectrum(m: &Matrix) -> Vec<(f64, f64)> {
    let mut e = eigenvalues(m).unwrap();
    e.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    e
}

#[test]
fn v_is_orthogonal_and_preserves_spectrum() {
    for seed in 0..5 {
        let k = random_stable(5, seed);
        let w: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let model = linear_model(k.clone(), Matrix::from_rows(&[w]));
        let dec = decompose(&model, &rollouts(&model, 4, 20, seed), 0, DEFAULT_THRESHOLD).unwrap();
        let vtv = dec.v.transpose().matmul(&dec.v).unwrap();
        let err = vtv.sub(&Matrix::identity(6)).unwrap().frobenius_norm();
        assert!(err < 1e-9, "|V^T V - I| = {err:e}");

        let kt = dec.v.transpose().matmul(&k).unwrap().matmul(&dec.v).unwrap();
        for (a, b) in sorted_spectrum(&k).iter().zip(sorted_spectrum(&kt).iter()) {
            let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            assert!(d < 1e-8, "eigenvalue moved by {d:e}");
        }
    }
}

#[test]
fn decoupled_mode_gives_one_observable() {
    let k = Matrix::from_rows(&[[0.9, 0.0, 0.0], [0.3, 0.5, 0.0], [0.0, 0.0, 1.0]]);
    let model = linear_model(k, Matrix::from_rows(&[[2.0, 0.0, 0.0]]));
    let train = rollouts(&model, 3, 15, 1);
    let dec = decompose(&model, &train, 0, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(dec.observability_rank, 1);
    assert_eq!(dec.n_ol, 1);
    assert!(dec.reduced);
    assert!(dec.coupling_residual < 1e-12);
    assert!((dec.k1[(0, 0)] - 0.9).abs() < 1e-12);

    let s = sensitivity(&model, &dec, &train.xp).unwrap();
    assert!((s.norms[0] - 1.0).abs() < 1e-12);
    assert_eq!(s.norms[1], 0.0);
    assert_eq!(s.ranking, vec![0, 1]);
}

#[test]
fn linear_observables_have_constant_gradients() {
    let model = linear_model(random_stable(4, 9), Matrix::from_rows(&[[1.0, -0.5, 0.2, 0.0, 0.1]]));
    let train = rollouts(&model, 3, 10, 2);
    let dec = decompose(&model, &train, 0, DEFAULT_THRESHOLD).unwrap();
    let s = sensitivity(&model, &dec, &train.xp).unwrap();
    for i in 0..dec.n_ol {
        for j in 0..4 {
            assert!((s.s[(i, j)] - dec.v[(j, i)].abs()).abs() < 1e-14);
        }
    }
}

#[test]
fn reduced_model_meets_its_threshold() {
    let spec = builtin_analytical(0.9, 0.5, 1.0);
    let data = generate_dataset(&spec, 12, 3).unwrap();
    let train = build_snapshots(&data, Split::Train, StandardizeMode::ZScore).unwrap();
    let map = ObservableMap::make_dictionary(2, DictionaryKind::Polynomial { degree: 3 }).unwrap();
    let model = fit_edmd(&train, map).unwrap();
    let dec = decompose(&model, &train, 0, DEFAULT_THRESHOLD).unwrap();
    assert!(dec.reduced_r2 >= DEFAULT_THRESHOLD);
    assert!(dec.n_ol <= model.lifted_dim());
}

#[test]
fn reruns_are_identical() {
    let model = linear_model(random_stable(3, 4), Matrix::from_rows(&[[0.3, 1.0, 0.0, 0.5]]));
    let train = rollouts(&model, 2, 12, 5);
    let a = decompose(&model, &train, 0, DEFAULT_THRESHOLD).unwrap();
    let b = decompose(&model, &train, 0, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(a, b);
    assert_eq!(sensitivity(&model, &a, &train.xp).unwrap(), sensitivity(&model, &b, &train.xp).unwrap());
}

#[test]
fn observability_rows_have_unit_norm() {
    let k = random_stable(4, 6);
    let o = observability_matrix(&k, &[0.0, 3.0, 0.0, 1.0, 0.0]).unwrap();
    for i in 0..o.rows() {
        let r: f64 = o.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((r - 1.0).abs() < 1e-12);
    }
    assert!(svd(&o).unwrap().s[0] > 1.0);
}

#[test]
fn zero_output_row_is_rejected() {
    let model = linear_model(random_stable(2, 1), Matrix::from_rows(&[[0.0, 0.0, 0.0]]));
    let train = rollouts(&model, 1, 5, 0);
    assert!(decompose(&model, &train, 0, DEFAULT_THRESHOLD).is_err());
    assert!(decompose(&model, &train, 1, DEFAULT_THRESHOLD).is_err());
}
