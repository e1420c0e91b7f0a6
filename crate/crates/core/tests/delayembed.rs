use kobs_core::delayembed::{
    delay_dataset, embed, fit_delay_koopman, fit_diffeomorphism, reconstruction_report, subset_label, unreconstructed,
    DelayKoopmanModel, DiffeoConfig,
};
use kobs_core::observables::{DictionaryKind, ObservableMap};
use kobs_core::ocdmd::{build_snapshots, fit_edmd, score, Grid, StandardizeMode};
use kobs_core::simulator::{builtin_analytical, generate_dataset, Dataset, Split, Trajectory};
use proptest::prelude::*;

fn synthetic(lens: &[usize], n: usize, p: usize) -> Dataset {
    let trajectories = lens
        .iter()
        .enumerate()
        .map(|(id, &len)| Trajectory {
            ic_id: id,
            states: (0..len).map(|j| (0..n).map(|i| (1000 * id + 10 * j + i) as f64).collect()).collect(),
            outputs: (0..len).map(|j| (0..p).map(|k| -((1000 * id + 10 * j + k) as f64)).collect()).collect(),
            times: (0..len).map(|j| j as f64 * 0.5).collect(),
        })
        .collect();
    Dataset {
        spec_name: "synthetic".into(),
        seed: 0,
        state_dim: n,
        output_dim: p,
        sample_time: 0.5,
        trajectories,
        splits: (0..lens.len()).map(Split::round_robin).collect(),
    }
}

proptest! {
    #[test]
    fn windows_align_with_states(
        lens in proptest::collection::vec(12usize..40, 3..7),
        p in 1usize..4,
        n_d in 1usize..6,
    ) {
        let d = synthetic(&lens, 2, p);
        let delayed = delay_dataset(&d, n_d).unwrap();
        prop_assert_eq!(delayed.state_dim, n_d * p);
        for (src, t) in d.trajectories.iter().zip(&delayed.trajectories) {
            prop_assert_eq!(t.len(), src.len() / n_d);
            for (w, z) in t.states.iter().enumerate() {
                prop_assert_eq!(&t.outputs[w], &src.states[n_d * w]);
                for k in 0..n_d {
                    prop_assert_eq!(&z[k * p..(k + 1) * p], src.outputs[n_d * w + k].as_slice());
                }
            }
        }
        for split in Split::ALL {
            let e = embed(&d, split, n_d).unwrap();
            let pairs: usize = d.split(split).map(|t| t.len() / n_d - 1).sum();
            prop_assert_eq!(e.zp.cols(), pairs);
            for &(start, count) in &e.segments {
                for c in start..start + count - 1 {
                    prop_assert_eq!(e.zf.col(c), e.zp.col(c + 1));
                }
            }
        }
    }
}

/// Damped rotation in `x1, x2`, both measured; `x3` decays on its own from an
/// unrelated initial value and is not measured.
fn rotation_with_hidden_state() -> Dataset {
    let (c, s) = (0.3f64.cos() * 0.98, 0.3f64.sin() * 0.98);
    let trajectories = (0..9)
        .map(|id| {
            let mut x = vec![((id * 7) as f64).sin(), ((id * 3) as f64).cos(), ((id * 5 + 1) as f64).sin()];
            let mut states = Vec::new();
            for _ in 0..40 {
                states.push(x.clone());
                x = vec![c * x[0] - s * x[1], s * x[0] + c * x[1], 0.9 * x[2]];
            }
            Trajectory {
                ic_id: id,
                outputs: states.iter().map(|v| v[..2].to_vec()).collect(),
                times: (0..40).map(|j| j as f64).collect(),
                states,
            }
        })
        .collect();
    Dataset {
        spec_name: "rotation".into(),
        seed: 0,
        state_dim: 3,
        output_dim: 2,
        sample_time: 1.0,
        splits: (0..9).map(Split::round_robin).collect(),
        trajectories,
    }
}

fn linear_window_model(data: &Dataset) -> DelayKoopmanModel {
    let delayed = delay_dataset(data, 1).unwrap();
    let train = build_snapshots(&delayed, Split::Train, StandardizeMode::ZScore).unwrap();
    let model = fit_edmd(&train, ObservableMap::monomials(2, Vec::new()).unwrap()).unwrap();
    let validation = score(&model, &delayed, Split::Validation).unwrap();
    DelayKoopmanModel { n_d: 1, model, validation }
}

fn diffeo_config() -> DiffeoConfig {
    DiffeoConfig {
        hidden: vec![8],
        epochs: 3000,
        learning_rate: 0.2,
        ..DiffeoConfig::default()
    }
}

#[test]
fn full_state_outputs_are_reconstructed() {
    let mut data = rotation_with_hidden_state();
    data.state_dim = 2;
    for t in &mut data.trajectories {
        t.states = t.outputs.clone();
    }
    let dz = linear_window_model(&data);
    assert!(dz.validation.r2_x_1step > 0.999);
    let d = fit_diffeomorphism(&dz, &data, &diffeo_config()).unwrap();
    assert!(d.r2.iter().all(|r| *r > 0.999), "per-state r2 {:?}", d.r2);
    assert_eq!(d, fit_diffeomorphism(&dz, &data, &diffeo_config()).unwrap());
}

#[test]
fn unmeasured_state_is_not_reconstructed() {
    let data = rotation_with_hidden_state();
    let dz = linear_window_model(&data);
    let d = fit_diffeomorphism(&dz, &data, &diffeo_config()).unwrap();
    assert!(d.r2[0] > 0.99 && d.r2[1] > 0.99, "per-state r2 {:?}", d.r2);
    assert!(d.r2[2] < 0.5, "per-state r2 {:?}", d.r2);

    let rows = reconstruction_report(&[(subset_label(&[0, 1]), &d)]).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].state_index, 3);
    assert_eq!(unreconstructed(&rows, 0.8), vec![("y1+y2".to_string(), 3)]);
}

#[test]
fn window_model_grid_picks_a_delay() {
    let spec = builtin_analytical(0.9, 0.5, 1.0);
    let data = generate_dataset(&spec, 9, 4).unwrap();
    let grid = Grid {
        hidden: Vec::new(),
        dictionaries: vec![DictionaryKind::Polynomial { degree: 2 }],
        ..Grid::default()
    };
    let fit = fit_delay_koopman(&data, &[1, 2, 3], &grid, 0).unwrap();
    assert_eq!(fit.leaderboard.len(), 3);
    assert_eq!(fit.best_per_delay().len(), 3);
    assert_eq!(fit.best.window_dim(), fit.best.n_d);
    assert!(fit.leaderboard.windows(2).all(|w| w[0].score() >= w[1].score()));
}

#[test]
fn empty_inputs_are_rejected() {
    assert!(reconstruction_report(&[]).is_err());
    let d = synthetic(&[10, 10, 10], 1, 1);
    assert!(delay_dataset(&d, 0).is_err());
    assert!(delay_dataset(&d, 6).is_err());
    assert!(d.with_outputs(&[]).is_err());
}
