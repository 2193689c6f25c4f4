use proptest::prelude::*;
use vaelens::geometry::{encoder_jacobians, pullback_metric};
use vaelens::linalg::{gram_eig, sym_eig, DenseMatrix, RngState};
use vaelens::metrics::robustness_score;
use vaelens::vae::{train, Architecture, Likelihood, TrainConfig, VaeModel};
use vaelens::Error;

fn matrix(rows: usize, cols: usize, vals: &[f64]) -> DenseMatrix {
    DenseMatrix::from_row_major(rows, cols, vals[..rows * cols].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gram_and_dense_spectra_agree(
        rows in 1usize..6,
        extra in 0usize..20,
        vals in proptest::collection::vec(-3.0f64..3.0, 200),
    ) {
        let cols = rows + extra;
        let f = matrix(rows, cols, &vals);
        let g = gram_eig(&f).unwrap();
        let d = sym_eig(&f.gram()).unwrap();
        let top = d.values()[0].max(1e-300);
        for k in 0..cols {
            prop_assert!((g.values()[k] - d.values()[k]).abs() <= 1e-9 * top);
        }
        for k in 0..g.num_vectors() {
            let v = g.vector(k).unwrap();
            let gv = f.gram().matvec(&v).unwrap();
            let res: f64 = gv.iter().zip(&v).map(|(a, b)| (a - g.values()[k] * b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res <= 1e-8 * top);
        }
    }

    #[test]
    fn scores_are_scale_aware(seed in 0u64..1000, c in 0.01f64..100.0) {
        let m = VaeModel::new(&Architecture::small(7), 1.0, Likelihood::Gaussian, &mut RngState::new(seed)).unwrap();
        let x = vec![0.1; 7];
        let e = pullback_metric(&encoder_jacobians(&m, &x).unwrap()).unwrap().eig().unwrap().clone();
        let a = robustness_score(&e).unwrap();
        let b = robustness_score(&e.scaled(c).unwrap()).unwrap();
        prop_assert!((a.vn_entropy_normalized - b.vn_entropy_normalized).abs() < 1e-9);
        prop_assert!((b.spectral_radius - c * a.spectral_radius).abs() <= 1e-12 * b.spectral_radius);
        prop_assert!(a.vn_entropy_normalized <= (a.rank.max(1) as f64).ln() + 1e-12);
    }
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let mut rng = RngState::new(0);
    let data: Vec<Vec<f64>> = (0..64).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
    let mut m = VaeModel::new(&Architecture::small(5), 1.0, Likelihood::Gaussian, &mut rng).unwrap();
    let cfg = TrainConfig { learning_rate: 1e300, epochs: 3, batch_size: 16, ..Default::default() };
    assert!(matches!(train(&mut m, &data, &cfg), Err(Error::TrainingDiverged { .. })));
}
