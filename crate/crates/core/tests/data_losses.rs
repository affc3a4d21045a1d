use proptest::prelude::*;
use sagopt::{synth_generate, synth_generate_with_truth, DiscreteSampler, LossModel, Rng, SparseDataset, SynthSpec, Targets};

fn spec(n: usize, p: usize, nnz: usize, het: f64, seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(n, p, seed);
    s.nnz_per_row = nnz;
    s.heterogeneity = het;
    s
}

fn central_directional(model: &LossModel, ds: &SparseDataset, x: &[f64], v: &[f64], h: f64) -> f64 {
    let shift = |t: f64| -> Vec<f64> { x.iter().zip(v).map(|(a, b)| a + t * b).collect() };
    (model.full_objective(ds, &shift(h)).unwrap() - model.full_objective(ds, &shift(-h)).unwrap()) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn libsvm_text_round_trips(n in 1usize..30, p in 1usize..12, seed in 0u64..500, nnz in 1usize..12) {
        let ds = synth_generate(&spec(n, p, nnz.min(p), 2.0, seed)).unwrap();
        let back = SparseDataset::parse_libsvm_str(&ds.to_libsvm_string(), Some(p)).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn gradients_match_finite_differences(seed in 0u64..500, lambda in 0.0f64..1.0, squared: bool) {
        let mut s = spec(25, 5, 3, 4.0, seed);
        if squared {
            s.targets = Targets::Linear;
        }
        let ds = synth_generate(&s).unwrap();
        let model = if squared { LossModel::squared(lambda) } else { LossModel::logistic(lambda) };
        let mut rng = Rng::new(seed + 1);
        let x: Vec<f64> = (0..5).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let g = model.full_gradient(&ds, &x).unwrap();
        let analytic: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        let fd = central_directional(&model, &ds, &x, &v, 1e-5);
        prop_assert!((analytic - fd).abs() <= 1e-6 * (1.0 + analytic.abs()), "{analytic} vs {fd}");

        // the full gradient is the mean of the example gradients
        let mut mean = vec![0.0; 5];
        for i in 0..ds.n() {
            for (m, gi) in mean.iter_mut().zip(model.example_gradient(&ds, i, &x)) {
                *m += gi / ds.n() as f64;
            }
        }
        for (a, b) in mean.iter().zip(&g) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let (f, g2) = model.objective_and_gradient(&ds, &x).unwrap();
        prop_assert!((f - model.full_objective(&ds, &x).unwrap()).abs() < 1e-14);
        prop_assert_eq!(g2, g);
    }

    #[test]
    fn example_gradients_obey_their_lipschitz_constants(seed in 0u64..500, lambda in 0.0f64..0.5) {
        let ds = synth_generate(&spec(10, 6, 4, 8.0, seed)).unwrap();
        let model = LossModel::logistic(lambda);
        let lips = model.lipschitz_constants(&ds);
        let mut rng = Rng::new(seed);
        for i in 0..ds.n() {
            let x: Vec<f64> = (0..6).map(|_| 4.0 * rng.uniform() - 2.0).collect();
            let y: Vec<f64> = (0..6).map(|_| 4.0 * rng.uniform() - 2.0).collect();
            let gx = model.example_gradient(&ds, i, &x);
            let gy = model.example_gradient(&ds, i, &y);
            let dg: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dx: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dg <= lips.per_example[i] * dx * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sampler_follows_updated_weights(w in proptest::collection::vec(0.1f64..10.0, 2..20), seed in 0u64..100) {
        let mut s = DiscreteSampler::new(&w).unwrap();
        let mut w = w;
        let k = seed as usize % w.len();
        w[k] *= 3.0;
        s.update_weight(k, w[k]).unwrap();
        let total: f64 = w.iter().sum();
        for (i, wi) in w.iter().enumerate() {
            prop_assert!((s.probability(i) - wi / total).abs() < 1e-12);
        }
        let mut rng = Rng::new(seed);
        for _ in 0..100 {
            prop_assert!(s.sample(&mut rng) < w.len());
        }
    }
}

#[test]
fn bias_column_receives_mean_residual() {
    let ds = synth_generate(&{
        let mut s = spec(40, 3, 3, 2.0, 9);
        s.targets = Targets::Linear;
        s
    })
    .unwrap();
    let biased = ds.add_bias();
    assert_eq!(biased.p(), 4);
    let model = LossModel::squared(0.0);
    let x = [0.3, -0.2, 0.1, 0.5];
    let g = model.full_gradient(&biased, &x).unwrap();
    let mean_residual: f64 =
        (0..ds.n()).map(|i| ds.row(i).dot(&x[..3]) + x[3] - ds.label(i)).sum::<f64>() / ds.n() as f64;
    assert!((g[3] - mean_residual).abs() < 1e-12);
}

#[test]
fn synthetic_row_norms_span_the_requested_ratio() {
    let ds = synth_generate(&spec(200, 30, 5, 50.0, 11)).unwrap();
    let norms: Vec<f64> = ds.row_norms_sq().iter().map(|v| v.sqrt()).collect();
    let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().cloned().fold(0.0, f64::max);
    assert!((hi / lo - 50.0).abs() < 1e-9);
    assert!(ds.rows().all(|r| r.nnz() == 5));
}

#[test]
fn noise_free_linear_targets_follow_the_planted_weights() {
    let mut s = spec(30, 4, 4, 1.0, 12);
    s.targets = Targets::Linear;
    let (ds, w) = synth_generate_with_truth(&s).unwrap();
    for i in 0..ds.n() {
        assert!((ds.row(i).dot(&w) - ds.label(i)).abs() < 1e-12);
    }
}

#[test]
fn standardized_columns_have_unit_variance() {
    let ds = synth_generate(&spec(50, 4, 4, 5.0, 13)).unwrap().standardize().unwrap();
    let cols = ds.columns();
    for j in 0..4 {
        let c = cols.column(j);
        let mean: f64 = c.values.iter().sum::<f64>() / 50.0;
        let var: f64 = c.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}

#[test]
fn malformed_libsvm_reports_the_line() {
    let err = SparseDataset::parse_libsvm_str("1 1:0.5\n-1 2:x\n", None).unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
}
