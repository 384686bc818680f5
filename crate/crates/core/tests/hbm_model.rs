use std::collections::BTreeMap;

use lifepred::clustering::GroupAssignment;
use lifepred::dataset::{generate_synthetic, FeatureTable, SyntheticConfig};
use lifepred::dataset::LabelTransform;
use lifepred::features::FeatureVector;
use lifepred::hbm::{
    fit_table, marginal_log_likelihood, predict, sample_posterior, theta_conditional, GroupData, GroupTarget,
    HbmError, HbmPosterior, McmcConfig, ModelConfig, PredictiveDistribution,
};
use lifepred::rng::rng_from;
use lifepred::stats::std_normal_quantile;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

fn random_group(seed: u64, n: usize, g: f64) -> GroupData {
    let mut rng = rng_from(seed, &[]);
    let std = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| std.sample(&mut rng)).collect()).collect();
    let y: Vec<f64> = (0..n).map(|_| 1.0 + 0.5 * std.sample(&mut rng)).collect();
    GroupData::from_rows(0, &rows, &y, g, 4).unwrap()
}

fn gamma() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 2, &[0.2, 0.1, -0.3, 0.05, 0.4, 0.0, 0.1, -0.02])
}

const SIGMA: [f64; 4] = [0.6, 0.3, 0.5, 0.2];

fn dense_marginal(group: &GroupData, gamma: &DMatrix<f64>, sigma: &[f64], sigma_y: f64) -> f64 {
    let x = group.design();
    let n = group.n();
    let m = gamma * group.g_vec();
    let r = group.labels() - x * m;
    let d = DMatrix::from_diagonal(&DVector::from_iterator(sigma.len(), sigma.iter().map(|s| s * s)));
    let cov = DMatrix::identity(n, n) * (sigma_y * sigma_y + 1e-9) + x * d * x.transpose();
    let chol = cov.cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + r.dot(&chol.solve(&r)))
}

#[test]
fn marginal_matches_dense_gaussian() {
    for (seed, n) in [(1, 1), (2, 3), (3, 12), (4, 40)] {
        let group = random_group(seed, n, 4.2);
        let fast = marginal_log_likelihood(&group, &gamma(), &SIGMA, 0.7).unwrap();
        let dense = dense_marginal(&group, &gamma(), &SIGMA, 0.7);
        assert!((fast - dense).abs() < 1e-9 * (1.0 + dense.abs()), "n={n}: {fast} vs {dense}");
    }
}

#[test]
fn marginal_matches_monte_carlo_integral() {
    let group = random_group(9, 5, 3.5);
    let exact = marginal_log_likelihood(&group, &gamma(), &SIGMA, 0.7).unwrap();
    let mean = gamma() * group.g_vec();
    let mut rng = rng_from(10, &[]);
    let std = Normal::new(0.0, 1.0).unwrap();
    let draws = 200_000;
    let mut log_terms = Vec::with_capacity(draws);
    for _ in 0..draws {
        let theta = DVector::from_fn(4, |k, _| mean[k] + SIGMA[k] * std.sample(&mut rng));
        let r = group.labels() - group.design() * theta;
        let n = group.n() as f64;
        log_terms.push(-0.5 * (n * (2.0 * std::f64::consts::PI * 0.49).ln() + r.norm_squared() / 0.49));
    }
    let top = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mc = top + (log_terms.iter().map(|l| (l - top).exp()).sum::<f64>() / draws as f64).ln();
    assert!((mc - exact).abs() < 0.05, "{mc} vs {exact}");
}

#[test]
fn cell_order_within_a_group_does_not_matter() {
    let group = random_group(5, 9, 4.0);
    let x = group.design();
    let y = group.labels();
    let perm = [4, 8, 0, 2, 7, 1, 6, 3, 5];
    let px = DMatrix::from_fn(9, 4, |i, k| x[(perm[i], k)]);
    let py = DVector::from_fn(9, |i, _| y[perm[i]]);
    let shuffled = GroupData::new(0, px, py, 4.0).unwrap();
    let a = marginal_log_likelihood(&group, &gamma(), &SIGMA, 0.7).unwrap();
    let b = marginal_log_likelihood(&shuffled, &gamma(), &SIGMA, 0.7).unwrap();
    assert!((a - b).abs() < 1e-10);
    let ta = theta_conditional(&group, &gamma(), &SIGMA, 0.7).unwrap();
    let tb = theta_conditional(&shuffled, &gamma(), &SIGMA, 0.7).unwrap();
    assert!((ta.mean - tb.mean).amax() < 1e-10);
    assert!((ta.cov - tb.cov).amax() < 1e-10);
}

#[test]
fn single_cell_intercept_model_is_scalar_conjugate() {
    // θ ~ N(m, σ²), y ~ N(θ, σ_y²)
    let group = GroupData::new(0, DMatrix::from_element(1, 1, 1.0), DVector::from_vec(vec![2.3]), 5.0).unwrap();
    let gamma = DMatrix::from_row_slice(1, 2, &[0.5, 0.1]);
    let (m, s2, sy2) = (1.0, 0.36, 0.25);
    let post = theta_conditional(&group, &gamma, &[0.6], 0.5).unwrap();
    let var = 1.0 / (1.0 / s2 + 1.0 / sy2);
    assert!((post.cov[(0, 0)] - var).abs() < 1e-12);
    assert!((post.mean[0] - var * (m / s2 + 2.3 / sy2)).abs() < 1e-12);
    let ml = marginal_log_likelihood(&group, &gamma, &[0.6], 0.5).unwrap();
    let v = s2 + sy2 + 1e-9;
    let expected = -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (2.3 - m).powi(2) / v);
    assert!((ml - expected).abs() < 1e-12);
}

#[test]
fn single_component_predictive_is_the_normal() {
    let p = PredictiveDistribution::from_components(vec![1.5; 4], &[0.04; 4], LabelTransform::Log10);
    assert!((p.mean - 1.5).abs() < 1e-15 && (p.variance - 0.04).abs() < 1e-15);
    assert!((p.point_estimate_days - 10f64.powf(1.5)).abs() < 1e-9);
    let (lo, hi) = p.interval(0.9);
    let z = std_normal_quantile(0.95);
    assert!((lo - (1.5 - 0.2 * z)).abs() < 1e-8, "{lo}");
    assert!((hi - (1.5 + 0.2 * z)).abs() < 1e-8, "{hi}");
    assert!((lo + hi - 3.0).abs() < 1e-9);
    let (dlo, dhi) = p.interval_days(0.9);
    assert!((dlo - 10f64.powf(lo)).abs() < 1e-9 && (dhi - 10f64.powf(hi)).abs() < 1e-9);
}

#[test]
fn degenerate_components_collapse_to_a_point() {
    let p = PredictiveDistribution::from_components(vec![2.0; 3], &[0.0; 3], LabelTransform::Identity);
    assert_eq!(p.variance, 0.0);
    assert_eq!(p.cdf(1.999), 0.0);
    assert_eq!(p.cdf(2.0), 1.0);
    let (lo, hi) = p.interval(0.9);
    assert!((lo - 2.0).abs() < 1e-9 && (hi - 2.0).abs() < 1e-9);
}

#[test]
fn mixture_moments_follow_total_variance() {
    let p = PredictiveDistribution::from_components(vec![0.0, 2.0], &[1.0, 1.0], LabelTransform::Identity);
    assert!((p.mean - 1.0).abs() < 1e-15);
    assert!((p.variance - 2.0).abs() < 1e-12);
    assert!((p.cdf(1.0) - 0.5).abs() < 1e-12);
    let (lo, hi) = p.interval(0.8);
    assert!((lo + hi - 2.0).abs() < 1e-8);
}

#[test]
fn zero_groups_are_rejected() {
    let err = sample_posterior(&[], &ModelConfig::default(), &McmcConfig::default(), 0).unwrap_err();
    assert!(matches!(err, HbmError::NoGroups));
}

/// Synthetic fleet with `train` cells per group for fitting and the rest held out.
fn split_fleet(train: usize, total: usize) -> (FeatureTable, FeatureTable, GroupAssignment, BTreeMap<String, f64>) {
    let config = SyntheticConfig { cells_per_group: total, ..SyntheticConfig::default() };
    let (table, truth) = generate_synthetic(&config, 3).unwrap();
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, row) in table.rows().iter().enumerate() {
        let j = truth.membership[&row.cell_id];
        let count = seen.entry(j).or_insert(0usize);
        if *count < train { train_idx.push(i) } else { test_idx.push(i) }
        *count += 1;
    }
    let train_table = table.subset(&train_idx);
    let k = config.n_groups;
    let membership: BTreeMap<String, usize> =
        train_table.rows().iter().map(|r| (r.cell_id.clone(), truth.membership[&r.cell_id])).collect();
    let assignment = GroupAssignment {
        k,
        centroids: (0..k).map(|j| truth.group_g_values[&j]).collect(),
        sizes: vec![train; k],
        min_size: train,
        max_size: train,
        membership,
        objective: 0.0,
    };
    (train_table, table.subset(&test_idx), assignment, truth.transformed_labels)
}

fn small_mcmc() -> McmcConfig {
    McmcConfig { warmup: 400, samples: 250, thin: 2, ..McmcConfig::default() }
}

fn log_config() -> ModelConfig {
    ModelConfig { sigma_y_prior: Some(0.1), label_transform: LabelTransform::Log10, ..ModelConfig::default() }
}

#[test]
fn held_out_cells_fall_inside_ninety_percent_intervals() {
    let (train, test, assignment, labels) = split_fleet(15, 78);
    assert_eq!(test.len(), 8 * 63);
    let post = fit_table(&train, &assignment, &log_config(), &small_mcmc(), 21).unwrap();
    let mut inside = 0;
    for row in test.rows() {
        let x = FeatureVector { g: row.g, f1: row.f1, f2: row.f2, f3: row.f3 };
        let j = assignment.centroids.iter().position(|c| *c == row.g).unwrap();
        let (lo, hi) = predict(&x, GroupTarget::Fitted(j), &post).unwrap().interval(0.9);
        let y = labels[&row.cell_id];
        inside += usize::from(lo <= y && y <= hi);
    }
    let coverage = 100.0 * inside as f64 / test.len() as f64;
    assert!((85.0..=95.0).contains(&coverage), "coverage {coverage}%");
}

#[test]
fn posterior_json_round_trip_and_determinism() {
    let (train, test, assignment, _) = split_fleet(10, 11);
    let post = fit_table(&train, &assignment, &log_config(), &small_mcmc(), 8).unwrap();
    let again = fit_table(&train, &assignment, &log_config(), &small_mcmc(), 8).unwrap();
    let json = post.to_json().unwrap();
    assert_eq!(json, again.to_json().unwrap());
    let restored = HbmPosterior::from_json(&json).unwrap();
    let row = &test.rows()[0];
    let x = FeatureVector { g: row.g, f1: row.f1, f2: row.f2, f3: row.f3 };
    for target in [GroupTarget::Fitted(2), GroupTarget::New { g: 4.4 }] {
        assert_eq!(predict(&x, target, &post).unwrap(), predict(&x, target, &restored).unwrap());
    }
    assert!(matches!(predict(&x, GroupTarget::Fitted(99), &post), Err(HbmError::UnseenGroup(99))));
    let other = fit_table(&train, &assignment, &log_config(), &small_mcmc(), 9).unwrap();
    assert_ne!(json, other.to_json().unwrap());
}

#[test]
fn new_group_predictions_are_wider_than_fitted_ones() {
    let (train, test, assignment, _) = split_fleet(15, 16);
    let post = fit_table(&train, &assignment, &log_config(), &small_mcmc(), 4).unwrap();
    let row = &test.rows()[0];
    let x = FeatureVector { g: row.g, f1: row.f1, f2: row.f2, f3: row.f3 };
    let j = assignment.centroids.iter().position(|c| *c == row.g).unwrap();
    let fitted = predict(&x, GroupTarget::Fitted(j), &post).unwrap();
    let fresh = predict(&x, GroupTarget::New { g: row.g }, &post).unwrap();
    assert!(fresh.variance >= fitted.variance, "{} vs {}", fresh.variance, fitted.variance);
}
