use rand::Rng;
use rand_distr::StandardNormal;
use windstorm_core::analysis::spearman;
use windstorm_core::extract::{Ellipse, FootprintFeatures};
use windstorm_core::kde::Bandwidth;
use windstorm_core::rng::stream;
use windstorm_core::special::matern;
use windstorm_core::windfield::*;
use windstorm_core::Error;

const ORDER: AnisotropyOrder = AnisotropyOrder::RotateThenScale;

fn square(n: i64) -> (Vec<[i64; 2]>, Vec<[f64; 2]>) {
    let cells: Vec<[i64; 2]> = (0..n * n).map(|k| [k % n, k / n]).collect();
    let coords = cells.iter().map(|c| [c[0] as f64, c[1] as f64]).collect();
    (cells, coords)
}

#[test]
fn refit_of_simulated_matern_field_recovers_range() {
    let (cells, coords) = square(64);
    let gp = GpParams::new(10.0, 0.0, 1.0).unwrap();
    let z = simulate_gaussian_field(&cells, &gp, ORDER, &[], 1e-8, &mut stream(0, &[])).unwrap();
    let cfg = VariogramConfig { max_cells: 5000, ..Default::default() };
    let alpha = estimate_alpha(&coords, &z, 0.0, 1.0, &cfg).unwrap();
    assert!((8.0..=12.0).contains(&alpha), "α̂ = {alpha}");
}

#[test]
fn exponential_variogram_matches_analytic_curve() {
    let (cells, coords) = square(48);
    let gp = GpParams::with_kappa(0.5, 5.0, 0.0, 1.0).unwrap();
    let z = simulate_gaussian_field(&cells, &gp, ORDER, &[], 1e-8, &mut stream(1, &[])).unwrap();
    let cfg = VariogramConfig { kappa: 0.5, max_cells: 5000, ..Default::default() };
    let v = empirical_variogram(&coords, &z, 0.0, 1.0, &cfg).unwrap();
    let alpha = fit_matern_range(&v, 0.5).unwrap();
    for &u in &v.centres {
        let fitted = 1.0 - matern(u, alpha, 0.5);
        assert!((fitted - (1.0 - (-u / 5.0).exp())).abs() < 0.1, "u = {u}");
    }
}

#[test]
fn white_noise_has_no_spatial_structure() {
    let (_, coords) = square(20);
    let mut rng = stream(2, &[]);
    let z: Vec<f64> = (0..400).map(|_| rng.sample(StandardNormal)).collect();
    assert_eq!(estimate_alpha(&coords, &z, 0.0, 1.0, &VariogramConfig::default()), Err(Error::NoSpatialStructure));
    assert_eq!(estimate_alpha(&coords, &[0.5; 400], 0.0, 1.0, &VariogramConfig::default()), Err(Error::NoSpatialStructure));
}

#[test]
fn too_small_footprints_are_rejected() {
    let (_, coords) = square(10);
    assert!(matches!(
        estimate_alpha(&coords, &[0.0; 100], 0.0, 1.0, &VariogramConfig::default()),
        Err(Error::InsufficientData(_))
    ));
}

/// Cells of a small ellipse centred at (10, 10).
fn small_ellipse() -> Vec<[i64; 2]> {
    Ellipse::from_axes([10.0, 10.0], 6.0, 5.0, 0.3)
        .cells(21, 21)
        .into_iter()
        .map(|(x, y)| [x as i64, y as i64])
        .collect()
}

fn replicate_fields(cells: &[[i64; 2]], gp: &GpParams, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|r| simulate_gaussian_field(cells, gp, ORDER, &[], 1e-8, &mut stream(40, &[r as u64])).unwrap()).collect()
}

fn correlation(fields: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let n = fields.len() as f64;
    let (mi, mj) = (fields.iter().map(|f| f[i]).sum::<f64>() / n, fields.iter().map(|f| f[j]).sum::<f64>() / n);
    let (mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0);
    for f in fields {
        sij += (f[i] - mi) * (f[j] - mj);
        sii += (f[i] - mi).powi(2);
        sjj += (f[j] - mj).powi(2);
    }
    sij / (sii * sjj).sqrt()
}

#[test]
fn monte_carlo_correlation_at_range_matches_matern() {
    let cells = small_ellipse();
    let at = |x: i64, y: i64| cells.iter().position(|&c| c == [x, y]).unwrap();
    // Anisotropic: ψ = 0, ζ = 1.5; a separation of (3, 0) has length α = 3.
    let gp = GpParams::new(3.0, 0.0, 1.5).unwrap();
    let fields = replicate_fields(&cells, &gp, 2000);
    let rho = correlation(&fields, at(8, 10), at(11, 10));
    assert!((rho - matern(3.0, 3.0, KAPPA)).abs() < 0.05, "ρ̂ = {rho}");

    // Interior statistics: mean and variance of the unconditioned field.
    let interior: Vec<usize> = (0..cells.len())
        .filter(|&k| (cells[k][0] - 10).abs() <= 2 && (cells[k][1] - 10).abs() <= 2)
        .collect();
    for &k in &interior {
        let mean = fields.iter().map(|f| f[k]).sum::<f64>() / 2000.0;
        let var = fields.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / 1999.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "variance {var}");
    }
}

#[test]
fn isotropic_fields_are_rotation_invariant() {
    let cells = small_ellipse();
    let at = |x: i64, y: i64| cells.iter().position(|&c| c == [x, y]).unwrap();
    let gp = GpParams::new(3.0, 0.8, 1.0).unwrap();
    let fields = replicate_fields(&cells, &gp, 2000);
    let horizontal = correlation(&fields, at(9, 10), at(11, 10));
    let vertical = correlation(&fields, at(10, 9), at(10, 11));
    assert!((horizontal - vertical).abs() < 0.05);
}

fn features() -> FootprintFeatures {
    FootprintFeatures { t: 1, a: 12.0, b: 8.0, w: 6.0, r_e: 20.0, theta_e: 0.4, r_w: 3.0, theta_w: 1.0, gamma: 0.4 }
}

fn distribution() -> FootprintDistribution {
    let sample = (0..400).map(|i| (0.5 + 5.0 * i as f64 / 400.0, 1.0)).collect();
    FootprintDistribution::from_weighted(sample, 6.0, 0.001).unwrap()
}

#[test]
fn conditions_are_honoured_after_back_transform() {
    let f = features();
    let centre = [40.0, 40.0];
    let ellipse = f.ellipse(centre);
    let dist = distribution();
    let gp = GpParams::for_footprint(&f, 4.0, KAPPA).unwrap();
    let cfg = FieldConfig::default();
    for r in 0..5u64 {
        let field = simulate_conditional_field(&ellipse, &f, &gp, &dist, centre, 100, 100, &cfg, &mut stream(5, &[r])).unwrap();
        assert!((field.values[field.max_index] - f.w).abs() < 1e-9);
        assert!(field.values.iter().all(|&v| v <= f.w));
        let min = field.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(!field.perimeter.is_empty());
        for &p in &field.perimeter {
            assert!((field.values[p] - min).abs() < 1e-9);
            assert!((field.values[p] - dist.lower_limit()).abs() < 1e-9);
        }
        assert!(field.minimum.is_empty(), "storm centre lies outside the footprint");
        assert!(!field.coarsened);
    }
}

#[test]
fn storm_centre_inside_footprint_adds_minimum_region() {
    let f = FootprintFeatures { r_e: 2.0, r_w: 6.0, ..features() };
    let centre = [40.0, 40.0];
    let ellipse = f.ellipse(centre);
    assert!(ellipse.contains(centre));
    let gp = GpParams::for_footprint(&f, 4.0, KAPPA).unwrap();
    let cfg = FieldConfig { min_axes: [4.0, 3.0], min_rate: 1.0, ..Default::default() };
    let field =
        simulate_conditional_field(&ellipse, &f, &gp, &distribution(), centre, 100, 100, &cfg, &mut stream(6, &[])).unwrap();
    assert!(!field.minimum.is_empty());
    let c = field.cells.iter().position(|&(x, y)| (x, y) == (40, 40)).unwrap();
    assert!(field.minimum.contains(&c) || field.perimeter.contains(&c));
    assert!((field.values[field.max_index] - f.w).abs() < 1e-9);
}

#[test]
fn large_footprints_use_the_coarsened_lattice() {
    let f = FootprintFeatures { a: 30.0, b: 20.0, ..features() };
    let centre = [60.0, 60.0];
    let ellipse = f.ellipse(centre);
    let gp = GpParams::for_footprint(&f, 6.0, KAPPA).unwrap();
    let cfg = FieldConfig { max_exact_cells: 400, ..Default::default() };
    let field =
        simulate_conditional_field(&ellipse, &f, &gp, &distribution(), centre, 120, 120, &cfg, &mut stream(7, &[])).unwrap();
    assert!(field.coarsened);
    assert!((field.values[field.max_index] - f.w).abs() < 1e-9);
    for &p in &field.perimeter {
        assert!((field.values[p] - distribution().lower_limit()).abs() < 1e-9);
    }
}

/// Mid-point plotting-position distribution of equally weighted values.
fn plotting_cdf(values: &[f64], x: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let k = v.partition_point(|&a| a <= x);
    if k == 0 || k == v.len() {
        return f64::NAN;
    }
    let (p0, p1) = ((k as f64 - 0.5) / n, (k as f64 + 0.5) / n);
    p0 + (p1 - p0) * (x - v[k - 1]) / (v[k] - v[k - 1])
}

fn footprint(w: f64, delta: f64, omega: f64, values: Vec<f64>) -> TrainingFootprint {
    TrainingFootprint { w, delta, omega, values }
}

#[test]
fn identical_covariates_pool_the_values() {
    let a: Vec<f64> = (0..30).map(|i| 0.2 * i as f64).collect();
    let b: Vec<f64> = (0..30).map(|i| 0.1 + 0.2 * i as f64).collect();
    let m = FootprintDistributionModel::new(vec![footprint(6.0, 300.0, 1.0, a.clone()), footprint(6.0, 300.0, 1.0, b.clone())], 1.0, 0.001)
        .unwrap();
    let d = m.distribution(6.0, 300.0, 1.0);
    let pooled: Vec<f64> = a.into_iter().chain(b).collect();
    for x in [0.35, 1.05, 2.72, 5.0] {
        assert!((d.cdf(x) - plotting_cdf(&pooled, x)).abs() < 1e-12);
    }
}

#[test]
fn single_footprint_gives_its_empirical_distribution() {
    let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin() + 3.0).collect();
    let w = a.iter().cloned().fold(f64::MIN, f64::max);
    let m = FootprintDistributionModel::new(vec![footprint(w, 200.0, 1.2, a.clone())], 1.0, 0.001).unwrap();
    let d = m.distribution(w, 200.0, 1.2);
    for x in [2.3, 2.9, 3.4] {
        assert!((d.cdf(x) - plotting_cdf(&a, x)).abs() < 1e-12);
    }
    assert_eq!(d.upper_limit(), w);
}

#[test]
fn tiny_bandwidth_isolates_the_matching_footprint() {
    let a: Vec<f64> = (0..50).map(|i| 1.0 + 0.05 * i as f64).collect();
    let b: Vec<f64> = (0..50).map(|i| 0.5 + 0.02 * i as f64).collect();
    let m = FootprintDistributionModel::with_bandwidths(
        vec![footprint(3.45, 400.0, 1.5, a.clone()), footprint(3.0, 350.0, 1.1, b)],
        [1e-3, 1e-1, 1e-3],
        0.001,
    )
    .unwrap();
    let d = m.distribution(3.45, 400.0, 1.5);
    assert!(!d.nearest_fallback);
    for x in [1.12, 2.0, 3.01] {
        assert!((d.cdf(x) - plotting_cdf(&a, x)).abs() < 1e-6);
    }
}

#[test]
fn vanishing_weights_fall_back_to_nearest_footprint() {
    let a: Vec<f64> = (0..20).map(|i| 1.0 + 0.1 * i as f64).collect();
    let b: Vec<f64> = (0..20).map(|i| 0.5 + 0.1 * i as f64).collect();
    let m = FootprintDistributionModel::with_bandwidths(
        vec![footprint(2.9, 400.0, 1.5, a), footprint(2.4, 350.0, 1.1, b.clone())],
        [1e-6, 1e-6, 1e-6],
        0.001,
    )
    .unwrap();
    let d = m.distribution(2.45, 351.0, 1.1);
    assert!(d.nearest_fallback);
    assert!((d.cdf(1.23) - plotting_cdf(&b, 1.23)).abs() < 1e-12);
}

#[test]
fn range_draws_follow_area() {
    let mut rng = stream(9, &[]);
    let pairs: Vec<(f64, f64)> = (0..300)
        .map(|_| {
            let delta: f64 = 200.0 + 600.0 * rng.random::<f64>();
            let alpha = 2.0 + 0.01 * delta + 0.5 * rng.sample::<f64, _>(StandardNormal);
            (alpha, delta)
        })
        .collect();
    let model = AlphaModel::fit(&pairs, Bandwidth::default()).unwrap();
    let deltas: Vec<f64> = (0..2000).map(|i| pairs[i % pairs.len()].1).collect();
    let draws: Vec<f64> = deltas.iter().map(|&d| model.sample(d, &mut rng)).collect();
    assert!(draws.iter().all(|&a| a > 0.0));
    assert!(spearman(&deltas, &draws).unwrap() > 0.0);
}

#[test]
fn gaussian_scores_are_rank_based() {
    let z = gaussian_scores(&[3.0, 1.0, 2.0, 2.0]);
    assert!(z[1] < z[2] && z[2] == z[3] && z[3] < z[0]);
    assert!((z[1] + z[0]).abs() < 1e-12);
}
