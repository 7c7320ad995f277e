use rand::Rng;
use windstorm_core::analysis::{
    chi_estimate, empirical_return_level, exp_quantile, extremal_index, isotonic_non_increasing, qq_data,
    return_level, spatial_density, QqConfig,
};
use windstorm_core::margins::GpdFit;
use windstorm_core::rng::stream;
use windstorm_core::special::norm_ppf;

fn exp1(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect()
}

#[test]
fn chi_of_independent_series_is_one_minus_q() {
    let mut rng = stream(1, &[]);
    let (a, b) = (exp1(&mut rng, 100_000), exp1(&mut rng, 100_000));
    let est = chi_estimate(&a, &b, &[0.9], 6).unwrap();
    let chi = est.chi[0].unwrap();
    assert!((chi - 0.1).abs() < 0.02, "χ̂ = {chi}");
    assert!(est.lower[0].unwrap() <= chi && chi <= est.upper[0].unwrap());
}

#[test]
fn chi_of_comonotone_and_countermonotone_series() {
    let mut rng = stream(2, &[]);
    let a = exp1(&mut rng, 5_000);
    let q = [0.5, 0.9, 0.95, 0.99];
    let same = chi_estimate(&a, &a, &q, 6).unwrap();
    assert!(same.chi.iter().all(|&c| c == Some(1.0)));
    // Reverse ranks: the largest value of one series pairs with the smallest of the other.
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let mut sorted = a.clone();
    sorted.sort_by(f64::total_cmp);
    let mut b = vec![0.0; a.len()];
    for (rank, &i) in order.iter().enumerate() {
        b[i] = sorted[a.len() - 1 - rank];
    }
    assert_eq!(chi_estimate(&a, &b, &[0.99], 6).unwrap().chi[0], Some(0.0));
}

#[test]
fn chi_marks_levels_without_exceedances() {
    let a = vec![0.1; 200];
    let est = chi_estimate(&a, &a, &[0.9], 6).unwrap();
    assert_eq!(est.chi[0], None);
    assert!(chi_estimate(&a[..50], &a[..50], &[0.9], 6).is_err());
}

#[test]
fn extremal_index_of_iid_and_clustered_series() {
    let mut rng = stream(3, &[]);
    let a = exp1(&mut rng, 100_000);
    let x = exp_quantile(0.95);
    let theta = extremal_index(&a, x, 1).unwrap();
    assert!((0.8..=1.0).contains(&theta), "θ̂ = {theta}");
    // With run length r an independent exceedance opens a cluster when the r
    // preceding steps are below the threshold: E θ̂ ≈ 0.95^r.
    for r in [2, 6] {
        let theta = extremal_index(&a, x, r).unwrap();
        assert!((theta - 0.95f64.powi(r as i32)).abs() < 0.02, "r = {r}: θ̂ = {theta}");
    }

    // Isolated exceedances each duplicated at the next step.
    let mut s = vec![0.0; 10_000];
    for k in (0..10_000).step_by(50) {
        s[k] = 5.0;
        s[k + 1] = 5.0;
    }
    assert!((extremal_index(&s, x, 6).unwrap() - 0.5).abs() < 1e-12);
    let mut single = vec![0.0; 100];
    single[40] = 9.0;
    assert_eq!(extremal_index(&single, x, 6).unwrap(), 1.0);
    assert!(extremal_index(&[0.0; 100], x, 6).is_err());
}

fn fit(sigma: f64, xi: f64, lambda: f64) -> GpdFit {
    GpdFit { sigma, xi, u: 10.0, lambda, n_exceed: 100 }
}

#[test]
fn return_level_reductions() {
    let f = fit(1.0, 0.0, 0.02);
    assert!((return_level(&f, 1.0, 50.0).unwrap() - 10.0).abs() < 1e-12);
    assert!((return_level(&f, 100.0, 50.0).unwrap() - (10.0 + 100f64.ln())).abs() < 1e-12);
    assert!(return_level(&f, 0.5, 50.0).is_err());
    let limit = return_level(&fit(2.0, 0.0, 0.02), 100.0, 50.0).unwrap();
    for xi in [1e-9, -1e-9] {
        let near = return_level(&fit(2.0, xi, 0.02), 100.0, 50.0).unwrap();
        assert!((near - limit).abs() < 1e-6 * limit);
    }
}

#[test]
fn return_level_matches_a_long_simulation() {
    let (sigma, xi, lambda, per_period) = (1.5, 0.1, 0.02, 50.0);
    let f = fit(sigma, xi, lambda);
    let mut rng = stream(4, &[]);
    let n_periods = 20_000.0;
    let values: Vec<f64> = (0..(n_periods * per_period) as usize)
        .map(|_| {
            let p: f64 = rng.random();
            if p < lambda {
                let u: f64 = rng.random();
                10.0 + sigma * ((1.0 - u).powf(-xi) - 1.0) / xi
            } else {
                10.0 * p
            }
        })
        .collect();
    let want = return_level(&f, 100.0, per_period).unwrap();
    let got = empirical_return_level(&values, n_periods, 100.0).unwrap();
    assert!((got - want).abs() < 0.05 * want, "{got} vs {want}");
}

#[test]
fn qq_identity_calibration_and_power() {
    let cfg = QqConfig { n_quantiles: 19, ..Default::default() };
    let mut rng = stream(5, &[]);
    let normal = |rng: &mut _| -> Vec<f64> {
        let rng: &mut windstorm_core::rng::StreamRng = rng;
        (0..10_000).map(|_| norm_ppf(rng.random_range(1e-12..1.0))).collect()
    };
    let a = normal(&mut rng);
    let same = qq_data(&a, &a, &cfg, &mut rng).unwrap();
    assert_eq!(same.qa, same.qb);
    assert_eq!(same.n_inside(), 19);

    let (mut inside, mut total) = (0, 0);
    for _ in 0..10 {
        let (x, y) = (normal(&mut rng), normal(&mut rng));
        let qq = qq_data(&x, &y, &cfg, &mut rng).unwrap();
        inside += qq.n_inside();
        total += qq.probs.len();
    }
    assert!(inside as f64 >= 0.95 * total as f64, "{inside} of {total}");

    let shifted: Vec<f64> = normal(&mut rng).iter().map(|v| v + 0.5).collect();
    let qq = qq_data(&a, &shifted, &cfg, &mut rng).unwrap();
    assert!(qq.n_inside() * 2 <= qq.probs.len(), "{} inside", qq.n_inside());
}

#[test]
fn spatial_density_counts_and_conserves_mass() {
    let single = spatial_density(&[[3.2, 4.7]], 10, 10, None).unwrap();
    assert_eq!(single.iter().filter(|&&v| v != 0.0).count(), 1);
    assert_eq!(single[5 * 10 + 3], 1.0);

    let mut rng = stream(6, &[]);
    let pts: Vec<[f64; 2]> = (0..500).map(|_| [rng.random_range(-0.5..29.5), rng.random_range(-0.5..19.5)]).collect();
    let smooth = spatial_density(&pts, 30, 20, Some(2.5)).unwrap();
    assert!((smooth.iter().sum::<f64>() - 500.0).abs() < 1e-6);

    // A planted mode at (22, 7) above a uniform background.
    let mut planted: Vec<[f64; 2]> = (0..400).map(|_| [rng.random_range(0.0..40.0), rng.random_range(0.0..30.0)]).collect();
    planted.extend((0..300).map(|_| [22.0 + norm_ppf(rng.random_range(0.001..0.999)), 7.0 + norm_ppf(rng.random_range(0.001..0.999))]));
    let d = spatial_density(&planted, 40, 30, Some(2.0)).unwrap();
    let best = (0..d.len()).max_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap();
    let (x, y) = ((best % 40) as f64, (best / 40) as f64);
    assert!((x - 22.0).abs() <= 2.0 && (y - 7.0).abs() <= 2.0, "mode at ({x}, {y})");
}

#[test]
fn isotonic_fit_is_non_increasing_and_exact_on_monotone_input() {
    let y = [0.5, 0.4, 0.42, 0.1];
    let fit = isotonic_non_increasing(&y, &[1.0; 4]).unwrap();
    assert!(fit.windows(2).all(|w| w[0] >= w[1]));
    assert!((fit[1] - 0.41).abs() < 1e-12 && (fit[2] - 0.41).abs() < 1e-12);
    let mono = [0.9, 0.5, 0.5, 0.2];
    assert_eq!(isotonic_non_increasing(&mono, &[1.0; 4]).unwrap(), mono.to_vec());
}
