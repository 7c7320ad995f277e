use rand::Rng;
use windstorm_core::kde::{sample_covariance, scott_bandwidth, Bandwidth, KdeModel};
use windstorm_core::rng::stream;
use windstorm_core::special::{norm_pdf, norm_ppf};

fn normal(rng: &mut impl Rng) -> f64 {
    norm_ppf(rng.random_range(1e-12..1.0))
}

#[test]
fn scott_bandwidth_follows_the_formula_in_one_dimension() {
    let mut rng = stream(1, &[]);
    let data: Vec<f64> = (0..10_000).map(|_| normal(&mut rng)).collect();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let s2 = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let h = scott_bandwidth(&data, 1, &[0.0], Bandwidth::default()).unwrap();
    assert!((h[0] - n.powf(-0.4) * s2).abs() < 1e-12);
    assert!(scott_bandwidth(&data, 1, &[0.0], Bandwidth { factor: 0.0, diagonal: false }).is_err());
}

#[test]
fn scott_bandwidth_is_proportional_to_the_covariance() {
    let mut rng = stream(2, &[]);
    let data: Vec<f64> = (0..20_000).flat_map(|_| [2.0 * normal(&mut rng), normal(&mut rng)]).collect();
    let h = scott_bandwidth(&data, 2, &[0.0, 0.0], Bandwidth::default()).unwrap();
    let scale = 10_000f64.powf(-2.0 / 6.0) * 2f64.powf(-2.0 / 6.0);
    assert!((h[0] / scale - 4.0).abs() < 0.15);
    assert!((h[3] / scale - 1.0).abs() < 0.05);
    assert!((h[1] / scale).abs() < 0.05);
    assert_eq!(sample_covariance(&data, 2, &[0.0, 0.0]).len(), 4);
}

#[test]
fn density_values_and_normalisation() {
    let one = KdeModel::new(vec![0.3, -1.0], 2, vec![2.0, 0.5, 0.5, 1.0], vec![0.0, 0.0]).unwrap();
    let expected = 1.0 / (2.0 * std::f64::consts::PI * 1.75f64.sqrt());
    assert!((one.density(&[0.3, -1.0]) - expected).abs() < 1e-12);

    let two = KdeModel::new(vec![-1.0, 1.0], 1, vec![1.0], vec![0.0]).unwrap();
    assert!((two.density(&[0.0]) - norm_pdf(1.0)).abs() < 1e-12);
    let h = 0.01;
    let integral: f64 = (-1500..=1500).map(|i| two.density(&[i as f64 * h]) * h).sum();
    assert!((integral - 1.0).abs() < 1e-3);
}

/// A random symmetric positive-definite 3×3 matrix `L Lᵀ`.
fn random_spd(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut l = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..=r {
            l[r][c] = if r == c { rng.random_range(0.4..1.2) } else { rng.random_range(-0.5..0.5) };
        }
    }
    let mut h = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            h[r][c] = (0..3).map(|k| l[r][k] * l[c][k]).sum();
        }
    }
    h
}

/// Mixture mean of the free coordinate 1 given coordinates (0, 2), computed
/// directly from the Gaussian conditioning formulas.
fn mixture_mean(data: &[[f64; 3]], h: &[[f64; 3]; 3], cond: [f64; 2]) -> f64 {
    let (a, b, d) = (h[0][0], h[0][2], h[2][2]);
    let det = a * d - b * b;
    let inv = [[d / det, -b / det], [-b / det, a / det]];
    let cross = [h[1][0], h[1][2]];
    let gain = [cross[0] * inv[0][0] + cross[1] * inv[1][0], cross[0] * inv[0][1] + cross[1] * inv[1][1]];
    let (mut num, mut den) = (0.0, 0.0);
    for z in data {
        let diff = [cond[0] - z[0], cond[1] - z[2]];
        let q = diff[0] * (inv[0][0] * diff[0] + inv[0][1] * diff[1]) + diff[1] * (inv[1][0] * diff[0] + inv[1][1] * diff[1]);
        let w = (-0.5 * q).exp();
        num += w * (z[1] + gain[0] * diff[0] + gain[1] * diff[1]);
        den += w;
    }
    num / den
}

#[test]
fn conditional_sampler_mean_matches_mixture_mean() {
    for set in 0..5u64 {
        let mut rng = stream(3, &[set]);
        let n = rng.random_range(1..=6);
        let data: Vec<[f64; 3]> =
            (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let h = random_spd(&mut rng);
        let model =
            KdeModel::new(data.iter().flatten().copied().collect(), 3, h.iter().flatten().copied().collect(), vec![0.0; 3])
                .unwrap();
        let conditional = model.conditional(&[0, 2]).unwrap();
        let cond = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let draws: Vec<f64> = (0..100_000).map(|_| conditional.sample(&cond, None, &mut rng)[0]).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        let want = mixture_mean(&data, &h, cond);
        assert!((m - want).abs() < 3.0 * se, "set {set}: {m} vs {want} (se {se})");
    }
}

#[test]
fn single_observation_conditional_density_is_the_gaussian_conditional() {
    let h = vec![1.0, 0.6, 0.6, 2.0];
    let model = KdeModel::new(vec![1.0, -1.0], 2, h, vec![0.0, 0.0]).unwrap();
    let conditional = model.conditional(&[0]).unwrap();
    let x0 = 0.4;
    // Z₂ | Z₁ = x0 ~ N(−1 + 0.6 (x0 − 1), 2 − 0.36).
    let (mean, var): (f64, f64) = (-1.0 + 0.6 * (x0 - 1.0), 2.0 - 0.36);
    for z in [-3.0, -1.5, 0.0, 1.0] {
        let want = norm_pdf((z - mean) / var.sqrt()) / var.sqrt();
        assert!((conditional.density(&[x0], None, &[z]) - want).abs() < 1e-12);
    }
    let step = 0.01;
    let integral: f64 = (-1500..=1500).map(|i| conditional.density(&[x0], None, &[i as f64 * step]) * step).sum();
    assert!((integral - 1.0).abs() < 1e-3);
}

#[test]
fn distant_conditioning_falls_back_to_the_nearest_observation() {
    let model = KdeModel::new(vec![0.0, 0.0, 10.0, 5.0], 2, vec![0.01, 0.0, 0.0, 0.01], vec![0.0, 0.0]).unwrap();
    let conditional = model.conditional(&[0]).unwrap();
    let mix = conditional.mixture(&[1e4], None);
    assert!(mix.underflow);
    let draw = conditional.sample(&[1e4], None, &mut stream(4, &[]));
    assert!((draw[0] - 5.0).abs() < 1.0);
}

#[test]
fn serialized_model_round_trips_exactly() {
    let mut rng = stream(5, &[]);
    let data: Vec<f64> = (0..300).map(|_| normal(&mut rng)).collect();
    let model = KdeModel::fit(data, 3, vec![0.0, 0.0, 2.0 * std::f64::consts::PI], Bandwidth::default()).unwrap();
    let text = serde_json::to_string(&model).unwrap();
    let back: KdeModel = serde_json::from_str(&text).unwrap();
    assert_eq!(back, model);
    let bad = text.replace("\"d\":3", "\"d\":0");
    assert!(serde_json::from_str::<KdeModel>(&bad).is_err());
}
