use windstorm_core::special::{bessel_k, matern};

/// K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt by composite Simpson's rule,
/// truncated where the integrand drops below e^(−745).
fn bessel_k_quadrature(nu: f64, x: f64) -> f64 {
    let upper = (745.0 / x).acosh().max(1.0);
    let n = 200_000;
    let h = upper / n as f64;
    let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
    let mut s = f(0.0) + f(upper);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Γ(0.6).
const GAMMA_0_6: f64 = 1.489_192_248_812_817_1;

#[test]
fn half_order_matern_is_exponential() {
    let alpha = 3.7;
    for i in 0..100 {
        let u = i as f64 * 0.25;
        assert!((matern(u, alpha, 0.5) - (-u / alpha).exp()).abs() < 1e-10, "u = {u}");
    }
}

#[test]
fn matern_at_shape_0_6_matches_bessel_quadrature() {
    let alpha = 2.0;
    for i in 1..=40 {
        let u = i as f64 * 0.3;
        let r = u / alpha;
        let oracle = 2f64.powf(1.0 - 0.6) / GAMMA_0_6 * r.powf(0.6) * bessel_k_quadrature(0.6, r);
        assert!((matern(u, alpha, 0.6) - oracle).abs() < 1e-8, "u = {u}: {} vs {oracle}", matern(u, alpha, 0.6));
    }
    assert_eq!(matern(0.0, alpha, 0.6), 1.0);
}

#[test]
fn bessel_k_matches_quadrature_across_orders() {
    for nu in [0.1, 0.6, 1.3, 2.5] {
        for x in [0.05, 0.5, 1.0, 3.0, 10.0, 40.0] {
            let (got, want) = (bessel_k(nu, x), bessel_k_quadrature(nu, x));
            assert!((got - want).abs() <= 1e-9 * want.max(1e-300), "K_{nu}({x}) = {got} vs {want}");
        }
    }
}

#[test]
fn matern_is_decreasing_in_distance() {
    let values: Vec<f64> = (0..200).map(|i| matern(i as f64 * 0.1, 2.0, 0.6)).collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]));
    assert!(values.iter().all(|&v| v > 0.0 && v <= 1.0));
}
