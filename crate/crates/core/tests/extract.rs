use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use windstorm_core::extract::{
    dbscan_exceedances, ellipse_to_features, extract_windstorm, khachiyan_mvee, Ellipse, ExtractConfig,
};
use windstorm_core::margins::fit_marginal_model;
use windstorm_core::rng::stream;
use windstorm_core::synth::{generate_synthetic_corpus, CorpusConfig};
use windstorm_core::CellMask;

/// Minimum-area enclosing ellipse `{x : |A x + b| ≤ 1}` by a log-barrier
/// Newton method on `−log det A`, independent of Khachiyan's dual updates.
/// Returns the area `π / det A`.
fn barrier_mvee_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let p: Vec<[f64; 2]> = points.iter().map(|q| [q[0] - mx, q[1] - my]).collect();
    let r = p.iter().map(|q| q[0].hypot(q[1])).fold(0.0, f64::max) * 1.5 + 1e-9;
    // x = (a11, a12, a22, b1, b2)
    let mut x = [1.0 / r, 0.0, 1.0 / r, 0.0, 0.0];

    let phi = |x: &[f64; 5], mu: f64| -> f64 {
        let det = x[0] * x[2] - x[1] * x[1];
        if !(x[0] > 0.0 && det > 0.0) {
            return f64::INFINITY;
        }
        let mut s = -det.ln();
        for q in &p {
            let y = [x[0] * q[0] + x[1] * q[1] + x[3], x[1] * q[0] + x[2] * q[1] + x[4]];
            let g = 1.0 - y[0] * y[0] - y[1] * y[1];
            if !(g > 0.0) {
                return f64::INFINITY;
            }
            s -= mu * g.ln();
        }
        s
    };
    let grad = |x: &[f64; 5], mu: f64| -> [f64; 5] {
        let det = x[0] * x[2] - x[1] * x[1];
        let mut g = [-x[2] / det, 2.0 * x[1] / det, -x[0] / det, 0.0, 0.0];
        for q in &p {
            let y = [x[0] * q[0] + x[1] * q[1] + x[3], x[1] * q[0] + x[2] * q[1] + x[4]];
            let h = 1.0 - y[0] * y[0] - y[1] * y[1];
            let (d0, d1) = (2.0 * mu * y[0] / h, 2.0 * mu * y[1] / h);
            g[0] += d0 * q[0];
            g[1] += d0 * q[1] + d1 * q[0];
            g[2] += d1 * q[1];
            g[3] += d0;
            g[4] += d1;
        }
        g
    };

    let mut mu = 1.0;
    while mu > 1e-9 {
        for _ in 0..100 {
            let g = grad(&x, mu);
            let mut hess = [[0.0; 5]; 5];
            for j in 0..5 {
                let h = 1e-7 * x[j].abs().max(1e-3);
                let (mut xp, mut xm) = (x, x);
                xp[j] += h;
                xm[j] -= h;
                let (gp, gm) = (grad(&xp, mu), grad(&xm, mu));
                for i in 0..5 {
                    hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            for i in 0..5 {
                for j in 0..i {
                    let m = 0.5 * (hess[i][j] + hess[j][i]);
                    hess[i][j] = m;
                    hess[j][i] = m;
                }
            }
            let step = solve5(hess, g.map(|v| -v));
            let decrement: f64 = -step.iter().zip(&g).map(|(s, g)| s * g).sum::<f64>();
            if decrement < 1e-14 {
                break;
            }
            let f0 = phi(&x, mu);
            let mut t = 1.0;
            loop {
                let trial: [f64; 5] = std::array::from_fn(|i| x[i] + t * step[i]);
                if phi(&trial, mu) <= f0 - 0.25 * t * decrement {
                    x = trial;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    break;
                }
            }
            if t < 1e-12 {
                break;
            }
        }
        mu *= 0.2;
    }
    PI / (x[0] * x[2] - x[1] * x[1])
}

fn solve5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> [f64; 5] {
    for c in 0..5 {
        let piv = (c..5).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..5 {
            let f = a[r][c] / a[c][c];
            for k in c..5 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 5];
    for r in (0..5).rev() {
        x[r] = (b[r] - (r + 1..5).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

fn random_points(seed: u64, i: u64) -> Vec<[f64; 2]> {
    let mut rng = stream(seed, &[i]);
    let n = rng.random_range(3..=12);
    (0..n).map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-5.0..5.0)]).collect()
}

#[test]
fn rectangle_mvee_matches_barrier_oracle() {
    let pts = [[1.0, 2.0], [-1.0, 2.0], [-1.0, -2.0], [1.0, -2.0]];
    let e = khachiyan_mvee(&pts, 1e-7).unwrap();
    let (a, b, _) = e.axes();
    assert!((a - 2.0 * 2f64.sqrt()).abs() < 0.01 * a && (b - 2f64.sqrt()).abs() < 0.01 * b);
    let oracle = barrier_mvee_area(&pts);
    assert!((oracle - PI * 4.0).abs() < 1e-3 * oracle);
}

#[test]
fn mvee_of_random_sets_matches_barrier_oracle() {
    for i in 0..100 {
        let pts = random_points(11, i);
        let start = Instant::now();
        let e = khachiyan_mvee(&pts, 1e-5).unwrap();
        assert!(start.elapsed().as_millis() < 10, "set {i}");
        for p in &pts {
            assert!(e.quad_form(*p) <= 1.0 + 1e-6, "set {i}");
        }
        let oracle = barrier_mvee_area(&pts);
        assert!((e.area() - oracle).abs() <= 0.005 * oracle, "set {i}: {} vs {oracle}", e.area());
    }
}

#[test]
fn mvee_area_is_invariant_under_rigid_motion() {
    for i in 0..20 {
        let pts = random_points(12, i);
        let (s, c) = (0.3 + i as f64).sin_cos();
        let moved: Vec<[f64; 2]> = pts.iter().map(|p| [c * p[0] - s * p[1] + 40.0, s * p[0] + c * p[1] - 7.0]).collect();
        let (a0, a1) = (khachiyan_mvee(&pts, 1e-9).unwrap().area(), khachiyan_mvee(&moved, 1e-9).unwrap().area());
        assert!((a0 - a1).abs() < 1e-6 * a0, "set {i}");
    }
}

/// Connected components of the exceeding cells under 8-adjacency.
fn components(values: &[f64], n_x: usize, n_y: usize, v: f64) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; values.len()];
    let mut out = Vec::new();
    for start in 0..values.len() {
        if values[start] <= v || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        label[start] = id;
        while let Some(i) = stack.pop() {
            members.push(i);
            let (x, y) = ((i % n_x) as i64, (i / n_x) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= n_x as i64 || ny >= n_y as i64 {
                        continue;
                    }
                    let j = ny as usize * n_x + nx as usize;
                    if values[j] > v && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

#[test]
fn dbscan_agrees_with_connected_components() {
    for r in 0..50u64 {
        let mut rng = stream(13, &[r]);
        let (n_x, n_y) = (rng.random_range(5..40), rng.random_range(5..40));
        let density = rng.random_range(0.1..0.6);
        let values: Vec<f64> = (0..n_x * n_y).map(|_| if rng.random::<f64>() < density { 1.0 } else { 0.0 }).collect();
        let mut got = dbscan_exceedances(&values, n_x, n_y, 0.5, 1.5, 1, |_| true);
        let mut want = components(&values, n_x, n_y, 0.5);
        got.sort();
        want.sort();
        assert_eq!(got, want, "raster {r}");
    }
}

#[test]
fn two_separated_blocks_form_two_clusters() {
    let (n_x, n_y) = (80, 20);
    let mut values = vec![0.0; n_x * n_y];
    for y in 5..15 {
        for x in (2..12).chain(62..72) {
            values[y * n_x + x] = 3.0;
        }
    }
    let clusters = dbscan_exceedances(&values, n_x, n_y, 2.0, 1.5, 5, |_| true);
    assert_eq!(clusters.len(), 2);
    assert!(clusters.iter().all(|c| c.len() == 100));
    assert!(dbscan_exceedances(&[0.0; 100], 10, 10, 2.0, 1.5, 5, |_| true).is_empty());
}

#[test]
fn rotated_ellipse_features_are_recovered() {
    let gamma = PI / 6.0;
    // Semi-major axis at Γ from due north (the −y direction): u = (sin Γ, −cos Γ).
    let (u, v) = ([gamma.sin(), -gamma.cos()], [gamma.cos(), gamma.sin()]);
    let (a, b) = (4.0, 2.0);
    let e = Ellipse::new(
        [10.0, 10.0],
        u[0] * u[0] / (a * a) + v[0] * v[0] / (b * b),
        u[0] * u[1] / (a * a) + v[0] * v[1] / (b * b),
        u[1] * u[1] / (a * a) + v[1] * v[1] / (b * b),
    )
    .unwrap();
    let f = ellipse_to_features(&e, [10.0, 20.0], [10.0, 10.0], 3.0, 1).unwrap();
    assert!((f.a - 4.0).abs() < 1e-6 && (f.b - 2.0).abs() < 1e-6);
    assert!((f.gamma - gamma).abs() < 1e-6, "Γ = {}", f.gamma);
    assert!((f.r_e - 10.0).abs() < 1e-12 && f.theta_e.abs() < 1e-12);
}

#[test]
fn planted_bands_are_recovered_along_tracks() {
    let cfg = CorpusConfig { n_tracks: 20, ..Default::default() };
    let corpus = generate_synthetic_corpus(&cfg, 3).unwrap();
    let margins = fit_marginal_model(&corpus.stacks, &CellMask::all(corpus.grid), 0.98, 10).unwrap();
    let (mut hits, mut total) = (0, 0);
    for ((stack, track), truth) in corpus.stacks.iter().zip(&corpus.tracks).zip(&corpus.truth) {
        let (exp, _) = margins.to_exp_margins(stack).unwrap();
        let record = extract_windstorm(&exp, track, None, &ExtractConfig::default()).unwrap();
        for (step, planted) in record.steps.iter().zip(truth) {
            if let (Some(fp), Some(band)) = (step, planted) {
                total += 1;
                let d = (fp.ellipse.c[0] - band.ellipse.c[0]).hypot(fp.ellipse.c[1] - band.ellipse.c[1]);
                hits += (d <= 3.0) as usize;
            }
        }
        // Every emitted footprint satisfies its own contract.
        for fp in record.steps.iter().flatten() {
            let raster = exp.raster(exp.time_index(fp.features.t).unwrap());
            let centre = track.centre_cell(&corpus.grid, fp.features.t as usize);
            let m = fp.features.max_location([centre.0, centre.1]);
            let (mx, my) = (m[0].round() as usize, m[1].round() as usize);
            assert!((m[0] - mx as f64).abs() < 1e-6 && (m[1] - my as f64).abs() < 1e-6);
            let inside = fp.ellipse.cells(corpus.grid.n_x, corpus.grid.n_y);
            let max = inside.iter().map(|&(x, y)| raster[corpus.grid.index(x, y)] as f64).fold(f64::MIN, f64::max);
            assert_eq!(fp.features.w, max);
            assert_eq!(raster[corpus.grid.index(mx, my)] as f64, max);
        }
    }
    assert!(total > 100, "only {total} active planted steps");
    assert!(hits as f64 >= 0.9 * total as f64, "{hits} of {total} centres within 3 cells");
}
