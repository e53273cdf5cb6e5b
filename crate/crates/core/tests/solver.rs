use qshoot_core::{shooting, Nonlinearity, Problem, ProblemConfig};

fn j0(x: f64) -> f64 {
    let (mut term, mut sum, q) = (1.0, 1.0, -x * x / 4.0);
    for k in 1..80 {
        term *= q / (k * k) as f64;
        sum += term;
    }
    sum
}

fn j0_zero() -> f64 {
    let (mut lo, mut hi) = (2.0, 3.0);
    while hi - lo > 1e-15 {
        let m = 0.5 * (lo + hi);
        if j0(m) > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    lo
}

fn with_tol(nl: Nonlinearity, tol: f64) -> Problem {
    let cfg = ProblemConfig {
        rtol: tol,
        atol: tol * 1e-2,
        event_tol: (tol * 1e-2).min(1e-12),
        ..ProblemConfig::default()
    };
    Problem::new(nl, cfg).unwrap()
}

#[test]
fn bessel_error_tracks_tolerance() {
    let zero = j0_zero();
    let tols: Vec<f64> = (0..14).map(|k| 1e-4 / 2f64.powi(k)).collect();
    let errs: Vec<f64> = tols
        .iter()
        .map(|&t| {
            (shooting::shoot(&with_tol(Nonlinearity::linear(1.0).unwrap(), t), 1.0)
                .unwrap()
                .r
                - zero)
                .abs()
        })
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "{errs:?}");
    }
    // least-squares order in tol; one halving must gain at least 2x on average
    let xs: Vec<f64> = tols.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 14.0, ys.iter().sum::<f64>() / 14.0);
    let order = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(order >= 1.0, "order {order}, errors {errs:?}");
}

#[test]
fn t_is_continuous_across_the_start_switch() {
    // γ = 1 is the last radial start for u^0 e^{u^2}; the tail start takes over just above
    let p = Problem::new(
        Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap(),
        ProblemConfig::default(),
    )
    .unwrap();
    assert!(p.uses_radial_start(1.0) && !p.uses_radial_start(1.001));
    let t: Vec<f64> = [0.998, 0.999, 1.0, 1.001, 1.002, 1.003]
        .iter()
        .map(|&g| shooting::shoot(&p, g).unwrap().t)
        .collect();
    let d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let dd: Vec<f64> = d.windows(2).map(|w| w[1] - w[0]).collect();
    // second differences of the smooth curve are nearly constant (~2e-6);
    // a bias between the two starts shows up as a spike of the size of the bias
    for x in &dd {
        assert!((x - dd[0]).abs() < 5e-7, "{dd:?}");
    }
}

#[test]
fn sweep_matches_pointwise_shots() {
    let p = Problem::new(
        Nonlinearity::pow_exp_lin(1.0, 1.0, 1.0, 1.5, 1.0).unwrap(),
        ProblemConfig::default(),
    )
    .unwrap();
    let grid = shooting::log_grid(1.0, 20.0, 9).unwrap();
    let curve = shooting::sweep(&p, &grid, false).unwrap();
    assert_eq!(curve.rows.len(), grid.len());
    for (row, &g) in curve.rows.iter().zip(&grid) {
        let o = shooting::shoot(&p, g).unwrap();
        assert_eq!(row.gamma, g);
        assert_eq!(row.t, o.t);
        assert_eq!(row.lambda, o.lambda_of_gamma);
    }
}

#[test]
fn sweep_rejects_unsorted_grid() {
    let p = Problem::new(Nonlinearity::exp(1.0).unwrap(), ProblemConfig::default()).unwrap();
    assert!(shooting::sweep(&p, &[1.0, 3.0, 2.0], false).is_err());
}

#[test]
fn lambda_scaling_is_exact() {
    // f → μf rescales x by μ^{-1/n}: R_μ = R μ^{-1/n}
    let p1 = Problem::new(
        Nonlinearity::pow_exp(1.0, 1.0, 1.0, 1.5).unwrap(),
        ProblemConfig::with_n(3),
    )
    .unwrap();
    let p2 = Problem::new(
        Nonlinearity::pow_exp(5.0, 1.0, 1.0, 1.5).unwrap(),
        ProblemConfig::with_n(3),
    )
    .unwrap();
    for g in [0.5, 2.0, 6.0] {
        let r1 = shooting::shoot(&p1, g).unwrap().r;
        let r2 = shooting::shoot(&p2, g).unwrap().r;
        assert!(
            (r2 - r1 * 5f64.powf(-1.0 / 3.0)).abs() <= 1e-8 * r1,
            "gamma {g}: {r1} {r2}"
        );
    }
}
