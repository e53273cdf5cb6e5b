//! The shooting map `γ ↦ T(γ)` and everything built from it.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::GammaSnapshot;
use crate::config::{Problem, ProblemConfig};
use crate::error::{Error, Result};
use crate::linearization;
use crate::nonlinearity::Nonlinearity;
use crate::ode::{self, FlowTrajectory, StartKind, StopRule, Variable};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub variable: Variable,
    pub start: StartKind,
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Width of the final event bracket.
    pub event_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootOutcome {
    pub gamma: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "yprime_T")]
    pub yprime_t: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub lambda_of_gamma: f64,
    /// Time at which `y = s₀`, when `0 < s₀ < γ`.
    #[serde(rename = "Ttilde")]
    pub t_tilde: Option<f64>,
    pub diagnostics: Diagnostics,
    /// Reasons the nonlinearity is outside the standing hypothesis.
    pub flags: Vec<String>,
}

impl ShootOutcome {
    fn from_t(
        gamma: f64,
        n: u32,
        t: f64,
        yprime_t: f64,
        t_tilde: Option<f64>,
        diagnostics: Diagnostics,
        flags: Vec<String>,
    ) -> Self {
        let nf = n as f64;
        let r = nf * (-t / nf).exp();
        Self {
            gamma,
            t,
            yprime_t,
            r,
            lambda_of_gamma: r.powi(n as i32),
            t_tilde,
            diagnostics,
            flags,
        }
    }
}

fn diagnostics(tr: &FlowTrajectory) -> Diagnostics {
    Diagnostics {
        variable: tr.variable,
        start: tr.start.kind,
        steps: tr.sol.steps.len(),
        rejected: tr.sol.rejected,
        rhs_evals: tr.sol.rhs_evals,
        event_residual: tr.sol.event.map_or(f64::NAN, |e| e.bracket),
    }
}

/// First crossing of `level` by component 0 along the trajectory,
/// refined by bisection on the dense output.
pub(crate) fn crossing<const N: usize>(
    tr: &ode::Trajectory<N>,
    level: f64,
    component: usize,
    tol: f64,
) -> Option<f64> {
    let samples = tr.samples();
    let above = |v: f64| v > level;
    let first = above(samples.first()?.1[component]);
    for w in samples.windows(2) {
        if above(w[1].1[component]) != first {
            let (mut a, mut b) = (w[0].0, w[1].0);
            for _ in 0..200 {
                if (b - a).abs() <= tol {
                    break;
                }
                let m = 0.5 * (a + b);
                let v = tr.state_at(m)?[component];
                if above(v) == first {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
    }
    None
}

/// A shot together with the trajectory it came from.
#[derive(Debug, Clone)]
pub struct Shot {
    pub outcome: ShootOutcome,
    pub trajectory: FlowTrajectory,
}

/// `T(γ)`, `y'(T)`, `R` and `λ` for one `γ`; starts from the origin in `r`
/// for small `γ` and from the tail in `t` otherwise.
pub fn shoot(p: &Problem, gamma: f64) -> Result<ShootOutcome> {
    shoot_with_trajectory(p, gamma).map(|s| s.outcome)
}

pub fn shoot_with_trajectory(p: &Problem, gamma: f64) -> Result<Shot> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Invalid(format!("gamma = {gamma} must be positive")));
    }
    let n = p.n();
    let nf = n as f64;
    let flags = p.nl.exploratory_flags(n);
    let s0 = p.s0();
    let radial = p.cfg.beta != 0.0 || p.uses_radial_start(gamma);
    if radial {
        let tr = ode::integrate_r(p, gamma, StopRule::FirstZero)?;
        let (r_zero, st) = tr.end();
        let t = -nf * (r_zero / nf).ln();
        let yprime_t = -r_zero * tr.slope(r_zero, &st) / nf;
        let t_tilde = s0
            .filter(|&s| s > 0.0 && s < gamma)
            .and_then(|s| crossing(&tr, s, 0, p.cfg.event_tol))
            .map(|r| -nf * (r / nf).ln());
        let outcome = ShootOutcome::from_t(gamma, n, t, yprime_t, t_tilde, diagnostics(&tr), flags);
        Ok(Shot {
            outcome,
            trajectory: tr,
        })
    } else {
        let start = ode::tail_start_state(p, gamma)?;
        let tr: FlowTrajectory = ode::integrate_t(p, gamma, &start, StopRule::FirstZero)?;
        let (t, st) = tr.end();
        let yprime_t = tr.slope(t, &st);
        let t_tilde = s0
            .filter(|&s| s > 0.0 && s < gamma)
            .and_then(|s| crossing(&tr, s, 0, p.cfg.event_tol));
        let outcome = ShootOutcome::from_t(gamma, n, t, yprime_t, t_tilde, diagnostics(&tr), flags);
        Ok(Shot {
            outcome,
            trajectory: tr,
        })
    }
}

/// `T(γ)` from a `t`-integration regardless of the switch rule; starts
/// from the tail when admissible and from the series otherwise.
pub fn shoot_in_t(p: &Problem, gamma: f64) -> Result<f64> {
    let start = ode::default_start_t(p, gamma)?;
    let tr: FlowTrajectory = ode::integrate_t(p, gamma, &start, StopRule::FirstZero)?;
    Ok(tr.end().0)
}

/// `T(γ)` from an `r`-integration, `-n log(R/n)`.
pub fn shoot_in_r(p: &Problem, gamma: f64) -> Result<f64> {
    let nf = p.n() as f64;
    let tr = ode::integrate_r(p, gamma, StopRule::FirstZero)?;
    Ok(-nf * (tr.end().0 / nf).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub gamma: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub lambda: f64,
    #[serde(rename = "yprime_T")]
    pub yprime_t: f64,
    #[serde(rename = "V1_T", skip_serializing_if = "Option::is_none")]
    pub v1_t: Option<f64>,
    #[serde(rename = "Tprime_v1", skip_serializing_if = "Option::is_none")]
    pub tprime_v1: Option<f64>,
    #[serde(rename = "Tprime_fd", skip_serializing_if = "Option::is_none")]
    pub tprime_fd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    pub gamma: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveMeta {
    pub family: String,
    pub lambda: f64,
    pub p: f64,
    pub a: f64,
    pub q: f64,
    pub b: f64,
    pub n: u32,
    pub beta: f64,
    pub rtol: f64,
    pub atol: f64,
    pub tail_c: f64,
    pub version: &'static str,
    pub flags: Vec<String>,
}

impl CurveMeta {
    pub fn new(nl: &Nonlinearity, cfg: &ProblemConfig) -> Self {
        Self {
            family: nl.family.to_string(),
            lambda: nl.lambda,
            p: nl.p(),
            a: nl.a,
            q: nl.q,
            b: nl.rho.lin_coef,
            n: cfg.n,
            beta: cfg.beta,
            rtol: cfg.rtol,
            atol: cfg.atol,
            tail_c: cfg.tail_c,
            version: env!("CARGO_PKG_VERSION"),
            flags: nl.exploratory_flags(cfg.n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationCurve {
    pub meta: CurveMeta,
    pub rows: Vec<CurveRow>,
    pub errors: Vec<RowError>,
    pub with_derivative: bool,
}

impl BifurcationCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.with_derivative {
            writeln!(w, "gamma,T,R,lambda,yprime_T,Tprime_v1,Tprime_fd")?;
        } else {
            writeln!(w, "gamma,T,R,lambda,yprime_T")?;
        }
        for r in &self.rows {
            write!(
                w,
                "{:e},{:e},{:e},{:e},{:e}",
                r.gamma, r.t, r.r, r.lambda, r.yprime_t
            )?;
            if self.with_derivative {
                write!(w, ",{},{}", opt(r.tprime_v1), opt(r.tprime_fd))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serialises")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:e}"))
}

/// Worker count from `QSHOOT_THREADS`, else the number of logical cores.
pub fn worker_count() -> usize {
    std::env::var("QSHOOT_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |k| k.get()))
}

/// Central difference of `T` with step `1e-3 γ` at ten times tighter tolerances.
pub fn t_prime_fd(p: &Problem, gamma: f64) -> Result<f64> {
    let tight = p.with_config(p.cfg.tightened(0.1))?;
    let h = 1e-3 * gamma;
    let up = shoot(&tight, gamma + h)?.t;
    let dn = shoot(&tight, gamma - h)?.t;
    Ok((up - dn) / (2.0 * h))
}

fn sweep_row(p: &Problem, gamma: f64, with_derivative: bool) -> Result<CurveRow> {
    let o = shoot(p, gamma)?;
    let mut row = CurveRow {
        gamma,
        t: o.t,
        r: o.r,
        lambda: o.lambda_of_gamma,
        yprime_t: o.yprime_t,
        v1_t: None,
        tprime_v1: None,
        tprime_fd: None,
    };
    if with_derivative {
        let lin = linearization::solve_v1(p, gamma)?;
        row.v1_t = Some(lin.v1_at_t);
        row.tprime_v1 = linearization::t_prime(lin.yprime_t, lin.v1_at_t).ok();
        row.tprime_fd = t_prime_fd(p, gamma).ok();
    }
    Ok(row)
}

/// One row per `γ`, computed in parallel and returned in grid order.
pub fn sweep(p: &Problem, gamma_grid: &[f64], with_derivative: bool) -> Result<BifurcationCurve> {
    if gamma_grid.is_empty() {
        return Err(Error::Invalid("empty gamma grid".into()));
    }
    if gamma_grid[0] <= 0.0 || gamma_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid(
            "gamma grid must be positive and strictly increasing".into(),
        ));
    }
    // warm the s0 cache before fanning out
    let _ = p.s0();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let results: Vec<(f64, Result<CurveRow>)> = pool.install(|| {
        gamma_grid
            .par_iter()
            .map(|&g| (g, sweep_row(p, g, with_derivative)))
            .collect()
    });
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (gamma, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => errors.push(RowError {
                gamma,
                error: e.to_string(),
            }),
        }
    }
    Ok(BifurcationCurve {
        meta: CurveMeta::new(&p.nl, &p.cfg),
        rows,
        errors,
        with_derivative,
    })
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || steps == 0 {
        return Err(Error::Invalid(format!(
            "bad log grid [{lo}, {hi}] x {steps}"
        )));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..steps)
        .map(|i| {
            if i + 1 == steps {
                hi
            } else {
                (a + (b - a) * i as f64 / (steps - 1) as f64).exp()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    DivergesDown,
    Bounded,
    DivergesUp,
    Inconclusive,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::DivergesDown => "diverges_down",
            RegimeLabel::Bounded => "bounded",
            RegimeLabel::DivergesUp => "diverges_up",
            RegimeLabel::Inconclusive => "inconclusive",
        }
    }
}

/// Slope of `T` against `log γ` below which the trend counts as flat.
pub const REGIME_SLOPE_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub label: RegimeLabel,
    /// Least-squares slope of `T` against `log γ`.
    pub slope: f64,
    /// Slopes between consecutive grid points.
    pub local_slopes: Vec<f64>,
    /// Small-`u` exponent of `f`, supplied or fitted.
    pub p: f64,
    /// Label expected from `p` against `n - 1`.
    pub expected: RegimeLabel,
    pub gamma: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    /// Largest `T` on the grid (reported for `p = n - 1`).
    #[serde(rename = "T_sup")]
    pub t_sup: f64,
}

/// Slope of `log f` against `log u` over `u ∈ [1e-6, 1e-3]`.
pub fn estimate_small_u_exponent(nl: &Nonlinearity) -> Result<f64> {
    let xs: Vec<f64> = (0..=30)
        .map(|i| (1e-6f64).ln() + i as f64 / 30.0 * (1e3f64).ln())
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| nl.log_f(x.exp()))
        .collect::<Result<_>>()?;
    Ok(ls_slope(&xs, &ys))
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn label_from_slope(s: f64) -> RegimeLabel {
    if s > REGIME_SLOPE_TOL {
        RegimeLabel::DivergesDown
    } else if s < -REGIME_SLOPE_TOL {
        RegimeLabel::DivergesUp
    } else {
        RegimeLabel::Bounded
    }
}

/// Classifies the behaviour of `T(γ)` as `γ ↓ 0` along a decreasing grid.
///
/// `T ≈ T_Y + (p - (n-1)) log γ`, so the sign of the slope against
/// `log γ` separates `p > n-1` (T → -∞), `p = n-1` (bounded) and
/// `p < n-1` (T → +∞).
pub fn classify_small_gamma(
    p: &Problem,
    gamma_tail: &[f64],
    p_exponent: Option<f64>,
) -> Result<RegimeReport> {
    if gamma_tail.len() < 3 {
        return Err(Error::Invalid("need at least three gamma values".into()));
    }
    if gamma_tail[gamma_tail.len() - 1] <= 0.0 || gamma_tail.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid(
            "gamma tail must be positive and strictly decreasing".into(),
        ));
    }
    let pe = match p_exponent {
        Some(v) => v,
        None => estimate_small_u_exponent(&p.nl)?,
    };
    let ts: Vec<f64> = gamma_tail
        .iter()
        .map(|&g| shoot(p, g).map(|o| o.t))
        .collect::<Result<_>>()?;
    let lg: Vec<f64> = gamma_tail.iter().map(|g| g.ln()).collect();
    let slope = ls_slope(&lg, &ts);
    let local: Vec<f64> = lg
        .windows(2)
        .zip(ts.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    let labels: Vec<RegimeLabel> = local.iter().map(|&s| label_from_slope(s)).collect();
    let label = if labels.iter().all(|&l| l == labels[0]) {
        labels[0]
    } else {
        RegimeLabel::Inconclusive
    };
    let m = p.n() as f64 - 1.0;
    let expected = label_from_slope(pe - m);
    let t_sup = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(RegimeReport {
        label,
        slope,
        local_slopes: local,
        p: pe,
        expected,
        gamma: gamma_tail.to_vec(),
        t: ts,
        t_sup,
    })
}

/// The regular problem equivalent to the weighted one with exponent `β`:
/// `f̃ = f/(n^β aⁿ)` with `a = 1 - β/n`; its first zero divided by `a` is
/// the weighted problem's first zero.
pub fn singular_reduce(nl: &Nonlinearity, n: u32, beta: f64) -> Result<(Nonlinearity, f64)> {
    let nf = n as f64;
    if !(0.0..nf).contains(&beta) {
        return Err(Error::Domain(format!("beta = {beta} must lie in [0, {n})")));
    }
    if beta == 0.0 {
        return Ok((nl.clone(), 1.0));
    }
    let a = 1.0 - beta / nf;
    Ok((nl.scaled(1.0 / (nf.powf(beta) * a.powi(n as i32)))?, a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularOutcome {
    pub gamma: f64,
    pub beta: f64,
    pub rescale: f64,
    #[serde(rename = "T_reduced")]
    pub t_reduced: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub lambda: f64,
}

/// First zero of the weighted problem via the reduction.
pub fn shoot_singular(
    nl: &Nonlinearity,
    cfg: &ProblemConfig,
    gamma: f64,
) -> Result<SingularOutcome> {
    let (reduced, a) = singular_reduce(nl, cfg.n, cfg.beta)?;
    let p = Problem::new(
        reduced,
        ProblemConfig {
            beta: 0.0,
            ..cfg.clone()
        },
    )?;
    let o = shoot(&p, gamma)?;
    let nf = cfg.n as f64;
    let t = o.t / a;
    let r = nf * (-t / nf).exp();
    Ok(SingularOutcome {
        gamma,
        beta: cfg.beta,
        rescale: a,
        t_reduced: o.t,
        t,
        r,
        lambda: r.powi(cfg.n as i32),
    })
}

/// First zero of the weighted problem by direct integration in `r`.
pub fn shoot_singular_direct(nl: &Nonlinearity, cfg: &ProblemConfig, gamma: f64) -> Result<f64> {
    let p = Problem::new(nl.clone(), cfg.clone())?;
    Ok(ode::integrate_r(&p, gamma, StopRule::FirstZero)?.end().0)
}

/// Samples `(|ξ|, u(|ξ|))` of the unit-ball solution `u(ξ) = w(R|ξ|)` at
/// `resolution` evenly spaced radii in `[0, 1]`.
pub fn export_profile(p: &Problem, shot: &Shot, resolution: usize) -> Result<Vec<(f64, f64)>> {
    if resolution < 2 {
        return Err(Error::Invalid("resolution must be at least 2".into()));
    }
    let o = &shot.outcome;
    let tr = &shot.trajectory;
    let nf = p.n() as f64;
    let m = nf - 1.0;
    let gamma = o.gamma;
    let x_start = tr.start.x;
    let first = tr.start.state[0];
    let snap = match tr.start.kind {
        StartKind::Tail { .. } => Some(GammaSnapshot::new(&p.nl, p.n(), gamma)?),
        StartKind::Radial { .. } => None,
    };
    let mut out = Vec::with_capacity(resolution);
    for i in 0..resolution {
        let xi = i as f64 / (resolution - 1) as f64;
        let u = if i == 0 {
            gamma
        } else if i + 1 == resolution {
            tr.end().1[0]
        } else {
            let r = o.r * xi;
            let x = match tr.variable {
                Variable::R => r,
                Variable::T => -nf * (r / nf).ln(),
            };
            let beyond = match tr.variable {
                Variable::R => x < x_start,
                Variable::T => x > x_start,
            };
            if !beyond {
                tr.state_at(x)
                    .map(|s| s[0])
                    .ok_or_else(|| Error::Invalid(format!("profile point {x} off trajectory")))?
            } else if let Some(s) = &snap {
                // scale the comparison profile to meet the start value
                let share = (gamma - s.z(x)) / (gamma - s.z(x_start));
                gamma - (gamma - first) * share
            } else {
                // leading-order series: γ - w ∝ r^{(n-β)/(n-1)}
                let r_start = match tr.variable {
                    Variable::R => x_start,
                    Variable::T => nf * (-x_start / nf).exp(),
                };
                let k = (nf - tr.beta) / m;
                gamma - (gamma - first) * (r / r_start).powf(k)
            }
        };
        out.push((xi, u));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const J01: f64 = 2.404825557695773;

    fn problem(nl: Nonlinearity, n: u32) -> Problem {
        Problem::new(nl, ProblemConfig::with_n(n)).unwrap()
    }

    fn liouville_r(gamma: f64) -> f64 {
        (8.0 * ((gamma / 2.0f64).exp() - 1.0) * (-gamma).exp()).sqrt()
    }

    #[test]
    fn shoot_examples() {
        let p = problem(Nonlinearity::linear(1.0).unwrap(), 2);
        let o = shoot(&p, 1.0).unwrap();
        assert!((o.r - J01).abs() < 1e-6);
        assert_eq!(o.r, 2.0 * (-o.t / 2.0).exp());
        assert_eq!(o.lambda_of_gamma, o.r * o.r);
        assert!(!o.flags.is_empty());

        let p = problem(Nonlinearity::exp(1.0).unwrap(), 2);
        assert_relative_eq!(
            shoot(&p, 3.0).unwrap().r,
            liouville_r(3.0),
            max_relative = 1e-6
        );

        let p = problem(Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap(), 2);
        let o = shoot(&p, 4.0).unwrap();
        let pred = crate::asymptotics::predict_all(&GammaSnapshot::new(&p.nl, 2, 4.0).unwrap())
            .yprime_t_pred;
        assert!(
            (o.yprime_t - pred).abs() <= 0.25 * pred,
            "{} vs {pred}",
            o.yprime_t
        );
        assert!(o.t_tilde.is_some());
    }

    #[test]
    fn single_point_sweep_matches_shoot() {
        let p = problem(Nonlinearity::exp(1.0).unwrap(), 2);
        let c = sweep(&p, &[2.0], false).unwrap();
        assert_eq!(c.rows.len(), 1);
        let o = shoot(&p, 2.0).unwrap();
        assert_eq!(c.rows[0].t, o.t);
        assert_eq!(c.rows[0].r, o.r);
    }

    #[test]
    fn sweep_is_ordered_and_collects_errors() {
        let p = problem(Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap(), 2);
        let grid = log_grid(0.5, 30.0, 6).unwrap();
        let c = sweep(&p, &grid, false).unwrap();
        // γ = 30 exceeds nothing on the tail path, so every row succeeds
        assert!(c.rows.windows(2).all(|w| w[1].gamma > w[0].gamma));
        assert_eq!(c.rows.len() + c.errors.len(), grid.len());
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("gamma,T,R,lambda,yprime_T\n"));
    }

    #[test]
    fn linear_invariance() {
        let p = problem(Nonlinearity::linear(1.0).unwrap(), 2);
        let c = sweep(&p, &[0.1, 0.7, 3.0, 20.0], false).unwrap();
        let r0 = c.rows[0].r;
        assert!(c.rows.iter().all(|r| (r.r - r0).abs() < 1e-8));
    }

    #[test]
    fn singular_reduce_examples() {
        let nl = Nonlinearity::exp(1.0).unwrap();
        let (same, a) = singular_reduce(&nl, 2, 0.0).unwrap();
        assert_eq!((same, a), (nl.clone(), 1.0));
        let (red, a) = singular_reduce(&nl, 2, 1.0).unwrap();
        assert_eq!(a, 0.5);
        assert_relative_eq!(red.lambda, 2.0, max_relative = 1e-15);
        assert!(matches!(
            singular_reduce(&nl, 2, 2.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn singular_reduction_matches_direct() {
        let nl = Nonlinearity::exp(1.0).unwrap();
        let cfg = ProblemConfig {
            beta: 1.0,
            ..ProblemConfig::with_n(2)
        };
        for gamma in [0.5, 1.0, 2.0] {
            let red = shoot_singular(&nl, &cfg, gamma).unwrap();
            let direct = shoot_singular_direct(&nl, &cfg, gamma).unwrap();
            assert_relative_eq!(red.r, direct, max_relative = 1e-7);
        }
    }

    #[test]
    fn profile_endpoints_and_liouville_midpoint() {
        let p = problem(Nonlinearity::exp(1.0).unwrap(), 2);
        let shot = shoot_with_trajectory(&p, 2.0).unwrap();
        let prof = export_profile(&p, &shot, 11).unwrap();
        assert_eq!(prof[0], (0.0, 2.0));
        assert!(prof[10].1.abs() <= 1e-10);
        let mu = 2f64.exp() / 8.0;
        let r = shot.outcome.r;
        let exact = (8.0 * mu / (1.0 + mu * (r / 2.0).powi(2)).powi(2)).ln();
        assert_relative_eq!(prof[5].1, exact, max_relative = 1e-7);
        // tail-started profile is monotone and meets the data
        let p = problem(Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap(), 2);
        let shot = shoot_with_trajectory(&p, 4.0).unwrap();
        let prof = export_profile(&p, &shot, 50).unwrap();
        assert!(prof.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(prof[49].1.abs() <= 1e-10);
    }

    #[test]
    fn regimes() {
        let grid = [1e-1, 1e-2, 1e-3, 1e-4];
        for (pp, want) in [
            (0.3, RegimeLabel::DivergesUp),
            (1.0, RegimeLabel::Bounded),
            (2.0, RegimeLabel::DivergesDown),
        ] {
            let p = problem(Nonlinearity::pow_exp(1.0, pp, 1.0, 2.0).unwrap(), 2);
            let r = classify_small_gamma(&p, &grid, None).unwrap();
            assert_eq!(r.label, want, "p = {pp}: {r:?}");
            assert_eq!(r.expected, want);
            assert!((r.p - pp).abs() < 1e-3);
        }
    }
}
