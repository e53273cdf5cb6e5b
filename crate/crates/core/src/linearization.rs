//! The linearised flow `V₁ = ∂y/∂γ`, the derivative of the shooting map
//! and the turning point of `V₁`.

use std::io::Write;

use serde::Serialize;

use crate::asymptotics::GammaSnapshot;
use crate::config::Problem;
use crate::error::{Error, Result};
use crate::ode::{self, rhs_t, LinTrajectory, StopRule};
use crate::quadrature::{self, QuadOptions};

/// Below this `y'(T)` the derivative of the shooting map is not formed.
pub const DEGENERATE_SLOPE: f64 = 1e-14;

/// `|V₁(T)|` must exceed this multiple of `max(1, max |V₁|)` for a
/// nondegenerate verdict.
pub const NONDEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct V1Solution {
    pub traj: LinTrajectory,
    pub gamma: f64,
    pub t: f64,
    pub yprime_t: f64,
    pub v1_at_t: f64,
    pub v1prime_at_t: f64,
}

/// Integrates `(y, ψ, V₁, φ)` to the first zero of `y`.
pub fn solve_v1(p: &Problem, gamma: f64) -> Result<V1Solution> {
    let start = ode::default_start_t(p, gamma)?;
    let traj: LinTrajectory = ode::integrate_t(p, gamma, &start, StopRule::FirstZero)?;
    let (t, s) = traj.end();
    let yprime_t = traj.slope(t, &s);
    Ok(V1Solution {
        gamma,
        t,
        yprime_t,
        v1_at_t: s[2],
        v1prime_at_t: v1_prime(p.n(), &s),
        traj,
    })
}

fn v1_prime(n: u32, s: &[f64; 4]) -> f64 {
    if n == 2 {
        s[3]
    } else {
        let m = n as f64 - 1.0;
        s[3] / s[1].max(ode::PSI_FLOOR).powf((m - 1.0) / m)
    }
}

/// `T'(γ) = -V₁(T)/y'(T)`.
pub fn t_prime(yprime_t: f64, v1_at_t: f64) -> Result<f64> {
    if !(yprime_t.abs() >= DEGENERATE_SLOPE) {
        return Err(Error::Degenerate(yprime_t));
    }
    Ok(-v1_at_t / yprime_t)
}

/// Closed-form `V₂` of the comparison problem at `t`.
pub fn v2_eval(snap: &GammaSnapshot, t: f64) -> (f64, f64, f64) {
    snap.v2(t)
}

impl V1Solution {
    /// CSV export `t,y,yprime,V1,V1prime`, one row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,y,yprime,V1,V1prime")?;
        let n = self.traj.n;
        for (t, s) in self.traj.samples() {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e}",
                t,
                s[0],
                self.traj.slope(t, &s),
                s[2],
                v1_prime(n, &s)
            )?;
        }
        Ok(())
    }

    pub fn t_prime(&self) -> Result<f64> {
        t_prime(self.yprime_t, self.v1_at_t)
    }

    /// Largest `|V₁|` over the accepted samples.
    pub fn v1_max_abs(&self) -> f64 {
        self.traj
            .samples()
            .iter()
            .map(|s| s.1[2].abs())
            .fold(0.0, f64::max)
    }

    pub fn nondegeneracy(&self) -> Nondegeneracy {
        nondegeneracy(self.v1_at_t, NONDEGENERACY_TOL * self.v1_max_abs().max(1.0))
    }
}

/// First sign change of `f` along the grid (in grid order), refined by
/// bisection to `tol`.
pub fn first_crossing(f: impl Fn(f64) -> Option<f64>, grid: &[f64], tol: f64) -> Option<f64> {
    let mut prev = (grid[0], f(grid[0])?);
    for &x in &grid[1..] {
        let v = f(x)?;
        if (v > 0.0) != (prev.1 > 0.0) {
            let positive = prev.1 > 0.0;
            let (mut a, mut b) = (prev.0, x);
            for _ in 0..200 {
                if (b - a).abs() <= tol {
                    break;
                }
                let mid = 0.5 * (a + b);
                if (f(mid)? > 0.0) == positive {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = (x, v);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurningReport {
    /// Largest `t` below the start where `V₁' = 0`.
    #[serde(rename = "S")]
    pub s: Option<f64>,
    /// Largest `t` below the start where `V₁ = 0`.
    #[serde(rename = "S1")]
    pub s1: Option<f64>,
    #[serde(rename = "S_predicted")]
    pub s_predicted: Option<f64>,
    /// `V₂'` of the comparison problem at `S`.
    #[serde(rename = "V2prime_at_S")]
    pub v2prime_at_s: Option<f64>,
    /// `(n/(n-1)) g''/g'²`, the size `V₂'(S)` is compared with.
    #[serde(rename = "V2prime_reference")]
    pub v2prime_reference: Option<f64>,
    #[serde(rename = "S6")]
    pub s6: Option<f64>,
    /// Whether `S` lies at or above `S₆`.
    #[serde(rename = "S_above_S6")]
    pub s_above_s6: Option<bool>,
}

/// Locates `S₁` (zero of `V₁`) and `S` (zero of `φ`, i.e. of `V₁'`)
/// along a linearised trajectory. `q` is used for `S₆` when given.
pub fn detect_turning(p: &Problem, sol: &V1Solution, q: Option<f64>) -> TurningReport {
    let tr = &sol.traj;
    let grid: Vec<f64> = tr.samples().iter().map(|s| s.0).collect();
    let tol = p.cfg.event_tol;
    let s1 = first_crossing(|t| tr.state_at(t).map(|s| s[2]), &grid, tol);
    let s = first_crossing(|t| tr.state_at(t).map(|s| s[3]), &grid, tol);
    let snap = GammaSnapshot::new(&p.nl, p.n(), sol.gamma)
        .ok()
        .filter(|sn| sn.gp > 1.0 && sn.gpp > 0.0);
    let nf = p.n() as f64;
    let m = nf - 1.0;
    let s_predicted = snap.map(|sn| crate::asymptotics::predict_all(&sn).s_pred);
    let v2prime_at_s = snap.zip(s).map(|(sn, s)| sn.v2(s).1);
    let v2prime_reference = snap.map(|sn| nf / m * sn.gpp / (sn.gp * sn.gp));
    let s6 = snap.zip(q.filter(|&q| q > 1.0)).map(|(sn, q)| sn.s6(q));
    let s_above_s6 = s.zip(s6).map(|(s, s6)| s >= s6);
    TurningReport {
        s,
        s1,
        s_predicted,
        v2prime_at_s,
        v2prime_reference,
        s6,
        s_above_s6,
    }
}

/// The detector run on the closed-form `V₂` over `[t_lo, t_hi]`, sampled
/// on `points` uniform nodes. Returns `(S₁, S)` analogues.
pub fn detect_turning_closed_form(
    snap: &GammaSnapshot,
    t_hi: f64,
    t_lo: f64,
    points: usize,
) -> (Option<f64>, Option<f64>) {
    let k = points.max(2);
    let grid: Vec<f64> = (0..k)
        .map(|i| t_hi + (t_lo - t_hi) * i as f64 / (k - 1) as f64)
        .collect();
    let s1 = first_crossing(|t| Some(snap.v2(t).0), &grid, 1e-13);
    let s = first_crossing(|t| Some(snap.v2(t).1), &grid, 1e-13);
    (s1, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma46Report {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "J_a")]
    pub j_a: f64,
    #[serde(rename = "J_b")]
    pub j_b: f64,
    pub integral_1: f64,
    pub integral_2: f64,
    /// `|J(a) - J(b) - I₁ - I₂|` divided by the largest of the four terms.
    pub residual: f64,
}

struct Pointwise {
    yp: f64,
    v1p: f64,
    g: [f64; 4],
    src: f64,
    state: [f64; 4],
}

fn pointwise(p: &Problem, sol: &V1Solution, t: f64) -> Result<Pointwise> {
    let s = sol
        .traj
        .state_at(t)
        .ok_or_else(|| Error::Invalid(format!("t = {t} is off the trajectory")))?;
    let g = p.nl.g_derivs(s[0])?;
    Ok(Pointwise {
        yp: sol.traj.slope(t, &s),
        v1p: v1_prime(p.n(), &s),
        g,
        src: p.nl.source(s[0], t),
        state: s,
    })
}

/// `J = (1 - g'y' - (g''/g')y') P + P'` with `P = (y')^{n-2} V₁'`.
pub fn lemma46_j(p: &Problem, sol: &V1Solution, t: f64) -> Result<f64> {
    let q = pointwise(p, sol, t)?;
    let [_, g1, g2, _] = q.g;
    let dp = rhs_t(&p.nl, p.n(), t, &q.state)[3];
    Ok((1.0 - g1 * q.yp - g2 / g1 * q.yp) * q.state[3] + dp)
}

/// Checks `J(a) = J(b) + ∫_a^b (g''/g') y'' y'^{n-2} V₁' + ∫_a^b (g'' + g'''/g' - (g''/g')²) y'^n V₁'`
/// on the computed trajectory.
pub fn lemma46_residual(p: &Problem, sol: &V1Solution, a: f64, b: f64) -> Result<Lemma46Report> {
    if !(a < b) {
        return Err(Error::Invalid(format!("need a < b, got [{a}, {b}]")));
    }
    let tr = &sol.traj;
    let (lo, hi) = (tr.end().0.min(tr.start.x), tr.end().0.max(tr.start.x));
    if a < lo || b > hi {
        return Err(Error::Invalid(format!(
            "[{a}, {b}] is not inside the trajectory [{lo}, {hi}]"
        )));
    }
    let m = p.n() as f64 - 1.0;
    let n = p.n() as i32;
    let i1 = |t: f64| -> Result<f64> {
        let q = pointwise(p, sol, t)?;
        let [_, g1, g2, _] = q.g;
        // y'' y'^{n-2} = -f(y) e^{-t}/(n-1)
        Ok(g2 / g1 * (-q.src / m) * q.v1p)
    };
    let i2 = |t: f64| -> Result<f64> {
        let q = pointwise(p, sol, t)?;
        let [_, g1, g2, g3] = q.g;
        Ok((g2 + g3 / g1 - (g2 / g1).powi(2)) * q.yp.powi(n) * q.v1p)
    };
    let int1 = piecewise(sol, a, b, i1)?;
    let int2 = piecewise(sol, a, b, i2)?;
    let j_a = lemma46_j(p, sol, a)?;
    let j_b = lemma46_j(p, sol, b)?;
    let scale = j_a
        .abs()
        .max(j_b.abs())
        .max(int1.abs())
        .max(int2.abs())
        .max(f64::MIN_POSITIVE);
    let residual = (j_a - j_b - int1 - int2).abs() / scale;
    Ok(Lemma46Report {
        a,
        b,
        j_a,
        j_b,
        integral_1: int1,
        integral_2: int2,
        residual,
    })
}

/// `∫_a^b h` taken step by step over the dense output.
fn piecewise(sol: &V1Solution, a: f64, b: f64, h: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let opts = QuadOptions {
        rel_tol: 1e-13,
        abs_tol: 1e-300,
        max_intervals: 200,
    };
    let mut total = 0.0;
    let mut err = None;
    for st in &sol.traj.sol.steps {
        let (x0, x1) = (st.x0.min(st.x1()), st.x0.max(st.x1()));
        let (lo, hi) = (x0.max(a), x1.min(b));
        if lo >= hi {
            continue;
        }
        let q = quadrature::integrate(
            |t| match h(t) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            lo,
            hi,
            &opts,
        )?;
        total += q.value;
    }
    match err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Nondegeneracy {
    #[serde(rename = "V1_T")]
    pub v1_at_t: f64,
    pub tol: f64,
    pub nondegenerate: bool,
    /// `|V₁(T)| / tol`.
    pub margin: f64,
}

/// A solution is nondegenerate when `|V₁(T)| > tol`.
pub fn nondegeneracy(v1_at_t: f64, tol: f64) -> Nondegeneracy {
    Nondegeneracy {
        v1_at_t,
        tol,
        nondegenerate: v1_at_t.abs() > tol,
        margin: v1_at_t.abs() / tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemConfig;
    use crate::nonlinearity::Nonlinearity;
    use crate::shooting;

    fn problem(nl: Nonlinearity, n: u32) -> Problem {
        Problem::new(nl, ProblemConfig::with_n(n)).unwrap()
    }

    #[test]
    fn bessel_is_degenerate() {
        let p = problem(Nonlinearity::linear(1.0).unwrap(), 2);
        let s = solve_v1(&p, 1.0).unwrap();
        assert!(s.v1_at_t.abs() < 1e-6, "{}", s.v1_at_t);
        assert!(!s.nondegeneracy().nondegenerate);
        let p = problem(Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap(), 2);
        let s = solve_v1(&p, 4.0).unwrap();
        assert!(s.v1_at_t < 0.0 && s.nondegeneracy().nondegenerate);
        assert!(nondegeneracy(1.0, 1e-8).nondegenerate);
    }

    #[test]
    fn degenerate_slope_guard() {
        assert!(matches!(t_prime(1e-15, 1.0), Err(Error::Degenerate(_))));
        assert_eq!(t_prime(2.0, -1.0).unwrap(), 0.5);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let p = problem(Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap(), 2);
        for gamma in [0.8, 3.0, 6.0] {
            let s = solve_v1(&p, gamma).unwrap();
            let tp = s.t_prime().unwrap();
            let fd = shooting::t_prime_fd(&p, gamma).unwrap();
            assert!(
                (tp - fd).abs() <= 1e-3 * fd.abs().max(1e-3),
                "gamma={gamma}: {tp} vs {fd}"
            );
        }
    }

    #[test]
    fn closed_form_turning() {
        let nl = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap();
        for n in [2u32, 3] {
            let snap = GammaSnapshot::new(&nl, n, 6.0).unwrap();
            let (s1, s) = detect_turning_closed_form(&snap, snap.t1 + 40.0, snap.t1 - 40.0, 801);
            assert!((s1.unwrap() - snap.s0()).abs() < 1e-10);
            // V₂' is positive throughout
            assert!(s.is_none());
        }
    }

    #[test]
    fn turning_order_and_identity() {
        let p = problem(
            Nonlinearity::pow_exp_lin(1.0, 1.0, 1.0, 1.5, 1.0).unwrap(),
            2,
        );
        for gamma in [3.0, 5.0, 8.0] {
            let s = solve_v1(&p, gamma).unwrap();
            let rep = detect_turning(&p, &s, Some(1.5));
            if let (Some(a), Some(b)) = (rep.s, rep.s1) {
                assert!(a <= b);
            }
            let tt = shooting::shoot(&p, gamma).unwrap().t_tilde.unwrap();
            let r = lemma46_residual(&p, &s, tt, s.traj.start.x).unwrap();
            assert!(r.residual < 1e-6, "gamma={gamma}: {r:?}");
        }
    }

    #[test]
    fn v1_csv_header() {
        let p = problem(Nonlinearity::exp(1.0).unwrap(), 2);
        let s = solve_v1(&p, 2.0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t,y,yprime,V1,V1prime\n"));
    }
}
