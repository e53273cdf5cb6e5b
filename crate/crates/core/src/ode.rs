//! The radial problem in flux form, in the log-radius variable `t` and in
//! the radius `r`.
//!
//! In `t` (with `r = n e^{-t/n}`) the state is `(y, ψ)` with
//! `ψ = (y')^{n-1}`:
//!
//! ```text
//! y' = ψ^{1/(n-1)},   ψ' = -f(y) e^{-t}
//! ```
//!
//! integrated from a large `t` downwards. The linearised channel adds
//! `(V₁, φ)` with `φ = (y')^{n-2} V₁'`:
//!
//! ```text
//! V₁' = φ / ψ^{(n-2)/(n-1)},   φ' = -f'(y) V₁ e^{-t}/(n-1)
//! ```
//!
//! In `r` the state is `(w, Φ)` with `Φ = r^{n-1}|w'|^{n-2}w'`, integrated
//! outwards from a series start near the origin.

use std::io::Write;

use serde::Serialize;

use crate::asymptotics::GammaSnapshot;
use crate::config::Problem;
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::quadrature::{self, QuadOptions};
use crate::rk::{self, Options, Solution};

/// Smallest flux used when dividing by `ψ^{(n-2)/(n-1)}`.
pub const PSI_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    T,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    FirstZero,
    TFloor,
    YReaches(f64),
}

/// How an integration was initialised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartKind {
    /// Comparison-profile start at `T₁ + c (n-1) log g'`.
    Tail {
        c_tail: f64,
        picard_delta: Option<f64>,
    },
    /// Series start at radius `r0`.
    Radial { r0: f64 },
}

/// Initial point of an integration in `t` (or `r`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Start<const N: usize> {
    pub x: f64,
    pub state: [f64; N],
    pub kind: StartKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub variable: Variable,
    pub n: u32,
    pub gamma: f64,
    pub start: Start<N>,
    pub sol: Solution<N>,
    pub beta: f64,
}

impl<const N: usize> Trajectory<N> {
    /// Accepted step endpoints, from the start to the last point reached
    /// (the event, if one fired).
    pub fn samples(&self) -> Vec<(f64, [f64; N])> {
        let mut out = Vec::with_capacity(self.sol.steps.len() + 1);
        out.push((self.start.x, self.start.state));
        let k = self.sol.steps.len();
        for (i, s) in self.sol.steps.iter().enumerate() {
            if i + 1 == k {
                if let Some(e) = &self.sol.event {
                    out.push((e.x, e.y));
                    break;
                }
            }
            out.push((s.x1(), s.y1));
        }
        out
    }

    pub fn first_zero(&self) -> Option<f64> {
        self.sol.event.map(|e| e.x)
    }

    pub fn end(&self) -> (f64, [f64; N]) {
        match self.sol.event {
            Some(e) => (e.x, e.y),
            None => self
                .sol
                .steps
                .last()
                .map_or((self.start.x, self.start.state), |s| (s.x1(), s.y1)),
        }
    }

    pub fn state_at(&self, x: f64) -> Option<[f64; N]> {
        self.sol.eval(x)
    }

    pub fn steps(&self) -> usize {
        self.sol.steps.len()
    }

    /// `y'` (or `w'`) recovered from the flux at a state.
    pub fn slope(&self, x: f64, state: &[f64; N]) -> f64 {
        let m = self.n as f64 - 1.0;
        match self.variable {
            Variable::T => state[1].max(0.0).powf(1.0 / m),
            Variable::R => {
                let phi = state[1];
                if x <= 0.0 {
                    0.0
                } else {
                    phi.signum() * (phi.abs() / x.powf(m)).powf(1.0 / m)
                }
            }
        }
    }

    /// CSV export, `t,y,yprime,psi` or `r,w,wprime,Phi`, one row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.variable {
            Variable::T => writeln!(w, "t,y,yprime,psi")?,
            Variable::R => writeln!(w, "r,w,wprime,Phi")?,
        }
        for (x, s) in self.samples() {
            writeln!(w, "{:e},{:e},{:e},{:e}", x, s[0], self.slope(x, &s), s[1])?;
        }
        Ok(())
    }
}

/// `(y, ψ)` trajectory.
pub type FlowTrajectory = Trajectory<2>;
/// `(y, ψ, V₁, φ)` trajectory.
pub type LinTrajectory = Trajectory<4>;

fn options<const N: usize>(p: &Problem, flux_index: usize) -> Options<N> {
    let mut o = Options::new(p.cfg.rtol, p.cfg.atol);
    // the flux is one-signed and spans many decades: control it relatively
    o.atol[flux_index] = 1e-300;
    o.max_steps = p.cfg.max_steps;
    o.event_tol = p.cfg.event_tol;
    o
}

/// Right-hand side in `t`; `N = 2` for the flow, `N = 4` with the
/// linearised channel.
pub fn rhs_t<const N: usize>(nl: &Nonlinearity, n: u32, t: f64, s: &[f64; N]) -> [f64; N] {
    let m = n as f64 - 1.0;
    let psi = s[1].max(0.0);
    let mut d = [0.0; N];
    d[0] = if n == 2 { psi } else { psi.powf(1.0 / m) };
    d[1] = -nl.source(s[0], t);
    if N == 4 {
        d[2] = if n == 2 {
            s[3]
        } else {
            s[3] / psi.max(PSI_FLOOR).powf((m - 1.0) / m)
        };
        d[3] = -nl.source_derivative(s[0], t) * s[2] / m;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailStart {
    pub t: f64,
    pub y: f64,
    pub psi: f64,
    pub v1: f64,
    pub phi: f64,
    pub c_tail: f64,
    /// `|y_refined - z(t_start)|` when the Picard refinement ran.
    pub picard_delta: Option<f64>,
}

/// Start on the comparison profile `z` at `t = T₁ + c (n-1) log g'(γ)`.
///
/// `V₁` and `φ` are initialised from the comparison linearisation
/// `V₂ = 1 - g' z'`. With `picard`, `(y, ψ)` are replaced by one Picard
/// iterate of the integral equations using `z` as the previous iterate.
pub fn tail_start(p: &Problem, gamma: f64, c_tail: f64, picard: bool) -> Result<TailStart> {
    let n = p.n();
    let s0 = p
        .s0()
        .ok_or_else(|| Error::TailInvalid("g is never convex on the scan".into()))?;
    if gamma <= s0 {
        return Err(Error::TailInvalid(format!("gamma = {gamma} <= s0 = {s0}")));
    }
    let snap = GammaSnapshot::new(&p.nl, n, gamma)?;
    if !(snap.gp > 1.0) {
        return Err(Error::TailInvalid(format!("g'(gamma) = {} <= 1", snap.gp)));
    }
    let m = n as f64 - 1.0;
    let t = snap.t1 + c_tail * m * snap.delta;
    let (z, zp, _) = snap.z_derivs(t);
    let (v2, v2p, _) = snap.v2(t);
    let mut st = TailStart {
        t,
        y: z,
        psi: zp.powf(m),
        v1: v2,
        phi: zp.powf(m - 1.0) * v2p,
        c_tail,
        picard_delta: None,
    };
    if picard {
        let (y, psi) = picard_refine(&p.nl, &snap, t)?;
        st.picard_delta = Some((y - z).abs());
        st.y = y;
        st.psi = psi;
    }
    Ok(st)
}

fn picard_refine(nl: &Nonlinearity, snap: &GammaSnapshot, t_start: f64) -> Result<(f64, f64)> {
    let m = snap.n as f64 - 1.0;
    let t_end = t_start + 40.0 * m;
    let opts = QuadOptions {
        rel_tol: 1e-13,
        ..QuadOptions::default()
    };
    let inner = |theta: f64| -> Result<f64> {
        Ok(quadrature::integrate(|s| nl.source(snap.z(s), s), theta, t_end, &opts)?.value)
    };
    let psi = inner(t_start)?;
    let mut err = None;
    let drop = quadrature::integrate(
        |theta| match inner(theta) {
            Ok(v) => v.max(0.0).powf(1.0 / m),
            Err(e) => {
                err = Some(e);
                0.0
            }
        },
        t_start,
        t_end,
        &QuadOptions {
            rel_tol: 1e-11,
            ..QuadOptions::default()
        },
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok((snap.gamma - drop.value, psi))
}

/// Series start radius: the smaller of `1e-3`,
/// `(tol·n/f(γ))^{(n-1)/n}` and the radius at which the leading-order drop
/// `γ - w(r)` reaches `√tol · min(γ, f/|f'|)`.
pub fn series_radius(p: &Problem, gamma: f64) -> Result<f64> {
    let nf = p.n() as f64;
    let m = nf - 1.0;
    let nb = nf - p.cfg.beta;
    let log_f = p.nl.log_f(gamma)?;
    if log_f > p.cfg.exponent_cap {
        return Err(Error::Range {
            exponent: log_f,
            cap: p.cfg.exponent_cap,
        });
    }
    let tol = p.cfg.rtol;
    let log_r_spec = (m / nf) * ((tol * nf).ln() - log_f);
    // drop(r) = K r^{nb/m}, K = (m/nb)(f/nb)^{1/m}
    let g1 = p.nl.eval_g(gamma, 1)?.abs();
    let scale = if g1 > 0.0 { gamma.min(1.0 / g1) } else { gamma };
    let log_k = (m / nb).ln() + (log_f - nb.ln()) / m;
    let log_r_drop = (m / nb) * (tol.sqrt().ln() + scale.ln() - log_k);
    Ok((1e-3f64).ln().min(log_r_spec).min(log_r_drop).exp())
}

/// Series start in `t` for the flow and its linearisation.
pub fn radial_start_t(p: &Problem, gamma: f64) -> Result<Start<4>> {
    if p.cfg.beta != 0.0 {
        return Err(Error::Invalid(
            "t-variable integration requires beta = 0; reduce first".into(),
        ));
    }
    let nf = p.n() as f64;
    let m = nf - 1.0;
    let r0 = series_radius(p, gamma)?;
    let t0 = -nf * (r0 / nf).ln();
    let log_f = p.nl.log_f(gamma)?;
    let g1 = p.nl.eval_g(gamma, 1)?;
    // y = γ - (n-1) f^{1/(n-1)} e^{-t/(n-1)}, ψ = f e^{-t}
    let a = (log_f / m - t0 / m).exp();
    let y = gamma - m * a;
    let psi = (log_f - t0).exp();
    // V₁ = 1 - f' f^{(2-n)/(n-1)} e^{-t/(n-1)} = 1 - g' a, φ = f' e^{-t}/(n-1)
    let v1 = 1.0 - g1 * a;
    let phi = g1 * psi / m;
    Ok(Start {
        x: t0,
        state: [y, psi, v1, phi],
        kind: StartKind::Radial { r0 },
    })
}

/// Tail start packed as an integration start.
///
/// `c_tail` is raised where needed so that `g'(γ)^{-c} ≤ √rtol`; with
/// `g'` close to 1 the configured value alone leaves an `O(1e-6)` error.
pub fn tail_start_state(p: &Problem, gamma: f64) -> Result<Start<4>> {
    let ts = tail_start(p, gamma, effective_tail_c(p, gamma)?, p.cfg.picard)?;
    Ok(Start {
        x: ts.t,
        state: [ts.y, ts.psi, ts.v1, ts.phi],
        kind: StartKind::Tail {
            c_tail: ts.c_tail,
            picard_delta: ts.picard_delta,
        },
    })
}

pub fn effective_tail_c(p: &Problem, gamma: f64) -> Result<f64> {
    let g1 = p.nl.eval_g(gamma, 1)?;
    if !(g1 > 1.0) {
        return Ok(p.cfg.tail_c);
    }
    Ok(p.cfg.tail_c.max(-0.5 * p.cfg.rtol.ln() / g1.ln()))
}

/// Tail start when admissible, otherwise the series start.
pub fn default_start_t(p: &Problem, gamma: f64) -> Result<Start<4>> {
    if p.uses_radial_start(gamma) {
        radial_start_t(p, gamma)
    } else {
        tail_start_state(p, gamma)
    }
}

fn truncate<const N: usize>(s: &Start<4>) -> Start<N> {
    Start {
        x: s.x,
        state: std::array::from_fn(|i| s.state[i]),
        kind: s.kind,
    }
}

/// Integrates in `t` downwards from `start` until `stop`.
pub fn integrate_t<const N: usize>(
    p: &Problem,
    gamma: f64,
    start: &Start<4>,
    stop: StopRule,
) -> Result<Trajectory<N>> {
    if !(start.state[1] >= 0.0) {
        return Err(Error::Invalid(format!(
            "start flux {} is negative",
            start.state[1]
        )));
    }
    if !(start.state[0] > 0.0) {
        return Err(Error::Invalid(format!(
            "start value y = {} is not positive",
            start.state[0]
        )));
    }
    let n = p.n();
    let nl = &p.nl;
    let start: Start<N> = truncate(start);
    let opts = options::<N>(p, 1);
    let rhs = |t: f64, s: &[f64; N]| rhs_t(nl, n, t, s);
    let target = match stop {
        StopRule::FirstZero => Some(0.0),
        StopRule::YReaches(v) => Some(v),
        StopRule::TFloor => None,
    };
    if p.cfg.t_floor >= start.x {
        return Err(Error::Invalid(format!(
            "t_floor {} is above the start {}",
            p.cfg.t_floor, start.x
        )));
    }
    let sol = match target {
        Some(v) => rk::integrate(
            rhs,
            start.x,
            start.state,
            p.cfg.t_floor,
            &opts,
            Some(move |_t: f64, s: &[f64; N]| s[0] - v),
        )?,
        None => rk::integrate(
            rhs,
            start.x,
            start.state,
            p.cfg.t_floor,
            &opts,
            None::<fn(f64, &[f64; N]) -> f64>,
        )?,
    };
    if target.is_some() && sol.event.is_none() {
        return Err(Error::NoZero {
            floor: p.cfg.t_floor,
        });
    }
    Ok(Trajectory {
        variable: Variable::T,
        n,
        gamma,
        start,
        sol,
        beta: 0.0,
    })
}

/// Integrates in `r` outwards from the series start, with the weight
/// `r^{n-1-β}` on the source.
pub fn integrate_r(p: &Problem, gamma: f64, stop: StopRule) -> Result<FlowTrajectory> {
    if !(gamma > 0.0) {
        return Err(Error::Invalid(format!("gamma = {gamma} must be positive")));
    }
    let n = p.n();
    let nf = n as f64;
    let m = nf - 1.0;
    let beta = p.cfg.beta;
    let nb = nf - beta;
    let r0 = series_radius(p, gamma)?;
    let log_f = p.nl.log_f(gamma)?;
    let w0 = gamma - (m / nb) * ((log_f - nb.ln()) / m + (nb / m) * r0.ln()).exp();
    let phi0 = -(log_f + nb * r0.ln() - nb.ln()).exp();
    let nl = &p.nl;
    let rhs = move |r: f64, s: &[f64; 2]| -> [f64; 2] {
        let phi = s[1];
        let dw = if n == 2 {
            phi / r
        } else {
            phi.signum() * (phi.abs() / r.powf(m)).powf(1.0 / m)
        };
        let weight = if beta == 0.0 {
            r.powf(m)
        } else {
            r.powf(m - beta)
        };
        [dw, -nl.source(s[0], 0.0) * weight]
    };
    let r_max = nf * (-p.cfg.t_floor / nf).exp();
    let opts = options::<2>(p, 1);
    let target = match stop {
        StopRule::FirstZero => Some(0.0),
        StopRule::YReaches(v) => Some(v),
        StopRule::TFloor => None,
    };
    let start = Start {
        x: r0,
        state: [w0, phi0],
        kind: StartKind::Radial { r0 },
    };
    let sol = match target {
        Some(v) => rk::integrate(
            rhs,
            r0,
            start.state,
            r_max,
            &opts,
            Some(move |_r: f64, s: &[f64; 2]| s[0] - v),
        )?,
        None => rk::integrate(
            rhs,
            r0,
            start.state,
            r_max,
            &opts,
            None::<fn(f64, &[f64; 2]) -> f64>,
        )?,
    };
    if target.is_some() && sol.event.is_none() {
        return Err(Error::NoZero {
            floor: p.cfg.t_floor,
        });
    }
    Ok(Trajectory {
        variable: Variable::R,
        n,
        gamma,
        start,
        sol,
        beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub t: f64,
    #[serde(rename = "E")]
    pub e: f64,
    /// `f(y) e^{-t}` at the sample, part of the tolerance scale.
    pub source: f64,
    /// `E` rose above the previous sample by more than the tolerance.
    pub violation: bool,
}

/// Relative tolerance used to flag energy increases.
pub const ENERGY_TOL: f64 = 1e-9;

/// `E = ψ - ((n-1)/n)(y')^n g'(y) - f(y) e^{-t}` at every sample with
/// `y ≥ s0`; increases beyond `ENERGY_TOL · (|E| + f(y)e^{-t})` are flagged.
pub fn energy_series<const N: usize>(
    traj: &Trajectory<N>,
    nl: &Nonlinearity,
    s0: f64,
) -> Result<Vec<EnergyRecord>> {
    if traj.variable != Variable::T {
        return Err(Error::Invalid(
            "energy is defined along t-trajectories".into(),
        ));
    }
    let nf = traj.n as f64;
    let m = nf - 1.0;
    let mut out: Vec<EnergyRecord> = Vec::new();
    for (t, s) in traj.samples() {
        if s[0] < s0 {
            continue;
        }
        let yp = traj.slope(t, &s);
        let src = nl.source(s[0], t);
        let e = s[1] - m / nf * yp.powi(traj.n as i32) * nl.eval_g(s[0], 1)? - src;
        // samples run downwards in t, so E must not decrease from one to the next
        let violation = out
            .last()
            .is_some_and(|prev| prev.e > e + ENERGY_TOL * (e.abs() + src));
        out.push(EnergyRecord {
            t,
            e,
            source: src,
            violation,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemConfig;
    use approx::assert_relative_eq;

    const J01: f64 = 2.404825557695773;

    fn problem(nl: Nonlinearity, n: u32) -> Problem {
        Problem::new(nl, ProblemConfig::with_n(n)).unwrap()
    }

    #[test]
    fn bessel_zero_in_r_and_t() {
        let p = problem(Nonlinearity::linear(1.0).unwrap(), 2);
        let tr = integrate_r(&p, 1.0, StopRule::FirstZero).unwrap();
        assert!((tr.first_zero().unwrap() - J01).abs() < 1e-8);
        let st = radial_start_t(&p, 1.0).unwrap();
        let tt: FlowTrajectory = integrate_t(&p, 1.0, &st, StopRule::FirstZero).unwrap();
        let t = tt.first_zero().unwrap();
        assert!((t - 2.0 * (2.0 / J01).ln()).abs() < 1e-7, "{t}");
    }

    #[test]
    fn liouville_zero() {
        let p = problem(Nonlinearity::exp(1.0).unwrap(), 2);
        for gamma in [1.0, 2.0, 5.0] {
            let r = integrate_r(&p, gamma, StopRule::FirstZero)
                .unwrap()
                .first_zero()
                .unwrap();
            let exact = (8.0 * ((gamma / 2.0f64).exp() - 1.0) * (-gamma).exp()).sqrt();
            assert_relative_eq!(r, exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn startup_balance() {
        let p = problem(Nonlinearity::exp(1.0).unwrap(), 3);
        let r0 = series_radius(&p, 1.0).unwrap();
        let phi0 = -(1f64.exp()) * r0.powi(3) / 3.0;
        let p2 = integrate_r(&p, 1.0, StopRule::FirstZero).unwrap();
        assert_relative_eq!(p2.start.state[1], phi0, max_relative = 1e-12);
        assert_relative_eq!(
            p2.start.state[1] / r0.powi(3),
            -(1f64.exp()) / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn monotone_samples() {
        let nl = Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap();
        let p = problem(nl, 2);
        let st = default_start_t(&p, 4.0).unwrap();
        assert!(matches!(st.kind, StartKind::Tail { .. }));
        let tr: FlowTrajectory = integrate_t(&p, 4.0, &st, StopRule::FirstZero).unwrap();
        let s = tr.samples();
        assert!(s
            .windows(2)
            .all(|w| w[1].0 < w[0].0 && w[1].1[0] < w[0].1[0] && w[1].1[1] > w[0].1[1]));
    }

    #[test]
    fn tail_start_bounds() {
        let p = problem(Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap(), 2);
        let ts = tail_start(&p, 5.0, 6.0, false).unwrap();
        let gp = 10.0;
        assert!(ts.y <= 5.0 && ts.y >= 5.0 - 10.0 / gp);
        assert!(ts.psi > 0.0 && ts.psi <= 2.0 / gp);
        let snap = GammaSnapshot::new(&p.nl, 2, 5.0).unwrap();
        assert_eq!(ts.psi, snap.z_derivs(ts.t).1);
        assert!(matches!(
            tail_start(&p, 0.0, 6.0, false),
            Err(Error::TailInvalid(_))
        ));
    }

    #[test]
    fn picard_delta_within_bound() {
        let p = problem(Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap(), 2);
        let ts = tail_start(&p, 5.0, 6.0, true).unwrap();
        let (gp, gpp) = (10.0f64, 2.0);
        let bound = 10.0 * gpp * (6.0 * gp.ln()).powi(2) / gp.powi(3);
        assert!(
            ts.picard_delta.unwrap() <= bound,
            "{:?} vs {bound}",
            ts.picard_delta
        );
    }

    #[test]
    fn energy_nonincreasing() {
        for (nl, n, gamma) in [
            (
                Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap(),
                2u32,
                4.0,
            ),
            (
                Nonlinearity::pow_exp_lin(1.0, 1.0, 1.0, 1.5, 1.0).unwrap(),
                2,
                8.0,
            ),
            (Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5).unwrap(), 3, 10.0),
        ] {
            let p = problem(nl, n);
            let st = default_start_t(&p, gamma).unwrap();
            let tr: FlowTrajectory = integrate_t(&p, gamma, &st, StopRule::FirstZero).unwrap();
            let e = energy_series(&tr, &p.nl, p.s0().unwrap()).unwrap();
            assert!(e.len() > 10);
            assert!(e.iter().all(|r| !r.violation), "n={n} gamma={gamma}");
        }
    }

    #[test]
    fn csv_headers() {
        let p = problem(Nonlinearity::linear(1.0).unwrap(), 2);
        let tr = integrate_r(&p, 1.0, StopRule::FirstZero).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("r,w,wprime,Phi\n"));
        assert_eq!(s.lines().count(), tr.samples().len() + 1);
    }
}
