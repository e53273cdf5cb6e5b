//! Self-checks grouped into suites, each producing a pass/fail table.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::asymptotics::{self, GammaSnapshot, Quantity};
use crate::config::{Problem, ProblemConfig};
use crate::error::{Error, Result};
use crate::linearization;
use crate::nonlinearity::Nonlinearity;
use crate::ode::{self, FlowTrajectory, StopRule};
use crate::quadrature::{self, QuadOptions};
use crate::shooting::{self, RegimeLabel};

/// First zero of the Bessel function `J₀`.
pub const BESSEL_J0_ZERO: f64 = 2.404825557695773;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Identities,
    Oracles,
    Asymptotics,
    Regimes,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Identities,
        Suite::Oracles,
        Suite::Asymptotics,
        Suite::Regimes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Oracles => "oracles",
            Suite::Asymptotics => "asymptotics",
            Suite::Regimes => "regimes",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown suite '{s}' (identities|oracles|asymptotics|regimes)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: String,
    pub bound: String,
    pub pass: bool,
}

impl Check {
    fn le(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value: format!("{value:.6e}"),
            bound: format!("<= {bound:.1e}"),
            pass: value <= bound,
        }
    }

    fn text(
        name: impl Into<String>,
        value: impl Into<String>,
        bound: impl Into<String>,
        pass: bool,
    ) -> Self {
        Self {
            name: name.into(),
            value: value.into(),
            bound: bound.into(),
            pass,
        }
    }

    fn failed(name: impl Into<String>, e: Error) -> Self {
        Self {
            name: name.into(),
            value: format!("error: {e}"),
            bound: "-".into(),
            pass: false,
        }
    }

    fn from_result(name: impl Into<String>, r: Result<Check>) -> Self {
        let name = name.into();
        match r {
            Ok(mut c) => {
                c.name = name;
                c
            }
            Err(e) => Check::failed(name, e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// Plain-text table, one check per line.
    pub fn to_table(&self) -> String {
        let w = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(s, "suite: {}", self.suite.name());
        let _ = writeln!(
            s,
            "{:<w$}  {:<4}  {:<30}  {}",
            "check", "ok", "value", "bound"
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<w$}  {:<4}  {:<30}  {}",
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.value,
                c.bound
            );
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        let _ = writeln!(s, "{passed}/{} passed", self.checks.len());
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Runs one suite. `base` supplies the tolerances, the dimension used by
/// the regime suite and the nonlinearity used by the identity suite.
pub fn run_suite(suite: Suite, base: &Problem) -> VerifyReport {
    let checks = match suite {
        Suite::Identities => identities(base),
        Suite::Oracles => oracles(&base.cfg),
        Suite::Asymptotics => asymptotic_checks(&base.cfg),
        Suite::Regimes => regimes(&base.cfg),
    };
    VerifyReport { suite, checks }
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

fn problem(nl: Nonlinearity, cfg: &ProblemConfig, n: u32) -> Result<Problem> {
    Problem::new(
        nl,
        ProblemConfig {
            n,
            beta: 0.0,
            ..cfg.clone()
        },
    )
}

/// Largest residuals of the comparison-profile identities over 100 points
/// in `[T₀, T₁ + 20(n-1)]`: `(z-ODE, V₂ = 1 - g'z', V₂-ODE)`.
pub fn closed_form_residuals(snap: &GammaSnapshot) -> (f64, f64, f64) {
    let m = snap.n as f64 - 1.0;
    let (lo, hi) = (snap.t0, snap.t1 + 20.0 * m);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let t = lo + (hi - lo) * i as f64 / 99.0;
        let (_, zp, zpp) = snap.z_derivs(t);
        let src = snap.z_source(t);
        // -((z')^{n-1})' = e^{g - t + g'(z - γ)}
        let lhs = -m * zp.powf(m - 1.0) * zpp;
        worst.0 = worst.0.max(rel(lhs, src));
        let (v2, v2p, v2pp) = snap.v2(t);
        let other = 1.0 - snap.gp * zp;
        worst.1 = worst
            .1
            .max((v2 - other).abs() / (1.0 + (snap.gp * zp).abs()));
        // -((z')^{n-2} V₂')' = (g'/(n-1)) V₂ e^{g - t + g'(z - γ)}
        let lhs = -((m - 1.0) * zp.powf(m - 2.0) * zpp * v2p + zp.powf(m - 1.0) * v2pp);
        let rhs = snap.gp / m * v2 * src;
        let scale = (m - 1.0).abs() * (zp.powf(m - 2.0) * zpp * v2p).abs()
            + (zp.powf(m - 1.0) * v2pp).abs()
            + rhs.abs();
        worst.2 = worst.2.max(if scale > 0.0 {
            (lhs - rhs).abs() / scale
        } else {
            0.0
        });
    }
    worst
}

fn identities(base: &Problem) -> Vec<Check> {
    let mut out = Vec::new();
    let (mut z, mut rel_v2, mut v2ode) = (0.0f64, 0.0f64, 0.0f64);
    let mut err = None;
    for n in [2u32, 3, 4] {
        for gamma in [3.0, 5.0, 10.0] {
            match GammaSnapshot::new(&base.nl, n, gamma) {
                Ok(s) => {
                    let (a, b, c) = closed_form_residuals(&s);
                    z = z.max(a);
                    rel_v2 = rel_v2.max(b);
                    v2ode = v2ode.max(c);
                }
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
        }
    }
    if let Some(e) = err {
        out.push(Check::failed("closed forms", e));
        return out;
    }
    out.push(Check::le("z ODE residual (9 cases x 100 t)", z, 1e-9));
    out.push(Check::le("V2 = 1 - g'z'", rel_v2, 1e-12));
    out.push(Check::le("V2 ODE residual", v2ode, 1e-9));
    for k in 1..=12 {
        let (h, s) = asymptotics::exact_identities(k);
        out.push(Check::text(
            format!("harmonic alternating sum k={k}"),
            h.to_string(),
            "exact",
            h,
        ));
        out.push(Check::text(
            format!("beta-type sum k={k}"),
            s.to_string(),
            "exact",
            s,
        ));
    }
    out
}

fn bessel(cfg: &ProblemConfig) -> Result<Vec<Check>> {
    let p = problem(Nonlinearity::linear(1.0)?, cfg, 2)?;
    let mut rs = Vec::new();
    let mut out = Vec::new();
    for gamma in [0.5, 1.0, 2.0] {
        let r = shooting::shoot(&p, gamma)?.r;
        out.push(Check::le(
            format!("bessel R(gamma={gamma}) abs err"),
            (r - BESSEL_J0_ZERO).abs(),
            1e-6,
        ));
        rs.push(r);
    }
    let spread = rs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - rs.iter().cloned().fold(f64::INFINITY, f64::min);
    out.push(Check::le("bessel R spread over gamma", spread, 1e-8));
    Ok(out)
}

/// First zero of `-Δw = e^w` in the plane started at `w(0) = γ`.
pub fn liouville_radius(gamma: f64) -> f64 {
    (8.0 * (gamma / 2.0).exp_m1() * (-gamma).exp()).sqrt()
}

fn oracles(cfg: &ProblemConfig) -> Vec<Check> {
    let mut out = match bessel(cfg) {
        Ok(c) => c,
        Err(e) => vec![Check::failed("bessel", e)],
    };
    for gamma in [1.0, 2.0, 5.0, 10.0] {
        let name = format!("liouville R(gamma={gamma}) rel err");
        let r = Nonlinearity::exp(1.0)
            .and_then(|nl| problem(nl, cfg, 2))
            .and_then(|p| shooting::shoot(&p, gamma))
            .map(|o| Check::le("", rel(o.r, liouville_radius(gamma)), 1e-6));
        out.push(Check::from_result(name, r));
    }
    for (label, nl, n, gamma) in cross_cases() {
        let name = format!("T from r vs t: {label}, n={n}, gamma={gamma}");
        let r = nl.and_then(|nl| problem(nl, cfg, n)).and_then(|p| {
            let tr = shooting::shoot_in_r(&p, gamma)?;
            let tt = shooting::shoot_in_t(&p, gamma)?;
            Ok(Check::le("", (tr - tt).abs() / (1.0 + tt.abs()), 1e-6))
        });
        out.push(Check::from_result(name, r));
    }
    let nl = Nonlinearity::exp(1.0);
    let beta0 = nl.clone().and_then(|nl| {
        let (red, a) = shooting::singular_reduce(&nl, 2, 0.0)?;
        Ok(Check::text(
            "",
            format!("a={a}"),
            "identity",
            red == nl && a == 1.0,
        ))
    });
    out.push(Check::from_result("singular reduction beta=0", beta0));
    for gamma in [0.5, 1.0, 2.0] {
        let name = format!("singular reduction beta=1 gamma={gamma} rel err");
        let r = nl.clone().and_then(|nl| {
            let c = ProblemConfig {
                n: 2,
                beta: 1.0,
                ..cfg.clone()
            };
            let red = shooting::shoot_singular(&nl, &c, gamma)?;
            let direct = shooting::shoot_singular_direct(&nl, &c, gamma)?;
            Ok(Check::le("", rel(red.r, direct), 1e-5))
        });
        out.push(Check::from_result(name, r));
    }
    out
}

fn cross_cases() -> Vec<(&'static str, Result<Nonlinearity>, u32, f64)> {
    vec![
        ("e^u", Nonlinearity::exp(1.0), 2, 1.0),
        ("e^u", Nonlinearity::exp(1.0), 3, 1.0),
        ("u", Nonlinearity::linear(1.0), 3, 1.0),
        (
            "u e^(u^2)",
            Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0),
            2,
            3.0,
        ),
        (
            "e^(u^1.5)",
            Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5),
            3,
            4.0,
        ),
    ]
}

/// The family `u e^{u^{3/2} + u}` used by several checks.
pub fn family_ii() -> Nonlinearity {
    Nonlinearity::pow_exp_lin(1.0, 1.0, 1.0, 1.5, 1.0).expect("valid parameters")
}

fn lemma_quadratures() -> Result<Vec<Check>> {
    let nl = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0)?;
    let opts = QuadOptions {
        rel_tol: 1e-13,
        ..QuadOptions::default()
    };
    let (mut w34, mut w45) = (0.0f64, 0.0f64);
    for n in [2u32, 3] {
        let snap = GammaSnapshot::new(&nl, n, 5.0)?;
        let m = n as f64 - 1.0;
        for t in [snap.t1 - 2.0, snap.t1, snap.t1 + 5.0 * m] {
            for k in 1..=4u32 {
                let closed = asymptotics::lemma34_integral(k, &snap, t)?;
                let q = quadrature::integrate_to_infinity(
                    |s| snap.z_derivs(s).1.powi(k as i32 + 1),
                    t,
                    &opts,
                )?;
                w34 = w34.max(rel(closed, q.value));
            }
            let l = asymptotics::lemma45_integrals(&snap, t);
            let q1 = quadrature::integrate_to_infinity(
                |s| {
                    let (_, zp, zpp) = snap.z_derivs(s);
                    zp.powf(m - 1.0) * zpp * snap.v2(s).1
                },
                t,
                &opts,
            )?;
            let q2 = quadrature::integrate_to_infinity(
                |s| snap.z_derivs(s).1.powi(n as i32) * snap.v2(s).1,
                t,
                &opts,
            )?;
            w45 = w45.max(rel(l.i1, q1.value)).max(rel(l.i2, q2.value));
        }
    }
    Ok(vec![
        Check::le(
            "integral of (z')^(k+1), closed form vs quadrature",
            w34,
            1e-8,
        ),
        Check::le("I1, I2 closed form vs quadrature", w45, 1e-8),
    ])
}

fn energy_matrix(cfg: &ProblemConfig) -> Result<Check> {
    let mut worst = 0usize;
    let mut count = 0usize;
    let cases: Vec<(Nonlinearity, u32, f64)> = vec![
        (Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0)?, 2, 4.0),
        (family_ii(), 2, 3.0),
        (family_ii(), 2, 8.0),
        (Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5)?, 2, 30.0),
        (Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5)?, 3, 10.0),
        (Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.2)?, 4, 12.0),
    ];
    for (nl, n, gamma) in cases {
        let p = problem(nl, cfg, n)?;
        let s0 = p.s0().ok_or(Error::NoConvexity {
            u_max: p.cfg.scan.u_max,
        })?;
        let st = ode::default_start_t(&p, gamma)?;
        let tr: FlowTrajectory = ode::integrate_t(&p, gamma, &st, StopRule::FirstZero)?;
        let e = ode::energy_series(&tr, &p.nl, s0)?;
        count += e.len();
        worst += e.iter().filter(|r| r.violation).count();
    }
    Ok(Check::text(
        "",
        format!("{worst} of {count} samples"),
        "0 increases",
        worst == 0,
    ))
}

fn asymptotic_checks(cfg: &ProblemConfig) -> Vec<Check> {
    let mut out = match lemma_quadratures() {
        Ok(c) => c,
        Err(e) => vec![Check::failed("lemma quadratures", e)],
    };
    out.push(Check::from_result(
        "energy nonincreasing on the test matrix",
        energy_matrix(cfg),
    ));
    let p = problem(family_ii(), cfg, 2);
    for gamma in [3.0, 5.0, 8.0] {
        let name = format!("J identity residual over [Ttilde, t_start], gamma={gamma}");
        let r = p.as_ref().map_err(Clone::clone).and_then(|p| {
            let sol = linearization::solve_v1(p, gamma)?;
            let tt = shooting::shoot(p, gamma)?
                .t_tilde
                .ok_or_else(|| Error::Invalid("no Ttilde".into()))?;
            let rep = linearization::lemma46_residual(p, &sol, tt, sol.traj.start.x)?;
            Ok(Check::le("", rep.residual, 1e-6))
        });
        out.push(Check::from_result(name, r));
    }
    for gamma in [3.0, 4.0, 5.0, 6.0, 8.0] {
        let name = format!("T' from V1 vs central difference, gamma={gamma}");
        let r = p.as_ref().map_err(Clone::clone).and_then(|p| {
            let tp = linearization::solve_v1(p, gamma)?.t_prime()?;
            let fd = shooting::t_prime_fd(p, gamma)?;
            Ok(Check::le("", rel(tp, fd), 1e-3))
        });
        out.push(Check::from_result(name, r));
    }
    out.extend(
        uniqueness_window(cfg).unwrap_or_else(|e| vec![Check::failed("uniqueness window", e)]),
    );
    out.extend(decay(cfg).unwrap_or_else(|e| vec![Check::failed("error decay", e)]));
    out
}

/// First grid `γ₀` after which `T` increases and `V₁(T) < 0` at every point.
pub fn uniqueness_gamma0(curve: &shooting::BifurcationCurve) -> Option<f64> {
    let rows = &curve.rows;
    let good = |i: usize| {
        rows[i].v1_t.is_some_and(|v| v < 0.0)
            && rows[i].tprime_v1.is_some_and(|t| t > 0.0)
            && (i == 0 || rows[i].t > rows[i - 1].t)
    };
    let mut k = rows.len();
    while k > 0 && good(k - 1) {
        k -= 1;
    }
    (k < rows.len()).then(|| rows[k].gamma)
}

fn uniqueness_window(cfg: &ProblemConfig) -> Result<Vec<Check>> {
    let p = problem(family_ii(), cfg, 2)?;
    let grid = shooting::log_grid(2.0, 12.0, 21)?;
    let curve = shooting::sweep(&p, &grid, true)?;
    let g0 = uniqueness_gamma0(&curve);
    let full = curve.errors.is_empty();
    Ok(vec![Check::text(
        "uniqueness window on [2, 12]",
        g0.map_or_else(|| "none".to_string(), |g| format!("gamma0={g:.6}")),
        "gamma0 exists",
        g0.is_some() && full,
    )])
}

fn decay(cfg: &ProblemConfig) -> Result<Vec<Check>> {
    let p = problem(Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5)?, cfg, 2)?;
    let grid = shooting::log_grid(20.0, 200.0, 12)?;
    let curve = shooting::sweep(&p, &grid, true)?;
    let rep = asymptotics::error_decay_report(&p, &curve, asymptotics::DECAY_FACTOR)?;
    let vt = rep
        .verdict(Quantity::T)
        .ok_or_else(|| Error::Invalid("no T verdict".into()))?;
    let mut out = vec![Check::le(
        "normalised T error max/min over upper half",
        vt.ratio,
        rep.factor,
    )];
    let last = rep.series(Quantity::YPrimeT).last().copied().cloned();
    if let Some(r) = last {
        let lead = 2.0 / r.gprime;
        out.push(Check::le(
            "|y'(T) - 2/g'| / (2/g') at largest gamma",
            (r.computed - lead).abs() / lead,
            0.1,
        ));
    }
    let vtp = rep
        .verdict(Quantity::TPrime)
        .ok_or_else(|| Error::Invalid("no T' verdict".into()))?;
    out.push(Check::text(
        "raw T' error decreasing over upper half",
        vtp.raw_decreasing.to_string(),
        "true",
        vtp.raw_decreasing,
    ));
    Ok(out)
}

fn regimes(cfg: &ProblemConfig) -> Vec<Check> {
    let n = cfg.n;
    let m = n as f64 - 1.0;
    let grid = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut out = Vec::new();
    for (p_exp, want) in [
        (0.3 * m, RegimeLabel::DivergesUp),
        (m, RegimeLabel::Bounded),
        (2.0 * m, RegimeLabel::DivergesDown),
    ] {
        let name = format!("small-gamma regime, f = u^{p_exp} e^(u^2), n={n}");
        let r = Nonlinearity::pow_exp(1.0, p_exp, 1.0, 2.0)
            .and_then(|nl| problem(nl, cfg, n))
            .and_then(|p| shooting::classify_small_gamma(&p, &grid, None))
            .map(|rep| {
                Check::text(
                    "",
                    format!("{} (slope {:.4})", rep.label.as_str(), rep.slope),
                    want.as_str(),
                    rep.label == want,
                )
            });
        out.push(Check::from_result(name, r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Problem {
        Problem::new(
            Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap(),
            ProblemConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn identities_pass() {
        let r = run_suite(Suite::Identities, &base());
        assert!(r.all_pass(), "{}", r.to_table());
    }

    #[test]
    fn regimes_pass_and_are_repeatable() {
        let a = run_suite(Suite::Regimes, &base());
        assert!(a.all_pass(), "{}", a.to_table());
        assert_eq!(a.checks.len(), 3);
        assert_eq!(a.to_table(), run_suite(Suite::Regimes, &base()).to_table());
    }
}
