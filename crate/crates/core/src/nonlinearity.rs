//! The exponential nonlinearity `f(u) = λ e^{g(u)}` with `g(u) = a u^q + ρ(u)`.
//!
//! `ρ` is carried as a derivative family rather than a symbolic expression:
//! a logarithmic part `p log u`, a linear part `b u`, and an optional
//! tabulated remainder. Every built-in part has exact derivatives up to
//! order three, so `g'''` is exact whenever no table is attached.
//!
//! The source term of the transformed equation, `f(u) e^{-t}`, is always
//! formed as a single exponential `exp(log λ + g(u) - t)` so that neither
//! `e^{g(u)}` nor `e^{-t}` has to be representable on its own.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest exponent accepted by [`Nonlinearity::eval_source`].
pub const MAX_EXPONENT: f64 = 709.0;

/// Tabulated contribution to `ρ`, given as rows of `(u, ρ, ρ', ρ'', ρ''')`.
///
/// Each derivative is interpolated by a cubic Hermite piece that uses the
/// next derivative as its slope; `ρ'''` is interpolated linearly. With
/// smooth tables on a grid of spacing `h` the third derivative is accurate
/// to `O(h²)`, which is what the 1e-4 default tolerance below assumes.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoTable {
    u: Vec<f64>,
    d: [Vec<f64>; 4],
}

/// Accuracy the tabulated `ρ'''` is expected to meet (relative).
pub const TABLE_THIRD_DERIVATIVE_TOL: f64 = 1e-4;

impl RhoTable {
    pub fn new(rows: &[[f64; 5]]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Invalid("rho table needs at least two rows".into()));
        }
        if rows.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::Invalid(
                "rho table abscissae must be strictly increasing".into(),
            ));
        }
        if rows[0][0] < 0.0 {
            return Err(Error::Invalid("rho table must start at u >= 0".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "rho table contains non-finite entries".into(),
            ));
        }
        let u = rows.iter().map(|r| r[0]).collect();
        let d = std::array::from_fn(|k| rows.iter().map(|r| r[k + 1]).collect());
        Ok(Self { u, d })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.u[0], *self.u.last().unwrap())
    }

    fn eval(&self, x: f64, k: usize) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&x) {
            return Err(Error::Domain(format!(
                "u = {x} outside rho table [{lo}, {hi}]"
            )));
        }
        let i = match self.u.partition_point(|&v| v <= x) {
            0 => 0,
            p if p >= self.u.len() => self.u.len() - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.u[i], self.u[i + 1]);
        let h = x1 - x0;
        let s = (x - x0) / h;
        let (v0, v1) = (self.d[k][i], self.d[k][i + 1]);
        if k == 3 {
            return Ok(v0 + s * (v1 - v0));
        }
        let (m0, m1) = (self.d[k + 1][i] * h, self.d[k + 1][i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        Ok((2.0 * s3 - 3.0 * s2 + 1.0) * v0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * v1
            + (s3 - s2) * m1)
    }
}

/// The perturbation `ρ(u) = p log u + b u + table(u)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rho {
    pub log_coef: f64,
    pub lin_coef: f64,
    pub table: Option<Arc<RhoTable>>,
}

impl Rho {
    pub fn zero() -> Self {
        Self::default()
    }

    fn eval(&self, u: f64, k: usize) -> Result<f64> {
        let mut v = 0.0;
        if self.log_coef != 0.0 {
            if u <= 0.0 {
                return Err(Error::Domain(format!("p·log(u) is singular at u = {u}")));
            }
            v += match k {
                0 => self.log_coef * u.ln(),
                1 => self.log_coef / u,
                2 => -self.log_coef / (u * u),
                _ => 2.0 * self.log_coef / (u * u * u),
            };
        }
        match k {
            0 => v += self.lin_coef * u,
            1 => v += self.lin_coef,
            _ => {}
        }
        if let Some(t) = &self.table {
            v += t.eval(u, k)?;
        }
        Ok(v)
    }

    /// Part of `ρ` that stays finite at `u = 0` (everything but `p log u`).
    fn regular_at_zero(&self, k: usize) -> f64 {
        let mut v = if k == 1 { self.lin_coef } else { 0.0 };
        if let Some(t) = &self.table {
            v += t.eval(t.domain().0.max(0.0), k).unwrap_or(0.0);
        }
        v
    }
}

/// Named parameterisations, used for config files and report metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `λ u` (exploratory).
    Linear,
    /// `λ e^u` (exploratory, q = 1).
    Exp,
    /// `λ u^p e^{a u^q}`.
    PowExp,
    /// `λ u^p e^{a u^q + b u}`.
    PowExpLin,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Exp => "exp",
            Family::PowExp => "pow_exp",
            Family::PowExpLin => "pow_exp_lin",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "exp" => Ok(Family::Exp),
            "pow_exp" => Ok(Family::PowExp),
            "pow_exp_lin" => Ok(Family::PowExpLin),
            other => Err(Error::Invalid(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    pub family: Family,
    pub lambda: f64,
    log_lambda: f64,
    pub a: f64,
    pub q: f64,
    pub rho: Rho,
    /// `f(0)`, fixed at construction so that `f(0) = 0` is decidable exactly.
    pub f0: f64,
    /// Exponent `β` in `f(s) - f(0) = O(s^β)` as `s → 0⁺`.
    pub beta_growth: f64,
    /// Exponent `α` in `f'(s) = O(s^{α-1})` as `s → 0⁺`.
    pub alpha_growth: f64,
}

impl Nonlinearity {
    /// General constructor: `f(u) = λ exp(a u^q + ρ(u))`.
    pub fn new(family: Family, lambda: f64, a: f64, q: f64, rho: Rho) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::Invalid(format!("a must be nonnegative, got {a}")));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Invalid(format!("q must be positive, got {q}")));
        }
        let p = rho.log_coef;
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::Invalid(format!("p must be nonnegative, got {p}")));
        }
        if !rho.lin_coef.is_finite() {
            return Err(Error::Invalid("b must be finite".into()));
        }
        let f0 = if p > 0.0 {
            0.0
        } else {
            lambda * rho.regular_at_zero(0).exp()
        };
        let (beta_growth, alpha_growth) = if p > 0.0 {
            (p, p.min(1.0))
        } else if rho.lin_coef != 0.0 || (a > 0.0 && q <= 1.0) {
            (1.0, 1.0)
        } else if a > 0.0 {
            (q, q.min(1.0))
        } else {
            (1.0, 1.0)
        };
        Ok(Self {
            family,
            lambda,
            log_lambda: lambda.ln(),
            a,
            q,
            rho,
            f0,
            beta_growth,
            alpha_growth,
        })
    }

    /// `λ u` — the linear problem, whose first zero is a Bessel root.
    pub fn linear(lambda: f64) -> Result<Self> {
        Self::new(
            Family::Linear,
            lambda,
            0.0,
            1.0,
            Rho {
                log_coef: 1.0,
                ..Rho::default()
            },
        )
    }

    /// `λ e^u` — the Liouville–Gelfand nonlinearity.
    pub fn exp(lambda: f64) -> Result<Self> {
        Self::new(Family::Exp, lambda, 1.0, 1.0, Rho::zero())
    }

    /// `λ u^p e^{a u^q}`.
    pub fn pow_exp(lambda: f64, p: f64, a: f64, q: f64) -> Result<Self> {
        Self::new(
            Family::PowExp,
            lambda,
            a,
            q,
            Rho {
                log_coef: p,
                ..Rho::default()
            },
        )
    }

    /// `λ u^p e^{a u^q + b u}`.
    pub fn pow_exp_lin(lambda: f64, p: f64, a: f64, q: f64, b: f64) -> Result<Self> {
        Self::new(
            Family::PowExpLin,
            lambda,
            a,
            q,
            Rho {
                log_coef: p,
                lin_coef: b,
                table: None,
            },
        )
    }

    pub fn with_table(mut self, table: RhoTable) -> Result<Self> {
        self.rho.table = Some(Arc::new(table));
        Self::new(self.family, self.lambda, self.a, self.q, self.rho)
    }

    pub fn p(&self) -> f64 {
        self.rho.log_coef
    }

    pub fn log_lambda(&self) -> f64 {
        self.log_lambda
    }

    /// Same `g`, multiplier scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.family,
            self.lambda * factor,
            self.a,
            self.q,
            self.rho.clone(),
        )
    }

    /// Reasons this nonlinearity sits outside the standing hypothesis for
    /// dimension `n`. Empty means admissible.
    pub fn exploratory_flags(&self, n: u32) -> Vec<String> {
        let crit = n as f64 / (n as f64 - 1.0);
        let mut flags = Vec::new();
        if self.a <= 0.0 {
            flags.push("a = 0: no exponential growth".to_string());
        }
        if self.q <= 1.0 {
            flags.push(format!("q = {} <= 1", self.q));
        }
        if self.q > crit + 1e-12 {
            flags.push(format!("q = {} > n/(n-1) = {crit}", self.q));
        }
        flags
    }

    pub fn is_exploratory(&self, n: u32) -> bool {
        !self.exploratory_flags(n).is_empty()
    }

    /// `g^{(k)}(u)` for `k = 0..=3`.
    pub fn eval_g(&self, u: f64, k: usize) -> Result<f64> {
        if k > 3 {
            return Err(Error::Invalid(format!("derivative order {k} > 3")));
        }
        if !(u >= 0.0) {
            return Err(Error::Domain(format!("g evaluated at u = {u} < 0")));
        }
        let mut v = 0.0;
        if self.a != 0.0 {
            let coef = (0..k).fold(self.a, |c, j| c * (self.q - j as f64));
            if coef != 0.0 {
                let e = self.q - k as f64;
                v += if u > 0.0 {
                    coef * u.powf(e)
                } else if e > 0.0 {
                    0.0
                } else if e == 0.0 {
                    coef
                } else {
                    return Err(Error::Domain(format!(
                        "u^{e} singular at u = 0 (q = {}, k = {k})",
                        self.q
                    )));
                };
            }
        }
        Ok(v + self.rho.eval(u, k)?)
    }

    /// `g, g', g'', g'''` at `u`.
    pub fn g_derivs(&self, u: f64) -> Result<[f64; 4]> {
        Ok([
            self.eval_g(u, 0)?,
            self.eval_g(u, 1)?,
            self.eval_g(u, 2)?,
            self.eval_g(u, 3)?,
        ])
    }

    /// `g'(0⁺)` where finite; used by the continuation below zero.
    fn g1_at_zero(&self) -> f64 {
        let mut v = self.rho.regular_at_zero(1);
        if self.a != 0.0 {
            if self.q == 1.0 {
                v += self.a;
            } else if self.q < 1.0 {
                return 0.0;
            }
        }
        v
    }

    /// `f'(0⁺)` when `f(0) = 0` and `p = 1`; zero otherwise.
    fn slope_at_zero(&self) -> f64 {
        if self.f0 == 0.0 && self.p() == 1.0 {
            self.lambda * self.rho.regular_at_zero(0).exp()
        } else {
            0.0
        }
    }

    /// `f(u)` (no overflow check).
    pub fn f(&self, u: f64) -> f64 {
        self.source(u, 0.0)
    }

    /// `log f(u)` for `u > 0`.
    pub fn log_f(&self, u: f64) -> Result<f64> {
        Ok(self.log_lambda + self.eval_g(u, 0)?)
    }

    /// `f(u) e^{-t}`, unchecked. For `u <= 0` the nonlinearity is continued
    /// by a C¹ extension so that integration steps straddling the first zero
    /// stay smooth: `f0 e^{g'(0⁺) u}` when `f(0) > 0`, `f'(0⁺) u` when
    /// `f(0) = 0` with `p = 1`, and `0` otherwise.
    #[inline]
    pub fn source(&self, u: f64, t: f64) -> f64 {
        if u > 0.0 {
            match self.eval_g(u, 0) {
                Ok(g) => (self.log_lambda + g - t).exp(),
                Err(_) => f64::NAN,
            }
        } else if self.f0 > 0.0 {
            (self.f0.ln() + self.g1_at_zero() * u - t).exp()
        } else {
            self.slope_at_zero() * u * (-t).exp()
        }
    }

    /// `f'(u) e^{-t}`, unchecked, consistent with [`Self::source`] below zero.
    #[inline]
    pub fn source_derivative(&self, u: f64, t: f64) -> f64 {
        if u > 0.0 {
            match (self.eval_g(u, 0), self.eval_g(u, 1)) {
                (Ok(g), Ok(g1)) => (self.log_lambda + g - t).exp() * g1,
                _ => f64::NAN,
            }
        } else if self.f0 > 0.0 {
            self.g1_at_zero() * (self.f0.ln() + self.g1_at_zero() * u - t).exp()
        } else {
            self.slope_at_zero() * (-t).exp()
        }
    }

    /// `f(u) e^{-t}` with an explicit overflow check on the combined exponent.
    pub fn eval_source(&self, u: f64, t: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::Domain(format!("source evaluated at u = {u} < 0")));
        }
        if u == 0.0 {
            return Ok(if self.f0 > 0.0 {
                self.f0 * (-t).exp()
            } else {
                0.0
            });
        }
        let exponent = self.log_lambda + self.eval_g(u, 0)? - t;
        if exponent > MAX_EXPONENT {
            return Err(Error::Range {
                exponent,
                cap: MAX_EXPONENT,
            });
        }
        Ok(exponent.exp())
    }

    /// Smallest point of the scan beyond which `g' > 0` and `g'' > 0` at
    /// every later scan point.
    pub fn find_s0(&self, scan: ScanSpec) -> Result<ConvexityThreshold> {
        let h = scan.u_max / scan.points as f64;
        let ok = |u: f64| -> bool {
            matches!((self.eval_g(u, 1), self.eval_g(u, 2)), (Ok(g1), Ok(g2)) if g1 > 0.0 && g2 > 0.0)
        };
        let mut s0 = None;
        for i in (1..=scan.points).rev() {
            let u = i as f64 * h;
            if ok(u) {
                s0 = Some(u);
            } else {
                break;
            }
        }
        match s0 {
            Some(s0) => Ok(ConvexityThreshold { s0, resolution: h }),
            None => Err(Error::NoConvexity { u_max: scan.u_max }),
        }
    }

    /// Sampled values and trend verdicts for the three growth hypotheses.
    pub fn check_hypotheses(&self, n: u32, gamma_grid: &[f64]) -> Result<HypothesisReport> {
        if gamma_grid.is_empty() {
            return Err(Error::Invalid("empty gamma grid".into()));
        }
        if gamma_grid[0] <= 0.0 || gamma_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(
                "gamma grid must be positive and increasing".into(),
            ));
        }
        let nf = n as f64;
        let mut h1: [Vec<f64>; 4] = Default::default();
        let mut h2 = Vec::with_capacity(gamma_grid.len());
        let mut h3 = Vec::with_capacity(gamma_grid.len());
        for &gm in gamma_grid {
            for (k, col) in h1.iter_mut().enumerate() {
                col.push(self.rho.eval(gm, k)? / gm.powf(self.q - k as f64));
            }
            let [g, g1, g2, _] = self.g_derivs(gm)?;
            h2.push(g - (nf - 1.0) / nf * gm * g1);
            h3.push(g1 / (g2 * g1.ln().powi(4)) * (g1 - (nf - 1.0) * gm * g2));
        }
        let upper = gamma_grid.len() / 2;
        let h1 = h1.map(|col| {
            let trend = trend_to_zero(&col[upper..]);
            HypothesisSeries::new(gamma_grid, col, trend, trend == Trend::ToZero)
        });
        let t2 = trend_bounded_below(&h2[upper..]);
        let t3 = trend_to_infinity(&h3[upper..]);
        Ok(HypothesisReport {
            n,
            flags: self.exploratory_flags(n),
            h1,
            h2: HypothesisSeries::new(gamma_grid, h2, t2, t2 != Trend::Inconclusive),
            h3: HypothesisSeries::new(gamma_grid, h3, t3, t3 == Trend::ToInfinity),
        })
    }
}

/// Uniform scan `u_i = i · u_max / points`, `i = 1..=points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSpec {
    pub u_max: f64,
    pub points: usize,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            u_max: 64.0,
            points: 64_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityThreshold {
    pub s0: f64,
    pub resolution: f64,
}

/// Default hypothesis grid `{2^0, …, 2^14}`.
pub fn default_hypothesis_grid() -> Vec<f64> {
    (0..=14).map(|k| 2f64.powi(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    ToZero,
    BoundedBelow,
    ToInfinity,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisSeries {
    pub gamma: Vec<f64>,
    pub values: Vec<f64>,
    pub trend: Trend,
    pub verdict: Verdict,
}

impl HypothesisSeries {
    fn new(gamma: &[f64], values: Vec<f64>, trend: Trend, holds: bool) -> Self {
        Self {
            gamma: gamma.to_vec(),
            values,
            trend,
            verdict: if holds {
                Verdict::Holds
            } else {
                Verdict::Fails
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub n: u32,
    pub flags: Vec<String>,
    /// Ratios `ρ^{(k)}(γ)/γ^{q-k}`, `k = 0..=3`.
    pub h1: [HypothesisSeries; 4],
    /// `g - ((n-1)/n) γ g'`.
    pub h2: HypothesisSeries,
    /// `g'/(g'' (log g')⁴) · (g' - (n-1) γ g'')`.
    pub h3: HypothesisSeries,
}

impl HypothesisReport {
    pub fn h1_holds(&self) -> bool {
        self.h1.iter().all(|s| s.verdict == Verdict::Holds)
    }

    pub fn h2_holds(&self) -> bool {
        self.h2.verdict == Verdict::Holds
    }

    pub fn h3_holds(&self) -> bool {
        self.h3.verdict == Verdict::Holds
    }
}

fn trend_to_zero(v: &[f64]) -> Trend {
    let a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    if a.iter().any(|x| !x.is_finite()) {
        return Trend::Inconclusive;
    }
    if a.iter().all(|&x| x <= 1e-14) {
        return Trend::ToZero;
    }
    let monotone = a.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    if monotone && a[a.len() - 1] <= 0.5 * a[0] {
        Trend::ToZero
    } else if a.windows(2).all(|w| w[1] > w[0]) {
        Trend::ToInfinity
    } else {
        Trend::Inconclusive
    }
}

fn trend_bounded_below(v: &[f64]) -> Trend {
    if v.iter().any(|x| !x.is_finite()) || v.len() < 4 {
        return Trend::Inconclusive;
    }
    let d: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let tail = &d[d.len() - 3..];
    if tail.iter().all(|&x| x < 0.0) && tail[2].abs() >= 0.5 * tail[0].abs() {
        // still falling without levelling off
        Trend::Inconclusive
    } else if tail.iter().all(|&x| x > 0.0) && tail[2] >= 0.5 * tail[0] {
        Trend::ToInfinity
    } else {
        Trend::BoundedBelow
    }
}

fn trend_to_infinity(v: &[f64]) -> Trend {
    if v.iter().any(|x| !x.is_finite()) {
        return Trend::Inconclusive;
    }
    if v.iter().all(|&x| x > 0.0) && v.windows(2).all(|w| w[1] > w[0]) {
        Trend::ToInfinity
    } else if v.iter().all(|&x| x >= 0.0) && v.windows(2).all(|w| w[1] < w[0]) {
        Trend::ToZero
    } else {
        Trend::Inconclusive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square() -> Nonlinearity {
        Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap()
    }

    #[test]
    fn eval_g_direct_formula() {
        let nl = square();
        assert_eq!(nl.eval_g(3.0, 0).unwrap(), 9.0);
        assert_eq!(nl.eval_g(3.0, 1).unwrap(), 6.0);
        assert_eq!(nl.eval_g(3.0, 2).unwrap(), 2.0);
        assert_eq!(nl.eval_g(3.0, 3).unwrap(), 0.0);
        let lg = Nonlinearity::pow_exp(1.0, 2.0, 1.0, 2.0).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(lg.eval_g(e, 0).unwrap(), e * e + 2.0, max_relative = 1e-15);
    }

    #[test]
    fn eval_g_singular_power_at_zero() {
        let nl = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5).unwrap();
        assert_eq!(nl.eval_g(0.0, 0).unwrap(), 0.0);
        assert_eq!(nl.eval_g(0.0, 1).unwrap(), 0.0);
        assert!(matches!(nl.eval_g(0.0, 2), Err(Error::Domain(_))));
        assert!(matches!(nl.eval_g(-1.0, 0), Err(Error::Domain(_))));
        let lg = Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap();
        assert!(matches!(lg.eval_g(0.0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn eval_source_examples() {
        let nl = square();
        assert_eq!(nl.eval_source(10.0, 100.0).unwrap(), 1.0);
        assert_eq!(nl.eval_source(0.0, 0.0).unwrap(), 1.0);
        let two = Nonlinearity::pow_exp(2.0, 0.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(
            two.eval_source(1.0, 1.0).unwrap(),
            2.0,
            max_relative = 1e-15
        );
        assert!(matches!(
            nl.eval_source(30.0, 0.0),
            Err(Error::Range { .. })
        ));
        // huge g(u) balanced by large t stays representable
        assert_relative_eq!(nl.eval_source(100.0, 1e4 + 2.0).unwrap(), (-2f64).exp());
    }

    #[test]
    fn f0_policy() {
        assert_eq!(Nonlinearity::pow_exp(1.0, 0.5, 1.0, 2.0).unwrap().f0, 0.0);
        assert_eq!(Nonlinearity::pow_exp(3.0, 0.0, 1.0, 2.0).unwrap().f0, 3.0);
        assert_eq!(Nonlinearity::linear(1.0).unwrap().f0, 0.0);
        assert_eq!(Nonlinearity::exp(1.0).unwrap().f0, 1.0);
    }

    #[test]
    fn continuation_below_zero_is_c1() {
        for nl in [
            Nonlinearity::exp(1.0).unwrap(),
            Nonlinearity::linear(2.0).unwrap(),
            Nonlinearity::pow_exp_lin(1.0, 1.0, 1.0, 1.5, 1.0).unwrap(),
        ] {
            let eps = 1e-7;
            let up = nl.source(eps, 0.3);
            let dn = nl.source(-eps, 0.3);
            let slope = (up - dn) / (2.0 * eps);
            assert_relative_eq!(slope, nl.source_derivative(-eps, 0.3), max_relative = 1e-5);
            assert_relative_eq!(slope, nl.source_derivative(eps, 0.3), max_relative = 1e-5);
        }
    }

    #[test]
    fn linear_family_is_exactly_linear() {
        let nl = Nonlinearity::linear(1.0).unwrap();
        for u in [1e-8, 0.3, 2.0, 17.0] {
            assert_relative_eq!(nl.f(u), u, max_relative = 1e-14);
            assert_relative_eq!(nl.source_derivative(u, 0.0), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn s0_examples() {
        let scan = ScanSpec {
            u_max: 10.0,
            points: 10_000,
        };
        let s = square().find_s0(scan).unwrap();
        assert!(s.s0 <= 1e-3 + 1e-12);

        // g = u^2 - 10u: g' > 0 only for u > 5
        let nl = Nonlinearity::pow_exp_lin(1.0, 0.0, 1.0, 2.0, -10.0).unwrap();
        let s = nl.find_s0(scan).unwrap();
        assert!((s.s0 - 5.0).abs() <= 2e-3, "{}", s.s0);

        // g = u^1.5 + 2 log u: g'' = 0.75 u^-0.5 - 2/u^2 changes sign once
        let nl = Nonlinearity::pow_exp(1.0, 2.0, 1.0, 1.5).unwrap();
        let s = nl.find_s0(scan).unwrap();
        let oracle = sign_change_oracle(|u| 0.75 / u.sqrt() - 2.0 / (u * u), 0.5, 5.0);
        assert!(
            (s.s0 - oracle).abs() <= 2.0 * s.resolution,
            "{} vs {oracle}",
            s.s0
        );
        assert!(nl.eval_g(s.s0, 2).unwrap() > 0.0);
        assert!(nl.eval_g(s.s0 - s.resolution, 2).unwrap() <= 0.0);

        assert!(matches!(
            Nonlinearity::exp(1.0).unwrap().find_s0(scan),
            Err(Error::NoConvexity { .. })
        ));
    }

    fn sign_change_oracle(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    #[test]
    fn hypotheses_example_families() {
        let grid = default_hypothesis_grid();
        // (i) at the critical exponent: (H3) fails
        for n in [2u32, 3] {
            let qc = n as f64 / (n as f64 - 1.0);
            let r = Nonlinearity::pow_exp(1.0, 1.0, 1.0, qc)
                .unwrap()
                .check_hypotheses(n, &grid)
                .unwrap();
            assert!(r.h1_holds() && r.h2_holds());
            assert_eq!(r.h3.verdict, Verdict::Fails);
            assert!(r.flags.is_empty());
        }
        // (ii): everything holds for 1 < q <= n/(n-1)
        for q in [1.5, 2.0] {
            let r = Nonlinearity::pow_exp_lin(1.0, 1.0, 1.0, q, 1.0)
                .unwrap()
                .check_hypotheses(2, &grid)
                .unwrap();
            assert!(
                r.h1_holds() && r.h2_holds() && r.h3_holds(),
                "q = {q}: {r:?}"
            );
        }
        // subcritical, rho = 0: (H3) holds
        let r = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5)
            .unwrap()
            .check_hypotheses(2, &grid)
            .unwrap();
        assert!(r.h3_holds());
        // supercritical q is flagged and (H2) fails
        let r = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.5)
            .unwrap()
            .check_hypotheses(2, &grid)
            .unwrap();
        assert!(!r.flags.is_empty());
        assert!(!r.h2_holds());
    }

    #[test]
    fn h3_diverges_geometrically_when_subcritical() {
        let grid: Vec<f64> = (0..30).map(|k| 1.5f64.powi(k)).collect();
        for (n, q) in [(2u32, 1.5), (2, 1.8), (3, 1.3)] {
            let r = Nonlinearity::pow_exp(1.0, 1.0, 1.0, q)
                .unwrap()
                .check_hypotheses(n, &grid)
                .unwrap();
            let v = &r.h3.values[20..];
            assert!(v.windows(2).all(|w| w[1] / w[0] > 1.0), "n={n} q={q}");
        }
    }

    #[test]
    fn table_reproduces_smooth_rho() {
        let rows: Vec<[f64; 5]> = (0..=2000)
            .map(|i| {
                let u = 0.5 + i as f64 * 0.01;
                [u, u.sin(), u.cos(), -u.sin(), -u.cos()]
            })
            .collect();
        let nl = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5)
            .unwrap()
            .with_table(RhoTable::new(&rows).unwrap())
            .unwrap();
        let u: f64 = 3.321;
        let expected = [
            u.powf(1.5) + u.sin(),
            1.5 * u.sqrt() + u.cos(),
            0.75 / u.sqrt() - u.sin(),
            -0.375 * u.powf(-1.5) - u.cos(),
        ];
        for (k, e) in expected.iter().enumerate() {
            let got = nl.eval_g(u, k).unwrap();
            assert!(
                (got - e).abs() <= TABLE_THIRD_DERIVATIVE_TOL * e.abs().max(1.0),
                "k={k}"
            );
        }
        assert!(nl.eval_g(100.0, 0).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(u in 0.1f64..50.0, p in 0.0f64..3.0, q in 1.05f64..2.0, b in 0.0f64..2.0) {
            let nl = Nonlinearity::pow_exp_lin(1.0, p, 1.0, q, b).unwrap();
            let h = 1e-4 * u;
            for k in 1..=3 {
                let fd = (nl.eval_g(u + h, k - 1).unwrap() - nl.eval_g(u - h, k - 1).unwrap()) / (2.0 * h);
                let exact = nl.eval_g(u, k).unwrap();
                let scale = exact.abs().max(nl.eval_g(u, k - 1).unwrap().abs() / u).max(1e-300);
                prop_assert!((fd - exact).abs() <= 1e-6 * scale, "k={} fd={} exact={}", k, fd, exact);
            }
        }

        #[test]
        fn source_positive_and_decreasing_in_t(u in 0.01f64..20.0, t in -50.0f64..300.0, dt in 0.01f64..5.0) {
            let nl = Nonlinearity::pow_exp_lin(1.0, 1.0, 1.0, 1.5, 1.0).unwrap();
            let s1 = nl.eval_source(u, t).unwrap();
            let s2 = nl.eval_source(u, t + dt).unwrap();
            prop_assert!(s1 > 0.0 && s2 > 0.0 && s2 < s1);
            let expected = (nl.log_lambda() + nl.eval_g(u, 0).unwrap() - t).exp();
            prop_assert_eq!(s1, expected);
        }
    }
}
