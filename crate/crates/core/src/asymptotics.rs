//! Closed-form comparison profile, landmarks and asymptotic predictions.
//!
//! Everything here is a pure function of a [`GammaSnapshot`]. The multiplier
//! `λ` is folded into `g` (the snapshot stores `g(γ) + log λ`), which is the
//! normalisation `f = e^g` the expansions are written in.
//!
//! `X(t) = e^{(T₁ - t)/(n-1)}` overflows long before the quantities built
//! from it do, so every expression goes through `lx = log X` and the
//! logistic pair `u = X/(1+X)`, `v = 1/(1+X)`.

use num_rational::Ratio;
use serde::Serialize;

use crate::config::Problem;
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::ode;
use crate::quadrature::{self, QuadOptions};
use crate::shooting::BifurcationCurve;

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1/(1 + e^{-x})`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `1 + 1/2 + … + 1/n`.
pub fn harmonic(n: u32) -> f64 {
    (1..=n).rev().map(|j| 1.0 / j as f64).sum()
}

fn binomial(k: u32, r: u32) -> f64 {
    (0..r).fold(1.0, |acc, j| acc * (k - j) as f64 / (j + 1) as f64)
}

fn binomial_exact(k: i128, r: i128) -> i128 {
    (0..r).fold(1, |acc, j| acc * (k - j) / (j + 1))
}

/// Checks, in exact rational arithmetic, that
/// `1 + … + 1/k = -Σ_{r=1}^k (-1)^r C(k,r)/r` and
/// `Σ_{r=0}^k (-1)^r C(k,r)/(r+2) = 1/((k+1)(k+2))`.
pub fn exact_identities(k: u32) -> (bool, bool) {
    let k = k as i128;
    let h: Ratio<i128> = (1..=k).map(|j| Ratio::new(1, j)).sum();
    let alt: Ratio<i128> = (1..=k)
        .map(|r| Ratio::new(if r % 2 == 0 { -1 } else { 1 } * binomial_exact(k, r), r))
        .sum();
    let lhs: Ratio<i128> = (0..=k)
        .map(|r| {
            Ratio::new(
                if r % 2 == 0 { 1 } else { -1 } * binomial_exact(k, r),
                r + 2,
            )
        })
        .sum();
    (h == alt, lhs == Ratio::new(1, (k + 1) * (k + 2)))
}

/// `g` and its derivatives at `γ`, plus the landmarks built from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaSnapshot {
    pub gamma: f64,
    pub n: u32,
    /// `g(γ) + log λ`.
    pub g: f64,
    pub gp: f64,
    pub gpp: f64,
    pub gppp: f64,
    pub alpha_n: f64,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    /// `log g'(γ)`.
    pub delta: f64,
    pub f0: f64,
    pub beta_growth: f64,
}

impl GammaSnapshot {
    pub fn new(nl: &Nonlinearity, n: u32, gamma: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invalid(format!("dimension n = {n} < 2")));
        }
        let [g, gp, gpp, gppp] = nl.g_derivs(gamma)?;
        if !(gp > 0.0) {
            return Err(Error::Domain(format!("g'({gamma}) = {gp} is not positive")));
        }
        let nf = n as f64;
        let m = nf - 1.0;
        let g = g + nl.log_lambda();
        let lg = (m * gp / nf).ln();
        let t1 = g + m * lg;
        // log(1 - e^{-x}) for x = γ g'/n > 0
        let x = gamma * gp / nf;
        let log1m = if x > 0.69 {
            (-(-x).exp()).ln_1p()
        } else {
            (-(-x).exp_m1()).ln()
        };
        let t0 = g - m / nf * gamma * gp + m * lg - m * log1m;
        Ok(Self {
            gamma,
            n,
            g,
            gp,
            gpp,
            gppp,
            alpha_n: harmonic(n),
            t1,
            t0,
            delta: gp.ln(),
            f0: nl.f0,
            beta_growth: nl.beta_growth,
        })
    }

    fn m(&self) -> f64 {
        self.n as f64 - 1.0
    }

    /// `n/((n-1) g')`, the limiting slope of `z`.
    pub fn c(&self) -> f64 {
        self.n as f64 / (self.m() * self.gp)
    }

    /// `log X(t)`.
    pub fn log_x(&self, t: f64) -> f64 {
        (self.t1 - t) / self.m()
    }

    /// `(X/(1+X), 1/(1+X))` at `t`.
    pub fn logistic(&self, t: f64) -> (f64, f64) {
        let lx = self.log_x(t);
        (sigmoid(lx), sigmoid(-lx))
    }

    /// The H2 quantity `g - ((n-1)/n) γ g'`.
    pub fn h2(&self) -> f64 {
        self.g - self.m() / self.n as f64 * self.gamma * self.gp
    }

    /// `S₀ = T₁ - (n-1) log(n-1)`, the zero of `V₂`.
    pub fn s0(&self) -> f64 {
        self.t1 - self.m() * self.m().ln()
    }

    /// `S₆ = T₁ - (4q/(q-1) + 1)(n-1) log g'`.
    pub fn s6(&self, q: f64) -> f64 {
        self.t1 - (4.0 * q / (q - 1.0) + 1.0) * self.m() * self.delta
    }

    /// `z(t) = γ - (n/g') log(1 + X)`.
    pub fn z(&self, t: f64) -> f64 {
        self.gamma - self.n as f64 / self.gp * softplus(self.log_x(t))
    }

    /// `(z, z', z'')` at `t`.
    pub fn z_derivs(&self, t: f64) -> (f64, f64, f64) {
        let (u, v) = self.logistic(t);
        let c = self.c();
        (self.z(t), c * u, -c / self.m() * u * v)
    }

    /// Right-hand side of the comparison equation, `e^{g - t + g'(z - γ)}`.
    pub fn z_source(&self, t: f64) -> f64 {
        (self.g - t - self.n as f64 * softplus(self.log_x(t))).exp()
    }

    /// `(V₂, V₂', V₂'')` at `t`.
    pub fn v2(&self, t: f64) -> (f64, f64, f64) {
        let (u, v) = self.logistic(t);
        let m = self.m();
        let nf = self.n as f64;
        let v2 = -1.0 / m + nf / m * v;
        let v2p = nf / (m * m) * u * v;
        let v2pp = nf / (m * m * m) * u * v * (1.0 - 2.0 * v);
        (v2, v2p, v2pp)
    }
}

/// `g(θ) - g + ((n-1)/n)(γ-θ) g' - (n-1) log(((n-1)/n) g')`.
pub fn psi_eval(snap: &GammaSnapshot, nl: &Nonlinearity, theta: f64) -> Result<f64> {
    let m = snap.m();
    let nf = snap.n as f64;
    let g_theta = nl.eval_g(theta, 0)? + nl.log_lambda();
    Ok(g_theta - snap.g + m / nf * (snap.gamma - theta) * snap.gp - m * (m / nf * snap.gp).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticPrediction {
    pub gamma: f64,
    #[serde(rename = "T_pred")]
    pub t_pred: f64,
    pub yprime_t_pred: f64,
    #[serde(rename = "Tprime_pred")]
    pub tprime_pred: f64,
    #[serde(rename = "S_pred")]
    pub s_pred: f64,
    /// `A(γ)` included in `t_pred`, if any.
    pub a_correction: Option<f64>,
    pub declared_error_order: DeclaredOrders,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeclaredOrders {
    #[serde(rename = "T")]
    pub t: &'static str,
    pub yprime_t: &'static str,
    #[serde(rename = "Tprime")]
    pub tprime: &'static str,
    #[serde(rename = "S")]
    pub s: &'static str,
}

const ORDERS: DeclaredOrders = DeclaredOrders {
    t: "O((log g')^2/g' + (log g')^(beta+1)/g'^beta + exp(-(g - ((n-1)/n) gamma g')))",
    yprime_t: "O(delta^2 g''/g'^4 + exp(-(g - ((n-1)/n) gamma g'))/g')",
    tprime: "O(g'' (log g')^4/g')",
    s: "O(delta^4 g''^2/g'^4) inside the logarithm",
};

/// Leading-order predictions for `T`, `y'(T)`, `T'` and the turning point.
pub fn predict_all(snap: &GammaSnapshot) -> AsymptoticPrediction {
    let m = snap.m();
    let nf = snap.n as f64;
    let (gp, gpp, a) = (snap.gp, snap.gpp, snap.alpha_n);
    AsymptoticPrediction {
        gamma: snap.gamma,
        t_pred: snap.h2() + m * (m / nf * gp).ln() + a * m * snap.gamma * gpp / gp,
        yprime_t_pred: nf / (m * gp) + nf * nf * a * gpp / (m * gp * gp * gp),
        tprime_pred: (gp - m * snap.gamma * gpp) / nf,
        s_pred: snap.t1 + m * (m * gpp / (gp * gp)).ln(),
        a_correction: None,
        declared_error_order: ORDERS,
    }
}

impl AsymptoticPrediction {
    /// Adds `A(γ)` to `T_pred`.
    pub fn with_a_correction(mut self, a: f64) -> Self {
        self.t_pred += a;
        self.a_correction = Some(a);
        self
    }
}

/// `t₀ = (n+3) log g'`, the matching time of the correction term.
pub fn a_correction_t0(snap: &GammaSnapshot) -> f64 {
    (snap.n as f64 + 3.0) * snap.delta
}

/// `A(γ) = ∫_{T+θ₀}^{t₀+θ₀} [(1+e^{-t})^{1/(n-1)} - 1] dt` with
/// `θ₀ = -log f(0) + (n-1) log y'(t₀)`. `yprime_t0` comes from a computed
/// trajectory. Zero when `f(0) = 0` or `T ≥ t₀`.
pub fn a_correction(snap: &GammaSnapshot, t_first_zero: f64, yprime_t0: f64) -> Result<f64> {
    let t0 = a_correction_t0(snap);
    if snap.f0 == 0.0 || t_first_zero >= t0 {
        return Ok(0.0);
    }
    if !(yprime_t0 > 0.0) {
        return Err(Error::Invalid(format!(
            "y'(t0) = {yprime_t0} must be positive"
        )));
    }
    let m = snap.m();
    let theta0 = -snap.f0.ln() + m * yprime_t0.ln();
    let q = quadrature::integrate(
        |t| (softplus(-t) / m).exp_m1(),
        t_first_zero + theta0,
        t0 + theta0,
        &QuadOptions {
            rel_tol: 1e-12,
            ..QuadOptions::default()
        },
    )?;
    Ok(q.value)
}

/// `∫_t^∞ (z')^{k+1} ds` in closed form:
/// `c^{k+1} (n-1) [-α_k + log(1+X) - Σ_{r=1}^k (-1)^r C(k,r)/(r (1+X)^r)]`.
///
/// For small `X/(1+X)` the bracket is summed as the equivalent tail
/// `Σ_{j>k} u^j/j`, which avoids cancellation.
pub fn lemma34_integral(k: u32, snap: &GammaSnapshot, t: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let lx = snap.log_x(t);
    let (u, v) = (sigmoid(lx), sigmoid(-lx));
    let bracket = if u >= 0.5 {
        let s: f64 = (1..=k)
            .map(|r| sign(r) * binomial(k, r) / r as f64 * v.powi(r as i32))
            .sum();
        -harmonic(k) + softplus(lx) - s
    } else {
        log_tail(u, k)
    };
    Ok(snap.c().powi(k as i32 + 1) * snap.m() * bracket)
}

fn sign(r: u32) -> f64 {
    if r.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `Σ_{j>k} u^j/j = -log(1-u) - Σ_{j≤k} u^j/j` for `0 ≤ u < 1`.
fn log_tail(u: f64, k: u32) -> f64 {
    let mut term = u.powi(k as i32 + 1);
    let mut sum = 0.0;
    let mut j = k + 1;
    while term > 0.0 {
        let add = term / j as f64;
        sum += add;
        if add <= 1e-17 * sum {
            break;
        }
        term *= u;
        j += 1;
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma45 {
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    #[serde(rename = "I")]
    pub i: f64,
}

/// `I₁ = ∫_t^∞ (z')^{n-2} z'' V₂'`, `I₂ = ∫_t^∞ (z')^n V₂'` and
/// `I = (g''/g') I₁ + g'' I₂`.
pub fn lemma45_integrals(snap: &GammaSnapshot, t: f64) -> Lemma45 {
    let n = snap.n;
    let nf = n as f64;
    let m = snap.m();
    let c = snap.c();
    let (u, v) = snap.logistic(t);
    let bracket = if u >= 0.2 {
        let s: f64 = (0..n)
            .map(|r| sign(r) * binomial(n - 1, r) / (r as f64 + 2.0) * v.powi(r as i32 + 2))
            .sum();
        -1.0 / (nf * (nf + 1.0)) + s
    } else {
        // the same bracket is -∫_0^u w^{n-1}(1-w) dw
        -(u.powi(n as i32) / nf - u.powi(n as i32 + 1) / (nf + 1.0))
    };
    let i1 = snap.gp / m * c.powi(n as i32) * bracket;
    let i2 = snap.gp / (nf + 1.0) * c.powi(n as i32 + 1) * u.powi(n as i32 + 1);
    Lemma45 {
        i1,
        i2,
        i: snap.gpp / snap.gp * i1 + snap.gpp * i2,
    }
}

/// The combined display for `I`:
/// `c^n g'' [1/n + (1/(n-1)) Σ (-1)^r C(n-1,r)/((r+2)(1+X)^{r+2})]
///  + c^n g'' (n/(n²-1)) (X^{n+1} - (1+X)^{n+1})/(1+X)^{n+1}`.
pub fn lemma45_combined(snap: &GammaSnapshot, t: f64) -> f64 {
    let n = snap.n;
    let nf = n as f64;
    let (u, v) = snap.logistic(t);
    let s: f64 = (0..n)
        .map(|r| sign(r) * binomial(n - 1, r) / (r as f64 + 2.0) * v.powi(r as i32 + 2))
        .sum();
    let pre = snap.c().powi(n as i32) * snap.gpp;
    pre * (1.0 / nf + s / (nf - 1.0)) + pre * nf / (nf * nf - 1.0) * (u.powi(n as i32 + 1) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop33Root {
    pub root: f64,
    /// `|X - a - b/a^{n-1}| a^{2n-1}/b²` (the constant in the second-order bound).
    pub c: f64,
    pub iterations: usize,
}

/// Root near `a` of `x^n - a x^{n-1} - b`, by bracketed Newton.
pub fn prop33_root(a: f64, n: u32, b: f64) -> Result<Prop33Root> {
    if !(a > 0.0 && a.is_finite()) || n < 1 || !b.is_finite() {
        return Err(Error::Invalid(format!(
            "prop33_root needs a > 0, n >= 1 (a = {a}, n = {n}, b = {b})"
        )));
    }
    let nf = n as f64;
    let m = nf - 1.0;
    let floor = -a.powi(n as i32) * m.powi(n as i32 - 1) / nf.powi(n as i32);
    if n > 1 && b <= floor {
        return Err(Error::NonConvergence(format!(
            "b = {b} outside the basin (must exceed {floor:e})"
        )));
    }
    let f = |x: f64| x.powi(n as i32 - 1) * (x - a) - b;
    let df = |x: f64| x.powi(n as i32 - 2) * (nf * x - m * a);
    let (mut lo, mut hi) = if b >= 0.0 {
        (a, a + b / a.powi(n as i32 - 1))
    } else {
        (m * a / nf, a)
    };
    if b == 0.0 {
        return Ok(Prop33Root {
            root: a,
            c: 0.0,
            iterations: 0,
        });
    }
    let mut x = a;
    for it in 1..=200 {
        let fx = f(x);
        if fx == 0.0 {
            lo = x;
            hi = x;
        } else if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - fx / df(x);
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs()
            || hi - lo <= 4.0 * f64::EPSILON * x.abs()
        {
            let c =
                (next - a - b / a.powi(n as i32 - 1)).abs() * a.powi(2 * n as i32 - 1) / (b * b);
            return Ok(Prop33Root {
                root: next,
                c,
                iterations: it,
            });
        }
        x = next;
    }
    Err(Error::NonConvergence(format!(
        "prop33_root(a = {a}, n = {n}, b = {b})"
    )))
}

/// Default bound on the max/min ratio of normalised errors.
pub const DECAY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quantity {
    #[serde(rename = "T")]
    T,
    #[serde(rename = "yprime_T")]
    YPrimeT,
    #[serde(rename = "Tprime")]
    TPrime,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::T => "T",
            Quantity::YPrimeT => "yprime_T",
            Quantity::TPrime => "Tprime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub gamma: f64,
    pub gprime: f64,
    #[serde(rename = "Q")]
    pub quantity: Quantity,
    pub computed: f64,
    pub predicted: f64,
    pub raw_err: f64,
    pub normalized_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayVerdict {
    #[serde(rename = "Q")]
    pub quantity: Quantity,
    /// `max/min` of the normalised error over the upper half of the grid.
    pub ratio: f64,
    pub bounded: bool,
    /// Raw error strictly decreasing over the upper half of the grid.
    pub raw_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub verdicts: Vec<DecayVerdict>,
    pub factor: f64,
    /// `log10` of the ratio of the largest to the smallest `g'` on the grid.
    pub gprime_decades: f64,
}

impl DecayReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "gamma,gprime,Q,computed,predicted,raw_err,normalized_err"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{:e},{:e},{},{:e},{:e},{:e},{:e}",
                r.gamma,
                r.gprime,
                r.quantity.as_str(),
                r.computed,
                r.predicted,
                r.raw_err,
                r.normalized_err
            )?;
        }
        Ok(())
    }

    pub fn verdict(&self, q: Quantity) -> Option<&DecayVerdict> {
        self.verdicts.iter().find(|v| v.quantity == q)
    }

    pub fn series(&self, q: Quantity) -> Vec<&DecayRow> {
        self.rows.iter().filter(|r| r.quantity == q).collect()
    }
}

/// Size of the error terms in the expansions of `T`, `y'(T)` and `T'`.
pub fn error_scales(snap: &GammaSnapshot) -> [f64; 3] {
    let (gp, gpp, d) = (snap.gp, snap.gpp, snap.delta);
    let b = snap.beta_growth;
    let e_h2 = (-snap.h2()).exp();
    let mut t = d * d / gp + e_h2;
    if b < 1.0 {
        t += d.powf(b + 1.0) / gp.powf(b);
    }
    let yp = d * d * gpp / gp.powi(4) + e_h2 / gp;
    let tp = gpp * d.powi(4) / gp;
    [t, yp, tp]
}

/// Computed against predicted `T`, `y'(T)` and `T'` over a computed curve,
/// with errors divided by the size of the corresponding error term.
///
/// `T'` rows appear only when the curve carries `Tprime_v1`.
pub fn error_decay_report(
    p: &Problem,
    curve: &BifurcationCurve,
    factor: f64,
) -> Result<DecayReport> {
    let n = p.n();
    let flags = p.nl.exploratory_flags(n);
    if !flags.is_empty() {
        return Err(Error::HypothesesUnmet(flags.join("; ")));
    }
    let mut rows = Vec::new();
    let mut gps = Vec::new();
    for r in &curve.rows {
        let snap = GammaSnapshot::new(&p.nl, n, r.gamma)?;
        let mut pred = predict_all(&snap);
        if snap.f0 > 0.0 && r.t < a_correction_t0(&snap) {
            let t0 = a_correction_t0(&snap);
            let start = ode::default_start_t(p, r.gamma)?;
            let tr: ode::FlowTrajectory =
                ode::integrate_t(p, r.gamma, &start, ode::StopRule::FirstZero)?;
            let yp = tr
                .state_at(t0)
                .map(|s| tr.slope(t0, &s))
                .ok_or_else(|| Error::Invalid(format!("t0 = {t0} is off the trajectory")))?;
            pred = pred.with_a_correction(a_correction(&snap, r.t, yp)?);
        }
        let [st, syp, stp] = error_scales(&snap);
        gps.push(snap.gp);
        let mut push = |q, computed: f64, predicted: f64, scale: f64| {
            let raw = (computed - predicted).abs();
            rows.push(DecayRow {
                gamma: r.gamma,
                gprime: snap.gp,
                quantity: q,
                computed,
                predicted,
                raw_err: raw,
                normalized_err: raw / scale,
            });
        };
        push(Quantity::T, r.t, pred.t_pred, st);
        push(Quantity::YPrimeT, r.yprime_t, pred.yprime_t_pred, syp);
        if let Some(tp) = r.tprime_v1 {
            push(Quantity::TPrime, tp, pred.tprime_pred, stp);
        }
    }
    let verdicts = [Quantity::T, Quantity::YPrimeT, Quantity::TPrime]
        .into_iter()
        .filter_map(|q| {
            let s: Vec<&DecayRow> = rows.iter().filter(|r| r.quantity == q).collect();
            if s.is_empty() {
                return None;
            }
            let upper = &s[s.len() / 2..];
            let (lo, hi) = upper.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
                (lo.min(r.normalized_err), hi.max(r.normalized_err))
            });
            let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            Some(DecayVerdict {
                quantity: q,
                ratio,
                bounded: ratio <= factor,
                raw_decreasing: upper.windows(2).all(|w| w[1].raw_err < w[0].raw_err),
            })
        })
        .collect();
    let gmin = gps.iter().cloned().fold(f64::INFINITY, f64::min);
    let gmax = gps.iter().cloned().fold(0.0, f64::max);
    Ok(DecayReport {
        rows,
        verdicts,
        factor,
        gprime_decades: (gmax / gmin).log10(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square_snap(n: u32, gamma: f64) -> GammaSnapshot {
        GammaSnapshot::new(
            &Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap(),
            n,
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(2), 1.5);
        assert_relative_eq!(harmonic(3), 11.0 / 6.0, max_relative = 1e-15);
        for k in 1..=12 {
            assert_eq!(exact_identities(k), (true, true), "k = {k}");
        }
        // k = 2: 1/2 - 2/3 + 1/4 = 1/12
        assert_eq!(
            Ratio::new(1, 2) - Ratio::new(2, 3) + Ratio::new(1i128, 4),
            Ratio::new(1, 12)
        );
    }

    #[test]
    fn landmarks() {
        let s = square_snap(2, 5.0);
        assert_relative_eq!(s.z(s.t0), 0.0, epsilon = 1e-12);
        let (_, zp, _) = s.z_derivs(s.t1);
        assert_relative_eq!(zp, 2.0 / s.gp * 0.5, max_relative = 1e-15);
        let (z, zp, _) = s.z_derivs(1e6);
        assert_relative_eq!(z, 5.0, max_relative = 1e-15);
        assert!(zp < 1e-100);
        for n in [2, 3, 4] {
            let s = square_snap(n, 5.0);
            assert!(s.v2(s.s0()).0.abs() < 1e-14);
            assert_relative_eq!(s.v2(1e5).0, 1.0, max_relative = 1e-15);
            assert_relative_eq!(s.v2(-1e5).0, -1.0 / (n as f64 - 1.0), max_relative = 1e-15);
        }
    }

    #[test]
    fn no_overflow_far_from_t1() {
        let s = square_snap(3, 20.0);
        for t in [-1e5, -300.0, s.t1, 1e5] {
            let (z, zp, zpp) = s.z_derivs(t);
            let (a, b, c) = s.v2(t);
            assert!([z, zp, zpp, a, b, c].iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn psi_examples() {
        let nl = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap();
        let s = GammaSnapshot::new(&nl, 2, 5.0).unwrap();
        assert_relative_eq!(
            psi_eval(&s, &nl, 5.0).unwrap(),
            -(5f64).ln(),
            max_relative = 1e-14
        );
        // convex in θ: midpoint below the larger endpoint value
        let (a, b) = (0.5, 5.0);
        let mid = psi_eval(&s, &nl, 0.5 * (a + b)).unwrap();
        assert!(
            mid <= psi_eval(&s, &nl, a)
                .unwrap()
                .max(psi_eval(&s, &nl, b).unwrap())
        );
    }

    #[test]
    fn prediction_arithmetic() {
        let nl = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 1.5).unwrap();
        let p = predict_all(&GammaSnapshot::new(&nl, 2, 100.0).unwrap());
        assert_relative_eq!(p.tprime_pred, 3.75, max_relative = 1e-14);
        let p = predict_all(&square_snap(2, 5.0));
        assert_relative_eq!(p.t_pred, 5f64.ln() + 1.5, max_relative = 1e-14);
        let again = predict_all(&square_snap(2, 5.0));
        assert_eq!(p, again);
    }

    #[test]
    fn a_correction_vanishes_when_f0_is_zero() {
        let nl = Nonlinearity::pow_exp(1.0, 1.0, 1.0, 2.0).unwrap();
        let s = GammaSnapshot::new(&nl, 2, 3.0).unwrap();
        assert_eq!(a_correction(&s, -1.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn a_correction_n2_closed_form() {
        // for n = 2 the integrand is e^{-t}
        let nl = Nonlinearity::pow_exp(1.0, 0.0, 1.0, 2.0).unwrap();
        let s = GammaSnapshot::new(&nl, 2, 3.0).unwrap();
        let (tz, yp): (f64, f64) = (0.5, 0.2);
        let t0 = a_correction_t0(&s);
        let th = -s.f0.ln() + yp.ln();
        let exact = (-(tz + th)).exp() - (-(t0 + th)).exp();
        assert_relative_eq!(
            a_correction(&s, tz, yp).unwrap(),
            exact,
            max_relative = 1e-10
        );
    }

    #[test]
    fn lemma34_literal_and_tail_agree() {
        for n in [2u32, 3] {
            let s = square_snap(n, 5.0);
            for k in 1..=6 {
                // pick t where u is just above the switch so both branches are accurate
                let t = s.t1;
                let (u, v) = s.logistic(t);
                let lit = -harmonic(k) + softplus(s.log_x(t))
                    - (1..=k)
                        .map(|r| sign(r) * binomial(k, r) / r as f64 * v.powi(r as i32))
                        .sum::<f64>();
                assert_relative_eq!(lit, log_tail(u, k), max_relative = 1e-11);
            }
            // X → 0: value → 0
            assert!(lemma34_integral(2, &s, s.t1 + 200.0).unwrap().abs() < 1e-30);
            // decreasing in t
            let a = lemma34_integral(2, &s, s.t1).unwrap();
            let b = lemma34_integral(2, &s, s.t1 + 1.0).unwrap();
            assert!(a > b && b > 0.0);
        }
    }

    #[test]
    fn lemma45_forms_agree() {
        for n in [2u32, 3, 4] {
            let s = square_snap(n, 5.0);
            for dt in [-3.0, -1.0, 0.0, 1.0] {
                let t = s.t1 + dt;
                let l = lemma45_integrals(&s, t);
                assert_relative_eq!(
                    l.i,
                    lemma45_combined(&s, t),
                    max_relative = 1e-10,
                    epsilon = 1e-16
                );
            }
            // I2 at X = 1
            let l = lemma45_integrals(&s, s.t1);
            let c = s.c();
            assert_relative_eq!(
                l.i2,
                s.gp / (n as f64 + 1.0) * c.powi(n as i32 + 1) / 2f64.powi(n as i32 + 1),
                max_relative = 1e-14
            );
            // X → 0 limit of the combined display
            assert!(
                lemma45_combined(&s, s.t1 + 60.0 * s.m()).abs() < 1e-12 * c.powi(n as i32) * s.gpp
            );
        }
        let s = square_snap(2, 5.0);
        assert_relative_eq!(
            lemma45_integrals(&s, s.t1).i2,
            1.0 / (3.0 * s.gp * s.gp),
            max_relative = 1e-14
        );
    }

    #[test]
    fn prop33_examples() {
        assert_eq!(prop33_root(1.0, 2, 0.0).unwrap().root, 1.0);
        let r = prop33_root(1.0, 2, 0.1).unwrap();
        assert_relative_eq!(r.root, (1.0 + 1.4f64.sqrt()) / 2.0, max_relative = 1e-15);
        let r = prop33_root(2.0, 3, 0.01).unwrap();
        assert!((r.root - 2.0 - 0.01 / 4.0).abs() <= 1e-4);
        let r = prop33_root(2.0, 3, -0.5).unwrap();
        assert!((r.root.powi(3) - 2.0 * r.root.powi(2) + 0.5).abs() < 1e-14);
        assert!(matches!(
            prop33_root(1.0, 2, -0.3),
            Err(Error::NonConvergence(_))
        ));
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn prop33_second_order(a in 0.5f64..4.0, n in 2u32..6, e in -6i32..-2) {
            let b = 10f64.powi(e) * a.powi(n as i32);
            let r = prop33_root(a, n, b).unwrap();
            prop_assert!(r.c < 2.0 * n as f64, "C = {}", r.c);
        }
    }
}
