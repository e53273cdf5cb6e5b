use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::{Nonlinearity, ScanSpec};

/// Solver settings shared by every operation on one problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConfig {
    /// Dimension `n ≥ 2`.
    pub n: u32,
    /// Singular weight exponent `β ∈ [0, n)`.
    pub beta: f64,
    pub rtol: f64,
    pub atol: f64,
    pub event_tol: f64,
    /// Tail start offset in units of `(n-1) log g'(γ)` beyond `T₁`.
    pub tail_c: f64,
    /// Apply one Picard refinement to the tail start.
    pub picard: bool,
    /// Lowest `t` searched for the first zero.
    pub t_floor: f64,
    pub max_steps: usize,
    /// Budget for `log λ + g(γ)` on paths that form `f(γ)`.
    pub exponent_cap: f64,
    /// `γ ≤ max(2 s₀, gamma_switch)` starts from the origin.
    pub gamma_switch: f64,
    pub scan: ScanSpecConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanSpecConfig {
    pub u_max: f64,
    pub points: usize,
}

impl From<ScanSpecConfig> for ScanSpec {
    fn from(s: ScanSpecConfig) -> Self {
        ScanSpec {
            u_max: s.u_max,
            points: s.points,
        }
    }
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let s = ScanSpec::default();
        Self {
            n: 2,
            beta: 0.0,
            rtol: 1e-10,
            atol: 1e-12,
            event_tol: 1e-12,
            tail_c: 6.0,
            picard: false,
            t_floor: -200.0,
            max_steps: 400_000,
            exponent_cap: 600.0,
            gamma_switch: 1.0,
            scan: ScanSpecConfig {
                u_max: s.u_max,
                points: s.points,
            },
        }
    }
}

impl ProblemConfig {
    pub fn with_n(n: u32) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    /// Same settings with both tolerances scaled by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            rtol: self.rtol * factor,
            atol: self.atol * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Invalid(format!("n = {} must be at least 2", self.n)));
        }
        if !(0.0..self.n as f64).contains(&self.beta) {
            return Err(Error::Domain(format!(
                "beta = {} must lie in [0, n)",
                self.beta
            )));
        }
        for (name, v) in [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("event_tol", self.event_tol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Invalid(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        if !(self.tail_c > 0.0) {
            return Err(Error::Invalid(format!(
                "tail_c = {} must be positive",
                self.tail_c
            )));
        }
        if self.scan.points == 0 || !(self.scan.u_max > 0.0) {
            return Err(Error::Invalid("convexity scan must be nonempty".into()));
        }
        Ok(())
    }
}

/// A nonlinearity together with solver settings, caching `s₀`.
#[derive(Debug)]
pub struct Problem {
    pub nl: Nonlinearity,
    pub cfg: ProblemConfig,
    s0: OnceLock<Option<f64>>,
}

impl Clone for Problem {
    fn clone(&self) -> Self {
        let s0 = OnceLock::new();
        if let Some(v) = self.s0.get() {
            let _ = s0.set(*v);
        }
        Self {
            nl: self.nl.clone(),
            cfg: self.cfg.clone(),
            s0,
        }
    }
}

impl Problem {
    pub fn new(nl: Nonlinearity, cfg: ProblemConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            nl,
            cfg,
            s0: OnceLock::new(),
        })
    }

    pub fn n(&self) -> u32 {
        self.cfg.n
    }

    /// Convexity threshold, or `None` when `g''` never becomes positive.
    pub fn s0(&self) -> Option<f64> {
        *self
            .s0
            .get_or_init(|| self.nl.find_s0(self.cfg.scan.into()).ok().map(|c| c.s0))
    }

    /// Whether `γ` is started from the origin rather than from the tail.
    pub fn uses_radial_start(&self, gamma: f64) -> bool {
        match self.s0() {
            None => true,
            Some(s0) => {
                gamma <= (2.0 * s0).max(self.cfg.gamma_switch)
                    || !matches!(self.nl.eval_g(gamma, 1), Ok(g1) if g1 > 1.0)
            }
        }
    }

    pub fn with_config(&self, cfg: ProblemConfig) -> Result<Self> {
        cfg.validate()?;
        let p = Self {
            nl: self.nl.clone(),
            cfg,
            s0: OnceLock::new(),
        };
        if let Some(v) = self.s0.get() {
            if p.cfg.scan == self.cfg.scan {
                let _ = p.s0.set(*v);
            }
        }
        Ok(p)
    }
}
