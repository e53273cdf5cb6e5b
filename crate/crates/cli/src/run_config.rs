//! Run configuration: defaults, a flat `key=value` file and flag overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qshoot_core::nonlinearity::RhoTable;
use qshoot_core::{Family, Nonlinearity, ProblemConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every recognised key, in canonical order.
pub const KEYS: &[&str] = &[
    "family",
    "lambda",
    "p",
    "a",
    "q",
    "b",
    "rho-table",
    "n",
    "beta-weight",
    "gamma",
    "gamma-min",
    "gamma-max",
    "gamma-steps",
    "tol",
    "tail-c",
    "picard",
    "derivative",
    "out",
    "format",
    "seed",
    "trajectory",
    "profile",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Text,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            _ => Err("expected csv, json or text".into()),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub lambda: f64,
    pub p: f64,
    pub a: f64,
    pub q: f64,
    pub b: f64,
    pub rho_table: Option<PathBuf>,
    pub n: u32,
    pub beta_weight: f64,
    pub gamma: Option<f64>,
    pub gamma_min: Option<f64>,
    pub gamma_max: Option<f64>,
    pub gamma_steps: Option<usize>,
    pub tol: f64,
    pub tail_c: f64,
    pub picard: bool,
    pub derivative: bool,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub trajectory: Option<PathBuf>,
    pub profile: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: Family::PowExp,
            lambda: 1.0,
            p: 0.0,
            a: 1.0,
            q: 2.0,
            b: 0.0,
            rho_table: None,
            n: 2,
            beta_weight: 0.0,
            gamma: None,
            gamma_min: None,
            gamma_max: None,
            gamma_steps: None,
            tol: 1e-10,
            tail_c: 6.0,
            picard: false,
            derivative: false,
            out: None,
            format: None,
            seed: None,
            trajectory: None,
            profile: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.trim()
        .parse::<T>()
        .map_err(|e| format!("invalid value '{v}' for key '{key}': {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!(
            "invalid value '{v}' for key '{key}': expected true or false"
        )),
    }
}

/// Reads `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_file_text(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got '{line}'", i + 1))?;
        let k = k.trim().replace('_', "-");
        if !KEYS.contains(&k.as_str()) {
            return Err(format!("line {}: unknown key '{k}'", i + 1));
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    /// Applies `key=value` pairs over `self`.
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<(), String> {
        for (k, v) in kv {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "family" => {
                self.family = v
                    .trim()
                    .replace('-', "_")
                    .parse::<Family>()
                    .map_err(|e| format!("key 'family': {e}"))?
            }
            "lambda" => self.lambda = parse(key, v)?,
            "p" => self.p = parse(key, v)?,
            "a" => self.a = parse(key, v)?,
            "q" => self.q = parse(key, v)?,
            "b" => self.b = parse(key, v)?,
            "rho-table" => self.rho_table = Some(PathBuf::from(v.trim())),
            "n" => self.n = parse(key, v)?,
            "beta-weight" => self.beta_weight = parse(key, v)?,
            "gamma" => self.gamma = Some(parse(key, v)?),
            "gamma-min" => self.gamma_min = Some(parse(key, v)?),
            "gamma-max" => self.gamma_max = Some(parse(key, v)?),
            "gamma-steps" => self.gamma_steps = Some(parse(key, v)?),
            "tol" => self.tol = parse(key, v)?,
            "tail-c" => self.tail_c = parse(key, v)?,
            "picard" => self.picard = parse_bool(key, v)?,
            "derivative" => self.derivative = parse_bool(key, v)?,
            "out" => self.out = Some(PathBuf::from(v.trim())),
            "format" => self.format = Some(parse(key, v)?),
            "seed" => self.seed = Some(parse(key, v)?),
            "trajectory" => self.trajectory = Some(PathBuf::from(v.trim())),
            "profile" => self.profile = Some(PathBuf::from(v.trim())),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order; unset
    /// optional keys are omitted.
    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        for &k in KEYS {
            let v = match k {
                "family" => Some(self.family.name().to_string()),
                "lambda" => Some(self.lambda.to_string()),
                "p" => Some(self.p.to_string()),
                "a" => Some(self.a.to_string()),
                "q" => Some(self.q.to_string()),
                "b" => Some(self.b.to_string()),
                "rho-table" => path(&self.rho_table),
                "n" => Some(self.n.to_string()),
                "beta-weight" => Some(self.beta_weight.to_string()),
                "gamma" => self.gamma.map(|v| v.to_string()),
                "gamma-min" => self.gamma_min.map(|v| v.to_string()),
                "gamma-max" => self.gamma_max.map(|v| v.to_string()),
                "gamma-steps" => self.gamma_steps.map(|v| v.to_string()),
                "tol" => Some(self.tol.to_string()),
                "tail-c" => Some(self.tail_c.to_string()),
                "picard" => Some(self.picard.to_string()),
                "derivative" => Some(self.derivative.to_string()),
                "out" => path(&self.out),
                "format" => self.format.map(|f| f.to_string()),
                "seed" => self.seed.map(|v| v.to_string()),
                "trajectory" => path(&self.trajectory),
                "profile" => path(&self.profile),
                _ => None,
            };
            if let Some(v) = v {
                put(k, v);
            }
        }
        s
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity, String> {
        let nl = match self.family {
            Family::Linear => Nonlinearity::linear(self.lambda),
            Family::Exp => Nonlinearity::exp(self.lambda),
            Family::PowExp => Nonlinearity::pow_exp(self.lambda, self.p, self.a, self.q),
            Family::PowExpLin => {
                Nonlinearity::pow_exp_lin(self.lambda, self.p, self.a, self.q, self.b)
            }
        }
        .map_err(|e| e.to_string())?;
        match &self.rho_table {
            None => Ok(nl),
            Some(path) => nl
                .with_table(read_rho_table(path)?)
                .map_err(|e| e.to_string()),
        }
    }

    pub fn problem_config(&self) -> ProblemConfig {
        let base = ProblemConfig::with_n(self.n);
        ProblemConfig {
            beta: self.beta_weight,
            rtol: self.tol,
            atol: self.tol * 1e-2,
            event_tol: base.event_tol.min(self.tol * 1e-2),
            tail_c: self.tail_c,
            picard: self.picard,
            ..base
        }
    }

    /// The `γ` values to run: a log grid from `gamma-min`, `gamma-max`,
    /// `gamma-steps` when all three are set, else the single `gamma`.
    ///
    /// With a seed, interior grid points are jittered by up to a quarter
    /// of the log spacing.
    pub fn gamma_grid(&self) -> Result<Vec<f64>, String> {
        match (self.gamma_min, self.gamma_max, self.gamma_steps) {
            (Some(lo), Some(hi), Some(k)) => {
                let mut g = qshoot_core::log_grid(lo, hi, k).map_err(|e| e.to_string())?;
                if let Some(seed) = self.seed {
                    jitter(&mut g, seed);
                }
                Ok(g)
            }
            (None, None, None) => self.gamma.map(|g| vec![g]).ok_or_else(|| {
                "missing gamma grid: set gamma, or gamma-min, gamma-max and gamma-steps".to_string()
            }),
            _ => Err("gamma-min, gamma-max and gamma-steps must be given together".into()),
        }
    }
}

fn jitter(g: &mut [f64], seed: u64) {
    if g.len() < 3 {
        return;
    }
    let step = (g[1] / g[0]).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = g.len();
    for x in &mut g[1..k - 1] {
        let s: f64 = rng.gen_range(-0.25..0.25);
        *x *= (s * step).exp();
    }
}

/// Reads a headerless CSV of `u, ρ, ρ', ρ'', ρ'''` rows.
pub fn read_rho_table(path: &Path) -> Result<RhoTable, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("rho-table {}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("rho-table {}: {e}", path.display()))?;
        if rec.len() != 5 {
            return Err(format!(
                "rho-table {} row {}: expected 5 columns, got {}",
                path.display(),
                i + 1,
                rec.len()
            ));
        }
        let mut row = [0.0; 5];
        for (j, f) in rec.iter().enumerate() {
            row[j] = f
                .parse()
                .map_err(|e| format!("rho-table {} row {}: '{f}': {e}", path.display(), i + 1))?;
        }
        rows.push(row);
    }
    RhoTable::new(&rows).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        let mut c = RunConfig::default();
        c.set("family", "pow-exp-lin").unwrap();
        c.set("q", "1.5").unwrap();
        c.set("gamma", "0.1").unwrap();
        c.set("format", "json").unwrap();
        c.set("seed", "7").unwrap();
        let text = c.to_canonical();
        let mut back = RunConfig::default();
        back.apply(&parse_file_text(&text).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_canonical(), text);
    }

    #[test]
    fn unknown_and_malformed_keys() {
        assert!(parse_file_text("bogus=1").unwrap_err().contains("bogus"));
        let mut c = RunConfig::default();
        let e = c.set("q", "abc").unwrap_err();
        assert!(e.contains("'q'"), "{e}");
    }

    #[test]
    fn grids() {
        let mut c = RunConfig::default();
        assert!(c.gamma_grid().is_err());
        c.gamma = Some(2.0);
        assert_eq!(c.gamma_grid().unwrap(), vec![2.0]);
        c.gamma_min = Some(1.0);
        assert!(c.gamma_grid().is_err());
        c.gamma_max = Some(100.0);
        c.gamma_steps = Some(5);
        let g = c.gamma_grid().unwrap();
        assert_eq!(g.len(), 5);
        c.seed = Some(3);
        let j = c.gamma_grid().unwrap();
        assert_eq!(j, c.gamma_grid().unwrap());
        assert_eq!((j[0], j[4]), (g[0], g[4]));
        assert!(j.windows(2).all(|w| w[1] > w[0]));
    }
}
