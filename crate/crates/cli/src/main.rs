mod commands;
mod output;
mod run_config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run_config::{parse_file_text, RunConfig};

#[derive(Parser)]
#[command(
    name = "qshoot",
    version,
    about = "Radial shooting for -Δₙu = λ f(u) on the unit ball"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// First zero, R and λ for one γ
    Shoot(Flags),
    /// Bifurcation curve over a γ grid
    Sweep(Flags),
    /// V₁, T'(γ) by two routes, turning points and the uniqueness window
    Linearize(Flags),
    /// Run a self-check suite: identities, oracles, asymptotics, regimes or all
    Verify {
        suite: String,
        #[command(flatten)]
        flags: Flags,
    },
    /// Small-γ behaviour of T(γ)
    Regimes(Flags),
    /// Weighted problem via the reduction, checked against direct integration
    Singular(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// key=value file; flags take precedence over it
    #[arg(long)]
    config: Option<PathBuf>,
    /// linear | exp | pow-exp | pow-exp-lin
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// power of u in f
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    q: Option<String>,
    /// linear coefficient in the exponent (pow-exp-lin)
    #[arg(long)]
    b: Option<String>,
    /// headerless CSV of u, rho, rho', rho'', rho''' added to the exponent
    #[arg(long = "rho-table")]
    rho_table: Option<String>,
    /// weight exponent β in λ f(u)/|x|^β
    #[arg(long = "beta-weight")]
    beta_weight: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "gamma-min")]
    gamma_min: Option<String>,
    #[arg(long = "gamma-max")]
    gamma_max: Option<String>,
    #[arg(long = "gamma-steps")]
    gamma_steps: Option<String>,
    /// relative integrator tolerance (absolute is 1e-2 of it)
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "tail-c")]
    tail_c: Option<String>,
    /// refine the tail start with one Picard iterate
    #[arg(long)]
    picard: bool,
    /// add T' columns to a sweep
    #[arg(long)]
    derivative: bool,
    #[arg(long)]
    out: Option<String>,
    /// csv | json | text
    #[arg(long)]
    format: Option<String>,
    /// seed for grid jitter
    #[arg(long)]
    seed: Option<String>,
    /// write the trajectory CSV here
    #[arg(long)]
    trajectory: Option<String>,
    /// write the unit-ball profile CSV here (shoot)
    #[arg(long)]
    profile: Option<String>,
    /// print the resolved configuration as key=value lines and exit
    #[arg(long = "dump-config")]
    dump_config: bool,
}

impl Flags {
    fn pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v.clone());
            }
        };
        put("family", &self.family);
        put("lambda", &self.lambda);
        put("p", &self.p);
        put("a", &self.a);
        put("q", &self.q);
        put("b", &self.b);
        put("rho-table", &self.rho_table);
        put("beta-weight", &self.beta_weight);
        put("n", &self.n);
        put("gamma", &self.gamma);
        put("gamma-min", &self.gamma_min);
        put("gamma-max", &self.gamma_max);
        put("gamma-steps", &self.gamma_steps);
        put("tol", &self.tol);
        put("tail-c", &self.tail_c);
        put("out", &self.out);
        put("format", &self.format);
        put("seed", &self.seed);
        put("trajectory", &self.trajectory);
        put("profile", &self.profile);
        if self.picard {
            m.insert("picard".into(), "true".into());
        }
        if self.derivative {
            m.insert("derivative".into(), "true".into());
        }
        m
    }

    fn resolve(&self) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("config {}: {e}", path.display()))?;
            cfg.apply(
                &parse_file_text(&text).map_err(|e| format!("config {}: {e}", path.display()))?,
            )?;
        }
        cfg.apply(&self.pairs())?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (flags, suite) = match &cli.command {
        Command::Shoot(f)
        | Command::Sweep(f)
        | Command::Linearize(f)
        | Command::Regimes(f)
        | Command::Singular(f) => (f, None),
        Command::Verify { suite, flags } => (flags, Some(suite.as_str())),
    };
    let cfg = match flags.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if flags.dump_config {
        print!("{}", cfg.to_canonical());
        return ExitCode::SUCCESS;
    }
    let result = match &cli.command {
        Command::Shoot(_) => commands::shoot(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
        Command::Linearize(_) => commands::linearize(&cfg),
        Command::Verify { .. } => commands::verify(&cfg, suite.unwrap_or_default()),
        Command::Regimes(_) => commands::regimes(&cfg),
        Command::Singular(_) => commands::singular(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(msg) = f.message() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(f.code())
        }
    }
}
