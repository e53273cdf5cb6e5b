use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use qshoot_core::linearization::{self, TurningReport};
use qshoot_core::shooting::{self, CurveMeta};
use qshoot_core::verify::{self, Suite};
use qshoot_core::{Error, Nonlinearity, Problem, ProblemConfig};

use crate::output::{emit, svg_polyline, write_atomic};
use crate::run_config::{Format, RunConfig};

pub enum Failure {
    Config(String),
    Solver(String),
    Checks,
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Checks => 3,
        }
    }

    pub fn message(&self) -> Option<&str> {
        match self {
            Failure::Config(m) | Failure::Solver(m) => Some(m),
            Failure::Checks => None,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(_) | Error::Domain(_) | Error::HypothesesUnmet(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(format!("write failed: {e}"))
    }
}

type Outcome = Result<(), Failure>;

fn build(cfg: &RunConfig) -> Result<(Nonlinearity, ProblemConfig), Failure> {
    let nl = cfg.nonlinearity().map_err(Failure::Config)?;
    let pc = cfg.problem_config();
    pc.validate()?;
    Ok((nl, pc))
}

fn problem(cfg: &RunConfig) -> Result<Problem, Failure> {
    let (nl, pc) = build(cfg)?;
    for f in nl.exploratory_flags(pc.n) {
        eprintln!("note: outside the standing hypothesis: {f}");
    }
    Ok(Problem::new(nl, pc)?)
}

fn meta(cfg: &RunConfig, p: &Problem) -> Value {
    let mut m = serde_json::to_value(CurveMeta::new(&p.nl, &p.cfg)).expect("meta serialises");
    if let Some(seed) = cfg.seed {
        m["seed"] = json!(seed);
    }
    m
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serialises");
    s.push('\n');
    s
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:e}"))
}

fn grid(cfg: &RunConfig) -> Result<Vec<f64>, Failure> {
    cfg.gamma_grid().map_err(Failure::Config)
}

pub fn shoot(cfg: &RunConfig) -> Outcome {
    let gamma = cfg
        .gamma
        .ok_or_else(|| Failure::Config("missing key 'gamma'".into()))?;
    let p = problem(cfg)?;
    let shot = shooting::shoot_with_trajectory(&p, gamma)?;
    let o = &shot.outcome;
    let text = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => json_text(&json!({ "meta": meta(cfg, &p), "outcome": o })),
        _ => format!(
            "gamma,T,R,lambda,yprime_T\n{:e},{:e},{:e},{:e},{:e}\n",
            o.gamma, o.t, o.r, o.lambda_of_gamma, o.yprime_t
        ),
    };
    if let Some(path) = &cfg.trajectory {
        let mut buf = Vec::new();
        shot.trajectory.write_csv(&mut buf)?;
        write_atomic(path, &buf)?;
    }
    if let Some(path) = &cfg.profile {
        let prof = shooting::export_profile(&p, &shot, 101)?;
        let mut s = String::from("xi,u\n");
        for (x, u) in prof {
            let _ = writeln!(s, "{x:e},{u:e}");
        }
        write_atomic(path, s.as_bytes())?;
    }
    emit(cfg.out.as_deref(), &text)?;
    Ok(())
}

fn report_row_errors(errors: &[shooting::RowError]) {
    for e in errors {
        eprintln!("warning: gamma = {}: {}", e.gamma, e.error);
    }
}

pub fn sweep(cfg: &RunConfig) -> Outcome {
    let g = grid(cfg)?;
    let p = problem(cfg)?;
    let curve = shooting::sweep(&p, &g, cfg.derivative)?;
    report_row_errors(&curve.errors);
    if curve.rows.is_empty() {
        return Err(Failure::Solver("every grid point failed".into()));
    }
    let text = match cfg.format.unwrap_or(Format::Csv) {
        Format::Json => json_text(&json!({
            "meta": meta(cfg, &p),
            "rows": curve.rows,
            "errors": curve.errors,
        })),
        _ => {
            let mut buf = Vec::new();
            curve.write_csv(&mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
    };
    if let Some(out) = &cfg.out {
        let pts: Vec<(f64, f64)> = curve.rows.iter().map(|r| (r.gamma, r.lambda)).collect();
        write_atomic(
            &out.with_extension("svg"),
            svg_polyline(&pts, "‖u‖∞ = γ", "λ").as_bytes(),
        )?;
    }
    emit(cfg.out.as_deref(), &text)?;
    Ok(())
}

struct LinRow {
    gamma: f64,
    t: f64,
    yprime_t: f64,
    v1_t: Option<f64>,
    tprime_v1: Option<f64>,
    tprime_fd: Option<f64>,
    nondegenerate: Option<bool>,
    turning: Option<TurningReport>,
}

pub fn linearize(cfg: &RunConfig) -> Outcome {
    let g = grid(cfg)?;
    let p = problem(cfg)?;
    if p.cfg.beta != 0.0 {
        return Err(Failure::Config(
            "linearize needs beta-weight = 0; use the singular command".into(),
        ));
    }
    let curve = shooting::sweep(&p, &g, true)?;
    report_row_errors(&curve.errors);
    if curve.rows.is_empty() {
        return Err(Failure::Solver("every grid point failed".into()));
    }
    let q = Some(p.nl.q);
    let mut rows = Vec::new();
    for r in &curve.rows {
        let sol = linearization::solve_v1(&p, r.gamma).ok();
        rows.push(LinRow {
            gamma: r.gamma,
            t: r.t,
            yprime_t: r.yprime_t,
            v1_t: r.v1_t,
            tprime_v1: r.tprime_v1,
            tprime_fd: r.tprime_fd,
            nondegenerate: sol.as_ref().map(|s| s.nondegeneracy().nondegenerate),
            turning: sol
                .as_ref()
                .map(|s| linearization::detect_turning(&p, s, q)),
        });
    }
    let gamma0 = verify::uniqueness_gamma0(&curve);
    match gamma0 {
        Some(g0) => {
            eprintln!("uniqueness window: T' > 0 and V1(T) < 0 for every grid gamma >= {g0}")
        }
        None => eprintln!("uniqueness window: not found on this grid"),
    }
    if let Some(path) = &cfg.trajectory {
        let sol = linearization::solve_v1(&p, g[0])?;
        let mut buf = Vec::new();
        sol.write_csv(&mut buf)?;
        write_atomic(path, &buf)?;
    }
    let text = match cfg.format.unwrap_or(Format::Csv) {
        Format::Json => {
            let rows: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "gamma": r.gamma,
                        "T": r.t,
                        "yprime_T": r.yprime_t,
                        "V1_T": r.v1_t,
                        "Tprime_v1": r.tprime_v1,
                        "Tprime_fd": r.tprime_fd,
                        "nondegenerate": r.nondegenerate,
                        "turning": r.turning,
                    })
                })
                .collect();
            json_text(
                &json!({ "meta": meta(cfg, &p), "rows": rows, "gamma0": gamma0, "errors": curve.errors }),
            )
        }
        _ => {
            let mut s = String::from(
                "gamma,T,yprime_T,V1_T,Tprime_v1,Tprime_fd,nondegenerate,S1,S,S_predicted\n",
            );
            for r in &rows {
                let t = r.turning.as_ref();
                let _ = writeln!(
                    s,
                    "{:e},{:e},{:e},{},{},{},{},{},{},{}",
                    r.gamma,
                    r.t,
                    r.yprime_t,
                    num(r.v1_t),
                    num(r.tprime_v1),
                    num(r.tprime_fd),
                    r.nondegenerate.map_or("NaN".to_string(), |b| b.to_string()),
                    num(t.and_then(|t| t.s1)),
                    num(t.and_then(|t| t.s)),
                    num(t.and_then(|t| t.s_predicted)),
                );
            }
            s
        }
    };
    emit(cfg.out.as_deref(), &text)?;
    Ok(())
}

pub fn verify(cfg: &RunConfig, suite: &str) -> Outcome {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![suite.parse::<Suite>()?]
    };
    let (nl, pc) = build(cfg)?;
    let base = Problem::new(nl, pc)?;
    let reports: Vec<_> = suites
        .into_iter()
        .map(|s| verify::run_suite(s, &base))
        .collect();
    let text = match cfg.format.unwrap_or(Format::Text) {
        Format::Json => json_text(&serde_json::to_value(&reports).expect("reports serialise")),
        Format::Csv => {
            let mut s = String::from("suite,check,pass,value,bound\n");
            for r in &reports {
                for c in &r.checks {
                    let _ = writeln!(
                        s,
                        "{},\"{}\",{},\"{}\",\"{}\"",
                        r.suite.name(),
                        c.name,
                        c.pass,
                        c.value,
                        c.bound
                    );
                }
            }
            s
        }
        Format::Text => reports
            .iter()
            .map(|r| r.to_table())
            .collect::<Vec<_>>()
            .join("\n"),
    };
    emit(cfg.out.as_deref(), &text)?;
    if reports.iter().all(|r| r.all_pass()) {
        Ok(())
    } else {
        for r in &reports {
            for c in r.failures() {
                eprintln!(
                    "failed: [{}] {}: {} (bound {})",
                    r.suite.name(),
                    c.name,
                    c.value,
                    c.bound
                );
            }
        }
        Err(Failure::Checks)
    }
}

pub fn regimes(cfg: &RunConfig) -> Outcome {
    let mut g = match (cfg.gamma_min, cfg.gamma_max, cfg.gamma_steps) {
        (None, None, None) if cfg.gamma.is_none() => vec![1e-4, 1e-3, 1e-2, 1e-1],
        _ => grid(cfg)?,
    };
    g.reverse();
    let p = problem(cfg)?;
    let rep = shooting::classify_small_gamma(&p, &g, None)?;
    let text = match cfg.format.unwrap_or(Format::Json) {
        Format::Json => json_text(&json!({ "meta": meta(cfg, &p), "report": rep })),
        _ => {
            let mut s = String::from("gamma,T,label,slope,p\n");
            for (gm, t) in rep.gamma.iter().zip(&rep.t) {
                let _ = writeln!(
                    s,
                    "{gm:e},{t:e},{},{:e},{:e}",
                    rep.label.as_str(),
                    rep.slope,
                    rep.p
                );
            }
            s
        }
    };
    emit(cfg.out.as_deref(), &text)?;
    Ok(())
}

pub fn singular(cfg: &RunConfig) -> Outcome {
    let g = grid(cfg)?;
    let (nl, pc) = build(cfg)?;
    let mut rows = Vec::new();
    for &gamma in &g {
        let red = shooting::shoot_singular(&nl, &pc, gamma)?;
        let direct = shooting::shoot_singular_direct(&nl, &pc, gamma)?;
        let rel = (red.r - direct).abs() / direct.abs();
        rows.push((red, direct, rel));
    }
    let text = match cfg.format.unwrap_or(Format::Csv) {
        Format::Json => {
            let p = Problem::new(nl.clone(), pc.clone())?;
            let rows: Vec<Value> = rows
                .iter()
                .map(|(o, d, rel)| json!({ "outcome": o, "R_direct": d, "rel_diff": rel }))
                .collect();
            json_text(&json!({ "meta": meta(cfg, &p), "rows": rows }))
        }
        _ => {
            let mut s = String::from("gamma,beta,rescale,T_reduced,T,R,lambda,R_direct,rel_diff\n");
            for (o, d, rel) in &rows {
                let _ = writeln!(
                    s,
                    "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                    o.gamma, o.beta, o.rescale, o.t_reduced, o.t, o.r, o.lambda, d, rel
                );
            }
            s
        }
    };
    emit(cfg.out.as_deref().map(Path::new), &text)?;
    Ok(())
}
