mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hitgap::bounds::{run_ledger, LedgerOptions, Status};
use hitgap::chain::{chain_decay, chain_gap, chain_lyapunov, hitting_laplace, load_chain, ChainDoc, Laplace};
use hitgap::hitting1d::{
    critical_rate, exp_moment_field, feynman_kac_residual, poly_moment_fields, theta_u, HittingSolution,
};
use hitgap::montecarlo::{exp_moment_estimate, poly_moment_estimate, simulate_hitting, tail_check, tail_check_large};
use hitgap::montecarlo::{SimConfig, StartPoint};
use hitgap::operator1d::{cheeger_constant, cheeger_constant_mean, muckenhoupt_constant, poincare_constant, restricted_poincare};
use hitgap::{Error, Measure1D, PotentialSpec};
use report::{ledger_rows, Report, Row};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "hitgap", version, about = "Poincare constants and hitting-time moments for 1D Gibbs measures and finite chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid summary, level radii and superlinearity certificate.
    Measure(MeasureArgs),
    /// Spectral Poincare constant and the one-dimensional comparison constants.
    Poincare(PoincareArgs),
    /// Hitting-time moment fields from the boundary-value problems.
    Hitting(HittingArgs),
    /// Euler-Maruyama hitting times.
    Mc(McArgs),
    /// Finite reversible chain analysis.
    Chain(ChainArgs),
    /// Evaluate the full bound ledger; exit 3 if any entry fails.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone)]
struct Output {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Leave the timestamp out of the report.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args, Clone)]
struct MeasureOpts {
    /// e.g. gaussian:sigma=1, exp_power:p=1.5, uniform:r=1
    #[arg(long)]
    potential: String,
    #[arg(long, default_value_t = 4096)]
    grid_points: usize,
}

#[derive(Args)]
struct MeasureArgs {
    #[command(flatten)]
    m: MeasureOpts,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct PoincareArgs {
    #[command(flatten)]
    m: MeasureOpts,
    /// Also report the Poincare constant restricted to this interval.
    #[arg(long = "U", value_parser = parse_interval, allow_hyphen_values = true)]
    u: Option<(f64, f64)>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct HittingArgs {
    #[command(flatten)]
    m: MeasureOpts,
    #[arg(long = "U", value_parser = parse_interval, allow_hyphen_values = true)]
    u: (f64, f64),
    #[arg(long)]
    theta: Option<f64>,
    /// Highest polynomial moment.
    #[arg(long, default_value_t = 4)]
    q_max: u32,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct McArgs {
    #[command(flatten)]
    m: MeasureOpts,
    #[arg(long = "U", value_parser = parse_interval, allow_hyphen_values = true)]
    u: (f64, f64),
    /// Starting point; stationary start when absent.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    n_paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 20.0)]
    t_max: f64,
    /// Write the raw hitting times here.
    #[arg(long)]
    samples_csv: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    m: MeasureOpts,
    #[arg(long = "U", value_parser = parse_interval, allow_hyphen_values = true)]
    u: Option<(f64, f64)>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4000)]
    n_paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[command(flatten)]
    out: Output,
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got '{s}'"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    if !(lo < hi) {
        return Err(format!("need lo < hi, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

/// Resolved configuration, embedded in every report.
#[derive(Serialize, Default)]
struct RunConfig {
    command: &'static str,
    potential: Option<String>,
    grid_points: Option<usize>,
    #[serde(rename = "U")]
    u: Option<(f64, f64)>,
    theta: Option<f64>,
    beta: Option<f64>,
    r: Option<f64>,
    seed: Option<u64>,
    n_paths: Option<usize>,
    dt: Option<f64>,
    t_max: Option<f64>,
    x0: Option<f64>,
    q_max: Option<u32>,
    file: Option<String>,
    rho: Option<f64>,
    horizon: Option<usize>,
    format: Option<Format>,
    output: Option<String>,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn validation(msg: impl Into<String>) -> Self {
        Failure { code: 2, kind: "validation", message: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Spec(_)
            | Error::Invalid(_)
            | Error::TooFewPoints(_)
            | Error::RateTooLarge { .. }
            | Error::LargeSet(_)
            | Error::Chain(_)
            | Error::NotReversible => 2,
            _ => 1,
        };
        Failure { code, kind: if code == 2 { "validation" } else { "computation" }, message: e.to_string() }
    }
}

fn timestamp(out: &Output) -> Option<u64> {
    if out.no_timestamp {
        None
    } else {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).ok().map(|d| d.as_secs())
    }
}

fn base_config(command: &'static str, m: Option<&MeasureOpts>, out: &Output) -> RunConfig {
    RunConfig {
        command,
        potential: m.map(|m| m.potential.clone()),
        grid_points: m.map(|m| m.grid_points),
        format: Some(out.format),
        output: out.output.as_ref().map(|p| p.display().to_string()),
        ..Default::default()
    }
}

fn build_measure(m: &MeasureOpts) -> Result<Measure1D, Failure> {
    let spec = PotentialSpec::parse(&m.potential)?;
    if m.grid_points < 8 {
        return Err(Failure::validation(format!("grid-points = {} must be at least 8", m.grid_points)));
    }
    Ok(Measure1D::build(&spec, m.grid_points)?)
}

fn emit(report: Report<RunConfig>, out: &Output) -> Result<(), Failure> {
    report
        .write(out.format == Format::Csv, out.output.as_deref())
        .map_err(|e| Failure { code: 1, kind: "io", message: e.to_string() })
}

fn cmd_measure(a: &MeasureArgs) -> Result<u8, Failure> {
    if !(a.beta > 0.0) {
        return Err(Failure::validation("beta must be positive"));
    }
    let m = build_measure(&a.m)?;
    let s = m.summary();
    let radii = m.level_radii(a.beta);
    let cert = m.superlinear_certificate(a.beta);
    let rows = vec![
        Row::new("lo", s.lo, ""),
        Row::new("hi", s.hi, ""),
        Row::new("z", s.z, ""),
        Row::new("mean", s.mean, ""),
        Row::new("variance", s.variance, ""),
        Row::new("median", s.median, ""),
        Row::new("mean_abs_dev", s.mean_abs_dev, ""),
        Row::new("a_min", s.a_min, ""),
        Row::new("level_radius", radii.r(), ""),
        Row::new("c_beta", cert.c_beta, ""),
        Row::new("h_beta", cert.h_beta, ""),
    ];
    let mut config = base_config("measure", Some(&a.m), &a.out);
    config.beta = Some(a.beta);
    let results = json!({ "measure": s, "level_radii": radii, "certificate": cert });
    emit(Report { config, timestamp_unix: timestamp(&a.out), results, rows }, &a.out)?;
    Ok(0)
}

fn cmd_poincare(a: &PoincareArgs) -> Result<u8, Failure> {
    let m = build_measure(&a.m)?;
    let form = hitgap::operator1d::DirichletForm::assemble(&m);
    let cp = poincare_constant(&form)?;
    let b = muckenhoupt_constant(&m);
    let cc = cheeger_constant(&m);
    let cm = cheeger_constant_mean(&m);
    let mut rows = vec![
        Row::new("c_p", cp.c_p, ""),
        Row::new("lambda1", cp.lambda1, ""),
        Row::new("muckenhoupt_b", b, ""),
        Row::new("cheeger_median", cc, ""),
        Row::new("cheeger_mean", cm, ""),
        Row::new("variance", m.variance, ""),
    ];
    let mut results = json!({
        "poincare": cp,
        "muckenhoupt_b": b,
        "cheeger_median": cc,
        "cheeger_mean": cm,
        "variance": m.variance,
    });
    if let Some(u) = a.u {
        let r = restricted_poincare(&form, u.0, u.1)?;
        rows.push(Row::new("c_p_restricted", r.c_p, ""));
        results["restricted"] = json!(r);
    }
    let mut config = base_config("poincare", Some(&a.m), &a.out);
    config.u = a.u;
    emit(Report { config, timestamp_unix: timestamp(&a.out), results, rows }, &a.out)?;
    Ok(0)
}

fn field_json(sol: &HittingSolution, residual: f64, m: &Measure1D) -> serde_json::Value {
    let probes: Vec<f64> = [sol.u.0 - 2.0, sol.u.0 - 1.0, sol.u.1 + 1.0, sol.u.1 + 2.0]
        .into_iter()
        .filter(|x| *x > m.lo && *x < m.hi)
        .collect();
    let values: Vec<[f64; 2]> = probes.iter().map(|&x| [x, sol.eval(x)]).collect();
    json!({ "summary": sol.summary(), "residual": residual, "mu_integrable": sol.mu_integrable(), "values": values })
}

fn cmd_hitting(a: &HittingArgs) -> Result<u8, Failure> {
    if let Some(t) = a.theta {
        if !(t > 0.0) {
            return Err(Failure::validation("theta must be positive"));
        }
    }
    if a.q_max > 8 {
        return Err(Failure::validation("q-max must be at most 8"));
    }
    let m = build_measure(&a.m)?;
    let form = hitgap::operator1d::DirichletForm::assemble(&m);
    let cp = poincare_constant(&form)?.c_p;
    let mu_u = m.mass(a.u.0, a.u.1);
    let tu = theta_u(mu_u, cp);
    let crit = critical_rate(&m, a.u)?;
    let mut rows = vec![
        Row::new("mu_U", mu_u, ""),
        Row::new("c_p", cp, ""),
        Row::new("theta_U", tu, "1/time"),
        Row::new("critical_rate", crit, "1/time"),
    ];
    let mut results = json!({ "mu_U": mu_u, "c_p": cp, "theta_U": tu, "critical_rate": crit });
    if let Some(theta) = a.theta {
        let w = exp_moment_field(&m, a.u, theta)?;
        let res = feynman_kac_residual(&w, None);
        let mut row = Row::new("exp_moment.integral", w.integral_against_mu, "");
        if w.blow_up {
            row.status = "blow_up";
        }
        rows.push(row);
        results["exp_moment"] = field_json(&w, res, &m);
    }
    let v = poly_moment_fields(&m, a.u, a.q_max)?;
    let mut poly = Vec::new();
    for q in 1..v.len() {
        let res = if v[q].blow_up { f64::NAN } else { feynman_kac_residual(&v[q], Some(&v[q - 1])) };
        let mut row = Row::new(format!("v{q}.integral"), v[q].integral_against_mu, "time^q");
        if v[q].blow_up {
            row.status = "blow_up";
        } else if !v[q].mu_integrable() {
            row.status = "not_integrable";
        }
        rows.push(row);
        poly.push(field_json(&v[q], res, &m));
    }
    results["poly_moments"] = json!(poly);
    let mut config = base_config("hitting", Some(&a.m), &a.out);
    config.u = Some(a.u);
    config.theta = a.theta;
    config.q_max = Some(a.q_max);
    emit(Report { config, timestamp_unix: timestamp(&a.out), results, rows }, &a.out)?;
    Ok(0)
}

fn cmd_mc(a: &McArgs) -> Result<u8, Failure> {
    let m = build_measure(&a.m)?;
    let cfg = SimConfig {
        x0: a.x0.map_or(StartPoint::Stationary, StartPoint::Point),
        u: a.u,
        dt: a.dt,
        t_max: a.t_max,
        n_paths: a.n_paths,
        seed: a.seed,
    };
    cfg.validate()?;
    let s = simulate_hitting(&m, &cfg)?;
    let mut rows = vec![Row::new("censored_fraction", s.censored_fraction, "")];
    let mut results = json!({ "n_paths": s.len(), "censored_fraction": s.censored_fraction });
    let mut moments = serde_json::Map::new();
    for q in 1..=2u32 {
        let e = poly_moment_estimate(&s, q);
        let mut row = Row::new(format!("E_T{q}"), e.estimate, "time^q");
        if !e.reliable {
            row.status = "unreliable";
        }
        rows.push(row);
        rows.push(Row::new(format!("E_T{q}.ci"), e.ci_halfwidth, "time^q"));
        moments.insert(format!("T^{q}"), json!(e));
    }
    if let Some(theta) = a.theta {
        let e = exp_moment_estimate(&s, theta)?;
        let mut row = Row::new("E_exp_theta_T", e.estimate, "");
        if !e.reliable {
            row.status = "unreliable";
        }
        rows.push(row);
        rows.push(Row::new("E_exp_theta_T.ci", e.ci_halfwidth, ""));
        moments.insert("exp_theta_T".into(), json!(e));
    }
    results["moments"] = serde_json::Value::Object(moments);
    if cfg.x0 == StartPoint::Stationary {
        let form = hitgap::operator1d::DirichletForm::assemble(&m);
        let cp = poincare_constant(&form)?.c_p;
        let mu_u = m.mass(a.u.0, a.u.1);
        let grid: Vec<f64> = [0.5, 1.0, 2.0, 4.0, 8.0].into_iter().filter(|t| *t <= a.t_max).collect();
        let entries = if mu_u <= 0.5 { tail_check(&s, cp, mu_u, &grid)? } else { tail_check_large(&s, cp, mu_u, &grid)? };
        rows.extend(ledger_rows(&entries));
        results["tail_check"] = json!(entries);
    }
    if let Some(path) = &a.samples_csv {
        let mut text = String::from("path,time,censored,immediate\n");
        for i in 0..s.len() {
            text.push_str(&format!("{},{:e},{},{}\n", i, s.times[i], s.censored[i], s.immediate[i]));
        }
        std::fs::write(path, text).map_err(|e| Failure { code: 1, kind: "io", message: e.to_string() })?;
    }
    let mut config = base_config("mc", Some(&a.m), &a.out);
    config.u = Some(a.u);
    config.theta = a.theta;
    config.seed = Some(a.seed);
    config.n_paths = Some(a.n_paths);
    config.dt = Some(a.dt);
    config.t_max = Some(a.t_max);
    config.x0 = a.x0;
    emit(Report { config, timestamp_unix: timestamp(&a.out), results, rows }, &a.out)?;
    Ok(0)
}

fn cmd_chain(a: &ChainArgs) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(&a.file)
        .map_err(|e| Failure::validation(format!("cannot read {}: {e}", a.file.display())))?;
    let doc: ChainDoc = serde_json::from_str(&text).map_err(|e| Failure::validation(format!("chain JSON: {e}")))?;
    if let Some(r) = a.rho {
        if !(r > 1.0) {
            return Err(Failure::validation("rho must exceed 1"));
        }
    }
    let model = load_chain(&doc)?;
    let rho_star = model.rho_star();
    let mut rows = vec![Row::new("rho_star", rho_star, "")];
    let mut results = json!({ "states": model.states, "pi": model.pi.as_slice(), "reversible": model.reversible, "rho_star": rho_star });
    if model.reversible {
        let g = chain_gap(&model)?;
        rows.push(Row::new("gap2", g.gap2, ""));
        rows.push(Row::new("c_p_chain", g.c_p_chain, ""));
        rows.push(Row::new("lambda_op", g.lambda_op, ""));
        results["gap"] = json!(g);
    }
    let d = chain_decay(&model, a.horizon)?;
    rows.push(Row::new("tv_rate", d.theta, ""));
    results["decay"] = json!({ "theta": d.theta, "c": d.c, "horizon": d.horizon, "lambda_op": d.lambda_op, "var_ratio": d.var_ratio });
    if let Some(rho) = a.rho {
        match hitting_laplace(&model, rho) {
            Laplace::Finite { values } => {
                for (s, v) in model.states.iter().zip(&values) {
                    rows.push(Row::new(format!("laplace.{s}"), *v, ""));
                }
                results["laplace"] = json!({ "finite": true, "values": values });
                let l = chain_lyapunov(&model, rho)?;
                rows.push(Row::new("lyapunov.replay", l.replay, ""));
                results["lyapunov"] = json!(l);
            }
            Laplace::Divergent { radius } => {
                let mut row = Row::new("laplace", f64::INFINITY, "");
                row.status = "divergent";
                rows.push(row);
                results["laplace"] = json!({ "finite": false, "radius": radius });
            }
        }
    }
    let mut config = base_config("chain", None, &a.out);
    config.file = Some(a.file.display().to_string());
    config.rho = a.rho;
    config.horizon = Some(a.horizon);
    emit(Report { config, timestamp_unix: timestamp(&a.out), results, rows }, &a.out)?;
    Ok(0)
}

fn cmd_verify(a: &VerifyArgs) -> Result<u8, Failure> {
    if !(a.beta > 0.0 && a.r > 0.0) {
        return Err(Failure::validation("beta and r must be positive"));
    }
    if let Some(t) = a.theta {
        if !(t > 0.0) {
            return Err(Failure::validation("theta must be positive"));
        }
    }
    if a.n_paths > 0 && !(a.dt > 0.0 && a.dt <= 1e-2) {
        return Err(Failure::validation("dt must lie in (0, 1e-2]"));
    }
    let m = build_measure(&a.m)?;
    let opts = LedgerOptions { u: a.u, beta: a.beta, r: a.r, theta: a.theta, n_paths: a.n_paths, dt: a.dt, seed: a.seed };
    let entries = run_ledger(&m, &opts);
    let failed = entries.iter().any(|e| e.status == Status::Fail);
    let rows = ledger_rows(&entries);
    let mut config = base_config("verify", Some(&a.m), &a.out);
    config.u = a.u;
    config.theta = a.theta;
    config.beta = Some(a.beta);
    config.r = Some(a.r);
    config.seed = Some(a.seed);
    config.n_paths = Some(a.n_paths);
    config.dt = Some(a.dt);
    let results = json!({ "ledger": entries, "any_fail": failed });
    emit(Report { config, timestamp_unix: timestamp(&a.out), results, rows }, &a.out)?;
    Ok(if failed { 3 } else { 0 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let msg = e.render().to_string();
                eprintln!("{}", json!({ "error": "validation", "message": msg.trim() }));
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let r = match &cli.command {
        Command::Measure(a) => cmd_measure(a),
        Command::Poincare(a) => cmd_poincare(a),
        Command::Hitting(a) => cmd_hitting(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Chain(a) => cmd_chain(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}
