use clap::{Args, Parser, Subcommand};
use sn_micropolar::config::{RunConfig, DEFAULT_CONFIG};
use sn_micropolar::error::{Error, Result};
use sn_micropolar::leader::DualProblem;
use sn_micropolar::nash;
use sn_micropolar::output::{self, key_value_csv, sha256_hex, Csv, RunManifest, RunOutput};
use sn_micropolar::scenario::Scenario;
use sn_micropolar::suite;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(name = "sn-micropolar", version, about = "Stackelberg-Nash control of the linearized micropolar system on a moving domain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration; the built-in reference setup when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads; 0 uses all cores
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true)]
    n_steps: Option<usize>,
    #[arg(long, global = true)]
    modes: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// State trajectory with zero controls
    Simulate,
    /// Follower equilibrium for zero leader controls, with verification reports
    Nash {
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Full leader pipeline
    Leader {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Property suite with a PASS/FAIL table
    Check,
    /// Response-norm estimates and the coercivity report
    Norms,
    /// Collate the CSV files of an output directory into a summary table
    Report,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let src = match &common.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::config("--config", format!("{}: {e}", p.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut cfg = RunConfig::parse(&src)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.n_steps {
        cfg.discretization.n_steps = n;
    }
    if let Some(m) = common.modes {
        cfg.discretization.modes = m;
    }
    Ok(cfg)
}

fn manifest(command: &str, cfg: &RunConfig, s: &Scenario) -> RunManifest {
    RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(cfg.to_toml().as_bytes()),
        seed: cfg.seed,
        modes: s.n_modes,
        n_steps: s.n_steps,
        motion: s.motion.kind.name().into(),
        wall_clock_s: 0.0,
        residuals: vec![],
        files: vec![],
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Leader { eps, delta, tol, max_iter } => {
            if let Some(e) = eps {
                cfg.weights.eps = *e;
            }
            if delta.is_some() {
                cfg.solver.delta = *delta;
            }
            if let Some(t) = tol {
                cfg.solver.leader_tol = *t;
            }
            if let Some(m) = max_iter {
                cfg.solver.leader_max_iter = *m;
            }
        }
        Command::Nash { tol: Some(t) } => cfg.solver.nash_tol = *t,
        _ => {}
    }
    let s = cfg.scenario()?;
    let dir = cli.common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let start = Instant::now();
    let name = match cli.command {
        Command::Simulate => "simulate",
        Command::Nash { .. } => "nash",
        Command::Leader { .. } => "leader",
        Command::Check => "check",
        Command::Norms => "norms",
        Command::Report => "report",
    };
    let mut out = RunOutput::create(&dir, manifest(name, &cfg, &s))?;
    if !matches!(cli.command, Command::Report) {
        out.write_text("config.toml", &cfg.to_toml())?;
    }
    let ok = match cli.command {
        Command::Simulate => simulate(&s, &mut out)?,
        Command::Nash { .. } => run_nash(&s, &mut out)?,
        Command::Leader { .. } => run_leader(&s, &mut out)?,
        Command::Check => check(&s, &mut out)?,
        Command::Norms => norms(&s, &mut out)?,
        Command::Report => report(&mut out)?,
    };
    out.finish(start.elapsed().as_secs_f64())?;
    Ok(ok)
}

fn simulate(s: &Scenario, out: &mut RunOutput) -> Result<bool> {
    let prob = s.problem()?;
    let ctx = &prob.ctx;
    let traj = ctx.solve_state(&ctx.zero_controls(), &prob.init);
    out.write_csv("trajectory.csv", &output::trajectory_csv(ctx, &traj))?;
    println!("simulate: {} steps, terminal L2 norm {:.6e}", ctx.n_steps(), ctx.l2_norm(traj.terminal()));
    Ok(true)
}

fn run_nash(s: &Scenario, out: &mut RunOutput) -> Result<bool> {
    let prob = s.problem()?;
    let ctx = &prob.ctx;
    let f = ctx.zero_control(sn_micropolar::geometry::Region::Leader, 2);
    let g = ctx.zero_control(sn_micropolar::geometry::Region::Leader, 1);
    let eq = nash::solve_nash(&prob, &f, &g, s.solver.nash_tol)?;
    out.residual("nash", eq.residual);
    out.write_csv("equilibrium.csv", &output::followers_csv(ctx, &eq.xi))?;
    out.write_csv("nash_residuals.csv", &output::residual_csv(&eq.history))?;
    let traj = ctx.solve_state(&eq.xi.with_leader(&f, &g), &prob.init);
    out.write_csv("trajectory.csv", &output::trajectory_csv(ctx, &traj))?;

    let ver = nash::verify_nash(&prob, &eq.xi, &f, &g, 40, s.seed)?;
    let ch = nash::characterize_nash(&prob, &eq.xi, &f, &g)?;
    let co = nash::check_coercivity(&prob, s.seed)?;
    let mut rows = vec![
        ("iterations".to_string(), eq.iterations as f64),
        ("relative_residual".into(), eq.residual),
        ("max_first_order".into(), ver.max_derivative),
        ("min_deviation_gain".into(), ver.min_gain),
        ("characterization".into(), ch.max()),
    ];
    rows.extend(coercivity_rows(&co));
    out.write_csv("nash_report.csv", &key_value_csv(&rows))?;
    for (k, v) in &rows {
        println!("{k:<24} {v:.6e}");
    }
    Ok(ver.pass(1e-6) && co.min_eig > 0.0)
}

fn coercivity_rows(co: &nash::CoercivityReport) -> Vec<(String, f64)> {
    let n = &co.norms;
    let mut rows = Vec::new();
    for j in 0..2 {
        rows.push((format!("norm_l1_{}", j + 1), n.l1[j]));
        rows.push((format!("norm_l2_{}", j + 1), n.l2[j]));
        rows.push((format!("norm_lt1_{}", j + 1), n.lt1[j]));
        rows.push((format!("norm_lt2_{}", j + 1), n.lt2[j]));
    }
    for (k, l) in co.lhs.iter().enumerate() {
        rows.push((format!("condition_lhs_{}", k + 1), *l));
    }
    rows.push(("condition_holds".into(), if co.condition_holds { 1.0 } else { 0.0 }));
    rows.push(("gamma".into(), co.gamma));
    rows.push(("min_eig".into(), co.min_eig));
    rows
}

fn run_leader(s: &Scenario, out: &mut RunOutput) -> Result<bool> {
    let prob = s.problem()?;
    let ctx = &prob.ctx;
    let dual = DualProblem::new(&prob, s.solver.leader)?;
    let it = dual.minimize_theta()?;
    out.write_csv("leader_history.csv", &output::history_csv(&it.history))?;
    out.residual("dual_gradient", it.grad_norm);
    let converged = it.converged;
    let sol = dual.recover_leader(&it)?;
    let eq = nash::solve_nash(&prob, &sol.f_bar, &sol.g_bar, s.solver.leader.nash_tol)?;
    out.residual("nash", eq.residual);
    out.write_csv("leader_controls.csv", &output::controls_csv(ctx, &[("f", &sol.f_bar), ("g", &sol.g_bar)]))?;
    out.write_csv("equilibrium.csv", &output::followers_csv(ctx, &eq.xi))?;
    let traj = ctx.solve_state(&eq.xi.with_leader(&sol.f_bar, &sol.g_bar), &prob.init);
    out.write_csv("trajectory.csv", &output::trajectory_csv(ctx, &traj))?;
    let rows = vec![
        ("eps".to_string(), sol.eps),
        ("terminal_gap".into(), sol.terminal_gap),
        ("terminal_gap_weighted".into(), sol.terminal_gap_weighted),
        ("tol_disc".into(), sol.tol_disc),
        ("j_value".into(), sol.j_value),
        ("theta".into(), sol.theta),
        ("dual_iterations".into(), it.iterations as f64),
        ("dual_grad_norm".into(), it.grad_norm),
        ("nash_iterations".into(), sol.nash_iterations as f64),
    ];
    out.write_csv("leader_summary.csv", &key_value_csv(&rows))?;
    for (k, v) in &rows {
        println!("{k:<24} {v:.6e}");
    }
    if !converged {
        eprintln!("dual minimization stopped at the iteration limit");
    }
    Ok(converged && sol.terminal_gap_weighted <= sol.eps + sol.tol_disc)
}

fn check(s: &Scenario, out: &mut RunOutput) -> Result<bool> {
    let rows = suite::run_suite(s)?;
    out.write_csv("check.csv", &suite::rows_csv(&rows))?;
    for r in &rows {
        println!("{}", r.line());
    }
    let ok = rows.iter().all(|r| r.pass);
    println!("{} of {} checks passed", rows.iter().filter(|r| r.pass).count(), rows.len());
    Ok(ok)
}

fn norms(s: &Scenario, out: &mut RunOutput) -> Result<bool> {
    let prob = s.problem()?;
    let co = nash::check_coercivity(&prob, s.seed)?;
    let rows = coercivity_rows(&co);
    out.write_csv("coercivity.csv", &key_value_csv(&rows))?;
    for (k, v) in &rows {
        println!("{k:<24} {v:.6e}");
    }
    Ok(true)
}

/// One row per CSV already in the output directory: file, rows, columns, sha256.
fn report(out: &mut RunOutput) -> Result<bool> {
    let dir = out.dir().to_path_buf();
    let mut names: Vec<String> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") && n != "summary.csv")
        .collect();
    if names.is_empty() {
        return Err(Error::config("--out", format!("no CSV files in {}", dir.display())));
    }
    names.sort();
    let mut csv = Csv::new(&["file", "rows", "columns", "sha256"]);
    for n in &names {
        let text = std::fs::read_to_string(dir.join(n))?;
        let rows = text.lines().count().saturating_sub(1);
        let cols = text.lines().next().map(|h| h.split(',').count()).unwrap_or(0);
        csv.row([n.clone(), rows.to_string(), cols.to_string(), sha256_hex(text.as_bytes())]);
        println!("{n:<28} {rows:>8} rows");
    }
    out.write_csv("summary.csv", &csv)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
