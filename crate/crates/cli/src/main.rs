use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::{json, Value};

use rieszflow::config::{self, Command, Pairing, ProbeMode, RunConfig, Scheme, Solver};
use rieszflow::dynamics::{run_eulerian, run_flow, LagrangianFlow, RunParams, Trajectory};
use rieszflow::io::{self, PlotKind};
use rieszflow::jko::{jko_step, OtSolver};
use rieszflow::kernels::{HeatKernelSpec, Kernel};
use rieszflow::measures::{local_dimension_estimate, Measure};
use rieszflow::probe::{criticality_exponent, lagrangian_critical_check, no_local_min_scan, ProbeOptions, SelfPairing};
use rieszflow::setup::{self, Problem};
use rieszflow::{par, Error, Result};

/// Wasserstein gradient flows of Riesz-kernel MMD energies.
#[derive(Parser)]
#[command(name = "rieszflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    t_end: Option<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Run a Lagrangian or Eulerian flow and record its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Iterate the proximal (JKO) scheme.
    Jko {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau: Option<String>,
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        solver: Option<String>,
        #[arg(long)]
        epsilon: Option<String>,
    },
    /// Heat-flow probes: descent scan, criticality exponent or critical check.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        t_min: Option<String>,
        #[arg(long)]
        t_max: Option<String>,
        #[arg(long)]
        t_points: Option<String>,
        #[arg(long)]
        pairing: Option<String>,
    },
    /// Energy, PL ratio and regularity monitor of the initial state.
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
    /// Print kernel and heat-kernel tables.
    Green {
        #[command(flatten)]
        common: Common,
        /// Table rows.
        #[arg(long, default_value_t = 21)]
        rows: usize,
    },
}

fn overrides(common: &Common, command: &str, extra: &[(&str, &Option<String>)]) -> Result<Vec<(String, String)>> {
    let mut out = vec![("command".to_string(), command.to_string())];
    let named: [(&str, &Option<String>); 6] = [
        ("output_dir", &common.output_dir),
        ("seed", &common.seed),
        ("domain", &common.domain),
        ("kernel", &common.kernel),
        ("dt", &common.dt),
        ("t_end", &common.t_end),
    ];
    for (k, v) in named.iter().chain(extra) {
        if let Some(v) = v {
            out.push((k.to_string(), v.clone()));
        }
    }
    for s in &common.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Validation {
            field: "--set".into(),
            message: format!("expected KEY=VALUE, got `{s}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn load_config(common: &Common, command: &str, extra: &[(&str, &Option<String>)]) -> Result<RunConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    config::parse_with_overrides(&text, &overrides(common, command, extra)?)
}

fn prepare_output(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.serialize())?;
    Ok(dir)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_output(cfg)?;
    let (Problem { kernel, init, target }, dens) = setup::build(cfg)?;
    let params = RunParams { dt: cfg.dt, t_end: cfg.t_end, record_every: cfg.record_every, gamma: cfg.gamma };
    let traj: Trajectory = match cfg.scheme {
        Scheme::Lagrangian => run_flow(&kernel, setup::initial_state(&init, dens.as_deref())?, &target, &params)?,
        Scheme::Eulerian => {
            let (Some(mu), Some(nu)) = (init.as_grid(), target.as_grid()) else {
                return Err(Error::Validation {
                    field: "scheme".into(),
                    message: "the eulerian scheme needs grid profiles for init and target".into(),
                });
            };
            run_eulerian(&kernel, mu, nu, &params)?
        }
    };
    io::write_trajectory(&dir.join("trajectory.csv"), &traj)?;
    if let Some(s) = &traj.final_state {
        io::write_particles(&dir.join("final_particles.csv"), &s.measure()?)?;
    }
    if let Some(g) = &traj.final_grid {
        io::write_grid(&dir.join("final_grid.bin"), g)?;
    }
    let plots = dir.join("plots");
    for kind in [PlotKind::Energy, PlotKind::Pl, PlotKind::Bounds, PlotKind::Exponent] {
        if kind == PlotKind::Exponent && traj.records.len() < 2 {
            continue;
        }
        if !traj.records.is_empty() {
            io::emit_plotdata(&traj, kind, &plots)?;
        }
    }
    let last = traj.records.last();
    let summary = json!({
        "records": traj.records.len(),
        "dt": traj.dt,
        "t_final": last.map(|r| r.t),
        "energy_final": last.map(|r| r.report.energy),
        "aborted": traj.abort.as_ref().map(|e| e.to_string()),
    });
    println!("{summary}");
    write_json(&dir.join("summary.json"), &summary)?;
    match traj.abort {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn jko(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_output(cfg)?;
    let (p, _) = setup::build(cfg)?;
    let solver = match cfg.jko.solver {
        Solver::Exact => OtSolver::Exact,
        Solver::Entropic => OtSolver::Entropic(cfg.jko.epsilon),
    };
    let mut mu = setup::atoms(&p.init)?;
    let target = Measure::Particles(setup::atoms(&p.target)?);
    let mut rows = Vec::with_capacity(cfg.jko.steps);
    for step in 1..=cfg.jko.steps {
        let out = jko_step(&p.kernel, &mu, &target, cfg.jko.tau, solver)?;
        log::info!("jko step {step}: energy {:.6e}, iterations {}", out.energy, out.iterations);
        rows.push(vec![step as f64, out.energy, out.w2_cost, out.proximal_value]);
        mu = out.measure;
    }
    io::write_table(&dir.join("jko.csv"), &["step", "energy", "w2_cost", "proximal_value"], &rows)?;
    io::write_particles(&dir.join("final_particles.csv"), &mu)?;
    let summary = json!({ "steps": rows.len(), "energy_final": rows.last().map(|r| r[1]) });
    println!("{summary}");
    write_json(&dir.join("summary.json"), &summary)
}

fn probe(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_output(cfg)?;
    let (Problem { kernel, init, target }, _) = setup::build(cfg)?;
    let ts = cfg.probe_times();
    let opts = ProbeOptions {
        pairing: match cfg.probe.pairing {
            Pairing::Include => SelfPairing::Include,
            Pairing::Exclude => SelfPairing::Exclude,
        },
        t0: None,
    };
    let mut summary = json!({ "mode": format!("{:?}", cfg.probe.mode).to_lowercase(), "t_star": null, "delta_hat": null, "q_hat": null });
    let lines: Vec<Value> = match cfg.probe.mode {
        ProbeMode::Scan => {
            let r = no_local_min_scan(&kernel, &init, &target, &ts, &opts)?;
            summary["t_star"] = json!(r.t_star);
            summary["certified"] = json!(r.certified);
            summary["infinite_energy"] = json!(r.infinite_energy);
            r.points.iter().map(|p| serde_json::to_value(p).unwrap()).collect()
        }
        ProbeMode::Exponent => {
            let f = criticality_exponent(&kernel, &init, &target, &ts, &opts)?;
            summary["delta_hat"] = json!(f.delta_hat);
            summary["regime"] = json!(format!("{:?}", f.regime));
            if let Measure::Particles(p) = &init {
                match local_dimension_estimate(p, p.point(0), &ts) {
                    Ok(q) => summary["q_hat"] = json!(q),
                    Err(e) => log::warn!("no local dimension estimate: {e}"),
                }
            }
            f.t_grid.iter().zip(&f.derivative).map(|(t, d)| json!({ "t": t, "derivative": d })).collect()
        }
        ProbeMode::Critical => {
            let (Some(mu), Some(nu)) = (init.as_grid(), target.as_grid()) else {
                return Err(Error::Validation {
                    field: "probe.mode".into(),
                    message: "the critical check needs grid profiles".into(),
                });
            };
            let r = lagrangian_critical_check(&kernel, mu, nu, cfg.probe.tol)?;
            summary["residual"] = json!(r.residual);
            summary["interior_cells"] = json!(r.interior_cells);
            summary["witness"] = json!(r.witness);
            r.residual_field.iter().enumerate().map(|(i, v)| json!({ "cell": i, "residual": v })).collect()
        }
    };
    io::write_jsonl(&dir.join("probe.jsonl"), &lines)?;
    println!("{summary}");
    write_json(&dir.join("summary.json"), &summary)
}

fn diagnose(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_output(cfg)?;
    let (Problem { kernel, init, target }, dens) = setup::build(cfg)?;
    let state = setup::initial_state(&init, dens.as_deref())?;
    let flow = LagrangianFlow::new(kernel, target)?;
    let out = json!({
        "particles": state.len(),
        "mass": state.mass(),
        "report": flow.report(&state)?,
        "monitor": flow.monitor(&state, cfg.gamma)?,
        "transport_defect": state.transport_defect(),
    });
    println!("{out}");
    write_json(&dir.join("diagnose.json"), &out)
}

fn green(cfg: &RunConfig, rows: usize) -> Result<()> {
    let k = Kernel::new(cfg.kernel, cfg.domain)?;
    let heat = HeatKernelSpec::new(cfg.domain);
    let d = cfg.domain.dim();
    let (t0, t1) = (cfg.probe.t_min, cfg.probe.t_max);
    println!("r,kernel,heat_t{t0},heat_t{t1}");
    let rows = rows.max(2);
    for i in 0..rows {
        // Torus: along the first axis up to the antipode; Euclidean: r in [0, 2].
        let r =
            if cfg.domain.is_torus() { 0.5 * i as f64 / (rows - 1) as f64 } else { 2.0 * i as f64 / (rows - 1) as f64 };
        let mut z = vec![0.0; d];
        z[0] = r;
        let kv = k.value_disp(&z).unwrap_or(f64::INFINITY);
        println!("{r},{kv:e},{:e},{:e}", heat.eval_disp(t0, &z), heat.eval_disp(t1, &z));
    }
    Ok(())
}

fn threads_from_env() -> Result<()> {
    let Ok(v) = std::env::var("RIESZFLOW_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Validation {
        field: "RIESZFLOW_THREADS".into(),
        message: format!("expected a positive integer, got `{v}`"),
    })?;
    if !par::init_threads(n) {
        log::warn!("RIESZFLOW_THREADS={n} ignored: thread pool unavailable");
    }
    Ok(())
}

fn help_text() -> String {
    let mut s = String::from("Configuration keys (file `key = value`, or --set key=value; flags win over the file):\n");
    for (k, d) in config::KEYS {
        s.push_str(&format!("  {k:<16} {d}\n"));
    }
    s.push_str("\nEnvironment: RIESZFLOW_THREADS caps worker threads.\n");
    s.push_str("Exit codes: 0 success, 2 config error, 3 numerical abort, 4 io error.");
    s
}

fn run(cli: Cli) -> Result<()> {
    threads_from_env()?;
    match cli.command {
        Sub::Simulate { common, scheme } => simulate(&load_config(&common, "simulate", &[("scheme", &scheme)])?),
        Sub::Jko { common, tau, steps, solver, epsilon } => jko(&load_config(
            &common,
            "jko",
            &[("jko.tau", &tau), ("jko.steps", &steps), ("jko.solver", &solver), ("jko.epsilon", &epsilon)],
        )?),
        Sub::Probe { common, mode, t_min, t_max, t_points, pairing } => probe(&load_config(
            &common,
            "probe",
            &[
                ("probe.mode", &mode),
                ("probe.t_min", &t_min),
                ("probe.t_max", &t_max),
                ("probe.t_points", &t_points),
                ("probe.pairing", &pairing),
            ],
        )?),
        Sub::Diagnose { common } => diagnose(&load_config(&common, "diagnose", &[])?),
        Sub::Green { common, rows } => {
            let cfg = load_config(&common, "green", &[])?;
            debug_assert_eq!(cfg.command, Command::Green);
            green(&cfg, rows)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let help = help_text();
    let matches = Cli::command().after_help(help.clone()).mut_subcommands(|c| c.after_help(help.clone())).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
