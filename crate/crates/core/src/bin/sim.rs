//! Command-line front end for the event-triggered boundary-control simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rdetc::harness::{
    builtin_scenario, compare_schemes, comparison_table, emit_outputs, exit_code_for,
    params_table, parse_trace_csv, run_scenario, Scenario, SchemeConfig,
};
use rdetc::kernels::{KernelSet, TriangularGrid};
use rdetc::trigger_params::{self, check_assumption2, suggest_b};
use rdetc::triggering::Scheme;
use rdetc::verify::{decay_fit, OracleReport};
use rdetc::{Error, Result};

#[derive(Parser)]
#[command(name = "sim", about = "Observer-based event-triggered boundary control of reaction-diffusion PDEs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive and print all trigger parameters for a configuration.
    Params { config: PathBuf },
    /// Run one closed-loop simulation and emit trace/events/report files.
    Run {
        /// Triggering scheme: cetc, petc or stc.
        #[arg(long)]
        scheme: Scheme,
        config: PathBuf,
    },
    /// Run all applicable schemes on one configuration and print a table.
    Compare { config: PathBuf },
    /// Re-check the CSV-computable monitors on an existing trace.
    Verify {
        trace: PathBuf,
        /// Optional scenario config enabling the scheme-aware checks.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Solve and emit the backstepping kernel tables for a configuration.
    Kernels { config: PathBuf },
    /// Print a built-in scenario (paper-cetc, paper-petc, paper-stc, fast-ci) as JSON.
    Preset { name: String },
}

fn load(path: &std::path::Path) -> Result<Scenario> {
    Scenario::load(path)
}

fn cmd_params(config: PathBuf) -> Result<()> {
    let sc = load(&config)?;
    let tri = TriangularGrid::new(sc.kernel_n)?;
    let ks = KernelSet::compute(&sc.plant, &tri)?;
    let tp = trigger_params::derive(&ks, &sc.plant, &sc.trigger)?;
    let betas = (tp.beta1, tp.beta2, tp.beta3);
    let margin = check_assumption2(&ks, &sc.plant, betas, tp.b_const, tp.kappa1, 1e6, 1e6)?;
    print!("{}", params_table(&sc, &ks, &tp, margin));
    if margin <= 0.0 {
        let (b, k2, k3) = suggest_b(&ks, &sc.plant, betas, tp.kappa1)?;
        eprintln!(
            "error: Assumption 2 infeasible at B = {:e} (margin {margin:e}); \
             feasible e.g. B = {b:e} with kappa2 = {k2:e}, kappa3 = {k3:e}",
            tp.b_const
        );
        return Err(Error::Infeasible("Assumption 2 margin is nonpositive".into()));
    }
    Ok(())
}

fn cmd_run(scheme: Scheme, config: PathBuf) -> Result<()> {
    let mut sc = load(&config)?;
    if sc.scheme.scheme() != scheme {
        // --scheme overrides the config; scheme-specific knobs must then
        // either come from the config (matching kind) or have defaults.
        sc.scheme = match scheme {
            Scheme::Cetc => SchemeConfig::Cetc,
            Scheme::Petc => SchemeConfig::Petc { h: None },
            Scheme::Stc => {
                return Err(Error::Config(
                    "running STC requires an stc scheme block in the config (psi1/psi2)".into(),
                ))
            }
        };
    }
    let out = run_scenario(&sc)?;
    emit_outputs(&out)?;
    for r in &out.reports {
        println!("{r}");
    }
    println!(
        "{} events over {} s; artifacts in {}/",
        out.events.len(),
        sc.grid.horizon,
        sc.outputs.dir
    );
    if !out.monitors_ok() {
        for v in &out.result.violations {
            eprintln!("violation: {v}");
        }
        return Err(Error::MonitorViolation("one or more monitors failed".into()));
    }
    Ok(())
}

fn cmd_compare(config: PathBuf) -> Result<()> {
    let sc = load(&config)?;
    let rows = compare_schemes(&sc)?;
    print!("{}", comparison_table(&rows));
    if rows.iter().any(|(_, out)| !out.monitors_ok()) {
        return Err(Error::MonitorViolation("monitor failure in at least one scheme".into()));
    }
    Ok(())
}

fn cmd_verify(trace: PathBuf, config: Option<PathBuf>) -> Result<()> {
    let res = parse_trace_csv(&trace)?;
    let mut reports: Vec<OracleReport> = Vec::new();

    // CSV-computable checks that need no configuration.
    let worst_gc = res.gamma_c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    reports.push(OracleReport {
        name: "gamma_c_nonpositive".into(),
        max_violation: worst_gc,
        location: "trace".into(),
        tolerance: 1e-12,
        passed: worst_gc <= 1e-12,
    });
    let min_m = res.m.iter().copied().fold(f64::INFINITY, f64::min);
    reports.push(OracleReport {
        name: "m_positive".into(),
        max_violation: -min_m,
        location: "trace".into(),
        tolerance: 0.0,
        passed: min_m > 0.0,
    });
    if let Ok((bhat, rms)) = decay_fit(&res) {
        reports.push(OracleReport {
            name: "decay_fit_bhat".into(),
            max_violation: -bhat,
            location: format!("bhat = {bhat:e}, rms residual {rms:e}"),
            tolerance: 0.0,
            passed: bhat > 0.0,
        });
    }

    // Scheme-aware checks when a configuration is available.
    if let Some(cfg) = config {
        let sc = load(&cfg)?;
        let tri = TriangularGrid::new(sc.kernel_n)?;
        let ks = KernelSet::compute(&sc.plant, &tri)?;
        let tp = trigger_params::derive(&ks, &sc.plant, &sc.trigger)?;
        let events: Vec<f64> = res
            .t
            .iter()
            .zip(&res.event)
            .filter(|(_, &e)| e)
            .map(|(&t, _)| t)
            .collect();
        let min_dwell =
            events.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let violation = (tp.tau - res.dt) - min_dwell;
        reports.push(OracleReport {
            name: "dwell_at_least_tau".into(),
            max_violation: violation,
            location: format!("min dwell = {min_dwell:e}, tau = {:e}", tp.tau),
            tolerance: 1e-12,
            passed: violation <= 1e-12,
        });
        if let SchemeConfig::Petc { h } = &sc.scheme {
            let h = h.unwrap_or_else(|| (tp.tau / sc.grid.dt).floor().max(1.0) * sc.grid.dt);
            // Tolerance grows with t to absorb accumulated time-step rounding.
            let t_end = events.last().copied().unwrap_or(0.0);
            let tol = 1e-9 + 1e-10 * t_end;
            let worst = events
                .iter()
                .map(|&t| (t / h - (t / h).round()).abs() * h)
                .fold(0.0f64, f64::max);
            reports.push(OracleReport {
                name: "petc_events_on_h_grid".into(),
                max_violation: worst,
                location: format!("h = {h:e}"),
                tolerance: tol,
                passed: worst <= tol,
            });
        }
    }

    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.passed;
    }
    if !ok {
        return Err(Error::MonitorViolation("trace verification failed".into()));
    }
    Ok(())
}

fn cmd_kernels(config: PathBuf) -> Result<()> {
    let sc = load(&config)?;
    let tri = TriangularGrid::new(sc.kernel_n)?;
    let ks = KernelSet::compute(&sc.plant, &tri)?;
    let dir = std::path::Path::new(&sc.outputs.dir);
    std::fs::create_dir_all(dir)?;
    let f = std::fs::File::create(dir.join("kernels.csv"))?;
    rdetc::kernels::write_control_csv(&ks, std::io::BufWriter::new(f))?;
    let f = std::fs::File::create(dir.join("kernels_observer.csv"))?;
    rdetc::kernels::write_observer_csv(&ks, std::io::BufWriter::new(f))?;
    println!(
        "n = {}; ||k|| = {:e}, k(1) = {:e}, ||p1|| = {:e}, p10 = {:e}; tables in {}/",
        sc.kernel_n,
        ks.norms.norm_k,
        ks.control.k1(),
        ks.norms.norm_p1,
        ks.observer.p10,
        sc.outputs.dir
    );
    Ok(())
}

fn cmd_preset(name: String) -> Result<()> {
    match builtin_scenario(&name) {
        Some(sc) => {
            println!("{}", serde_json::to_string_pretty(&sc).map_err(Error::Json)?);
            Ok(())
        }
        None => Err(Error::Config(format!(
            "unknown preset '{name}' (expected paper-cetc, paper-petc, paper-stc or fast-ci)"
        ))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Params { config } => cmd_params(config),
        Command::Run { scheme, config } => cmd_run(scheme, config),
        Command::Compare { config } => cmd_compare(config),
        Command::Verify { trace, config } => cmd_verify(trace, config),
        Command::Kernels { config } => cmd_kernels(config),
        Command::Preset { name } => cmd_preset(name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
