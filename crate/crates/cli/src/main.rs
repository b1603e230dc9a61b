use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecm_oef::cases;
use ecm_oef::model::{build_model, Formulation, Prepared};
use ecm_oef::fdm::build_fdm_model;
use ecm_oef::plot::export_plots;
use ecm_oef::qp::LinearSolver;
use ecm_oef::report::{
    compare, comparison_csv, comparison_text, forward_study, run, Method, RunOptions, RunReport,
};
use ecm_oef::scenario::{load_scenario, save_scenario, write_atomic, Scenario};

const USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "ecm-oef", version, about = "Dynamic optimal energy flow for power, gas and heat networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Gas pipe mesh length for the finite-difference model, m
    #[arg(long, global = true)]
    gas_mesh: Option<f64>,
    /// Heat pipe mesh length for the finite-difference model, m
    #[arg(long, global = true)]
    heat_mesh: Option<f64>,
    /// Smoothing weight ε
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Cuts per violation type and step per iteration
    #[arg(long, global = true)]
    n_r: Option<usize>,
    /// Constraint generation iteration limit
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true)]
    tol_feas: Option<f64>,
    #[arg(long, global = true)]
    tol_gap: Option<f64>,
    /// Relative tolerance of the security check
    #[arg(long, global = true)]
    check_tol: Option<f64>,
    /// Factorisation threads (0 = automatic)
    #[arg(long, global = true)]
    threads: Option<u32>,
    #[arg(long, global = true, value_enum)]
    linear_solver: Option<Solver>,
    /// Progress lines on stderr
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Faer,
    Qdldl,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario with one method and write a report
    Run {
        /// fdm, ecm, ecm-vsp or ecm-vsp-cga
        method: Method,
        /// Scenario file or bundled name (micro, small, cascade-<k>)
        scenario: String,
        /// Report path (JSON)
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Forward circuit/finite-difference comparison on single pipes
    Simulate {
        scenario: String,
        #[arg(long, default_value_t = 0)]
        gas_pipe: usize,
        #[arg(long, default_value_t = 0)]
        heat_pipe: usize,
        /// Mesh levels, each halving Δx and Δt
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Model sizes of every method without solving
    Stats { scenario: String },
    /// Side-by-side table of reports
    Compare {
        reports: Vec<PathBuf>,
        /// Reports form a scaling family of different scenarios
        #[arg(long)]
        family: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// SVG plots and CSV data from a report
    Plot {
        report: PathBuf,
        #[arg(short, long, default_value = "plots")]
        out: PathBuf,
    },
    /// Cascade copies of the small scenario; optionally solve each scale
    Scale {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        factors: Vec<usize>,
        #[arg(short, long, default_value = "cascade")]
        out: PathBuf,
        /// Solve every scale with this method and print the family table
        #[arg(long)]
        run: Option<Method>,
    },
    /// Write a bundled scenario to a file
    Export {
        name: String,
        path: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: USAGE,
        message: message.to_string(),
    }
}

fn failed(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: 4,
        message: message.to_string(),
    }
}

fn bundled(name: &str) -> Option<Scenario> {
    match name {
        "micro" => Some(cases::micro()),
        "small" => Some(cases::small()),
        _ => name
            .strip_prefix("cascade-")
            .and_then(|k| k.parse().ok())
            .filter(|&k: &usize| k >= 1)
            .map(cases::cascade),
    }
}

fn scenario(arg: &str, g: &Global) -> Result<Scenario, Failure> {
    let path = Path::new(arg);
    let mut sc = if path.exists() {
        load_scenario(path).map_err(usage)?
    } else {
        bundled(arg).ok_or_else(|| usage(format!("{arg}: no such file or bundled scenario")))?
    };
    if let Some(v) = g.gas_mesh {
        sc.solver.gas_mesh = v;
    }
    if let Some(v) = g.heat_mesh {
        sc.solver.heat_mesh = v;
    }
    if let Some(v) = g.epsilon {
        sc.solver.epsilon = Some(v);
    }
    if let Some(v) = g.n_r {
        sc.solver.n_r = v;
    }
    if let Some(v) = g.max_iter {
        sc.solver.max_iter = v;
    }
    if let Some(v) = g.tol_feas {
        sc.solver.tol_feas = v;
    }
    if let Some(v) = g.tol_gap {
        sc.solver.tol_gap = v;
    }
    sc.validate().map_err(usage)?;
    Ok(sc)
}

fn options(sc: &Scenario, g: &Global) -> RunOptions {
    let mut o = RunOptions::from_scenario(sc);
    if let Some(t) = g.threads {
        o.solve.threads = t;
    }
    if let Some(s) = g.linear_solver {
        o.solve.linear_solver = match s {
            Solver::Faer => LinearSolver::Faer,
            Solver::Qdldl => LinearSolver::Qdldl,
        };
    }
    if let Some(t) = g.check_tol {
        o.cga.check_tol = t;
    }
    o
}

fn read_report(path: &Path) -> Result<RunReport, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    RunReport::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn summary(r: &RunReport) -> String {
    let mut s = format!(
        "{} {}: {} objective {} ({} vars, {} cons, {} nnz) in {:.2} s",
        r.scenario,
        r.method,
        r.status,
        r.objective.map_or_else(|| "-".into(), |v| format!("{v:.9e}")),
        r.stats.variables,
        r.stats.constraints,
        r.stats.nonzeros,
        r.timing.total_seconds
    );
    if let Some(t) = &r.cga {
        s += &format!(", {} cga iterations ({:?})", t.iterations.len(), t.status);
    }
    if let Some(v) = r.violations {
        s += &format!(", {v} violations");
    }
    s
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Run { method, scenario: name, out } => {
            let sc = scenario(&name, g)?;
            let report = run(method, &sc, &options(&sc, g)).map_err(failed)?;
            println!("{}", summary(&report));
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{}-{}.json", sc.name, method)));
            write_atomic(&out, report.to_json().as_bytes()).map_err(failed)?;
            Ok(report.exit_code() as u8)
        }
        Command::Simulate {
            scenario: name,
            gas_pipe,
            heat_pipe,
            levels,
        } => {
            let sc = scenario(&name, g)?;
            let st = forward_study(&sc, gas_pipe, heat_pipe, levels).map_err(failed)?;
            for (label, pipe, rows) in [("gas", &st.gas_pipe, &st.gas), ("heat", &st.heat_pipe, &st.heat)] {
                let Some(pipe) = pipe else { continue };
                println!("{label} pipe {pipe}");
                println!("  {:>9} {:>9} {:>12} {:>12}", "dx[m]", "dt[s]", "rms", "relative");
                for a in rows {
                    println!("  {:>9.2} {:>9.2} {:>12.4e} {:>12.4e}", a.dx, a.dt, a.rms, a.relative_rms);
                }
            }
            Ok(0)
        }
        Command::Stats { scenario: name } => {
            let sc = scenario(&name, g)?;
            let prep = Prepared::new(&sc).map_err(usage)?;
            println!("{:<10} {:>9} {:>9} {:>10}", "model", "vars", "cons", "nnz");
            for (tag, f) in [("ecm", Formulation::Ecm), ("ecm-vsp", Formulation::Vsp), ("relaxed", Formulation::Raw)] {
                let s = build_model(&sc, &prep, f).qp.stats();
                println!("{tag:<10} {:>9} {:>9} {:>10}", s.variables, s.constraints, s.nonzeros);
            }
            let s = build_fdm_model(&sc, &prep).map_err(failed)?.qp.stats();
            println!("{:<10} {:>9} {:>9} {:>10}", "fdm", s.variables, s.constraints, s.nonzeros);
            Ok(0)
        }
        Command::Compare { reports, family, csv } => {
            let reports = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
            let rows = compare(&reports, family).map_err(usage)?;
            print!("{}", comparison_text(&rows));
            if let Some(path) = csv {
                write_atomic(&path, comparison_csv(&rows).as_bytes()).map_err(failed)?;
            }
            Ok(0)
        }
        Command::Plot { report, out } => {
            let r = read_report(&report)?;
            for p in export_plots(&r, &out).map_err(failed)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Scale { factors, out, run: method } => {
            let mut reports = Vec::new();
            let mut code = 0;
            for k in factors {
                if k == 0 {
                    return Err(usage("scale factors start at 1"));
                }
                let mut sc = cases::cascade(k);
                if let Some(v) = g.epsilon {
                    sc.solver.epsilon = Some(v);
                }
                let path = out.join(format!("cascade-{k}x.json"));
                save_scenario(&sc, &path).map_err(failed)?;
                println!("{}", path.display());
                if let Some(m) = method {
                    let r = run(m, &sc, &options(&sc, g)).map_err(failed)?;
                    println!("{}", summary(&r));
                    code = code.max(r.exit_code());
                    reports.push(r);
                }
            }
            if reports.len() >= 2 {
                let rows = compare(&reports, true).map_err(usage)?;
                print!("{}", comparison_text(&rows));
                write_atomic(&out.join("family.csv"), comparison_csv(&rows).as_bytes()).map_err(failed)?;
            }
            Ok(code as u8)
        }
        Command::Export { name, path } => {
            let sc = bundled(&name).ok_or_else(|| usage(format!("no bundled scenario `{name}`")))?;
            save_scenario(&sc, &path).map_err(failed)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
