//! `sddelab`: batch runner for the solvers and checks.
//!
//! Exit codes: 0 success, 1 failed check or numerical failure, 2 invalid
//! configuration or flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sddelab::analysis::{ergodic_covariance_check, refinement_table, stationary_covariance, strong_error_study};
use sddelab::config::ConfigFile;
use sddelab::model::validate_problem;
use sddelab::noise::{sample_brownian, BrownianPath};
use sddelab::report::{checks_table, fmt, matrix_table, McCheck, Provenance, Table};
use sddelab::solvers::{
    comparison_table, compare_paths, solve_direct, solve_lifted, trajectory_table, MildSolver, PicardOptions,
    PicardReport, SolutionPath,
};
use sddelab::suite::run_check_suite;
use sddelab::{Error, Execution, Problem, SolverConfig};

const BUNDLED_CONFIG: &str = include_str!("../configs/scalar.toml");
const GIT_DESCRIBE: &str = env!("SDDELAB_GIT_DESCRIBE");

#[derive(Parser)]
#[command(name = "sddelab", version, about = "Stochastic delay equation solvers and numerical checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one or more paths with a single solver.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = SolverChoice::Direct)]
        solver: SolverChoice,
    },
    /// Direct, lifted and mild solutions on one Brownian path.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Picard iteration report for the mild solution.
    Picard {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
    },
    /// Stationary covariance by quadrature and by ergodic average (additive noise).
    Stationary {
        #[command(flatten)]
        run: RunArgs,
        /// Quadrature horizon; defaults to the problem horizon.
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Strong error of the direct solver under grid refinement.
    Converge {
        #[command(flatten)]
        run: RunArgs,
        /// Cell counts N of the refinement levels (dt = 1/N).
        #[arg(long, value_delimiter = ',', default_values_t = [25, 50, 100])]
        grid: Vec<usize>,
        /// Cells of the Picard reference; defaults to four times the finest level.
        #[arg(long)]
        reference: Option<usize>,
    },
    /// Full invariant suite; exits 1 if any check fails.
    Check {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML problem file; the bundled scalar problem when omitted.
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Time step; sets N = 1/dt unless --cells is given.
    #[arg(long)]
    dt: Option<f64>,
    /// History cells N; sets dt = 1/N unless --dt is given.
    #[arg(long)]
    cells: Option<usize>,
    /// Directory for CSV files; the primary table goes to stdout when omitted.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SolverChoice {
    Direct,
    Lifted,
    Mild,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged { .. } | Error::NoDecay { .. } | Error::SizeGuard { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<bool, Failure>;

struct Session {
    problem: Problem,
    config: SolverConfig,
    out_dir: Option<PathBuf>,
    quiet: bool,
    command: &'static str,
}

impl Session {
    fn open(run: &RunArgs, command: &'static str) -> Result<Self, Failure> {
        let file = match &run.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::parse(BUNDLED_CONFIG)?,
        };
        let (mut problem, mut config) = file.build()?;
        match (run.dt, run.cells) {
            (Some(dt), Some(n)) => {
                config.dt = dt;
                config.n_cells = n;
            }
            (Some(dt), None) => {
                config.dt = dt;
                let n = (1.0 / dt).round();
                if n >= 1.0 && (n * dt - 1.0).abs() <= 1e-12 {
                    config.n_cells = n as usize;
                }
            }
            (None, Some(n)) => {
                config.n_cells = n;
                config.dt = 1.0 / n as f64;
            }
            (None, None) => {}
        }
        if config.n_cells == 0 {
            return Err(Failure::Input("--cells must be positive".into()));
        }
        if problem.f0.n_cells() != config.n_cells {
            problem = problem.at_resolution(config.n_cells)?;
        }
        if let Some(seed) = run.seed {
            config.seed = seed;
        }
        if let Some(paths) = run.paths {
            config.mc_paths = paths;
        }
        let report = validate_problem(&problem, &config);
        if !run.quiet {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
        report.into_result()?;
        Ok(Self {
            problem,
            config,
            out_dir: run.out_dir.clone(),
            quiet: run.quiet,
            command,
        })
    }

    fn provenance(&self, stream: &str) -> Provenance {
        Provenance::default()
            .with("command", self.command)
            .with("seed", self.config.seed)
            .with("stream", stream)
            .with("dt", fmt(self.config.dt))
            .with("N", self.config.n_cells)
            .with("git_describe", GIT_DESCRIBE)
    }

    fn all_streams(&self, paths: usize) -> String {
        match paths {
            0 | 1 => "0".to_string(),
            n => format!("0..{}", n - 1),
        }
    }

    fn brownian(&self, stream: u64) -> Result<BrownianPath, Failure> {
        let c = &self.config;
        Ok(sample_brownian(self.problem.dim_noise, c.dt, c.steps_for(self.problem.horizon)?, c.seed, stream)?)
    }

    /// The first table is the primary output.
    fn emit(&self, stream: &str, tables: &[(&str, Table)]) -> Result<(), Failure> {
        let prov = self.provenance(stream);
        match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                for (name, table) in tables {
                    write_table(&dir.join(name), table, &prov)?;
                }
            }
            None => {
                if let Some((_, table)) = tables.first() {
                    print!("{}", table.to_csv_string(&prov));
                }
            }
        }
        Ok(())
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn write_table(path: &Path, table: &Table, prov: &Provenance) -> Result<(), Failure> {
    let file = std::fs::File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    table.write(prov, std::io::BufWriter::new(file))?;
    Ok(())
}

fn solve(s: &Session, mild: Option<&MildSolver<'_>>, choice: SolverChoice, w: &BrownianPath) -> Result<SolutionPath, Failure> {
    let (p, c) = (&s.problem, &s.config);
    Ok(match choice {
        SolverChoice::Direct => solve_direct(p, c, w)?,
        SolverChoice::Lifted => solve_lifted(p, c, w)?,
        SolverChoice::Mild => {
            let solver = mild.expect("mild solver prepared");
            solver.solve(w, &PicardOptions::new(500, c.tolerance))?.0
        }
    })
}

fn simulate(s: &Session, choice: SolverChoice) -> Outcome {
    let mild = match choice {
        SolverChoice::Mild => Some(MildSolver::new(&s.problem, &s.config)?),
        _ => None,
    };
    let first = solve(s, mild.as_ref(), choice, &s.brownian(0)?)?;
    let mut tables = vec![("trajectory.csv", trajectory_table(&first))];
    let paths = s.config.mc_paths.max(1);
    if paths > 1 {
        let finals = sddelab::mc::map_paths(paths, Execution::default(), |i| -> Result<Vec<f64>, Failure> {
            Ok(solve(s, mild.as_ref(), choice, &s.brownian(i as u64)?)?.last_head().to_vec())
        });
        let mut header = vec!["stream".to_string()];
        header.extend((1..=s.problem.dim_state).map(|i| format!("head_{i}")));
        let mut table = Table::new(&header);
        for (i, x) in finals.into_iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(x?.iter().map(|&v| fmt(v)));
            table.push_row(row);
        }
        tables.push(("terminal.csv", table));
    }
    s.say(format!(
        "{choice:?} solver: {} steps, X(T) = {:?} on stream 0",
        first.n_steps(),
        first.last_head()
    ));
    s.emit(&s.all_streams(paths), &tables)?;
    Ok(true)
}

fn compare(s: &Session) -> Outcome {
    let w = s.brownian(0)?;
    let direct = solve_direct(&s.problem, &s.config, &w)?;
    let lifted = solve_lifted(&s.problem, &s.config, &w)?;
    let mild = solve(s, Some(&MildSolver::new(&s.problem, &s.config)?), SolverChoice::Mild, &w)?;
    let table = comparison_table(&direct, &lifted, &mild)?;
    let dl = compare_paths(&direct, &lifted)?.relative_sup_error;
    let dm = compare_paths(&direct, &mild)?.relative_sup_error;
    s.say(format!("relative sup error: direct vs lifted {dl:e}, direct vs mild {dm:e}"));
    s.emit("0", &[("compare.csv", table)])?;
    Ok(true)
}

fn picard_table(report: &PicardReport) -> Table {
    let mut t = Table::new(&["window", "start_step", "end_step", "iteration", "distance", "envelope"]);
    for (i, w) in report.windows.iter().enumerate() {
        for (it, d) in w.distances.iter().enumerate() {
            t.push_row(vec![
                i.to_string(),
                w.start_step.to_string(),
                w.end_step.to_string(),
                (it + 1).to_string(),
                fmt(*d),
                fmt(w.envelope),
            ]);
        }
    }
    t
}

fn picard(s: &Session, max_iter: usize) -> Outcome {
    let solver = MildSolver::new(&s.problem, &s.config)?;
    let (_, report) = solver.solve(&s.brownian(0)?, &PicardOptions::new(max_iter, s.config.tolerance))?;
    s.say(format!(
        "{} windows, {} iterations in total, Lipschitz constant {}, empirical ratio {}",
        report.windows.len(),
        report.total_iterations(),
        report.lipschitz,
        report.empirical_ratio().map_or("n/a".to_string(), |r| format!("{r:.4}"))
    ));
    s.emit("0", &[("picard.csv", picard_table(&report))])?;
    Ok(true)
}

fn stationary(s: &Session, t_max: Option<f64>) -> Outcome {
    let t_max = t_max.unwrap_or(s.problem.horizon);
    let cov = stationary_covariance(&s.problem, t_max, s.config.dt)?;
    let checks = ergodic_covariance_check(&s.problem, &s.config, &cov.q, Execution::default())?;
    let pass = checks.iter().all(|c| c.pass);
    s.say(format!(
        "quadrature Q over [0, {t_max}], decay rate {:.4}, tail bound {:e}; ergodic check {}",
        cov.decay_rate,
        cov.tail_bound,
        if pass { "passed" } else { "FAILED" }
    ));
    s.emit(
        &s.all_streams(s.config.mc_paths),
        &[("stationary_check.csv", checks_table(&checks)), ("stationary_q.csv", matrix_table(&cov.q))],
    )?;
    Ok(pass)
}

fn converge(s: &Session, grid: &[usize], reference: Option<usize>) -> Outcome {
    let finest = grid.iter().copied().max().ok_or_else(|| Failure::Input("--grid is empty".into()))?;
    let reference = reference.unwrap_or(4 * finest);
    let rows = strong_error_study(
        &s.problem,
        grid,
        reference,
        s.config.mc_paths,
        s.config.seed,
        s.config.tolerance,
        Execution::default(),
    )?;
    for r in &rows {
        s.say(format!("N = {:>5}  rms sup error {:.4e} ± {:.1e}", r.n_cells, r.estimate, r.std_error));
    }
    s.emit(&s.all_streams(s.config.mc_paths), &[("converge.csv", refinement_table(&rows, "reference_cells"))])?;
    Ok(true)
}

fn check(s: &Session) -> Outcome {
    let rows: Vec<McCheck> = run_check_suite(&s.problem, &s.config, Execution::default())?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.check_name.as_str()).collect();
    if failed.is_empty() {
        s.say(format!("all {} checks passed", rows.len()));
    } else {
        s.say(format!("{} of {} checks failed: {}", failed.len(), rows.len(), failed.join(", ")));
    }
    s.emit(&s.all_streams(s.config.mc_paths), &[("checks.csv", checks_table(&rows))])?;
    Ok(failed.is_empty())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Simulate { run, solver } => simulate(&Session::open(run, "simulate")?, *solver),
        Command::Compare { run } => compare(&Session::open(run, "compare")?),
        Command::Picard { run, max_iter } => picard(&Session::open(run, "picard")?, *max_iter),
        Command::Stationary { run, t_max } => stationary(&Session::open(run, "stationary")?, *t_max),
        Command::Converge { run, grid, reference } => converge(&Session::open(run, "converge")?, grid, *reference),
        Command::Check { run } => check(&Session::open(run, "check")?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
