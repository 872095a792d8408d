//! Command dispatch and artifact writing.

use std::fs;
use std::io;
use std::path::PathBuf;

use obstacle_control::builtins::random_obstacle;
use obstacle_control::control::{
    exponent_json, minimize_jinf, minimize_jinf_1d_direct, minimize_jp, sampled_optimality,
    ControlSolution, Sampling,
};
use obstacle_control::experiments::run_studies;
use obstacle_control::grid::{fmt_real, Exponent, GridFunction, ObstacleInstance};
use obstacle_control::obstacle::{brute_force_obstacle, lcm_1d, solve, BRUTE_FORCE_MAX_NODES};
use obstacle_control::Error;
use serde::Serialize;
use serde_json::json;

use crate::config::{Command, RunConfig};

pub const EXIT_CERTIFIED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_WARNINGS: i32 = 2;

/// Slack of the sampled optimality comparison.
const OPTIMALITY_SLACK: f64 = 1e-6;
/// Half-width of the sampled control perturbations.
const PERTURBATION_RADIUS: f64 = 1e-2;
/// Allowed disagreement between the continuation and the direct 1D ∞-solver.
const CROSS_CHECK_TOLERANCE: f64 = 1e-2;

/// Files written so far, relative to the output directory, in write order.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    warnings: Vec<String>,
    advisories: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        fs::write(self.dir.join(name), contents)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(name, &text)
    }
}

#[derive(Debug)]
enum Failure {
    Io(io::Error),
    Solver(Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Solver(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(e) => write!(f, "i/o error: {e}"),
            Self::Solver(e) => write!(f, "{e}"),
        }
    }
}

/// Executes `cfg` and returns the process exit code.
pub fn run(cfg: &RunConfig) -> i32 {
    if let Err(e) = fs::create_dir_all(&cfg.output_dir) {
        eprintln!("error: cannot create {}: {e}", cfg.output_dir.display());
        return EXIT_ERROR;
    }
    let mut art = Artifacts {
        dir: cfg.output_dir.clone(),
        files: Vec::new(),
        warnings: Vec::new(),
        advisories: Vec::new(),
    };
    let result = match cfg.command {
        Command::SolveObstacle => solve_obstacle(cfg, &mut art),
        Command::OptimalControl => optimal_control(cfg, &mut art),
        Command::Converge => converge(cfg, &mut art),
        Command::OracleCheck => oracle_check(cfg, &mut art),
    };
    let (code, error) = match &result {
        Ok(()) if art.warnings.is_empty() => (EXIT_CERTIFIED, None),
        Ok(()) => (EXIT_WARNINGS, None),
        Err(e) => (EXIT_ERROR, Some(e.to_string())),
    };
    for w in &art.warnings {
        eprintln!("warning: {w}");
    }
    for a in &art.advisories {
        eprintln!("note: {a}");
    }
    if let Some(e) = &error {
        eprintln!("error: {e}");
    }
    let manifest = json!({
        "command": cfg.command,
        "exit_code": code,
        "files": art.files,
        "warnings": art.warnings,
        "advisories": art.advisories,
        "error": error,
        "config": cfg.echo(),
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    if let Err(e) = fs::write(art.dir.join("manifest.json"), text) {
        eprintln!("error: cannot write manifest: {e}");
        return EXIT_ERROR;
    }
    code
}

fn single(cfg: &RunConfig) -> Result<ObstacleInstance, Failure> {
    Ok(cfg.instances[0].build(cfg.exponent)?)
}

fn solve_obstacle(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let inst = single(cfg)?;
    match solve(&inst, &cfg.solver_options()) {
        Ok(sol) => {
            art.write("state.csv", &sol.state.to_csv())?;
            art.json("report.json", &sol.report)?;
            Ok(())
        }
        Err(Error::NonConvergence(sol)) => {
            art.write("state.csv", &sol.state.to_csv())?;
            art.json("report.json", &sol.report)?;
            Err(Error::NonConvergence(sol).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn write_control(art: &mut Artifacts, prefix: &str, sol: &ControlSolution) -> io::Result<()> {
    art.write(&format!("{prefix}control.csv"), &sol.control.to_csv())?;
    art.write(&format!("{prefix}state.csv"), &sol.state.to_csv())?;
    art.write(&format!("{prefix}control.json"), &(sol.to_json() + "\n"))
}

fn trace_csv(sol: &ControlSolution) -> String {
    let mut out = String::from("p,J_p,H_p,fixed_point_residual,wall_time_s,converged,certified\n");
    for s in &sol.trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.p,
            fmt_real(s.objective),
            fmt_real(s.h_p),
            fmt_real(s.fixed_point_residual),
            fmt_real(s.wall_time),
            s.converged,
            s.certified
        ));
    }
    out
}

fn optimal_control(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let inst = single(cfg)?;
    let z = inst.profile()?;
    let f = &inst.boundary;
    let opts = cfg.control_options();
    let solved = match cfg.exponent {
        Exponent::Finite(p) => minimize_jp(z, f, p, &opts),
        Exponent::Infinity => minimize_jinf(z, f, &cfg.p_schedule, &opts),
    };
    let sol = match solved {
        Ok(s) => s,
        Err(Error::CertificateFailure(s)) => {
            art.warnings.push(format!(
                "fixed-point residual {:.3e} exceeds {:.1e}",
                s.fixed_point_residual, s.certificate_tolerance
            ));
            *s
        }
        Err(e) => return Err(e.into()),
    };
    write_control(art, "", &sol)?;
    if !sol.report.converged {
        art.warnings
            .push("outer minimization stopped before its tolerance".into());
    }
    if !sol.trace.is_empty() {
        art.write("trace.csv", &trace_csv(&sol))?;
    }

    let sampling = Sampling {
        samples: cfg.optimality_samples,
        radius: PERTURBATION_RADIUS,
        seed: cfg.seed,
        slack: OPTIMALITY_SLACK,
    };
    let check = sampled_optimality(&sol, z, f, &sampling, &opts.obstacle)?;
    art.json("optimality.json", &check)?;
    for c in &check.improved_by {
        art.warnings
            .push(format!("sampled control improves the objective: {c}"));
    }

    if cfg.exponent.is_infinite() && inst.grid.dimension() == 1 {
        let direct = match minimize_jinf_1d_direct(z, f, &opts) {
            Ok(s) => s,
            Err(Error::CertificateFailure(s)) => *s,
            Err(e) => return Err(e.into()),
        };
        let difference = (direct.objective - sol.objective).abs();
        art.json(
            "cross_check.json",
            &json!({
                "continuation_objective": sol.objective,
                "direct_objective": direct.objective,
                "difference": difference,
                "tolerance": CROSS_CHECK_TOLERANCE,
            }),
        )?;
        if difference > CROSS_CHECK_TOLERANCE {
            art.warnings.push(format!(
                "continuation and direct 1D solver differ by {difference:.3e}"
            ));
        }
    }
    Ok(())
}

fn max_threads() -> usize {
    std::env::var("OBSCTL_MAX_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn converge(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let mut built = Vec::with_capacity(cfg.instances.len());
    for spec in &cfg.instances {
        built.push((spec.id().to_string(), spec.build(cfg.exponent)?));
    }
    let results = run_studies(
        &built,
        &cfg.p_schedule,
        &cfg.control_options(),
        max_threads(),
    );
    let mut first_error = None;
    for ((id, _), result) in built.iter().zip(results) {
        match result {
            Ok(study) => {
                let t = &study.table;
                art.write(&format!("{id}.table.csv"), &t.to_csv())?;
                art.write(&format!("{id}.summary.json"), &(t.summary_json() + "\n"))?;
                write_control(art, &format!("{id}."), &study.solution)?;
                art.warnings
                    .extend(t.warnings.iter().map(|w| format!("{id}: {w}")));
                art.advisories
                    .extend(t.advisories.iter().map(|a| format!("{id}: {a}")));
            }
            Err(e) => {
                art.warnings.push(format!("{id}: {e}"));
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct OracleComparison {
    case: String,
    oracle: &'static str,
    distance: f64,
    passed: bool,
}

fn compare(
    case: String,
    oracle: &'static str,
    computed: &GridFunction,
    reference: &GridFunction,
    tol: f64,
) -> Result<OracleComparison, Failure> {
    let distance = computed.sup_distance(reference)?;
    Ok(OracleComparison {
        case,
        oracle,
        distance,
        passed: distance <= tol,
    })
}

/// Every oracle that applies to `inst`: the concave majorant in 1D for any
/// exponent, and the dense solver for finite p on small grids.
fn check_against_oracles(
    case: &str,
    inst: &ObstacleInstance,
    cfg: &RunConfig,
    out: &mut Vec<OracleComparison>,
    art: &mut Artifacts,
) -> Result<(), Failure> {
    let tol = cfg.oracle_tolerance();
    let computed = match solve(inst, &cfg.solver_options()) {
        Ok(s) => s.state,
        Err(Error::NonConvergence(s)) => {
            art.warnings
                .push(format!("{case}: obstacle solve did not converge"));
            s.state
        }
        Err(e) => return Err(e.into()),
    };
    if inst.grid.dimension() == 1 {
        let hull = lcm_1d(&inst.obstacle, &inst.boundary)?;
        out.push(compare(
            case.into(),
            "least concave majorant",
            &computed,
            &hull,
            tol,
        )?);
    }
    if !inst.exponent.is_infinite() && inst.grid.node_count() <= BRUTE_FORCE_MAX_NODES {
        let dense = brute_force_obstacle(inst, cfg.solver_options().residual_tolerance)?;
        out.push(compare(
            case.into(),
            "dense solver",
            &computed,
            &dense,
            tol,
        )?);
    }
    Ok(())
}

fn oracle_check(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let inst = single(cfg)?;
    let mut comparisons = Vec::new();
    check_against_oracles(cfg.instances[0].id(), &inst, cfg, &mut comparisons, art)?;
    let has_oracle = !comparisons.is_empty();
    if has_oracle {
        let g = inst.grid;
        for i in 0..cfg.oracle_samples {
            let seed = cfg.seed.wrapping_add(i as u64);
            let mut psi = random_obstacle(g, seed).into_values();
            for (k, b) in g.boundary_nodes().into_iter().zip(inst.boundary.values()) {
                psi[k] = psi[k].min(*b);
            }
            let sample = inst.with_obstacle(GridFunction::new(g, psi)?)?;
            check_against_oracles(
                &format!("random obstacle, seed {seed}"),
                &sample,
                cfg,
                &mut comparisons,
                art,
            )?;
        }
    } else {
        art.warnings.push(format!(
            "no independent oracle applies: the grid is not 1D and {} (limit {BRUTE_FORCE_MAX_NODES})",
            if inst.exponent.is_infinite() {
                "the dense solver needs a finite p".to_string()
            } else {
                format!("has {} nodes", inst.grid.node_count())
            }
        ));
    }
    for c in comparisons.iter().filter(|c| !c.passed) {
        art.warnings.push(format!(
            "{}: {} distance {:.3e} exceeds tolerance",
            c.case, c.oracle, c.distance
        ));
    }
    art.json(
        "oracle_check.json",
        &json!({
            "p": exponent_json(cfg.exponent),
            "tolerance": cfg.oracle_tolerance(),
            "comparisons": comparisons,
            "all_passed": has_oracle && comparisons.iter().all(|c| c.passed),
        }),
    )?;
    Ok(())
}
