//! Optimal control of the obstacle: evaluate and minimize
//! `J_p(ψ) = (Σ |T_p(ψ) - z|^p + |D ψ|^p)^(1/p)` and its limit
//! `J_∞(ψ) = max(‖T_∞(ψ) - z‖_∞, ‖D ψ‖_∞)`.
//!
//! Replacing a control by its own state never increases `J_p`: the state term
//! is unchanged because `T_p` is idempotent, and `T_p(ψ)` has no more energy
//! than the feasible competitor `ψ`. So the minimization runs over the
//! discrete superharmonic cone, where control and state coincide. Every
//! returned control is passed through the obstacle operator once more and the
//! distance `‖T(ψ*) - ψ*‖_∞` is reported as its fixed-point certificate.

mod cone;
mod direct;
mod penalty;

use std::time::Instant;

use serde::Serialize;

pub use direct::minimize_jinf_1d_direct;

use crate::error::{Error, Result};
use crate::grid::{BoundaryData, Exponent, Grid, GridFunction, ObstacleInstance};
use crate::obstacle::{solve_inf_obstacle, solve_p_obstacle, SolverOptions, SolverReport};
use crate::operators::{check_exponent, power_sum_root, sup_gradient_norm};

/// Tolerances of the control solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlOptions {
    /// Options for every inner obstacle solve.
    pub obstacle: SolverOptions,
    /// Stationarity tolerance of the outer minimization, relative to the initial gradient.
    pub optimality_tolerance: f64,
    /// Iteration cap of the outer minimization (per penalty stage where applicable).
    pub max_iterations: usize,
    /// Bound on `‖T(ψ*) - ψ*‖_∞` for a certified solution.
    pub certificate_tolerance: f64,
    /// On 1D grids [`minimize_jinf`] keeps doubling p past the schedule up to this value.
    pub continuation_limit: f64,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            obstacle: SolverOptions::default(),
            optimality_tolerance: 1e-12,
            max_iterations: 400,
            certificate_tolerance: 1e-4,
            continuation_limit: 1024.0,
        }
    }
}

/// One stage of the p-continuation in [`minimize_jinf`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub p: f64,
    /// `J_p` at the stage minimizer.
    pub objective: f64,
    /// `max(‖T_p(ψ_p) - z‖_∞, ‖D ψ_p‖_∞)`.
    pub h_p: f64,
    pub fixed_point_residual: f64,
    #[serde(rename = "wall_time_s")]
    pub wall_time: f64,
    pub converged: bool,
    pub certified: bool,
}

#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub exponent: Exponent,
    pub control: GridFunction,
    /// `T(control)`.
    pub state: GridFunction,
    pub objective: f64,
    pub fixed_point_residual: f64,
    pub certificate_tolerance: f64,
    pub certified: bool,
    /// Outer minimization report: `final_residual` is the stationarity measure.
    pub report: SolverReport,
    /// Per-stage records of a p-continuation; empty otherwise.
    pub trace: Vec<StageRecord>,
    /// `(p, J_∞)` of the ∞-restored minimizers of continuation stages run past the schedule.
    pub refinement: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct Sidecar {
    p: serde_json::Value,
    objective: f64,
    fixed_point_residual: f64,
    converged: bool,
    iterations: usize,
}

impl ControlSolution {
    /// JSON sidecar with keys `p, objective, fixed_point_residual, converged, iterations`.
    pub fn to_json(&self) -> String {
        let s = Sidecar {
            p: exponent_json(self.exponent),
            objective: self.objective,
            fixed_point_residual: self.fixed_point_residual,
            converged: self.report.converged,
            iterations: self.report.iterations,
        };
        serde_json::to_string_pretty(&s).expect("sidecar serializes")
    }

    fn into_result(self) -> Result<Self> {
        if self.certified {
            Ok(self)
        } else {
            Err(Error::CertificateFailure(Box::new(self)))
        }
    }
}

/// A finite exponent as a JSON number, infinity as the string `"inf"`.
pub fn exponent_json(e: Exponent) -> serde_json::Value {
    match e {
        Exponent::Finite(p) => serde_json::json!(p),
        Exponent::Infinity => serde_json::json!("inf"),
    }
}

/// State `T(ψ)` with boundary data taken from `ψ` itself.
pub fn state_of(
    psi: &GridFunction,
    exponent: Exponent,
    opts: &SolverOptions,
) -> Result<GridFunction> {
    let inst = ObstacleInstance::new(psi.clone(), psi.restrict_to_boundary(), None, exponent)?;
    let sol = match exponent {
        Exponent::Finite(_) => solve_p_obstacle(&inst, opts)?,
        Exponent::Infinity => solve_inf_obstacle(&inst, opts)?,
    };
    Ok(sol.state)
}

/// `J_p` from a control and a precomputed state.
pub(crate) fn jp_from_state(state: &[f64], z: &[f64], psi: &[f64], grid: &Grid, p: f64) -> f64 {
    let nodes = state
        .iter()
        .zip(z)
        .enumerate()
        .map(|(k, (u, z))| ((u - z).abs(), grid.nodal_volume(k)));
    let vol = grid.cell_volume();
    let cells = (0..grid.cell_count()).map(move |c| {
        let g = grid.cell_gradient(psi, c);
        (g[0].hypot(g[1]), vol)
    });
    power_sum_root(nodes.chain(cells), p)
}

/// `max(‖state - z‖_∞, ‖D ψ‖_∞)`.
pub(crate) fn max_form(state: &GridFunction, z: &GridFunction, psi: &GridFunction) -> Result<f64> {
    Ok(state.sup_distance(z)?.max(sup_gradient_norm(psi)))
}

fn check_pair(psi: &GridFunction, z: &GridFunction) -> Result<()> {
    if psi.grid() != z.grid() {
        return Err(Error::GridMismatch("control and profile"));
    }
    Ok(())
}

/// `J_p(ψ)` with the state computed by [`solve_p_obstacle`].
pub fn eval_jp(psi: &GridFunction, z: &GridFunction, p: f64, opts: &SolverOptions) -> Result<f64> {
    check_exponent(p)?;
    check_pair(psi, z)?;
    let u = state_of(psi, Exponent::Finite(p), opts)?;
    Ok(jp_from_state(
        u.values(),
        z.values(),
        psi.values(),
        psi.grid(),
        p,
    ))
}

/// `H_p(ψ) = max(‖T_p(ψ) - z‖_∞, ‖D ψ‖_∞)`.
pub fn eval_hp(psi: &GridFunction, z: &GridFunction, p: f64, opts: &SolverOptions) -> Result<f64> {
    check_exponent(p)?;
    check_pair(psi, z)?;
    let u = state_of(psi, Exponent::Finite(p), opts)?;
    max_form(&u, z, psi)
}

/// `J_∞(ψ) = max(‖T_∞(ψ) - z‖_∞, ‖D ψ‖_∞)`.
pub fn eval_jinf(psi: &GridFunction, z: &GridFunction, opts: &SolverOptions) -> Result<f64> {
    check_pair(psi, z)?;
    let u = state_of(psi, Exponent::Infinity, opts)?;
    max_form(&u, z, psi)
}

/// `‖T(ψ) - ψ‖_∞`, zero exactly when `ψ` is its own state.
pub fn fixed_point_residual(
    psi: &GridFunction,
    exponent: Exponent,
    opts: &SolverOptions,
) -> Result<f64> {
    state_of(psi, exponent, opts)?.sup_distance(psi)
}

/// Candidate produced by one of the minimization back ends, before certification.
pub(crate) struct Candidate {
    pub control: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity: f64,
    pub tolerance: f64,
}

fn check_control_data(z: &GridFunction, f: &BoundaryData) -> Result<()> {
    if z.grid() != f.grid() {
        return Err(Error::GridMismatch("profile and boundary data"));
    }
    Ok(())
}

/// Minimizes `J_p` over controls with boundary values `f`.
pub fn minimize_jp(
    z: &GridFunction,
    f: &BoundaryData,
    p: f64,
    opts: &ControlOptions,
) -> Result<ControlSolution> {
    minimize_jp_from(z, f, p, None, opts)
}

/// [`minimize_jp`] started from `warm` (any function with boundary values `f`).
pub fn minimize_jp_from(
    z: &GridFunction,
    f: &BoundaryData,
    p: f64,
    warm: Option<&GridFunction>,
    opts: &ControlOptions,
) -> Result<ControlSolution> {
    check_exponent(p)?;
    check_control_data(z, f)?;
    let clock = Instant::now();
    let grid = *z.grid();
    let candidate = if p == 2.0 || grid.dimension() == 1 {
        cone::minimize(z, f, p, warm, opts)?
    } else {
        penalty::minimize(z, f, p, warm, opts)?
    };
    certify(z, candidate, Exponent::Finite(p), opts, clock)
}

fn certify(
    z: &GridFunction,
    candidate: Candidate,
    exponent: Exponent,
    opts: &ControlOptions,
    clock: Instant,
) -> Result<ControlSolution> {
    let grid = *z.grid();
    let control = GridFunction::new(grid, candidate.control)?;
    let state = state_of(&control, exponent, &opts.obstacle)?;
    let objective = match exponent {
        Exponent::Finite(p) => {
            jp_from_state(state.values(), z.values(), control.values(), &grid, p)
        }
        Exponent::Infinity => max_form(&state, z, &control)?,
    };
    let fixed_point_residual = state.sup_distance(&control)?;
    let certified = fixed_point_residual <= opts.certificate_tolerance;
    ControlSolution {
        exponent,
        control,
        state,
        objective,
        fixed_point_residual,
        certificate_tolerance: opts.certificate_tolerance,
        certified,
        report: SolverReport {
            converged: candidate.converged,
            iterations: candidate.iterations,
            final_residual: candidate.stationarity,
            complementarity_gap: 0.0,
            tolerance_used: candidate.tolerance,
            wall_time: clock.elapsed().as_secs_f64(),
        },
        trace: Vec::new(),
        refinement: Vec::new(),
    }
    .into_result()
}

/// Default p-continuation schedule.
pub const DEFAULT_SCHEDULE: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];

/// Minimizes `J_∞` by continuation in p.
///
/// Each stage minimizes `J_p` warm-started from the previous stage. The last
/// stage minimizer is then replaced by its ∞-obstacle state, which is the
/// returned control.
pub fn minimize_jinf(
    z: &GridFunction,
    f: &BoundaryData,
    schedule: &[f64],
    opts: &ControlOptions,
) -> Result<ControlSolution> {
    check_control_data(z, f)?;
    if schedule.is_empty() {
        return Err(Error::InvalidValue("empty p schedule".into()));
    }
    for w in schedule.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidValue(format!(
                "p schedule must be increasing, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    let clock = Instant::now();
    let mut trace = Vec::with_capacity(schedule.len());
    let mut warm: Option<GridFunction> = None;
    let mut iterations = 0;
    let mut converged = true;
    for &p in schedule {
        let stage = match minimize_jp_from(z, f, p, warm.as_ref(), opts) {
            Ok(s) => s,
            Err(Error::CertificateFailure(s)) => *s,
            Err(e) => return Err(e),
        };
        trace.push(StageRecord {
            p,
            objective: stage.objective,
            h_p: max_form(&stage.state, z, &stage.control)?,
            fixed_point_residual: stage.fixed_point_residual,
            wall_time: stage.report.wall_time,
            converged: stage.report.converged,
            certified: stage.certified,
        });
        iterations += stage.report.iterations;
        converged &= stage.report.converged;
        warm = Some(stage.control);
    }
    let last = warm.expect("schedule is nonempty");
    let mut control = state_of(&last, Exponent::Infinity, &opts.obstacle)?;

    // Where the cone is polyhedral each further stage is a cheap convex
    // solve, so continue doubling p and keep the best ∞-restored candidate.
    let mut refinement = Vec::new();
    let p_max = schedule[schedule.len() - 1];
    if z.grid().dimension() == 1 && p_max < opts.continuation_limit {
        let jinf = |c: &GridFunction| -> Result<f64> {
            max_form(&state_of(c, Exponent::Infinity, &opts.obstacle)?, z, c)
        };
        let mut best = jinf(&control)?;
        let mut stage_start = last;
        let mut p = p_max;
        while 2.0 * p <= opts.continuation_limit {
            p *= 2.0;
            let stage = cone::minimize(z, f, p, Some(&stage_start), opts)?;
            iterations += stage.iterations;
            stage_start = GridFunction::new(*z.grid(), stage.control)?;
            let restored = state_of(&stage_start, Exponent::Infinity, &opts.obstacle)?;
            let value = jinf(&restored)?;
            refinement.push((p, value));
            if value < best {
                best = value;
                control = restored;
            }
        }
    }

    let candidate = Candidate {
        control: control.into_values(),
        converged,
        iterations,
        stationarity: 0.0,
        tolerance: opts.optimality_tolerance,
    };
    let mut out = match certify(z, candidate, Exponent::Infinity, opts, clock) {
        Ok(s) => s,
        Err(Error::CertificateFailure(s)) => *s,
        Err(e) => return Err(e),
    };
    out.trace = trace;
    out.refinement = refinement;
    out.into_result()
}

/// Outcome of [`sampled_optimality`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityCheck {
    pub candidates: usize,
    /// Largest `J(ψ*) - J(η)` seen; positive when some candidate did better.
    pub worst_improvement: f64,
    /// Candidates that beat `ψ*` by more than the slack.
    pub improved_by: Vec<String>,
}

impl OptimalityCheck {
    pub fn passed(&self) -> bool {
        self.improved_by.is_empty()
    }
}

/// Parameters of [`sampled_optimality`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sampling {
    pub samples: usize,
    /// Half-width of the uniform perturbation at each interior node.
    pub radius: f64,
    pub seed: u64,
    /// Improvements up to this much are tolerated.
    pub slack: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            samples: 50,
            radius: 1e-2,
            seed: 0,
            slack: 1e-6,
        }
    }
}

/// Compares `J(ψ*)` against random perturbations `ψ* + δ`, with `δ` zero on
/// the boundary and uniform in `[-radius, radius]` inside, and against two
/// canonical controls: the zero extension of `f`, and `z` with its boundary
/// values replaced by `f`.
pub fn sampled_optimality(
    sol: &ControlSolution,
    z: &GridFunction,
    f: &BoundaryData,
    sampling: &Sampling,
    opts: &SolverOptions,
) -> Result<OptimalityCheck> {
    let Sampling {
        samples,
        radius,
        seed,
        slack,
    } = *sampling;
    use rand::{Rng, SeedableRng};

    let grid = *z.grid();
    let cost = |eta: &GridFunction| match sol.exponent {
        Exponent::Finite(p) => eval_jp(eta, z, p, opts),
        Exponent::Infinity => eval_jinf(eta, z, opts),
    };
    let mut candidates = vec![(
        "zero extension of the boundary data".to_string(),
        crate::grid::embed_boundary(f, 0.0)?,
    )];
    let mut clipped = z.values().to_vec();
    for (k, g) in grid.boundary_nodes().into_iter().zip(f.values()) {
        clipped[k] = *g;
    }
    candidates.push((
        "profile with boundary data imposed".to_string(),
        GridFunction::new(grid, clipped)?,
    ));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for i in 0..samples {
        let eta = sol
            .control
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| {
                if grid.is_boundary(k) {
                    *v
                } else {
                    v + rng.gen_range(-radius..=radius)
                }
            })
            .collect();
        candidates.push((format!("perturbation {i}"), GridFunction::new(grid, eta)?));
    }

    let mut worst = f64::NEG_INFINITY;
    let mut improved_by = Vec::new();
    for (name, eta) in &candidates {
        let d = sol.objective - cost(eta)?;
        worst = worst.max(d);
        if d > slack {
            improved_by.push(format!("{name} (by {d:.3e})"));
        }
    }
    Ok(OptimalityCheck {
        candidates: candidates.len(),
        worst_improvement: worst,
        improved_by,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Grid {
        Grid::line(65, 1.0).unwrap()
    }

    #[test]
    fn tent_control_survives_sampling() {
        let inst = crate::builtins::builtin("tent1d").unwrap();
        let z = inst.profile().unwrap();
        let sol = minimize_jp(z, &inst.boundary, 4.0, &ControlOptions::default()).unwrap();
        let sampling = Sampling {
            samples: 20,
            seed: 1,
            ..Sampling::default()
        };
        let check = sampled_optimality(
            &sol,
            z,
            &inst.boundary,
            &sampling,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(check.candidates, 22);
        assert!(check.passed(), "{:?}", check.improved_by);
    }

    #[test]
    fn zero_data_has_zero_cost() {
        let g = line();
        let zero = GridFunction::zeros(g);
        let opts = SolverOptions::default();
        assert_eq!(eval_jp(&zero, &zero, 3.0, &opts).unwrap(), 0.0);
        assert_eq!(eval_jinf(&zero, &zero, &opts).unwrap(), 0.0);
        assert!(fixed_point_residual(&zero, Exponent::Infinity, &opts).unwrap() <= 2e-6);
    }

    #[test]
    fn constant_profile_costs_its_level() {
        let g = line();
        let zero = GridFunction::zeros(g);
        let z = GridFunction::constant(g, 0.7);
        let opts = SolverOptions::default();
        for p in [2.0, 5.0, 32.0] {
            assert!((eval_jp(&zero, &z, p, &opts).unwrap() - 0.7).abs() < 1e-12);
            assert!((eval_hp(&zero, &z, p, &opts).unwrap() - 0.7).abs() < 1e-12);
        }
        assert!((eval_jinf(&zero, &z, &opts).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn jp_matches_independent_quadrature() {
        let g = Grid::line(9, 1.0).unwrap();
        let tent = GridFunction::from_fn(g, |x, _| 0.5 - (x - 0.5).abs()).unwrap();
        let z = GridFunction::from_fn(g, |x, _| x * x).unwrap();
        let p = 3.0;
        let opts = SolverOptions::default();
        let u = state_of(&tent, Exponent::Finite(p), &opts).unwrap();
        let h = 1.0 / 8.0;
        let mut sum = 0.0;
        for k in 0..9 {
            let w = if k == 0 || k == 8 { h / 2.0 } else { h };
            sum += w * (u.values()[k] - z.values()[k]).abs().powf(p);
        }
        for c in 0..8 {
            let s = (tent.values()[c + 1] - tent.values()[c]) / h;
            sum += h * s.abs().powf(p);
        }
        let expected = sum.powf(1.0 / p);
        assert!((eval_jp(&tent, &z, p, &opts).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn hp_of_own_state_is_slope() {
        let g = line();
        let tent = GridFunction::from_fn(g, |x, _| 0.3 - 0.6 * (x - 0.5).abs()).unwrap();
        let opts = SolverOptions::default();
        let u = state_of(&tent, Exponent::Finite(4.0), &opts).unwrap();
        assert!((eval_hp(&tent, &u, 4.0, &opts).unwrap() - 0.6).abs() < 1e-9);
    }

    #[test]
    fn fixed_point_residual_of_a_dip_is_its_depth() {
        let g = line();
        let dip = GridFunction::from_fn(g, |x, _| {
            let base = 0.4 - 0.8 * (x - 0.5).abs();
            if (x - 0.5).abs() < 1e-9 {
                base - 0.1
            } else {
                base
            }
        })
        .unwrap();
        let hull = crate::obstacle::lcm_1d(&dip, &dip.restrict_to_boundary()).unwrap();
        let expected = hull.sup_distance(&dip).unwrap();
        assert!((expected - (0.1 - 0.8 / 64.0)).abs() < 1e-12);
        for e in [
            Exponent::Finite(2.0),
            Exponent::Finite(6.0),
            Exponent::Infinity,
        ] {
            let r = fixed_point_residual(&dip, e, &SolverOptions::default()).unwrap();
            assert!((r - expected).abs() < 1e-8, "{e}: {r}");
        }
    }

    #[test]
    fn sidecar_keys() {
        let g = Grid::line(9, 1.0).unwrap();
        let zero = GridFunction::zeros(g);
        let sol = minimize_jp(
            &zero,
            &BoundaryData::constant(g, 0.0),
            2.0,
            &ControlOptions::default(),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&sol.to_json()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "converged",
                "fixed_point_residual",
                "iterations",
                "objective",
                "p"
            ]
        );
        assert_eq!(v["p"], 2.0);
    }

    #[test]
    fn schedule_must_increase() {
        let g = Grid::line(9, 1.0).unwrap();
        let zero = GridFunction::zeros(g);
        let f = BoundaryData::constant(g, 0.0);
        let opts = ControlOptions::default();
        assert!(minimize_jinf(&zero, &f, &[4.0, 2.0], &opts).is_err());
        assert!(minimize_jinf(&zero, &f, &[], &opts).is_err());
    }
}
