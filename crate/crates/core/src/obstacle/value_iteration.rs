//! Monotone value iteration for the discrete ∞-obstacle problem.
//!
//! Starting from a supersolution, the in-place sweep
//! `u[k] <- max(ψ[k], (max_N u + min_N u) / 2)` never raises a node, so the
//! iterates decrease to the smallest discrete ∞-superharmonic majorant of ψ.

use std::time::Instant;

use super::{complementarity, contact_mask, ObstacleSolution, SolverOptions, SolverReport};
use crate::error::{Error, Result};
use crate::grid::{check_feasible, GridFunction, ObstacleInstance};
use crate::operators::{inf_residual_raw, midrange};

/// `T_∞(ψ)`, iterated down from the constant `max(max ψ, max g)`.
pub fn solve_inf_obstacle(
    inst: &ObstacleInstance,
    opts: &SolverOptions,
) -> Result<ObstacleSolution> {
    let top = inst
        .obstacle
        .values()
        .iter()
        .chain(inst.boundary.values())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let start = GridFunction::constant(inst.grid, top);
    iterate(inst, start.into_values(), opts, None)
}

/// `T_∞(ψ)` started from `start` (interior values only; the boundary is reset to `g`).
///
/// The result is the minimal solution when `start` is a discrete
/// ∞-supersolution above ψ, which is how warm starts should be supplied.
pub fn solve_inf_obstacle_from(
    inst: &ObstacleInstance,
    start: &GridFunction,
    opts: &SolverOptions,
) -> Result<ObstacleSolution> {
    check_feasible(&inst.obstacle, &inst.boundary)?;
    if start.grid() != &inst.grid {
        return Err(Error::GridMismatch("warm start and instance"));
    }
    iterate(inst, start.values().to_vec(), opts, None)
}

type Observer<'a> = Option<&'a mut dyn FnMut(&[f64])>;

/// Runs the sweeps, optionally handing each iterate to `observe`.
pub(crate) fn iterate(
    inst: &ObstacleInstance,
    mut u: Vec<f64>,
    opts: &SolverOptions,
    mut observe: Observer,
) -> Result<ObstacleSolution> {
    let clock = Instant::now();
    let grid = inst.grid;
    let psi = inst.obstacle.values();
    for (k, g) in grid
        .boundary_nodes()
        .into_iter()
        .zip(inst.boundary.values())
    {
        u[k] = *g;
    }
    let interior = grid.interior_nodes();
    for &k in &interior {
        u[k] = u[k].max(psi[k]);
    }
    let limit = 4 * opts.iteration_limit(inst);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < limit {
        iterations += 1;
        let mut largest_step: f64 = 0.0;
        for &k in &interior {
            let next = psi[k].max(midrange(&grid, &u, k));
            largest_step = largest_step.max((next - u[k]).abs());
            u[k] = next;
        }
        if let Some(f) = observe.as_mut() {
            f(&u);
        }
        if largest_step <= opts.step_tolerance {
            let r = inf_residual_raw(&grid, &u);
            let (res, _) = complementarity(&u, psi, &r, &interior);
            if res <= opts.residual_tolerance {
                converged = true;
                break;
            }
        }
    }
    let r = inf_residual_raw(&grid, &u);
    let (final_residual, complementarity_gap) = complementarity(&u, psi, &r, &interior);
    let tolerance_used = opts.residual_tolerance;
    let contact_set = contact_mask(&u, psi, 10.0 * tolerance_used);
    let solution = ObstacleSolution {
        state: GridFunction::new(grid, u)?,
        report: SolverReport {
            converged,
            iterations,
            final_residual,
            complementarity_gap,
            tolerance_used,
            wall_time: clock.elapsed().as_secs_f64(),
        },
        contact_set,
    };
    if converged {
        Ok(solution)
    } else {
        Err(Error::NonConvergence(Box::new(solution)))
    }
}
