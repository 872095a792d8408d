//! Obstacle-to-solution operators `T_p` and `T_∞`.
//!
//! * [`solve_p_obstacle`] minimizes the discrete p-Dirichlet energy over
//!   `{u >= ψ, u = g on the boundary}` by projected nonlinear SOR.
//! * [`solve_inf_obstacle`] computes the smallest discrete ∞-superharmonic
//!   majorant of `ψ` by monotone value iteration from above.
//! * [`lcm_1d`] and [`brute_force_obstacle`] are independent oracles.

mod oracle;
mod relaxation;
mod value_iteration;

use serde::Serialize;

pub use oracle::{brute_force_obstacle, lcm_1d, BRUTE_FORCE_MAX_NODES};
pub use relaxation::solve_p_obstacle;
pub use value_iteration::{solve_inf_obstacle, solve_inf_obstacle_from};

use crate::error::Result;
use crate::grid::{Exponent, GridFunction, ObstacleInstance};
use crate::operators::{check_exponent, inf_residual_raw, p_residual_raw};

/// Tolerances and limits shared by the obstacle solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Stop once a full sweep changes no node by more than this.
    pub step_tolerance: f64,
    /// Bound on the complementarity residual `max |min(-Δu, u - ψ)|` for a converged solve.
    pub residual_tolerance: f64,
    /// Sweep limit; `None` picks a limit from the grid size.
    pub max_iterations: Option<usize>,
    /// Over-relaxation factor of the projected SOR sweeps.
    pub omega: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            step_tolerance: 1e-12,
            residual_tolerance: 1e-6,
            max_iterations: None,
            omega: 1.5,
        }
    }
}

impl SolverOptions {
    pub(crate) fn iteration_limit(&self, inst: &ObstacleInstance) -> usize {
        self.max_iterations.unwrap_or_else(|| {
            let n = inst.grid.node_count();
            let widest = inst
                .grid
                .nodes_per_axis()
                .iter()
                .copied()
                .max()
                .unwrap_or(1);
            (200 * n).max(50 * widest * widest)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub complementarity_gap: f64,
    pub tolerance_used: f64,
    #[serde(rename = "wall_time_s")]
    pub wall_time: f64,
}

impl SolverReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Output of an obstacle solve.
#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    pub state: GridFunction,
    pub report: SolverReport,
    /// Nodes where `u - ψ <= 10 * tolerance`.
    pub contact_set: Vec<bool>,
}

/// Dispatches on the instance exponent.
pub fn solve(inst: &ObstacleInstance, opts: &SolverOptions) -> Result<ObstacleSolution> {
    match inst.exponent {
        Exponent::Finite(_) => solve_p_obstacle(inst, opts),
        Exponent::Infinity => solve_inf_obstacle(inst, opts),
    }
}

pub(crate) fn residual_for(u: &GridFunction, exponent: Exponent) -> Result<Vec<f64>> {
    match exponent {
        Exponent::Finite(p) => {
            check_exponent(p)?;
            Ok(p_residual_raw(u.grid(), u.values(), p))
        }
        Exponent::Infinity => Ok(inf_residual_raw(u.grid(), u.values())),
    }
}

/// `(max |min(r, u - ψ)|, max (min(r, u - ψ))^+)` over interior nodes.
pub(crate) fn complementarity(
    u: &[f64],
    psi: &[f64],
    residual: &[f64],
    interior: &[usize],
) -> (f64, f64) {
    interior.iter().fold((0.0f64, 0.0f64), |(res, gap), &k| {
        let m = residual[k].min(u[k] - psi[k]);
        (res.max(m.abs()), gap.max(m.max(0.0)))
    })
}

pub(crate) fn contact_mask(u: &[f64], psi: &[f64], threshold: f64) -> Vec<bool> {
    u.iter().zip(psi).map(|(a, b)| a - b <= threshold).collect()
}

/// Result of a discrete superharmonicity test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperharmonicCheck {
    pub holds: bool,
    /// Interior node with the smallest residual, if the grid has interior nodes.
    pub worst_node: Option<usize>,
    pub worst_residual: f64,
}

/// Checks `-Δ_p u >= -tol` (or `-Δ∞_h u >= -tol`) at every interior node.
pub fn is_p_superharmonic(
    u: &GridFunction,
    exponent: Exponent,
    tol: f64,
) -> Result<SuperharmonicCheck> {
    let r = residual_for(u, exponent)?;
    let worst = u
        .grid()
        .interior_nodes()
        .into_iter()
        .min_by(|&a, &b| r[a].total_cmp(&r[b]));
    let worst_residual = worst.map_or(0.0, |k| r[k]);
    Ok(SuperharmonicCheck {
        holds: worst_residual >= -tol,
        worst_node: worst,
        worst_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn superharmonic_examples() {
        let g = Grid::line(33, 1.0).unwrap();
        let concave = GridFunction::from_fn(g, |x, _| -x * x).unwrap();
        assert!(
            is_p_superharmonic(&concave, Exponent::Finite(2.0), 0.0)
                .unwrap()
                .holds
        );
        assert!(
            is_p_superharmonic(&concave, Exponent::Infinity, 0.0)
                .unwrap()
                .holds
        );

        let convex = GridFunction::from_fn(g, |x, _| x * x).unwrap();
        for e in [
            Exponent::Finite(2.0),
            Exponent::Finite(5.0),
            Exponent::Infinity,
        ] {
            let check = is_p_superharmonic(&convex, e, 1e-9).unwrap();
            assert!(!check.holds);
            assert!(check.worst_node.is_some());
        }

        let affine = GridFunction::from_fn(g, |x, _| 1.0 - 0.5 * x).unwrap();
        let check = is_p_superharmonic(&affine, Exponent::Finite(3.0), 0.0).unwrap();
        assert!(check.holds);
        assert!(check.worst_residual.abs() < 1e-12);
    }

    #[test]
    fn report_json_keys() {
        let r = SolverReport {
            converged: true,
            iterations: 3,
            final_residual: 0.0,
            complementarity_gap: 0.0,
            tolerance_used: 1e-6,
            wall_time: 0.5,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "complementarity_gap",
                "converged",
                "final_residual",
                "iterations",
                "tolerance_used",
                "wall_time_s"
            ]
        );
    }
}
