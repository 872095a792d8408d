//! Projected nonlinear SOR for the finite-p obstacle problem.
//!
//! Each sweep visits the interior nodes in order and replaces `u[k]` by the
//! exact minimizer of the energy restricted to that node, relaxed by `omega`
//! and projected onto `u[k] >= ψ[k]`. For `p = 2` this is classical projected
//! SOR. For `p != 2` an over-relaxed value is kept only if it does not raise
//! the local energy, so every update is a descent step.

use std::time::Instant;

use super::{complementarity, contact_mask, ObstacleSolution, SolverOptions, SolverReport};
use crate::error::{Error, Result};
use crate::grid::{pointwise_max, Exponent, Grid, GridFunction, ObstacleInstance};
use crate::operators::{check_exponent, flux_factor, p_residual_raw, FLAT_CELL};

/// Node-local energy `f(x) = sum_c |a_c + x e_c|^p`.
struct LocalProblem {
    terms: Vec<([f64; 2], [f64; 2])>,
    p: f64,
}

impl LocalProblem {
    fn gather(grid: &Grid, u: &[f64], k: usize, stencil: &[(usize, [f64; 2])], p: f64) -> Self {
        let terms = stencil
            .iter()
            .map(|&(c, e)| {
                let g = grid.cell_gradient(u, c);
                ([g[0] - u[k] * e[0], g[1] - u[k] * e[1]], e)
            })
            .collect();
        Self { terms, p }
    }

    fn value(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|(a, e)| (a[0] + x * e[0]).hypot(a[1] + x * e[1]).powf(self.p))
            .sum()
    }

    /// `(f'(x) / p, f''(x) / p)`.
    fn derivatives(&self, x: f64) -> (f64, f64) {
        let p = self.p;
        self.terms.iter().fold((0.0, 0.0), |(d1, d2), (a, e)| {
            let g = [a[0] + x * e[0], a[1] + x * e[1]];
            let n = g[0].hypot(g[1]);
            let w = flux_factor(n, p);
            let ge = g[0] * e[0] + g[1] * e[1];
            let ee = e[0] * e[0] + e[1] * e[1];
            let mut c2 = w * ee;
            if p != 2.0 && n > FLAT_CELL {
                c2 += (p - 2.0) * w * ge * ge / (n * n);
            }
            (d1 + w * ge, d2 + c2)
        })
    }

    /// Unconstrained minimizer.
    fn argmin(&self, start: f64) -> f64 {
        let per_cell = self.terms.iter().map(|(a, e)| {
            let ee = e[0] * e[0] + e[1] * e[1];
            -(a[0] * e[0] + a[1] * e[1]) / ee
        });
        if self.p == 2.0 {
            let (num, den) = self.terms.iter().fold((0.0, 0.0), |(n, d), (a, e)| {
                (
                    n - (a[0] * e[0] + a[1] * e[1]),
                    d + e[0] * e[0] + e[1] * e[1],
                )
            });
            return num / den;
        }
        // The sum of convex terms is minimized between the extreme per-cell minimizers.
        let (mut lo, mut hi) = per_cell.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| {
            (l.min(x), h.max(x))
        });
        let mut x = start.clamp(lo, hi);
        for _ in 0..200 {
            if hi - lo <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
                break;
            }
            let (d1, d2) = self.derivatives(x);
            if d1 == 0.0 {
                return x;
            }
            if d1 > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - d1 / d2;
            let next = if d2 > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let done = (next - x).abs() <= 2.0 * f64::EPSILON * (1.0 + x.abs());
            x = next;
            if done {
                break;
            }
        }
        x
    }
}

/// Floor on the attainable residual from rounding in the nodal fluxes.
fn roundoff_floor(grid: &Grid, u: &[f64], p: f64) -> f64 {
    let flux = (0..grid.cell_count())
        .map(|c| {
            let g = grid.cell_gradient(u, c);
            g[0].hypot(g[1]).powf(p - 1.0)
        })
        .fold(0.0, f64::max);
    let hmin = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    1e3 * f64::EPSILON * flux / hmin
}

/// `T_p(ψ)`: the minimizer of the p-Dirichlet energy above the obstacle.
pub fn solve_p_obstacle(inst: &ObstacleInstance, opts: &SolverOptions) -> Result<ObstacleSolution> {
    let p = match inst.exponent {
        Exponent::Finite(p) => p,
        Exponent::Infinity => return Err(Error::InvalidExponent(f64::INFINITY)),
    };
    check_exponent(p)?;
    let start = pointwise_max(&inst.obstacle, &inst.boundary.interpolate())?;
    relax_from(inst, p, start.into_values(), opts)
}

pub(crate) fn relax_from(
    inst: &ObstacleInstance,
    p: f64,
    mut u: Vec<f64>,
    opts: &SolverOptions,
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
    let stencils: Vec<_> = interior.iter().map(|&k| grid.incident_cells(k)).collect();
    let limit = opts.iteration_limit(inst);
    let omega = opts.omega;

    let mut iterations = 0;
    let mut converged = false;
    let mut residual_state = (f64::INFINITY, f64::INFINITY, opts.residual_tolerance);
    while iterations < limit {
        iterations += 1;
        let mut largest_step: f64 = 0.0;
        for (&k, stencil) in interior.iter().zip(&stencils) {
            let local = LocalProblem::gather(&grid, &u, k, stencil, p);
            let old = u[k];
            let best = local.argmin(old);
            let mut next = (old + omega * (best - old)).max(psi[k]);
            if p != 2.0 && omega != 1.0 && local.value(next) > local.value(old) {
                next = best.max(psi[k]);
            }
            largest_step = largest_step.max((next - old).abs());
            u[k] = next;
        }
        if largest_step <= opts.step_tolerance {
            let r = p_residual_raw(&grid, &u, p);
            let (res, gap) = complementarity(&u, psi, &r, &interior);
            let tol = opts.residual_tolerance.max(roundoff_floor(&grid, &u, p));
            residual_state = (res, gap, tol);
            if res <= tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        let r = p_residual_raw(&grid, &u, p);
        let (res, gap) = complementarity(&u, psi, &r, &interior);
        let tol = opts.residual_tolerance.max(roundoff_floor(&grid, &u, p));
        residual_state = (res, gap, tol);
    }
    let (final_residual, complementarity_gap, tolerance_used) = residual_state;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryData;
    use crate::obstacle::lcm_1d;

    fn instance(psi: GridFunction, g: BoundaryData, p: f64) -> ObstacleInstance {
        ObstacleInstance::new(psi, g, None, Exponent::Finite(p)).unwrap()
    }

    #[test]
    fn local_minimizer_is_midpoint_in_1d() {
        let grid = Grid::line(5, 1.0).unwrap();
        let u = [0.0, 0.3, 7.0, 1.0, 0.0];
        for p in [1.5, 2.0, 3.0, 10.0] {
            let local = LocalProblem::gather(&grid, &u, 2, &grid.incident_cells(2), p);
            let x = local.argmin(u[2]);
            assert!((x - 0.65).abs() < 1e-12, "p = {p}: {x}");
        }
    }

    #[test]
    fn concave_tent_is_its_own_solution() {
        let grid = Grid::line(65, 1.0).unwrap();
        let tent = GridFunction::from_fn(grid, |x, _| 1.0 - 2.0 * (x - 0.5).abs()).unwrap();
        let g = BoundaryData::constant(grid, 0.0);
        for p in [1.5, 2.0, 3.0, 4.0, 8.0] {
            let sol = solve_p_obstacle(
                &instance(tent.clone(), g.clone(), p),
                &SolverOptions::default(),
            )
            .unwrap();
            assert!(sol.state.sup_distance(&tent).unwrap() < 1e-10, "p = {p}");
            let lcm = lcm_1d(&tent, &g).unwrap();
            assert!(sol.state.sup_distance(&lcm).unwrap() < 1e-10);
        }
    }

    #[test]
    fn low_obstacle_in_2d_gives_zero() {
        let grid = Grid::rectangle(9, 9, 1.0, 1.0).unwrap();
        let inst = instance(
            GridFunction::constant(grid, -1.0),
            BoundaryData::constant(grid, 0.0),
            2.0,
        );
        let sol = solve_p_obstacle(&inst, &SolverOptions::default()).unwrap();
        assert!(sol.state.values().iter().all(|&v| v.abs() < 1e-12));
        assert!(sol.report.converged);
    }

    #[test]
    fn boundary_values_are_exact() {
        let grid = Grid::rectangle(7, 6, 1.0, 1.0).unwrap();
        let g = BoundaryData::from_fn(grid, |x, y| 0.1 + 0.3 * x * x - 0.2 * y).unwrap();
        let psi = GridFunction::from_fn(grid, |x, y| {
            0.6 - 3.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))
        })
        .unwrap();
        let psi = {
            let mut v = psi.into_values();
            for (k, b) in grid.boundary_nodes().into_iter().zip(g.values()) {
                v[k] = v[k].min(*b);
            }
            GridFunction::new(grid, v).unwrap()
        };
        for p in [2.0, 3.0] {
            let sol = solve_p_obstacle(
                &instance(psi.clone(), g.clone(), p),
                &SolverOptions::default(),
            )
            .unwrap();
            for (k, b) in grid.boundary_nodes().into_iter().zip(g.values()) {
                assert_eq!(sol.state.values()[k], *b);
            }
            assert!(sol.report.complementarity_gap <= 1e-6);
        }
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let grid = Grid::line(65, 1.0).unwrap();
        let psi = GridFunction::from_fn(grid, |x, _| 0.3 - (x - 0.3).abs()).unwrap();
        let inst = instance(psi, BoundaryData::constant(grid, 0.0), 2.0);
        let opts = SolverOptions {
            max_iterations: Some(3),
            ..SolverOptions::default()
        };
        match solve_p_obstacle(&inst, &opts) {
            Err(Error::NonConvergence(sol)) => {
                assert!(!sol.report.converged);
                assert_eq!(sol.report.iterations, 3);
            }
            other => panic!("expected nonconvergence, got {other:?}"),
        }
    }
}
