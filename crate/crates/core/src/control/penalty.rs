//! Quadratic-penalty continuation for 2D controls with `p != 2`.
//!
//! There the p-superharmonic cone is not polyhedral, so the constraint
//! `-Δ_p ψ >= 0` is replaced by the penalty
//! `μ / 2 · Σ vol_k min(r_k / κ, 0)^2` added to `N = G_p^(1/p)`, for
//! `μ = 10, 10^2, ..., 10^6`, each stage warm-started and minimized by L-BFGS.
//! `κ` normalizes the residual so that it scales like a Laplacian. The final
//! iterate is pushed into the cone with `T_p`, which never increases `J_p`,
//! and compared against the restored warm start.

use std::collections::VecDeque;

use super::{cone, jp_from_state, state_of, Candidate, ControlOptions};
use crate::error::Result;
use crate::grid::{BoundaryData, Exponent, Grid, GridFunction};
use crate::operators::{energy_gradient, energy_hessian_vec, p_residual_raw, sup_gradient_norm};

const PENALTIES: [f64; 6] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6];
const MEMORY: usize = 8;
/// Relative change of the penalized objective over the last penalty increase
/// below which the continuation counts as converged.
const DRIFT_TOLERANCE: f64 = 1e-6;

struct Penalized<'a> {
    grid: Grid,
    interior: &'a [usize],
    z: &'a [f64],
    p: f64,
    kappa: f64,
    mu: f64,
}

impl Penalized<'_> {
    fn norm(&self, psi: &[f64]) -> f64 {
        jp_from_state(psi, self.z, psi, &self.grid, self.p)
    }

    fn shortfall(&self, psi: &[f64]) -> Vec<f64> {
        p_residual_raw(&self.grid, psi, self.p)
            .into_iter()
            .map(|r| (r / self.kappa).min(0.0))
            .collect()
    }

    fn value(&self, psi: &[f64]) -> f64 {
        let s = self.shortfall(psi);
        let pen: f64 = self
            .interior
            .iter()
            .map(|&k| self.grid.nodal_volume(k) * s[k] * s[k])
            .sum();
        self.norm(psi) + 0.5 * self.mu * pen
    }

    /// Gradient with respect to the interior values, in interior order.
    fn gradient(&self, psi: &[f64]) -> Vec<f64> {
        let (grid, p) = (&self.grid, self.p);
        let n = self.norm(psi);
        let mut g = vec![0.0; grid.node_count()];
        if n > 0.0 {
            // Homogeneity: ∇E(ψ) / N^(p-1) = ∇E(ψ / N).
            let scaled: Vec<f64> = psi.iter().map(|v| v / n).collect();
            let de = energy_gradient(grid, &scaled, p);
            for &k in self.interior {
                let t = (psi[k] - self.z[k]) / n;
                g[k] = de[k] / p + grid.nodal_volume(k) * t.signum() * t.abs().powf(p - 1.0);
            }
        }
        let s = self.shortfall(psi);
        if s.iter().any(|&v| v != 0.0) {
            let weight = self.mu / (self.kappa * p);
            let hv = energy_hessian_vec(grid, psi, p, &s);
            for &k in self.interior {
                g[k] += weight * hv[k];
            }
        }
        self.interior.iter().map(|&k| g[k]).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// How an L-BFGS run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Gradient,
    /// No representable decrease along the search direction.
    Stalled,
    IterationLimit,
}

/// L-BFGS with Armijo backtracking. Returns the exit reason, iteration count and final gradient norm.
fn lbfgs(
    objective: &Penalized,
    psi: &mut [f64],
    max_iterations: usize,
    tolerance: f64,
) -> (Exit, usize, f64) {
    let interior = objective.interior;
    let set = |psi: &mut [f64], y: &[f64]| {
        for (&k, v) in interior.iter().zip(y) {
            psi[k] = *v;
        }
    };
    let mut x: Vec<f64> = interior.iter().map(|&k| psi[k]).collect();
    let mut value = objective.value(psi);
    let mut grad = objective.gradient(psi);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut stalls = 0;

    for it in 0..max_iterations {
        let gnorm = sup(&grad);
        if gnorm <= tolerance {
            return (Exit::Gradient, it, gnorm);
        }
        // Two-loop recursion.
        let mut d: Vec<f64> = grad.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        } else {
            let scale = 1e-2 / gnorm.max(f64::MIN_POSITIVE);
            d.iter_mut().for_each(|di| *di *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&grad, &d);
        if slope >= 0.0 {
            history.clear();
            d = grad.iter().map(|v| -v * 1e-2 / gnorm).collect();
            slope = dot(&grad, &d);
        }

        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-16 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            set(psi, &trial);
            let trial_value = objective.value(psi);
            if trial_value <= value + 1e-4 * step * slope {
                let trial_grad = objective.gradient(psi);
                let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-300 {
                    if history.len() == MEMORY {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                stalls = if value - trial_value <= 1e-15 * value.abs() {
                    stalls + 1
                } else {
                    0
                };
                x = trial;
                value = trial_value;
                grad = trial_grad;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            set(psi, &x);
            return (Exit::Stalled, it + 1, sup(&grad));
        }
        if stalls >= 5 {
            return (Exit::Stalled, it + 1, sup(&grad));
        }
    }
    (Exit::IterationLimit, max_iterations, sup(&grad))
}

pub(crate) fn minimize(
    z: &GridFunction,
    f: &BoundaryData,
    p: f64,
    warm: Option<&GridFunction>,
    opts: &ControlOptions,
) -> Result<Candidate> {
    let grid = *z.grid();
    let interior = grid.interior_nodes();
    let start = match warm {
        Some(w) => w.clone(),
        None => GridFunction::new(grid, cone::minimize(z, f, 2.0, None, opts)?.control)?,
    };
    let restored_start = state_of(&start, Exponent::Finite(p), &opts.obstacle)?;

    let kappa = sup_gradient_norm(&restored_start).max(1e-3).powf(p - 2.0);
    let mut psi = restored_start.values().to_vec();
    let mut objective = Penalized {
        grid,
        interior: &interior,
        z: z.values(),
        p,
        kappa,
        mu: PENALTIES[0],
    };
    let tolerance = 1e-8 * sup(&objective.gradient(&psi)).max(1e-12);
    let mut iterations = 0;
    let mut exit = Exit::Gradient;
    let mut values = Vec::with_capacity(PENALTIES.len());
    for mu in PENALTIES {
        objective.mu = mu;
        let (e, its, _) = lbfgs(&objective, &mut psi, opts.max_iterations, tolerance);
        iterations += its;
        exit = e;
        values.push(objective.value(&psi));
    }
    // The penalty is only once differentiable, so near its kink the gradient
    // need not become small. Stationarity is measured instead by how little
    // the last increase of μ moved the penalized objective.
    let (prev, last) = (values[values.len() - 2], values[values.len() - 1]);
    let drift = (last - prev).abs() / last.abs().max(f64::MIN_POSITIVE);

    let restored = state_of(
        &GridFunction::new(grid, psi)?,
        Exponent::Finite(p),
        &opts.obstacle,
    )?;
    let cost = |c: &GridFunction| -> Result<f64> {
        let u = state_of(c, Exponent::Finite(p), &opts.obstacle)?;
        Ok(jp_from_state(u.values(), z.values(), c.values(), &grid, p))
    };
    let control = if cost(&restored)? <= cost(&restored_start)? {
        restored
    } else {
        restored_start
    };
    Ok(Candidate {
        control: control.into_values(),
        converged: exit != Exit::IterationLimit || drift <= DRIFT_TOLERANCE,
        iterations,
        stationarity: drift,
        tolerance: DRIFT_TOLERANCE,
    })
}
