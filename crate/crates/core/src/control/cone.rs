//! Minimization over a polyhedral superharmonic cone.
//!
//! When superharmonicity is a linear condition on ψ (any p in 1D, where it
//! means concavity, and p = 2 in 2D) the cone is parametrized by its
//! residual: `ψ = a + M q` with `q >= 0`, `a` the harmonic extension of the
//! boundary data and `M` the discrete Green's operator scaled so that `q` is
//! the nodal residual `-Δψ`. The objective is then minimized over `q >= 0` by
//! a projected Newton method with an ε-active set.
//!
//! For `p = 2` the objective is the quadratic `G = Σ w (ψ - z)^2 + E_2(ψ)`.
//! For `p != 2` it is `N = G_p^(1/p)`, which keeps magnitudes of order one for
//! large p; both have the same minimizers.

use nalgebra::{DMatrix, DVector};

use super::{jp_from_state, Candidate, ControlOptions};
use crate::error::{Error, Result};
use crate::grid::{embed_boundary, BoundaryData, Grid, GridFunction};
use crate::operators::{energy_gradient, energy_hessian_vec, energy_value, p_residual_raw};

/// Dense interior stiffness matrix of the quadratic energy `E_2`.
pub(crate) fn stiffness(grid: &Grid, interior: &[usize]) -> DMatrix<f64> {
    let n = grid.node_count();
    let zeros = vec![0.0; n];
    let mut a = DMatrix::zeros(interior.len(), interior.len());
    let mut e = vec![0.0; n];
    for (j, &kj) in interior.iter().enumerate() {
        e[kj] = 1.0;
        let col = energy_hessian_vec(grid, &zeros, 2.0, &e);
        e[kj] = 0.0;
        for (i, &ki) in interior.iter().enumerate() {
            a[(i, j)] = col[ki];
        }
    }
    a
}

struct ConeParam {
    grid: Grid,
    interior: Vec<usize>,
    lifted: Vec<f64>,
    base: DVector<f64>,
    green: DMatrix<f64>,
}

impl ConeParam {
    fn new(f: &BoundaryData) -> Result<Self> {
        let grid = *f.grid();
        let interior = grid.interior_nodes();
        let a = stiffness(&grid, &interior);
        let lifted = embed_boundary(f, 0.0)?.into_values();
        let offset = energy_gradient(&grid, &lifted, 2.0);
        let chol = a.cholesky().ok_or_else(|| {
            Error::InvalidValue("stiffness matrix is not positive definite".into())
        })?;
        let rhs = DVector::from_iterator(interior.len(), interior.iter().map(|&k| -offset[k]));
        let base = chol.solve(&rhs);
        let scale = DMatrix::from_diagonal(&DVector::from_iterator(
            interior.len(),
            interior.iter().map(|&k| 2.0 * grid.nodal_volume(k)),
        ));
        let green = chol.solve(&scale);
        Ok(Self {
            grid,
            interior,
            lifted,
            base,
            green,
        })
    }

    fn control(&self, q: &DVector<f64>) -> Vec<f64> {
        let inner = &self.base + &self.green * q;
        let mut psi = self.lifted.clone();
        for (i, &k) in self.interior.iter().enumerate() {
            psi[k] = inner[i];
        }
        psi
    }

    /// Residual coordinates of `psi`, clipped into the cone.
    fn coordinates(&self, psi: &[f64]) -> DVector<f64> {
        let r = p_residual_raw(&self.grid, psi, 2.0);
        DVector::from_iterator(
            self.interior.len(),
            self.interior.iter().map(|&k| r[k].max(0.0)),
        )
    }
}

/// Smooth objective of the control values; derivatives are with respect to interior nodes.
trait Objective {
    fn value(&self, psi: &[f64]) -> f64;
    fn gradient_hessian(&self, psi: &[f64]) -> (DVector<f64>, DMatrix<f64>);
}

struct Quadratic<'a> {
    grid: Grid,
    interior: &'a [usize],
    z: &'a [f64],
    stiffness: DMatrix<f64>,
}

impl Objective for Quadratic<'_> {
    fn value(&self, psi: &[f64]) -> f64 {
        let mismatch: f64 = psi
            .iter()
            .zip(self.z)
            .enumerate()
            .map(|(k, (u, z))| self.grid.nodal_volume(k) * (u - z).powi(2))
            .sum();
        mismatch + energy_value(&self.grid, psi, 2.0)
    }

    fn gradient_hessian(&self, psi: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let de = energy_gradient(&self.grid, psi, 2.0);
        let m = self.interior.len();
        let mut hess = self.stiffness.clone();
        let grad = DVector::from_iterator(
            m,
            self.interior
                .iter()
                .map(|&k| 2.0 * self.grid.nodal_volume(k) * (psi[k] - self.z[k]) + de[k]),
        );
        for (i, &k) in self.interior.iter().enumerate() {
            hess[(i, i)] += 2.0 * self.grid.nodal_volume(k);
        }
        (grad, hess)
    }
}

/// `N = (Σ w |ψ - z|^p + Σ h |ψ'|^p)^(1/p)` on a 1D grid.
struct PNorm1d<'a> {
    grid: Grid,
    interior: &'a [usize],
    z: &'a [f64],
    p: f64,
}

impl Objective for PNorm1d<'_> {
    fn value(&self, psi: &[f64]) -> f64 {
        jp_from_state(psi, self.z, psi, &self.grid, self.p)
    }

    fn gradient_hessian(&self, psi: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (grid, p) = (&self.grid, self.p);
        let m = self.interior.len();
        let n = self.value(psi);
        if n == 0.0 {
            return (DVector::zeros(m), DMatrix::identity(m, m));
        }
        let h = grid.spacing()[0];
        let nodes = grid.node_count();
        // Scaled terms t = x / N, so every power below is at most of order one.
        let floor = if p < 2.0 { 1e-8 } else { 0.0 };
        let curvature = |t: f64| t.abs().max(floor).powf(p - 2.0);
        let flux = |t: f64| t.signum() * t.abs().powf(p - 1.0);

        let mut grad_full = vec![0.0; nodes];
        let mut diag = vec![0.0; nodes];
        let mut off = vec![0.0; nodes - 1];
        for k in 0..nodes {
            let t = (psi[k] - self.z[k]) / n;
            let w = grid.nodal_volume(k);
            grad_full[k] += w * flux(t);
            diag[k] += w * curvature(t);
        }
        for c in 0..nodes - 1 {
            let t = (psi[c + 1] - psi[c]) / h / n;
            let f = flux(t);
            grad_full[c + 1] += f;
            grad_full[c] -= f;
            let s = curvature(t) / h;
            diag[c] += s;
            diag[c + 1] += s;
            off[c] -= s;
        }

        let grad = DVector::from_iterator(m, self.interior.iter().map(|&k| grad_full[k]));
        let mut hess = DMatrix::zeros(m, m);
        for (i, &k) in self.interior.iter().enumerate() {
            hess[(i, i)] = diag[k];
            if i + 1 < m {
                hess[(i, i + 1)] = off[k];
                hess[(i + 1, i)] = off[k];
            }
        }
        hess -= &grad * grad.transpose();
        hess *= (p - 1.0) / n;
        (grad, hess)
    }
}

pub(crate) fn minimize(
    z: &GridFunction,
    f: &BoundaryData,
    p: f64,
    warm: Option<&GridFunction>,
    opts: &ControlOptions,
) -> Result<Candidate> {
    let param = ConeParam::new(f)?;
    let q0 = match warm {
        Some(w) => param.coordinates(w.values()),
        None => DVector::zeros(param.interior.len()),
    };
    let interior = param.interior.clone();
    if p == 2.0 {
        let objective = Quadratic {
            grid: param.grid,
            interior: &interior,
            z: z.values(),
            stiffness: stiffness(&param.grid, &interior),
        };
        projected_newton(&param, &objective, q0, opts)
    } else {
        let objective = PNorm1d {
            grid: param.grid,
            interior: &interior,
            z: z.values(),
            p,
        };
        projected_newton(&param, &objective, q0, opts)
    }
}

fn projected_stationarity(q: &DVector<f64>, g: &DVector<f64>) -> f64 {
    q.iter().zip(g.iter()).fold(0.0f64, |m, (&qi, &gi)| {
        m.max((qi - (qi - gi).max(0.0)).abs())
    })
}

fn projected_newton(
    param: &ConeParam,
    objective: &dyn Objective,
    mut q: DVector<f64>,
    opts: &ControlOptions,
) -> Result<Candidate> {
    let m = q.len();
    let mut psi = param.control(&q);
    let mut value = objective.value(&psi);
    let mut reference: Option<f64> = None;
    let mut stationarity = f64::INFINITY;
    let mut tolerance = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut stalls = 0;

    while iterations < opts.max_iterations {
        let (gp, hp) = objective.gradient_hessian(&psi);
        let g = param.green.transpose() * &gp;
        stationarity = projected_stationarity(&q, &g);
        let scale = *reference.get_or_insert_with(|| g.amax().max(f64::MIN_POSITIVE));
        tolerance = opts.optimality_tolerance * scale;
        if stationarity <= tolerance || m == 0 {
            converged = true;
            break;
        }
        iterations += 1;

        let eps = stationarity.min(1e-3 * (1.0 + q.amax()));
        let active: Vec<bool> = (0..m).map(|i| q[i] <= eps && g[i] > 0.0).collect();
        let free: Vec<usize> = (0..m).filter(|&i| !active[i]).collect();
        let hq = param.green.transpose() * hp * &param.green;

        let mut d = DVector::zeros(m);
        for i in (0..m).filter(|&i| active[i]) {
            d[i] = -g[i] / hq[(i, i)].max(f64::MIN_POSITIVE);
        }
        if !free.is_empty() {
            let hff = hq.select_rows(&free).select_columns(&free);
            let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
            let shift = 1e-14 * hff.diagonal().amax().max(f64::MIN_POSITIVE);
            let mut solved = None;
            for attempt in 0..12 {
                let mut trial = hff.clone();
                if attempt > 0 {
                    let lambda = shift * 100f64.powi(attempt);
                    for i in 0..free.len() {
                        trial[(i, i)] += lambda;
                    }
                }
                if let Some(ch) = trial.cholesky() {
                    solved = Some(ch.solve(&gf));
                    break;
                }
            }
            // Gradient step if no shift made the block factorizable.
            let step = solved.unwrap_or(gf);
            for (idx, &i) in free.iter().enumerate() {
                d[i] = -step[idx];
            }
        }

        // Newton decrement: the model decrease of a full step.
        let decrement: f64 = (0..m).map(|i| -g[i] * d[i]).sum();
        if decrement <= 1e-14 * value.abs() {
            converged = true;
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-20 {
            let trial_q = (&q + alpha * &d).map(|v| v.max(0.0));
            let trial_psi = param.control(&trial_q);
            let trial_value = objective.value(&trial_psi);
            let predicted: f64 = (0..m)
                .map(|i| {
                    if active[i] {
                        g[i] * (q[i] - trial_q[i])
                    } else {
                        -alpha * g[i] * d[i]
                    }
                })
                .sum();
            if trial_value <= value - 1e-4 * predicted {
                let gained = value - trial_value;
                q = trial_q;
                psi = trial_psi;
                stalls = if gained <= 4.0 * f64::EPSILON * value.abs() {
                    stalls + 1
                } else {
                    0
                };
                value = trial_value;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || stalls >= 3 {
            // No representable decrease is left: the iterate is optimal to rounding.
            let (gp, _) = objective.gradient_hessian(&psi);
            stationarity = projected_stationarity(&q, &(param.green.transpose() * gp));
            converged =
                stationarity <= 1e3 * tolerance.max(f64::EPSILON * reference.unwrap_or(1.0));
            break;
        }
    }

    Ok(Candidate {
        control: psi,
        converged,
        iterations,
        stationarity,
        tolerance,
    })
}
