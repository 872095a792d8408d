//! Reference solutions that share no code path with the iterative solvers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::complementarity;
use crate::error::{Error, Result};
use crate::grid::{
    check_feasible, embed_boundary, BoundaryData, Exponent, GridFunction, ObstacleInstance,
};
use crate::operators::{
    check_exponent, energy_gradient, energy_hessian_vec, energy_value, p_residual_raw,
};

/// Largest instance [`brute_force_obstacle`] accepts.
pub const BRUTE_FORCE_MAX_NODES: usize = 64;

/// Least concave majorant of `ψ` with the endpoints pinned to `g`.
///
/// This is the exact discrete obstacle solution in 1D for every exponent.
pub fn lcm_1d(psi: &GridFunction, g: &BoundaryData) -> Result<GridFunction> {
    let grid = *psi.grid();
    if grid.dimension() != 1 {
        return Err(Error::NotOneDimensional);
    }
    check_feasible(psi, g)?;
    let n = grid.node_count();
    let x: Vec<f64> = (0..n).map(|k| grid.position(k)[0]).collect();
    let mut y = psi.values().to_vec();
    y[0] = g.values()[0];
    y[n - 1] = g.values()[1];

    // Upper hull by monotone chain; collinear points are dropped.
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for k in 0..n {
        while let [.., o, a] = hull[..] {
            let cross = (x[a] - x[o]) * (y[k] - y[o]) - (y[a] - y[o]) * (x[k] - x[o]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }

    let mut out = vec![0.0; n];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        out[a] = y[a];
        for k in a + 1..b {
            let t = (x[k] - x[a]) / (x[b] - x[a]);
            out[k] = y[a] + t * (y[b] - y[a]);
        }
    }
    out[n - 1] = y[n - 1];
    GridFunction::new(grid, out)
}

/// Minimizer of the p-Dirichlet energy above `ψ` by a dense direct method.
///
/// For `p = 2` an active-set method on the assembled stiffness matrix gives
/// the exact solution. Otherwise projected gradient descent runs from three
/// seeded starting points until the complementarity residual is below
/// `tol / 10`, and the lowest-energy result is returned.
pub fn brute_force_obstacle(inst: &ObstacleInstance, tol: f64) -> Result<GridFunction> {
    let p = match inst.exponent {
        Exponent::Finite(p) => p,
        Exponent::Infinity => return Err(Error::InvalidExponent(f64::INFINITY)),
    };
    check_exponent(p)?;
    let n = inst.grid.node_count();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::TooLarge {
            nodes: n,
            limit: BRUTE_FORCE_MAX_NODES,
        });
    }
    if p == 2.0 {
        active_set(inst)
    } else {
        multistart_descent(inst, p, tol / 10.0)
    }
}

fn active_set(inst: &ObstacleInstance) -> Result<GridFunction> {
    let grid = inst.grid;
    let interior = grid.interior_nodes();
    let m = interior.len();
    let n = grid.node_count();
    let zeros = vec![0.0; n];

    let mut a = DMatrix::zeros(m, m);
    for (j, &kj) in interior.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[kj] = 1.0;
        let col = energy_hessian_vec(&grid, &zeros, 2.0, &e);
        for (i, &ki) in interior.iter().enumerate() {
            a[(i, j)] = col[ki];
        }
    }
    let lifted = embed_boundary(&inst.boundary, 0.0)?;
    let offset = energy_gradient(&grid, lifted.values(), 2.0);
    let b = DVector::from_iterator(m, interior.iter().map(|&k| -offset[k]));
    let psi = DVector::from_iterator(m, interior.iter().map(|&k| inst.obstacle.values()[k]));
    let scale = psi.amax().max(
        inst.boundary
            .values()
            .iter()
            .fold(1.0, |s, v| s.max(v.abs())),
    );

    let mut pinned = vec![false; m];
    let mut u = psi.clone();
    for _ in 0..4 * m + 4 {
        let free: Vec<usize> = (0..m).filter(|&i| !pinned[i]).collect();
        u = DVector::from_iterator(m, (0..m).map(|i| if pinned[i] { psi[i] } else { 0.0 }));
        if !free.is_empty() {
            let aff = a.select_rows(&free).select_columns(&free);
            let rhs = DVector::from_iterator(
                free.len(),
                free.iter().map(|&i| {
                    b[i] - (0..m)
                        .filter(|&j| pinned[j])
                        .map(|j| a[(i, j)] * psi[j])
                        .sum::<f64>()
                }),
            );
            let chol = aff.cholesky().ok_or_else(|| {
                Error::InvalidValue("stiffness matrix is not positive definite".into())
            })?;
            let sol = chol.solve(&rhs);
            for (idx, &i) in free.iter().enumerate() {
                u[i] = sol[idx];
            }
        }
        let violated: Vec<usize> = free
            .iter()
            .copied()
            .filter(|&i| u[i] < psi[i] - 1e-14 * scale)
            .collect();
        if !violated.is_empty() {
            for i in violated {
                pinned[i] = true;
            }
            continue;
        }
        let multipliers = &a * &u - &b;
        let worst = (0..m)
            .filter(|&i| pinned[i])
            .min_by(|&i, &j| multipliers[i].total_cmp(&multipliers[j]));
        match worst {
            Some(i) if multipliers[i] < -1e-12 * scale * a.amax() => pinned[i] = false,
            _ => break,
        }
    }

    let mut out = embed_boundary(&inst.boundary, 0.0)?.into_values();
    for (i, &k) in interior.iter().enumerate() {
        out[k] = u[i].max(psi[i]);
    }
    GridFunction::new(grid, out)
}

fn multistart_descent(inst: &ObstacleInstance, p: f64, tol: f64) -> Result<GridFunction> {
    let grid = inst.grid;
    let psi = inst.obstacle.values();
    let interior = grid.interior_nodes();
    let base = inst.boundary.interpolate();
    let spread = psi
        .iter()
        .chain(inst.boundary.values())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);

    let mut best: Option<(f64, Vec<f64>)> = None;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u: Vec<f64> = base.values().to_vec();
        for &k in &interior {
            u[k] = (u[k] + spread * rng.gen_range(0.0..1.0)).max(psi[k]);
        }
        let u = projected_descent(inst, p, u, tol);
        let e = energy_value(&grid, &u, p);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, u));
        }
    }
    let (_, u) = best.expect("at least one start");
    GridFunction::new(grid, u)
}

fn projected_descent(inst: &ObstacleInstance, p: f64, mut u: Vec<f64>, tol: f64) -> Vec<f64> {
    let grid = inst.grid;
    let psi = inst.obstacle.values();
    let interior = grid.interior_nodes();
    let project = |v: &mut Vec<f64>| {
        for &k in &interior {
            v[k] = v[k].max(psi[k]);
        }
    };
    let mut step = 1.0;
    let mut energy = energy_value(&grid, &u, p);
    for _ in 0..2_000_000 {
        let r = p_residual_raw(&grid, &u, p);
        if complementarity(&u, psi, &r, &interior).0 <= tol {
            break;
        }
        let grad = energy_gradient(&grid, &u, p);
        step *= 4.0;
        loop {
            let mut trial = u.clone();
            for &k in &interior {
                trial[k] -= step * grad[k];
            }
            project(&mut trial);
            let decrease: f64 = interior.iter().map(|&k| grad[k] * (u[k] - trial[k])).sum();
            let e = energy_value(&grid, &trial, p);
            if e <= energy - 1e-4 * decrease || step < 1e-300 {
                u = trial;
                energy = e;
                break;
            }
            step *= 0.5;
        }
    }
    u
}
