//! Discrete differential operators and functionals on [`GridFunction`]s.
//!
//! The p-Dirichlet energy uses one forward-difference gradient per cell,
//! `E_p(u) = sum_c |D_h u|_c^p * cell_volume`, and the discrete p-Laplacian is
//! derived from it variationally so the two are always consistent:
//! `-Δ_p u (k) = (dE_p/du_k) / (p * nodal_volume(k))`.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};

/// Below this gradient magnitude a cell is treated as flat when `p < 2`.
pub(crate) const FLAT_CELL: f64 = 1e-12;

/// The p-Dirichlet energy and its derivative with respect to interior nodal values.
#[derive(Debug, Clone)]
pub struct EnergyEvaluation {
    pub value: f64,
    /// Zero at every boundary node.
    pub gradient: GridFunction,
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

/// `|g|^(p-2)` with the degenerate-cell conventions applied.
#[inline]
pub(crate) fn flux_factor(norm: f64, p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else if norm == 0.0 || (p < 2.0 && norm < FLAT_CELL) {
        0.0
    } else {
        norm.powf(p - 2.0)
    }
}

#[inline]
fn norm2(g: [f64; 2]) -> f64 {
    g[0].hypot(g[1])
}

pub(crate) fn energy_value(grid: &Grid, u: &[f64], p: f64) -> f64 {
    let vol = grid.cell_volume();
    (0..grid.cell_count())
        .map(|c| norm2(grid.cell_gradient(u, c)).powf(p))
        .sum::<f64>()
        * vol
}

/// Gradient of the energy, full length, zeroed on the boundary.
pub(crate) fn energy_gradient(grid: &Grid, u: &[f64], p: f64) -> Vec<f64> {
    let vol = grid.cell_volume();
    let h = grid.spacing();
    let hx = h[0];
    let hy = if grid.dimension() == 2 { h[1] } else { 1.0 };
    let mut grad = vec![0.0; grid.node_count()];
    for c in 0..grid.cell_count() {
        let g = grid.cell_gradient(u, c);
        let f = vol * p * flux_factor(norm2(g), p);
        if f == 0.0 {
            continue;
        }
        let cell = grid.cell(c);
        grad[cell.right] += f * g[0] / hx;
        grad[cell.base] -= f * g[0] / hx;
        if let Some(up) = cell.up {
            grad[up] += f * g[1] / hy;
            grad[cell.base] -= f * g[1] / hy;
        }
    }
    for k in grid.boundary_nodes() {
        grad[k] = 0.0;
    }
    grad
}

/// Hessian of the energy applied to `v` (full length, boundary entries of `v`
/// ignored and of the result zeroed).
pub(crate) fn energy_hessian_vec(grid: &Grid, u: &[f64], p: f64, v: &[f64]) -> Vec<f64> {
    let vol = grid.cell_volume();
    let h = grid.spacing();
    let hx = h[0];
    let hy = if grid.dimension() == 2 { h[1] } else { 1.0 };
    let mut vi = v.to_vec();
    for k in grid.boundary_nodes() {
        vi[k] = 0.0;
    }
    let mut out = vec![0.0; grid.node_count()];
    for c in 0..grid.cell_count() {
        let g = grid.cell_gradient(u, c);
        let dg = grid.cell_gradient(&vi, c);
        let n = norm2(g);
        let a = flux_factor(n, p);
        let mut hd = [a * dg[0], a * dg[1]];
        if p != 2.0 && n > FLAT_CELL {
            let b = (p - 2.0) * a / (n * n) * (g[0] * dg[0] + g[1] * dg[1]);
            hd[0] += b * g[0];
            hd[1] += b * g[1];
        }
        let f = vol * p;
        let cell = grid.cell(c);
        out[cell.right] += f * hd[0] / hx;
        out[cell.base] -= f * hd[0] / hx;
        if let Some(up) = cell.up {
            out[up] += f * hd[1] / hy;
            out[cell.base] -= f * hd[1] / hy;
        }
    }
    for k in grid.boundary_nodes() {
        out[k] = 0.0;
    }
    out
}

/// Discrete p-Dirichlet energy and its exact gradient.
pub fn p_energy(u: &GridFunction, p: f64) -> Result<EnergyEvaluation> {
    check_exponent(p)?;
    let grid = *u.grid();
    let value = energy_value(&grid, u.values(), p);
    let gradient = GridFunction::new(grid, energy_gradient(&grid, u.values(), p))?;
    Ok(EnergyEvaluation { value, gradient })
}

pub(crate) fn p_residual_raw(grid: &Grid, u: &[f64], p: f64) -> Vec<f64> {
    let mut r = energy_gradient(grid, u, p);
    for (k, v) in r.iter_mut().enumerate() {
        if !grid.is_boundary(k) {
            *v /= p * grid.nodal_volume(k);
        }
    }
    r
}

/// Nodal `-Δ_p u`: positive where `u` is discretely p-superharmonic, zero on the boundary.
pub fn p_laplacian_residual(u: &GridFunction, p: f64) -> Result<GridFunction> {
    check_exponent(p)?;
    let grid = *u.grid();
    GridFunction::new(grid, p_residual_raw(&grid, u.values(), p))
}

pub(crate) fn inf_residual_raw(grid: &Grid, u: &[f64]) -> Vec<f64> {
    (0..grid.node_count())
        .map(|k| {
            if grid.is_boundary(k) {
                0.0
            } else {
                u[k] - midrange(grid, u, k)
            }
        })
        .collect()
}

/// `(max + min) / 2` over the axis neighbours of `k`.
#[inline]
pub(crate) fn midrange(grid: &Grid, u: &[f64], k: usize) -> f64 {
    let (lo, hi) = grid
        .axis_neighbors(k)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
            (lo.min(u[n]), hi.max(u[n]))
        });
    0.5 * (lo + hi)
}

/// Nodal `-Δ∞_h u = u - (max_N u + min_N u) / 2` over the axis-neighbour stencil.
pub fn inf_laplacian_residual(u: &GridFunction) -> GridFunction {
    let grid = *u.grid();
    GridFunction::from_parts_unchecked(grid, inf_residual_raw(&grid, u.values()))
}

/// `(sum_k w_k a_k^p)^(1/p)` for nonnegative `a_k`, evaluated relative to the
/// largest term so large exponents neither overflow nor underflow.
pub(crate) fn power_sum_root(terms: impl Iterator<Item = (f64, f64)> + Clone, p: f64) -> f64 {
    let top = terms
        .clone()
        .filter(|&(_, w)| w > 0.0)
        .fold(0.0f64, |m, (a, _)| m.max(a));
    if top == 0.0 {
        return 0.0;
    }
    let s: f64 = terms.map(|(a, w)| w * (a / top).powf(p)).sum();
    top * s.powf(1.0 / p)
}

/// Discrete `L^q` norm with trapezoidal weights, or the max norm for `q = ∞`.
pub fn lq_norm(u: &GridFunction, q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidNormIndex(q));
    }
    let grid = u.grid();
    if q == f64::INFINITY {
        return Ok(u.values().iter().fold(0.0, |m, v| f64::max(m, v.abs())));
    }
    let terms = u
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| (v.abs(), grid.nodal_volume(k)));
    Ok(power_sum_root(terms, q))
}

/// Largest Euclidean norm of the cell gradients.
pub fn sup_gradient_norm(u: &GridFunction) -> f64 {
    let grid = u.grid();
    (0..grid.cell_count())
        .map(|c| norm2(grid.cell_gradient(u.values(), c)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(grid: Grid, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..grid.node_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        GridFunction::new(grid, vals).unwrap()
    }

    /// Central differences of the scalar energy.
    fn fd_gradient(u: &GridFunction, p: f64, step: f64) -> Vec<f64> {
        let grid = *u.grid();
        (0..grid.node_count())
            .map(|k| {
                if grid.is_boundary(k) {
                    return 0.0;
                }
                let mut plus = u.values().to_vec();
                let mut minus = u.values().to_vec();
                plus[k] += step;
                minus[k] -= step;
                (energy_value(&grid, &plus, p) - energy_value(&grid, &minus, p)) / (2.0 * step)
            })
            .collect()
    }

    fn assert_gradient_matches(u: &GridFunction, p: f64, rel: f64) {
        let exact = p_energy(u, p).unwrap().gradient;
        let fd = fd_gradient(u, p, 1e-6);
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (a, b) in exact.values().iter().zip(&fd) {
            assert!(
                (a - b).abs() <= rel * scale,
                "p = {p}: analytic {a} vs finite difference {b}"
            );
        }
    }

    #[test]
    fn tent_energy_is_slope_power() {
        let g = Grid::line(33, 1.0).unwrap();
        for s in [0.5, 1.0, 3.0] {
            let u = GridFunction::from_fn(g, |x, _| s * x).unwrap();
            for p in [1.5, 2.0, 4.0, 7.0] {
                let e = p_energy(&u, p).unwrap().value;
                assert!((e - f64::powf(s, p)).abs() < 1e-12 * f64::powf(s, p).max(1.0));
            }
            let tent = GridFunction::from_fn(g, |x, _| s * (0.5 - (x - 0.5).abs())).unwrap();
            let e = p_energy(&tent, 3.0).unwrap().value;
            assert!((e - s.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_has_zero_energy_and_gradient() {
        let g = Grid::rectangle(5, 6, 1.0, 1.0).unwrap();
        let u = GridFunction::constant(g, 3.5);
        for p in [1.5, 2.0, 5.0] {
            let e = p_energy(&u, p).unwrap();
            assert_eq!(e.value, 0.0);
            assert!(e.gradient.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_bad_exponent() {
        let u = GridFunction::zeros(Grid::line(5, 1.0).unwrap());
        assert!(matches!(p_energy(&u, 1.0), Err(Error::InvalidExponent(_))));
        assert!(p_laplacian_residual(&u, 0.5).is_err());
        assert!(matches!(lq_norm(&u, 0.5), Err(Error::InvalidNormIndex(_))));
    }

    #[test]
    fn gradient_matches_finite_differences_1d_p4() {
        let u = random_fn(Grid::line(9, 1.0).unwrap(), 7);
        assert_gradient_matches(&u, 4.0, 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences_2d() {
        let u = random_fn(Grid::rectangle(6, 5, 1.0, 0.8).unwrap(), 11);
        for p in [1.7, 2.0, 3.0, 4.0] {
            assert_gradient_matches(&u, p, 1e-5);
        }
    }

    #[test]
    fn gradient_vanishes_on_boundary() {
        let u = random_fn(Grid::rectangle(5, 5, 1.0, 1.0).unwrap(), 3);
        let e = p_energy(&u, 3.0).unwrap();
        for k in u.grid().boundary_nodes() {
            assert_eq!(e.gradient.values()[k], 0.0);
        }
    }

    #[test]
    fn hessian_vector_matches_gradient_differences() {
        let grid = Grid::rectangle(5, 6, 1.0, 1.0).unwrap();
        let u = random_fn(grid, 21);
        let v = random_fn(grid, 22);
        for p in [2.0, 3.0, 4.5] {
            let hv = energy_hessian_vec(&grid, u.values(), p, v.values());
            let eps = 1e-6;
            let shifted = |s: f64| -> Vec<f64> {
                let w: Vec<f64> = u
                    .values()
                    .iter()
                    .zip(v.values())
                    .enumerate()
                    .map(|(k, (a, b))| if grid.is_boundary(k) { *a } else { a + s * b })
                    .collect();
                energy_gradient(&grid, &w, p)
            };
            let (gp, gm) = (shifted(eps), shifted(-eps));
            let scale = hv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for k in 0..grid.node_count() {
                let fd = (gp[k] - gm[k]) / (2.0 * eps);
                assert!(
                    (fd - hv[k]).abs() < 1e-5 * scale,
                    "p={p} k={k}: {fd} vs {}",
                    hv[k]
                );
            }
        }
    }

    #[test]
    fn affine_is_p_harmonic_in_1d() {
        let g = Grid::line(11, 2.0).unwrap();
        let u = GridFunction::from_fn(g, |x, _| 0.3 - 1.7 * x).unwrap();
        for p in [1.5, 2.0, 3.0, 8.0] {
            let r = p_laplacian_residual(&u, p).unwrap();
            assert!(r.values().iter().all(|v| v.abs() < 1e-10), "p = {p}");
        }
    }

    #[test]
    fn parabola_residual_signs() {
        let g = Grid::line(21, 1.0).unwrap();
        let concave = GridFunction::from_fn(g, |x, _| -x * x).unwrap();
        let r = p_laplacian_residual(&concave, 2.0).unwrap();
        for k in g.interior_nodes() {
            assert!((r.values()[k] - 2.0).abs() < 1e-9);
        }
        let convex = GridFunction::from_fn(g, |x, _| x * x).unwrap();
        let r = p_laplacian_residual(&convex, 2.0).unwrap();
        assert!(g.interior_nodes().iter().all(|&k| r.values()[k] < 0.0));
    }

    #[test]
    fn inf_laplacian_examples() {
        let g = Grid::line(9, 1.0).unwrap();
        let lin = GridFunction::from_fn(g, |x, _| x).unwrap();
        assert!(inf_laplacian_residual(&lin)
            .values()
            .iter()
            .all(|v| v.abs() < 1e-15));

        // h = 1, nodes at -1, 0, 1 shifted to [0, 2]
        let g = Grid::line(3, 2.0).unwrap();
        let para = GridFunction::from_fn(g, |x, _| (x - 1.0) * (x - 1.0)).unwrap();
        assert_eq!(inf_laplacian_residual(&para).values()[1], -1.0);

        let g = Grid::line(5, 1.0).unwrap();
        let tent = GridFunction::from_fn(g, |x, _| 0.5 - (x - 0.5).abs()).unwrap();
        assert!(inf_laplacian_residual(&tent).values()[2] > 0.0);
    }

    #[test]
    fn lq_norm_examples() {
        let g = Grid::rectangle(7, 5, 1.0, 1.0).unwrap();
        let c = GridFunction::constant(g, -2.5);
        for q in [1.0, 2.0, 3.5, 40.0] {
            assert!((lq_norm(&c, q).unwrap() - 2.5).abs() < 1e-12);
        }
        let mut vals = vec![0.0; g.node_count()];
        vals[17] = 5.0;
        let spike = GridFunction::new(g, vals).unwrap();
        assert_eq!(lq_norm(&spike, f64::INFINITY).unwrap(), 5.0);
    }

    #[test]
    fn lq_norm_matches_direct_quadrature() {
        let g = Grid::rectangle(6, 4, 1.5, 0.5).unwrap();
        let u = random_fn(g, 5);
        // Trapezoid weights rebuilt from the axis weights.
        let w = |i: usize, n: usize, h: f64| if i == 0 || i == n - 1 { h / 2.0 } else { h };
        let (hx, hy) = (1.5 / 5.0, 0.5 / 3.0);
        let mut s = 0.0;
        for j in 0..4 {
            for i in 0..6 {
                s += u.values()[i + 6 * j].powi(2) * w(i, 6, hx) * w(j, 4, hy);
            }
        }
        assert!((lq_norm(&u, 2.0).unwrap() - s.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn sup_gradient_examples() {
        let g = Grid::line(17, 1.0).unwrap();
        let tent = GridFunction::from_fn(g, |x, _| 2.0 * (0.5 - (x - 0.5).abs())).unwrap();
        assert!((sup_gradient_norm(&tent) - 2.0).abs() < 1e-12);
        assert_eq!(sup_gradient_norm(&GridFunction::constant(g, 1.0)), 0.0);
        let g2 = Grid::rectangle(5, 5, 1.0, 1.0).unwrap();
        let b = GridFunction::from_fn(g2, |x, y| x + y).unwrap();
        assert!((sup_gradient_norm(&b) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn power_sum_root_handles_large_exponents() {
        let terms = [(10.0, 0.5), (10.0, 0.5)];
        let v = power_sum_root(terms.iter().copied(), 400.0);
        assert!((v - 10.0).abs() < 1e-12);
        let terms = [(1e-20, 1.0), (2e-20, 1.0)];
        let v = power_sum_root(terms.iter().copied(), 64.0);
        assert!(v >= 2e-20 && v < 2e-20 * 2f64.powf(1.0 / 64.0));
    }

    proptest! {
        #[test]
        fn gradient_matches_fd_for_random_functions(seed in 0u64..1000, p in prop::sample::select(vec![2.0, 4.0])) {
            let dim2 = seed % 2 == 0;
            let grid = if dim2 { Grid::rectangle(5, 4, 1.0, 1.0).unwrap() } else { Grid::line(9, 1.0).unwrap() };
            let u = random_fn(grid, seed);
            let exact = p_energy(&u, p).unwrap().gradient;
            let fd = fd_gradient(&u, p, 1e-6);
            let scale = fd.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
            for (a, b) in exact.values().iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-6 * scale);
            }
        }

        #[test]
        fn quadratic_residual_is_linear(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let grid = Grid::rectangle(6, 6, 1.0, 1.0).unwrap();
            let u = random_fn(grid, seed);
            let v = random_fn(grid, seed + 10_000);
            let combo = u.zip_with(&v, |x, y| a * x + b * y).unwrap();
            let lhs = p_laplacian_residual(&combo, 2.0).unwrap();
            let ru = p_laplacian_residual(&u, 2.0).unwrap();
            let rv = p_laplacian_residual(&v, 2.0).unwrap();
            for k in 0..grid.node_count() {
                let rhs = a * ru.values()[k] + b * rv.values()[k];
                prop_assert!((lhs.values()[k] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) * 100.0);
            }
        }

        #[test]
        fn inf_residual_is_monotone_in_neighbours(seed in 0u64..500, bump in 0.0f64..2.0) {
            let grid = Grid::rectangle(5, 5, 1.0, 1.0).unwrap();
            let u = random_fn(grid, seed);
            let center = grid.index(2, 2);
            let before = inf_laplacian_residual(&u).values()[center];
            for n in grid.axis_neighbors(center) {
                let mut w = u.values().to_vec();
                w[n] += bump;
                let after = inf_laplacian_residual(&GridFunction::new(grid, w).unwrap()).values()[center];
                prop_assert!(after <= before + 1e-15);
            }
        }

        #[test]
        fn lq_norms_increase_to_sup_norm(seed in 0u64..500) {
            let grid = Grid::rectangle(9, 9, 1.0, 1.0).unwrap();
            let u = random_fn(grid, seed);
            let sup = lq_norm(&u, f64::INFINITY).unwrap();
            let mut prev = 0.0;
            for q in [1.0, 2.0, 8.0, 32.0, 128.0] {
                let n = lq_norm(&u, q).unwrap();
                prop_assert!(n + 1e-12 >= prev);
                prop_assert!(n <= sup + 1e-12);
                prev = n;
            }
        }
    }
}
