//! Direct solver for the 1D ∞-control problem.
//!
//! In 1D the ∞-superharmonic controls are the concave ones and each is its own
//! state, so the problem is to find the smallest `t` for which some concave
//! `ψ` with `ψ = F` at the ends satisfies `|ψ - z| <= t` and `|ψ'| <= t`.
//! If any such `ψ` exists then so does the least concave majorant of `z - t`:
//! it lies below `ψ`, and sharing endpoints with `ψ` its first slope is no
//! larger and its last slope no smaller. Feasibility of a level is therefore
//! an exact test on one hull, and the optimal level is found by bisection.

use std::time::Instant;

use super::{certify, Candidate, ControlOptions, ControlSolution};
use crate::error::{Error, Result};
use crate::grid::{BoundaryData, Exponent, GridFunction};
use crate::obstacle::lcm_1d;
use crate::operators::sup_gradient_norm;

/// Bisection stops once the bracket is narrower than this.
const LEVEL_TOLERANCE: f64 = 1e-9;

/// The feasibility witness at level `t`, if one exists.
fn witness(z: &GridFunction, f: &BoundaryData, t: f64) -> Result<Option<GridFunction>> {
    let grid = *z.grid();
    let n = grid.node_count();
    let (left, right) = (f.values()[0], f.values()[1]);
    let zv = z.values();
    if (left - zv[0]).abs() > t || (right - zv[n - 1]).abs() > t {
        return Ok(None);
    }
    let lowered = z.map(|v| v - t)?;
    let hull = lcm_1d(&lowered, f)?;
    let fits = hull.values().iter().zip(zv).all(|(h, z)| *h <= z + t);
    Ok((fits && sup_gradient_norm(&hull) <= t).then_some(hull))
}

/// Minimizes `J_∞` over concave controls on a 1D grid by bisection on the level.
pub fn minimize_jinf_1d_direct(
    z: &GridFunction,
    f: &BoundaryData,
    opts: &ControlOptions,
) -> Result<ControlSolution> {
    let grid = *z.grid();
    if grid.dimension() != 1 {
        return Err(Error::NotOneDimensional);
    }
    if f.grid() != &grid {
        return Err(Error::GridMismatch("profile and boundary data"));
    }
    let clock = Instant::now();

    // The affine interpolation of F is concave, so its cost is an upper level.
    let affine = f.interpolate();
    let mut hi = affine.sup_distance(z)?.max(sup_gradient_norm(&affine));
    let mut best = match witness(z, f, hi)? {
        Some(w) => w,
        None => affine,
    };
    let mut lo = 0.0;
    let mut iterations = 0;
    if let Some(w) = witness(z, f, 0.0)? {
        best = w;
        hi = 0.0;
    }
    while hi - lo > LEVEL_TOLERANCE * hi.max(1.0) {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        match witness(z, f, mid)? {
            Some(w) => {
                hi = mid;
                best = w;
            }
            None => lo = mid,
        }
    }

    let candidate = Candidate {
        control: best.into_values(),
        converged: true,
        iterations,
        stationarity: hi - lo,
        tolerance: LEVEL_TOLERANCE,
    };
    certify(z, candidate, Exponent::Infinity, opts, clock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn line() -> Grid {
        Grid::line(65, 1.0).unwrap()
    }

    #[test]
    fn constant_profile_level() {
        let g = line();
        let f = BoundaryData::constant(g, 0.0);
        for c in [0.3, 1.0] {
            let z = GridFunction::constant(g, c);
            let sol = minimize_jinf_1d_direct(&z, &f, &ControlOptions::default()).unwrap();
            assert!((sol.objective - c).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_profile_level() {
        let g = line();
        let z = GridFunction::zeros(g);
        let sol = minimize_jinf_1d_direct(
            &z,
            &BoundaryData::constant(g, 0.0),
            &ControlOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.objective, 0.0);
        assert!(sol.certified);
    }

    /// Exhaustive search over tents `a + min(s (x - c)...)`: every tent through
    /// the pinned ends is concave, so its cost bounds the optimum from above.
    #[test]
    fn no_tent_beats_the_direct_level() {
        let g = line();
        let f = BoundaryData::constant(g, 0.0);
        let z = GridFunction::from_fn(g, |x, _| 0.8 * (std::f64::consts::PI * x).sin()).unwrap();
        let sol = minimize_jinf_1d_direct(&z, &f, &ControlOptions::default()).unwrap();
        let mut best_tent = f64::INFINITY;
        for ci in 1..64 {
            let c = ci as f64 / 64.0;
            for hi in 0..=200 {
                let peak = hi as f64 * 0.005;
                let tent = GridFunction::from_fn(g, |x, _| {
                    if x <= c {
                        peak * x / c
                    } else {
                        peak * (1.0 - x) / (1.0 - c)
                    }
                })
                .unwrap();
                let cost = tent.sup_distance(&z).unwrap().max(sup_gradient_norm(&tent));
                best_tent = best_tent.min(cost);
            }
        }
        assert!(sol.objective <= best_tent + 1e-9);
        assert!(sol.objective <= z.values().iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1e-9);
    }
}
