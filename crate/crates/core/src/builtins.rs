//! Named instances with known answers.
//!
//! | name | grid | obstacle ψ | boundary | profile z | expectation |
//! |---|---|---|---|---|---|
//! | `tent1d` | 65 | `1 - 2|x - 1/2|` | 0 | ψ | `T_p(ψ) = ψ` for every p |
//! | `twopeak1d` | 65 | two tents of height 1/2 at 1/4, 3/4 | 0 | ψ | hull through both peaks, slope 2 |
//! | `constant-profile-1d` | 65 | 0 | 0 | 1 | `C_∞ = 1` |
//! | `below-boundary` | 17 x 17 | -10 | `x + y` | `x + y` | state `x + y` |
//! | `bump2d` | 17 x 17 | clipped paraboloid | 0 | ψ | contact on a disc |
//! | `constant-profile-2d` | 17 x 17 | 0 | 0 | 1 | `C_∞ = 1` |
//! | `infeasible1d` | 65 | 1/2 | 0 | 0 | rejected as infeasible |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{BoundaryData, Exponent, Grid, GridFunction, ObstacleInstance};

pub const BUILTIN_NAMES: [&str; 7] = [
    "tent1d",
    "twopeak1d",
    "constant-profile-1d",
    "below-boundary",
    "bump2d",
    "constant-profile-2d",
    "infeasible1d",
];

pub fn tent(x: f64) -> f64 {
    1.0 - 2.0 * (x - 0.5).abs()
}

pub fn two_peak(x: f64) -> f64 {
    (0.5 - 4.0 * (x - 0.25).abs())
        .max(0.5 - 4.0 * (x - 0.75).abs())
        .max(0.0)
}

fn bump(x: f64, y: f64) -> f64 {
    (0.4 - 3.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).max(-0.2)
}

/// Builds the named instance with exponent 2.
pub fn builtin(name: &str) -> Result<ObstacleInstance> {
    let line = || Grid::line(65, 1.0);
    let square = || Grid::rectangle(17, 17, 1.0, 1.0);
    let p2 = Exponent::Finite(2.0);
    let zero_bc = |g: Grid| BoundaryData::constant(g, 0.0);
    match name {
        "tent1d" => {
            let g = line()?;
            let psi = GridFunction::from_fn(g, |x, _| tent(x))?;
            ObstacleInstance::new(psi.clone(), zero_bc(g), Some(psi), p2)
        }
        "twopeak1d" => {
            let g = line()?;
            let psi = GridFunction::from_fn(g, |x, _| two_peak(x))?;
            ObstacleInstance::new(psi.clone(), zero_bc(g), Some(psi), p2)
        }
        "constant-profile-1d" => {
            let g = line()?;
            ObstacleInstance::new(
                GridFunction::zeros(g),
                zero_bc(g),
                Some(GridFunction::constant(g, 1.0)),
                p2,
            )
        }
        "below-boundary" => {
            let g = square()?;
            let bc = BoundaryData::from_fn(g, |x, y| x + y)?;
            let z = GridFunction::from_fn(g, |x, y| x + y)?;
            ObstacleInstance::new(GridFunction::constant(g, -10.0), bc, Some(z), p2)
        }
        "bump2d" => {
            let g = square()?;
            let psi = GridFunction::from_fn(g, bump)?;
            let psi = GridFunction::new(
                g,
                psi.values()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| if g.is_boundary(k) { v.min(0.0) } else { v })
                    .collect(),
            )?;
            ObstacleInstance::new(psi.clone(), zero_bc(g), Some(psi), p2)
        }
        "constant-profile-2d" => {
            let g = square()?;
            ObstacleInstance::new(
                GridFunction::zeros(g),
                zero_bc(g),
                Some(GridFunction::constant(g, 1.0)),
                p2,
            )
        }
        "infeasible1d" => {
            let g = line()?;
            ObstacleInstance::new(
                GridFunction::constant(g, 0.5),
                zero_bc(g),
                Some(GridFunction::zeros(g)),
                p2,
            )
        }
        other => Err(Error::InvalidValue(format!(
            "unknown built-in instance {other:?}; known: {}",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// Seeded obstacle for zero boundary data: the upper envelope of three random
/// cones plus nodewise noise of size 0.05, lowered to at most 0 on the boundary.
pub fn random_obstacle(grid: Grid, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cones: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(-0.2..1.0),
                rng.gen_range(1.0..6.0),
            ]
        })
        .collect();
    let two_d = grid.dimension() == 2;
    let values = (0..grid.node_count())
        .map(|k| {
            let [x, y] = grid.position(k);
            let envelope = cones
                .iter()
                .map(|&[cx, cy, h, s]| {
                    let dy = if two_d { y - cy } else { 0.0 };
                    h - s * (x - cx).hypot(dy)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let v = envelope + rng.gen_range(-0.05..0.05);
            if grid.is_boundary(k) {
                v.min(0.0)
            } else {
                v
            }
        })
        .collect();
    GridFunction::new(grid, values).expect("values match the grid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves_except_the_infeasible_one() {
        for name in BUILTIN_NAMES {
            let r = builtin(name);
            if name == "infeasible1d" {
                assert!(matches!(r, Err(Error::InfeasibleObstacle { .. })));
            } else {
                let inst = r.unwrap();
                assert!(inst.profile.is_some(), "{name}");
            }
        }
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn random_obstacles_are_seeded_and_feasible() {
        let g = Grid::rectangle(9, 7, 1.0, 1.0).unwrap();
        let a = random_obstacle(g, 5);
        assert_eq!(a, random_obstacle(g, 5));
        assert_ne!(a, random_obstacle(g, 6));
        assert!(
            ObstacleInstance::new(a, BoundaryData::constant(g, 0.0), None, Exponent::Infinity)
                .is_ok()
        );
    }
}
