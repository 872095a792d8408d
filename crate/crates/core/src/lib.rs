//! Discrete p- and ∞-obstacle problems on uniform grids, the
//! obstacle-to-solution operators `T_p` and `T_∞`, and the optimal control
//! of the obstacle.
//!
//! ```
//! use obstacle_control::builtins::builtin;
//! use obstacle_control::control::{minimize_jinf, ControlOptions, DEFAULT_SCHEDULE};
//!
//! let inst = builtin("constant-profile-1d").unwrap();
//! let sol = minimize_jinf(inst.profile().unwrap(), &inst.boundary, &DEFAULT_SCHEDULE, &ControlOptions::default()).unwrap();
//! assert!((sol.objective - 1.0).abs() < 0.02);
//! assert!(sol.fixed_point_residual <= 1e-4);
//! ```
//!
//! The guide in `book/` walks through each module; its snippets run as doc-tests.

pub mod builtins;
pub mod control;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod obstacle;
pub mod operators;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/obstacle.md")]
    mod obstacle {}
    #[doc = include_str!("../../../book/src/control.md")]
    mod control {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
