//! Experiment drivers: the convergence of minimal values `C_p -> C_∞`, and
//! numeric harnesses for the two limit lemmas on maxima and power means.

use std::fmt::Write as _;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::control::{eval_hp, minimize_jinf, ControlOptions, ControlSolution, StageRecord};
use crate::error::{Error, Result};
use crate::grid::{fmt_real, ObstacleInstance};

/// Slack of the soft monotone-gap check.
pub const GAP_SLACK: f64 = 1e-3;
/// Slack of the bound `C_∞ <= H_p(ψ_p) + slack`.
pub const LIMIT_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub p: f64,
    pub c_p: f64,
    pub fixed_point_residual: f64,
    #[serde(rename = "wall_time_s")]
    pub wall_time: f64,
    pub certified: bool,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub instance_id: String,
    /// One row per schedule entry, in increasing p.
    pub rows: Vec<TableRow>,
    /// The ∞-row, present when the limit solve produced a certified control.
    pub limit: Option<TableRow>,
    /// `|C_{p_max} - C_∞|`.
    pub gap_at_pmax: Option<f64>,
    /// Failed certificates and violated bounds.
    pub warnings: Vec<String>,
    /// Observations that need no action, such as a gap that is not monotone.
    pub advisories: Vec<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    instance_id: &'a str,
    #[serde(rename = "C_inf")]
    c_inf: Option<f64>,
    gap_at_pmax: Option<f64>,
    all_certified: bool,
}

impl ConvergenceTable {
    /// Rows and the limit row all carry a fixed-point certificate.
    pub fn all_certified(&self) -> bool {
        self.limit.as_ref().is_some_and(|r| r.certified) && self.rows.iter().all(|r| r.certified)
    }

    /// `|C_p - C_∞|` along the schedule.
    pub fn gaps(&self) -> Vec<f64> {
        match &self.limit {
            Some(l) => self.rows.iter().map(|r| (r.c_p - l.c_p).abs()).collect(),
            None => Vec::new(),
        }
    }

    /// Whether the gap sequence is nonincreasing within `slack`.
    pub fn gap_is_monotone(&self, slack: f64) -> bool {
        self.gaps().windows(2).all(|w| w[1] <= w[0] + slack)
    }

    /// CSV with header `p,C_p,fixed_point_residual,wall_time_s`; the limit row has `p = inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,C_p,fixed_point_residual,wall_time_s\n");
        let row = |out: &mut String, p: &str, r: &TableRow| {
            let _ = writeln!(
                out,
                "{p},{},{},{}",
                fmt_real(r.c_p),
                fmt_real(r.fixed_point_residual),
                fmt_real(r.wall_time)
            );
        };
        for r in &self.rows {
            row(&mut out, &r.p.to_string(), r);
        }
        if let Some(l) = &self.limit {
            row(&mut out, "inf", l);
        }
        out
    }

    /// JSON summary with keys `instance_id, C_inf, gap_at_pmax, all_certified`.
    pub fn summary_json(&self) -> String {
        let s = Summary {
            instance_id: &self.instance_id,
            c_inf: self.limit.as_ref().map(|l| l.c_p),
            gap_at_pmax: self.gap_at_pmax,
            all_certified: self.all_certified(),
        };
        serde_json::to_string_pretty(&s).expect("summary serializes")
    }
}

/// Output of [`run_convergence_study`]: the table and the limit control.
#[derive(Debug, Clone)]
pub struct Study {
    pub table: ConvergenceTable,
    pub solution: ControlSolution,
}

fn row_of(stage: &StageRecord) -> TableRow {
    TableRow {
        p: stage.p,
        c_p: stage.objective,
        fixed_point_residual: stage.fixed_point_residual,
        wall_time: stage.wall_time,
        certified: stage.certified,
    }
}

/// Runs the p-continuation on `inst` and tabulates `C_p` against `C_∞`.
///
/// Checked along the way, each violation recorded as a warning:
/// `C_p <= 2^(1/p) vol^(1/p) H_p(η)` for `η` the stage minimizer and the
/// zero extension of the boundary data; `C_∞ <= H_{p_max}(ψ_{p_max}) + slack`;
/// and every row certified. A gap `|C_p - C_∞|` that grows by more than
/// [`GAP_SLACK`] along the schedule is only an advisory.
pub fn run_convergence_study(
    instance_id: &str,
    inst: &ObstacleInstance,
    schedule: &[f64],
    opts: &ControlOptions,
) -> Result<Study> {
    let z = inst.profile()?;
    let f = &inst.boundary;
    let solution = match minimize_jinf(z, f, schedule, opts) {
        Ok(s) => s,
        Err(Error::CertificateFailure(s)) => *s,
        Err(e) => return Err(e),
    };
    let vol = inst.grid.volume();
    let zero_extension = crate::grid::embed_boundary(f, 0.0)?;
    let mut warnings = Vec::new();

    let rows: Vec<TableRow> = solution.trace.iter().map(row_of).collect();
    for stage in &solution.trace {
        let p = stage.p;
        let factor = 2f64.powf(1.0 / p) * vol.powf(1.0 / p);
        let bound_eta = factor * eval_hp(&zero_extension, z, p, &opts.obstacle)?;
        let bound_own = factor * stage.h_p;
        let bound = bound_eta.min(bound_own);
        if stage.objective > bound * (1.0 + 1e-12) {
            warnings.push(format!(
                "p = {p}: C_p = {} exceeds the bound {bound}",
                stage.objective
            ));
        }
        if !stage.certified {
            warnings.push(format!(
                "p = {p}: fixed-point residual {:.3e} exceeds {:.1e}",
                stage.fixed_point_residual, opts.certificate_tolerance
            ));
        }
        if !stage.converged {
            warnings.push(format!(
                "p = {p}: outer minimization stopped before its tolerance"
            ));
        }
    }

    let limit = TableRow {
        p: f64::INFINITY,
        c_p: solution.objective,
        fixed_point_residual: solution.fixed_point_residual,
        wall_time: solution.report.wall_time,
        certified: solution.certified,
    };
    if !solution.certified {
        warnings.push(format!(
            "∞ limit: fixed-point residual {:.3e} exceeds {:.1e}",
            solution.fixed_point_residual, opts.certificate_tolerance
        ));
    }
    let last = solution.trace.last().expect("schedule is nonempty");
    if limit.c_p > last.h_p + LIMIT_SLACK {
        warnings.push(format!(
            "C_∞ = {} exceeds H_p = {} at p = {} by more than {LIMIT_SLACK}",
            limit.c_p, last.h_p, last.p
        ));
    }
    let gap_at_pmax = Some((last.objective - limit.c_p).abs());
    let mut table = ConvergenceTable {
        instance_id: instance_id.to_string(),
        rows,
        limit: solution.certified.then_some(limit),
        gap_at_pmax,
        warnings,
        advisories: Vec::new(),
    };
    if table.limit.is_none() {
        table.gap_at_pmax = None;
    } else if !table.gap_is_monotone(GAP_SLACK) {
        let gaps = table.gaps();
        table.advisories.push(format!(
            "gap |C_p - C_∞| is not monotone along the schedule: {gaps:?}"
        ));
    }
    Ok(Study { table, solution })
}

/// Runs independent studies on up to `max_threads` threads; results keep the input order.
pub fn run_studies(
    instances: &[(String, ObstacleInstance)],
    schedule: &[f64],
    opts: &ControlOptions,
    max_threads: usize,
) -> Vec<Result<Study>> {
    let threads = max_threads.max(1).min(instances.len().max(1));
    let mut results: Vec<Option<Result<Study>>> = (0..instances.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let chunks: Vec<_> = results
            .chunks_mut(instances.len().div_ceil(threads).max(1))
            .zip(instances.chunks(instances.len().div_ceil(threads).max(1)))
            .collect();
        for (out, work) in chunks {
            scope.spawn(move || {
                for (slot, (id, inst)) in out.iter_mut().zip(work) {
                    *slot = Some(run_convergence_study(id, inst, schedule, opts));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// A pair of sequences `a_p = a + α / p^s`, `b_p = b + β / p^s` with known limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SequencePair {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub decay: f64,
}

impl SequencePair {
    pub fn at(&self, p: f64) -> (f64, f64) {
        let t = p.powf(-self.decay);
        (
            (self.a + self.alpha * t).max(0.0),
            (self.b + self.beta * t).max(0.0),
        )
    }

    pub fn limit(&self) -> f64 {
        self.a.max(self.b)
    }

    /// Seeded pairs with limits in `[0, 1)`, perturbations in `(-1/2, 1/2)` and decay in `[1, 2)`.
    pub fn random(count: usize, seed: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Self {
                a: rng.gen_range(0.0..1.0),
                b: rng.gen_range(0.0..1.0),
                alpha: rng.gen_range(-0.5..0.5),
                beta: rng.gen_range(-0.5..0.5),
                decay: rng.gen_range(1.0..2.0),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub cases: usize,
    pub failures: Vec<String>,
    /// Largest deviation from the limit at the last exponent checked.
    pub worst_tail_error: f64,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks that `max(a_p, b_p)` is eventually within `eps` of `max(a, b)`:
/// from some exponent in `tail` on, every later exponent is within `eps`.
pub fn check_liminf_max(samples: &[SequencePair], tail: &[f64], eps: f64) -> LemmaReport {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let errors: Vec<f64> = tail
            .iter()
            .map(|&p| {
                let (a, b) = s.at(p);
                (a.max(b) - s.limit()).abs()
            })
            .collect();
        worst = worst.max(errors.last().copied().unwrap_or(0.0));
        let settled = errors.iter().rposition(|&e| e > eps).map_or(0, |i| i + 1);
        if settled == errors.len() {
            failures.push(format!(
                "case {i}: max(a_p, b_p) never settles within {eps}: {errors:?}"
            ));
        }
    }
    LemmaReport {
        cases: samples.len(),
        failures,
        worst_tail_error: worst,
    }
}

/// `(a^p + b^p)^(1/p)` evaluated as `m · exp(ln(1 + r^p) / p)` with
/// `m = max(a, b)` and `r = min / max`, so no power overflows.
pub fn power_mean(a: f64, b: f64, p: f64) -> f64 {
    let (m, n) = if a >= b { (a, b) } else { (b, a) };
    if m == 0.0 {
        return 0.0;
    }
    m * ((n / m).powf(p).ln_1p() / p).exp()
}

/// Checks `max(a_p, b_p) <= (a_p^p + b_p^p)^(1/p) <= 2^(1/p) max(a_p, b_p)`
/// to `1e-12` relative at every exponent, and the limit to `eps` at the last one.
pub fn check_power_mean(samples: &[SequencePair], exponents: &[f64], eps: f64) -> LemmaReport {
    const REL: f64 = 1e-12;
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        for &p in exponents {
            let (a, b) = s.at(p);
            let m = a.max(b);
            let v = power_mean(a, b, p);
            if v < m * (1.0 - REL) || v > 2f64.powf(1.0 / p) * m * (1.0 + REL) {
                failures.push(format!("case {i}, p = {p}: {v} outside [{m}, 2^(1/p) {m}]"));
            }
        }
        if let Some(&p) = exponents.last() {
            let (a, b) = s.at(p);
            let e = (power_mean(a, b, p) - s.limit()).abs();
            worst = worst.max(e);
            if e > eps {
                failures.push(format!(
                    "case {i}: power mean at p = {p} is {e} from its limit"
                ));
            }
        }
    }
    LemmaReport {
        cases: samples.len(),
        failures,
        worst_tail_error: worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::builtin;
    use crate::control::DEFAULT_SCHEDULE;
    use crate::grid::{BoundaryData, Exponent, Grid, GridFunction};

    #[test]
    fn liminf_max_examples() {
        let pair = SequencePair {
            a: 1.0,
            b: 2.0,
            alpha: 1.0,
            beta: -1.0,
            decay: 1.0,
        };
        let tail = [1e6, 1e7, 1e8];
        assert!(check_liminf_max(&[pair], &tail, 1e-6).passed());
        let zero = SequencePair {
            a: 0.0,
            b: 0.0,
            alpha: 0.0,
            beta: 0.0,
            decay: 1.0,
        };
        let r = check_liminf_max(&[zero], &tail, 1e-6);
        assert!(r.passed());
        assert_eq!(r.worst_tail_error, 0.0);
        let stuck = SequencePair {
            a: 1.0,
            b: 0.0,
            alpha: 1e9,
            beta: 0.0,
            decay: 1.0,
        };
        assert!(!check_liminf_max(&[stuck], &tail, 1e-6).passed());
    }

    #[test]
    fn power_mean_examples() {
        assert!((power_mean(1.0, 1.0, 2.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(power_mean(3.0, 0.0, 7.0), 3.0);
        assert!(power_mean(1e300, 1e300, 1024.0).is_finite());
        let exps: Vec<f64> = (1..=10).map(|k| 2f64.powi(k)).collect();
        let r = check_power_mean(&SequencePair::random(100, 7), &exps, 1e-3);
        assert!(r.passed(), "{:?}", r.failures);
    }

    #[test]
    fn random_pairs_are_seeded() {
        assert_eq!(SequencePair::random(5, 3), SequencePair::random(5, 3));
        assert_ne!(SequencePair::random(5, 3), SequencePair::random(5, 4));
    }

    #[test]
    fn zero_profile_study_is_all_zero() {
        let g = Grid::line(33, 1.0).unwrap();
        let zero = GridFunction::zeros(g);
        let inst = ObstacleInstance::new(
            zero.clone(),
            BoundaryData::constant(g, 0.0),
            Some(zero),
            Exponent::Finite(2.0),
        )
        .unwrap();
        let study =
            run_convergence_study("zero", &inst, &DEFAULT_SCHEDULE, &ControlOptions::default())
                .unwrap();
        assert!(study.table.rows.iter().all(|r| r.c_p == 0.0));
        assert_eq!(study.table.limit.as_ref().unwrap().c_p, 0.0);
        assert!(study.table.all_certified());
    }

    #[test]
    fn table_csv_layout() {
        let inst = builtin("constant-profile-1d").unwrap();
        let study =
            run_convergence_study("c1", &inst, &[2.0, 4.0], &ControlOptions::default()).unwrap();
        let csv = study.table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "p,C_p,fixed_point_residual,wall_time_s");
        assert!(lines[1].starts_with("2,"));
        assert!(lines[2].starts_with("4,"));
        assert!(lines[3].starts_with("inf,"));
        let v: serde_json::Value = serde_json::from_str(&study.table.summary_json()).unwrap();
        assert_eq!(v["instance_id"], "c1");
        assert!((v["C_inf"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parallel_studies_match_serial() {
        let names = ["constant-profile-1d", "twopeak1d", "tent1d"];
        let insts: Vec<_> = names
            .iter()
            .map(|n| (n.to_string(), builtin(n).unwrap()))
            .collect();
        let opts = ControlOptions::default();
        let parallel = run_studies(&insts, &[2.0, 8.0], &opts, 3);
        for ((id, inst), par) in insts.iter().zip(parallel) {
            let serial = run_convergence_study(id, inst, &[2.0, 8.0], &opts).unwrap();
            let par = par.unwrap();
            let strip = |t: &ConvergenceTable| {
                t.rows
                    .iter()
                    .map(|r| (r.p, r.c_p, r.fixed_point_residual))
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(&serial.table), strip(&par.table));
        }
    }
}
