//! Aggregation of per-replicate [`ContractionRecord`]s into the experiment
//! report: per-n medians of every metric, log-log error slopes, and the
//! failure list. Assembly is deterministic in the cell order it is given.

use serde::{Deserialize, Serialize};

use crate::metrics::{log_log_slope, ContractionRecord};
use crate::sim::ExperimentPlan;

/// One successfully fitted cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: String,
    pub replicate: usize,
    pub record: ContractionRecord,
}

/// One failed cell, kept for the report instead of aborting the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: String,
    pub n: usize,
    pub replicate: usize,
    pub message: String,
}

/// Medians of every numeric [`ContractionRecord`] metric over one (method,
/// n) group. Count-valued fields are medianed as reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub eps_n: f64,
    pub xb_err: f64,
    pub omega_err: f64,
    pub b_err: f64,
    pub psi_err: f64,
    pub xb_ratio: f64,
    pub omega_ratio: f64,
    pub b_ratio: f64,
    pub psi_ratio: f64,
    pub eff_dim_b: f64,
    pub eff_dim_omega: f64,
    pub sens_b: f64,
    pub prec_b: f64,
    pub sens_omega: f64,
    pub prec_omega: f64,
    pub phi_sq: f64,
}

/// Per-n aggregate for one method; `medians` is absent when every cell at
/// this n failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerNSummary {
    pub n: usize,
    pub attempted: usize,
    pub failed: usize,
    pub medians: Option<MedianSummary>,
}

/// Slopes are least-squares fits of log(median error) against log(n),
/// absent when fewer than two grid points have a positive median error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub per_n: Vec<PerNSummary>,
    pub xb_slope: Option<f64>,
    pub omega_slope: Option<f64>,
    pub b_slope: Option<f64>,
    pub psi_slope: Option<f64>,
}

/// Everything one experiment run produces, echoing the plan that made it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub methods: Vec<MethodSummary>,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

/// Median by total order on floats; `None` for an empty slice. Even-length
/// inputs average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some(0.5 * (sorted[mid - 1] + sorted[mid]))
    }
}

fn median_summary(records: &[&ContractionRecord]) -> Option<MedianSummary> {
    if records.is_empty() {
        return None;
    }
    let of = |f: &dyn Fn(&ContractionRecord) -> f64| {
        median(&records.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("nonempty")
    };
    Some(MedianSummary {
        eps_n: of(&|r| r.eps_n),
        xb_err: of(&|r| r.xb_err),
        omega_err: of(&|r| r.omega_err),
        b_err: of(&|r| r.b_err),
        psi_err: of(&|r| r.psi_err),
        xb_ratio: of(&|r| r.xb_ratio),
        omega_ratio: of(&|r| r.omega_ratio),
        b_ratio: of(&|r| r.b_ratio),
        psi_ratio: of(&|r| r.psi_ratio),
        eff_dim_b: of(&|r| r.eff_dim_b as f64),
        eff_dim_omega: of(&|r| r.eff_dim_omega as f64),
        sens_b: of(&|r| r.sens_b),
        prec_b: of(&|r| r.prec_b),
        sens_omega: of(&|r| r.sens_omega),
        prec_omega: of(&|r| r.prec_omega),
        phi_sq: of(&|r| r.phi_sq),
    })
}

fn slope_over_grid(per_n: &[PerNSummary], pick: impl Fn(&MedianSummary) -> f64) -> Option<f64> {
    let mut ns = Vec::new();
    let mut vals = Vec::new();
    for summary in per_n {
        if let Some(m) = &summary.medians {
            let v = pick(m);
            if v > 0.0 && v.is_finite() {
                ns.push(summary.n as f64);
                vals.push(v);
            }
        }
    }
    if ns.len() < 2 {
        return None;
    }
    log_log_slope(&ns, &vals).ok()
}

/// One raw cell outcome handed to [`assemble`]: method label, n, replicate,
/// and either a record or an error message.
pub type CellOutcome = (String, usize, usize, Result<ContractionRecord, String>);

/// Groups outcomes by method (first-seen order) and by `n` (grid order
/// within each method), computes per-n medians and slopes, and splits out
/// failures.
pub fn assemble(plan: ExperimentPlan, outcomes: Vec<CellOutcome>) -> ExperimentReport {
    let mut methods: Vec<String> = Vec::new();
    let mut cells: Vec<CellResult> = Vec::new();
    let mut failures: Vec<CellFailure> = Vec::new();
    for (method, n, replicate, outcome) in outcomes {
        if !methods.contains(&method) {
            methods.push(method.clone());
        }
        match outcome {
            Ok(record) => cells.push(CellResult {
                method,
                replicate,
                record,
            }),
            Err(message) => failures.push(CellFailure {
                method,
                n,
                replicate,
                message,
            }),
        }
    }

    let mut method_summaries = Vec::with_capacity(methods.len());
    for method in methods {
        let mut per_n = Vec::with_capacity(plan.n_grid.len());
        for &n in &plan.n_grid {
            let group: Vec<&ContractionRecord> = cells
                .iter()
                .filter(|c| c.method == method && c.record.n == n)
                .map(|c| &c.record)
                .collect();
            let failed = failures
                .iter()
                .filter(|f| f.method == method && f.n == n)
                .count();
            per_n.push(PerNSummary {
                n,
                attempted: group.len() + failed,
                failed,
                medians: median_summary(&group),
            });
        }
        method_summaries.push(MethodSummary {
            method,
            xb_slope: slope_over_grid(&per_n, |m| m.xb_err),
            omega_slope: slope_over_grid(&per_n, |m| m.omega_err),
            b_slope: slope_over_grid(&per_n, |m| m.b_err),
            psi_slope: slope_over_grid(&per_n, |m| m.psi_err),
            per_n,
        });
    }

    ExperimentReport {
        plan,
        methods: method_summaries,
        cells,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::default_plan;
    use approx::assert_relative_eq;

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    fn record_with(n: usize, omega_err: f64, xb_err: f64) -> ContractionRecord {
        ContractionRecord {
            n,
            p: 4,
            q: 2,
            s0_b: 2,
            s0_omega: 1,
            s_star: 2,
            eps_n: 0.1,
            xb_err,
            omega_err,
            b_err: xb_err,
            psi_err: xb_err,
            xb_ratio: 1.0,
            omega_ratio: 1.0,
            b_ratio: 1.0,
            psi_ratio: 1.0,
            eff_dim_b: 2,
            eff_dim_omega: 1,
            sens_b: 1.0,
            prec_b: 1.0,
            sens_omega: 1.0,
            prec_omega: 1.0,
            phi_sq: 0.8,
            phi_sq_exact: true,
        }
    }

    #[test]
    fn assemble_medians_slopes_and_failures() {
        let mut plan = default_plan();
        plan.n_grid = vec![100, 400];
        let outcomes: Vec<CellOutcome> = vec![
            ("mssl".into(), 100, 0, Ok(record_with(100, 0.4, 0.8))),
            ("mssl".into(), 100, 1, Ok(record_with(100, 0.6, 1.2))),
            ("mssl".into(), 400, 0, Ok(record_with(400, 0.2, 0.4))),
            ("mssl".into(), 400, 1, Err("synthetic failure".into())),
        ];
        let report = assemble(plan, outcomes);
        assert_eq!(report.cells.len(), 3);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].n, 400);

        let method = &report.methods[0];
        assert_eq!(method.per_n.len(), 2);
        assert_eq!(method.per_n[0].attempted, 2);
        assert_eq!(method.per_n[0].failed, 0);
        assert_eq!(method.per_n[1].attempted, 2);
        assert_eq!(method.per_n[1].failed, 1);

        let m100 = method.per_n[0].medians.as_ref().unwrap();
        assert_relative_eq!(m100.omega_err, 0.5, epsilon = 1e-15);
        assert_relative_eq!(m100.xb_err, 1.0, epsilon = 1e-15);

        // Medians (0.5 at n=100, 0.2 at n=400) give slope ln(0.4)/ln(4).
        let expected = (0.2f64 / 0.5).ln() / 4.0f64.ln();
        assert_relative_eq!(method.omega_slope.unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn assemble_single_n_reports_no_slopes() {
        let mut plan = default_plan();
        plan.n_grid = vec![100];
        let outcomes: Vec<CellOutcome> =
            vec![("mssl".into(), 100, 0, Ok(record_with(100, 0.4, 0.8)))];
        let report = assemble(plan, outcomes);
        let method = &report.methods[0];
        assert!(method.omega_slope.is_none());
        assert!(method.xb_slope.is_none());
        assert!(method.per_n[0].medians.is_some());
    }

    #[test]
    fn assemble_keeps_method_rows_separate() {
        let mut plan = default_plan();
        plan.n_grid = vec![100];
        let outcomes: Vec<CellOutcome> = vec![
            ("mssl".into(), 100, 0, Ok(record_with(100, 0.4, 0.8))),
            ("separate-ssl".into(), 100, 0, Ok(record_with(100, 0.9, 1.9))),
        ];
        let report = assemble(plan, outcomes);
        assert_eq!(report.methods.len(), 2);
        assert_eq!(report.methods[0].method, "mssl");
        assert_eq!(report.methods[1].method, "separate-ssl");
    }
}
