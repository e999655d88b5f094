//! File formats: matrix CSV (header row `c0,c1,...`, row-major values,
//! shortest-round-trip float formatting), the contraction-records CSV, the
//! plottable rate curve, and the JSON configs and summaries. Schemas are
//! part of the tested contract; reruns with identical inputs produce
//! byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ContractionRecord;
use crate::model::GroundTruth;
use crate::prior::Hyperparameters;
use crate::report::{CellFailure, CellResult, ExperimentReport, MethodSummary};
use crate::sim::{ExperimentPlan, GenConfig};
use crate::solver::{FitResult, SolverConfig};

fn csv_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::CsvParse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Writes a matrix as CSV with header `c0,...,c{m-1}`. A zero-column matrix
/// gets the marker line `rows=<n>,cols=0` so its row count survives the
/// round trip.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    if m.ncols() == 0 {
        out.push_str(&format!("rows={},cols=0\n", m.nrows()));
    } else {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push('c');
            out.push_str(&j.to_string());
        }
        out.push('\n');
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{}", m[(i, j)]));
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`], including the
/// zero-column marker form.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let content = fs::read_to_string(path)?;
    let lines: Vec<&str> = content.lines().collect();
    if lines.is_empty() {
        return Err(csv_err(path, 1, "empty file"));
    }
    if let Some(marker) = lines[0].strip_prefix("rows=") {
        let rows_str = marker
            .strip_suffix(",cols=0")
            .ok_or_else(|| csv_err(path, 1, format!("malformed marker line {:?}", lines[0])))?;
        let rows: usize = rows_str
            .parse()
            .map_err(|_| csv_err(path, 1, format!("bad row count {rows_str:?}")))?;
        if lines.len() > 1 {
            return Err(csv_err(path, 2, "unexpected data after zero-column marker"));
        }
        return Ok(DMatrix::zeros(rows, 0));
    }

    let headers: Vec<&str> = lines[0].split(',').collect();
    for (j, header) in headers.iter().enumerate() {
        if *header != format!("c{j}") {
            return Err(csv_err(
                path,
                1,
                format!("expected header c{j}, found {header:?}"),
            ));
        }
    }
    let ncols = headers.len();
    let nrows = lines.len() - 1;
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(csv_err(
                path,
                i + 2,
                format!("expected {ncols} fields, found {}", fields.len()),
            ));
        }
        for (j, field) in fields.iter().enumerate() {
            m[(i, j)] = field
                .parse()
                .map_err(|_| csv_err(path, i + 2, format!("bad float {field:?}")))?;
        }
    }
    Ok(m)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let content = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&content)?)
}

const RECORD_COLUMNS: &str = "method,replicate,n,p,q,s0_b,s0_omega,s_star,eps_n,xb_err,\
                              omega_err,b_err,psi_err,xb_ratio,omega_ratio,b_ratio,psi_ratio,\
                              eff_dim_b,eff_dim_omega,sens_b,prec_b,sens_omega,prec_omega,\
                              phi_sq,phi_sq_exact";

/// One CSV row per fitted cell, every [`ContractionRecord`] field included.
pub fn write_records_csv(path: &Path, cells: &[CellResult]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{RECORD_COLUMNS}")?;
    for cell in cells {
        let r = &cell.record;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            cell.method,
            cell.replicate,
            r.n,
            r.p,
            r.q,
            r.s0_b,
            r.s0_omega,
            r.s_star,
            r.eps_n,
            r.xb_err,
            r.omega_err,
            r.b_err,
            r.psi_err,
            r.xb_ratio,
            r.omega_ratio,
            r.b_ratio,
            r.psi_ratio,
            r.eff_dim_b,
            r.eff_dim_omega,
            r.sens_b,
            r.prec_b,
            r.sens_omega,
            r.prec_omega,
            r.phi_sq,
            r.phi_sq_exact
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a records CSV back into cells, for recomputation checks.
pub fn read_records_csv(path: &Path) -> Result<Vec<CellResult>> {
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| csv_err(path, 1, "empty file"))?;
    if header != RECORD_COLUMNS {
        return Err(csv_err(path, 1, "unexpected records header"));
    }
    let mut cells = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 25 {
            return Err(csv_err(
                path,
                lineno,
                format!("expected 25 fields, found {}", f.len()),
            ));
        }
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| csv_err(path, lineno, format!("bad count {s:?}")))
        };
        let real = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| csv_err(path, lineno, format!("bad float {s:?}")))
        };
        let boolean = |s: &str| -> Result<bool> {
            s.parse()
                .map_err(|_| csv_err(path, lineno, format!("bad bool {s:?}")))
        };
        cells.push(CellResult {
            method: f[0].to_string(),
            replicate: int(f[1])?,
            record: ContractionRecord {
                n: int(f[2])?,
                p: int(f[3])?,
                q: int(f[4])?,
                s0_b: int(f[5])?,
                s0_omega: int(f[6])?,
                s_star: int(f[7])?,
                eps_n: real(f[8])?,
                xb_err: real(f[9])?,
                omega_err: real(f[10])?,
                b_err: real(f[11])?,
                psi_err: real(f[12])?,
                xb_ratio: real(f[13])?,
                omega_ratio: real(f[14])?,
                b_ratio: real(f[15])?,
                psi_ratio: real(f[16])?,
                eff_dim_b: int(f[17])?,
                eff_dim_omega: int(f[18])?,
                sens_b: real(f[19])?,
                prec_b: real(f[20])?,
                sens_omega: real(f[21])?,
                prec_omega: real(f[22])?,
                phi_sq: real(f[23])?,
                phi_sq_exact: boolean(f[24])?,
            },
        });
    }
    Ok(cells)
}

/// Plot-ready medians for the report's first method: one row per grid `n`
/// that produced any successful cells.
pub fn write_rate_curve_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "n,eps_n,xb_err,omega_err,b_err,psi_err")?;
    if let Some(method) = report.methods.first() {
        for per_n in &method.per_n {
            if let Some(m) = &per_n.medians {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    per_n.n, m.eps_n, m.xb_err, m.omega_err, m.b_err, m.psi_err
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// The summary document `cmd_experiment` writes: plan echo, per-method
/// aggregates, and the failure list.
#[derive(Serialize)]
pub struct SummaryDoc<'a> {
    pub plan: &'a ExperimentPlan,
    pub methods: &'a [MethodSummary],
    pub n_cells: usize,
    pub n_failures: usize,
    pub failures: &'a [CellFailure],
}

pub fn write_summary_json(path: &Path, report: &ExperimentReport) -> Result<()> {
    write_json(
        path,
        &SummaryDoc {
            plan: &report.plan,
            methods: &report.methods,
            n_cells: report.cells.len(),
            n_failures: report.failures.len(),
            failures: &report.failures,
        },
    )
}

/// Everything `cmd_fit` reports besides the coefficient files, echoing the
/// configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub hyperparameters: Hyperparameters,
    pub solver: SolverConfig,
    pub tau: f64,
    pub columns_normalized: bool,
    pub converged: bool,
    pub n_outer_iters: usize,
    pub floor_projection_applied: bool,
    pub eff_dim_b: usize,
    pub eff_dim_omega: usize,
    pub objective_trajectory: Vec<f64>,
}

impl FitSummary {
    pub fn new(
        hp: &Hyperparameters,
        solver: &SolverConfig,
        fit: &FitResult,
        columns_normalized: bool,
    ) -> Self {
        Self {
            hyperparameters: hp.clone(),
            solver: solver.clone(),
            tau: hp.tau(),
            columns_normalized,
            converged: fit.converged,
            n_outer_iters: fit.n_outer_iters,
            floor_projection_applied: fit.floor_projection_applied,
            eff_dim_b: fit.eff_dim_b,
            eff_dim_omega: fit.eff_dim_omega,
            objective_trajectory: fit.objective_trajectory.clone(),
        }
    }
}

/// Sidecar for generated instances: the generating config plus the true
/// supports, enough to recompute every recovery metric downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthMeta {
    pub config: GenConfig,
    pub support_b: Vec<(usize, usize)>,
    pub support_omega: Vec<(usize, usize)>,
}

impl TruthMeta {
    pub fn new(config: &GenConfig, truth: &GroundTruth) -> Self {
        Self {
            config: config.clone(),
            support_b: truth.support_b.clone(),
            support_omega: truth.support_omega.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mssl-io-{}-{}", tag, std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let dir = temp_dir("roundtrip");
        let path = dir.join("m.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-10.0..10.0f64) / 3.0);
        write_matrix_csv(&path, &m).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!(back.nrows(), 7);
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_zero_columns_marker() {
        let dir = temp_dir("marker");
        let path = dir.join("x.csv");
        write_matrix_csv(&path, &DMatrix::zeros(12, 0)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "rows=12,cols=0\n");
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!((back.nrows(), back.ncols()), (12, 0));
    }

    #[test]
    fn matrix_parse_errors_carry_line_numbers() {
        let dir = temp_dir("badcsv");
        let path = dir.join("bad.csv");
        fs::write(&path, "c0,c1\n1.0,2.0\n3.0,oops\n").unwrap();
        match read_matrix_csv(&path) {
            Err(Error::CsvParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected CsvParse, got {other:?}"),
        }
        fs::write(&path, "c0,wrong\n1.0,2.0\n").unwrap();
        assert!(matches!(
            read_matrix_csv(&path),
            Err(Error::CsvParse { line: 1, .. })
        ));
    }

    #[test]
    fn records_round_trip() {
        let dir = temp_dir("records");
        let path = dir.join("records.csv");
        let cell = CellResult {
            method: "mssl".into(),
            replicate: 2,
            record: ContractionRecord {
                n: 100,
                p: 4,
                q: 2,
                s0_b: 2,
                s0_omega: 1,
                s_star: 2,
                eps_n: 0.3,
                xb_err: 0.5,
                omega_err: 0.25,
                b_err: 0.4,
                psi_err: 0.6,
                xb_ratio: 2.7,
                omega_ratio: 0.69,
                b_ratio: 1.3,
                psi_ratio: 2.2,
                eff_dim_b: 2,
                eff_dim_omega: 1,
                sens_b: 1.0,
                prec_b: 0.5,
                sens_omega: 1.0,
                prec_omega: 1.0,
                phi_sq: 0.75,
                phi_sq_exact: true,
            },
        };
        write_records_csv(&path, std::slice::from_ref(&cell)).unwrap();
        let back = read_records_csv(&path).unwrap();
        assert_eq!(back, vec![cell]);
    }

    #[test]
    fn plan_json_round_trip_and_defaults() {
        let dir = temp_dir("plan");
        let path = dir.join("plan.json");
        let plan = ExperimentPlan::default();
        write_json(&path, &plan).unwrap();
        let back: ExperimentPlan = read_json(&path).unwrap();
        assert_eq!(back, plan);

        fs::write(dir.join("empty.json"), "{}\n").unwrap();
        let empty: ExperimentPlan = read_json(&dir.join("empty.json")).unwrap();
        assert_eq!(empty, ExperimentPlan::default());
    }
}
