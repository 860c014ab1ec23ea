//! CSV reading and writing for every series kind. Angles in radians,
//! electrical quantities in per unit, time in seconds. Floats are written
//! with 17 significant digits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{DseError, Result};
use crate::network::{PmuSample, TerminalMeasurement};
use crate::phasor::{positive_sequence, Phasor, ThreePhasePhasors};
use crate::pipeline::Estimation;
use crate::sim::TruthSample;
use crate::validation::PlaybackResult;

pub const PMU_HEADER: &[&str] = &["t", "v_mag", "v_ang", "i_mag", "i_ang", "tap"];
pub const PMU_3PH_HEADER: &[&str] = &[
    "t", "va_mag", "va_ang", "vb_mag", "vb_ang", "vc_mag", "vc_ang", "ia_mag", "ia_ang", "ib_mag", "ib_ang", "ic_mag",
    "ic_ang", "tap",
];
pub const TERMINAL_HEADER: &[&str] = &["t", "vt", "theta_t", "it", "phi_t"];
pub const TRUTH_HEADER: &[&str] = &["t", "x1", "x2", "x3", "tm", "te", "ef"];
pub const ESTIMATES_HEADER: &[&str] = &["t", "x1_hat", "x3_hat", "te_hat", "x2_hat", "a1_hat", "a2_hat"];
pub const DIAGNOSTICS_HEADER: &[&str] = &["t", "delta", "delta2_ma", "k_gamma1", "k_gamma2", "excitation_integral"];
pub const PLAYBACK_HEADER: &[&str] = &[
    "t", "x2_sim", "it_sim", "pt_sim", "qt_sim", "err_x2", "err_it", "err_pt", "err_qt",
];

/// One row of `estimates.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub x1_hat: f64,
    pub x3_hat: f64,
    pub te_hat: f64,
    pub x2_hat: f64,
    pub a1_hat: f64,
    pub a2_hat: f64,
}

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub t: f64,
    pub delta: f64,
    pub delta2_ma: f64,
    pub k_gamma: [f64; 2],
    pub excitation_integral: f64,
}

pub fn estimate_rows(e: &Estimation) -> Vec<EstimateRow> {
    e.reconstruction
        .algebraic
        .iter()
        .zip(&e.x2_hat)
        .zip(&e.drem)
        .map(|((a, &x2), d)| EstimateRow {
            t: a.t,
            x1_hat: a.x1_hat,
            x3_hat: a.x3_hat,
            te_hat: a.te_hat,
            x2_hat: x2,
            a1_hat: d.theta_hat[0],
            a2_hat: d.theta_hat[1],
        })
        .collect()
}

pub fn diagnostic_rows(e: &Estimation) -> Vec<DiagnosticRow> {
    e.drem
        .iter()
        .map(|d| DiagnosticRow {
            t: d.t,
            delta: d.delta,
            delta2_ma: d.delta2_ma,
            k_gamma: d.k_gamma,
            excitation_integral: d.excitation,
        })
        .collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes a header and rows of floats.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn schema_mismatch(path: &Path, expected: &[&str], found: &[String]) -> Option<DseError> {
    for (k, want) in expected.iter().enumerate() {
        match found.get(k) {
            Some(got) if got == want => {}
            Some(got) => {
                return Some(DseError::Schema {
                    path: path_str(path),
                    reason: format!("column {} is `{got}`, expected `{want}`", k + 1),
                })
            }
            None => {
                return Some(DseError::Schema {
                    path: path_str(path),
                    reason: format!("missing column {} `{want}`", k + 1),
                })
            }
        }
    }
    found.get(expected.len()).map(|extra| DseError::Schema {
        path: path_str(path),
        reason: format!("unexpected column {} `{extra}`", expected.len() + 1),
    })
}

fn read_header(path: &Path) -> Result<(csv::Reader<File>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, 0, e))?
        .iter()
        .map(str::to_string)
        .collect();
    Ok((rdr, header))
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> DseError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DseError::Io(io),
        other => DseError::CsvData {
            path: path_str(path),
            row,
            reason: format!("{other:?}"),
        },
    }
}

fn read_rows(path: &Path, mut rdr: csv::Reader<File>, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| csv_error(path, row, e))?;
        let bad = |reason: String| DseError::CsvData {
            path: path_str(path),
            row,
            reason,
        };
        if rec.len() != header.len() {
            return Err(bad(format!("{} cells, expected {}", rec.len(), header.len())));
        }
        let mut vals = Vec::with_capacity(header.len());
        for (cell, name) in rec.iter().zip(header) {
            let v: f64 = cell
                .parse()
                .map_err(|_| bad(format!("column `{name}`: cannot parse `{cell}`")))?;
            if !v.is_finite() {
                return Err(bad(format!("column `{name}`: non-finite value")));
            }
            vals.push(v);
        }
        if let Some(prev) = rows.last() {
            if !(vals[0] > prev[0]) {
                return Err(bad("timestamps must be strictly increasing".into()));
            }
        }
        rows.push(vals);
    }
    Ok(rows)
}

/// Reads a file whose header must equal `header` exactly.
pub fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let (rdr, found) = read_header(path)?;
    if let Some(e) = schema_mismatch(path, header, &found) {
        return Err(e);
    }
    read_rows(path, rdr, header)
}

pub fn write_pmu_csv(path: &Path, s: &[PmuSample]) -> Result<()> {
    write_table(
        path,
        PMU_HEADER,
        s.iter().map(|p| {
            let (vm, va) = p.v.to_polar();
            let (im, ia) = p.i.to_polar();
            vec![p.t, vm, va, im, ia, p.tap]
        }),
    )
}

/// Reads single-phase (positive-sequence) PMU data, or per-phase data from
/// which the positive sequence is taken row by row.
pub fn read_pmu_csv(path: &Path) -> Result<Vec<PmuSample>> {
    let (rdr, found) = read_header(path)?;
    if found.len() == PMU_3PH_HEADER.len() && schema_mismatch(path, PMU_3PH_HEADER, &found).is_none() {
        log::info!(
            "{}: three-phase input, using the positive sequence per row",
            path.display()
        );
        let rows = read_rows(path, rdr, PMU_3PH_HEADER)?;
        return Ok(rows
            .iter()
            .map(|r| {
                let seq = |o: usize| {
                    positive_sequence(&ThreePhasePhasors {
                        a: Phasor::from_polar(r[o], r[o + 1]),
                        b: Phasor::from_polar(r[o + 2], r[o + 3]),
                        c: Phasor::from_polar(r[o + 4], r[o + 5]),
                    })
                };
                PmuSample {
                    t: r[0],
                    v: seq(1),
                    i: seq(7),
                    tap: r[13],
                }
            })
            .collect());
    }
    if let Some(e) = schema_mismatch(path, PMU_HEADER, &found) {
        return Err(e);
    }
    Ok(read_rows(path, rdr, PMU_HEADER)?
        .iter()
        .map(|r| PmuSample {
            t: r[0],
            v: Phasor::from_polar(r[1], r[2]),
            i: Phasor::from_polar(r[3], r[4]),
            tap: r[5],
        })
        .collect())
}

pub fn write_terminal_csv(path: &Path, y: &[TerminalMeasurement]) -> Result<()> {
    write_table(
        path,
        TERMINAL_HEADER,
        y.iter().map(|m| vec![m.t, m.y1, m.y2, m.y3, m.y4]),
    )
}

pub fn read_terminal_csv(path: &Path) -> Result<Vec<TerminalMeasurement>> {
    Ok(read_table(path, TERMINAL_HEADER)?
        .iter()
        .map(|r| TerminalMeasurement {
            t: r[0],
            y1: r[1],
            y2: r[2],
            y3: r[3],
            y4: r[4],
        })
        .collect())
}

pub fn write_truth_csv(path: &Path, s: &[TruthSample]) -> Result<()> {
    write_table(
        path,
        TRUTH_HEADER,
        s.iter().map(|x| vec![x.t, x.x1, x.x2, x.x3, x.tm, x.te, x.ef]),
    )
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthSample>> {
    Ok(read_table(path, TRUTH_HEADER)?
        .iter()
        .map(|r| TruthSample {
            t: r[0],
            x1: r[1],
            x2: r[2],
            x3: r[3],
            tm: r[4],
            te: r[5],
            ef: r[6],
        })
        .collect())
}

pub fn write_estimates_csv(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    write_table(
        path,
        ESTIMATES_HEADER,
        rows.iter()
            .map(|r| vec![r.t, r.x1_hat, r.x3_hat, r.te_hat, r.x2_hat, r.a1_hat, r.a2_hat]),
    )
}

pub fn read_estimates_csv(path: &Path) -> Result<Vec<EstimateRow>> {
    Ok(read_table(path, ESTIMATES_HEADER)?
        .iter()
        .map(|r| EstimateRow {
            t: r[0],
            x1_hat: r[1],
            x3_hat: r[2],
            te_hat: r[3],
            x2_hat: r[4],
            a1_hat: r[5],
            a2_hat: r[6],
        })
        .collect())
}

pub fn write_diagnostics_csv(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    write_table(
        path,
        DIAGNOSTICS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.t,
                r.delta,
                r.delta2_ma,
                r.k_gamma[0],
                r.k_gamma[1],
                r.excitation_integral,
            ]
        }),
    )
}

pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticRow>> {
    Ok(read_table(path, DIAGNOSTICS_HEADER)?
        .iter()
        .map(|r| DiagnosticRow {
            t: r[0],
            delta: r[1],
            delta2_ma: r[2],
            k_gamma: [r[3], r[4]],
            excitation_integral: r[5],
        })
        .collect())
}

pub fn write_playback_csv(path: &Path, p: &PlaybackResult) -> Result<()> {
    let e = &p.errors;
    write_table(
        path,
        PLAYBACK_HEADER,
        (0..p.t.len()).map(|k| {
            vec![
                p.t[k],
                p.x2_sim[k],
                p.it_sim[k],
                p.pt_sim[k],
                p.qt_sim[k],
                e.x2[k],
                e.it[k],
                e.pt[k],
                e.qt[k],
            ]
        }),
    )
}

pub fn read_playback_csv(path: &Path) -> Result<PlaybackResult> {
    let mut p = PlaybackResult::default();
    for r in read_table(path, PLAYBACK_HEADER)? {
        p.t.push(r[0]);
        p.x2_sim.push(r[1]);
        p.it_sim.push(r[2]);
        p.pt_sim.push(r[3]);
        p.qt_sim.push(r[4]);
        p.errors.x2.push(r[5]);
        p.errors.it.push(r[6]);
        p.errors.pt.push(r[7]);
        p.errors.qt.push(r[8]);
    }
    Ok(p)
}

/// Flat `key,value` file.
pub fn write_key_values(path: &Path, kv: &[(String, String)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    writeln!(w, "key,value")?;
    for (k, v) in kv {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::negative_sequence;
    use std::f64::consts::TAU;

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(fmt(0.1), "1.0000000000000001e-1");
        let x = std::f64::consts::PI * 1e-7;
        assert_eq!(fmt(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn header_mismatch_names_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("terminal.csv");
        std::fs::write(&p, "t,theta_t,vt,it,phi_t\n0,1,1,1,1\n").unwrap();
        let err = read_terminal_csv(&p).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, DseError::Schema { .. }));
        assert!(
            msg.contains("theta_t") && msg.contains("vt") && msg.contains("column 2"),
            "{msg}"
        );
    }

    #[test]
    fn bad_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "t,vt,theta_t,it,phi_t\n0,1,1,1,1\n0,1,1,1,1\n").unwrap();
        assert!(matches!(read_terminal_csv(&p), Err(DseError::CsvData { row: 2, .. })));
        std::fs::write(&p, "t,vt,theta_t,it,phi_t\n0,1,NaN,1,1\n").unwrap();
        assert!(matches!(read_terminal_csv(&p), Err(DseError::CsvData { row: 1, .. })));
        std::fs::write(&p, "t,vt,theta_t,it,phi_t\n0,1,,1,1\n").unwrap();
        assert!(matches!(read_terminal_csv(&p), Err(DseError::CsvData { .. })));
    }

    #[test]
    fn three_phase_rows_use_positive_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pmu3.csv");
        // Unbalanced set: positive sequence differs from phase a.
        let rows = [[
            0.0,
            1.0,
            0.1,
            0.9,
            0.1 - TAU / 3.0,
            1.1,
            0.1 + TAU / 3.0,
            0.5,
            -0.2,
            0.5,
            -0.2 - TAU / 3.0,
            0.4,
            -0.1 + TAU / 3.0,
            0.02,
        ]];
        write_table(&p, PMU_3PH_HEADER, rows.iter().map(|r| r.to_vec())).unwrap();
        let s = read_pmu_csv(&p).unwrap();
        let r = rows[0];
        let v = ThreePhasePhasors {
            a: Phasor::from_polar(r[1], r[2]),
            b: Phasor::from_polar(r[3], r[4]),
            c: Phasor::from_polar(r[5], r[6]),
        };
        let expected = positive_sequence(&v);
        assert!((s[0].v.0 - expected.0).norm() < 1e-15);
        assert!(negative_sequence(&v).magnitude() > 1e-3);
        assert_eq!(s[0].tap, 0.02);
    }
}
