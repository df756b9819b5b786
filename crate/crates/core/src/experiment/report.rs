//! CSV and text output of a run.
//!
//! Numbers are written as `{:.10e}`. An existing file with different content
//! is moved to `<name>.<n>` before the new one is written; identical content
//! is left alone.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::run::{PointResult, Quantity, RunReport, Series};
use crate::error::Result;
use crate::observables::{streda_slope, Estimate, SlopeMethod};

fn num(x: f64) -> String {
    format!("{x:.10e}")
}

/// Time series with columns `t_hbar_over_J, fidelity, fidelity_stderr, bulk_density, photon_<site>...`.
pub fn write_timeseries_csv<W: Write>(series: &Series, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t_hbar_over_J".to_string(), "fidelity".into(), "fidelity_stderr".into(), "bulk_density".into()];
    header.extend(series.photons.iter().map(|(site, _)| format!("photon_{site}")));
    out.write_record(&header)?;
    for (i, t) in series.times.iter().enumerate() {
        let mut row = vec![num(*t), num(series.fidelity[i].value), num(series.fidelity[i].stderr), num(series.bulk_density[i].value)];
        row.extend(series.photons.iter().map(|(_, v)| num(v[i])));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Scan with columns `abscissa, value, stderr`.
pub fn write_scan_csv<W: Write>(rows: &[(f64, Estimate)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["abscissa", "value", "stderr"])?;
    for (x, e) in rows {
        out.write_record([num(*x), num(e.value), num(e.stderr)])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `bytes` unless the file already holds them; returns whether it wrote.
fn write_versioned(path: &Path, bytes: &[u8]) -> Result<bool> {
    if path.exists() {
        if fs::read(path)? == bytes {
            return Ok(false);
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
        let backup = (1..)
            .map(|n| path.with_file_name(format!("{name}.{n}")))
            .find(|p| !p.exists())
            .expect("unbounded search");
        fs::rename(path, backup)?;
    }
    fs::write(path, bytes)?;
    Ok(true)
}

fn point_label(report: &RunReport, p: &PointResult) -> String {
    if report.is_flux_scan() {
        format!("_phi{:.4}", p.phi_over_2pi)
    } else if report.is_pin_scan() {
        format!("_V{:.4}", p.pin)
    } else {
        String::new()
    }
}

fn scan_rows(report: &RunReport, q: Quantity, pick: impl Fn(&super::run::Snapshot) -> Estimate) -> Option<Vec<(f64, Estimate)>> {
    report
        .points
        .iter()
        .map(|p| p.snapshot(q).map(|s| (report.abscissa(p), pick(s))))
        .collect()
}

/// Writes all report files into `dir` and returns the paths written.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    files.push(("config.toml".into(), report.config.to_toml()?.into_bytes()));

    for p in &report.points {
        let label = point_label(report, p);
        let mut buf = Vec::new();
        p.regime.write_csv(&mut buf)?;
        files.push((format!("regime{label}.csv"), buf));
        if let Some(r) = &p.rates {
            let mut buf = Vec::new();
            write_timeseries_csv(&r.series, &mut buf)?;
            files.push((format!("timeseries_rates{label}.csv"), buf));
        }
        if let Some(t) = &p.traj {
            let mut buf = Vec::new();
            write_timeseries_csv(&t.series, &mut buf)?;
            files.push((format!("timeseries_traj{label}.csv"), buf));
        }
    }

    if report.is_flux_scan() || report.is_pin_scan() {
        for q in Quantity::ALL {
            let Some(fid) = scan_rows(report, q, |s| s.fidelity) else { continue };
            let mut buf = Vec::new();
            write_scan_csv(&fid, &mut buf)?;
            files.push((format!("scan_fidelity_{}.csv", q.label()), buf));
            let mut buf = Vec::new();
            if report.is_flux_scan() {
                let rows = scan_rows(report, q, |s| s.bulk_density).expect("same points");
                write_scan_csv(&rows, &mut buf)?;
                files.push((format!("scan_bulk_density_{}.csv", q.label()), buf));
            } else if let Ok(rows) = report.charge_response(q) {
                write_scan_csv(&rows, &mut buf)?;
                files.push((format!("scan_charge_response_{}.csv", q.label()), buf));
            }
        }
    }
    files.push(("summary.txt".into(), summary(report).into_bytes()));

    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if write_versioned(&path, &bytes)? {
            written.push(path);
        }
    }
    Ok(written)
}

fn snapshot_line(out: &mut String, name: &str, s: &super::run::Snapshot) {
    let _ = writeln!(
        out,
        "  {name:<13} fidelity {:.4} +- {:.4}  bulk density {:.5} +- {:.5}  bulk charge {:.4}",
        s.fidelity.value, s.fidelity.stderr, s.bulk_density.value, s.bulk_density.stderr, s.bulk_charge.value
    );
}

fn summary(report: &RunReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    let _ = writeln!(out, "scenario      {}", cfg.scenario);
    if !cfg.description.is_empty() {
        let _ = writeln!(out, "description   {}", cfg.description);
    }
    let _ = writeln!(out, "config sha256 {}", report.hash);
    let _ = writeln!(out, "seed          {}", cfg.run.seed);
    let _ = writeln!(out, "solver        {}", cfg.solver);
    let _ = writeln!(out, "bulk region   {}", cfg.run.bulk.kind());
    let _ = writeln!(out, "wall clock    {:.2} s", report.wall_clock.as_secs_f64());
    let _ = writeln!(out, "units         energies J, times hbar/J, rates J/hbar");

    for p in &report.points {
        let _ = writeln!(out);
        let _ = writeln!(out, "point phi/2pi = {}, V = {} J", p.phi_over_2pi, p.pin);
        let e = &p.eigenvalues;
        let gaps: Vec<String> = e.iter().skip(1).take(3).map(|x| format!("{:.4}", x - e[0])).collect();
        let _ = writeln!(
            out,
            "  sector dim {}, {} eigenstates (max residual {:.1e}), gaps {}",
            p.lattice_dim,
            e.len(),
            p.max_residual,
            gaps.join(", ")
        );
        let _ = writeln!(out, "  cavities {}, regime {}", p.cavities.len(), p.regime.worst());
        snapshot_line(&mut out, "ground", &p.ground);
        snapshot_line(&mut out, "baseline", &p.baseline);
        if let Some(r) = &p.rates {
            snapshot_line(&mut out, "rates final", &r.final_state);
            snapshot_line(&mut out, "rates steady", &r.steady);
            let _ = writeln!(
                out,
                "  rates: max {:.3e}, min nonzero {}, degenerate {}",
                r.max_rate,
                r.min_rate.map_or("none".into(), |x| format!("{x:.3e}")),
                r.degenerate
            );
            checkpoints(&mut out, "rates", &r.series, &cfg.run.checkpoints);
        }
        if let Some(t) = &p.traj {
            snapshot_line(&mut out, "traj final", &t.final_state);
            let _ = writeln!(
                out,
                "  trajectories {}, jumps {}, composite dim {}, top photon population {:.2e} ({})",
                t.n_traj,
                t.jumps,
                t.composite_dim,
                t.max_top_population,
                if t.truncation_ok { "truncation ok" } else { "truncation flagged" }
            );
            checkpoints(&mut out, "traj", &t.series, &cfg.run.checkpoints);
        }
    }

    if report.is_flux_scan() && report.points.len() >= 3 {
        let _ = writeln!(out);
        let _ = writeln!(out, "bulk density slope d rho / d(phi/2pi), least squares");
        for q in Quantity::ALL {
            let Ok(scan) = report.flux_scan(q) else { continue };
            match streda_slope(&scan, SlopeMethod::LeastSquares) {
                Ok(fit) => {
                    let _ = writeln!(out, "  {:<13} {:.4} +- {:.4}", q.label(), fit.slope, fit.slope_stderr());
                }
                Err(e) => {
                    let _ = writeln!(out, "  {:<13} {e}", q.label());
                }
            }
        }
    }
    if report.is_pin_scan() {
        let _ = writeln!(out);
        let _ = writeln!(out, "bulk charge change Q(V) - Q(0)");
        for q in Quantity::ALL {
            let Ok(rows) = report.charge_response(q) else { continue };
            let cells: Vec<String> = rows.iter().map(|(v, e)| format!("{v}:{:+.3}", e.value)).collect();
            let _ = writeln!(out, "  {:<13} {}", q.label(), cells.join(" "));
        }
    }
    out
}

fn checkpoints(out: &mut String, name: &str, series: &Series, times: &[f64]) {
    for &t in times {
        if let Some(i) = series.index_of(t) {
            let f = series.fidelity[i];
            let _ = writeln!(out, "  {name} t = {t}: fidelity {:.4} +- {:.4}", f.value, f.stderr);
        }
    }
}
