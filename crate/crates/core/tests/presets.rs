use std::collections::BTreeMap;

use fci_core::experiment::{
    emit_report, preset, preset_names, preset_source, run_scenario, write_scan_csv, write_timeseries_csv, CavityTable,
    ScenarioConfig, Series,
};
use fci_core::Error;
use sha2::{Digest, Sha256};

const FIXTURE: &str = include_str!("fixtures/cavity_tables.csv");
const FIXTURE_SHA256: &str = "9c08e2110f0379e80905810f717765e3eb78aeb950a8d1e0954d0a50f6db78a7";

#[test]
fn fixture_is_unchanged() {
    assert_eq!(hex::encode(Sha256::digest(FIXTURE.as_bytes())), FIXTURE_SHA256);
}

fn selector_matches(t: &CavityTable, selector: &str, scale: f64) -> bool {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let Some((key, vals)) = selector.split_once('=') else {
        return selector == "all" && t.phi_from.is_none() && t.phi_below.is_none() && t.pin.is_empty() && t.pin_range.is_none();
    };
    let v: Vec<f64> = vals.split(' ').map(|x| x.parse::<f64>().unwrap() * scale).collect();
    match key {
        "phi_below" => t.phi_below.is_some_and(|x| close(x, v[0] / scale)),
        "phi_from" => t.phi_from.is_some_and(|x| close(x, v[0] / scale)),
        "pin" => t.pin.len() == v.len() && t.pin.iter().zip(&v).all(|(a, b)| close(*a, *b)),
        "pin_range" => t.pin_range.is_some_and(|r| close(r[0], v[0]) && close(r[1], v[1])),
        other => panic!("unknown selector {other}"),
    }
}

#[test]
fn presets_reproduce_the_tabulated_cavities() {
    let mut groups: BTreeMap<(String, String), Vec<csv::StringRecord>> = BTreeMap::new();
    for rec in csv::Reader::from_reader(FIXTURE.as_bytes()).records() {
        let rec = rec.unwrap();
        groups.entry((rec[0].to_string(), rec[1].to_string())).or_default().push(rec);
    }
    let mut tables_seen = 0;
    for ((name, selector), rows) in &groups {
        let cfg = preset(name).unwrap();
        let units = if &rows[0][2] == "J_eff" { cfg.lattice.j_eff } else { 1.0 };
        // pin selectors follow the dip units of the preset
        let pin_scale = if name == "fig2b" { cfg.lattice.j_eff } else { 1.0 };
        let table = cfg
            .table
            .iter()
            .find(|t| selector_matches(t, selector, pin_scale))
            .unwrap_or_else(|| panic!("{name}: no table for {selector}"));
        tables_seen += 1;
        assert_eq!(table.cavity.len(), rows.len(), "{name} {selector}");
        for (c, r) in table.cavity.iter().zip(rows) {
            let f = |i: usize| r[i].parse::<f64>().unwrap();
            assert_eq!(c.site, r[3].parse::<usize>().unwrap());
            let pairs = [
                (c.g, f(4) * units),
                (c.delta, f(5) * cfg.drive.hbar_omega),
                (c.pump, f(6) * units),
                (c.kappa, f(7) * units),
                (c.d, f(8) * units),
            ];
            for (got, want) in pairs {
                assert!((got - want).abs() < 1e-12, "{name} {selector} site {}: {got} vs {want}", c.site);
            }
        }
    }
    let total: usize = preset_names().map(|n| preset(n).unwrap().table.len()).sum();
    assert_eq!(tables_seen, total);
}

#[test]
fn missing_lattice_size_is_reported_by_field() {
    let src = preset_source("fig1a").unwrap().replace("size = 4\n", "");
    match ScenarioConfig::from_toml(&src) {
        Err(Error::Validation { field, .. }) => assert_eq!(field, "lattice.size"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn j_eff_tables_are_converted_once() {
    let cfg = preset("fig2b").unwrap();
    let again = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    let row = &cfg.table[0].cavity[0];
    let again_row = &again.table[0].cavity[0];
    assert_eq!(row.kappa, again_row.kappa);
}

#[test]
fn empty_series_writes_only_the_header() {
    let mut buf = Vec::new();
    write_timeseries_csv(&Series::default(), &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "t_hbar_over_J,fidelity,fidelity_stderr,bulk_density\n");
    let mut buf = Vec::new();
    write_scan_csv(&[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "abscissa,value,stderr\n");
}

fn quick(name: &str) -> ScenarioConfig {
    let mut cfg = preset(name).unwrap();
    cfg.run.grid = 8;
    cfg.run.t_final = Some(400.0);
    cfg.run.checkpoints = vec![200.0];
    cfg
}

#[test]
fn runs_are_reproducible() {
    let cfg = quick("fig1b");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&run_scenario(&cfg).unwrap(), a.path()).unwrap();
    emit_report(&run_scenario(&cfg).unwrap(), b.path()).unwrap();
    for file in ["timeseries_rates.csv", "regime.csv", "config.toml"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn flux_scan_has_one_row_per_flux() {
    let cfg = quick("fig1c");
    let dir = tempfile::tempdir().unwrap();
    emit_report(&run_scenario(&cfg).unwrap(), dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("scan_bulk_density_ground.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), cfg.lattice.phi_scan.len());
    let first: Vec<f64> = rows[0].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((first[0] - 0.25).abs() < 1e-12);
}

#[test]
fn data_only_scenario_is_refused() {
    let cfg = preset("fig2b").unwrap();
    assert!(cfg.unsupported.is_some());
    assert!(matches!(run_scenario(&cfg), Err(Error::Config(_))));
}
