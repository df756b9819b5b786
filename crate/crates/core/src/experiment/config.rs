//! Scenario files.
//!
//! Energies are in J, times in hbar/J and rates in J/hbar once a config is
//! loaded; tables given in units of `J_eff` or `hbar_omega` are converted
//! exactly once by [`ScenarioConfig::from_toml`].

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::observables::BulkKind;
use crate::reservoir::CavitySpec;

/// Tolerance when matching scan values against table selectors.
const SELECT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Traj,
    #[default]
    Rates,
    Both,
}

impl Solver {
    pub fn rates(self) -> bool {
        matches!(self, Solver::Rates | Solver::Both)
    }

    pub fn trajectories(self) -> bool {
        matches!(self, Solver::Traj | Solver::Both)
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traj" => Ok(Solver::Traj),
            "rates" => Ok(Solver::Rates),
            "both" => Ok(Solver::Both),
            _ => Err(Error::validation("solver", format!("expected traj, rates or both, got `{s}`"))),
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Traj => "traj",
            Solver::Rates => "rates",
            Solver::Both => "both",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyUnit {
    #[default]
    J,
    #[serde(rename = "J_eff")]
    JEff,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaUnit {
    #[default]
    #[serde(rename = "hbar_omega")]
    HbarOmega,
    J,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    /// Maximally mixed lattice sector.
    #[default]
    InfiniteTemperature,
    /// Equal mixture of the lowest eigenstates.
    Lowest(usize),
    Ground,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BulkChoice {
    #[default]
    Default,
    Literal,
}

impl BulkChoice {
    pub fn kind(self) -> BulkKind {
        match self {
            BulkChoice::Default => BulkKind::Inner,
            BulkChoice::Literal => BulkKind::Literal,
        }
    }
}

impl std::str::FromStr for BulkChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(BulkChoice::Default),
            "literal" => Ok(BulkChoice::Literal),
            _ => Err(Error::validation("bulk", format!("expected default or literal, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Linear size L.
    pub size: Option<usize>,
    pub particles: Option<usize>,
    /// Flux per plaquette in units of 2pi.
    pub phi_over_2pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phi_scan: Vec<f64>,
    #[serde(default = "default_j_eff")]
    pub j_eff: f64,
    /// Depth V of the central pinning dip.
    #[serde(default)]
    pub pin_depth: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pin_scan: Vec<f64>,
    /// Unit of `pin_depth`, `pin_scan` and the table `pin` selectors.
    #[serde(default)]
    pub pin_units: EnergyUnit,
}

fn default_j_eff() -> f64 {
    0.55
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    #[serde(default = "default_hbar_omega")]
    pub hbar_omega: f64,
    /// Drive amplitude over hbar omega; calibrated from the flux when absent.
    pub lambda_ratio: Option<f64>,
}

fn default_hbar_omega() -> f64 {
    20.0
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig { hbar_omega: default_hbar_omega(), lambda_ratio: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityRow {
    pub site: usize,
    pub g: f64,
    pub delta: f64,
    pub pump: f64,
    pub kappa: f64,
    pub d: f64,
}

/// Cavity parameters valid for the scan points its selectors match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityTable {
    /// Applies when `phi / 2pi >= phi_from`.
    pub phi_from: Option<f64>,
    /// Applies when `phi / 2pi < phi_below`.
    pub phi_below: Option<f64>,
    /// Applies at these dip depths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pin: Vec<f64>,
    /// Applies for dip depths inside the closed interval.
    pub pin_range: Option<[f64; 2]>,
    /// Unit of `g`, `pump`, `kappa` and `d`.
    #[serde(default)]
    pub units: EnergyUnit,
    #[serde(default)]
    pub delta_units: DeltaUnit,
    pub cavity: Vec<CavityRow>,
}

impl CavityTable {
    fn matches(&self, phi_frac: f64, pin: f64) -> bool {
        self.phi_from.is_none_or(|f| phi_frac >= f - SELECT_TOL)
            && self.phi_below.is_none_or(|b| phi_frac < b - SELECT_TOL)
            && (self.pin.is_empty() || self.pin.iter().any(|v| (v - pin).abs() <= SELECT_TOL))
            && self
                .pin_range
                .is_none_or(|[lo, hi]| pin >= lo - SELECT_TOL && pin <= hi + SELECT_TOL)
    }

    pub fn specs(&self) -> Vec<CavitySpec> {
        self.cavity
            .iter()
            .map(|r| CavitySpec { site: r.site, g: r.g, delta: r.delta, pump: r.pump, kappa: r.kappa, detuning: r.d })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub t_final: Option<f64>,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
    /// Retained eigenstates; zero keeps the whole sector.
    #[serde(default)]
    pub eigenstates: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Output time points including t = 0.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub initial: Initial,
    /// Replicate cavities under 90 degree rotations.
    #[serde(default)]
    pub symmetrize: bool,
    #[serde(default)]
    pub bulk: BulkChoice,
    /// Times reported in the summary.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    pub output: Option<PathBuf>,
    /// Directory for cached spectra.
    pub cache: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_final: None,
            trajectories: default_trajectories(),
            seed: 0,
            eigenstates: 0,
            n_max: default_n_max(),
            grid: default_grid(),
            initial: Initial::default(),
            symmetrize: false,
            bulk: BulkChoice::default(),
            checkpoints: Vec::new(),
            rtol: default_rtol(),
            output: None,
            cache: None,
        }
    }
}

fn default_trajectories() -> usize {
    crate::lindblad::trajectories::DEFAULT_TRAJECTORIES
}

fn default_n_max() -> usize {
    2
}

fn default_grid() -> usize {
    crate::lindblad::trajectories::DEFAULT_GRID
}

fn default_rtol() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    #[serde(default)]
    pub description: String,
    /// Set for parameter sets kept as data only; running them is refused.
    pub unsupported: Option<String>,
    #[serde(default)]
    pub solver: Solver,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub drive: DriveConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub table: Vec<CavityTable>,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    ScenarioConfig::from_toml(&text).map_err(|e| e.context(format!("in {}", path.display())))
}

impl ScenarioConfig {
    /// Parses, converts units and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex sha256 of the normalized config.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    fn normalize(&mut self) {
        let j_eff = self.lattice.j_eff;
        if self.lattice.pin_units == EnergyUnit::JEff {
            self.lattice.pin_depth *= j_eff;
            self.lattice.pin_scan.iter_mut().for_each(|v| *v *= j_eff);
            for t in &mut self.table {
                t.pin.iter_mut().for_each(|v| *v *= j_eff);
                if let Some(r) = &mut t.pin_range {
                    r.iter_mut().for_each(|v| *v *= j_eff);
                }
            }
            self.lattice.pin_units = EnergyUnit::J;
        }
        let w = self.drive.hbar_omega;
        for t in &mut self.table {
            if t.units == EnergyUnit::JEff {
                for c in &mut t.cavity {
                    c.g *= j_eff;
                    c.pump *= j_eff;
                    c.kappa *= j_eff;
                    c.d *= j_eff;
                }
                t.units = EnergyUnit::J;
            }
            if t.delta_units == DeltaUnit::HbarOmega {
                t.cavity.iter_mut().for_each(|c| c.delta *= w);
                t.delta_units = DeltaUnit::J;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::validation(field, reason));
        if self.scenario.trim().is_empty() {
            return bad("scenario", "must not be empty".into());
        }
        let l = match self.lattice.size {
            None => return bad("lattice.size", "missing".into()),
            Some(l) if !(1..=8).contains(&l) => return bad("lattice.size", format!("must be in 1..=8, got {l}")),
            Some(l) => l,
        };
        match self.lattice.particles {
            None => return bad("lattice.particles", "missing".into()),
            Some(n) if n > l * l => return bad("lattice.particles", format!("{n} exceeds {} sites", l * l)),
            _ => {}
        }
        match (self.lattice.phi_over_2pi, self.lattice.phi_scan.is_empty()) {
            (None, true) => return bad("lattice.phi_over_2pi", "missing (or give phi_scan)".into()),
            (Some(_), false) => return bad("lattice.phi_scan", "give either phi_over_2pi or phi_scan".into()),
            _ => {}
        }
        for &f in self.flux_points().iter() {
            if !(f > 0.0 && f < 1.0) {
                return bad("lattice.phi_over_2pi", format!("must lie in (0, 1), got {f}"));
            }
        }
        if self.lattice.phi_scan.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("lattice.phi_scan", "must be strictly increasing".into());
        }
        if !self.lattice.phi_scan.is_empty() && !self.lattice.pin_scan.is_empty() {
            return bad("lattice.pin_scan", "cannot scan flux and pinning depth together".into());
        }
        if self.lattice.pin_scan.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("lattice.pin_scan", "must be strictly increasing".into());
        }
        if self.pin_points().iter().any(|v| !v.is_finite()) {
            return bad("lattice.pin_depth", "must be finite".into());
        }
        if !(self.lattice.j_eff > 0.0 && self.lattice.j_eff.is_finite()) {
            return bad("lattice.j_eff", format!("must be positive, got {}", self.lattice.j_eff));
        }
        if !(self.drive.hbar_omega > 0.0 && self.drive.hbar_omega.is_finite()) {
            return bad("drive.hbar_omega", format!("must be positive, got {}", self.drive.hbar_omega));
        }
        if let Some(r) = self.drive.lambda_ratio {
            if !(r >= 0.0 && r.is_finite()) {
                return bad("drive.lambda_ratio", format!("must be >= 0, got {r}"));
            }
        }
        let run = &self.run;
        let t_final = match run.t_final {
            None => return bad("run.t_final", "missing".into()),
            Some(t) if !(t > 0.0 && t.is_finite()) => return bad("run.t_final", format!("must be positive, got {t}")),
            Some(t) => t,
        };
        if run.trajectories == 0 {
            return bad("run.trajectories", "must be at least 1".into());
        }
        if run.n_max == 0 {
            return bad("run.n_max", "must be at least 1".into());
        }
        if run.grid < 2 {
            return bad("run.grid", "needs at least 2 points".into());
        }
        if !(run.rtol > 0.0 && run.rtol < 1e-2) {
            return bad("run.rtol", format!("must lie in (0, 1e-2), got {}", run.rtol));
        }
        if let Some(&c) = run.checkpoints.iter().find(|&&c| !(0.0..=t_final).contains(&c)) {
            return bad("run.checkpoints", format!("{c} outside [0, t_final]"));
        }
        if let Initial::Lowest(0) = run.initial {
            return bad("run.initial", "lowest needs at least one state".into());
        }
        for (i, t) in self.table.iter().enumerate() {
            if t.cavity.is_empty() {
                return bad(&format!("table[{i}].cavity"), "must list at least one cavity".into());
            }
            for c in &t.cavity {
                let field = |name: &str| format!("table[{i}].cavity.{name}");
                if c.site >= l * l {
                    return bad(&field("site"), format!("site {} outside the {l}x{l} lattice", c.site));
                }
                for (name, v) in [("g", c.g), ("delta", c.delta), ("pump", c.pump), ("kappa", c.kappa), ("d", c.d)] {
                    if !v.is_finite() {
                        return bad(&field(name), format!("non-finite value at site {}", c.site));
                    }
                }
                if c.kappa <= 0.0 {
                    return bad(&field("kappa"), format!("must be positive at site {}", c.site));
                }
                if c.delta <= 0.0 {
                    return bad(&field("delta"), format!("must be positive at site {}", c.site));
                }
            }
        }
        if self.unsupported.is_some() {
            return Ok(());
        }
        if self.table.is_empty() {
            return bad("table", "no cavity table given".into());
        }
        for &f in &self.flux_points() {
            for &v in &self.pin_points() {
                self.table_for(f, v)?;
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.lattice.size.unwrap_or(0)
    }

    pub fn particles(&self) -> usize {
        self.lattice.particles.unwrap_or(0)
    }

    pub fn t_final(&self) -> f64 {
        self.run.t_final.unwrap_or(0.0)
    }

    /// Flux values in units of 2pi.
    pub fn flux_points(&self) -> Vec<f64> {
        match self.lattice.phi_over_2pi {
            Some(f) => vec![f],
            None => self.lattice.phi_scan.clone(),
        }
    }

    /// Dip depths in J.
    pub fn pin_points(&self) -> Vec<f64> {
        if self.lattice.pin_scan.is_empty() {
            vec![self.lattice.pin_depth]
        } else {
            self.lattice.pin_scan.clone()
        }
    }

    /// The unique table matching a scan point.
    pub fn table_for(&self, phi_frac: f64, pin: f64) -> Result<&CavityTable> {
        let mut hits = self.table.iter().filter(|t| t.matches(phi_frac, pin));
        match (hits.next(), hits.next()) {
            (Some(t), None) => Ok(t),
            (None, _) => Err(Error::validation("table", format!("no table matches phi/2pi = {phi_frac}, V = {pin}"))),
            (Some(_), Some(_)) => Err(Error::validation(
                "table",
                format!("several tables match phi/2pi = {phi_frac}, V = {pin}"),
            )),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.run.output.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.scenario))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scenario = "t"
[lattice]
size = 4
particles = 2
phi_over_2pi = 0.25
[run]
t_final = 10.0
[[table]]
cavity = [{ site = 1, g = 0.8, delta = 1.9, pump = 0.4, kappa = 0.04, d = 0.13 }]
"#;

    #[test]
    fn defaults_and_units() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.solver, Solver::Rates);
        assert_eq!(c.run.trajectories, 200);
        assert_eq!(c.table[0].cavity[0].delta, 38.0);
        assert_eq!(c.table[0].delta_units, DeltaUnit::J);
        // normalizing again is a no-op
        let again = ScenarioConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn j_eff_tables_convert() {
        let text = MINIMAL.replace("[[table]]", "[[table]]\nunits = \"J_eff\"");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        let row = &c.table[0].cavity[0];
        assert!((row.d - 0.13 * 0.55).abs() < 1e-15);
        assert!((row.kappa - 0.04 * 0.55).abs() < 1e-15);
    }

    #[test]
    fn missing_size_names_field() {
        let text = MINIMAL.replace("size = 4\n", "");
        match ScenarioConfig::from_toml(&text) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "lattice.size"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let text = MINIMAL.replace("particles = 2", "particles = 2\nflux = 1");
        match ScenarioConfig::from_toml(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains("line") && msg.contains("flux"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_selection() {
        let branch = "[[table]]\nphi_below = 0.275\n";
        let other = "\n[[table]]\nphi_from = 0.275\ncavity = [{ site = 2, g = 0.8, delta = 1.9, pump = 0.4, kappa = 0.03, d = 0.1 }]\n";
        let text = MINIMAL.replace("phi_over_2pi = 0.25", "phi_scan = [0.25, 0.3]").replace("[[table]]\n", branch) + other;
        let c = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(c.table_for(0.25, 0.0).unwrap().cavity[0].site, 1);
        assert_eq!(c.table_for(0.275, 0.0).unwrap().cavity[0].site, 2);
        // a selector-free table collides with both branches
        let clash = text + "\n[[table]]\ncavity = [{ site = 3, g = 0.8, delta = 1.9, pump = 0.4, kappa = 0.03, d = 0.1 }]\n";
        match ScenarioConfig::from_toml(&clash) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "table"),
            other => panic!("{other:?}"),
        }
    }
}
