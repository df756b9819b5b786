//! Floquet dressing and reservoir coefficients.
//!
//! Site `(m, n)` is driven with `hbar dtheta/dt = m hbar omega + lambda sin(omega t - phi (m + n))`.
//! With `tau = omega t`, `A = lambda / hbar omega` and `theta(0) = 0` this integrates to
//! `theta(tau) = m tau + A [cos(c) - cos(tau - c)]`, `c = phi (m + n)`.
//! Bond amplitudes are period averages of `J exp(i (theta_l - theta_l'))`.

use std::f64::consts::PI;
use std::fmt;

use log::warn;

use crate::error::{Error, Result};
use crate::lattice::{Bond, BondKind, LatticeGeometry};
use crate::linalg::C64;
use crate::spectra::{Spectrum, TransitionTable};
use crate::special::bessel_j_upto;

/// Amplitude rule `lambda / hbar omega = CALIBRATION / sin(phi / 2)`.
pub const CALIBRATION: f64 = 0.72;

#[derive(Clone, Debug, PartialEq)]
pub struct DriveSpec {
    hbar_omega: f64,
    lambda: f64,
    flux: f64,
}

impl DriveSpec {
    pub fn new(hbar_omega: f64, lambda: f64, flux: f64) -> Result<Self> {
        if !(hbar_omega > 0.0 && hbar_omega.is_finite()) {
            return Err(Error::domain(format!("drive quantum must be positive, got {hbar_omega}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("drive amplitude must be >= 0, got {lambda}")));
        }
        if !flux.is_finite() {
            return Err(Error::domain("flux must be finite"));
        }
        if hbar_omega < 10.0 {
            warn!("drive quantum {hbar_omega} J is below 10 J; the period average may be poor");
        }
        Ok(DriveSpec { hbar_omega, lambda, flux })
    }

    pub fn hbar_omega(&self) -> f64 {
        self.hbar_omega
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn flux(&self) -> f64 {
        self.flux
    }

    /// `lambda / hbar omega`.
    pub fn ratio(&self) -> f64 {
        self.lambda / self.hbar_omega
    }

    /// Phase `theta` of site `(m, n)` at reduced time `tau = omega t`.
    pub fn phase(&self, m: usize, n: usize, tau: f64) -> f64 {
        let c = self.flux * (m + n) as f64;
        m as f64 * tau + self.ratio() * (c.cos() - (tau - c).cos())
    }
}

/// Drive amplitude that keeps the effective hopping near `0.55 J` at flux `phi`.
pub fn calibrate_drive(flux: f64, hbar_omega: f64) -> Result<DriveSpec> {
    if !(flux > 0.0 && flux < 2.0 * PI) {
        return Err(Error::domain(format!("flux must lie in (0, 2 pi), got {flux}")));
    }
    let s = (flux / 2.0).sin();
    DriveSpec::new(hbar_omega, CALIBRATION * hbar_omega / s, flux)
}

/// Period average of `J exp(i (theta_l - theta_l'))` for neighbouring sites `l`, `l'`.
///
/// This is the amplitude `t` of `-t a+_l a_l'`.
pub fn period_averaged_bond(drive: &DriveSpec, geom: &LatticeGeometry, l: usize, lp: usize, j: f64) -> Result<C64> {
    let n_sites = geom.num_sites();
    if l >= n_sites || lp >= n_sites {
        return Err(Error::domain(format!("bond ({l}, {lp}) outside the lattice")));
    }
    let (m1, n1) = geom.coords(l);
    let (m2, n2) = geom.coords(lp);
    if m1.abs_diff(m2) + n1.abs_diff(n2) != 1 {
        return Err(Error::domain(format!("sites {l} and {lp} are not nearest neighbours")));
    }
    let f = |tau: f64| C64::from_polar(j, drive.phase(m1, n1, tau) - drive.phase(m2, n2, tau));
    let mut samples = 256usize;
    let mut prev = trapezoid(&f, samples);
    loop {
        samples *= 2;
        let next = trapezoid(&f, samples);
        if (next - prev).norm() <= 1e-10 * j.abs() || samples >= 1 << 20 {
            return Ok(next);
        }
        prev = next;
    }
}

fn trapezoid(f: &impl Fn(f64) -> C64, samples: usize) -> C64 {
    let h = 2.0 * PI / samples as f64;
    let sum: C64 = (0..samples).map(|i| f(i as f64 * h)).sum();
    sum / samples as f64
}

/// Period-averaged amplitudes for every bond, in the orientation of [`LatticeGeometry::bonds`].
pub fn effective_hoppings(drive: &DriveSpec, geom: &LatticeGeometry, j: f64) -> Result<Vec<(Bond, C64)>> {
    geom.bonds()
        .into_iter()
        .map(|b| Ok((b, period_averaged_bond(drive, geom, b.from, b.to, j)?)))
        .collect()
}

/// Closed-form bond magnitudes: `J |J_0(x)|` on y-bonds and `J |J_1(x)|` on
/// x-bonds with `x = 2 A sin(phi/2)`.
pub fn bessel_hopping(drive: &DriveSpec, kind: BondKind, j: f64) -> f64 {
    let x = 2.0 * drive.ratio() * (drive.flux / 2.0).sin();
    let b = bessel_j_upto(1, x);
    match kind {
        BondKind::Y => j * b[0].abs(),
        BondKind::X => j * b[1].abs(),
    }
}

/// Dressed dispersive shift `sum_mu 2 g^2 J_mu(A)^2 / (delta - mu hbar omega)`.
///
/// The harmonic cutoff starts at `m_max` and grows until the outermost pair of
/// terms is below `1e-12` of the sum.
pub fn chi_coupling(g: f64, delta: f64, drive: &DriveSpec, m_max: usize) -> Result<f64> {
    if !g.is_finite() || !delta.is_finite() {
        return Err(Error::domain("coupling and detuning must be finite"));
    }
    if g == 0.0 {
        return Ok(0.0);
    }
    let w = drive.hbar_omega;
    let a = drive.ratio();
    let guard = 1e-6 * w;
    let term = |mu: i64, jm: f64| -> Result<f64> {
        let gap = delta - mu as f64 * w;
        if gap.abs() < guard {
            return Err(Error::FloquetResonance { mu, gap });
        }
        Ok(2.0 * g * g * jm * jm / gap)
    };
    let mut cutoff = m_max.max(1);
    loop {
        let bessel = bessel_j_upto(cutoff, a);
        let mut sum = term(0, bessel[0])?;
        let mut ring = 0.0;
        for mu in 1..=cutoff {
            let pair = term(mu as i64, bessel[mu])? + term(-(mu as i64), bessel[mu])?;
            sum += pair;
            ring = pair;
        }
        if ring.abs() <= 1e-12 * sum.abs() || sum == 0.0 {
            return Ok(sum);
        }
        if cutoff > 4096 {
            return Err(Error::NoConvergence {
                iterations: cutoff,
                best_residual: (ring / sum).abs(),
            });
        }
        cutoff *= 2;
    }
}

/// Coherent amplitude `-E / (d - i kappa / 2)` of the pumped cavity.
pub fn cavity_displacement(pump: f64, detuning: f64, kappa: f64) -> Result<C64> {
    if !(pump.is_finite() && detuning.is_finite() && kappa.is_finite()) {
        return Err(Error::domain("cavity parameters must be finite"));
    }
    if kappa < 0.0 {
        return Err(Error::domain(format!("decay rate must be >= 0, got {kappa}")));
    }
    if detuning == 0.0 && kappa == 0.0 {
        return Err(Error::domain("pump detuning and decay rate cannot both vanish"));
    }
    Ok(-C64::new(pump, 0.0) / C64::new(detuning, -kappa / 2.0))
}

/// Physical parameters of one pumped cavity, energies in J.
#[derive(Clone, Debug, PartialEq)]
pub struct CavitySpec {
    pub site: usize,
    pub g: f64,
    /// Atom-cavity detuning.
    pub delta: f64,
    pub pump: f64,
    pub kappa: f64,
    /// Pump detuning `d`.
    pub detuning: f64,
}

impl CavitySpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("g", self.g),
            ("delta", self.delta),
            ("pump", self.pump),
            ("kappa", self.kappa),
            ("d", self.detuning),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::validation(name, format!("cavity at site {} has a non-finite value", self.site)));
            }
        }
        if self.kappa <= 0.0 {
            return Err(Error::validation("kappa", format!("must be positive at site {}", self.site)));
        }
        if self.delta <= 0.0 {
            return Err(Error::validation("delta", format!("must be positive at site {}", self.site)));
        }
        Ok(())
    }

    /// Derives `chi` and `alpha` for the given drive.
    pub fn resolve(&self, drive: &DriveSpec) -> Result<Cavity> {
        self.validate()?;
        let chi = chi_coupling(self.g, self.delta, drive, 8)?;
        let alpha = cavity_displacement(self.pump, self.detuning, self.kappa)?;
        Ok(Cavity {
            site: self.site,
            chi,
            alpha,
            kappa: self.kappa,
            detuning: self.detuning,
        })
    }
}

/// Cavity reduced to the coefficients entering the effective dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct Cavity {
    pub site: usize,
    pub chi: f64,
    pub alpha: C64,
    pub kappa: f64,
    pub detuning: f64,
}

impl Cavity {
    pub fn new(site: usize, chi: f64, alpha: C64, kappa: f64, detuning: f64) -> Result<Self> {
        if !(chi.is_finite() && alpha.re.is_finite() && alpha.im.is_finite() && detuning.is_finite()) {
            return Err(Error::domain("cavity coefficients must be finite"));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::domain(format!("decay rate must be >= 0, got {kappa}")));
        }
        Ok(Cavity { site, chi, alpha, kappa, detuning })
    }
}

/// Resolves a list of cavity specs against one drive.
pub fn resolve_all(specs: &[CavitySpec], drive: &DriveSpec) -> Result<Vec<Cavity>> {
    specs
        .iter()
        .map(|c| c.resolve(drive).map_err(|e| e.context(format!("cavity at site {}", c.site))))
        .collect()
}

pub const WARN_RATIO: f64 = 3.0;
pub const FAIL_RATIO: f64 = 1.0;
/// Distance (in J) from a Floquet resonance that raises a flag.
pub const RESONANCE_PROXIMITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Ok,
    Warning,
    Violation,
}

impl Severity {
    fn of(ratio: Option<f64>) -> Severity {
        match ratio {
            Some(r) if r < FAIL_RATIO => Severity::Violation,
            Some(r) if r < WARN_RATIO => Severity::Warning,
            _ => Severity::Ok,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Ok => "ok",
            Severity::Warning => "warning",
            Severity::Violation => "violation",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CavityRegime {
    pub site: usize,
    /// `min_mu |delta - mu hbar omega| / (g |J_mu(A)|)`; `None` without coupling.
    pub dispersive_margin: Option<f64>,
    /// Targeted transition `(from, to)` closest to `e_from - e_to = d`.
    pub transition: (usize, usize),
    pub mismatch: f64,
    /// `|e_from - e_to| / kappa`.
    pub gap_ratio: f64,
    /// `kappa / |alpha chi M|`; `None` when the product vanishes.
    pub coupling_ratio: Option<f64>,
    /// `min_mu |mu hbar omega - delta|` in J.
    pub resonance_distance: f64,
    pub floquet_flag: bool,
    pub severity: Severity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeReport {
    pub cavities: Vec<CavityRegime>,
}

impl RegimeReport {
    pub fn worst(&self) -> Severity {
        self.cavities.iter().map(|c| c.severity).max().unwrap_or(Severity::Ok)
    }

    pub fn has_violation(&self) -> bool {
        self.worst() == Severity::Violation
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "site",
            "dispersive_margin",
            "from",
            "to",
            "mismatch",
            "gap_over_kappa",
            "kappa_over_coupling",
            "resonance_distance",
            "floquet_flag",
            "severity",
        ])?;
        let opt = |x: Option<f64>| x.map_or_else(|| "inf".to_string(), |v| format!("{v:.10e}"));
        for c in &self.cavities {
            out.write_record([
                c.site.to_string(),
                opt(c.dispersive_margin),
                c.transition.0.to_string(),
                c.transition.1.to_string(),
                format!("{:.10e}", c.mismatch),
                format!("{:.10e}", c.gap_ratio),
                opt(c.coupling_ratio),
                format!("{:.10e}", c.resonance_distance),
                c.floquet_flag.to_string(),
                c.severity.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for RegimeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "regime diagnostics (warn < {WARN_RATIO}, fail < {FAIL_RATIO})")?;
        for c in &self.cavities {
            let margin = c.dispersive_margin.map_or("inf".into(), |m| format!("{m:.3}"));
            let coupling = c.coupling_ratio.map_or("inf".into(), |m| format!("{m:.3}"));
            writeln!(
                f,
                "  site {:>2}: {} -> {} mismatch {:.4} J, gap/kappa {:.3}, kappa/|a chi M| {}, dispersive {}, floquet distance {:.3} J{} [{}]",
                c.site,
                c.transition.0,
                c.transition.1,
                c.mismatch,
                c.gap_ratio,
                coupling,
                margin,
                c.resonance_distance,
                if c.floquet_flag { " (near resonance)" } else { "" },
                c.severity
            )?;
        }
        Ok(())
    }
}

/// Checks the dispersive and bad-cavity hierarchies for every cavity.
pub fn regime_report(
    cavities: &[CavitySpec],
    drive: &DriveSpec,
    spec: &Spectrum,
    table: &TransitionTable,
) -> Result<RegimeReport> {
    if spec.len() < 2 {
        return Err(Error::domain("regime report needs at least two eigenstates"));
    }
    let a = drive.ratio();
    let w = drive.hbar_omega;
    let span = (a.ceil() as usize + 20).max((cavities.iter().map(|c| c.delta).fold(0.0, f64::max) / w).ceil() as usize + 2);
    let bessel = bessel_j_upto(span, a);
    let mut out = Vec::with_capacity(cavities.len());
    for spec_c in cavities {
        let cav = spec_c.resolve(drive)?;
        let m = table
            .for_site(spec_c.site)
            .ok_or_else(|| Error::domain(format!("no transition elements for site {}", spec_c.site)))?;

        let mut margin: Option<f64> = None;
        let mut distance = f64::INFINITY;
        for mu in -(span as i64)..=(span as i64) {
            let gap = (spec_c.delta - mu as f64 * w).abs();
            distance = distance.min(gap);
            let c = spec_c.g * bessel[mu.unsigned_abs() as usize].abs();
            if c > 0.0 {
                let r = gap / c;
                margin = Some(margin.map_or(r, |x: f64| x.min(r)));
            }
        }

        let e = spec.values();
        let mut best = (0usize, 1usize);
        let mut best_key = (f64::INFINITY, 0.0);
        for from in 0..spec.len() {
            for to in 0..spec.len() {
                if from == to {
                    continue;
                }
                let mismatch = (e[from] - e[to] - cav.detuning).abs();
                let weight = m[(to, from)].norm();
                let better = mismatch < best_key.0 - 1e-12
                    || ((mismatch - best_key.0).abs() <= 1e-12 && weight > best_key.1);
                if better {
                    best = (from, to);
                    best_key = (mismatch, weight);
                }
            }
        }
        let gap_ratio = (e[best.0] - e[best.1]).abs() / cav.kappa;
        let coupling = (cav.alpha * cav.chi).norm() * best_key.1;
        let coupling_ratio = (coupling > 0.0).then(|| cav.kappa / coupling);
        let floquet_flag = distance < RESONANCE_PROXIMITY;
        let severity = [
            Severity::of(Some(gap_ratio)),
            Severity::of(coupling_ratio),
            Severity::of(margin),
            if floquet_flag { Severity::Warning } else { Severity::Ok },
        ]
        .into_iter()
        .max()
        .unwrap_or(Severity::Ok);
        out.push(CavityRegime {
            site: spec_c.site,
            dispersive_margin: margin,
            transition: best,
            mismatch: best_key.0,
            gap_ratio,
            coupling_ratio,
            resonance_distance: distance,
            floquet_flag,
            severity,
        });
    }
    Ok(RegimeReport { cavities: out })
}
