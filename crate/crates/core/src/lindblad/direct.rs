//! Dense integration of the master equation
//!
//! ```text
//! drho/dt = -i [H, rho] + sum_j kappa_j (c_j rho c+_j - {c+_j c_j, rho} / 2)
//! ```
//!
//! for small composites. Used as a reference for the trajectory and rate solvers.

use nalgebra::DMatrix;

use super::dopri::{rescale, Tolerance, Workspace};
use super::{CompositeSpace, Drift, EffectiveHamiltonian, JumpOperator};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigh, C64};

/// Largest composite dimension accepted by the dense solver.
pub const DIRECT_CAP: usize = 300;
/// Trace, Hermiticity and positivity tolerance.
pub const STATE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct DensityEvolution {
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<C64>>,
}

/// `|psi><psi|`.
pub fn pure_density(psi: &[C64]) -> DMatrix<C64> {
    let n = psi.len();
    DMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj())
}

/// Partial trace over the cavities.
pub fn reduced_lattice(rho: &DMatrix<C64>, space: &CompositeSpace) -> DMatrix<C64> {
    let block = space.block();
    let n = space.lattice_dim();
    DMatrix::from_fn(n, n, |a, b| (0..block).map(|c| rho[(a * block + c, b * block + c)]).sum())
}

/// Mean photon number of cavity `j`.
pub fn photon_number(rho: &DMatrix<C64>, h: &EffectiveHamiltonian, j: usize) -> f64 {
    let block = h.space().block();
    (0..rho.nrows())
        .map(|i| h.photons(j, i % block) as f64 * rho[(i, i)].re)
        .sum()
}

fn check_state(rho: &DMatrix<C64>, t: f64) -> Result<()> {
    let trace: C64 = rho.trace();
    if (trace - C64::new(1.0, 0.0)).norm() > STATE_TOL {
        return Err(Error::Unphysical(format!("trace {trace} at t = {t}")));
    }
    let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if herm > STATE_TOL {
        return Err(Error::Unphysical(format!("hermiticity defect {herm:e} at t = {t}")));
    }
    let sym = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let lowest = hermitian_eigh(sym).values[0];
    if lowest < -STATE_TOL {
        return Err(Error::Unphysical(format!("negative eigenvalue {lowest:e} at t = {t}")));
    }
    Ok(())
}

/// Integrates the master equation from `rho0` and returns the states at `times`.
pub fn direct_lindblad(
    h: &EffectiveHamiltonian,
    jumps: &[JumpOperator],
    rho0: &DMatrix<C64>,
    times: &[f64],
) -> Result<DensityEvolution> {
    let n = h.dim();
    if n > DIRECT_CAP {
        return Err(Error::DimensionCap { dim: n, cap: DIRECT_CAP, hint: "use run_trajectories" });
    }
    if rho0.nrows() != n || rho0.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rho0.nrows() });
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::domain("output times must be nonnegative and nondecreasing"));
    }
    check_state(rho0, 0.0)?;

    let drift = h.to_csr(Drift::NonHermitian).to_dense();
    let drift_adj = drift.adjoint();
    let ls: Vec<(DMatrix<C64>, DMatrix<C64>)> = jumps
        .iter()
        .map(|j| {
            let l = h.jump_csr(j).to_dense();
            let la = l.adjoint();
            (l, la)
        })
        .collect();
    let minus_i = C64::new(0.0, -1.0);
    let f = |x: &[C64], y: &mut [C64]| {
        let rho = DMatrix::from_column_slice(n, n, x);
        let mut out = (&drift * &rho - &rho * &drift_adj) * minus_i;
        for (l, la) in &ls {
            out += l * &rho * la;
        }
        y.copy_from_slice(out.as_slice());
    };

    let tol = Tolerance { rtol: 1e-11, atol: 1e-14 };
    let mut y: Vec<C64> = rho0.as_slice().to_vec();
    let mut ws = Workspace::new(y.len());
    ws.set_k1(&f, &y);
    let mut now = 0.0;
    let mut step_size = 0.05f64;
    let mut states = Vec::with_capacity(times.len());
    for &target in times {
        while now < target {
            let step = step_size.min(target - now);
            if step <= 1e-12 * (1.0 + target) {
                return Err(Error::Integrator { time: now, reason: "step size underflow".into() });
            }
            let err = ws.step(&f, &y, step, tol);
            if err <= 1.0 {
                now = if target - now <= step { target } else { now + step };
                y.copy_from_slice(&ws.y_new);
                ws.accept();
                let grown = step * rescale(err);
                step_size = if step < step_size { step_size.max(grown) } else { grown };
            } else {
                step_size = step * rescale(err);
            }
        }
        let rho = DMatrix::from_column_slice(n, n, &y);
        check_state(&rho, now)?;
        states.push(rho);
    }
    Ok(DensityEvolution { times: times.to_vec(), states })
}
