//! Dormand-Prince 5(4) steps for autonomous linear systems `y' = f(y)`.
//!
//! The error is measured in the Euclidean norm of the whole state, relative
//! to the state norm.

use crate::linalg::C64;

const C: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Clone, Copy, Debug)]
pub(crate) struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

/// Scratch buffers for one integrator instance.
pub(crate) struct Workspace {
    k: [Vec<C64>; 7],
    stage: Vec<C64>,
    pub y_new: Vec<C64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        let z = || vec![C64::new(0.0, 0.0); n];
        Workspace {
            k: [z(), z(), z(), z(), z(), z(), z()],
            stage: z(),
            y_new: z(),
        }
    }

    pub fn set_k1<F: Fn(&[C64], &mut [C64])>(&mut self, f: &F, y: &[C64]) {
        f(y, &mut self.k[0]);
    }

    /// Adopts the last stage as the first derivative of the following step.
    pub fn accept(&mut self) {
        self.k.swap(0, 6);
    }

    /// Takes a step of size `h` from `y` with `k1` already set. The result is
    /// left in `y_new`; returns the scaled error (accept when `<= 1`).
    pub fn step<F: Fn(&[C64], &mut [C64])>(&mut self, f: &F, y: &[C64], h: f64, tol: Tolerance) -> f64 {
        let n = y.len();
        for s in 0..6 {
            for i in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for (r, coef) in C[s].iter().enumerate().take(s + 1) {
                    if *coef != 0.0 {
                        acc += self.k[r][i] * *coef;
                    }
                }
                self.stage[i] = y[i] + acc * h;
            }
            let (_, tail) = self.k.split_at_mut(s + 1);
            if s < 5 {
                f(&self.stage, &mut tail[0]);
            } else {
                self.y_new.copy_from_slice(&self.stage);
                f(&self.y_new, &mut tail[0]);
            }
        }
        let mut err = 0.0;
        let mut ny = 0.0;
        let mut nn = 0.0;
        for i in 0..n {
            let mut e = C64::new(0.0, 0.0);
            for (r, coef) in E.iter().enumerate() {
                if *coef != 0.0 {
                    e += self.k[r][i] * *coef;
                }
            }
            err += (e * h).norm_sqr();
            ny += y[i].norm_sqr();
            nn += self.y_new[i].norm_sqr();
        }
        err.sqrt() / (tol.atol + tol.rtol * ny.max(nn).sqrt())
    }
}

/// Step size factor after a step with scaled error `err`.
pub(crate) fn rescale(err: f64) -> f64 {
    if err == 0.0 {
        5.0
    } else {
        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
    }
}
