//! Dormand–Prince 5(4) stepping with continuous extension.

use nalgebra::DVector;

use crate::error::Result;
use crate::scalar::{abs, lit, Real};

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[0.2],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
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
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One attempted step: the candidate end state, its error norm and the
/// coefficients of the continuous extension.
pub(crate) struct Trial<T: Real> {
    pub y1: DVector<T>,
    pub err: T,
    dense: [DVector<T>; 5],
}

impl<T: Real> Trial<T> {
    /// State at `t0 + θ h`, `θ ∈ [0, 1]`.
    pub fn interpolate(&self, theta: T) -> DVector<T> {
        let one = T::one();
        let [r1, r2, r3, r4, r5] = &self.dense;
        let inner = r4 + r5 * (one - theta);
        let inner = r3 + inner * theta;
        let inner = r2 + inner * (one - theta);
        r1 + inner * theta
    }
}

pub(crate) fn attempt<T: Real, F>(
    rhs: &F,
    t0: T,
    y0: &DVector<T>,
    h: T,
    atol: T,
    rtol: T,
) -> Result<Trial<T>>
where
    F: Fn(T, &DVector<T>) -> Result<DVector<T>>,
{
    let mut k: Vec<DVector<T>> = Vec::with_capacity(7);
    k.push(rhs(t0, y0)?);
    for s in 1..7 {
        let mut y = y0.clone();
        for (j, a) in A[s].iter().enumerate() {
            if *a != 0.0 {
                y.axpy(h * lit::<T>(*a), &k[j], T::one());
            }
        }
        k.push(rhs(t0 + h * lit::<T>(C[s]), &y)?);
    }
    // stage 7 is evaluated at the fifth-order solution
    let mut y1 = y0.clone();
    for (j, a) in A[6].iter().enumerate() {
        if *a != 0.0 {
            y1.axpy(h * lit::<T>(*a), &k[j], T::one());
        }
    }
    let mut e = DVector::zeros(y0.len());
    let mut d = DVector::zeros(y0.len());
    for j in 0..7 {
        if E[j] != 0.0 {
            e.axpy(h * lit::<T>(E[j]), &k[j], T::one());
        }
        if D[j] != 0.0 {
            d.axpy(h * lit::<T>(D[j]), &k[j], T::one());
        }
    }
    let mut acc = T::zero();
    for i in 0..y0.len() {
        let scale = atol + rtol * abs(y0[i]).max(abs(y1[i]));
        let q = e[i] / scale;
        acc += q * q;
    }
    let err = (acc / lit::<T>(y0.len() as f64)).sqrt();
    let r2 = &y1 - y0;
    let r3 = &k[0] * h - &r2;
    let r4 = &r2 - &k[6] * h - &r3;
    Ok(Trial { dense: [y0.clone(), r2, r3, r4, d], y1, err })
}

/// Step-size factor for the next attempt after an error norm `err`.
pub(crate) fn step_factor<T: Real>(err: T) -> T {
    if err <= T::zero() {
        return lit(5.0);
    }
    (lit::<T>(0.9) * err.powf(lit(-0.2))).max(lit(0.2)).min(lit(5.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_harmonic_oscillator_with_dense_output() {
        let rhs = |_t: f64, y: &DVector<f64>| Ok(DVector::from_vec(vec![y[1], -y[0]]));
        let (mut t, mut y, mut h) = (0.0f64, DVector::from_vec(vec![0.0, 1.0]), 0.1f64);
        while t < 3.0 {
            h = h.min(3.0 - t);
            let trial = attempt(&rhs, t, &y, h, 1e-12, 1e-12).unwrap();
            if trial.err <= 1.0 {
                let mid = trial.interpolate(0.5);
                assert!((mid[0] - (t + 0.5 * h).sin()).abs() < 1e-9);
                t += h;
                y = trial.y1;
            }
            h *= step_factor(trial.err);
        }
        assert!((y[0] - 3f64.sin()).abs() < 1e-10);
        assert!((y[1] - 3f64.cos()).abs() < 1e-10);
    }
}
