//! Central differences with Richardson extrapolation for vector-valued maps.

use nalgebra::DVector;

use crate::scalar::{lit, Real};

/// Richardson settings: the coarsest step is `start`, each further level halves it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Richardson<T: Real> {
    pub start: T,
    pub levels: usize,
}

fn extrapolate<T: Real>(mut est: Vec<DVector<T>>) -> DVector<T> {
    // central differences: error expands in even powers of h, halving each level
    let four: T = lit(4.0);
    let n = est.len();
    let mut factor = T::one();
    for k in 1..n {
        factor *= four;
        for i in (k..n).rev() {
            est[i] = (&est[i] * factor - &est[i - 1]) / (factor - T::one());
        }
    }
    est.pop().expect("at least one Richardson level")
}

fn shifted<T: Real>(z: &DVector<T>, i: usize, h: T) -> DVector<T> {
    let mut w = z.clone();
    w[i] += h;
    w
}

/// First derivative of `f` with respect to `z[i]`.
pub fn d1<T: Real, F>(f: &F, z: &DVector<T>, i: usize, r: Richardson<T>) -> DVector<T>
where
    F: Fn(&DVector<T>) -> DVector<T>,
{
    let mut h = r.start;
    let two: T = lit(2.0);
    let mut est = Vec::with_capacity(r.levels);
    for _ in 0..r.levels {
        let fp = f(&shifted(z, i, h));
        let fm = f(&shifted(z, i, -h));
        est.push((fp - fm) / (two * h));
        h /= two;
    }
    extrapolate(est)
}

/// Second derivative of `f` with respect to `z[i]` and `z[j]`.
///
/// `center` is `f(z)`, reused by the pure second differences.
pub fn d2<T: Real, F>(
    f: &F,
    z: &DVector<T>,
    center: &DVector<T>,
    i: usize,
    j: usize,
    ri: Richardson<T>,
    rj: Richardson<T>,
) -> DVector<T>
where
    F: Fn(&DVector<T>) -> DVector<T>,
{
    let two: T = lit(2.0);
    let four: T = lit(4.0);
    let levels = ri.levels.min(rj.levels);
    let (mut hi, mut hj) = (ri.start, rj.start);
    let mut est = Vec::with_capacity(levels);
    for _ in 0..levels {
        if i == j {
            let fp = f(&shifted(z, i, hi));
            let fm = f(&shifted(z, i, -hi));
            est.push((fp + fm - center * two) / (hi * hi));
        } else {
            let pp = f(&shifted(&shifted(z, i, hi), j, hj));
            let pm = f(&shifted(&shifted(z, i, hi), j, -hj));
            let mp = f(&shifted(&shifted(z, i, -hi), j, hj));
            let mm = f(&shifted(&shifted(z, i, -hi), j, -hj));
            est.push((pp - pm - mp + mm) / (four * hi * hj));
        }
        hi /= two;
        hj /= two;
    }
    extrapolate(est)
}
