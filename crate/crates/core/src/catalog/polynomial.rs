use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{DixError, Result};
use crate::scalar::Real;

/// Polynomial of degree at most two in `n` variables.
///
/// Coefficients are listed in graded lexicographic order:
/// `[1, x1, …, xn, x1x1, x1x2, …, x1xn, x2x2, …, xnxn]`. Shorter lists are
/// padded with zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<T: Real> {
    dim: usize,
    coeffs: Vec<T>,
}

impl<T: Real> Polynomial<T> {
    pub fn max_terms(dim: usize) -> usize {
        1 + dim + dim * (dim + 1) / 2
    }

    pub fn new(dim: usize, coeffs: Vec<T>) -> Result<Self> {
        let max = Self::max_terms(dim);
        if coeffs.len() > max {
            return Err(DixError::Config(format!(
                "polynomial in {dim} variables has at most {max} coefficients, got {}",
                coeffs.len()
            )));
        }
        let mut coeffs = coeffs;
        coeffs.resize(max, T::zero());
        Ok(Self { dim, coeffs })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, coeffs: vec![T::zero(); Self::max_terms(dim)] }
    }

    pub fn constant(dim: usize, c: T) -> Self {
        let mut p = Self::zero(dim);
        p.coeffs[0] = c;
        p
    }

    /// Parses a comma-separated coefficient list.
    pub fn parse(dim: usize, text: &str) -> Result<Self> {
        let coeffs = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                T::from_str(s).map_err(|_| DixError::Config(format!("bad polynomial coefficient '{s}'")))
            })
            .collect::<Result<Vec<T>>>()?;
        Self::new(dim, coeffs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coeffs
    }

    fn quadratic_terms(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let n = self.dim;
        (0..n)
            .flat_map(move |i| (i..n).map(move |j| (i, j)))
            .zip(self.coeffs[1 + n..].iter())
            .map(|((i, j), &c)| (i, j, c))
    }

    pub fn eval(&self, x: &DVector<T>) -> T {
        let n = self.dim;
        let mut acc = self.coeffs[0];
        for i in 0..n {
            acc += self.coeffs[1 + i] * x[i];
        }
        for (i, j, c) in self.quadratic_terms() {
            acc += c * x[i] * x[j];
        }
        acc
    }

    pub fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        let n = self.dim;
        let mut g = DVector::from_fn(n, |i, _| self.coeffs[1 + i]);
        for (i, j, c) in self.quadratic_terms() {
            g[i] += c * x[j];
            g[j] += c * x[i];
        }
        g
    }
}

impl<T: Real> std::fmt::Display for Polynomial<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.coeffs.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for Polynomial<f64> {
    type Err = DixError;

    /// Infers the dimension from a `dim:` prefix, e.g. `2:1,0,0,1,0,1`.
    fn from_str(s: &str) -> Result<Self> {
        let (dim, rest) = s
            .split_once(':')
            .ok_or_else(|| DixError::Config(format!("polynomial '{s}' lacks a 'dim:' prefix")))?;
        let dim = dim
            .trim()
            .parse::<usize>()
            .map_err(|_| DixError::Config(format!("bad polynomial dimension '{dim}'")))?;
        Self::parse(dim, rest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_graded_lex_terms() {
        // 1 + 2 x1 + 3 x1² + 4 x1x2 + 5 x2²
        let p = Polynomial::<f64>::new(2, vec![1.0, 2.0, 0.0, 3.0, 4.0, 5.0]).unwrap();
        let x = DVector::from_vec(vec![0.5, -1.5]);
        let expect = 1.0 + 1.0 + 3.0 * 0.25 - 4.0 * 0.75 + 5.0 * 2.25;
        assert!((p.eval(&x) - expect).abs() < 1e-14);
        let g = p.gradient(&x);
        assert!((g[0] - (2.0 + 6.0 * 0.5 + 4.0 * -1.5)).abs() < 1e-14);
        assert!((g[1] - (4.0 * 0.5 + 10.0 * -1.5)).abs() < 1e-14);
    }

    #[test]
    fn parses_and_pads() {
        let p: Polynomial<f64> = "3: 0.1, 0, 0.05".parse().unwrap();
        assert_eq!(p.coefficients().len(), 10);
        assert_eq!(p.coefficients()[2], 0.05);
        assert!(Polynomial::<f64>::parse(2, "1,2,3,4,5,6,7").is_err());
        assert!(Polynomial::<f64>::parse(2, "1,x").is_err());
    }
}
