use std::sync::Arc;

use nalgebra::DVector;

use super::{
    ConformalChart, EuclideanChart, FinslerChart, FlatRandersChart, NumericChart, PerturbedRanders, Polynomial,
};
use crate::error::{DixError, Result};
use crate::scalar::{lit, Real};

/// Every chart id understood by [`chart_by_id`].
pub const CATALOG_IDS: [&str; 10] = [
    "euclidean-2",
    "euclidean-3",
    "sphere-2",
    "sphere-3",
    "hyperbolic-2",
    "hyperbolic-3",
    "randers-flat-2",
    "randers-flat-3",
    "randers-perturbed-2",
    "randers-perturbed-3",
];

fn split_id(id: &str) -> Result<(&str, usize)> {
    let (family, dim) = id
        .rsplit_once('-')
        .ok_or_else(|| DixError::Config(format!("chart id '{id}' has no dimension suffix")))?;
    let dim = dim
        .parse::<usize>()
        .map_err(|_| DixError::Config(format!("chart id '{id}' has a bad dimension suffix")))?;
    if dim < 2 {
        return Err(DixError::Config(format!("chart id '{id}': dimension must be at least 2")));
    }
    Ok((family, dim))
}

/// Builds a catalog chart from its id, e.g. `"sphere-2"`.
pub fn chart_by_id<T: Real + 'static>(id: &str) -> Result<Arc<dyn FinslerChart<T>>> {
    let (family, dim) = split_id(id)?;
    Ok(match family {
        "euclidean" => Arc::new(EuclideanChart::new(dim)),
        "sphere" => Arc::new(ConformalChart::sphere(dim)),
        "hyperbolic" => Arc::new(ConformalChart::hyperbolic(dim)),
        "randers-flat" => {
            let mut b = DVector::zeros(dim);
            b[0] = lit(0.3);
            Arc::new(FlatRandersChart::new(b))
        }
        "randers-perturbed" => Arc::new(PerturbedRanders::standard(dim)?.into_chart()?),
        _ => return Err(DixError::Config(format!("unknown chart id '{id}'"))),
    })
}

/// Builds a perturbed Randers chart from textual fields.
///
/// `b_field` holds one coefficient list per component separated by `;`,
/// `w_field` a single list. Missing entries fall back to the catalog defaults.
pub fn perturbed_from_fields<T: Real + 'static>(
    dim: usize,
    epsilon: Option<T>,
    b_field: Option<&str>,
    w_field: Option<&str>,
) -> Result<NumericChart<T>> {
    let mut params = PerturbedRanders::standard(dim)?;
    if let Some(e) = epsilon {
        params.epsilon = e;
    }
    if let Some(w) = w_field {
        params.w = Polynomial::parse(dim, w)?;
    }
    if let Some(b) = b_field {
        let comps = b.split(';').map(|s| Polynomial::parse(dim, s)).collect::<Result<Vec<_>>>()?;
        if comps.len() != dim {
            return Err(DixError::Config(format!(
                "b_field needs {dim} ';'-separated components, got {}",
                comps.len()
            )));
        }
        params.b = comps;
    }
    params.into_chart()
}

/// Numerically differentiated copy of `chart`, sharing its Finsler function.
pub fn numeric_twin<T: Real + 'static>(chart: Arc<dyn FinslerChart<T>>) -> NumericChart<T> {
    let id = format!("{}-numeric", chart.id());
    let (dim, domain) = (chart.dim(), chart.domain().clone());
    let (reversible, riemannian) = (chart.reversible(), chart.riemannian());
    NumericChart::new(id, dim, domain, move |x, v| chart.finsler(x, v)).with_flags(reversible, riemannian)
}
