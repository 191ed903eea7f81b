//! Membership-inference features of a candidate model against the reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ConfidenceMatrix;

/// `[MSE, TCD]` of a candidate model's confidences against the reference
/// model's confidences on the public dataset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Features {
    /// `(1 / (N L)) * sum_i ||C_model[i] - C_ref[i]||^2`
    pub mse: f64,
    /// `(1 / N) * sum_i |C_model[i][l_i] - C_ref[i][l_i]|`
    pub tcd: f64,
}

impl Features {
    pub fn as_array(&self) -> [f64; 2] {
        [self.mse, self.tcd]
    }
}

pub fn extract_features(model: &ConfidenceMatrix, reference: &ConfidenceMatrix, labels: &[usize]) -> Result<Features> {
    if model.rows() != reference.rows()
        || model.classes() != reference.classes()
        || labels.len() != model.rows()
    {
        return Err(Error::Dimension(format!(
            "features need matching shapes: model {}x{}, reference {}x{}, {} labels",
            model.rows(),
            model.classes(),
            reference.rows(),
            reference.classes(),
            labels.len()
        )));
    }
    let (n, l) = (model.rows(), model.classes());
    if n == 0 {
        return Err(Error::Data("features need at least one sample".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
        return Err(Error::Dimension(format!("label {bad} outside {l} classes")));
    }
    let mut sum_sq = 0.0f64;
    let mut sum_true = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        let (a, b) = (model.row(i), reference.row(i));
        sum_sq += a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum::<f64>();
        sum_true += (f64::from(a[label]) - f64::from(b[label])).abs();
    }
    Ok(Features {
        mse: sum_sq / (n * l) as f64,
        tcd: sum_true / n as f64,
    })
}
