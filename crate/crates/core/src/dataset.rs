//! Irregularly sampled functional data.

use serde::{Deserialize, Serialize};

use crate::error::{FpcaError, Result};

/// One observed curve: `values[j]` is the response at `times[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let curve = Self {
            id: id.into(),
            times,
            values,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(FpcaError::Invalid(format!("curve {} has no observations", self.id)));
        }
        if self.times.len() != self.values.len() {
            return Err(FpcaError::Dimension(format!(
                "curve {} has {} times and {} values",
                self.id,
                self.times.len(),
                self.values.len()
            )));
        }
        if let Some(t) = self.times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(FpcaError::Invalid(format!("curve {}: time {t} outside [0, 1]", self.id)));
        }
        if self.values.iter().any(|y| !y.is_finite()) {
            return Err(FpcaError::Invalid(format!("curve {} has a non-finite response", self.id)));
        }
        Ok(())
    }
}

/// A collection of curves on the common domain `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub curves: Vec<Curve>,
}

impl FunctionalDataset {
    pub fn new(curves: Vec<Curve>) -> Result<Self> {
        let ds = Self { curves };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_curves(&self) -> usize {
        self.curves.len()
    }

    pub fn total_obs(&self) -> usize {
        self.curves.iter().map(Curve::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.curves.is_empty() {
            return Err(FpcaError::Invalid("dataset has no curves".into()));
        }
        self.curves.iter().try_for_each(Curve::validate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Curve::new("a", vec![0.0, 1.0], vec![1.0, 2.0]).is_ok());
        assert!(Curve::new("a", vec![], vec![]).is_err());
        assert!(Curve::new("a", vec![0.5], vec![1.0, 2.0]).is_err());
        assert!(Curve::new("a", vec![1.5], vec![1.0]).is_err());
        assert!(Curve::new("a", vec![0.5], vec![f64::NAN]).is_err());
        assert!(FunctionalDataset::new(vec![]).is_err());
    }
}
